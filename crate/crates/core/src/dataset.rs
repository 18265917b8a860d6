//! Finite datasets that define the ground-truth distribution.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Class identifier attached to dataset points.
pub type ClassId = i64;

/// A non-empty set of points in `R^d` with optional class labels.
///
/// Points are stored as one flat row-major buffer of `len * dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
    labels: Option<Vec<ClassId>>,
    classes: BTreeMap<ClassId, Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    d: usize,
    points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<ClassId>>,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Option<Vec<ClassId>>) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidDataset("dataset has no points".into()))?;
        if let Some(i) = points.iter().position(|p| p.len() != dim) {
            return Err(Error::InvalidDataset(format!(
                "point {i} has dimension {} but point 0 has dimension {dim}",
                points[i].len()
            )));
        }
        Self::from_flat(dim, points.into_iter().flatten().collect(), labels)
    }

    pub fn from_flat(dim: usize, values: Vec<f64>, labels: Option<Vec<ClassId>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDataset("dimension must be positive".into()));
        }
        if values.is_empty() {
            return Err(Error::InvalidDataset("dataset has no points".into()));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::InvalidDataset(format!(
                "{} values do not split into points of dimension {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite coordinate".into()));
        }
        let len = values.len() / dim;
        let mut classes: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        if let Some(labels) = &labels {
            if labels.len() != len {
                return Err(Error::InvalidDataset(format!(
                    "{} labels for {len} points",
                    labels.len()
                )));
            }
            for (i, &c) in labels.iter().enumerate() {
                classes.entry(c).or_default().push(i);
            }
        }
        Ok(Self {
            dim,
            values,
            labels,
            classes,
        })
    }

    /// Parses `{"d": int, "points": [[f64..]..], "labels": [int..]?}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DatasetDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let ds = Self::new(doc.points, doc.labels)?;
        if ds.dim != doc.d {
            return Err(Error::InvalidDataset(format!(
                "declared d = {} but points have dimension {}",
                doc.d, ds.dim
            )));
        }
        Ok(ds)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let doc = DatasetDoc {
            d: self.dim,
            points: self.points().map(<[f64]>::to_vec).collect(),
            labels: self.labels.clone(),
        };
        serde_json::to_string(&doc).expect("dataset serialization cannot fail")
    }

    /// Three equidistant points on a circle, labelled 0, 1, 2.
    ///
    /// The first vertex sits at the top of the circle.
    pub fn triangle(circumradius: f64) -> Self {
        let points = (0..3)
            .map(|i| {
                let angle =
                    std::f64::consts::FRAC_PI_2 + i as f64 * 2.0 * std::f64::consts::PI / 3.0;
                vec![circumradius * angle.cos(), circumradius * angle.sin()]
            })
            .collect();
        Self::new(points, Some(vec![0, 1, 2])).expect("triangle preset is valid")
    }

    /// `n` points drawn from `N(0, std^2 I_dim)`, each its own class.
    pub fn gaussian_cloud(n: usize, dim: usize, std: f64, seed: u64) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::InvalidDataset(
                "cloud needs n >= 1 and dim >= 1".into(),
            ));
        }
        if !(std.is_finite() && std > 0.0) {
            return Err(Error::InvalidDataset(format!(
                "cloud std must be positive, got {std}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                std * z
            })
            .collect();
        Self::from_flat(dim, values, Some((0..n as ClassId).collect()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[ClassId]> {
        self.labels.as_deref()
    }

    /// Sorted list of distinct class identifiers (empty when unlabelled).
    pub fn classes(&self) -> Vec<ClassId> {
        self.classes.keys().copied().collect()
    }

    pub fn has_class(&self, class: ClassId) -> bool {
        self.classes.contains_key(&class)
    }

    /// Indices of the points carrying `class`.
    pub fn class_indices(&self, class: ClassId) -> Result<&[usize]> {
        self.classes
            .get(&class)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownClass(class))
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for p in self.points() {
            linalg::axpy(1.0, p, &mut mean);
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Index of and Euclidean distance to the point closest to `x`.
    pub fn nearest(&self, x: &[f64]) -> Result<(usize, f64)> {
        crate::error::check_dim(self.dim, x.len())?;
        let (idx, d2) = self.points().map(|p| linalg::dist2(p, x)).enumerate().fold(
            (0, f64::INFINITY),
            |best, (i, d2)| if d2 < best.1 { (i, d2) } else { best },
        );
        Ok((idx, d2.sqrt()))
    }

    /// Same points restricted to the given coordinate indices, labels kept.
    pub fn select_coordinates(&self, coords: &[usize]) -> Result<Self> {
        if let Some(&bad) = coords.iter().find(|&&c| c >= self.dim) {
            return Err(Error::Validation(format!(
                "coordinate {bad} out of range for dimension {}",
                self.dim
            )));
        }
        let values = self
            .points()
            .flat_map(|p| coords.iter().map(move |&c| p[c]))
            .collect();
        Self::from_flat(coords.len(), values, self.labels.clone())
    }
}

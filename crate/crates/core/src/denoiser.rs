//! Closed-form denoisers and noise predictors for finite datasets.
//!
//! For a dataset `{y_i}` the Bayes-optimal denoiser at noise level `sigma` is
//! the posterior mean `y*(x, sigma) = sum_i y_i p(y_i | x)` with Gaussian
//! responsibilities `p(y_i | x) ∝ N(x | y_i, sigma^2 I)`. The error-prone
//! family replaces the data by the same points blurred with `N(0, delta^2 I)`,
//! which has the closed form
//!
//! ```text
//! y_delta(x, sigma) = (x delta^2 + y*(x, sigma_tilde) sigma^2) / sigma_tilde^2,
//! sigma_tilde^2     = sigma^2 + delta^2.
//! ```
//!
//! Noise predictions follow from `eps = (x - y_hat) / sigma`.

use std::fmt;
use std::sync::Arc;

use crate::dataset::{ClassId, Dataset};
use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// A pure evaluator `(x, sigma, class) -> y_hat`.
///
/// Implementations must be deterministic and free of interior mutability so
/// that a single handle can be shared across sampling threads.
pub trait Denoiser: Send + Sync + fmt::Debug {
    /// Dimension of the inputs and outputs.
    fn dim(&self) -> usize;

    /// Target (clean data) prediction.
    fn denoise(&self, x: &[f64], sigma: f64, class: Option<ClassId>) -> Result<Vec<f64>>;

    /// Noise prediction `(x - y_hat) / sigma`.
    fn predict_noise(&self, x: &[f64], sigma: f64, class: Option<ClassId>) -> Result<Vec<f64>> {
        check_sigma(sigma)?;
        let y_hat = self.denoise(x, sigma, class)?;
        Ok(x.iter()
            .zip(&y_hat)
            .map(|(xi, yi)| (xi - yi) / sigma)
            .collect())
    }

    /// Whether evaluation needs a class from the caller.
    fn requires_class(&self) -> bool {
        false
    }
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidNoiseLevel(sigma))
    }
}

/// Noise level `sigma` together with the blurred level `sigma_tilde`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevelPair {
    pub sigma: f64,
    pub sigma_tilde: f64,
}

impl NoiseLevelPair {
    pub fn new(sigma: f64, delta: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidNoiseLevel(sigma));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidDelta(delta));
        }
        Ok(Self {
            sigma,
            sigma_tilde: sigma.hypot(delta),
        })
    }

    /// Squared blur, `sigma_tilde^2 - sigma^2`.
    pub fn delta_sq(&self) -> f64 {
        self.sigma_tilde * self.sigma_tilde - self.sigma * self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenoiserKind {
    Optimal,
    /// Optimal denoiser of the data convolved with `N(0, delta^2 I)`; `delta > 0`.
    ErrorProne {
        delta: f64,
    },
}

/// How the posterior is restricted to a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    /// Posterior over all points; any class passed by the caller is ignored.
    Unconditional,
    /// Posterior over the points of one fixed class.
    Fixed(ClassId),
    /// Posterior over the points of the class supplied with each call.
    PerSample,
}

/// Closed-form denoiser over a finite dataset.
#[derive(Debug, Clone)]
pub struct DenoiserSpec {
    kind: DenoiserKind,
    dataset: Arc<Dataset>,
    conditioning: Conditioning,
}

impl DenoiserSpec {
    pub fn optimal(dataset: Arc<Dataset>) -> Self {
        Self {
            kind: DenoiserKind::Optimal,
            dataset,
            conditioning: Conditioning::Unconditional,
        }
    }

    pub fn error_prone(dataset: Arc<Dataset>, delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidDelta(delta));
        }
        Ok(Self {
            kind: DenoiserKind::ErrorProne { delta },
            dataset,
            conditioning: Conditioning::Unconditional,
        })
    }

    /// `Optimal` for `delta == 0`, `ErrorProne` for `delta > 0`.
    pub fn with_delta(dataset: Arc<Dataset>, delta: f64) -> Result<Self> {
        if delta == 0.0 {
            Ok(Self::optimal(dataset))
        } else {
            Self::error_prone(dataset, delta)
        }
    }

    pub fn with_conditioning(mut self, conditioning: Conditioning) -> Result<Self> {
        match conditioning {
            Conditioning::Unconditional => {}
            Conditioning::Fixed(c) => {
                self.dataset.class_indices(c)?;
            }
            Conditioning::PerSample => {
                if self.dataset.labels().is_none() {
                    return Err(Error::InvalidDataset(
                        "class-conditional denoiser needs a labelled dataset".into(),
                    ));
                }
            }
        }
        self.conditioning = conditioning;
        Ok(self)
    }

    pub fn kind(&self) -> DenoiserKind {
        self.kind
    }

    pub fn delta(&self) -> f64 {
        match self.kind {
            DenoiserKind::Optimal => 0.0,
            DenoiserKind::ErrorProne { delta } => delta,
        }
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    /// Indices the posterior runs over, or `None` for the full dataset.
    fn active_indices(&self, class: Option<ClassId>) -> Result<Option<&[usize]>> {
        let class = match self.conditioning {
            Conditioning::Unconditional => return Ok(None),
            Conditioning::Fixed(c) => c,
            Conditioning::PerSample => class.ok_or(Error::MissingCondition)?,
        };
        self.dataset.class_indices(class).map(Some)
    }
}

impl Denoiser for DenoiserSpec {
    fn dim(&self) -> usize {
        self.dataset.dim()
    }

    fn denoise(&self, x: &[f64], sigma: f64, class: Option<ClassId>) -> Result<Vec<f64>> {
        match self.kind {
            DenoiserKind::Optimal => optimal_denoiser(x, sigma, self, class),
            DenoiserKind::ErrorProne { .. } => error_denoiser(x, sigma, self, class),
        }
    }

    fn predict_noise(&self, x: &[f64], sigma: f64, class: Option<ClassId>) -> Result<Vec<f64>> {
        noise_predictor(x, sigma, self, class)
    }

    fn requires_class(&self) -> bool {
        self.conditioning == Conditioning::PerSample
    }
}

/// Log-domain responsibilities of `points` for `x` at level `sigma`.
fn responsibilities<'a>(
    dataset: &'a Dataset,
    indices: Option<&'a [usize]>,
    x: &[f64],
    sigma: f64,
) -> Vec<f64> {
    // Logits reach |d^2| / (2 sigma^2) ~ 1e5 on large grids at small sigma, so
    // each extra rounding here shows up in the weights. Divide once.
    let two_var = 2.0 * sigma * sigma;
    let mut logits: Vec<f64> = match indices {
        Some(idx) => idx
            .iter()
            .map(|&i| -linalg::dist2(x, dataset.point(i)) / two_var)
            .collect(),
        None => dataset
            .points()
            .map(|p| -linalg::dist2(x, p) / two_var)
            .collect(),
    };
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
    logits
}

fn validate_input(x: &[f64], sigma: f64, spec: &DenoiserSpec) -> Result<()> {
    check_sigma(sigma)?;
    check_dim(spec.dataset.dim(), x.len())
}

/// Posterior responsibilities `p(y_i | x)` at level `sigma`.
///
/// With a class restriction the vector covers only that class's points, in
/// dataset order.
pub fn posterior_weights(
    x: &[f64],
    sigma: f64,
    spec: &DenoiserSpec,
    class: Option<ClassId>,
) -> Result<Vec<f64>> {
    validate_input(x, sigma, spec)?;
    let indices = spec.active_indices(class)?;
    Ok(responsibilities(&spec.dataset, indices, x, sigma))
}

/// Posterior mean `y*(x, sigma)`, ignoring any `delta` on the spec.
pub fn optimal_denoiser(
    x: &[f64],
    sigma: f64,
    spec: &DenoiserSpec,
    class: Option<ClassId>,
) -> Result<Vec<f64>> {
    validate_input(x, sigma, spec)?;
    let indices = spec.active_indices(class)?;
    let weights = responsibilities(&spec.dataset, indices, x, sigma);
    let mut mean = vec![0.0; x.len()];
    match indices {
        Some(idx) => {
            for (&i, &w) in idx.iter().zip(&weights) {
                linalg::axpy(w, spec.dataset.point(i), &mut mean);
            }
        }
        None => {
            for (p, &w) in spec.dataset.points().zip(&weights) {
                linalg::axpy(w, p, &mut mean);
            }
        }
    }
    Ok(mean)
}

/// Error-prone denoiser `y_delta(x, sigma)`; the spec must be `ErrorProne`.
pub fn error_denoiser(
    x: &[f64],
    sigma: f64,
    spec: &DenoiserSpec,
    class: Option<ClassId>,
) -> Result<Vec<f64>> {
    let delta = match spec.kind {
        DenoiserKind::ErrorProne { delta } => delta,
        DenoiserKind::Optimal => return Err(Error::InvalidDelta(0.0)),
    };
    check_sigma(sigma)?;
    let levels = NoiseLevelPair::new(sigma, delta)?;
    let y_star = optimal_denoiser(x, levels.sigma_tilde, spec, class)?;
    let var_tilde = sigma * sigma + delta * delta;
    let (wx, wy) = (delta * delta / var_tilde, sigma * sigma / var_tilde);
    Ok(x.iter()
        .zip(&y_star)
        .map(|(xi, yi)| wx * xi + wy * yi)
        .collect())
}

/// Noise prediction of the spec's denoiser.
///
/// For the error-prone kind the residual `x - y_delta` is evaluated in the
/// cancellation-free form `(x - y*(x, sigma_tilde)) sigma^2 / sigma_tilde^2`.
pub fn noise_predictor(
    x: &[f64],
    sigma: f64,
    spec: &DenoiserSpec,
    class: Option<ClassId>,
) -> Result<Vec<f64>> {
    match spec.kind {
        DenoiserKind::Optimal => {
            let y = optimal_denoiser(x, sigma, spec, class)?;
            Ok(x.iter().zip(&y).map(|(xi, yi)| (xi - yi) / sigma).collect())
        }
        DenoiserKind::ErrorProne { delta } => {
            check_sigma(sigma)?;
            let levels = NoiseLevelPair::new(sigma, delta)?;
            let y_star = optimal_denoiser(x, levels.sigma_tilde, spec, class)?;
            let scale = sigma / (sigma * sigma + delta * delta);
            Ok(x.iter()
                .zip(&y_star)
                .map(|(xi, yi)| (xi - yi) * scale)
                .collect())
        }
    }
}

//! Endpoint and step-wise errors for sampled ensembles, and image statistics.

use std::io::Write;

use crate::dataset::Dataset;
use crate::denoiser::Denoiser;
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::sampler::Trajectory;

/// Mean HSV saturation of the ImageNet test set, kept as a reference value.
pub const IMAGENET_TEST_SATURATION: f64 = 0.32;

/// What an endpoint is compared against.
#[derive(Debug, Clone, Copy)]
pub enum EndpointMode<'a> {
    /// Distance to the closest dataset point.
    NearestPoint(&'a Dataset),
    /// Distance to the endpoint of the same-index reference trajectory,
    /// which must share its seed.
    MatchedReference(&'a [Trajectory]),
}

/// Mean error with its standard error over the stable trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointStats {
    pub mean: f64,
    pub std_err: f64,
    pub n_stable: usize,
    pub n_unstable: usize,
}

/// Per-trajectory errors, `None` where the trajectory (or its reference) is unstable.
pub fn endpoint_errors(
    trajectories: &[Trajectory],
    mode: EndpointMode<'_>,
) -> Result<Vec<Option<f64>>> {
    if let EndpointMode::MatchedReference(refs) = mode {
        if refs.len() != trajectories.len() {
            return Err(Error::Validation(format!(
                "{} trajectories but {} references",
                trajectories.len(),
                refs.len()
            )));
        }
    }
    trajectories
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            if tr.unstable {
                return Ok(None);
            }
            match mode {
                EndpointMode::NearestPoint(ds) => Ok(Some(ds.nearest(&tr.endpoint)?.1)),
                EndpointMode::MatchedReference(refs) => {
                    let r = &refs[i];
                    if r.seed != tr.seed {
                        return Err(Error::Validation(format!(
                            "trajectory {i} has seed {} but its reference has seed {}",
                            tr.seed, r.seed
                        )));
                    }
                    check_dim(r.endpoint.len(), tr.endpoint.len())?;
                    Ok((!r.unstable).then(|| linalg::dist(&tr.endpoint, &r.endpoint)))
                }
            }
        })
        .collect()
}

pub fn endpoint_error_stats(
    trajectories: &[Trajectory],
    mode: EndpointMode<'_>,
) -> Result<EndpointStats> {
    let errors = endpoint_errors(trajectories, mode)?;
    let stable: Vec<f64> = errors.iter().flatten().copied().collect();
    if stable.is_empty() {
        return Err(Error::UndefinedMetric("no stable trajectories".into()));
    }
    let (mean, std_err) = mean_and_std_err(&stable);
    Ok(EndpointStats {
        mean,
        std_err,
        n_stable: stable.len(),
        n_unstable: trajectories.iter().filter(|t| t.unstable).count(),
    })
}

/// Mean endpoint error over the stable trajectories.
pub fn endpoint_error(trajectories: &[Trajectory], mode: EndpointMode<'_>) -> Result<f64> {
    endpoint_error_stats(trajectories, mode).map(|s| s.mean)
}

/// Sample mean and its standard error (zero for a single sample).
pub fn mean_and_std_err(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `|eps~(x_i, sigma_i) - eps*(x_i, sigma_i)|` for every recorded step that
/// carries a guided target. The final state is never included.
pub fn stepwise_predictor_error(
    trajectory: &Trajectory,
    oracle: &dyn Denoiser,
) -> Result<Vec<f64>> {
    trajectory
        .records
        .iter()
        .filter_map(|r| r.y_hat.as_ref().map(|y| (r, y)))
        .map(|(r, y)| {
            let eps: Vec<f64> = r.x.iter().zip(y).map(|(x, y)| (x - y) / r.sigma).collect();
            let star = oracle.predict_noise(&r.x, r.sigma, trajectory.class)?;
            Ok(linalg::dist(&eps, &star))
        })
        .collect()
}

/// Per-step mean of [`stepwise_predictor_error`] over stable trajectories.
pub fn mean_stepwise_error(trajectories: &[Trajectory], oracle: &dyn Denoiser) -> Result<Vec<f64>> {
    let stable: Vec<&Trajectory> = trajectories.iter().filter(|t| !t.unstable).collect();
    let first = stable
        .first()
        .ok_or_else(|| Error::UndefinedMetric("no stable trajectories".into()))?;
    let mut total = vec![0.0; first.records.len() - 1];
    for tr in &stable {
        let curve = stepwise_predictor_error(tr, oracle)?;
        check_dim(total.len(), curve.len())?;
        linalg::axpy(1.0, &curve, &mut total);
    }
    let n = stable.len() as f64;
    Ok(total.into_iter().map(|v| v / n).collect())
}

/// Summary of one ensemble run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    /// Mean step-wise error to the oracle noise predictor, if an oracle was given.
    pub stepwise_error: Option<Vec<f64>>,
    pub endpoint: Option<EndpointStats>,
    pub instability_rate: f64,
    pub n_trajectories: usize,
}

impl TrajectoryReport {
    /// Endpoint stats are `None` when every trajectory is unstable.
    pub fn build(
        trajectories: &[Trajectory],
        mode: EndpointMode<'_>,
        oracle: Option<&dyn Denoiser>,
    ) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::UndefinedMetric("empty ensemble".into()));
        }
        let unstable = trajectories.iter().filter(|t| t.unstable).count();
        let endpoint = match endpoint_error_stats(trajectories, mode) {
            Ok(s) => Some(s),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        let stepwise_error = match (oracle, endpoint.is_some()) {
            (Some(o), true) => Some(mean_stepwise_error(trajectories, o)?),
            _ => None,
        };
        Ok(Self {
            stepwise_error,
            endpoint,
            instability_rate: unstable as f64 / trajectories.len() as f64,
            n_trajectories: trajectories.len(),
        })
    }
}

/// Writes `step,error` rows of a step-wise error curve.
pub fn write_stepwise_csv(curve: &[f64], mut out: impl Write) -> Result<()> {
    writeln!(out, "step,error")?;
    for (i, e) in curve.iter().enumerate() {
        writeln!(out, "{i},{e}")?;
    }
    Ok(())
}

/// RGB image with channel values in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(
                "image must have at least one pixel".into(),
            ));
        }
        check_dim(width * height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    fn check_range(&self) -> Result<()> {
        match self
            .data
            .iter()
            .flatten()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            Some(v) => Err(Error::Validation(format!("pixel value {v} outside [0, 1]"))),
            None => Ok(()),
        }
    }

    /// Rec.601 luma `0.299 r + 0.587 g + 0.114 b` of every pixel.
    ///
    /// Written relative to `r` so grey pixels map to their value exactly.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|[r, g, b]| r + 0.587 * (g - r) + 0.114 * (b - r))
            .collect()
    }
}

/// HSV saturation `(max - min) / max`, zero for black.
pub fn pixel_saturation([r, g, b]: [f64; 3]) -> f64 {
    let max = r.max(g).max(b);
    if max == 0.0 {
        0.0
    } else {
        (max - r.min(g).min(b)) / max
    }
}

/// Mean HSV saturation over all pixels.
pub fn saturation(image: &RgbImage) -> Result<f64> {
    image.check_range()?;
    Ok(image.data.iter().map(|&p| pixel_saturation(p)).sum::<f64>() / image.data.len() as f64)
}

/// Population standard deviation of the Rec.601 luma.
pub fn rms_contrast(image: &RgbImage) -> Result<f64> {
    image.check_range()?;
    // Shifted by the first value, so constant images give exactly zero.
    let y = image.luma();
    let shift = y[0];
    let n = y.len() as f64;
    let mean = y.iter().map(|v| v - shift).sum::<f64>() / n;
    Ok((y
        .iter()
        .map(|v| (v - shift - mean) * (v - shift - mean))
        .sum::<f64>()
        / n)
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageStats {
    pub saturation: f64,
    pub contrast: f64,
}

impl ImageStats {
    pub fn of(image: &RgbImage) -> Result<Self> {
        Ok(Self {
            saturation: saturation(image)?,
            contrast: rms_contrast(image)?,
        })
    }
}

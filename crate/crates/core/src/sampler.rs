//! Euler integration of the probability-flow ODE.
//!
//! Each step evaluates the guided target `y~_i` of a [`GuidanceRule`], forms
//! the slope `d_i = (x_i - y~_i) / sigma_i` and moves to the next level,
//! `x_{i+1} = x_i + (sigma_{i+1} - sigma_i) d_i`. The denoisers are never
//! evaluated at the final level, so a schedule ending at `sigma = 0` is fine.

use std::io::Write;

use rayon::prelude::*;

use crate::dataset::{ClassId, Dataset};
use crate::error::{check_dim, Error, Result};
use crate::guidance::{guided_target, GuidanceRule};
use crate::linalg;
use crate::rng::{derive_seed, normal_vec, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    LinearSigma,
    /// `(sigma_max^(1/rho) + i/N (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho`
    PowerRho(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub n_steps: usize,
    pub kind: ScheduleKind,
}

pub const DEFAULT_SIGMA_MAX: f64 = 80.0;
pub const DEFAULT_SIGMA_MIN: f64 = 0.002;
pub const DEFAULT_RHO: f64 = 7.0;

impl NoiseSchedule {
    pub fn linear(sigma_min: f64, sigma_max: f64, n_steps: usize) -> Self {
        Self {
            sigma_min,
            sigma_max,
            n_steps,
            kind: ScheduleKind::LinearSigma,
        }
    }

    pub fn power_rho(sigma_min: f64, sigma_max: f64, n_steps: usize, rho: f64) -> Self {
        Self {
            sigma_min,
            sigma_max,
            n_steps,
            kind: ScheduleKind::PowerRho(rho),
        }
    }

    /// `rho = 7`, `sigma in [0.002, 80]`.
    pub fn default_with_steps(n_steps: usize) -> Self {
        Self::power_rho(DEFAULT_SIGMA_MIN, DEFAULT_SIGMA_MAX, n_steps, DEFAULT_RHO)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Validation("schedule needs at least one step".into()));
        }
        if !(self.sigma_max.is_finite() && self.sigma_max > 0.0) {
            return Err(Error::Validation(format!(
                "sigma_max must be positive, got {}",
                self.sigma_max
            )));
        }
        if !(self.sigma_min.is_finite() && self.sigma_min >= 0.0) {
            return Err(Error::Validation(format!(
                "sigma_min must be >= 0, got {}",
                self.sigma_min
            )));
        }
        if self.sigma_min >= self.sigma_max {
            return Err(Error::Validation(format!(
                "sigma_min {} must be below sigma_max {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if let ScheduleKind::PowerRho(rho) = self.kind {
            if !(rho.is_finite() && rho > 0.0) {
                return Err(Error::Validation(format!(
                    "rho must be positive, got {rho}"
                )));
            }
        }
        Ok(())
    }

    /// Levels `sigma_0 = sigma_max > ... > sigma_N = sigma_min`.
    pub fn discretize(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.n_steps;
        let rho = match self.kind {
            ScheduleKind::LinearSigma => 1.0,
            ScheduleKind::PowerRho(rho) => rho,
        };
        let inv = 1.0 / rho;
        let (a, b) = (self.sigma_max.powf(inv), self.sigma_min.powf(inv));
        let mut levels: Vec<f64> = (0..=n)
            .map(|i| (a + (i as f64 / n as f64) * (b - a)).powf(rho))
            .collect();
        // Pin the endpoints against powf round-off.
        levels[0] = self.sigma_max;
        levels[n] = self.sigma_min;
        if let Some(i) = levels.windows(2).position(|w| w[1] >= w[0]) {
            return Err(Error::Validation(format!(
                "schedule is not strictly decreasing at step {i} ({} -> {})",
                levels[i],
                levels[i + 1]
            )));
        }
        Ok(levels)
    }
}

/// State at one level of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    /// `1 - step / N`, running from 1 (pure noise) to 0.
    pub t: f64,
    pub sigma: f64,
    pub x: Vec<f64>,
    /// Guided target evaluated at this state; `None` for the final state and
    /// for states after an instability.
    pub y_hat: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub endpoint: Vec<f64>,
    pub seed: u64,
    pub class: Option<ClassId>,
    pub unstable: bool,
    /// Step whose update left the finite, bounded region.
    pub unstable_step: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerOptions {
    /// A state is flagged unstable once `|x| > divergence_factor * sigma_max * sqrt(d)`.
    /// The initial noise has norm about `sigma_max * sqrt(d)`.
    pub divergence_factor: f64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            divergence_factor: 10.0,
        }
    }
}

/// Integrates `rule` over `schedule` from noise drawn with `seed`.
pub fn euler_sample(
    rule: &GuidanceRule,
    schedule: &NoiseSchedule,
    seed: u64,
    class: Option<ClassId>,
) -> Result<Trajectory> {
    euler_sample_with(rule, schedule, seed, class, &SamplerOptions::default())
}

pub fn euler_sample_with(
    rule: &GuidanceRule,
    schedule: &NoiseSchedule,
    seed: u64,
    class: Option<ClassId>,
    options: &SamplerOptions,
) -> Result<Trajectory> {
    let sigmas = schedule.discretize()?;
    rule.validate_steps(schedule.n_steps)?;
    euler_sample_levels(rule, &sigmas, seed, class, options)
}

/// Euler integration over an explicit list of noise levels.
pub fn euler_sample_levels(
    rule: &GuidanceRule,
    sigmas: &[f64],
    seed: u64,
    class: Option<ClassId>,
    options: &SamplerOptions,
) -> Result<Trajectory> {
    if sigmas.len() < 2 {
        return Err(Error::Validation("need at least two noise levels".into()));
    }
    let n = sigmas.len() - 1;
    let dim = rule.dim();
    if let Some(i) = sigmas[..n].iter().position(|&s| s == 0.0) {
        return Err(Error::ZeroSigma(i));
    }
    let bound = options.divergence_factor * sigmas[0] * (dim as f64).sqrt();

    let mut x = normal_vec(&mut rng_from_seed(seed), dim, sigmas[0]);
    let mut records = Vec::with_capacity(n + 1);
    let mut unstable_step = None;
    for i in 0..n {
        let (sigma, next) = (sigmas[i], sigmas[i + 1]);
        let y = guided_target(&x, sigma, i, rule, class)?;
        check_dim(dim, y.len())?;
        let dt = next - sigma;
        let x_next: Vec<f64> = x
            .iter()
            .zip(&y)
            .map(|(xi, yi)| xi + dt * ((xi - yi) / sigma))
            .collect();
        let diverged = !linalg::is_finite(&x_next) || linalg::norm(&x_next) > bound;
        records.push(TrajectoryRecord {
            step: i,
            t: 1.0 - i as f64 / n as f64,
            sigma,
            x: std::mem::replace(&mut x, x_next),
            y_hat: Some(y),
        });
        if diverged {
            // Freeze at the last accepted state.
            x = records[i].x.clone();
            unstable_step = Some(i);
            break;
        }
    }
    let done = records.len();
    for (i, &sigma) in sigmas.iter().enumerate().skip(done) {
        records.push(TrajectoryRecord {
            step: i,
            t: 1.0 - i as f64 / n as f64,
            sigma,
            x: x.clone(),
            y_hat: None,
        });
    }
    Ok(Trajectory {
        records,
        endpoint: x,
        seed,
        class,
        unstable: unstable_step.is_some(),
        unstable_step,
    })
}

/// How classes are assigned across an ensemble.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ClassPolicy {
    #[default]
    None,
    /// Trajectory `i` gets `classes[i % classes.len()]`.
    RoundRobin(Vec<ClassId>),
    Fixed(ClassId),
}

impl ClassPolicy {
    /// Round-robin over the dataset's classes in ascending order.
    pub fn round_robin(dataset: &Dataset) -> Result<Self> {
        let classes = dataset.classes();
        if classes.is_empty() {
            return Err(Error::InvalidDataset(
                "round-robin classes need a labelled dataset".into(),
            ));
        }
        Ok(Self::RoundRobin(classes))
    }

    pub fn class_for(&self, index: usize) -> Option<ClassId> {
        match self {
            ClassPolicy::None => None,
            ClassPolicy::RoundRobin(classes) if classes.is_empty() => None,
            ClassPolicy::RoundRobin(classes) => Some(classes[index % classes.len()]),
            ClassPolicy::Fixed(c) => Some(*c),
        }
    }
}

/// `n` trajectories with seeds `derive_seed(base_seed, i)`, returned in index
/// order. Trajectories are evaluated in parallel.
pub fn sample_ensemble(
    rule: &GuidanceRule,
    schedule: &NoiseSchedule,
    n: usize,
    base_seed: u64,
    policy: &ClassPolicy,
    options: &SamplerOptions,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::Validation(
            "ensemble needs at least one trajectory".into(),
        ));
    }
    let sigmas = schedule.discretize()?;
    rule.validate_steps(schedule.n_steps)?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(base_seed, i as u64);
            euler_sample_levels(rule, &sigmas, seed, policy.class_for(i), options)
        })
        .collect()
}

/// Writes one row per record: `step,t,sigma,x_*,yhat_*,unstable`.
///
/// Missing targets are written as empty fields.
pub fn write_trajectory_csv(trajectory: &Trajectory, mut out: impl Write) -> Result<()> {
    let dim = trajectory.endpoint.len();
    let mut header = vec!["step".to_string(), "t".into(), "sigma".into()];
    header.extend((0..dim).map(|j| format!("x_{j}")));
    header.extend((0..dim).map(|j| format!("yhat_{j}")));
    header.push("unstable".into());
    writeln!(out, "{}", header.join(","))?;
    for r in &trajectory.records {
        let mut row = vec![r.step.to_string(), r.t.to_string(), r.sigma.to_string()];
        row.extend(r.x.iter().map(f64::to_string));
        match &r.y_hat {
            Some(y) => row.extend(y.iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), dim)),
        }
        let flagged = trajectory.unstable_step.is_some_and(|s| r.step >= s);
        row.push(u8::from(flagged).to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Writes one row per trajectory: `seed,class,endpoint_*,nearest,error,unstable`.
///
/// Nearest index and error are left empty for unstable trajectories.
pub fn write_ensemble_csv(
    trajectories: &[Trajectory],
    dataset: &Dataset,
    mut out: impl Write,
) -> Result<()> {
    let dim = dataset.dim();
    let mut header = vec!["seed".to_string(), "class".into()];
    header.extend((0..dim).map(|j| format!("endpoint_{j}")));
    header.extend(["nearest".into(), "error".into(), "unstable".into()]);
    writeln!(out, "{}", header.join(","))?;
    for tr in trajectories {
        check_dim(dim, tr.endpoint.len())?;
        let mut row = vec![
            tr.seed.to_string(),
            tr.class.map(|c| c.to_string()).unwrap_or_default(),
        ];
        row.extend(tr.endpoint.iter().map(f64::to_string));
        if tr.unstable {
            row.extend([String::new(), String::new()]);
        } else {
            let (idx, err) = dataset.nearest(&tr.endpoint)?;
            row.extend([idx.to_string(), err.to_string()]);
        }
        row.push(u8::from(tr.unstable).to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

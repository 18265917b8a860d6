//! Guidance extrapolation rules.
//!
//! A rule combines one positive predictor with any number of negative terms:
//!
//! ```text
//! eps~ = eps_pos + sum_i alpha_i w_i M_i ⊙ (eps_pos - eps_neg_i)
//! ```
//!
//! Classifier-free guidance is the single-term instance with a conditional
//! positive and an unconditional negative; weak-model guidance uses a weaker
//! negative of the same kind. The same linear form is applied to target
//! predictions inside the sampler, where it is exactly equivalent.

use std::sync::Arc;

use crate::dataset::ClassId;
use crate::denoiser::{check_sigma, Denoiser};
use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Shared read-only handle to a denoiser.
pub type DenoiserHandle = Arc<dyn Denoiser>;

/// Below this norm of `eps_pos - eps_neg` the optimal weight is undefined.
pub const DEGENERATE_DIRECTION_NORM: f64 = 1e-14;

fn same_denoiser(a: &DenoiserHandle, b: &DenoiserHandle) -> bool {
    std::ptr::eq(Arc::as_ptr(a) as *const (), Arc::as_ptr(b) as *const ())
}

#[derive(Debug, Clone)]
pub enum GuidanceWeight {
    Constant(f64),
    /// Pointwise optimal weight computed against an oracle predictor.
    Optimal(DenoiserHandle),
}

#[derive(Debug, Clone)]
pub struct GuidanceTerm {
    pub negative: DenoiserHandle,
    pub weight: GuidanceWeight,
    /// Interpolation coefficient in `[0, 1]`.
    pub alpha: f64,
    /// Per-term mask, combined with the rule mask by logical AND.
    pub mask: Option<Arc<[bool]>>,
}

impl GuidanceTerm {
    pub fn new(negative: DenoiserHandle, weight: f64) -> Self {
        Self {
            negative,
            weight: GuidanceWeight::Constant(weight),
            alpha: 1.0,
            mask: None,
        }
    }

    pub fn optimal(negative: DenoiserHandle, oracle: DenoiserHandle) -> Self {
        Self {
            negative,
            weight: GuidanceWeight::Optimal(oracle),
            alpha: 1.0,
            mask: None,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        self.alpha = alpha;
        Ok(self)
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.mask = Some(mask.into());
        self
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )))
    }
}

/// Which end of the schedule interval bounds count from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntervalOrigin {
    /// Step 0 is the first (highest-noise) step.
    #[default]
    HighNoise,
    /// Step 0 is the last (lowest-noise) step.
    LowNoise,
}

/// Inclusive range of sampler step indices on which guidance is applied.
///
/// Indices always count from the high-noise end once constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInterval {
    pub lo: usize,
    pub hi: usize,
}

impl StepInterval {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::Validation(format!(
                "interval start {lo} exceeds end {hi}"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Converts bounds given relative to `origin` on an `n_steps` schedule.
    pub fn from_origin(
        lo: usize,
        hi: usize,
        origin: IntervalOrigin,
        n_steps: usize,
    ) -> Result<Self> {
        let interval = Self::new(lo, hi)?;
        interval.check_steps(n_steps)?;
        Ok(match origin {
            IntervalOrigin::HighNoise => interval,
            IntervalOrigin::LowNoise => Self {
                lo: n_steps - 1 - hi,
                hi: n_steps - 1 - lo,
            },
        })
    }

    pub fn contains(&self, step: usize) -> bool {
        (self.lo..=self.hi).contains(&step)
    }

    pub fn check_steps(&self, n_steps: usize) -> Result<()> {
        if self.hi >= n_steps {
            return Err(Error::Validation(format!(
                "interval {}-{} exceeds the {n_steps}-step schedule",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GuidanceRule {
    positive: DenoiserHandle,
    terms: Vec<GuidanceTerm>,
    mask: Option<Arc<[bool]>>,
    interval: Option<StepInterval>,
}

impl GuidanceRule {
    /// Rule without guidance terms; evaluates to the positive predictor.
    pub fn new(positive: DenoiserHandle) -> Self {
        Self {
            positive,
            terms: Vec::new(),
            mask: None,
            interval: None,
        }
    }

    /// One negative predictor with a constant weight.
    pub fn single(positive: DenoiserHandle, negative: DenoiserHandle, weight: f64) -> Result<Self> {
        Self::new(positive).with_term(GuidanceTerm::new(negative, weight))
    }

    pub fn with_term(mut self, term: GuidanceTerm) -> Result<Self> {
        let dim = self.dim();
        check_alpha(term.alpha)?;
        check_dim(dim, term.negative.dim())?;
        match &term.weight {
            GuidanceWeight::Constant(w) if !w.is_finite() => {
                return Err(Error::Validation(format!(
                    "guidance weight must be finite, got {w}"
                )));
            }
            GuidanceWeight::Optimal(oracle) => check_dim(dim, oracle.dim())?,
            _ => {}
        }
        if let Some(mask) = &term.mask {
            check_dim(dim, mask.len())?;
        }
        self.terms.push(term);
        Ok(self)
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        check_dim(self.dim(), mask.len())?;
        self.mask = Some(mask.into());
        Ok(self)
    }

    /// Mask from a 0/1 bit list.
    pub fn with_mask_bits(self, bits: &[u8]) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Validation(format!(
                "mask values must be 0 or 1, got {b}"
            )));
        }
        self.with_mask(bits.iter().map(|&b| b == 1).collect())
    }

    pub fn with_interval(mut self, interval: StepInterval) -> Self {
        self.interval = Some(interval);
        self
    }

    pub fn positive(&self) -> &DenoiserHandle {
        &self.positive
    }

    pub fn terms(&self) -> &[GuidanceTerm] {
        &self.terms
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn interval(&self) -> Option<StepInterval> {
        self.interval
    }

    pub fn dim(&self) -> usize {
        self.positive.dim()
    }

    /// Whether guidance terms are evaluated at `step`.
    pub fn is_active(&self, step: usize) -> bool {
        self.interval.is_none_or(|iv| iv.contains(step))
    }

    pub fn requires_class(&self) -> bool {
        self.positive.requires_class()
            || self.terms.iter().any(|t| {
                t.negative.requires_class()
                    || matches!(&t.weight, GuidanceWeight::Optimal(o) if o.requires_class())
            })
    }

    pub fn validate_steps(&self, n_steps: usize) -> Result<()> {
        match self.interval {
            Some(iv) => iv.check_steps(n_steps),
            None => Ok(()),
        }
    }

    fn term_mask(&self, term: &GuidanceTerm) -> Option<Vec<bool>> {
        match (self.mask.as_deref(), term.mask.as_deref()) {
            (None, None) => None,
            (Some(m), None) | (None, Some(m)) => Some(m.to_vec()),
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| *x && *y).collect()),
        }
    }
}

#[derive(Clone, Copy)]
enum Space {
    Noise,
    Target,
}

fn eval(
    d: &DenoiserHandle,
    space: Space,
    x: &[f64],
    sigma: f64,
    class: Option<ClassId>,
) -> Result<Vec<f64>> {
    let out = match space {
        Space::Noise => d.predict_noise(x, sigma, class)?,
        Space::Target => d.denoise(x, sigma, class)?,
    };
    check_dim(x.len(), out.len())?;
    Ok(out)
}

/// `|a - reference| / |a - b|` with the degenerate-direction check applied to
/// `|a - b| / scale`.
fn weight_ratio(a: &[f64], reference: &[f64], b: &[f64], scale: f64) -> Result<f64> {
    let denom = linalg::dist(a, b);
    if denom / scale <= DEGENERATE_DIRECTION_NORM {
        return Err(Error::DegenerateDirection(denom / scale));
    }
    Ok(linalg::dist(a, reference) / denom)
}

struct Contribution {
    coeff: f64,
    negative: Vec<f64>,
    mask: Option<Vec<bool>>,
}

fn evaluate(
    rule: &GuidanceRule,
    x: &[f64],
    sigma: f64,
    step: usize,
    class: Option<ClassId>,
    space: Space,
) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    check_dim(rule.dim(), x.len())?;
    let pos = eval(&rule.positive, space, x, sigma, class)?;
    if !rule.is_active(step) || rule.terms.is_empty() {
        return Ok(pos);
    }

    let mut contributions = Vec::with_capacity(rule.terms.len());
    for term in &rule.terms {
        let coeff = match &term.weight {
            GuidanceWeight::Constant(w) => {
                let c = term.alpha * w;
                if c == 0.0 {
                    continue;
                }
                c
            }
            GuidanceWeight::Optimal(oracle) => {
                if term.alpha == 0.0 {
                    continue;
                }
                let neg = eval(&term.negative, space, x, sigma, class)?;
                let reference = eval(oracle, space, x, sigma, class)?;
                let scale = match space {
                    Space::Noise => 1.0,
                    Space::Target => sigma,
                };
                // Where the two predictors agree there is nothing to correct.
                let w = match weight_ratio(&pos, &reference, &neg, scale) {
                    Ok(w) => w,
                    Err(Error::DegenerateDirection(_)) => continue,
                    Err(e) => return Err(e),
                };
                contributions.push(Contribution {
                    coeff: term.alpha * w,
                    negative: neg,
                    mask: rule.term_mask(term),
                });
                continue;
            }
        };
        let negative = eval(&term.negative, space, x, sigma, class)?;
        contributions.push(Contribution {
            coeff,
            negative,
            mask: rule.term_mask(term),
        });
    }
    Ok(combine(&pos, &contributions))
}

/// `(1 + sum c_i) pos_j - sum c_i neg_ij` over the terms active at `j`.
///
/// Components with no active term are copied from `pos` unchanged.
fn combine(pos: &[f64], contributions: &[Contribution]) -> Vec<f64> {
    let mut out = pos.to_vec();
    for (j, o) in out.iter_mut().enumerate() {
        let mut total = 0.0;
        let mut acc = 0.0;
        let mut active = false;
        for c in contributions {
            if c.mask.as_ref().is_none_or(|m| m[j]) {
                total += c.coeff;
                acc += c.coeff * c.negative[j];
                active = true;
            }
        }
        if active {
            *o = pos[j] * (1.0 + total) - acc;
        }
    }
    out
}

/// Guided noise prediction at `(x, sigma)` for sampler step `step`.
pub fn guided_predict(
    x: &[f64],
    sigma: f64,
    step: usize,
    rule: &GuidanceRule,
    class: Option<ClassId>,
) -> Result<Vec<f64>> {
    evaluate(rule, x, sigma, step, class, Space::Noise)
}

/// Guided target prediction, `y_pos + sum c_i (y_pos - y_neg_i)`.
pub fn guided_target(
    x: &[f64],
    sigma: f64,
    step: usize,
    rule: &GuidanceRule,
    class: Option<ClassId>,
) -> Result<Vec<f64>> {
    evaluate(rule, x, sigma, step, class, Space::Target)
}

/// Pointwise optimal weight `|eps_pos - eps*| / |eps_pos - eps_neg|`.
pub fn optimal_weight(
    x: &[f64],
    sigma: f64,
    pos: &dyn Denoiser,
    neg: &dyn Denoiser,
    oracle: &dyn Denoiser,
    class: Option<ClassId>,
) -> Result<f64> {
    check_sigma(sigma)?;
    let e_pos = pos.predict_noise(x, sigma, class)?;
    let e_neg = neg.predict_noise(x, sigma, class)?;
    let e_opt = oracle.predict_noise(x, sigma, class)?;
    check_dim(e_pos.len(), e_neg.len())?;
    check_dim(e_pos.len(), e_opt.len())?;
    weight_ratio(&e_pos, &e_opt, &e_neg, 1.0)
}

/// Tolerance on `sum alpha == 1` for convex combinations.
pub const CONVEX_TOLERANCE: f64 = 1e-12;

/// Merges rules sharing a positive predictor into one rule whose terms carry
/// `alpha_rule * alpha_term`. Rule masks move onto their terms.
pub fn interpolate_rules(rules: &[(GuidanceRule, f64)]) -> Result<GuidanceRule> {
    let (first, _) = rules
        .first()
        .ok_or_else(|| Error::Validation("no rules to interpolate".into()))?;
    for (_, alpha) in rules {
        check_alpha(*alpha)?;
    }
    let total: f64 = rules.iter().map(|(_, a)| a).sum();
    if (total - 1.0).abs() > CONVEX_TOLERANCE {
        return Err(Error::Validation(format!("alphas sum to {total}, not 1")));
    }
    if let Some((i, _)) = rules
        .iter()
        .enumerate()
        .find(|(_, (r, _))| !same_denoiser(r.positive(), first.positive()))
    {
        return Err(Error::IncompatibleRules(format!(
            "rule {i} uses a different positive predictor"
        )));
    }
    let mut interval = None;
    for (i, (rule, alpha)) in rules.iter().enumerate() {
        if *alpha == 0.0 {
            continue;
        }
        match (interval, rule.interval) {
            (None, iv) => interval = Some(iv),
            (Some(a), b) if a != b => {
                return Err(Error::IncompatibleRules(format!(
                    "rule {i} has a different step interval"
                )));
            }
            _ => {}
        }
    }

    let mut merged = GuidanceRule::new(first.positive().clone());
    merged.interval = interval.flatten();
    for (rule, alpha) in rules {
        if *alpha == 0.0 {
            continue;
        }
        for term in &rule.terms {
            merged.terms.push(GuidanceTerm {
                negative: term.negative.clone(),
                weight: term.weight.clone(),
                alpha: term.alpha * alpha,
                mask: rule.term_mask(term).map(Into::into),
            });
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Returns a fixed noise prediction regardless of input.
    #[derive(Debug)]
    struct Fixed(Vec<f64>);

    impl Denoiser for Fixed {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn denoise(&self, x: &[f64], sigma: f64, _: Option<ClassId>) -> Result<Vec<f64>> {
            Ok(x.iter()
                .zip(&self.0)
                .map(|(xi, e)| xi - sigma * e)
                .collect())
        }
        fn predict_noise(&self, _: &[f64], _: f64, _: Option<ClassId>) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    fn fixed(v: &[f64]) -> DenoiserHandle {
        Arc::new(Fixed(v.to_vec()))
    }

    const X: [f64; 3] = [0.1, 0.2, 0.3];

    #[test]
    fn zero_weight_returns_positive_bitwise() {
        let pos = fixed(&[0.3, -1.7, 2.9]);
        let rule = GuidanceRule::single(pos.clone(), fixed(&[5.0, 5.0, 5.0]), 0.0).unwrap();
        assert_eq!(
            guided_predict(&X, 1.0, 0, &rule, None).unwrap(),
            vec![0.3, -1.7, 2.9]
        );
    }

    #[test]
    fn minus_one_returns_negative() {
        let neg = vec![0.123, -4.56, 7.0e-3];
        let rule = GuidanceRule::single(fixed(&[1.1, 2.2, 3.3]), fixed(&neg), -1.0).unwrap();
        assert_eq!(guided_predict(&X, 1.0, 0, &rule, None).unwrap(), neg);
    }

    #[test]
    fn mask_zero_keeps_positive_component() {
        let pos = fixed(&[1.0, 2.0, 3.0]);
        let neg = fixed(&[0.5, 0.25, -1.0]);
        let plain = GuidanceRule::single(pos.clone(), neg.clone(), 1.5).unwrap();
        let masked = plain.clone().with_mask(vec![true, false, true]).unwrap();
        let a = guided_predict(&X, 1.0, 0, &plain, None).unwrap();
        let b = guided_predict(&X, 1.0, 0, &masked, None).unwrap();
        assert_eq!(b[1], 2.0);
        assert_eq!(a[0], b[0]);
        assert_eq!(a[2], b[2]);
        assert_ne!(a[1], b[1]);
    }

    #[test]
    fn interval_gates_guidance() {
        let rule = GuidanceRule::single(fixed(&[1.0, 1.0, 1.0]), fixed(&[0.0, 0.0, 0.0]), 2.0)
            .unwrap()
            .with_interval(StepInterval::new(3, 5).unwrap());
        assert_eq!(
            guided_predict(&X, 1.0, 2, &rule, None).unwrap(),
            vec![1.0; 3]
        );
        assert_eq!(
            guided_predict(&X, 1.0, 4, &rule, None).unwrap(),
            vec![3.0; 3]
        );
        assert_eq!(
            guided_predict(&X, 1.0, 6, &rule, None).unwrap(),
            vec![1.0; 3]
        );
        assert!(rule.validate_steps(5).is_err());
        assert!(rule.validate_steps(6).is_ok());
    }

    #[test]
    fn low_noise_origin_mirrors_interval() {
        let iv = StepInterval::from_origin(10, 20, IntervalOrigin::LowNoise, 32).unwrap();
        assert_eq!(iv, StepInterval { lo: 11, hi: 21 });
        let iv = StepInterval::from_origin(10, 20, IntervalOrigin::HighNoise, 32).unwrap();
        assert_eq!(iv, StepInterval { lo: 10, hi: 20 });
        assert!(StepInterval::from_origin(10, 32, IntervalOrigin::HighNoise, 32).is_err());
        assert!(StepInterval::new(5, 4).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = GuidanceRule::single(fixed(&[1.0, 2.0]), fixed(&[1.0]), 1.0).unwrap_err();
        assert_eq!(
            err,
            Error::Shape {
                expected: 2,
                got: 1
            }
        );
        let rule = GuidanceRule::new(fixed(&[1.0, 2.0]));
        assert!(rule.clone().with_mask(vec![true]).is_err());
        assert!(rule.with_mask_bits(&[0, 2]).is_err());
    }

    #[test]
    fn optimal_weight_cases() {
        let star = [0.5, -0.5, 1.0];
        let e = [0.3, 0.1, -0.2];
        let pos: Vec<f64> = star.iter().zip(&e).map(|(s, e)| s + e).collect();
        let neg: Vec<f64> = star.iter().zip(&e).map(|(s, e)| s + 2.0 * e).collect();
        let (p, n, o) = (fixed(&pos), fixed(&neg), fixed(&star));
        let w = optimal_weight(&X, 1.0, p.as_ref(), n.as_ref(), o.as_ref(), None).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
        let rule = GuidanceRule::single(p.clone(), n.clone(), w).unwrap();
        let out = guided_predict(&X, 1.0, 0, &rule, None).unwrap();
        for (a, b) in out.iter().zip(&star) {
            assert!((a - b).abs() < 1e-12);
        }
        // pos equal to the oracle needs no correction.
        assert_eq!(
            optimal_weight(&X, 1.0, o.as_ref(), n.as_ref(), o.as_ref(), None).unwrap(),
            0.0
        );
        // identical predictors: direction undefined.
        assert!(matches!(
            optimal_weight(&X, 1.0, p.as_ref(), p.as_ref(), o.as_ref(), None),
            Err(Error::DegenerateDirection(_))
        ));
    }

    #[test]
    fn optimal_term_recovers_oracle() {
        let star = [0.5, -0.5, 1.0];
        let e = [0.3, 0.1, -0.2];
        let lambda = 3.0;
        let pos: Vec<f64> = star.iter().zip(&e).map(|(s, e)| s + e).collect();
        let neg: Vec<f64> = star.iter().zip(&e).map(|(s, e)| s + lambda * e).collect();
        let rule = GuidanceRule::new(fixed(&pos))
            .with_term(GuidanceTerm::optimal(fixed(&neg), fixed(&star)))
            .unwrap();
        for space_out in [guided_predict(&X, 1.0, 0, &rule, None).unwrap(), {
            let y = guided_target(&X, 0.5, 0, &rule, None).unwrap();
            X.iter().zip(&y).map(|(x, y)| (x - y) / 0.5).collect()
        }] {
            for (a, b) in space_out.iter().zip(&star) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn interpolation_one_hot_and_idempotent() {
        let pos = fixed(&[1.0, -2.0, 0.5]);
        let r1 = GuidanceRule::single(pos.clone(), fixed(&[0.2, 0.4, 0.1]), 1.3).unwrap();
        let r2 = GuidanceRule::single(pos.clone(), fixed(&[-3.0, 1.0, 2.0]), 0.7).unwrap();
        let merged = interpolate_rules(&[(r1.clone(), 1.0), (r2.clone(), 0.0)]).unwrap();
        assert_eq!(
            guided_predict(&X, 1.0, 0, &merged, None).unwrap(),
            guided_predict(&X, 1.0, 0, &r1, None).unwrap()
        );
        let same = interpolate_rules(&[(r2.clone(), 0.5), (r2.clone(), 0.5)]).unwrap();
        assert_eq!(
            guided_predict(&X, 1.0, 0, &same, None).unwrap(),
            guided_predict(&X, 1.0, 0, &r2, None).unwrap()
        );
    }

    #[test]
    fn interpolation_halves_each_weight() {
        let pos = [1.0, -2.0, 0.5];
        let n1 = [0.2, 0.4, 0.1];
        let n2 = [-3.0, 1.0, 2.0];
        let p = fixed(&pos);
        let r1 = GuidanceRule::single(p.clone(), fixed(&n1), 1.0).unwrap();
        let r2 = GuidanceRule::single(p.clone(), fixed(&n2), 1.0).unwrap();
        let merged = interpolate_rules(&[(r1, 0.5), (r2, 0.5)]).unwrap();
        let out = guided_predict(&X, 1.0, 0, &merged, None).unwrap();
        // Expanded by hand: pos + 0.5 (pos - n1) + 0.5 (pos - n2) = 2 pos - (n1 + n2) / 2.
        for j in 0..3 {
            let expected = 2.0 * pos[j] - 0.5 * (n1[j] + n2[j]);
            assert!((out[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_errors() {
        let r1 = GuidanceRule::single(fixed(&[1.0]), fixed(&[0.0]), 1.0).unwrap();
        let r2 = GuidanceRule::single(fixed(&[1.0]), fixed(&[0.0]), 1.0).unwrap();
        assert!(matches!(
            interpolate_rules(&[(r1.clone(), 0.5), (r2, 0.5)]),
            Err(Error::IncompatibleRules(_))
        ));
        assert!(matches!(
            interpolate_rules(&[(r1.clone(), 0.5), (r1.clone(), 0.6)]),
            Err(Error::Validation(_))
        ));
        assert!(interpolate_rules(&[]).is_err());
        let gated = r1.clone().with_interval(StepInterval::new(0, 1).unwrap());
        assert!(matches!(
            interpolate_rules(&[(r1, 0.5), (gated, 0.5)]),
            Err(Error::IncompatibleRules(_))
        ));
    }

    #[test]
    fn nonfinite_weight_rejected() {
        assert!(GuidanceRule::single(fixed(&[1.0]), fixed(&[0.0]), f64::NAN).is_err());
        assert!(GuidanceTerm::new(fixed(&[0.0]), 1.0)
            .with_alpha(1.5)
            .is_err());
    }
}

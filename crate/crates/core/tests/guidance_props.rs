use std::sync::Arc;

use proptest::prelude::*;
use swgtoy_core::{
    guided_predict, interpolate_rules, optimal_weight, ClassId, Dataset, Denoiser, DenoiserHandle,
    DenoiserSpec, GuidanceRule, GuidanceTerm, Result, StepInterval,
};

/// Noise predictor returning a stored vector.
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

fn fixed(v: Vec<f64>) -> DenoiserHandle {
    Arc::new(Fixed(v))
}

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 3)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn affine_in_the_weight(pos in vec3(), neg in vec3(), w in -5.0f64..5.0, mask in prop::collection::vec(any::<bool>(), 3)) {
        let p = fixed(pos.clone());
        let n = fixed(neg.clone());
        let at = |w: f64| {
            let rule = GuidanceRule::single(p.clone(), n.clone(), w).unwrap().with_mask(mask.clone()).unwrap();
            guided_predict(&[0.0; 3], 1.0, 0, &rule, None).unwrap()
        };
        let (a, b) = (at(w), at(w + 1.0));
        for j in 0..3 {
            let slope = b[j] - a[j];
            let expected = if mask[j] { pos[j] - neg[j] } else { 0.0 };
            prop_assert!((slope - expected).abs() <= 1e-10 * (1.0 + pos[j].abs() + neg[j].abs()) * (1.0 + w.abs()));
        }
    }

    #[test]
    fn gated_steps_return_positive_bitwise(pos in vec3(), neg in vec3(), w in -5.0f64..5.0, lo in 0usize..20, len in 0usize..10, step in 0usize..32) {
        let rule = GuidanceRule::single(fixed(pos.clone()), fixed(neg), w)
            .unwrap()
            .with_interval(StepInterval::new(lo, lo + len).unwrap());
        let out = guided_predict(&[0.0; 3], 1.0, step, &rule, None).unwrap();
        if !(lo..=lo + len).contains(&step) {
            prop_assert_eq!(out, pos);
        }
    }

    #[test]
    fn collinear_errors_are_corrected_exactly(star in vec3(), e in vec3(), lambda in 1.1f64..10.0) {
        prop_assume!(norm(&e) > 1e-3);
        let pos: Vec<f64> = star.iter().zip(&e).map(|(s, e)| s + e).collect();
        let neg: Vec<f64> = star.iter().zip(&e).map(|(s, e)| s + lambda * e).collect();
        let (p, n, o) = (fixed(pos), fixed(neg), fixed(star.clone()));
        let w = optimal_weight(&[0.0; 3], 1.0, p.as_ref(), n.as_ref(), o.as_ref(), None).unwrap();
        prop_assert!((w - 1.0 / (lambda - 1.0)).abs() <= 1e-12 * w.max(1.0));
        let rule = GuidanceRule::single(p, n, w).unwrap();
        let out = guided_predict(&[0.0; 3], 1.0, 0, &rule, None).unwrap();
        let diff: Vec<f64> = out.iter().zip(&star).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&diff) <= 1e-10 * norm(&star).max(1e-300));
    }
}

#[test]
fn cfg_positive_is_the_straight_line_for_one_point_per_class() {
    let ds = Arc::new(Dataset::triangle(1.0));
    let cond: DenoiserHandle = Arc::new(
        DenoiserSpec::optimal(ds.clone())
            .with_conditioning(swgtoy_core::Conditioning::PerSample)
            .unwrap(),
    );
    let uncond: DenoiserHandle = Arc::new(DenoiserSpec::optimal(ds.clone()));
    let rule = GuidanceRule::single(cond, uncond, 0.0).unwrap();
    let x = [3.0, -1.0];
    let out = guided_predict(&x, 2.0, 0, &rule, Some(1)).unwrap();
    let y = ds.point(1);
    assert_eq!(out, vec![(x[0] - y[0]) / 2.0, (x[1] - y[1]) / 2.0]);
    assert!(guided_predict(&x, 2.0, 0, &rule, None).is_err());
}

#[test]
fn combined_terms_evaluate_each_negative_once_per_call() {
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[derive(Debug)]
    struct Counting(Vec<f64>, AtomicUsize);
    impl Denoiser for Counting {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn denoise(&self, x: &[f64], _: f64, _: Option<ClassId>) -> Result<Vec<f64>> {
            Ok(x.to_vec())
        }
        fn predict_noise(&self, _: &[f64], _: f64, _: Option<ClassId>) -> Result<Vec<f64>> {
            self.1.fetch_add(1, Ordering::SeqCst);
            Ok(self.0.clone())
        }
    }

    let pos = Arc::new(Counting(vec![1.0, 2.0], AtomicUsize::new(0)));
    let n1 = Arc::new(Counting(vec![0.0, 0.0], AtomicUsize::new(0)));
    let n2 = Arc::new(Counting(vec![2.0, 2.0], AtomicUsize::new(0)));
    let r1 = GuidanceRule::single(pos.clone(), n1.clone(), 1.0).unwrap();
    let r2 = GuidanceRule::single(pos.clone(), n2.clone(), 3.0).unwrap();
    let merged = interpolate_rules(&[(r1, 0.25), (r2, 0.75)]).unwrap();
    let out = guided_predict(&[0.0, 0.0], 1.0, 0, &merged, None).unwrap();
    assert_eq!(pos.1.load(Ordering::SeqCst), 1);
    assert_eq!(n1.1.load(Ordering::SeqCst), 1);
    assert_eq!(n2.1.load(Ordering::SeqCst), 1);
    // pos + 0.25 (pos - n1) + 2.25 (pos - n2)
    assert_eq!(out, vec![1.0 + 0.25 - 2.25, 2.0 + 0.5]);
}

#[test]
fn rule_masks_move_onto_terms_when_merged() {
    let pos = fixed(vec![1.0, 1.0]);
    let r1 = GuidanceRule::single(pos.clone(), fixed(vec![0.0, 0.0]), 1.0)
        .unwrap()
        .with_mask(vec![true, false])
        .unwrap();
    let r2 = GuidanceRule::single(pos.clone(), fixed(vec![0.0, 0.0]), 1.0).unwrap();
    let merged = interpolate_rules(&[(r1, 0.5), (r2, 0.5)]).unwrap();
    let out = guided_predict(&[0.0, 0.0], 1.0, 0, &merged, None).unwrap();
    assert_eq!(out, vec![2.0, 1.5]);
    let term: &GuidanceTerm = &merged.terms()[0];
    assert_eq!(term.mask.as_deref(), Some(&[true, false][..]));
}

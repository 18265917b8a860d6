use std::sync::Arc;

use proptest::prelude::*;
use swgtoy_core::rng::{normal_vec, rng_from_seed};
use swgtoy_core::{
    noise_predictor, optimal_denoiser, posterior_weights, Conditioning, Dataset, Denoiser,
    DenoiserSpec,
};

/// Direct exponentiation without max-subtraction. Only valid where the
/// Gaussian factors do not underflow.
fn naive_posterior_mean(points: &[Vec<f64>], x: &[f64], sigma: f64) -> Vec<f64> {
    let w: Vec<f64> = points
        .iter()
        .map(|p| {
            let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let z: f64 = w.iter().sum();
    let mut mean = vec![0.0; x.len()];
    for (p, wi) in points.iter().zip(&w) {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += wi / z * v;
        }
    }
    mean
}

fn triangle() -> Arc<Dataset> {
    Arc::new(Dataset::triangle(1.0))
}

#[test]
fn matches_naive_posterior_mean_at_moderate_sigma() {
    let ds = Dataset::gaussian_cloud(12, 3, 1.0, 5).unwrap();
    let points: Vec<Vec<f64>> = ds.points().map(<[f64]>::to_vec).collect();
    let spec = DenoiserSpec::optimal(Arc::new(ds));
    let mut rng = rng_from_seed(17);
    for _ in 0..200 {
        let x = normal_vec(&mut rng, 3, 1.5);
        for sigma in [0.5, 1.0, 3.0, 10.0] {
            let a = optimal_denoiser(&x, sigma, &spec, None).unwrap();
            let b = naive_posterior_mean(&points, &x, sigma);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12, "{u} vs {v} at sigma {sigma}");
            }
        }
    }
}

#[test]
fn error_prone_matches_monte_carlo_expanded_dataset() {
    let delta = 0.1;
    let base = triangle();
    let mut rng = rng_from_seed(2024);
    let mut expanded = Vec::with_capacity(100_000);
    for i in 0..100_000 {
        let y = base.point(i % 3);
        let noise = normal_vec(&mut rng, 2, delta);
        expanded.push(vec![y[0] + noise[0], y[1] + noise[1]]);
    }
    let mc = DenoiserSpec::optimal(Arc::new(Dataset::new(expanded, None).unwrap()));
    let closed = DenoiserSpec::error_prone(base, delta).unwrap();
    for (x, sigma) in [
        ([0.2, 0.3], 0.5),
        ([0.9, -0.4], 0.2),
        ([-0.5, -0.5], 1.0),
        ([0.0, 1.1], 0.15),
    ] {
        let a = closed.denoise(&x, sigma, None).unwrap();
        let b = mc.denoise(&x, sigma, None).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-2, "x={x:?} sigma={sigma}: {u} vs {v}");
        }
    }
}

#[test]
fn error_identity_at_unit_sigma() {
    // eps_err(x, 1) against (sigma / sigma_tilde) eps*(x, sigma_tilde) with delta = 0.1.
    let ds = triangle();
    let err = DenoiserSpec::error_prone(ds.clone(), 0.1).unwrap();
    let opt = DenoiserSpec::optimal(ds);
    let x = [0.337, -0.912];
    let st = (1.0f64 + 0.01).sqrt();
    let lhs = noise_predictor(&x, 1.0, &err, None).unwrap();
    let rhs = noise_predictor(&x, st, &opt, None).unwrap();
    for (a, b) in lhs.iter().zip(&rhs) {
        assert!((a - b / st).abs() <= 1e-12 * b.abs().max(1e-300));
    }
}

#[test]
fn class_conditional_single_point_is_straight_line() {
    let ds = triangle();
    let spec = DenoiserSpec::optimal(ds.clone())
        .with_conditioning(Conditioning::PerSample)
        .unwrap();
    let mut rng = rng_from_seed(3);
    for _ in 0..100 {
        let x = normal_vec(&mut rng, 2, 20.0);
        for c in 0..3 {
            let y = ds.point(c as usize);
            let eps = spec.predict_noise(&x, 7.5, Some(c)).unwrap();
            assert_eq!(eps, vec![(x[0] - y[0]) / 7.5, (x[1] - y[1]) / 7.5]);
        }
    }
}

#[test]
fn fixed_class_conditioning_renormalizes() {
    let ds = Arc::new(
        Dataset::new(
            vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]],
            Some(vec![0, 0, 1, 1]),
        )
        .unwrap(),
    );
    let spec = DenoiserSpec::optimal(ds)
        .with_conditioning(Conditioning::Fixed(1))
        .unwrap();
    let w = posterior_weights(&[10.5], 1.0, &spec, None).unwrap();
    assert_eq!(w.len(), 2);
    assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
}

/// Barycentric coordinates of `p` in the triangle `a, b, c`.
fn barycentric(p: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> [f64; 3] {
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    let l1 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l2 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    [l1, l2, 1.0 - l1 - l2]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn weights_normalize(
        x0 in -1e3f64..1e3, x1 in -1e3f64..1e3,
        log_sigma in -3.0f64..3.0,
        seed in 0u64..50,
    ) {
        let sigma = 10f64.powf(log_sigma);
        let ds = Dataset::gaussian_cloud(20, 2, 2.0, seed).unwrap();
        let spec = DenoiserSpec::optimal(Arc::new(ds));
        let w = posterior_weights(&[x0, x1], sigma, &spec, None).unwrap();
        prop_assert!(w.iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn posterior_mean_stays_in_triangle(
        x0 in -1e3f64..1e3, x1 in -1e3f64..1e3,
        log_sigma in -3.0f64..3.0,
        delta in prop_oneof![Just(0.0), 0.01f64..1.0],
    ) {
        let ds = triangle();
        let spec = DenoiserSpec::with_delta(ds.clone(), 0.0).unwrap();
        let sigma = 10f64.powf(log_sigma);
        // The error-prone inner call evaluates y* at sigma_tilde, so cover that too.
        let sigma = sigma.hypot(delta);
        let y = optimal_denoiser(&[x0, x1], sigma, &spec, None).unwrap();
        let l = barycentric(&y, ds.point(0), ds.point(1), ds.point(2));
        prop_assert!(l.iter().all(|v| *v >= -1e-9), "{l:?}");
    }

    #[test]
    fn error_identity(
        x0 in -50f64..50.0, x1 in -50f64..50.0,
        log_sigma in -2.0f64..2.0,
        delta in 0.001f64..2.0,
    ) {
        let ds = triangle();
        let sigma = 10f64.powf(log_sigma);
        let err = DenoiserSpec::error_prone(ds.clone(), delta).unwrap();
        let opt = DenoiserSpec::optimal(ds);
        let st = (sigma * sigma + delta * delta).sqrt();
        let lhs = noise_predictor(&[x0, x1], sigma, &err, None).unwrap();
        let eps = noise_predictor(&[x0, x1], st, &opt, None).unwrap();
        let rhs: Vec<f64> = eps.iter().map(|e| sigma / st * e).collect();
        let diff: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale: f64 = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-12 * scale.max(f64::MIN_POSITIVE), "{diff} vs {scale}");
    }
}

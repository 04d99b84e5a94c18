use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stackgp::gp::{nlml_grad, OptConfig};
use stackgp::linalg::JitterPolicy;
use stackgp::{fit, Covariance, GpHyperparams, GpModel, KernelSpec};

fn grid(n: usize, step: f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![i as f64 * step]).collect()
}

#[test]
fn recovers_lengthscale_of_smooth_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let xs = grid(40, 0.25);
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| (x[0] / 1.5).sin() + noise.sample(&mut rng))
        .collect();
    let start = KernelSpec::squared_exponential(1.0, 0.3).unwrap();
    let m = fit(
        &start,
        &xs,
        &ys,
        &OptConfig {
            restarts: 4,
            ..OptConfig::default()
        },
    )
    .unwrap();
    let ls = (m.kernel().log_params()[1]).exp();
    assert!((0.8..4.0).contains(&ls), "lengthscale {ls}");
    let sd = standardized_scale(&ys);
    let noise_sd = m.hyper().log_noise.exp().sqrt() * sd;
    assert!((0.05..0.2).contains(&noise_sd), "noise sd {noise_sd}");
    let grad = nlml_grad(m.kernel(), m.hyper().log_noise, &xs, &standardized(&ys)).unwrap();
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(norm < 1e-4, "gradient norm {norm}");
}

fn standardized_scale(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mu = y.iter().sum::<f64>() / n;
    (y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt()
}

fn standardized(y: &[f64]) -> Vec<f64> {
    let mu = y.iter().sum::<f64>() / y.len() as f64;
    let sd = standardized_scale(y);
    y.iter().map(|v| (v - mu) / sd).collect()
}

#[test]
fn white_noise_is_explained_as_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let xs = grid(30, 1.0);
    let ys: Vec<f64> = (0..30).map(|_| normal.sample(&mut rng)).collect();
    let start = KernelSpec::squared_exponential(1.0, 3.0).unwrap();
    let m = fit(&start, &xs, &ys, &OptConfig::default()).unwrap();
    let amp = m.kernel().log_params()[0].exp();
    let noise = m.hyper().log_noise.exp();
    assert!(
        noise > amp || m.kernel().log_params()[1].exp() < 0.5,
        "noise {noise} amp {amp}"
    );
}

#[test]
fn variance_does_not_grow_as_points_are_added() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hyper = GpHyperparams {
        kernel: KernelSpec::seasonal_tied(1.0, 1.2, 12.0).unwrap(),
        log_noise: (0.05f64).ln(),
    };
    let tests = grid(6, 3.7);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    for _ in 0..12 {
        xs.push(vec![rng.random_range(0.0..24.0)]);
        ys.push(rng.random_range(-1.0..1.0));
        // Fix the standardization so only the conditioning set changes.
        let m = GpModel::condition_scaled(
            hyper.clone(),
            xs.clone(),
            ys.clone(),
            0.0,
            1.0,
            false,
            &JitterPolicy::default(),
        )
        .unwrap();
        let v = m.predict(&tests).unwrap().variance;
        if let Some(p) = &prev {
            for (a, b) in v.iter().zip(p) {
                assert!(*a <= b + 1e-12);
            }
        }
        prev = Some(v);
    }
}

#[test]
fn interpolation_and_prior_reversion() {
    let hyper = GpHyperparams {
        kernel: KernelSpec::squared_exponential(1.0, 1.0).unwrap(),
        log_noise: (1e-8f64).ln(),
    };
    let xs = grid(5, 1.0);
    let ys = vec![3.0, 1.0, 4.0, 1.0, 5.0];
    let m = GpModel::condition(hyper, xs, ys.clone(), &JitterPolicy::default()).unwrap();
    let at = m.predict(&[vec![2.0], vec![200.0]]).unwrap();
    assert!((at.mean[0] - 4.0).abs() < 1e-5);
    assert!((at.mean[1] - m.target_mean()).abs() < 1e-9);
    let s2 = m.target_scale().powi(2);
    assert!((at.variance[1] - s2 * (1.0 + 1e-8)).abs() < 1e-6 * s2);
}

#[test]
fn fit_is_deterministic_for_a_seed() {
    let xs = grid(15, 1.0);
    let ys: Vec<f64> = xs.iter().map(|x| (x[0] * 0.7).cos() + 0.1 * x[0]).collect();
    let k = KernelSpec::seasonal(1.0, 1.0, 12.0, 0.5, 12.0).unwrap();
    let opt = OptConfig {
        seed: 9,
        ..OptConfig::default()
    };
    let a = fit(&k, &xs, &ys, &opt).unwrap();
    let b = fit(&k, &xs, &ys, &opt).unwrap();
    assert_eq!(a.hyper(), b.hyper());
    assert_eq!(a.nlml().to_bits(), b.nlml().to_bits());
}

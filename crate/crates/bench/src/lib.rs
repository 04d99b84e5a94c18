//! Deterministic inputs shared by the benchmarks.

use stackgp::data::{generate_synthetic, SynthConfig};
use stackgp::linalg::SymMatrix;
use stackgp::{FeatureGroup, FeatureGroupKernel, KernelSpec, PanelDataset};

/// `n` monthly time points.
pub fn months(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![i as f64]).collect()
}

/// A smooth seasonal series with a little deterministic wobble.
pub fn seasonal_targets(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64;
            100.0 + 30.0 * (t * std::f64::consts::PI / 6.0).cos() + (t * 1.7).sin()
        })
        .collect()
}

/// Stage-2 shaped rows: `width` columns of pseudo-random values in [-2, 2).
pub fn stacked_rows(n: usize, width: usize) -> Vec<Vec<f64>> {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    (0..n)
        .map(|_| {
            (0..width)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
                })
                .collect()
        })
        .collect()
}

/// Load, weather and stage-1 groups over `lags + 6` columns.
pub fn stacked_kernel(lags: usize) -> FeatureGroupKernel {
    let se = |w: usize| KernelSpec::squared_exponential(1.0, (w as f64).sqrt()).unwrap();
    FeatureGroupKernel::new(vec![
        FeatureGroup {
            name: "load".into(),
            start: 0,
            width: lags + 1,
            kernel: se(lags + 1),
        },
        FeatureGroup {
            name: "weather".into(),
            start: lags + 1,
            width: 3,
            kernel: se(3),
        },
        FeatureGroup {
            name: "stage1".into(),
            start: lags + 4,
            width: 2,
            kernel: se(2),
        },
    ])
    .unwrap()
}

/// Symmetric positive-definite matrix from the seasonal kernel plus noise.
pub fn spd(n: usize) -> SymMatrix {
    let k = KernelSpec::seasonal_tied(1.0, 2.0, 12.0).unwrap();
    let mut m = stackgp::kernels::gram_sym(&k, &months(n)).unwrap();
    m.add_diagonal(0.1);
    m
}

pub fn small_panel(n_tasks: usize) -> PanelDataset {
    generate_synthetic(&SynthConfig {
        n_tasks,
        ..SynthConfig::default()
    })
    .unwrap()
}

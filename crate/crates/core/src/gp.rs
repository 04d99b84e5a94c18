//! Exact Gaussian-process regression.
//!
//! Targets are standardized to zero mean and unit variance before fitting;
//! the prior mean is zero in standardized units. Hyperparameters (kernel
//! log-parameters followed by the log noise variance) are found by
//! minimizing the negative log marginal likelihood with [`crate::optim`].

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Covariance, ParamKind};
use crate::linalg::{cholesky, logdet, solve_chol, CholFactor, JitterPolicy, SymMatrix};
use crate::optim::{minimize, Bounds};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// Rows per parallel chunk when accumulating gradient traces.
const ROW_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    /// Random log-uniform starts in addition to the configured start point.
    pub restarts: usize,
    pub max_iter: usize,
    /// Convergence threshold on the max-abs projected gradient.
    pub tol: f64,
    pub seed: u64,
    /// Keep period hyperparameters at their configured values.
    pub freeze_period: bool,
    /// Floor on distance-scale lengthscales, in input units.
    pub min_lengthscale: Option<f64>,
    pub jitter: JitterPolicy,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            restarts: 3,
            max_iter: 200,
            tol: 1e-5,
            seed: 0,
            freeze_period: false,
            min_lengthscale: None,
            jitter: JitterPolicy::default(),
        }
    }
}

/// Kernel hyperparameters plus log noise variance, both in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams<K> {
    pub kernel: K,
    /// log σ_n² in standardized target units.
    pub log_noise: f64,
}

/// Gaussian predictive marginals in original target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDist {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub lower95: Vec<f64>,
    pub upper95: Vec<f64>,
}

impl PredictiveDist {
    fn from_moments(mean: Vec<f64>, variance: Vec<f64>) -> Self {
        let lower95 = mean
            .iter()
            .zip(&variance)
            .map(|(m, v)| m - Z95 * v.sqrt())
            .collect();
        let upper95 = mean
            .iter()
            .zip(&variance)
            .map(|(m, v)| m + Z95 * v.sqrt())
            .collect();
        PredictiveDist {
            mean,
            variance,
            lower95,
            upper95,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// A GP conditioned on its training data at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GpModel<K> {
    hyper: GpHyperparams<K>,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    target_mean: f64,
    target_scale: f64,
    chol: CholFactor,
    alpha: Vec<f64>,
    nlml: f64,
    degenerate: bool,
}

fn standardize(targets: &[f64]) -> (f64, f64, bool) {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= 1e-12 * mean.abs().max(1.0) {
        (mean, 1.0, true)
    } else {
        (mean, sd, false)
    }
}

fn check_data<K: Covariance>(kernel: &K, inputs: &[Vec<f64>], targets: &[f64]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            found: targets.len(),
        });
    }
    let d = inputs[0].len();
    for x in inputs {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        kernel.check_input(x)?;
    }
    Ok(())
}

fn noisy_gram<K: Covariance>(kernel: &K, log_noise: f64, inputs: &[Vec<f64>]) -> Result<SymMatrix> {
    let n = inputs.len();
    // Rows are computed in parallel; each entry is a pure function of (i, j).
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..=i)
                .map(|j| kernel.value(&inputs[i], &inputs[j]))
                .collect()
        })
        .collect();
    let mut k = SymMatrix::from_lower_fn(n, |i, j| rows[i][j])?;
    k.add_diagonal(log_noise.exp());
    Ok(k)
}

struct Factored {
    chol: CholFactor,
    alpha: Vec<f64>,
    nlml: f64,
}

fn factor<K: Covariance>(
    kernel: &K,
    log_noise: f64,
    inputs: &[Vec<f64>],
    targets: &[f64],
    jitter: &JitterPolicy,
) -> Result<Factored> {
    let k = noisy_gram(kernel, log_noise, inputs)?;
    let chol = cholesky(&k, jitter)?;
    let alpha = solve_chol(&chol, targets)?;
    let n = targets.len() as f64;
    let fit: f64 = targets.iter().zip(&alpha).map(|(y, a)| y * a).sum();
    let nlml = 0.5 * fit + 0.5 * logdet(&chol) + 0.5 * n * LN_2PI;
    Ok(Factored { chol, alpha, nlml })
}

/// Negative log marginal likelihood of `targets` (used as given).
pub fn nlml<K: Covariance>(
    kernel: &K,
    log_noise: f64,
    inputs: &[Vec<f64>],
    targets: &[f64],
) -> Result<f64> {
    check_data(kernel, inputs, targets)?;
    Ok(factor(kernel, log_noise, inputs, targets, &JitterPolicy::default())?.nlml)
}

/// Gradient of [`nlml`] with respect to the kernel log-parameters followed
/// by `log σ_n²`, via `½ tr((K⁻¹ − ααᵀ) ∂K/∂θ)`.
pub fn nlml_grad<K: Covariance>(
    kernel: &K,
    log_noise: f64,
    inputs: &[Vec<f64>],
    targets: &[f64],
) -> Result<Vec<f64>> {
    check_data(kernel, inputs, targets)?;
    Ok(nlml_and_grad(kernel, log_noise, inputs, targets, &JitterPolicy::default())?.1)
}

fn nlml_and_grad<K: Covariance>(
    kernel: &K,
    log_noise: f64,
    inputs: &[Vec<f64>],
    targets: &[f64],
    jitter: &JitterPolicy,
) -> Result<(f64, Vec<f64>)> {
    let f = factor(kernel, log_noise, inputs, targets, jitter)?;
    let kinv = f.chol.inverse();
    let n = inputs.len();
    let np = kernel.n_params();
    let alpha = &f.alpha;

    // Σ_ij W_ij ∂K_ij over the lower triangle, W = K⁻¹ − ααᵀ; off-diagonal
    // entries count twice. Chunk partial sums are combined in order so the
    // result does not depend on scheduling.
    let chunks: Vec<Vec<f64>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(ROW_CHUNK)
        .map(|rows| {
            let mut acc = vec![0.0; np];
            let mut g = vec![0.0; np];
            for &i in rows {
                for j in 0..=i {
                    kernel.value_and_grad(&inputs[i], &inputs[j], &mut g);
                    let w = kinv.get(i, j) - alpha[i] * alpha[j];
                    let w = if i == j { w } else { 2.0 * w };
                    for (a, gd) in acc.iter_mut().zip(&g) {
                        *a += w * gd;
                    }
                }
            }
            acc
        })
        .collect();
    let mut grad = vec![0.0; np + 1];
    for c in &chunks {
        for (g, v) in grad.iter_mut().zip(c) {
            *g += 0.5 * v;
        }
    }
    let trace: f64 = (0..n).map(|i| kinv.get(i, i)).sum();
    let aa: f64 = alpha.iter().map(|a| a * a).sum();
    grad[np] = 0.5 * log_noise.exp() * (trace - aa);
    Ok((f.nlml, grad))
}

fn input_span(inputs: &[Vec<f64>]) -> f64 {
    let d = inputs[0].len();
    let mut span = 0.0_f64;
    for c in 0..d {
        let (lo, hi) = inputs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x[c]), hi.max(x[c]))
            });
        span = span.max(hi - lo);
    }
    if span > 0.0 && span.is_finite() {
        span
    } else {
        1.0
    }
}

fn search_bounds<K: Covariance>(kernel: &K, span: f64, opt: &OptConfig) -> Bounds {
    let ls_floor = (1e-2 * span).max(opt.min_lengthscale.unwrap_or(0.0));
    let kinds = kernel.param_kinds();
    let x0 = kernel.log_params();
    let div = kernel.amplitude_divisors();
    let mut lower = Vec::with_capacity(kinds.len() + 1);
    let mut upper = Vec::with_capacity(kinds.len() + 1);
    let mut fixed = Vec::with_capacity(kinds.len() + 1);
    for (i, kind) in kinds.iter().enumerate() {
        let (lo, hi) = match kind {
            ParamKind::Amplitude | ParamKind::Constant => {
                (1e-6f64.ln() / div[i], 1e4f64.ln() / div[i])
            }
            ParamKind::Lengthscale => (ls_floor.ln(), (1e3 * span).max(ls_floor).ln()),
            ParamKind::PeriodicLengthscale => {
                // Near zero lag the periodic kernel behaves like an SE with
                // lengthscale l·p/2π, so the distance floor maps through the
                // period that follows this parameter.
                let floor = match (opt.min_lengthscale, kinds.get(i + 1)) {
                    (Some(m), Some(ParamKind::Period)) => 2.0 * PI * m / x0[i + 1].exp(),
                    _ => 0.0,
                };
                (floor.max(0.05).ln(), 100f64.ln())
            }
            ParamKind::Period => (x0[i] - 100f64.ln(), x0[i] + 100f64.ln()),
        };
        lower.push(lo.min(x0[i]));
        upper.push(hi.max(x0[i]));
        fixed.push(opt.freeze_period && *kind == ParamKind::Period);
    }
    lower.push(1e-6f64.ln());
    upper.push(10f64.ln());
    fixed.push(false);
    Bounds {
        lower,
        upper,
        fixed,
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..=hi.ln())
}

fn random_start<K: Covariance>(kernel: &K, span: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let current = kernel.log_params();
    let div = kernel.amplitude_divisors();
    let mut x: Vec<f64> = kernel
        .param_kinds()
        .iter()
        .enumerate()
        .map(|(i, kind)| match kind {
            ParamKind::Amplitude | ParamKind::Constant => log_uniform(rng, 0.1, 10.0) / div[i],
            ParamKind::Lengthscale => log_uniform(rng, 0.5 * span, 2.0 * span),
            ParamKind::PeriodicLengthscale => log_uniform(rng, 0.5, 2.0),
            ParamKind::Period => current[i],
        })
        .collect();
    x.push(log_uniform(rng, 1e-4, 1.0));
    x
}

/// Fits hyperparameters by multi-start quasi-Newton and conditions on the data.
pub fn fit<K: Covariance>(
    kernel: &K,
    inputs: &[Vec<f64>],
    targets: &[f64],
    opt: &OptConfig,
) -> Result<GpModel<K>> {
    check_data(kernel, inputs, targets)?;
    if inputs.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            found: inputs.len(),
        });
    }
    let (mean, scale, _) = standardize(targets);
    let z: Vec<f64> = targets.iter().map(|y| (y - mean) / scale).collect();
    let span = input_span(inputs);
    let bounds = search_bounds(kernel, span, opt);

    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut starts = Vec::with_capacity(opt.restarts + 1);
    let mut configured = kernel.log_params();
    configured.push((0.1f64).ln());
    starts.push(configured);
    for _ in 0..opt.restarts {
        starts.push(random_start(kernel, span, &mut rng));
    }

    let np = kernel.n_params();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last_err = None;
    for x0 in &starts {
        let objective = |x: &[f64]| {
            let mut k = kernel.clone();
            k.set_log_params(&x[..np]);
            nlml_and_grad(&k, x[np], inputs, &z, &opt.jitter)
        };
        match minimize(objective, x0, &bounds, opt.max_iter, opt.tol) {
            Ok(m) => {
                if best.as_ref().is_none_or(|(v, _)| m.value < *v) {
                    best = Some((m.value, m.x));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((_, x)) = best else {
        return Err(last_err.unwrap_or(Error::NotPositiveDefinite { jitter: 0.0 }));
    };
    let mut k = kernel.clone();
    k.set_log_params(&x[..np]);
    GpModel::condition(
        GpHyperparams {
            kernel: k,
            log_noise: x[np],
        },
        inputs.to_vec(),
        targets.to_vec(),
        &opt.jitter,
    )
}

impl<K: Covariance> GpModel<K> {
    /// Conditions on data at fixed hyperparameters (no optimization).
    pub fn condition(
        hyper: GpHyperparams<K>,
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        jitter: &JitterPolicy,
    ) -> Result<Self> {
        check_data(&hyper.kernel, &inputs, &targets)?;
        let (target_mean, target_scale, degenerate) = standardize(&targets);
        Self::condition_scaled(
            hyper,
            inputs,
            targets,
            target_mean,
            target_scale,
            degenerate,
            jitter,
        )
    }

    /// Like [`GpModel::condition`] but with the target standardization
    /// supplied, so a subset of the data can share the scaling of a full fit.
    pub fn condition_scaled(
        hyper: GpHyperparams<K>,
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        target_mean: f64,
        target_scale: f64,
        degenerate: bool,
        jitter: &JitterPolicy,
    ) -> Result<Self> {
        check_data(&hyper.kernel, &inputs, &targets)?;
        let z: Vec<f64> = targets
            .iter()
            .map(|y| (y - target_mean) / target_scale)
            .collect();
        let f = factor(&hyper.kernel, hyper.log_noise, &inputs, &z, jitter)?;
        Ok(GpModel {
            hyper,
            inputs,
            targets,
            target_mean,
            target_scale,
            chol: f.chol,
            alpha: f.alpha,
            nlml: f.nlml,
            degenerate,
        })
    }

    pub fn hyper(&self) -> &GpHyperparams<K> {
        &self.hyper
    }

    pub fn kernel(&self) -> &K {
        &self.hyper.kernel
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    pub fn target_scale(&self) -> f64 {
        self.target_scale
    }

    pub fn chol(&self) -> &CholFactor {
        &self.chol
    }

    /// `(K + σ_n² I)⁻¹ y` for the standardized targets.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// NLML on standardized targets at the fitted hyperparameters.
    pub fn nlml(&self) -> f64 {
        self.nlml
    }

    /// All targets were identical; the noise level is not identifiable.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Observation noise variance in original units.
    pub fn noise_variance(&self) -> f64 {
        self.hyper.log_noise.exp() * self.target_scale * self.target_scale
    }

    /// Standardized latent mean and variance at one test input.
    fn latent_standardized(&self, x: &[f64]) -> (f64, f64) {
        let kern = &self.hyper.kernel;
        let mut kstar: Vec<f64> = self.inputs.iter().map(|xi| kern.value(x, xi)).collect();
        let mean = crate::linalg::dot(&kstar, &self.alpha);
        self.chol.forward_solve_in_place(&mut kstar);
        let reduction = crate::linalg::dot(&kstar, &kstar);
        let var = (kern.value(x, x) - reduction).max(0.0);
        (mean, var)
    }

    fn predict_inner(&self, test_inputs: &[Vec<f64>], with_noise: bool) -> Result<PredictiveDist> {
        let d = self.inputs[0].len();
        for x in test_inputs {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: x.len(),
                });
            }
            self.hyper.kernel.check_input(x)?;
        }
        let noise = if with_noise {
            self.hyper.log_noise.exp()
        } else {
            0.0
        };
        let s = self.target_scale;
        let (mean, variance): (Vec<f64>, Vec<f64>) = test_inputs
            .par_iter()
            .map(|x| {
                let (m, v) = self.latent_standardized(x);
                (self.target_mean + s * m, s * s * (v + noise))
            })
            .unzip();
        Ok(PredictiveDist::from_moments(mean, variance))
    }

    /// Predictive distribution of new observations (latent variance plus σ_n²).
    pub fn predict(&self, test_inputs: &[Vec<f64>]) -> Result<PredictiveDist> {
        self.predict_inner(test_inputs, true)
    }

    /// Predictive distribution of the noise-free latent function.
    pub fn predict_latent(&self, test_inputs: &[Vec<f64>]) -> Result<PredictiveDist> {
        self.predict_inner(test_inputs, false)
    }

    /// Prior variance `k(x, x) + σ_n²` at `x`, in original units.
    pub fn prior_variance(&self, x: &[f64]) -> f64 {
        let s = self.target_scale;
        s * s * (self.hyper.kernel.value(x, x) + self.hyper.log_noise.exp())
    }
}

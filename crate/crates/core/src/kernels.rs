//! Covariance functions for both stages of the stack.
//!
//! [`KernelSpec`] is an expression tree over stationary primitives. All
//! hyperparameters live in log space; the flattened parameter vector is a
//! pre-order traversal of the tree. [`FeatureGroupKernel`] is the stage-2
//! product kernel: one 1-D factor per feature column, with the factors of a
//! group sharing hyperparameters.

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymMatrix};

/// What a hyperparameter controls; drives initialization and bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Amplitude,
    /// Distance-scale lengthscale, in input units.
    Lengthscale,
    /// Periodic-kernel lengthscale, relative to the sine of the phase gap.
    PeriodicLengthscale,
    Period,
    Constant,
}

/// A covariance function with log-space hyperparameters and analytic gradients.
pub trait Covariance: Clone + Send + Sync {
    fn n_params(&self) -> usize;
    fn log_params(&self) -> Vec<f64>;
    fn set_log_params(&mut self, params: &[f64]);
    fn param_kinds(&self) -> Vec<ParamKind>;

    /// Required input dimension, if the kernel constrains it.
    fn input_dim(&self) -> Option<usize>;

    /// Unchecked evaluation; callers validate dimensions once up front.
    fn value(&self, a: &[f64], b: &[f64]) -> f64;

    /// Evaluation plus `∂k/∂θ` for every log-parameter, written to `grad`.
    fn value_and_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64;

    /// How many times each parameter's amplitude enters the zero-lag
    /// variance, spread across all amplitude-like parameters. Random starts
    /// and bounds divide log-amplitudes by this so the total prior variance
    /// stays in a sane range.
    fn amplitude_divisors(&self) -> Vec<f64> {
        vec![1.0; self.n_params()]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        match self.input_dim() {
            Some(d) if d != x.len() => Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// Declarative kernel expression. Amplitudes are variances (σ²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    SquaredExponential {
        log_amplitude: f64,
        log_lengthscale: f64,
    },
    Periodic {
        log_amplitude: f64,
        log_lengthscale: f64,
        log_period: f64,
    },
    /// Periodic term plus a unit-amplitude squared-exponential term that
    /// shares the periodic lengthscale.
    Seasonal {
        log_amplitude: f64,
        log_lengthscale: f64,
        log_period: f64,
    },
    Constant {
        log_value: f64,
    },
    Sum(Vec<KernelSpec>),
    Product(Vec<KernelSpec>),
}

fn check_positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v.ln())
    } else {
        Err(Error::Config(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl KernelSpec {
    pub fn squared_exponential(amplitude: f64, lengthscale: f64) -> Result<Self> {
        Ok(KernelSpec::SquaredExponential {
            log_amplitude: check_positive("amplitude", amplitude)?,
            log_lengthscale: check_positive("lengthscale", lengthscale)?,
        })
    }

    pub fn periodic(amplitude: f64, lengthscale: f64, period: f64) -> Result<Self> {
        Ok(KernelSpec::Periodic {
            log_amplitude: check_positive("amplitude", amplitude)?,
            log_lengthscale: check_positive("lengthscale", lengthscale)?,
            log_period: check_positive("period", period)?,
        })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Ok(KernelSpec::Constant {
            log_value: check_positive("constant", value)?,
        })
    }

    /// `σ² exp(−2 sin²(π|t−t'|/p)/l²) + exp(−(t−t')²/(2l²))` with one tied
    /// lengthscale and a fixed unit SE amplitude.
    pub fn seasonal_tied(amplitude: f64, lengthscale: f64, period: f64) -> Result<Self> {
        Ok(KernelSpec::Seasonal {
            log_amplitude: check_positive("amplitude", amplitude)?,
            log_lengthscale: check_positive("lengthscale", lengthscale)?,
            log_period: check_positive("period", period)?,
        })
    }

    /// Periodic plus squared-exponential with four independent hyperparameters.
    pub fn seasonal(
        periodic_amplitude: f64,
        periodic_lengthscale: f64,
        period: f64,
        se_amplitude: f64,
        se_lengthscale: f64,
    ) -> Result<Self> {
        Ok(KernelSpec::Sum(vec![
            KernelSpec::periodic(periodic_amplitude, periodic_lengthscale, period)?,
            KernelSpec::squared_exponential(se_amplitude, se_lengthscale)?,
        ]))
    }

    /// Checked evaluation `k(a, b)`.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        self.check_input(a)?;
        Ok(self.value(a, b))
    }

    fn visit_params(&self, out: &mut Vec<(f64, ParamKind)>) {
        match self {
            KernelSpec::SquaredExponential {
                log_amplitude,
                log_lengthscale,
            } => {
                out.push((*log_amplitude, ParamKind::Amplitude));
                out.push((*log_lengthscale, ParamKind::Lengthscale));
            }
            KernelSpec::Periodic {
                log_amplitude,
                log_lengthscale,
                log_period,
            } => {
                out.push((*log_amplitude, ParamKind::Amplitude));
                out.push((*log_lengthscale, ParamKind::PeriodicLengthscale));
                out.push((*log_period, ParamKind::Period));
            }
            KernelSpec::Seasonal {
                log_amplitude,
                log_lengthscale,
                log_period,
            } => {
                out.push((*log_amplitude, ParamKind::Amplitude));
                out.push((*log_lengthscale, ParamKind::Lengthscale));
                out.push((*log_period, ParamKind::Period));
            }
            KernelSpec::Constant { log_value } => out.push((*log_value, ParamKind::Constant)),
            KernelSpec::Sum(children) | KernelSpec::Product(children) => {
                children.iter().for_each(|c| c.visit_params(out))
            }
        }
    }

    fn assign_params(&mut self, params: &[f64]) -> usize {
        match self {
            KernelSpec::SquaredExponential {
                log_amplitude,
                log_lengthscale,
            } => {
                *log_amplitude = params[0];
                *log_lengthscale = params[1];
                2
            }
            KernelSpec::Periodic {
                log_amplitude,
                log_lengthscale,
                log_period,
            }
            | KernelSpec::Seasonal {
                log_amplitude,
                log_lengthscale,
                log_period,
            } => {
                *log_amplitude = params[0];
                *log_lengthscale = params[1];
                *log_period = params[2];
                3
            }
            KernelSpec::Constant { log_value } => {
                *log_value = params[0];
                1
            }
            KernelSpec::Sum(children) | KernelSpec::Product(children) => {
                let mut used = 0;
                for c in children {
                    used += c.assign_params(&params[used..]);
                }
                used
            }
        }
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// Σ_d sin²(π|a_d − b_d|/p) and Σ_d sin(2π r_d/p)·π r_d/p (the latter feeds ∂/∂log p).
#[inline]
fn periodic_terms(a: &[f64], b: &[f64], period: f64) -> (f64, f64) {
    let mut s = 0.0;
    let mut ds = 0.0;
    for (x, y) in a.iter().zip(b) {
        let r = (x - y).abs();
        let arg = PI * r / period;
        let sn = arg.sin();
        s += sn * sn;
        ds += (2.0 * arg).sin() * arg;
    }
    (s, ds)
}

impl Covariance for KernelSpec {
    fn n_params(&self) -> usize {
        match self {
            KernelSpec::SquaredExponential { .. } => 2,
            KernelSpec::Periodic { .. } | KernelSpec::Seasonal { .. } => 3,
            KernelSpec::Constant { .. } => 1,
            KernelSpec::Sum(c) | KernelSpec::Product(c) => c.iter().map(|k| k.n_params()).sum(),
        }
    }

    fn log_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut out);
        out.into_iter().map(|(v, _)| v).collect()
    }

    fn set_log_params(&mut self, params: &[f64]) {
        assert_eq!(
            params.len(),
            self.n_params(),
            "hyperparameter vector length"
        );
        self.assign_params(params);
    }

    fn param_kinds(&self) -> Vec<ParamKind> {
        let mut out = Vec::new();
        self.visit_params(&mut out);
        out.into_iter().map(|(_, k)| k).collect()
    }

    fn input_dim(&self) -> Option<usize> {
        None
    }

    fn value(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelSpec::SquaredExponential {
                log_amplitude,
                log_lengthscale,
            } => {
                let l2 = (2.0 * log_lengthscale).exp();
                log_amplitude.exp() * (-0.5 * sq_dist(a, b) / l2).exp()
            }
            KernelSpec::Periodic {
                log_amplitude,
                log_lengthscale,
                log_period,
            } => {
                let l2 = (2.0 * log_lengthscale).exp();
                let (s, _) = periodic_terms(a, b, log_period.exp());
                log_amplitude.exp() * (-2.0 * s / l2).exp()
            }
            KernelSpec::Seasonal {
                log_amplitude,
                log_lengthscale,
                log_period,
            } => {
                let l2 = (2.0 * log_lengthscale).exp();
                let (s, _) = periodic_terms(a, b, log_period.exp());
                log_amplitude.exp() * (-2.0 * s / l2).exp() + (-0.5 * sq_dist(a, b) / l2).exp()
            }
            KernelSpec::Constant { log_value } => log_value.exp(),
            KernelSpec::Sum(children) => children.iter().map(|c| c.value(a, b)).sum(),
            KernelSpec::Product(children) => children.iter().map(|c| c.value(a, b)).product(),
        }
    }

    fn value_and_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            KernelSpec::SquaredExponential {
                log_amplitude,
                log_lengthscale,
            } => {
                let l2 = (2.0 * log_lengthscale).exp();
                let r2 = sq_dist(a, b);
                let k = log_amplitude.exp() * (-0.5 * r2 / l2).exp();
                grad[0] = k;
                grad[1] = k * r2 / l2;
                k
            }
            KernelSpec::Periodic {
                log_amplitude,
                log_lengthscale,
                log_period,
            } => {
                let l2 = (2.0 * log_lengthscale).exp();
                let (s, ds) = periodic_terms(a, b, log_period.exp());
                let k = log_amplitude.exp() * (-2.0 * s / l2).exp();
                grad[0] = k;
                grad[1] = k * 4.0 * s / l2;
                grad[2] = k * 2.0 * ds / l2;
                k
            }
            KernelSpec::Seasonal {
                log_amplitude,
                log_lengthscale,
                log_period,
            } => {
                let l2 = (2.0 * log_lengthscale).exp();
                let (s, ds) = periodic_terms(a, b, log_period.exp());
                let r2 = sq_dist(a, b);
                let kp = log_amplitude.exp() * (-2.0 * s / l2).exp();
                let ks = (-0.5 * r2 / l2).exp();
                grad[0] = kp;
                grad[1] = kp * 4.0 * s / l2 + ks * r2 / l2;
                grad[2] = kp * 2.0 * ds / l2;
                kp + ks
            }
            KernelSpec::Constant { log_value } => {
                let c = log_value.exp();
                grad[0] = c;
                c
            }
            KernelSpec::Sum(children) => {
                let mut total = 0.0;
                let mut off = 0;
                for c in children {
                    let n = c.n_params();
                    total += c.value_and_grad(a, b, &mut grad[off..off + n]);
                    off += n;
                }
                total
            }
            KernelSpec::Product(children) => {
                let mut values = Vec::with_capacity(children.len());
                let mut off = 0;
                for c in children {
                    let n = c.n_params();
                    values.push(c.value_and_grad(a, b, &mut grad[off..off + n]));
                    off += n;
                }
                let excl = exclusive_products(&values);
                let mut off = 0;
                for (c, e) in children.iter().zip(&excl) {
                    let n = c.n_params();
                    grad[off..off + n].iter_mut().for_each(|g| *g *= e);
                    off += n;
                }
                values.iter().product()
            }
        }
    }
}

/// `out[i] = Π_{j≠i} v[j]` without division.
fn exclusive_products(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![1.0; n];
    let mut acc = 1.0;
    for i in 0..n {
        out[i] = acc;
        acc *= v[i];
    }
    acc = 1.0;
    for i in (0..n).rev() {
        out[i] *= acc;
        acc *= v[i];
    }
    out
}

/// One named block of stacked feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub start: usize,
    pub width: usize,
    /// Applied to every column of the group with shared hyperparameters.
    pub kernel: KernelSpec,
}

impl FeatureGroup {
    pub fn columns(&self) -> Range<usize> {
        self.start..self.start + self.width
    }
}

/// Product over all columns of all groups of per-column 1-D kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGroupKernel {
    groups: Vec<FeatureGroup>,
    width: usize,
}

impl FeatureGroupKernel {
    /// Groups must be non-empty, contiguous, disjoint and start at column 0.
    pub fn new(groups: Vec<FeatureGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::LayoutMismatch(
                "at least one feature group required".into(),
            ));
        }
        let mut next = 0;
        for g in &groups {
            if g.start != next {
                return Err(Error::LayoutMismatch(format!(
                    "group {} starts at column {} but column {} is next",
                    g.name, g.start, next
                )));
            }
            if g.width == 0 {
                return Err(Error::LayoutMismatch(format!("group {} is empty", g.name)));
            }
            next += g.width;
        }
        Ok(FeatureGroupKernel {
            groups,
            width: next,
        })
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn group(&self, name: &str) -> Option<&FeatureGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn eval_stacked(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        for v in [a, b] {
            if v.len() != self.width {
                return Err(Error::LayoutMismatch(format!(
                    "feature vector has {} columns, layout expects {}",
                    v.len(),
                    self.width
                )));
            }
        }
        Ok(self.value(a, b))
    }
}

impl Covariance for FeatureGroupKernel {
    fn n_params(&self) -> usize {
        self.groups.iter().map(|g| g.kernel.n_params()).sum()
    }

    fn log_params(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| g.kernel.log_params())
            .collect()
    }

    fn set_log_params(&mut self, params: &[f64]) {
        assert_eq!(
            params.len(),
            self.n_params(),
            "hyperparameter vector length"
        );
        let mut off = 0;
        for g in &mut self.groups {
            let n = g.kernel.n_params();
            g.kernel.set_log_params(&params[off..off + n]);
            off += n;
        }
    }

    fn param_kinds(&self) -> Vec<ParamKind> {
        self.groups
            .iter()
            .flat_map(|g| g.kernel.param_kinds())
            .collect()
    }

    fn input_dim(&self) -> Option<usize> {
        Some(self.width)
    }

    fn amplitude_divisors(&self) -> Vec<f64> {
        let n_groups = self.groups.len() as f64;
        self.groups
            .iter()
            .flat_map(|g| {
                let d = g.width as f64 * n_groups;
                g.kernel.param_kinds().into_iter().map(move |k| match k {
                    ParamKind::Amplitude | ParamKind::Constant => d,
                    _ => 1.0,
                })
            })
            .collect()
    }

    fn value(&self, a: &[f64], b: &[f64]) -> f64 {
        self.groups.iter().map(|g| group_value(g, a, b)).product()
    }

    fn value_and_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
        let mut off = 0;
        let mut factors = Vec::with_capacity(self.groups.len());
        // Each group writes its own-parameter gradient of its factor; the
        // other groups' factors are multiplied in afterwards.
        for g in &self.groups {
            let np = g.kernel.n_params();
            factors.push(group_value_and_grad(g, a, b, &mut grad[off..off + np]));
            off += np;
        }
        let excl = exclusive_products(&factors);
        let mut off = 0;
        for (g, e) in self.groups.iter().zip(&excl) {
            let np = g.kernel.n_params();
            grad[off..off + np].iter_mut().for_each(|v| *v *= e);
            off += np;
        }
        factors.iter().product()
    }
}

/// Product of the group kernel over the group's columns. A squared
/// exponential factorizes over columns, so it takes one exponential.
fn group_value(g: &FeatureGroup, a: &[f64], b: &[f64]) -> f64 {
    let cols = g.columns();
    match g.kernel {
        KernelSpec::SquaredExponential {
            log_amplitude,
            log_lengthscale,
        } => {
            let r2 = sq_dist(&a[cols.clone()], &b[cols]);
            (g.width as f64 * log_amplitude - 0.5 * r2 * (-2.0 * log_lengthscale).exp()).exp()
        }
        _ => cols
            .map(|c| g.kernel.value(&a[c..c + 1], &b[c..c + 1]))
            .product(),
    }
}

fn group_value_and_grad(g: &FeatureGroup, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
    let cols = g.columns();
    match g.kernel {
        KernelSpec::SquaredExponential {
            log_amplitude,
            log_lengthscale,
        } => {
            let inv_l2 = (-2.0 * log_lengthscale).exp();
            let r2 = sq_dist(&a[cols.clone()], &b[cols]);
            let k = (g.width as f64 * log_amplitude - 0.5 * r2 * inv_l2).exp();
            grad[0] = g.width as f64 * k;
            grad[1] = k * r2 * inv_l2;
            k
        }
        _ => {
            let np = g.kernel.n_params();
            let mut factors = Vec::with_capacity(g.width);
            let mut col_grads = vec![0.0; g.width * np];
            for (i, c) in cols.enumerate() {
                factors.push(g.kernel.value_and_grad(
                    &a[c..c + 1],
                    &b[c..c + 1],
                    &mut col_grads[i * np..(i + 1) * np],
                ));
            }
            let excl = exclusive_products(&factors);
            grad.iter_mut().for_each(|v| *v = 0.0);
            for (i, e) in excl.iter().enumerate() {
                for p in 0..np {
                    grad[p] += col_grads[i * np + p] * e;
                }
            }
            factors.iter().product()
        }
    }
}

fn check_points<K: Covariance>(k: &K, xs: &[Vec<f64>]) -> Result<Option<usize>> {
    let dim = xs.first().map(Vec::len);
    for x in xs {
        if Some(x.len()) != dim {
            return Err(Error::DimensionMismatch {
                expected: dim.unwrap_or(0),
                found: x.len(),
            });
        }
        k.check_input(x)?;
    }
    Ok(dim)
}

/// Cross-covariance matrix `G(i, j) = k(xs[i], ys[j])`.
pub fn gram<K: Covariance>(k: &K, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Matrix> {
    let dx = check_points(k, xs)?;
    let dy = check_points(k, ys)?;
    if let (Some(a), Some(b)) = (dx, dy) {
        if a != b {
            return Err(Error::DimensionMismatch {
                expected: a,
                found: b,
            });
        }
    }
    Ok(Matrix::from_fn(xs.len(), ys.len(), |i, j| {
        k.value(&xs[i], &ys[j])
    }))
}

/// Symmetric Gram matrix `K(X, X)`.
pub fn gram_sym<K: Covariance>(k: &K, xs: &[Vec<f64>]) -> Result<SymMatrix> {
    check_points(k, xs)?;
    SymMatrix::from_lower_fn(xs.len(), |i, j| k.value(&xs[i], &xs[j]))
}

/// `K(X, X)` together with `∂K/∂θ_d` for every log-hyperparameter.
pub fn gram_with_grad<K: Covariance>(
    k: &K,
    xs: &[Vec<f64>],
) -> Result<(SymMatrix, Vec<SymMatrix>)> {
    check_points(k, xs)?;
    let n = xs.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let np = k.n_params();
    let mut grads: Vec<Matrix> = (0..np).map(|_| Matrix::zeros(n, n)).collect();
    let mut g = vec![0.0; np];
    let kx = SymMatrix::from_lower_fn(n, |i, j| {
        let v = k.value_and_grad(&xs[i], &xs[j], &mut g);
        for (m, gd) in grads.iter_mut().zip(&g) {
            m.set(i, j, *gd);
            m.set(j, i, *gd);
        }
        v
    })?;
    let grads = grads
        .into_iter()
        .map(SymMatrix::new)
        .collect::<Result<Vec<_>>>()?;
    Ok((kx, grads))
}

/// `∂K/∂θ_d` for every log-hyperparameter, in flattened-vector order.
pub fn grad_hyper<K: Covariance>(k: &K, xs: &[Vec<f64>]) -> Result<Vec<SymMatrix>> {
    gram_with_grad(k, xs).map(|(_, g)| g)
}

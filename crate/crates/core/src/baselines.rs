//! Comparison forecasters: per-household GPs without stacking, and
//! autoregressive models.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Month, TaskSeries};
use crate::error::{Error, Result};
use crate::stacking::ForecastRow;
use crate::task::{fit_all_tasks, TaskFit, TaskStageConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub order: usize,
    /// `coefficients[z − 1]` multiplies `y_{t−z}`.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Residual variance of the one-step fit.
    pub sigma2: f64,
}

/// Least-squares AR(`order`) fit with intercept. Rank-deficient designs
/// take the minimum-norm coefficient vector.
pub fn fit_ar(series: &[f64], order: usize) -> Result<ArModel> {
    if order == 0 {
        return Err(Error::Config("AR order must be at least 1".into()));
    }
    if series.len() <= order + 1 {
        return Err(Error::TooFewPoints {
            needed: order + 2,
            found: series.len(),
        });
    }
    let m = series.len() - order;
    let x = DMatrix::from_fn(m, order, |r, z| series[order + r - z - 1]);
    let y = DVector::from_fn(m, |r, _| series[order + r]);
    // Centering separates the intercept so the minimum-norm rule applies to
    // the lag coefficients only.
    let x_mean: Vec<f64> = (0..order).map(|z| x.column(z).mean()).collect();
    let y_mean = y.mean();
    let xc = DMatrix::from_fn(m, order, |r, z| x[(r, z)] - x_mean[z]);
    let yc = y.add_scalar(-y_mean);
    let svd = xc.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE) * m.max(order) as f64;
    let phi = svd
        .solve(&yc, tol)
        .map_err(|e| Error::Config(format!("AR least squares: {e}")))?;
    let intercept = y_mean - phi.iter().zip(&x_mean).map(|(p, xm)| p * xm).sum::<f64>();
    let resid = yc - xc * &phi;
    let dof = m.saturating_sub(order + 1).max(1) as f64;
    let scale = series.iter().map(|v| v * v).sum::<f64>() / series.len() as f64;
    let sigma2 = (resid.norm_squared() / dof)
        .max(1e-9 * scale)
        .max(f64::MIN_POSITIVE);
    Ok(ArModel {
        order,
        coefficients: phi.iter().copied().collect(),
        intercept,
        sigma2,
    })
}

impl ArModel {
    /// Largest root modulus of the recursion's companion matrix; above one
    /// the iterated forecasts diverge.
    pub fn spectral_radius(&self) -> f64 {
        let p = self.order;
        let c = DMatrix::from_fn(p, p, |i, j| {
            if i == 0 {
                self.coefficients[j]
            } else if i == j + 1 {
                1.0
            } else {
                0.0
            }
        });
        c.complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// Iterated multi-step forecast, feeding predictions back as lags.
pub fn forecast_ar(model: &ArModel, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if history.len() < model.order {
        return Err(Error::TooFewPoints {
            needed: model.order,
            found: history.len(),
        });
    }
    let mut buf: Vec<f64> = history[history.len() - model.order..].to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let n = buf.len();
        let next = model.intercept
            + model
                .coefficients
                .iter()
                .enumerate()
                .map(|(z, c)| c * buf[n - 1 - z])
                .sum::<f64>();
        buf.push(next);
        out.push(next);
    }
    Ok(out)
}

/// MA(∞) weights ψ_0 … ψ_{h−1} of the fitted recursion.
pub fn psi_weights(model: &ArModel, horizon: usize) -> Vec<f64> {
    let mut psi = Vec::with_capacity(horizon);
    for j in 0..horizon {
        if j == 0 {
            psi.push(1.0);
            continue;
        }
        let v = (1..=j.min(model.order))
            .map(|k| model.coefficients[k - 1] * psi[j - k])
            .sum();
        psi.push(v);
    }
    psi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArConfig {
    pub order: usize,
    /// Fit on first differences and integrate forecasts back.
    pub difference: bool,
}

impl Default for ArConfig {
    fn default() -> Self {
        ArConfig {
            order: 12,
            difference: false,
        }
    }
}

/// Mean and variance `steps` months ahead of one training series.
fn ar_task_forecast(loads: &[f64], steps: usize, cfg: &ArConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let series: Vec<f64> = if cfg.difference {
        loads.windows(2).map(|w| w[1] - w[0]).collect()
    } else {
        loads.to_vec()
    };
    // Too short for any AR fit: fall back to the sample mean.
    if series.len() < 3 || cfg.order == 0 {
        let n = loads.len().max(1) as f64;
        let mean = loads.iter().sum::<f64>() / n;
        let var = loads.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let var = var.max(1e-9 * mean * mean).max(f64::MIN_POSITIVE);
        return Ok((vec![mean; steps], vec![var; steps]));
    }
    // Highest feasible order whose fit is not explosive.
    let top = cfg.order.min(((series.len() - 1) / 2).max(1));
    let mut model = None;
    for order in (1..=top).rev() {
        let m = fit_ar(&series, order)?;
        if m.spectral_radius() <= 1.0 + 1e-9 {
            model = Some(m);
            break;
        }
    }
    let Some(model) = model else {
        return ar_task_forecast(
            loads,
            steps,
            &ArConfig {
                order: 0,
                ..cfg.clone()
            },
        );
    };
    let mut mean = forecast_ar(&model, &series, steps)?;
    let mut psi = psi_weights(&model, steps);
    if cfg.difference {
        let mut level = *loads.last().expect("non-empty");
        for m in mean.iter_mut() {
            level += *m;
            *m = level;
        }
        let mut acc = 0.0;
        for p in psi.iter_mut() {
            acc += *p;
            *p = acc;
        }
    }
    let mut cum = 0.0;
    let var = psi
        .iter()
        .map(|p| {
            cum += p * p;
            model.sigma2 * cum
        })
        .collect();
    Ok((mean, var))
}

/// AR forecasts for every task at `forecast_months` (months after each
/// task's last training month).
pub fn run_ar_baseline(
    train: &[TaskSeries],
    forecast_months: &[Month],
    cfg: &ArConfig,
) -> Result<Vec<ForecastRow>> {
    let per_task = train
        .par_iter()
        .map(|t| {
            let wrap = |e: Error| e.in_task(&t.task_id);
            let last = *t.times.last().ok_or(Error::EmptyInput).map_err(wrap)?;
            let steps = forecast_months
                .iter()
                .map(|m| (*m - last).max(0) as usize)
                .max()
                .unwrap_or(0);
            let (mean, var) = ar_task_forecast(&t.loads, steps, cfg).map_err(wrap)?;
            forecast_months
                .iter()
                .map(|m| {
                    let k = *m - last;
                    if k < 1 {
                        return Err(wrap(Error::Config(format!(
                            "forecast month {m} is not after training month {last}"
                        ))));
                    }
                    let k = k as usize - 1;
                    Ok(ForecastRow::new(&t.task_id, *m, mean[k], var[k]))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<ForecastRow> = per_task.into_iter().flatten().collect();
    rows.sort_by(|a, b| (&a.task_id, a.month).cmp(&(&b.task_id, b.month)));
    Ok(rows)
}

/// Stage-1 posteriors used directly as forecasts.
pub fn task_gp_forecasts(fits: &[TaskFit], forecast_months: &[Month]) -> Result<Vec<ForecastRow>> {
    let mut rows = Vec::with_capacity(fits.len() * forecast_months.len());
    for f in fits {
        for &m in forecast_months {
            let (mean, var) = f.summary.at(m).ok_or_else(|| {
                Error::Config(format!(
                    "stage-1 summary for {} lacks {m}",
                    f.summary.task_id
                ))
            })?;
            rows.push(ForecastRow::new(&f.summary.task_id, m, mean, var));
        }
    }
    rows.sort_by(|a, b| (&a.task_id, a.month).cmp(&(&b.task_id, b.month)));
    Ok(rows)
}

/// Fits per-task GPs and forecasts with them.
pub fn run_task_gp_baseline(
    train: &[TaskSeries],
    forecast_months: &[Month],
    cfg: &TaskStageConfig,
) -> Result<Vec<ForecastRow>> {
    let fits = fit_all_tasks(train, forecast_months, cfg)?;
    task_gp_forecasts(&fits, forecast_months)
}

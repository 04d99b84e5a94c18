//! Box-constrained BFGS used for hyperparameter search.
//!
//! Projected quasi-Newton with an Armijo backtracking line search. Bounds
//! are handled by clamping trial points and by zeroing the direction on
//! coordinates pinned at an active bound. Coordinates marked fixed are
//! never moved.

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub fixed: Vec<bool>,
}

impl Bounds {
    fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Gradient with fixed coordinates and outward-pushing bound coordinates zeroed.
    fn projected(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        g.iter()
            .enumerate()
            .map(|(i, &gi)| {
                if self.fixed[i]
                    || (x[i] <= self.lower[i] && gi > 0.0)
                    || (x[i] >= self.upper[i] && gi < 0.0)
                {
                    0.0
                } else {
                    gi
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Minimizes `f` (returning value and gradient) from `x0`.
///
/// Evaluation errors inside the line search are treated as `+∞` so the step
/// shrinks away from numerically infeasible regions; an error at `x0`
/// propagates.
pub fn minimize<F>(
    mut f: F,
    x0: &[f64],
    bounds: &Bounds,
    max_iter: usize,
    tol: f64,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    let (mut fx, mut g) = f(&x)?;
    let mut pg = bounds.projected(&x, &g);
    let mut h = identity(n);
    let mut first = true;
    let mut iterations = 0;
    let mut converged = max_abs(&pg) < tol;

    while !converged && iterations < max_iter {
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -row_dot(&h, n, i, &pg)).collect();
        for i in 0..n {
            if pg[i] == 0.0 && g[i] != 0.0 || bounds.fixed[i] {
                d[i] = 0.0;
            }
        }
        let mut slope: f64 = d.iter().zip(&pg).map(|(a, b)| a * b).sum();
        if slope.is_nan() || slope >= 0.0 {
            h = identity(n);
            d = pg.iter().map(|v| -v).collect();
            slope = -pg.iter().map(|v| v * v).sum::<f64>();
        }
        let mut step = if first {
            (1.0 / max_abs(&d)).min(1.0)
        } else {
            1.0
        };
        first = false;

        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            bounds.clamp(&mut trial);
            if let Ok((ft, gt)) = f(&trial) {
                if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // No descent possible along the projected direction.
            converged = max_abs(&pg) < tol.sqrt();
            break;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let pgn = bounds.projected(&xn, &gn);
        let y: Vec<f64> = pgn.iter().zip(&pg).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            bfgs_update(&mut h, n, &s, &y, sy);
        }
        let rel_change = (fx - fn_).abs() / fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        pg = pgn;
        if max_abs(&pg) < tol {
            converged = true;
        } else if rel_change < 1e-14 && max_abs(&s) < 1e-12 {
            break;
        }
    }

    Ok(Minimum {
        x,
        value: fx,
        grad: g,
        iterations,
        converged,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn row_dot(h: &[f64], n: usize, i: usize, v: &[f64]) -> f64 {
    h[i * n..(i + 1) * n]
        .iter()
        .zip(v)
        .map(|(a, b)| a * b)
        .sum()
}

// H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
fn bfgs_update(h: &mut [f64], n: usize, s: &[f64], y: &[f64], sy: f64) {
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| row_dot(h, n, i, y)).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] +=
                -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

//! Dense symmetric positive-definite linear algebra.
//!
//! Everything the GP layer needs goes through a Cholesky factor: solves,
//! log-determinants and (for gradient traces) the inverse. Matrices are
//! stored row-major in a flat `Vec<f64>`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: x.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Square symmetric matrix. Symmetry is exact: constructors mirror the
/// lower triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Builds from `f(i, j)` evaluated on the lower triangle only.
    pub fn from_lower_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        Ok(SymMatrix(m))
    }

    /// Wraps a matrix after checking it is square and exactly symmetric.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows == 0 {
            return Err(Error::EmptyInput);
        }
        if m.rows != m.cols {
            return Err(Error::DimensionMismatch {
                expected: m.rows,
                found: m.cols,
            });
        }
        for i in 0..m.rows {
            for j in 0..i {
                if m.get(i, j) != m.get(j, i) {
                    return Err(Error::LayoutMismatch(format!(
                        "matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SymMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        SymMatrix::new(Matrix::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.0.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn add_diagonal(&mut self, v: f64) {
        let n = self.n();
        for i in 0..n {
            let d = self.0.get(i, i);
            self.0.set(i, i, d + v);
        }
    }

    pub fn mean_diagonal(&self) -> f64 {
        let n = self.n();
        (0..n).map(|i| self.get(i, i)).sum::<f64>() / n as f64
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Jitter escalation ladder tried when a plain factorization fails.
///
/// The first attempt uses no jitter. After that jitter starts at
/// `initial_relative * mean(diag)` and grows by `growth` for up to
/// `max_steps` further attempts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterPolicy {
    pub initial_relative: f64,
    pub growth: f64,
    pub max_steps: usize,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            initial_relative: 1e-10,
            growth: 10.0,
            max_steps: 6,
        }
    }
}

impl JitterPolicy {
    pub fn none() -> Self {
        JitterPolicy {
            initial_relative: 0.0,
            growth: 1.0,
            max_steps: 0,
        }
    }

    fn ladder(&self, mean_diag: f64) -> impl Iterator<Item = f64> + '_ {
        let base = self.initial_relative * mean_diag.abs().max(f64::MIN_POSITIVE);
        std::iter::once(0.0).chain(
            (0..=self.max_steps)
                .filter(move |_| self.initial_relative > 0.0)
                .map(move |k| base * self.growth.powi(k as i32)),
        )
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = K + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    n: usize,
    // Packed row-major lower triangle: row i occupies i+1 entries.
    lower: Vec<f64>,
    jitter: f64,
}

impl CholFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Jitter that was added to the diagonal before factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.lower[start..start + i + 1]
    }

    /// Entry `L(i, j)`; zero above the diagonal.
    pub fn l(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.row(i)[j]
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, j| self.l(i, j))
    }

    /// Solves `L y = b` in place.
    pub fn forward_solve_in_place(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let row = self.row(i);
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_solve_in_place(&self, y: &mut [f64]) {
        for i in (0..self.n).rev() {
            let row = self.row(i);
            y[i] /= row[i];
            let xi = y[i];
            for (yk, lik) in y[..i].iter_mut().zip(&row[..i]) {
                *yk -= lik * xi;
            }
        }
    }

    /// `(L Lᵀ)⁻¹` as a dense symmetric matrix. Only used for gradient traces.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.n;
        // Rows of L⁻¹ (lower triangular), built column by column.
        let mut linv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            for i in j..n {
                let row = self.row(i);
                let s = e[i] - dot(&row[j..i], &e[j..i]);
                e[i] = s / row[i];
                linv[i * n + j] = e[i];
            }
        }
        // K⁻¹ = L⁻ᵀ L⁻¹ accumulated as rank-one updates over rows of L⁻¹.
        let mut out = Matrix::zeros(n, n);
        for k in 0..n {
            let r = &linv[k * n..k * n + k + 1];
            for i in 0..=k {
                let ri = r[i];
                if ri == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * n..i * n + i + 1];
                for (d, rj) in dst.iter_mut().zip(&r[..=i]) {
                    *d += ri * rj;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                let v = out.get(i, j);
                out.set(j, i, v);
            }
        }
        SymMatrix(out)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators so the compiler can vectorize the reduction.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn try_factor(m: &SymMatrix, jitter: f64) -> Option<CholFactor> {
    let n = m.n();
    let mut lower = vec![0.0; n * (n + 1) / 2];
    for i in 0..n {
        let start_i = i * (i + 1) / 2;
        for j in 0..=i {
            let start_j = j * (j + 1) / 2;
            let s = dot(&lower[start_i..start_i + j], &lower[start_j..start_j + j]);
            if i == j {
                let d = m.get(i, i) + jitter - s;
                if !d.is_finite() || d <= 0.0 {
                    return None;
                }
                lower[start_i + i] = d.sqrt();
            } else {
                let ljj = lower[start_j + j];
                lower[start_i + j] = (m.get(i, j) - s) / ljj;
            }
        }
    }
    Some(CholFactor { n, lower, jitter })
}

/// Factors `m + jI` for the smallest `j` on the policy's ladder that works.
pub fn cholesky(m: &SymMatrix, policy: &JitterPolicy) -> Result<CholFactor> {
    let mut last = 0.0;
    for jitter in policy.ladder(m.mean_diagonal()) {
        last = jitter;
        if let Some(f) = try_factor(m, jitter) {
            return Ok(f);
        }
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}

/// Solves `(L Lᵀ) x = b`.
pub fn solve_chol(f: &CholFactor, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != f.n {
        return Err(Error::DimensionMismatch {
            expected: f.n,
            found: b.len(),
        });
    }
    let mut x = b.to_vec();
    f.forward_solve_in_place(&mut x);
    f.backward_solve_in_place(&mut x);
    Ok(x)
}

/// `log det(L Lᵀ) = 2 Σ log L(i,i)`.
pub fn logdet(f: &CholFactor) -> f64 {
    2.0 * (0..f.n).map(|i| f.row(i)[i].ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_factor_is_identity() {
        let m = sym(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let f = cholesky(&m, &JitterPolicy::default()).unwrap();
        assert_eq!(f.jitter(), 0.0);
        assert_eq!(
            f.to_matrix(),
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
        );
    }

    #[test]
    fn hand_cholesky_two_by_two() {
        let m = sym(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let f = cholesky(&m, &JitterPolicy::default()).unwrap();
        assert_eq!(f.l(0, 0), 2.0);
        assert_eq!(f.l(1, 0), 1.0);
        assert!((f.l(1, 1) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(f.l(0, 1), 0.0);
        // L Lᵀ reconstructs the input.
        for i in 0..2 {
            for j in 0..2 {
                let v: f64 = (0..2).map(|k| f.l(i, k) * f.l(j, k)).sum();
                assert!((v - m.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn singular_matrix_needs_jitter() {
        let m = sym(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let f = cholesky(&m, &JitterPolicy::default()).unwrap();
        assert!(f.jitter() > 0.0);
        assert!(cholesky(&m, &JitterPolicy::none()).is_err());
    }

    #[test]
    fn indefinite_matrix_fails_after_ladder() {
        let m = sym(&[&[1.0, 2.0], &[2.0, 1.0]]);
        match cholesky(&m, &JitterPolicy::default()) {
            Err(Error::NotPositiveDefinite { jitter }) => assert!((jitter - 1e-4).abs() < 1e-18),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn solves_identity_and_diagonal() {
        let id = cholesky(&sym(&[&[1.0, 0.0], &[0.0, 1.0]]), &JitterPolicy::default()).unwrap();
        assert_eq!(solve_chol(&id, &[3.0, 7.0]).unwrap(), vec![3.0, 7.0]);
        let d = cholesky(&sym(&[&[4.0, 0.0], &[0.0, 9.0]]), &JitterPolicy::default()).unwrap();
        assert_eq!(solve_chol(&d, &[4.0, 9.0]).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(
            solve_chol(&d, &[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
    }

    #[test]
    fn logdet_simple_cases() {
        let id = cholesky(&sym(&[&[1.0, 0.0], &[0.0, 1.0]]), &JitterPolicy::default()).unwrap();
        assert_eq!(logdet(&id), 0.0);
        let d = cholesky(&sym(&[&[4.0, 0.0], &[0.0, 9.0]]), &JitterPolicy::default()).unwrap();
        assert!((logdet(&d) - 36f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let m = sym(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 2.0]]);
        let f = cholesky(&m, &JitterPolicy::default()).unwrap();
        let inv = f.inverse();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| m.get(i, k) * inv.get(k, j)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-14, "({i},{j}) = {v}");
            }
        }
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).unwrap();
        assert!(SymMatrix::new(m).is_err());
    }
}

//! Small dense kernels: largest-eigenvalue estimates and SPD solves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{BcdError, Result};
use crate::sparse::CscMatrix;

/// Relative residual at which power iteration stops.
pub const POWER_TOL: f64 = 1e-10;

/// Floor applied to curvature constants of degenerate (all-zero) directions.
pub const CURVATURE_FLOOR: f64 = 1e-12;

/// Deterministic, strictly positive start vector.
fn start_vector(n: usize) -> DVector<f64> {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    let v = DVector::from_iterator(
        n,
        (0..n).map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            1.0 + (z >> 11) as f64 / (1u64 << 53) as f64
        }),
    );
    let nrm = v.norm();
    v / nrm
}

/// Power iteration for the largest eigenvalue of a symmetric PSD operator.
///
/// Stops once the residual `||Hv - rho v||` falls below `POWER_TOL * rho`.
/// The returned value is `rho` plus that residual, which bounds the distance
/// from `rho` to the spectrum and keeps the estimate on the safe side.
fn power_iterate(n: usize, max_iter: usize, mut apply: impl FnMut(&DVector<f64>) -> DVector<f64>) -> f64 {
    if n == 0 {
        return CURVATURE_FLOOR;
    }
    let mut v = start_vector(n);
    let mut est = CURVATURE_FLOOR;
    for _ in 0..max_iter.max(1) {
        let hv = apply(&v);
        let rho = v.dot(&hv);
        let resid = (&hv - &v * rho).norm();
        est = rho + resid;
        let nrm = hv.norm();
        if nrm == 0.0 {
            return CURVATURE_FLOOR;
        }
        if resid <= POWER_TOL * rho.abs() {
            break;
        }
        v = hv / nrm;
    }
    est.max(CURVATURE_FLOOR)
}

/// Iteration cap for an operator of dimension `n`.
pub fn power_cap(n: usize) -> usize {
    (10 * n).max(500)
}

/// Largest eigenvalue of a dense symmetric PSD matrix.
pub fn max_eigenvalue(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    if n == 1 {
        return h[(0, 0)].max(CURVATURE_FLOOR);
    }
    power_iterate(n, power_cap(n), |v| h * v)
}

/// Largest eigenvalue of a sparse symmetric PSD matrix with a fixed
/// iteration budget.
pub fn max_eigenvalue_sparse(m: &CscMatrix, iters: usize) -> f64 {
    let n = m.ncols();
    power_iterate(n, iters, |v| DVector::from_vec(m.mul_vec(v.as_slice())))
}

/// Cholesky factor of an SPD matrix, retrying once with a ridge of
/// `1e-10 * trace / n` when the plain factorization fails.
pub fn factor_spd(h: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return Ok(c);
    }
    let n = h.nrows().max(1) as f64;
    let ridge = (1e-10 * h.trace().abs() / n).max(f64::MIN_POSITIVE);
    let mut shifted = h.clone();
    for i in 0..h.nrows() {
        shifted[(i, i)] += ridge;
    }
    Cholesky::new(shifted).ok_or(BcdError::Singular("cholesky with ridge"))
}

/// Cholesky with a geometric ridge escalation: 0, then `1e-8 * ||H||`,
/// multiplied by ten until success. Returns the factor and the ridge used.
pub fn factor_with_escalation(h: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return Ok((c, 0.0));
    }
    let scale = h.abs().max().max(CURVATURE_FLOOR);
    let mut ridge = 1e-8 * scale;
    for _ in 0..20 {
        let mut shifted = h.clone();
        for i in 0..h.nrows() {
            shifted[(i, i)] += ridge;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, ridge));
        }
        ridge *= 10.0;
    }
    Err(BcdError::Singular("ridge escalation exhausted"))
}

/// `g^T H^{-1} g` for an SPD matrix.
pub fn inv_quad_form(h: &DMatrix<f64>, g: &[f64]) -> Result<f64> {
    let c = factor_spd(h)?;
    let gv = DVector::from_column_slice(g);
    Ok(gv.dot(&c.solve(&gv)))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

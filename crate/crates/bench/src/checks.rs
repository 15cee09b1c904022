//! Invariants measured on finished runs.

use crate::trace::Trace;

/// A failed instance of the sublinear gradient bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundFailure {
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
}

/// Checks `min_{t<k} 2 c_t <= 2 (F(x^0) - f*) / k` for every `k`, where
/// `c_t` is the decrease certified by the update taken at `x^t`, so `2 c_t`
/// is the squared gradient norm in the update's own metric. Rows without a
/// certificate are skipped; returns the first failure.
pub fn gradient_bound(trace: &Trace, f_star: f64, slack: f64) -> Result<usize, BoundFailure> {
    let f0 = match trace.rows.first() {
        Some(r) => r.obj,
        None => return Ok(0),
    };
    let mut best = f64::INFINITY;
    let mut checked = 0;
    for k in 1..trace.rows.len() {
        let Some(c) = trace.certificates.get(k).copied().flatten() else {
            continue;
        };
        best = best.min(2.0 * c);
        let rhs = 2.0 * (f0 - f_star) / k as f64;
        if best > rhs + slack * (1.0 + f0.abs()) / k as f64 {
            return Err(BoundFailure { k, lhs: best, rhs });
        }
        checked += 1;
    }
    Ok(checked)
}

/// Rows whose objective exceeds the previous one beyond the relative slack.
pub fn monotone_violations(trace: &Trace, slack: f64) -> Vec<usize> {
    trace
        .rows
        .windows(2)
        .filter(|w| w[1].obj > w[0].obj + slack * (1.0 + w[0].obj.abs()))
        .map(|w| w[1].iter)
        .collect()
}

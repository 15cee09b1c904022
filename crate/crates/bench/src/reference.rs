//! Reference optima `f*` and solutions.

use bcd_core::blocking::Block;
use bcd_core::linalg::{factor_spd, norm_inf};
use bcd_core::{Composite, Kind, ProblemInstance};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Largest dimension for which the smallest Hessian eigenvalue is formed
/// explicitly.
pub const MU_MAX_N: usize = 1500;
/// Iteration cap of the accelerated proximal-gradient reference solver.
pub const REFERENCE_MAX_ITERS: usize = 200_000;
/// Relative KKT tolerance accepted after the support solve.
pub const KKT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    /// closed-form or dense linear solve
    Direct,
    /// proximal-gradient run finished by a Newton solve on the support
    SupportSolve,
    /// best value of a long reference run
    LongRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub f_star: f64,
    pub x_star: Option<Vec<f64>>,
    /// smallest eigenvalue of the smooth Hessian when it is constant and
    /// small enough to form
    pub mu: Option<f64>,
    pub source: ReferenceSource,
}

impl Reference {
    pub fn is_exact(&self) -> bool {
        self.source != ReferenceSource::LongRun
    }
}

fn dense_min_eigenvalue(h: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h).eigenvalues.min()
}

/// Smallest eigenvalue of the constant Hessian of a quadratic or
/// least-squares problem, `None` for other kinds or when too large.
pub fn strong_convexity(p: &ProblemInstance) -> Option<f64> {
    match p.kind() {
        Kind::Quadratic | Kind::GraphQuadratic if p.n() <= MU_MAX_N => {
            let (a, _) = p.quadratic_parts()?;
            Some(dense_min_eigenvalue(a.to_dense()).max(0.0))
        }
        Kind::LeastSquares => {
            let a = p.design()?;
            if a.nrows() < a.ncols() {
                Some(0.0)
            } else if a.ncols() <= MU_MAX_N {
                let cols: Vec<usize> = (0..a.ncols()).collect();
                Some(dense_min_eigenvalue(a.weighted_gram(&cols, None)).max(0.0))
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Exact minimizer of a smooth quadratic or least-squares problem.
///
/// Least squares uses the minimum-norm solution through the smaller of
/// `A A^T` and `A^T A`, with a spectral pseudo-inverse.
pub fn direct_solve(p: &ProblemInstance) -> Result<Reference> {
    if p.composite().is_some() {
        return Err(BenchError::Incompatible("direct solve of a composite problem".into()));
    }
    let x = match p.kind() {
        Kind::Quadratic | Kind::GraphQuadratic => {
            let (a, c) = p.quadratic_parts().expect("quadratic kind");
            let chol = factor_spd(&a.to_dense())?;
            chol.solve(&DVector::from_column_slice(c)).as_slice().to_vec()
        }
        Kind::LeastSquares => {
            let a = p.design().expect("least squares has a design");
            let b: Vec<f64> = p.state(vec![0.0; p.n()])?.cache().iter().map(|r| -r).collect();
            let (m, n) = (a.nrows(), a.ncols());
            if m <= n {
                let mut g = DMatrix::zeros(m, m);
                for j in 0..n {
                    let (rows, vals) = a.col(j);
                    for (&r1, &v1) in rows.iter().zip(vals) {
                        for (&r2, &v2) in rows.iter().zip(vals) {
                            g[(r1, r2)] += v1 * v2;
                        }
                    }
                }
                let y = pinv_solve(g, &b);
                a.tr_mul_vec(&y)
            } else {
                let cols: Vec<usize> = (0..n).collect();
                pinv_solve(a.weighted_gram(&cols, None), &a.tr_mul_vec(&b))
            }
        }
        _ => return Err(BenchError::Incompatible(format!("no direct solve for {:?}", p.kind()))),
    };
    Ok(Reference {
        f_star: p.eval(&x)?,
        mu: strong_convexity(p),
        x_star: Some(x),
        source: ReferenceSource::Direct,
    })
}

fn pinv_solve(h: DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
    let eig = SymmetricEigen::new(h);
    let top = eig.eigenvalues.max().max(0.0);
    let q = &eig.eigenvectors;
    let r = DVector::from_column_slice(rhs);
    let mut coef = q.transpose() * r;
    for (c, &l) in coef.iter_mut().zip(eig.eigenvalues.iter()) {
        *c = if l > 1e-12 * top { *c / l } else { 0.0 };
    }
    (q * coef).as_slice().to_vec()
}

/// Upper estimate of the largest eigenvalue of the smooth Hessian bound,
/// applied without forming `A^T A` for least-squares problems.
pub fn smooth_lipschitz(p: &ProblemInstance) -> f64 {
    let n = p.n();
    let apply: Box<dyn Fn(&[f64]) -> Vec<f64>> = match (p.kind(), p.design(), p.quadratic_parts()) {
        (Kind::LeastSquares, Some(a), _) => Box::new(move |v| a.tr_mul_vec(&a.mul_vec(v))),
        (_, _, Some((a, _))) => Box::new(move |v| a.mul_vec(v)),
        _ => {
            let m = p.global_bound();
            Box::new(move |v| m.mul_vec(v))
        }
    };
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut est = 0.0;
    for _ in 0..2000 {
        let hv = apply(&v);
        let rho: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        let resid = hv.iter().zip(&v).map(|(h, x)| (h - rho * x).powi(2)).sum::<f64>().sqrt();
        est = rho + resid;
        let nrm = hv.iter().map(|h| h * h).sum::<f64>().sqrt();
        if nrm == 0.0 || resid <= 1e-10 * rho {
            break;
        }
        v = hv.into_iter().map(|h| h / nrm).collect();
    }
    est * (1.0 + 1e-6)
}

/// First-order optimality residual `max_i |min-norm subgradient|`.
pub fn kkt_residual(p: &ProblemInstance, x: &[f64]) -> Result<f64> {
    let st = p.state(x.to_vec())?;
    let g = p.gradient(&st);
    let comp = p.composite();
    Ok(x.iter().zip(&g).map(|(&xi, &gi)| comp.min_norm_subgradient(xi, gi).abs()).fold(0.0, f64::max))
}

fn prox_all(comp: &Composite, v: &[f64], step: f64) -> Vec<f64> {
    v.iter().map(|&vi| comp.prox(vi, step)).collect()
}

/// Newton iterations on the non-zero pattern of `x` with the sign pattern
/// held fixed. Returns `None` when a sign changes or the KKT conditions fail
/// off the support.
pub fn support_solve(p: &ProblemInstance, x: &[f64]) -> Result<Option<Vec<f64>>> {
    let comp = p.composite();
    let lam = comp.lambda();
    let n = p.n();
    let support: Vec<usize> = (0..n).filter(|&i| x[i] != 0.0).collect();
    let mut x = x.to_vec();
    let sign = |v: f64| if v > 0.0 { 1.0 } else { -1.0 };
    let slope: Vec<f64> = support
        .iter()
        .map(|&i| match comp {
            Composite::None | Composite::NonNegative => 0.0,
            _ => lam * sign(x[i]),
        })
        .collect();
    if !support.is_empty() {
        let block = Block::new(support.clone(), n)?;
        for _ in 0..50 {
            let st = p.state(x.clone())?;
            let g = p.block_gradient(&st, &block)?;
            let r: Vec<f64> = g.iter().zip(&slope).map(|(a, b)| a + b).collect();
            let scale = 1.0 + norm_inf(&g);
            if norm_inf(&r) <= 1e-14 * scale {
                break;
            }
            let h = p.block_hessian(&st, &block)?;
            let chol = match factor_spd(&h) {
                Ok(c) => c,
                Err(_) => return Ok(None),
            };
            let d = chol.solve(&DVector::from_vec(r));
            for (k, &i) in support.iter().enumerate() {
                x[i] -= d[k];
            }
        }
        for (k, &i) in support.iter().enumerate() {
            let s = slope[k];
            let ok = match comp {
                Composite::L1 { .. } => lam == 0.0 || (x[i] != 0.0 && sign(x[i]) * s > 0.0),
                Composite::NonNegative | Composite::NonNegativeL1 { .. } => x[i] > 0.0,
                Composite::None => true,
            };
            if !ok {
                return Ok(None);
            }
        }
    }
    let st = p.state(x.clone())?;
    let g = p.gradient(&st);
    let scale = 1.0 + norm_inf(&g);
    let off_ok = (0..n)
        .filter(|&i| x[i] == 0.0)
        .all(|i| comp.min_norm_subgradient(0.0, g[i]).abs() <= KKT_TOL * scale);
    Ok(off_ok.then_some(x))
}

/// Solution of a composite problem with a smooth part of constant Hessian:
/// restarted accelerated proximal gradient until the support settles, then
/// an exact solve on the support.
pub fn composite_reference(p: &ProblemInstance, warm: Option<&[f64]>) -> Result<Reference> {
    let comp = p.composite();
    if !comp.is_some() {
        return Err(BenchError::Incompatible("composite reference of a smooth problem".into()));
    }
    let n = p.n();
    let step = 1.0 / smooth_lipschitz(p);
    let mut x = match warm {
        Some(w) => prox_all(&comp, w, step),
        None => vec![0.0; n],
    };
    let mut fx = p.total_value(&p.state(x.clone())?);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut last_support: Vec<usize> = Vec::new();
    for it in 0..REFERENCE_MAX_ITERS {
        let st = p.state(y.clone())?;
        let g = p.gradient(&st);
        let v: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
        let xn = prox_all(&comp, &v, step);
        let fxn = p.total_value(&p.state(xn.clone())?);
        if fxn > fx {
            y = x.clone();
            t = 1.0;
            continue;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / tn;
        y = xn.iter().zip(&x).map(|(a, b)| a + mom * (a - b)).collect();
        x = xn;
        fx = fxn;
        t = tn;
        if it % 25 == 24 {
            let support: Vec<usize> = (0..n).filter(|&i| x[i] != 0.0).collect();
            if support == last_support {
                if let Some(xs) = support_solve(p, &x)? {
                    let f = p.total_value(&p.state(xs.clone())?);
                    return Ok(Reference {
                        f_star: f,
                        x_star: Some(xs),
                        mu: strong_convexity(p),
                        source: ReferenceSource::SupportSolve,
                    });
                }
            }
            last_support = support;
        }
    }
    Ok(Reference {
        f_star: fx,
        x_star: Some(x),
        mu: strong_convexity(p),
        source: ReferenceSource::LongRun,
    })
}

/// Number of coordinates at the manifold value zero.
pub fn zero_count(x: &[f64]) -> usize {
    x.iter().filter(|v| **v == 0.0).count()
}

/// Non-negative L1 weight giving exactly `target` non-zeros at the solution
/// when bisection on `log lambda` finds one, otherwise the closest count.
pub fn choose_nonneg_l1_weight(smooth: &ProblemInstance, target: usize) -> Result<(f64, Reference)> {
    let n = smooth.n();
    if target == 0 || target > n {
        return Err(BenchError::Usage(format!("support target {target} outside [1, {n}]")));
    }
    let g0 = smooth.gradient(&smooth.state(vec![0.0; n])?);
    let lam_max = g0.iter().map(|g| -g).fold(0.0, f64::max);
    if lam_max <= 0.0 {
        return Err(BenchError::Incompatible("zero is optimal for every weight".into()));
    }
    let (mut lo, mut hi) = ((lam_max * 1e-6).ln(), lam_max.ln());
    let mut best: Option<(usize, f64, Reference)> = None;
    let mut warm: Option<Vec<f64>> = None;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let lam = mid.exp();
        let p = smooth.clone().with_composite(Composite::NonNegativeL1 { lambda: lam })?;
        let r = composite_reference(&p, warm.as_deref())?;
        let x = r.x_star.as_ref().expect("composite reference has a point");
        let s = n - zero_count(x);
        warm = Some(x.clone());
        let miss = s.abs_diff(target);
        let replace = match &best {
            None => true,
            Some((bm, _, br)) => miss < *bm || (miss == *bm && r.is_exact() && !br.is_exact()),
        };
        if replace {
            best = Some((miss, lam, r.clone()));
        }
        if miss == 0 && r.is_exact() {
            break;
        }
        if s > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let (_, lam, r) = best.expect("at least one bisection step");
    Ok((lam, r))
}

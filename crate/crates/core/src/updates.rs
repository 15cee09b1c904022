//! Block update rules.
//!
//! Every update reads the block gradient supplied by the caller, changes
//! only the coordinates of the block, and keeps the linear cache of the
//! [`PointState`] in sync. A `certificate` is the decrease the update is
//! guaranteed to achieve under its curvature assumption.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::blocking::Block;
use crate::error::{BcdError, Result};
use crate::linalg::{factor_spd, factor_with_escalation, max_eigenvalue};
use crate::objectives::{Composite, PointState, ProblemInstance};
use crate::selection::DChoice;
use crate::treesolver::{build_subsystem, forest_solve, TreeSystem};

/// Armijo backtracking parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    pub c1: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            max_backtracks: 50,
        }
    }
}

impl LineSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1 <= 0.5) {
            return Err(BcdError::InvalidArgument(format!("c1 = {} outside (0, 0.5]", self.c1)));
        }
        Ok(())
    }
}

/// Doublings after which a Lipschitz estimate is declared divergent.
pub const MAX_DOUBLINGS: usize = 64;
/// Inner coordinate-descent passes for the proximal Newton subproblem.
pub const PROX_NEWTON_PASSES: usize = 25;
/// Initial scale of the matrix estimate for [`UpdateRule::MatrixApproxH`].
pub const MATRIX_ESTIMATE_START: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// `x_b -= g_b / L_b`
    GradientLb,
    /// gradient step with a doubled-on-failure estimate of `L_b`
    GradientApproxL,
    /// `x_i -= g_i / D_i` on the block
    GradientDiag(DChoice),
    /// `x_b -= H_b^{-1} g_b`
    Matrix,
    /// matrix step with a doubled-on-failure scale of `H_b`
    MatrixApproxH,
    Newton(LineSearch),
    TreeExact,
    ProxGradient { global_step: bool },
    TwoMetricProjection(LineSearch),
    ProxNewton(LineSearch),
}

impl UpdateRule {
    pub fn is_proximal(&self) -> bool {
        matches!(
            self,
            UpdateRule::ProxGradient { .. } | UpdateRule::TwoMetricProjection(_) | UpdateRule::ProxNewton(_)
        )
    }
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            UpdateRule::GradientLb => "grad-lb".to_string(),
            UpdateRule::GradientApproxL => "grad-la".to_string(),
            UpdateRule::GradientDiag(d) => format!("grad-diag:{}", d_name(d)),
            UpdateRule::Matrix => "matrix".to_string(),
            UpdateRule::MatrixApproxH => "matrix-la".to_string(),
            UpdateRule::Newton(_) => "newton".to_string(),
            UpdateRule::TreeExact => "tree".to_string(),
            UpdateRule::ProxGradient { global_step: false } => "prox-grad".to_string(),
            UpdateRule::ProxGradient { global_step: true } => "prox-grad-global".to_string(),
            UpdateRule::TwoMetricProjection(_) => "tmp".to_string(),
            UpdateRule::ProxNewton(_) => "prox-newton".to_string(),
        };
        f.write_str(&s)
    }
}

fn d_name(d: &DChoice) -> &'static str {
    match d {
        DChoice::Li => "li",
        DChoice::LiTau => "litau",
        DChoice::Sirt => "sirt",
    }
}

impl FromStr for UpdateRule {
    type Err = BcdError;
    fn from_str(s: &str) -> Result<Self> {
        let ls = LineSearch::default();
        Ok(match s {
            "grad-lb" => UpdateRule::GradientLb,
            "grad-la" => UpdateRule::GradientApproxL,
            "matrix" => UpdateRule::Matrix,
            "matrix-la" => UpdateRule::MatrixApproxH,
            "newton" => UpdateRule::Newton(ls),
            "tree" => UpdateRule::TreeExact,
            "prox-grad" => UpdateRule::ProxGradient { global_step: false },
            "prox-grad-global" => UpdateRule::ProxGradient { global_step: true },
            "tmp" => UpdateRule::TwoMetricProjection(ls),
            "prox-newton" => UpdateRule::ProxNewton(ls),
            _ => match s.strip_prefix("grad-diag:") {
                Some(d) => UpdateRule::GradientDiag(d.parse()?),
                None => return Err(BcdError::InvalidArgument(format!("unknown update rule `{s}`"))),
            },
        })
    }
}

/// What an update did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateOutcome {
    /// Step size: `1/L` for gradient steps, the accepted `alpha` otherwise.
    pub step: f64,
    /// Guaranteed decrease of `f` (smooth updates only).
    pub certificate: Option<f64>,
    pub backtracks: usize,
    /// The line search gave up and a gradient-type step was taken instead.
    pub fallback: bool,
    /// Number of block coordinates that changed.
    pub coord_updates: usize,
    /// Subproblem model value at the returned step and at the
    /// proximal-gradient starting point (proximal Newton only).
    pub model: Option<(f64, f64)>,
}

/// Per-block state of the doubling estimates.
#[derive(Debug, Clone, Default)]
pub struct LipschitzEstimateTable {
    lhat: HashMap<Block, f64>,
    doublings: HashMap<Block, usize>,
}

impl LipschitzEstimateTable {
    pub fn get(&self, b: &Block) -> Option<f64> {
        self.lhat.get(b).copied()
    }

    pub fn doublings(&self, b: &Block) -> usize {
        self.doublings.get(b).copied().unwrap_or(0)
    }

    pub fn set(&mut self, b: &Block, v: f64) {
        self.lhat.insert(b.clone(), v);
    }
}

fn count_changed(d: &[f64]) -> usize {
    d.iter().filter(|v| **v != 0.0).count()
}

/// `x_b -= g_b / L_b`.
pub fn gradient_update(p: &ProblemInstance, st: &mut PointState, b: &Block, g: &[f64], lb: f64) -> Result<UpdateOutcome> {
    if !(lb > 0.0) {
        return Err(BcdError::InvalidArgument(format!("L_b = {lb} must be positive")));
    }
    let sq: f64 = g.iter().map(|v| v * v).sum();
    if sq > 0.0 {
        let img = p.step_image(b, g);
        p.apply_step(st, b, g, &img, -1.0 / lb);
    }
    Ok(UpdateOutcome {
        step: 1.0 / lb,
        certificate: Some(sq / (2.0 * lb)),
        coord_updates: count_changed(g),
        ..Default::default()
    })
}

/// `x_i -= g_i / D_i` for `i` in the block.
pub fn diagonal_update(p: &ProblemInstance, st: &mut PointState, b: &Block, g: &[f64], d: &[f64]) -> Result<UpdateOutcome> {
    let dir: Vec<f64> = b.indices().iter().zip(g).map(|(&i, gi)| -gi / d[i]).collect();
    let cert = 0.5 * b.indices().iter().zip(g).map(|(&i, gi)| gi * gi / d[i]).sum::<f64>();
    let img = p.step_image(b, &dir);
    p.apply_step(st, b, &dir, &img, 1.0);
    Ok(UpdateOutcome {
        step: 1.0,
        certificate: Some(cert),
        coord_updates: count_changed(&dir),
        ..Default::default()
    })
}

/// `x_b -= H_b^{-1} g_b`.
pub fn matrix_update(p: &ProblemInstance, st: &mut PointState, b: &Block, g: &[f64], h: &DMatrix<f64>) -> Result<UpdateOutcome> {
    let c = factor_spd(h)?;
    let gv = DVector::from_column_slice(g);
    let sol = c.solve(&gv);
    let cert = 0.5 * gv.dot(&sol);
    let dir: Vec<f64> = sol.iter().map(|v| -v).collect();
    let img = p.step_image(b, &dir);
    p.apply_step(st, b, &dir, &img, 1.0);
    Ok(UpdateOutcome {
        step: 1.0,
        certificate: Some(cert),
        coord_updates: count_changed(&dir),
        ..Default::default()
    })
}

/// Gradient step with the doubling estimate of `L_b` stored in `table`.
pub fn lipschitz_backtrack(
    p: &ProblemInstance,
    st: &mut PointState,
    b: &Block,
    g: &[f64],
    table: &mut LipschitzEstimateTable,
) -> Result<UpdateOutcome> {
    let mut l = table.get(b).unwrap_or(1.0);
    let sq: f64 = g.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        table.set(b, l);
        return Ok(UpdateOutcome {
            step: 1.0 / l,
            certificate: Some(0.0),
            ..Default::default()
        });
    }
    let img = p.step_image(b, g);
    let mut doublings = 0;
    loop {
        let trial = p.trial_value(st, b, g, &img, -1.0 / l);
        if trial <= st.value() - sq / (2.0 * l) {
            break;
        }
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(BcdError::LipschitzDiverged(MAX_DOUBLINGS));
        }
        l *= 2.0;
    }
    *table.doublings.entry(b.clone()).or_insert(0) += doublings;
    table.set(b, l);
    p.apply_step(st, b, g, &img, -1.0 / l);
    Ok(UpdateOutcome {
        step: 1.0 / l,
        certificate: Some(sq / (2.0 * l)),
        backtracks: doublings,
        coord_updates: count_changed(g),
        ..Default::default()
    })
}

/// Matrix step with `s * H_b`, doubling `s` until the matrix progress bound
/// holds. The scale per block lives in `table`.
pub fn matrix_backtrack(
    p: &ProblemInstance,
    st: &mut PointState,
    b: &Block,
    g: &[f64],
    h: &DMatrix<f64>,
    table: &mut LipschitzEstimateTable,
) -> Result<UpdateOutcome> {
    let mut s = table.get(b).unwrap_or(MATRIX_ESTIMATE_START);
    let c = factor_spd(h)?;
    let gv = DVector::from_column_slice(g);
    let sol = c.solve(&gv);
    let q = gv.dot(&sol);
    let dir: Vec<f64> = sol.iter().map(|v| -v).collect();
    if q == 0.0 {
        table.set(b, s);
        return Ok(UpdateOutcome {
            step: 1.0 / s,
            certificate: Some(0.0),
            ..Default::default()
        });
    }
    let img = p.step_image(b, &dir);
    let mut doublings = 0;
    while p.trial_value(st, b, &dir, &img, 1.0 / s) > st.value() - 0.5 * q / s {
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(BcdError::LipschitzDiverged(MAX_DOUBLINGS));
        }
        s *= 2.0;
    }
    *table.doublings.entry(b.clone()).or_insert(0) += doublings;
    table.set(b, s);
    p.apply_step(st, b, &dir, &img, 1.0 / s);
    Ok(UpdateOutcome {
        step: 1.0 / s,
        certificate: Some(0.5 * q / s),
        backtracks: doublings,
        coord_updates: count_changed(&dir),
        ..Default::default()
    })
}

/// Next trial step: quadratic interpolation on the first backtrack, cubic
/// through the last two trials afterwards, safeguarded to `[0.1, 0.9] alpha`.
pub fn interpolate_step(f0: f64, slope: f64, alpha: f64, f_alpha: f64, prev: Option<(f64, f64)>) -> f64 {
    let raw = match prev {
        None => -slope * alpha * alpha / (2.0 * (f_alpha - f0 - slope * alpha)),
        Some((a0, f_a0)) => {
            let a1 = alpha;
            let d1 = f_alpha - f0 - slope * a1;
            let d0 = f_a0 - f0 - slope * a0;
            let den = a0 * a0 * a1 * a1 * (a1 - a0);
            let ca = (a0 * a0 * d1 - a1 * a1 * d0) / den;
            let cb = (-a0 * a0 * a0 * d1 + a1 * a1 * a1 * d0) / den;
            if ca == 0.0 {
                -slope / (2.0 * cb)
            } else {
                let disc = cb * cb - 3.0 * ca * slope;
                (-cb + disc.max(0.0).sqrt()) / (3.0 * ca)
            }
        }
    };
    let (lo, hi) = (0.1 * alpha, 0.9 * alpha);
    if raw.is_finite() {
        raw.clamp(lo, hi)
    } else {
        0.5 * alpha
    }
}

/// Armijo backtracking along a fixed direction. Returns the accepted step
/// and the number of backtracks, or `None` after the cap.
fn armijo(
    p: &ProblemInstance,
    st: &PointState,
    b: &Block,
    d: &[f64],
    img: &[f64],
    slope: f64,
    ls: &LineSearch,
) -> Option<(f64, usize)> {
    let f0 = st.value();
    let mut alpha = 1.0;
    let mut prev = None;
    for k in 0..=ls.max_backtracks {
        let fa = p.trial_value(st, b, d, img, alpha);
        if fa <= f0 + ls.c1 * alpha * slope {
            return Some((alpha, k));
        }
        let next = interpolate_step(f0, slope, alpha, fa, prev);
        prev = Some((alpha, fa));
        alpha = next;
    }
    None
}

/// Newton direction `-(H + r I)^{-1} g` with ridge escalation.
fn newton_direction(h: &DMatrix<f64>, g: &[f64]) -> Result<Vec<f64>> {
    let (c, _) = factor_with_escalation(h)?;
    let sol = c.solve(&DVector::from_column_slice(g));
    Ok(sol.iter().map(|v| -v).collect())
}

/// Newton step on the block with Armijo backtracking; falls back to a
/// `1/L_b` gradient step if the search fails.
pub fn newton_update(p: &ProblemInstance, st: &mut PointState, b: &Block, g: &[f64], ls: &LineSearch) -> Result<UpdateOutcome> {
    if g.iter().all(|v| *v == 0.0) {
        return Ok(UpdateOutcome {
            step: 1.0,
            certificate: Some(0.0),
            ..Default::default()
        });
    }
    let h = p.block_hessian(st, b)?;
    let d = newton_direction(&h, g)?;
    line_search_step(p, st, b, g, d, ls)
}

fn line_search_step(
    p: &ProblemInstance,
    st: &mut PointState,
    b: &Block,
    g: &[f64],
    d: Vec<f64>,
    ls: &LineSearch,
) -> Result<UpdateOutcome> {
    let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
    if slope < 0.0 {
        let img = p.step_image(b, &d);
        if let Some((alpha, k)) = armijo(p, st, b, &d, &img, slope, ls) {
            p.apply_step(st, b, &d, &img, alpha);
            return Ok(UpdateOutcome {
                step: alpha,
                certificate: Some(-ls.c1 * alpha * slope),
                backtracks: k,
                coord_updates: count_changed(&d),
                ..Default::default()
            });
        }
    }
    let lb = p.lipschitz_block(b)?;
    let mut out = gradient_update(p, st, b, g, lb)?;
    out.fallback = true;
    out.backtracks = ls.max_backtracks;
    Ok(out)
}

/// Exact block minimization for forest-structured blocks.
///
/// Quadratic objectives solve `A_bb x_b = c_b - A_{b,rest} x_rest` directly;
/// other objectives take a Newton step whose system is solved by message
/// passing, followed by the usual line search.
pub fn tree_update(p: &ProblemInstance, st: &mut PointState, b: &Block, g: &[f64], ls: &LineSearch) -> Result<UpdateOutcome> {
    if p.quadratic_parts().is_some() {
        let sys = build_subsystem(p, st, b)?;
        let target = forest_solve(&sys)?;
        let changed = b.indices().iter().zip(&target).filter(|(&i, t)| st.x[i] != **t).count();
        p.move_block_to(st, b, &target);
        return Ok(UpdateOutcome {
            step: 1.0,
            certificate: None,
            coord_updates: changed,
            ..Default::default()
        });
    }
    if g.iter().all(|v| *v == 0.0) {
        return Ok(UpdateOutcome {
            step: 1.0,
            certificate: Some(0.0),
            ..Default::default()
        });
    }
    let h = p.block_hessian(st, b)?;
    let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
    let sys = TreeSystem::from_dense(b.clone(), &h, rhs)?;
    let d = forest_solve(&sys)?;
    line_search_step(p, st, b, g, d, ls)
}

fn require_composite(p: &ProblemInstance) -> Result<Composite> {
    match p.composite() {
        Composite::None => Err(BcdError::NoComposite),
        c => Ok(c),
    }
}

/// `x_b = prox(x_b - step g_b, step)`.
pub fn prox_gradient_update(p: &ProblemInstance, st: &mut PointState, b: &Block, g: &[f64], step: f64) -> Result<UpdateOutcome> {
    let comp = require_composite(p)?;
    if !(step > 0.0) {
        return Err(BcdError::InvalidArgument(format!("step {step} must be positive")));
    }
    let d: Vec<f64> = b
        .indices()
        .iter()
        .zip(g)
        .map(|(&i, gi)| comp.prox(st.x[i] - step * gi, step) - st.x[i])
        .collect();
    let target: Vec<f64> = b.indices().iter().zip(&d).map(|(&i, di)| st.x[i] + di).collect();
    p.move_block_to(st, b, &target);
    Ok(UpdateOutcome {
        step,
        coord_updates: count_changed(&d),
        ..Default::default()
    })
}

/// Positions (within the block) of the active and working sets of the
/// two-metric projection step.
pub fn tmp_sets(comp: &Composite, x: &[f64], g: &[f64], eps: f64) -> (Vec<usize>, Vec<usize>) {
    let lam = comp.lambda();
    let mut active = Vec::new();
    let mut working = Vec::new();
    for (k, (&xi, &gi)) in x.iter().zip(g).enumerate() {
        let is_active = match comp {
            Composite::None => false,
            Composite::NonNegative | Composite::NonNegativeL1 { .. } => xi < eps && gi + lam > 0.0,
            Composite::L1 { .. } => {
                xi.abs() < eps && (xi < 0.0 || gi + lam > 0.0) && (xi > 0.0 || gi - lam < 0.0)
            }
        };
        if is_active {
            active.push(k);
        } else {
            working.push(k);
        }
    }
    (active, working)
}

/// Two-metric projection: Newton on the working set, diagonally scaled
/// proximal gradient on the active set, projected path search.
pub fn tmp_update(p: &ProblemInstance, st: &mut PointState, b: &Block, g: &[f64], ls: &LineSearch) -> Result<UpdateOutcome> {
    let comp = require_composite(p)?;
    let lam = comp.lambda();
    let idx = b.indices();
    let xb: Vec<f64> = idx.iter().map(|&i| st.x[i]).collect();
    let resid: f64 = xb
        .iter()
        .zip(g)
        .map(|(x, gi)| (x - comp.prox(x - gi, 1.0)).powi(2))
        .sum::<f64>()
        .sqrt();
    if resid == 0.0 {
        return Ok(UpdateOutcome {
            step: 1.0,
            ..Default::default()
        });
    }
    let eps = resid.min(0.01);
    let (active, working) = tmp_sets(&comp, &xb, g, eps);
    let h = p.block_hessian(st, b)?;
    let nb = idx.len();

    // orthant of each working coordinate; L1 picks the side the
    // pseudo-gradient points into when x is exactly zero
    let sigma: Vec<f64> = (0..nb)
        .map(|k| match comp {
            Composite::L1 { .. } => {
                if xb[k] != 0.0 {
                    xb[k].signum()
                } else if g[k] + lam < 0.0 {
                    1.0
                } else if g[k] - lam > 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            _ => 1.0,
        })
        .collect();
    let pseudo: Vec<f64> = (0..nb).map(|k| g[k] + lam * sigma[k]).collect();

    let mut dir = vec![0.0; nb];
    let free: Vec<usize> = working.iter().copied().filter(|&k| sigma[k] != 0.0).collect();
    if !free.is_empty() {
        let hw = DMatrix::from_fn(free.len(), free.len(), |r, c| h[(free[r], free[c])]);
        let gw: Vec<f64> = free.iter().map(|&k| pseudo[k]).collect();
        let dw = newton_direction(&hw, &gw)?;
        for (&k, v) in free.iter().zip(dw) {
            dir[k] = v;
        }
    }
    for &k in &active {
        let hk = h[(k, k)].max(crate::linalg::CURVATURE_FLOOR);
        dir[k] = comp.prox(xb[k] - g[k] / hk, 1.0 / hk) - xb[k];
    }

    // projected path x(alpha): working coordinates stay in their orthant,
    // active ones interpolate towards their prox point
    let point = |alpha: f64| -> Vec<f64> {
        (0..nb)
            .map(|k| {
                let v = xb[k] + alpha * dir[k];
                if active.binary_search(&k).is_ok() {
                    v
                } else {
                    match comp {
                        Composite::L1 { .. } => {
                            if sigma[k] > 0.0 {
                                v.max(0.0)
                            } else if sigma[k] < 0.0 {
                                v.min(0.0)
                            } else {
                                xb[k]
                            }
                        }
                        _ => v.max(0.0),
                    }
                }
            })
            .collect()
    };
    let total0 = st.value() + comp.value(&xb);
    let mut alpha = 1.0;
    for k in 0..=ls.max_backtracks {
        let y = point(alpha);
        let step: Vec<f64> = y.iter().zip(&xb).map(|(a, b)| a - b).collect();
        let model: f64 = step.iter().zip(g).map(|(s, gi)| s * gi).sum::<f64>() + comp.value(&y) - comp.value(&xb);
        if model < 0.0 {
            let img = p.step_image(b, &step);
            let f_new = p.trial_value(st, b, &step, &img, 1.0);
            if f_new + comp.value(&y) <= total0 + ls.c1 * model {
                p.move_block_to(st, b, &y);
                return Ok(UpdateOutcome {
                    step: alpha,
                    backtracks: k,
                    coord_updates: count_changed(&step),
                    ..Default::default()
                });
            }
        }
        alpha *= 0.5;
    }
    let lb = p.lipschitz_block(b)?;
    let mut out = prox_gradient_update(p, st, b, g, 1.0 / lb)?;
    out.fallback = true;
    out.backtracks = ls.max_backtracks;
    Ok(out)
}

/// Model `g^T d + 1/2 d^T H d + g(x + d) - g(x)`.
fn prox_model(comp: &Composite, h: &DMatrix<f64>, g: &[f64], x: &[f64], d: &[f64]) -> f64 {
    let dv = DVector::from_column_slice(d);
    let quad = 0.5 * dv.dot(&(h * &dv));
    let lin: f64 = g.iter().zip(d).map(|(a, b)| a * b).sum();
    let reg: f64 = x.iter().zip(d).map(|(xi, di)| comp.scalar_value(xi + di) - comp.scalar_value(*xi)).sum();
    lin + quad + reg
}

/// Cyclic coordinate descent on `g^T d + 1/(2 alpha) d^T H d + g(x + d)`.
fn solve_prox_model(comp: &Composite, h: &DMatrix<f64>, g: &[f64], x: &[f64], alpha: f64, start: Vec<f64>) -> Vec<f64> {
    let nb = x.len();
    let mut d = start;
    let mut hd = h * DVector::from_column_slice(&d);
    let hs = h / alpha;
    let mut prev = prox_model(comp, &hs, g, x, &d);
    for _ in 0..PROX_NEWTON_PASSES {
        for i in 0..nb {
            let hii = h[(i, i)];
            if hii <= 0.0 {
                continue;
            }
            let r = g[i] + (hd[i] - hii * d[i]) / alpha;
            let scale = alpha / hii;
            let u = comp.prox(x[i] - r * scale, scale);
            let nd = u - x[i];
            let delta = nd - d[i];
            if delta != 0.0 {
                for j in 0..nb {
                    hd[j] += h[(j, i)] * delta;
                }
                d[i] = nd;
            }
        }
        let cur = prox_model(comp, &hs, g, x, &d);
        if prev - cur < 1e-12 {
            break;
        }
        prev = cur;
    }
    d
}

/// Proximal Newton step: the scaled-prox subproblem with the block Hessian
/// is solved inexactly by coordinate descent, and the step size `alpha`
/// inside the subproblem is backtracked on the composite objective.
pub fn prox_newton_update(p: &ProblemInstance, st: &mut PointState, b: &Block, g: &[f64], ls: &LineSearch) -> Result<UpdateOutcome> {
    let comp = require_composite(p)?;
    let idx = b.indices();
    let xb: Vec<f64> = idx.iter().map(|&i| st.x[i]).collect();
    let h0 = p.block_hessian(st, b)?;
    let (_, ridge) = factor_with_escalation(&h0)?;
    let mut h = h0;
    for i in 0..h.nrows() {
        h[(i, i)] += ridge;
    }
    let lmax = max_eigenvalue(&h);
    let start: Vec<f64> = xb
        .iter()
        .zip(g)
        .map(|(x, gi)| comp.prox(x - gi / lmax, 1.0 / lmax) - x)
        .collect();
    let start_model = prox_model(&comp, &h, g, &xb, &start);
    let total0 = st.value() + comp.value(&xb);
    let mut alpha = 1.0;
    for k in 0..=ls.max_backtracks {
        let init: Vec<f64> = start.iter().map(|v| v * alpha).collect();
        let d = solve_prox_model(&comp, &h, g, &xb, alpha, init);
        let lin: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let y: Vec<f64> = xb.iter().zip(&d).map(|(a, b)| a + b).collect();
        let delta = lin + comp.value(&y) - comp.value(&xb);
        if d.iter().all(|v| *v == 0.0) {
            return Ok(UpdateOutcome {
                step: alpha,
                backtracks: k,
                model: Some((0.0, start_model)),
                ..Default::default()
            });
        }
        let img = p.step_image(b, &d);
        let f_new = p.trial_value(st, b, &d, &img, 1.0);
        if delta < 0.0 && f_new + comp.value(&y) <= total0 + ls.c1 * delta {
            let model = if alpha == 1.0 {
                prox_model(&comp, &h, g, &xb, &d)
            } else {
                prox_model(&comp, &(&h / alpha), g, &xb, &d)
            };
            p.move_block_to(st, b, &y);
            return Ok(UpdateOutcome {
                step: alpha,
                backtracks: k,
                coord_updates: count_changed(&d),
                model: Some((model, start_model)),
                ..Default::default()
            });
        }
        alpha *= 0.5;
    }
    let lb = p.lipschitz_block(b)?;
    let mut out = prox_gradient_update(p, st, b, g, 1.0 / lb)?;
    out.fallback = true;
    out.backtracks = ls.max_backtracks;
    Ok(out)
}

/// Curvature data an update may reuse instead of recomputing it.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlockConstants<'a> {
    pub lb: Option<f64>,
    pub hb: Option<&'a DMatrix<f64>>,
}

/// Dispatches an [`UpdateRule`] and owns its per-run state.
#[derive(Debug, Clone)]
pub struct Updater {
    rule: UpdateRule,
    table: LipschitzEstimateTable,
    diag: Option<Vec<f64>>,
    global_l: Option<f64>,
}

impl Updater {
    pub fn new(rule: UpdateRule) -> Self {
        Self {
            rule,
            table: LipschitzEstimateTable::default(),
            diag: None,
            global_l: None,
        }
    }

    /// Diagonal for [`UpdateRule::GradientDiag`].
    pub fn with_diagonal(mut self, d: Vec<f64>) -> Self {
        self.diag = Some(d);
        self
    }

    /// Global `L` for the `1/L` proximal-gradient variant.
    pub fn with_global_lipschitz(mut self, l: f64) -> Self {
        self.global_l = Some(l);
        self
    }

    pub fn rule(&self) -> UpdateRule {
        self.rule
    }

    pub fn table(&self) -> &LipschitzEstimateTable {
        &self.table
    }

    pub fn step(
        &mut self,
        p: &ProblemInstance,
        st: &mut PointState,
        b: &Block,
        g: &[f64],
        consts: BlockConstants<'_>,
    ) -> Result<UpdateOutcome> {
        if g.len() != b.len() {
            return Err(BcdError::Dimension {
                expected: b.len(),
                got: g.len(),
                context: "block gradient",
            });
        }
        let lb = |p: &ProblemInstance| consts.lb.map_or_else(|| p.lipschitz_block(b), Ok);
        match self.rule {
            UpdateRule::GradientLb => {
                let l = lb(p)?;
                gradient_update(p, st, b, g, l)
            }
            UpdateRule::GradientApproxL => lipschitz_backtrack(p, st, b, g, &mut self.table),
            UpdateRule::GradientDiag(_) => {
                let d = self
                    .diag
                    .as_ref()
                    .ok_or_else(|| BcdError::InvalidArgument("diagonal update needs D".into()))?;
                diagonal_update(p, st, b, g, d)
            }
            UpdateRule::Matrix => match consts.hb {
                Some(h) => matrix_update(p, st, b, g, h),
                None => {
                    let h = p.lipschitz_matrix(b)?;
                    matrix_update(p, st, b, g, &h)
                }
            },
            UpdateRule::MatrixApproxH => match consts.hb {
                Some(h) => matrix_backtrack(p, st, b, g, h, &mut self.table),
                None => {
                    let h = p.lipschitz_matrix(b)?;
                    matrix_backtrack(p, st, b, g, &h, &mut self.table)
                }
            },
            UpdateRule::Newton(ls) => newton_update(p, st, b, g, &ls),
            UpdateRule::TreeExact => tree_update(p, st, b, g, &LineSearch::default()),
            UpdateRule::ProxGradient { global_step } => {
                let step = if global_step {
                    1.0 / self
                        .global_l
                        .ok_or_else(|| BcdError::InvalidArgument("global step needs L".into()))?
                } else {
                    1.0 / lb(p)?
                };
                prox_gradient_update(p, st, b, g, step)
            }
            UpdateRule::TwoMetricProjection(ls) => tmp_update(p, st, b, g, &ls),
            UpdateRule::ProxNewton(ls) => prox_newton_update(p, st, b, g, &ls),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CscMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_quadratic(a: &[f64], n: usize, c: Vec<f64>) -> ProblemInstance {
        let m = DMatrix::from_row_slice(n, n, a);
        ProblemInstance::quadratic(CscMatrix::from_dense(&m), c).unwrap()
    }

    fn random_ls(m: usize, n: usize, seed: u64) -> ProblemInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        ProblemInstance::least_squares(CscMatrix::from_dense(&a), b).unwrap()
    }

    fn random_logistic(m: usize, n: usize, seed: u64) -> ProblemInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let y = (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        ProblemInstance::logistic(CscMatrix::from_dense(&a), y).unwrap()
    }

    #[test]
    fn rule_strings_round_trip() {
        for s in ["grad-lb", "grad-la", "grad-diag:litau", "matrix", "matrix-la", "newton", "tree", "prox-grad", "prox-grad-global", "tmp", "prox-newton"] {
            let r: UpdateRule = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        assert!("grad".parse::<UpdateRule>().is_err());
    }

    #[test]
    fn gradient_step_solves_scalar_quadratic() {
        // f = x^2 is 1/2 * 2 * x^2
        let p = dense_quadratic(&[2.0], 1, vec![0.0]);
        let mut st = p.state(vec![1.0]).unwrap();
        let g = p.block_gradient(&st, &Block::full(1)).unwrap();
        assert_eq!(g, vec![2.0]);
        gradient_update(&p, &mut st, &Block::full(1), &g, 2.0).unwrap();
        assert_eq!(st.x, vec![0.0]);
        let before = st.clone();
        gradient_update(&p, &mut st, &Block::full(1), &[0.0], 2.0).unwrap();
        assert_eq!(st, before);
    }

    #[test]
    fn matrix_update_is_block_optimal_and_reduces_to_gradient() {
        let p = dense_quadratic(&[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0], 3, vec![1.0, -1.0, 2.0]);
        let b = Block::new(vec![0, 1], 3).unwrap();
        let mut st = p.state(vec![0.5, 0.5, 0.5]).unwrap();
        let g = p.block_gradient(&st, &b).unwrap();
        let h = p.lipschitz_matrix(&b).unwrap();
        matrix_update(&p, &mut st, &b, &g, &h).unwrap();
        let g2 = p.block_gradient(&st, &b).unwrap();
        assert!(g2.iter().all(|v| v.abs() < 1e-12));

        let mut s1 = p.state(vec![0.5, 0.5, 0.5]).unwrap();
        let mut s2 = s1.clone();
        let l = 5.0;
        matrix_update(&p, &mut s1, &b, &g, &(DMatrix::identity(2, 2) * l)).unwrap();
        gradient_update(&p, &mut s2, &b, &g, l).unwrap();
        for (a, c) in s1.x.iter().zip(&s2.x) {
            assert!((a - c).abs() < 1e-15);
        }
    }

    #[test]
    fn newton_on_quadratic_equals_matrix_update() {
        let p = dense_quadratic(&[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0], 3, vec![1.0, -1.0, 2.0]);
        let b = Block::full(3);
        let mut s1 = p.state(vec![2.0, -1.0, 0.0]).unwrap();
        let mut s2 = s1.clone();
        let g = p.block_gradient(&s1, &b).unwrap();
        let out = newton_update(&p, &mut s1, &b, &g, &LineSearch::default()).unwrap();
        assert_eq!(out.step, 1.0);
        assert_eq!(out.backtracks, 0);
        matrix_update(&p, &mut s2, &b, &g, &p.lipschitz_matrix(&b).unwrap()).unwrap();
        for (a, c) in s1.x.iter().zip(&s2.x) {
            assert!((a - c).abs() <= 1e-12);
        }
    }

    #[test]
    fn newton_scalar_logistic() {
        let a = CscMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]).unwrap();
        let p = ProblemInstance::logistic(a, vec![1.0]).unwrap();
        let b = Block::full(1);
        let mut st = p.state(vec![0.0]).unwrap();
        let g = p.block_gradient(&st, &b).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15);
        let h = p.block_hessian(&st, &b).unwrap();
        assert!((h[(0, 0)] - 0.25).abs() < 1e-15);
        let out = newton_update(&p, &mut st, &b, &g, &LineSearch::default()).unwrap();
        // d = 2; f(2) = log(1 + e^-2) passes Armijo at alpha = 1
        let f2 = (1.0 + (-2.0f64).exp()).ln();
        assert!(f2 <= 2f64.ln() + 1e-4 * (-1.0));
        assert_eq!(out.step, 1.0);
        assert!((st.x[0] - 2.0).abs() < 1e-12);
        assert!((st.value() - f2).abs() < 1e-12);

        let mut st0 = p.state(vec![0.0]).unwrap();
        let out = newton_update(&p, &mut st0, &b, &[0.0], &LineSearch::default()).unwrap();
        assert_eq!(out.backtracks, 0);
        assert_eq!(st0.x, vec![0.0]);
    }

    #[test]
    fn interpolation_is_safeguarded() {
        // first backtrack: quadratic minimizer of phi(0)=1, phi'(0)=-1, phi(1)=2 is 1/4
        let a = interpolate_step(1.0, -1.0, 1.0, 2.0, None);
        assert!((a - 0.25).abs() < 1e-15);
        let a = interpolate_step(1.0, -1.0, 1.0, 100.0, None);
        assert!((a - 0.1).abs() < 1e-15);
        let a = interpolate_step(1.0, -1.0, 1.0, 0.5001, None);
        assert!((a - 0.9).abs() < 1e-15);
        // cubic through exact cubic data recovers its minimizer
        let phi = |t: f64| 1.0 - t + 2.0 * t * t * t;
        let amin = (1.0f64 / 6.0).sqrt();
        let a = interpolate_step(1.0, -1.0, 0.7, phi(0.7), Some((1.0, phi(1.0))));
        assert!((a - amin.clamp(0.07, 0.63)).abs() < 1e-12);
    }

    #[test]
    fn doubling_reaches_valid_estimate() {
        // separable quadratic with L_b = 4
        let p = dense_quadratic(&[4.0, 0.0, 0.0, 4.0], 2, vec![0.0, 0.0]);
        let b = Block::full(2);
        let mut table = LipschitzEstimateTable::default();
        let mut st = p.state(vec![1.0, -2.0]).unwrap();
        let g = p.block_gradient(&st, &b).unwrap();
        let out = lipschitz_backtrack(&p, &mut st, &b, &g, &mut table).unwrap();
        let l = table.get(&b).unwrap();
        assert!(l == 2.0 || l == 4.0 || l == 8.0, "{l}");
        assert!(l <= 8.0);
        assert!(out.certificate.is_some());

        let mut table = LipschitzEstimateTable::default();
        table.set(&b, 4.0);
        let mut st = p.state(vec![1.0, -2.0]).unwrap();
        for _ in 0..5 {
            let g = p.block_gradient(&st, &b).unwrap();
            lipschitz_backtrack(&p, &mut st, &b, &g, &mut table).unwrap();
        }
        assert_eq!(table.doublings(&b), 0);
        assert_eq!(table.get(&b), Some(4.0));
    }

    #[test]
    fn prox_gradient_examples() {
        let p = dense_quadratic(&[1.0, 0.0, 0.0, 1.0], 2, vec![0.0, 0.0])
            .with_composite(Composite::NonNegative)
            .unwrap();
        let mut st = p.state(vec![0.0, 1.0]).unwrap();
        prox_gradient_update(&p, &mut st, &Block::single(0), &[3.0], 1.0).unwrap();
        assert_eq!(st.x[0], 0.0);

        let p = dense_quadratic(&[1.0], 1, vec![0.0]).with_composite(Composite::L1 { lambda: 0.3 }).unwrap();
        let mut st = p.state(vec![1.5]).unwrap();
        // x - g/L = 1.5 - 0.5 = 1.0, threshold 0.3
        prox_gradient_update(&p, &mut st, &Block::full(1), &[0.5], 1.0).unwrap();
        assert!((st.x[0] - 0.7).abs() < 1e-15);

        let smooth = dense_quadratic(&[3.0, 1.0, 1.0, 2.0], 2, vec![1.0, 0.0]);
        assert_eq!(prox_gradient_update(&smooth, &mut smooth.state(vec![0.0; 2]).unwrap(), &Block::full(2), &[0.0; 2], 1.0), Err(BcdError::NoComposite));
        // an L1 weight of zero is the smooth gradient step
        let zero = smooth.clone().with_composite(Composite::L1 { lambda: 0.0 }).unwrap();
        let mut s1 = zero.state(vec![0.4, -0.2]).unwrap();
        let mut s2 = smooth.state(vec![0.4, -0.2]).unwrap();
        let g = zero.block_gradient(&s1, &Block::full(2)).unwrap();
        prox_gradient_update(&zero, &mut s1, &Block::full(2), &g, 0.25).unwrap();
        gradient_update(&smooth, &mut s2, &Block::full(2), &g, 4.0).unwrap();
        assert_eq!(s1.x, s2.x);
    }

    #[test]
    fn tmp_active_set_example() {
        let (a, w) = tmp_sets(&Composite::NonNegative, &[1e-4, 0.5], &[2.0, -1.0], 0.01);
        assert_eq!(a, vec![0]);
        assert_eq!(w, vec![1]);
    }

    #[test]
    fn tmp_far_from_bounds_is_newton() {
        let p = dense_quadratic(&[4.0, 1.0, 1.0, 3.0], 2, vec![10.0, 12.0])
            .with_composite(Composite::NonNegative)
            .unwrap();
        let b = Block::full(2);
        let mut s1 = p.state(vec![5.0, 5.0]).unwrap();
        let g = p.block_gradient(&s1, &b).unwrap();
        tmp_update(&p, &mut s1, &b, &g, &LineSearch::default()).unwrap();
        let g1 = p.block_gradient(&s1, &b).unwrap();
        assert!(g1.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn tmp_and_prox_newton_fix_stationary_points() {
        // minimizer of 1/2 x^T A x - c^T x on x >= 0 has x1 = 0 with a positive gradient
        let p = dense_quadratic(&[2.0, 0.5, 0.5, 1.0], 2, vec![2.0, -1.0])
            .with_composite(Composite::NonNegative)
            .unwrap();
        let b = Block::full(2);
        let xstar = vec![1.0, 0.0];
        for rule in ["tmp", "prox-newton"] {
            let mut st = p.state(xstar.clone()).unwrap();
            let g = p.block_gradient(&st, &b).unwrap();
            assert!(g[0].abs() < 1e-15 && g[1] > 0.0);
            let mut u = Updater::new(rule.parse().unwrap());
            u.step(&p, &mut st, &b, &g, BlockConstants::default()).unwrap();
            assert_eq!(st.x, xstar, "{rule}");
        }
    }

    #[test]
    fn prox_newton_smooth_and_diagonal_cases() {
        let p = dense_quadratic(&[4.0, 1.0, 1.0, 3.0], 2, vec![1.0, 2.0])
            .with_composite(Composite::L1 { lambda: 0.0 })
            .unwrap();
        let b = Block::full(2);
        let mut st = p.state(vec![0.0, 0.0]).unwrap();
        let g = p.block_gradient(&st, &b).unwrap();
        prox_newton_update(&p, &mut st, &b, &g, &LineSearch::default()).unwrap();
        let xn = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]).lu().solve(&DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert!((st.x[0] - xn[0]).abs() < 1e-6 && (st.x[1] - xn[1]).abs() < 1e-6);

        let lam = 0.5;
        let p = dense_quadratic(&[2.0, 0.0, 0.0, 5.0], 2, vec![3.0, 1.0])
            .with_composite(Composite::L1 { lambda: lam })
            .unwrap();
        let mut st = p.state(vec![0.0, 0.0]).unwrap();
        let g = p.block_gradient(&st, &b).unwrap();
        let out = prox_newton_update(&p, &mut st, &b, &g, &LineSearch::default()).unwrap();
        // separable closed form: soft(c_i, lam) / A_ii
        assert!((st.x[0] - 2.5 / 2.0).abs() < 1e-14);
        assert!((st.x[1] - 0.5 / 5.0).abs() < 1e-14);
        let (m, start) = out.model.unwrap();
        assert!(m <= start + 1e-14);
    }

    #[test]
    fn tree_update_zeroes_block_gradient() {
        let n = 6;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let p = ProblemInstance::quadratic(CscMatrix::from_triplets(n, n, &t).unwrap(), vec![1.0; n]).unwrap();
        let b = Block::new(vec![0, 1, 2, 4], n).unwrap();
        let mut st = p.state(vec![0.3; n]).unwrap();
        let full0 = p.gradient(&st);
        let g = p.block_gradient(&st, &b).unwrap();
        tree_update(&p, &mut st, &b, &g, &LineSearch::default()).unwrap();
        let g1 = p.block_gradient(&st, &b).unwrap();
        let n0 = full0.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(g1.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-8 * n0);
    }

    fn check_monotone_and_locality(p: &ProblemInstance, rule: &str, b: &Block, x0: Vec<f64>) {
        let mut st = p.state(x0).unwrap();
        let mut u = Updater::new(rule.parse().unwrap());
        for _ in 0..10 {
            let before = st.clone();
            let f0 = p.total_value(&st);
            let g = p.block_gradient(&st, b).unwrap();
            let out = u.step(p, &mut st, b, &g, BlockConstants::default()).unwrap();
            let f1 = p.total_value(&st);
            assert!(f1 <= f0 + 1e-10 * (1.0 + f0.abs()), "{rule}: {f0} -> {f1}");
            if let Some(c) = out.certificate {
                assert!(f0 - f1 >= c - 1e-10 * (1.0 + f0.abs()), "{rule}: decrease {} < {c}", f0 - f1);
            }
            for i in 0..p.n() {
                if !b.contains(i) {
                    assert_eq!(st.x[i].to_bits(), before.x[i].to_bits());
                }
            }
            if p.composite().nonnegative() {
                assert!(st.x.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn smooth_updates_descend_and_stay_local() {
        let b = Block::new(vec![1, 3, 4], 6).unwrap();
        for (k, p) in [random_ls(10, 6, 1), random_logistic(12, 6, 2)].iter().enumerate() {
            for rule in ["grad-lb", "grad-la", "matrix", "matrix-la", "newton"] {
                check_monotone_and_locality(p, rule, &b, vec![0.1 * k as f64; 6]);
            }
        }
    }

    #[test]
    fn proximal_updates_descend_and_stay_feasible() {
        let b = Block::new(vec![0, 2, 3, 5], 6).unwrap();
        for comp in [Composite::NonNegative, Composite::L1 { lambda: 0.3 }, Composite::NonNegativeL1 { lambda: 0.3 }] {
            for base in [random_ls(10, 6, 3), random_logistic(12, 6, 4)] {
                let p = base.with_composite(comp).unwrap();
                for rule in ["prox-grad", "tmp", "prox-newton"] {
                    check_monotone_and_locality(&p, rule, &b, vec![0.2; 6]);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn gradient_progress_bound_on_random_least_squares(seed in 0u64..2000) {
            let p = random_ls(8, 5, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = crate::blocking::sample_tau_nice(5, 3, &mut rng).unwrap();
            let mut st = p.state(x).unwrap();
            let g = p.block_gradient(&st, &b).unwrap();
            let f0 = st.value();
            let lb = p.lipschitz_block(&b).unwrap();
            let out = gradient_update(&p, &mut st, &b, &g, lb).unwrap();
            prop_assert!(f0 - st.value() >= out.certificate.unwrap() - 1e-10);
        }
    }
}

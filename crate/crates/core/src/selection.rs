//! Block selection rules.
//!
//! Scores are the quantity each rule maximizes: `||g_b||^2` for GS,
//! `||g_b||^2 / L_b` for GSL, `sum g_i^2 / D_i` for GSD and
//! `g_b^T H_b^{-1} g_b` for GSQ on fixed blocks. The variable-block GSQ and
//! proximal rules report the (non-negative) model decrease itself.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::blocking::{sample_tau_nice, Block, FixedPartition};
use crate::error::{BcdError, Result};
use crate::linalg::{factor_spd, max_eigenvalue_sparse};
use crate::objectives::{Composite, LipschitzInfo, ProblemInstance};
use crate::sparse::CscMatrix;

/// Diagonal scaling used by the GSD rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DChoice {
    /// `D_i = L_i`
    Li,
    /// `D_i = L_i * tau`
    LiTau,
    /// `D_i = sum_j |M_ij|`
    Sirt,
}

impl DChoice {
    /// Per-coordinate `D_i` for blocks of (maximum) size `tau`.
    pub fn diagonal(&self, info: &LipschitzInfo, tau: usize) -> Vec<f64> {
        match self {
            DChoice::Li => info.per_coordinate.clone(),
            DChoice::LiTau => info.per_coordinate.iter().map(|l| l * tau as f64).collect(),
            DChoice::Sirt => info.row_sums.clone(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            DChoice::Li => "li",
            DChoice::LiTau => "litau",
            DChoice::Sirt => "sirt",
        }
    }
}

impl FromStr for DChoice {
    type Err = BcdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "li" => Ok(DChoice::Li),
            "litau" => Ok(DChoice::LiTau),
            "sirt" => Ok(DChoice::Sirt),
            _ => Err(BcdError::InvalidArgument(format!("unknown diagonal choice `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GsqApprox {
    Exact,
    Iht { iters: usize },
}

pub const DEFAULT_IHT_ITERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    Cyclic,
    Random,
    LipschitzWeighted,
    Gs,
    Gsl,
    Gsd(DChoice),
    Gsq(GsqApprox),
    GsqProx,
}

impl SelectionRule {
    pub fn is_greedy(&self) -> bool {
        !matches!(self, SelectionRule::Cyclic | SelectionRule::Random | SelectionRule::LipschitzWeighted)
    }
}

impl fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionRule::Cyclic => write!(f, "cyclic"),
            SelectionRule::Random => write!(f, "random"),
            SelectionRule::LipschitzWeighted => write!(f, "lipschitz"),
            SelectionRule::Gs => write!(f, "gs"),
            SelectionRule::Gsl => write!(f, "gsl"),
            SelectionRule::Gsd(d) => write!(f, "gsd:{}", d.name()),
            SelectionRule::Gsq(GsqApprox::Exact) => write!(f, "gsq:exact"),
            SelectionRule::Gsq(GsqApprox::Iht { iters }) if *iters == DEFAULT_IHT_ITERS => write!(f, "gsq:iht"),
            SelectionRule::Gsq(GsqApprox::Iht { iters }) => write!(f, "gsq:iht:{iters}"),
            SelectionRule::GsqProx => write!(f, "gsq-prox"),
        }
    }
}

impl FromStr for SelectionRule {
    type Err = BcdError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || BcdError::InvalidArgument(format!("unknown selection rule `{s}`"));
        Ok(match s {
            "cyclic" => SelectionRule::Cyclic,
            "random" => SelectionRule::Random,
            "lipschitz" => SelectionRule::LipschitzWeighted,
            "gs" => SelectionRule::Gs,
            "gsl" => SelectionRule::Gsl,
            "gsq-prox" => SelectionRule::GsqProx,
            "gsq:exact" => SelectionRule::Gsq(GsqApprox::Exact),
            "gsq:iht" => SelectionRule::Gsq(GsqApprox::Iht {
                iters: DEFAULT_IHT_ITERS,
            }),
            _ => {
                if let Some(d) = s.strip_prefix("gsd:") {
                    SelectionRule::Gsd(d.parse()?)
                } else if let Some(k) = s.strip_prefix("gsq:iht:") {
                    let iters: usize = k.parse().map_err(|_| bad())?;
                    if iters == 0 {
                        return Err(BcdError::InvalidArgument("IHT needs at least one iteration".into()));
                    }
                    SelectionRule::Gsq(GsqApprox::Iht { iters })
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

/// A selected block with the value its rule maximized.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBlock {
    pub block: Block,
    pub score: f64,
    /// Position in the partition for fixed blocks.
    pub index: Option<usize>,
}

/// Curvature data of every block of a fixed partition, computed once.
///
/// All bounds here are independent of the iterate, so the GSQ factors are
/// never refreshed.
#[derive(Debug, Clone)]
pub struct PartitionCurvature {
    pub lb: Vec<f64>,
    pub hb: Vec<DMatrix<f64>>,
    chol: Vec<Cholesky<f64, Dyn>>,
}

impl PartitionCurvature {
    pub fn new(p: &ProblemInstance, partition: &FixedPartition, with_matrices: bool) -> Result<Self> {
        let mut lb = Vec::with_capacity(partition.len());
        let mut hb = Vec::new();
        let mut chol = Vec::new();
        for b in partition.blocks() {
            lb.push(p.lipschitz_block(b)?);
            if with_matrices {
                let h = p.lipschitz_matrix(b)?;
                chol.push(factor_spd(&h)?);
                hb.push(h);
            }
        }
        Ok(Self { lb, hb, chol })
    }

    pub fn has_matrices(&self) -> bool {
        !self.chol.is_empty()
    }

    /// `g^T H_k^{-1} g` with the cached factor.
    pub fn inv_quad(&self, k: usize, g: &[f64]) -> f64 {
        let gv = DVector::from_column_slice(g);
        gv.dot(&self.chol[k].solve(&gv))
    }

    /// `H_k^{-1} g` with the cached factor.
    pub fn solve(&self, k: usize, g: &[f64]) -> Vec<f64> {
        self.chol[k].solve(&DVector::from_column_slice(g)).as_slice().to_vec()
    }
}

fn gather(g: &[f64], b: &Block) -> Vec<f64> {
    b.indices().iter().map(|&i| g[i]).collect()
}

fn sq_norm_on(g: &[f64], b: &Block) -> f64 {
    b.indices().iter().map(|&i| g[i] * g[i]).sum()
}

/// True when `(s, b)` beats the incumbent: higher score, then lower first index.
fn better(s: f64, b: &Block, best: Option<(f64, &Block)>) -> bool {
    match best {
        None => true,
        Some((bs, bb)) => s > bs || (s == bs && b.indices().first() < bb.indices().first()),
    }
}

/// Indices of the `tau` largest keys, ties to the lower index, returned sorted.
fn top_tau(keys: &[f64], tau: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    let cmp = |a: &usize, b: &usize| keys[*b].total_cmp(&keys[*a]).then(a.cmp(b));
    if tau < order.len() {
        order.select_nth_unstable_by(tau, cmp);
        order.truncate(tau);
    }
    order.sort_unstable();
    order
}

/// GS over variable blocks: the `tau` largest `|g_i|`.
pub fn select_variable_gs(grad: &[f64], tau: usize) -> Result<ScoredBlock> {
    check_tau(grad.len(), tau)?;
    let keys: Vec<f64> = grad.iter().map(|g| g * g).collect();
    let idx = top_tau(&keys, tau);
    let score = idx.iter().map(|&i| keys[i]).sum();
    Ok(ScoredBlock {
        block: Block::new(idx, grad.len())?,
        score,
        index: None,
    })
}

/// GSD over variable blocks: the `tau` largest `g_i^2 / d_i`.
pub fn select_variable_gsd(grad: &[f64], d: &[f64], tau: usize) -> Result<ScoredBlock> {
    check_tau(grad.len(), tau)?;
    if d.len() != grad.len() {
        return Err(BcdError::Dimension {
            expected: grad.len(),
            got: d.len(),
            context: "GSD diagonal",
        });
    }
    if let Some(i) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(BcdError::InvalidArgument(format!("GSD weight d[{i}] must be positive")));
    }
    let keys: Vec<f64> = grad.iter().zip(d).map(|(g, d)| g * g / d).collect();
    let idx = top_tau(&keys, tau);
    let score = idx.iter().map(|&i| keys[i]).sum();
    Ok(ScoredBlock {
        block: Block::new(idx, grad.len())?,
        score,
        index: None,
    })
}

fn check_tau(n: usize, tau: usize) -> Result<()> {
    if tau == 0 || tau > n {
        return Err(BcdError::InvalidArgument(format!("block size {tau} outside [1, {n}]")));
    }
    Ok(())
}

/// Quadratic-model decrease `max_d -(g_S^T d + 1/2 d^T M_SS d)` over a
/// support, i.e. `1/2 g_S^T M_SS^{-1} g_S`.
pub fn quadratic_model_score(m: &CscMatrix, grad: &[f64], support: &[usize]) -> Result<f64> {
    if support.is_empty() {
        return Ok(0.0);
    }
    let h = m.dense_block(support, support);
    let g: Vec<f64> = support.iter().map(|&i| grad[i]).collect();
    let c = factor_spd(&h)?;
    let gv = DVector::from_vec(g);
    Ok(0.5 * gv.dot(&c.solve(&gv)))
}

/// Preprocessed bound matrix for the IHT rule.
#[derive(Debug, Clone)]
pub struct IhtModel {
    m: CscMatrix,
    eta: f64,
    diag: Vec<f64>,
}

/// Power iterations used for the IHT step size.
pub const IHT_POWER_ITERS: usize = 20;

impl IhtModel {
    pub fn new(m: CscMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(BcdError::InvalidArgument("IHT model must be square".into()));
        }
        let diag: Vec<f64> = (0..m.ncols()).map(|i| m.get(i, i)).collect();
        if let Some(i) = diag.iter().position(|&v| !(v > 0.0)) {
            return Err(BcdError::InvalidArgument(format!("IHT model has non-positive diagonal at {i}")));
        }
        let eta = 1.0 / max_eigenvalue_sparse(&m, IHT_POWER_ITERS);
        Ok(Self { m, eta, diag })
    }

    pub fn matrix(&self) -> &CscMatrix {
        &self.m
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn step(&self) -> f64 {
        self.eta
    }
}

/// Approximate GSQ over variable blocks by iterative hard thresholding on
/// `min_{||d||_0 <= tau} g^T d + 1/2 d^T M d`.
///
/// The iteration starts from the better of the GS and diagonal-ratio
/// supports and the best support seen is returned, scored by the exact
/// minimizer restricted to it.
pub fn select_variable_gsq_iht(grad: &[f64], model: &IhtModel, tau: usize, iters: usize) -> Result<ScoredBlock> {
    let n = grad.len();
    check_tau(n, tau)?;
    if model.m.ncols() != n {
        return Err(BcdError::Dimension {
            expected: n,
            got: model.m.ncols(),
            context: "IHT model",
        });
    }
    let iters = iters.max(1);
    let ratio: Vec<f64> = grad.iter().zip(&model.diag).map(|(g, d)| g * g / d).collect();
    let mag: Vec<f64> = grad.iter().map(|g| g * g).collect();
    let s_ratio = top_tau(&ratio, tau);
    let s_gs = top_tau(&mag, tau);
    let sc_ratio = quadratic_model_score(&model.m, grad, &s_ratio)?;
    let sc_gs = quadratic_model_score(&model.m, grad, &s_gs)?;
    let (mut best, mut best_score) = if sc_gs > sc_ratio {
        (s_gs, sc_gs)
    } else {
        (s_ratio, sc_ratio)
    };
    let mut d = vec![0.0; n];
    for &i in &best {
        d[i] = -grad[i] / model.diag[i];
    }
    let mut support = best.clone();
    let mut md = vec![0.0; n];
    for _ in 0..iters {
        // M d from the tau-sparse iterate
        md.iter_mut().for_each(|v| *v = 0.0);
        let vals: Vec<f64> = support.iter().map(|&i| d[i]).collect();
        model.m.add_cols_mul(&support, &vals, 1.0, &mut md);
        let trial: Vec<f64> = (0..n).map(|i| d[i] - model.eta * (grad[i] + md[i])).collect();
        let keys: Vec<f64> = trial.iter().map(|v| v * v).collect();
        let next = top_tau(&keys, tau);
        d.iter_mut().for_each(|v| *v = 0.0);
        for &i in &next {
            d[i] = trial[i];
        }
        if next != support {
            let sc = quadratic_model_score(&model.m, grad, &next)?;
            if sc > best_score {
                best_score = sc;
                best = next.clone();
            }
        }
        support = next;
    }
    Ok(ScoredBlock {
        block: Block::new(best, n)?,
        score: best_score,
        index: None,
    })
}

/// Per-coordinate proximal model decrease with curvature `l`:
/// `min_d g d + l/2 d^2 + g_i(x + d) - g_i(x)` (non-positive).
pub fn prox_coordinate_model(composite: &Composite, x: f64, g: f64, l: f64) -> f64 {
    let z = composite.prox(x - g / l, 1.0 / l);
    let d = z - x;
    g * d + 0.5 * l * d * d + composite.scalar_value(z) - composite.scalar_value(x)
}

fn prox_block_model(composite: &Composite, x: &[f64], grad: &[f64], b: &Block, l: f64) -> f64 {
    b.indices()
        .iter()
        .map(|&i| prox_coordinate_model(composite, x[i], grad[i], l))
        .sum()
}

/// Proximal GSL-q over a fixed partition: the block with the most negative
/// model `g_b^T d + L_b/2 ||d||^2 + g(x_b + d) - g(x_b)`. The score is the
/// decrease (negated model value).
pub fn select_proximal_gsq_fixed(
    partition: &FixedPartition,
    x: &[f64],
    grad: &[f64],
    lb: &[f64],
    composite: &Composite,
) -> Result<ScoredBlock> {
    let mut best: Option<(f64, usize)> = None;
    for (k, b) in partition.blocks().iter().enumerate() {
        let s = -prox_block_model(composite, x, grad, b, lb[k]);
        if better(s, b, best.map(|(bs, bk)| (bs, &partition.blocks()[bk]))) {
            best = Some((s, k));
        }
    }
    let (score, k) = best.ok_or_else(|| BcdError::InvalidArgument("empty partition".into()))?;
    Ok(ScoredBlock {
        block: partition.blocks()[k].clone(),
        score: score.max(0.0),
        index: Some(k),
    })
}

/// Proximal GS-q over variable blocks with coordinate-wise constants: the
/// `tau` coordinates with the most negative models. Ties favour coordinates
/// where `g_i` is differentiable at `x_i`.
pub fn select_proximal_gsq_variable(
    x: &[f64],
    grad: &[f64],
    li: &[f64],
    tau: usize,
    composite: &Composite,
) -> Result<ScoredBlock> {
    let n = grad.len();
    check_tau(n, tau)?;
    let vals: Vec<f64> = (0..n).map(|i| -prox_coordinate_model(composite, x[i], grad[i], li[i])).collect();
    let kink = |i: usize| match composite {
        Composite::None => false,
        Composite::L1 { .. } => x[i] == 0.0,
        _ => x[i] <= 0.0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        vals[b]
            .total_cmp(&vals[a])
            .then(kink(a).cmp(&kink(b)))
            .then(a.cmp(&b))
    });
    order.truncate(tau);
    let score = order.iter().map(|&i| vals[i]).sum::<f64>().max(0.0);
    Ok(ScoredBlock {
        block: Block::new(order, n)?,
        score,
        index: None,
    })
}

/// Stateful selector for fixed partitions: owns the cyclic cursor and the
/// random stream.
#[derive(Debug, Clone)]
pub struct Selector {
    rule: SelectionRule,
    cursor: usize,
    rng: ChaCha8Rng,
    weights: Option<WeightedIndex<f64>>,
}

impl Selector {
    pub fn new(rule: SelectionRule, seed: u64) -> Self {
        Self {
            rule,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            weights: None,
        }
    }

    pub fn rule(&self) -> SelectionRule {
        self.rule
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Picks a block of `partition`. `grad` is the full gradient (ignored by
    /// the non-greedy rules), `diag` the GSD weights when the rule needs them
    /// and `x`/`composite` are used by the proximal rule only.
    #[allow(clippy::too_many_arguments)]
    pub fn select_fixed(
        &mut self,
        partition: &FixedPartition,
        grad: &[f64],
        curv: &PartitionCurvature,
        info: &LipschitzInfo,
        x: &[f64],
        composite: &Composite,
    ) -> Result<ScoredBlock> {
        let blocks = partition.blocks();
        if blocks.is_empty() {
            return Err(BcdError::InvalidArgument("empty partition".into()));
        }
        let pick = |k: usize| ScoredBlock {
            block: blocks[k].clone(),
            score: sq_norm_on(grad, &blocks[k]),
            index: Some(k),
        };
        match self.rule {
            SelectionRule::Cyclic => {
                let k = self.cursor;
                self.cursor = (self.cursor + 1) % blocks.len();
                Ok(pick(k))
            }
            SelectionRule::Random => {
                let k = self.rng.random_range(0..blocks.len());
                Ok(pick(k))
            }
            SelectionRule::LipschitzWeighted => {
                if self.weights.is_none() {
                    let w: Vec<f64> = blocks
                        .iter()
                        .map(|b| b.indices().iter().map(|&i| info.per_coordinate[i]).sum())
                        .collect();
                    self.weights =
                        Some(WeightedIndex::new(&w).map_err(|e| BcdError::InvalidArgument(e.to_string()))?);
                }
                let k = self.weights.as_ref().unwrap().sample(&mut self.rng);
                Ok(pick(k))
            }
            SelectionRule::GsqProx => select_proximal_gsq_fixed(partition, x, grad, &curv.lb, composite),
            rule => {
                let tau = partition.tau();
                let d = match rule {
                    SelectionRule::Gsd(c) => Some(c.diagonal(info, tau)),
                    _ => None,
                };
                if matches!(rule, SelectionRule::Gsq(_)) && !curv.has_matrices() {
                    return Err(BcdError::InvalidArgument("GSQ needs block matrices".into()));
                }
                let mut best: Option<(f64, usize)> = None;
                for (k, b) in blocks.iter().enumerate() {
                    let s = match rule {
                        SelectionRule::Gs => sq_norm_on(grad, b),
                        SelectionRule::Gsl => sq_norm_on(grad, b) / curv.lb[k],
                        SelectionRule::Gsd(_) => {
                            let d = d.as_ref().unwrap();
                            b.indices().iter().map(|&i| grad[i] * grad[i] / d[i]).sum()
                        }
                        SelectionRule::Gsq(_) => curv.inv_quad(k, &gather(grad, b)),
                        _ => unreachable!(),
                    };
                    if better(s, b, best.map(|(bs, bk)| (bs, &blocks[bk]))) {
                        best = Some((s, k));
                    }
                }
                let (score, k) = best.unwrap();
                Ok(ScoredBlock {
                    block: blocks[k].clone(),
                    score,
                    index: Some(k),
                })
            }
        }
    }

    /// Variable-block selection of `tau` coordinates.
    pub fn select_variable(
        &mut self,
        grad: &[f64],
        tau: usize,
        info: &LipschitzInfo,
        iht: Option<&IhtModel>,
        x: &[f64],
        composite: &Composite,
    ) -> Result<ScoredBlock> {
        match self.rule {
            SelectionRule::Random => {
                let block = sample_tau_nice(grad.len(), tau, &mut self.rng)?;
                let score = sq_norm_on(grad, &block);
                Ok(ScoredBlock {
                    block,
                    score,
                    index: None,
                })
            }
            SelectionRule::Gs => select_variable_gs(grad, tau),
            SelectionRule::Gsd(c) => select_variable_gsd(grad, &c.diagonal(info, tau), tau),
            SelectionRule::Gsq(GsqApprox::Iht { iters }) => {
                let model = iht.ok_or_else(|| BcdError::InvalidArgument("IHT needs a bound matrix".into()))?;
                select_variable_gsq_iht(grad, model, tau, iters)
            }
            SelectionRule::GsqProx => select_proximal_gsq_variable(x, grad, &info.per_coordinate, tau, composite),
            rule => Err(BcdError::Unsupported(format!("rule `{rule}` needs fixed blocks"))),
        }
    }
}

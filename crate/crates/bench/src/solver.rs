//! The block coordinate descent loop and its reference optima.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use bcd_core::blocking::{
    greedy_forest, partition_fixed, random_forest, red_black_partition, comb_half, Block, DependencyGraph,
    FixedPartition, PartitionStrategy,
};
use bcd_core::selection::{DChoice, GsqApprox, IhtModel, PartitionCurvature, ScoredBlock, SelectionRule, Selector};
use bcd_core::updates::{BlockConstants, UpdateOutcome, UpdateRule, Updater};
use bcd_core::{Composite, Kind, LipschitzInfo, ProblemInstance};
use rand::seq::index::sample_weighted;
use rand::seq::SliceRandom;

use crate::config::{
    Blocking, CompositeSpec, FStarMode, ProblemSpec, SolverConfig, LONG_RUN_MULTIPLIER, PAPER_SCALE_LAMBDA,
};
use crate::datasets::{gen_dataset, DatasetId, Scale};
use crate::error::{BenchError, Result};
use crate::reference::{
    choose_nonneg_l1_weight, composite_reference, direct_solve, smooth_lipschitz, strong_convexity, Reference,
    ReferenceSource,
};
use crate::trace::{first_stable_identification, log_gap_slope, AnalysisReport, Trace, TraceRow, Violation, ViolationKind};

/// Iterations between full recomputations of the linear cache.
pub const REFRESH_EVERY: usize = 100;
/// Relative slack of the monotonicity and certificate checks.
pub const CHECK_TOL: f64 = 1e-10;
/// Block size of long reference runs.
pub const REFERENCE_TAU: usize = 100;

/// Everything the loop knows about one iteration, handed to observers.
pub struct IterView<'a> {
    pub iter: usize,
    pub problem: &'a ProblemInstance,
    pub x_before: &'a [f64],
    pub x_after: &'a [f64],
    pub grad_before: &'a [f64],
    pub grad_after: &'a [f64],
    /// smooth part `f` before and after the update
    pub f_before: f64,
    pub f_after: f64,
    /// `f + g` before and after the update
    pub obj_before: f64,
    pub obj_after: f64,
    pub selected: &'a ScoredBlock,
    pub outcome: &'a UpdateOutcome,
    pub partition: Option<&'a FixedPartition>,
    pub curvature: Option<&'a PartitionCurvature>,
    pub info: &'a LipschitzInfo,
}

pub type Observer<'o> = dyn FnMut(&IterView<'_>) + 'o;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub report: AnalysisReport,
    pub x: Vec<f64>,
}

impl RunOutput {
    pub fn final_gap(&self) -> f64 {
        self.trace.rows.last().map_or(f64::NAN, |r| r.gap)
    }
}

/// A generated problem with its reference solution.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub problem: ProblemInstance,
    pub reference: Reference,
    pub lambda: Option<f64>,
}

type Cache = Mutex<HashMap<String, (Option<f64>, Reference)>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cached(key: String, compute: impl FnOnce() -> Result<(Option<f64>, Reference)>) -> Result<(Option<f64>, Reference)> {
    if let Some(v) = cache().lock().expect("reference cache").get(&key) {
        return Ok(v.clone());
    }
    let v = compute()?;
    cache().lock().expect("reference cache").insert(key, v.clone());
    Ok(v)
}

/// Generates the problem of `spec` with its separable term resolved.
pub fn build_problem(spec: &ProblemSpec) -> Result<(ProblemInstance, Option<f64>)> {
    let smooth = gen_dataset(spec.dataset, spec.scale, spec.seed)?;
    match (spec.composite.fixed(), spec.composite) {
        (Some(Composite::None), _) => Ok((smooth, None)),
        (Some(c), _) => Ok((smooth.with_composite(c)?, Some(c.lambda()))),
        (None, CompositeSpec::NonNegativeL1Auto { support }) => {
            let lam = match spec.scale {
                Scale::Paper => PAPER_SCALE_LAMBDA,
                Scale::Desk => lambda_for(spec, &smooth, support)?,
            };
            Ok((smooth.with_composite(Composite::NonNegativeL1 { lambda: lam })?, Some(lam)))
        }
        (None, _) => unreachable!("only the automatic weight needs a search"),
    }
}

fn lambda_for(spec: &ProblemSpec, smooth: &ProblemInstance, support: usize) -> Result<f64> {
    let key = format!("lambda:{:?}:{:?}:{}:{}", spec.dataset, spec.scale, spec.seed, support);
    let (lam, _) = cached(key, || {
        let (lam, r) = choose_nonneg_l1_weight(smooth, support)?;
        Ok((Some(lam), r))
    })?;
    Ok(lam.expect("weight search stores its weight"))
}

/// The reference run used when no direct solve exists: Newton updates on
/// greedy variable blocks with the SIRT-style diagonal scores (proximal
/// Newton with the proximal score for separable problems).
pub fn long_run_config(spec: ProblemSpec, n: usize, iters: usize) -> SolverConfig {
    let composite = spec.composite.is_some();
    let ls = Default::default();
    SolverConfig {
        problem: spec,
        blocking: Blocking::Variable {
            tau: REFERENCE_TAU.min(n),
        },
        selection: if composite {
            SelectionRule::GsqProx
        } else {
            SelectionRule::Gsd(DChoice::Sirt)
        },
        update: if composite {
            UpdateRule::ProxNewton(ls)
        } else {
            UpdateRule::Newton(ls)
        },
        iters,
        seed: spec.seed,
        f_star_mode: FStarMode::LongRun { multiplier: 1 },
        wall_time: false,
    }
}

fn has_constant_hessian(p: &ProblemInstance) -> bool {
    p.is_quadratic() || p.kind() == Kind::LeastSquares
}

/// Reference optimum for `p` per `mode`.
pub fn reference_for(spec: &ProblemSpec, p: &ProblemInstance, mode: FStarMode, iters: usize) -> Result<Reference> {
    let composite = p.composite().is_some();
    let mode = match mode {
        FStarMode::Auto if has_constant_hessian(p) => FStarMode::DirectSolve,
        FStarMode::Auto => FStarMode::LongRun {
            multiplier: LONG_RUN_MULTIPLIER,
        },
        m => m,
    };
    let key = format!("ref:{}:{:?}:{}", serde_json::to_string(spec)?, mode, iters);
    let (_, r) = cached(key, || {
        let r = match mode {
            FStarMode::DirectSolve if composite => composite_reference(p, None)?,
            FStarMode::DirectSolve => direct_solve(p)?,
            FStarMode::LongRun { multiplier } => {
                let cfg = long_run_config(*spec, p.n(), multiplier.max(1) * iters.max(1));
                let provisional = Reference {
                    f_star: f64::INFINITY,
                    x_star: None,
                    mu: None,
                    source: ReferenceSource::LongRun,
                };
                let out = run_instance(p, &cfg, &provisional, None)?;
                let best = out.trace.rows.iter().map(|r| r.obj).fold(f64::INFINITY, f64::min);
                Reference {
                    f_star: best,
                    x_star: Some(out.x),
                    mu: strong_convexity(p),
                    source: ReferenceSource::LongRun,
                }
            }
            FStarMode::Auto => unreachable!(),
        };
        Ok((None, r))
    })?;
    Ok(r)
}

/// Builds the problem and its reference.
pub fn prepare(config: &SolverConfig) -> Result<Prepared> {
    let (problem, lambda) = build_problem(&config.problem)?;
    let reference = reference_for(&config.problem, &problem, config.f_star_mode, config.iters)?;
    Ok(Prepared {
        problem,
        reference,
        lambda,
    })
}

/// Checks, prepares and executes `config`.
pub fn run(config: &SolverConfig) -> Result<RunOutput> {
    config.check()?;
    let prep = prepare(config)?;
    let mut out = run_instance(&prep.problem, config, &prep.reference, None)?;
    out.report.lambda = prep.lambda;
    Ok(out)
}

/// Two-block partition of a lattice problem into the comb-shaped forests,
/// restricted to its unlabeled variables.
pub fn lattice_tree_partition(p: &ProblemInstance) -> Result<FixedPartition> {
    let (graph, nodes) = match (p.label_graph(), p.node_of_var()) {
        (Some(g), Some(nodes)) => (g, nodes),
        _ => return Err(BenchError::Incompatible("tree partitions need a label graph".into())),
    };
    let (rows, cols) = graph
        .lattice
        .ok_or_else(|| BenchError::Incompatible("tree partitions need a lattice".into()))?;
    let mut halves = [Vec::new(), Vec::new()];
    for (v, &node) in nodes.iter().enumerate() {
        halves[comb_half(rows, node / cols, node % cols)].push(v);
    }
    two_block_partition(halves, p.n(), PartitionStrategy::Tree)
}

fn two_block_partition(halves: [Vec<usize>; 2], n: usize, strategy: PartitionStrategy) -> Result<FixedPartition> {
    let blocks: Vec<Block> = halves
        .into_iter()
        .filter(|h| !h.is_empty())
        .map(|h| Block::new(h, n))
        .collect::<bcd_core::Result<_>>()?;
    let tau = blocks.iter().map(Block::len).max().unwrap_or(0);
    Ok(FixedPartition::new(blocks, n, strategy, tau)?)
}

/// Red-black partition: lattice parity when the problem is a lattice,
/// greedy colouring of the dependency graph otherwise.
pub fn red_black_for(p: &ProblemInstance, g: &DependencyGraph) -> Result<FixedPartition> {
    if let (Some(lg), Some(nodes)) = (p.label_graph(), p.node_of_var()) {
        if let Some((_, cols)) = lg.lattice {
            let mut halves = [Vec::new(), Vec::new()];
            for (v, &node) in nodes.iter().enumerate() {
                halves[(node / cols + node % cols) % 2].push(v);
            }
            return two_block_partition(halves, p.n(), PartitionStrategy::RedBlack);
        }
    }
    Ok(red_black_partition(g))
}

enum Blocks {
    Partition {
        part: FixedPartition,
        curv: PartitionCurvature,
    },
    Variable {
        tau: usize,
        perm: Vec<usize>,
        pos: usize,
    },
    Forest {
        graph: DependencyGraph,
        greedy: bool,
    },
}

fn needs_row_sums(c: &SolverConfig) -> bool {
    matches!(c.selection, SelectionRule::Gsd(DChoice::Sirt)) || c.update == UpdateRule::GradientDiag(DChoice::Sirt)
}

fn gather(v: &[f64], b: &Block) -> Vec<f64> {
    b.indices().iter().map(|&i| v[i]).collect()
}

/// Score vector the smooth rules rank: the gradient, or the minimum-norm
/// subgradient when a separable term is present.
fn ranking_gradient(comp: &Composite, x: &[f64], g: &[f64]) -> Vec<f64> {
    if comp.is_some() {
        x.iter().zip(g).map(|(&xi, &gi)| comp.min_norm_subgradient(xi, gi)).collect()
    } else {
        g.to_vec()
    }
}

fn grad_norm(comp: &Composite, x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| comp.min_norm_subgradient(xi, gi).abs())
        .fold(0.0, f64::max)
}

/// Runs `config` on `p` against `reference`. `config.problem` only labels
/// the run here; `p` is used as given.
pub fn run_instance(
    p: &ProblemInstance,
    config: &SolverConfig,
    reference: &Reference,
    mut observer: Option<&mut Observer<'_>>,
) -> Result<RunOutput> {
    config.check()?;
    let n = p.n();
    let comp = p.composite();
    if config.update == UpdateRule::TreeExact && !p.is_quadratic() {
        return Err(BenchError::Incompatible("the tree update needs a quadratic".into()));
    }
    let info = LipschitzInfo {
        per_coordinate: p.coord_lipschitz().to_vec(),
        row_sums: if needs_row_sums(config) {
            p.lipschitz_info().row_sums
        } else {
            Vec::new()
        },
    };
    let want_matrices = matches!(config.selection, SelectionRule::Gsq(GsqApprox::Exact))
        || matches!(config.update, UpdateRule::Matrix | UpdateRule::MatrixApproxH);
    let mut blocks = match config.blocking {
        Blocking::Fixed { strategy, tau } => {
            let part = partition_fixed(n, tau.min(n), strategy, &info.per_coordinate)?;
            let curv = PartitionCurvature::new(p, &part, want_matrices)?;
            Blocks::Partition { part, curv }
        }
        Blocking::RedBlack | Blocking::TreePartition => {
            let part = if config.blocking == Blocking::RedBlack {
                red_black_for(p, &DependencyGraph::from_problem(p))?
            } else {
                lattice_tree_partition(p)?
            };
            let curv = PartitionCurvature::new(p, &part, want_matrices)?;
            Blocks::Partition { part, curv }
        }
        Blocking::Variable { tau } => {
            if tau > n {
                return Err(BenchError::Incompatible(format!("block size {tau} exceeds n = {n}")));
            }
            Blocks::Variable {
                tau,
                perm: (0..n).collect(),
                pos: n,
            }
        }
        Blocking::GreedyForest | Blocking::RandomForest => Blocks::Forest {
            graph: DependencyGraph::from_problem(p),
            greedy: config.blocking == Blocking::GreedyForest,
        },
    };
    let tau_for_diag = match &blocks {
        Blocks::Partition { part, .. } => part.tau(),
        Blocks::Variable { tau, .. } => *tau,
        Blocks::Forest { .. } => n,
    };
    let iht = match config.selection {
        SelectionRule::Gsq(GsqApprox::Iht { .. }) => Some(IhtModel::new(p.global_bound())?),
        _ => None,
    };
    let mut updater = Updater::new(config.update);
    if let UpdateRule::GradientDiag(c) = config.update {
        updater = updater.with_diagonal(c.diagonal(&info, tau_for_diag));
    }
    if config.update == (UpdateRule::ProxGradient { global_step: true }) {
        updater = updater.with_global_lipschitz(smooth_lipschitz(p));
    }
    let mut selector = Selector::new(config.selection, config.seed);
    let gsd_diag = match config.selection {
        SelectionRule::Gsd(c) => Some(c.diagonal(&info, tau_for_diag)),
        _ => None,
    };

    let zset: Option<Vec<usize>> = match (&reference.x_star, comp.is_some()) {
        (Some(xs), true) => Some((0..n).filter(|&i| xs[i] == 0.0).collect()),
        _ => None,
    };
    let hits = |x: &[f64]| zset.as_ref().map_or(0, |z| z.iter().filter(|&&i| x[i] == 0.0).count());

    let start = Instant::now();
    let mut st = p.state(vec![0.0; n])?;
    let mut grad = p.gradient(&st);
    let mut trace = Trace::default();
    let active = |x: &[f64]| if comp.is_some() { x.iter().filter(|v| **v == 0.0).count() } else { 0 };
    trace.rows.push(TraceRow {
        iter: 0,
        obj: p.total_value(&st),
        grad_norm: grad_norm(&comp, &st.x, &grad),
        active_count: active(&st.x),
        ..TraceRow::default()
    });
    trace.zero_hits.push(hits(&st.x));
    trace.certificates.push(None);
    let mut coord_updates = 0u64;
    let mut violation = None;

    for k in 1..=config.iters {
        // the proximal rule builds its own model from the smooth gradient
        let rank = if config.selection == SelectionRule::GsqProx {
            grad.clone()
        } else {
            ranking_gradient(&comp, &st.x, &grad)
        };
        let selected = match &mut blocks {
            Blocks::Partition { part, curv } => selector.select_fixed(part, &rank, curv, &info, &st.x, &comp)?,
            Blocks::Variable { tau, perm, pos } => match config.selection {
                SelectionRule::Cyclic => {
                    if *pos >= n {
                        perm.shuffle(selector.rng());
                        *pos = 0;
                    }
                    let end = (*pos + *tau).min(n);
                    let block = Block::new(perm[*pos..end].to_vec(), n)?;
                    *pos = end;
                    let score = block.indices().iter().map(|&i| rank[i] * rank[i]).sum();
                    ScoredBlock {
                        block,
                        score,
                        index: None,
                    }
                }
                SelectionRule::LipschitzWeighted => {
                    let l = &info.per_coordinate;
                    let idx = sample_weighted(selector.rng(), n, |i| l[i], *tau)
                        .map_err(|e| BenchError::Incompatible(e.to_string()))?;
                    let block = Block::new(idx.into_vec(), n)?;
                    let score = block.indices().iter().map(|&i| rank[i] * rank[i]).sum();
                    ScoredBlock {
                        block,
                        score,
                        index: None,
                    }
                }
                _ => selector.select_variable(&rank, *tau, &info, iht.as_ref(), &st.x, &comp)?,
            },
            Blocks::Forest { graph, greedy } => {
                let block = if *greedy {
                    let scores: Vec<f64> = (0..n)
                        .map(|i| {
                            let g2 = rank[i] * rank[i];
                            match config.selection {
                                SelectionRule::Gsl => g2 / info.per_coordinate[i],
                                SelectionRule::Gsd(_) => g2 / gsd_diag.as_ref().expect("gsd diagonal")[i],
                                _ => g2,
                            }
                        })
                        .collect();
                    let b = greedy_forest(graph, &scores)?;
                    let score = b.indices().iter().map(|&i| scores[i]).sum();
                    (b, score)
                } else {
                    let b = random_forest(graph, selector.rng());
                    let score = b.indices().iter().map(|&i| rank[i] * rank[i]).sum();
                    (b, score)
                };
                ScoredBlock {
                    block: block.0,
                    score: block.1,
                    index: None,
                }
            }
        };
        let b = &selected.block;
        let g_b = gather(&grad, b);
        let (consts, part, curv) = match (&blocks, selected.index) {
            (Blocks::Partition { part, curv }, Some(idx)) => (
                BlockConstants {
                    lb: Some(curv.lb[idx]),
                    hb: curv.hb.get(idx),
                },
                Some(part),
                Some(curv),
            ),
            _ => (BlockConstants::default(), None, None),
        };
        let x_before = observer.as_ref().map(|_| st.x.clone());
        let f_before = st.value();
        let obj_before = p.total_value(&st);
        let outcome = updater.step(p, &mut st, b, &g_b, consts)?;
        coord_updates += outcome.coord_updates as u64;
        if k % REFRESH_EVERY == 0 {
            p.refresh(&mut st);
        }
        let f_after = st.value();
        let obj_after = p.total_value(&st);
        let new_grad = p.gradient(&st);
        if let (Some(obs), Some(xb)) = (observer.as_mut(), x_before.as_ref()) {
            obs(&IterView {
                iter: k,
                problem: p,
                x_before: xb,
                x_after: &st.x,
                grad_before: &grad,
                grad_after: &new_grad,
                f_before,
                f_after,
                obj_before,
                obj_after,
                selected: &selected,
                outcome: &outcome,
                partition: part,
                curvature: curv,
                info: &info,
            });
        }
        grad = new_grad;
        let tol = CHECK_TOL * (1.0 + obj_before.abs());
        trace.rows.push(TraceRow {
            iter: k,
            obj: obj_after,
            gap: 0.0,
            grad_norm: grad_norm(&comp, &st.x, &grad),
            block_size: b.len(),
            block_hash: b.fingerprint(),
            step: outcome.step,
            score: selected.score,
            active_count: active(&st.x),
            coord_updates,
            ms: if config.wall_time {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
        trace.zero_hits.push(hits(&st.x));
        trace.certificates.push(outcome.certificate);
        if obj_after > obj_before + tol {
            violation = Some(Violation {
                iter: k,
                kind: ViolationKind::ObjectiveIncrease,
                before: obj_before,
                after: obj_after,
                expected: None,
            });
            break;
        }
        if let Some(c) = outcome.certificate {
            if f_before - f_after < c - CHECK_TOL * (1.0 + f_before.abs()) {
                violation = Some(Violation {
                    iter: k,
                    kind: ViolationKind::Certificate,
                    before: f_before,
                    after: f_after,
                    expected: Some(c),
                });
                break;
            }
        }
    }

    let min_obj = trace.rows.iter().map(|r| r.obj).fold(f64::INFINITY, f64::min);
    let f_star = if reference.is_exact() {
        reference.f_star
    } else {
        reference.f_star.min(min_obj)
    };
    for r in &mut trace.rows {
        r.gap = r.obj - f_star;
    }
    let report = analyse(p, &trace, reference, f_star, zset, violation);
    Ok(RunOutput { trace, report, x: st.x })
}

fn analyse(
    p: &ProblemInstance,
    trace: &Trace,
    reference: &Reference,
    f_star: f64,
    zset: Option<Vec<usize>>,
    violation: Option<Violation>,
) -> AnalysisReport {
    let comp = p.composite();
    let floor = 1e-13 * (1.0 + f_star.abs());
    let rate = log_gap_slope(&trace.rows, floor);
    let mu = reference.mu;
    let kappa = rate.and_then(|s| {
        let rho = s.exp();
        (rho < 1.0).then(|| 1.0 / (1.0 - rho.sqrt()))
    });
    let gap0 = trace.rows.first().map_or(0.0, |r| r.gap.max(0.0));
    let gamma = mu.filter(|m| *m > 0.0).map(|m| (2.0 * gap0 / m).sqrt());
    let identification = zset.as_ref().and_then(|z| first_stable_identification(&trace.zero_hits, z.len()));
    let delta = match (&zset, &reference.x_star) {
        (Some(z), Some(xs)) if !z.is_empty() => p.state(xs.clone()).ok().map(|st| {
            let g = p.gradient(&st);
            let (lo, hi) = comp.subdifferential(0.0).expect("zero is in the domain");
            z.iter().map(|&i| (-g[i] - lo).min(hi + g[i])).fold(f64::INFINITY, f64::min)
        }),
        _ => None,
    };
    let lipschitz = zset.as_ref().map(|_| smooth_lipschitz(p));
    let bound = match (kappa, gamma, delta, lipschitz) {
        (Some(k), Some(g), Some(d), Some(l)) if d > 0.0 => Some(k * (2.0 * l * g / d).ln().max(0.0)),
        _ => None,
    };
    AnalysisReport {
        f_star,
        f_star_source: match reference.source {
            ReferenceSource::Direct => "direct",
            ReferenceSource::SupportSolve => "support_solve",
            ReferenceSource::LongRun => "long_run",
        }
        .to_string(),
        lambda: comp.is_some().then(|| comp.lambda()),
        active_set_star: zset,
        identification_iteration: identification,
        empirical_rate: rate,
        mu_hat: mu,
        kappa_hat: kappa,
        gamma_hat: gamma,
        delta,
        lipschitz,
        identification_bound: bound,
        violation,
    }
}

/// First iteration from which the reference active set stays at zero.
pub fn detect_manifold(trace: &Trace, report: &AnalysisReport, p: &ProblemInstance) -> Result<Option<usize>> {
    if !p.composite().is_some() {
        return Err(BenchError::Incompatible("manifold identification needs a separable term".into()));
    }
    let z = report
        .active_set_star
        .as_ref()
        .ok_or_else(|| BenchError::Incompatible("no reference active set".into()))?;
    Ok(first_stable_identification(&trace.zero_hits, z.len()))
}

/// Desk-scale spec of dataset `id`.
pub fn desk(id: DatasetId, seed: u64) -> ProblemSpec {
    ProblemSpec {
        dataset: id,
        scale: Scale::Desk,
        seed,
        composite: CompositeSpec::None,
    }
}

//! Run configurations and their compatibility rules.

use std::fmt;
use std::str::FromStr;

use bcd_core::blocking::PartitionStrategy;
use bcd_core::selection::{GsqApprox, SelectionRule};
use bcd_core::updates::UpdateRule;
use bcd_core::Composite;
use serde::{Deserialize, Serialize};

use crate::datasets::{DatasetId, Scale};
use crate::error::{BenchError, Result};

/// Default support size targeted when the L1 weight is chosen automatically.
pub const DEFAULT_SUPPORT_TARGET: usize = 20;
/// L1 weight used for the full-size non-negative L1 problem.
pub const PAPER_SCALE_LAMBDA: f64 = 50_000.0;

/// Serializes through `Display` / `FromStr`.
pub(crate) mod as_string {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};
    use std::fmt::Display;
    use std::str::FromStr;

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Separable term attached to a generated problem.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CompositeSpec {
    #[default]
    None,
    NonNegative,
    L1 { lambda: f64 },
    NonNegativeL1 { lambda: f64 },
    /// non-negative L1 with the weight picked to give about `support`
    /// non-zeros at the solution (desk scale) or [`PAPER_SCALE_LAMBDA`]
    /// (full scale)
    NonNegativeL1Auto { support: usize },
}

impl CompositeSpec {
    pub fn is_some(&self) -> bool {
        !matches!(self, CompositeSpec::None)
    }

    /// The composite when no search is needed.
    pub fn fixed(&self) -> Option<Composite> {
        match *self {
            CompositeSpec::None => Some(Composite::None),
            CompositeSpec::NonNegative => Some(Composite::NonNegative),
            CompositeSpec::L1 { lambda } => Some(Composite::L1 { lambda }),
            CompositeSpec::NonNegativeL1 { lambda } => Some(Composite::NonNegativeL1 { lambda }),
            CompositeSpec::NonNegativeL1Auto { .. } => None,
        }
    }
}

impl fmt::Display for CompositeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompositeSpec::None => write!(f, "none"),
            CompositeSpec::NonNegative => write!(f, "nonneg"),
            CompositeSpec::L1 { lambda } => write!(f, "l1:{lambda}"),
            CompositeSpec::NonNegativeL1 { lambda } => write!(f, "nnl1:{lambda}"),
            CompositeSpec::NonNegativeL1Auto { support } if *support == DEFAULT_SUPPORT_TARGET => write!(f, "nnl1:auto"),
            CompositeSpec::NonNegativeL1Auto { support } => write!(f, "nnl1:auto:{support}"),
        }
    }
}

impl FromStr for CompositeSpec {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || BenchError::Usage(format!("unknown composite `{s}`"));
        let weight = |v: &str| -> Result<f64> {
            let l: f64 = v.parse().map_err(|_| bad())?;
            if !(l >= 0.0 && l.is_finite()) {
                return Err(bad());
            }
            Ok(l)
        };
        Ok(match s {
            "none" => CompositeSpec::None,
            "nonneg" => CompositeSpec::NonNegative,
            "nnl1:auto" => CompositeSpec::NonNegativeL1Auto {
                support: DEFAULT_SUPPORT_TARGET,
            },
            _ => {
                if let Some(v) = s.strip_prefix("nnl1:auto:") {
                    let support: usize = v.parse().map_err(|_| bad())?;
                    if support == 0 {
                        return Err(bad());
                    }
                    CompositeSpec::NonNegativeL1Auto { support }
                } else if let Some(v) = s.strip_prefix("nnl1:") {
                    CompositeSpec::NonNegativeL1 { lambda: weight(v)? }
                } else if let Some(v) = s.strip_prefix("l1:") {
                    CompositeSpec::L1 { lambda: weight(v)? }
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub dataset: DatasetId,
    pub scale: Scale,
    pub seed: u64,
    #[serde(default)]
    pub composite: CompositeSpec,
}

/// How blocks are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blocking {
    Fixed { strategy: PartitionStrategy, tau: usize },
    /// any `tau` coordinates, re-chosen every iteration
    Variable { tau: usize },
    GreedyForest,
    RandomForest,
    RedBlack,
    TreePartition,
}

impl Blocking {
    /// Parses the command-line form (`fixed:sort`, `vb`, `greedy-forest`, ...).
    pub fn parse(s: &str, tau: usize) -> Result<Self> {
        let strategy = |st| Blocking::Fixed { strategy: st, tau };
        Ok(match s {
            "fixed:order" => strategy(PartitionStrategy::Order),
            "fixed:avg" => strategy(PartitionStrategy::Avg),
            "fixed:sort" => strategy(PartitionStrategy::Sort),
            "vb" => Blocking::Variable { tau },
            "greedy-forest" => Blocking::GreedyForest,
            "random-forest" => Blocking::RandomForest,
            "red-black" => Blocking::RedBlack,
            "tree-partition" => Blocking::TreePartition,
            _ => return Err(BenchError::Usage(format!("unknown blocking `{s}`"))),
        })
    }

    /// The command-line name without the block size.
    pub fn name(&self) -> &'static str {
        match self {
            Blocking::Fixed {
                strategy: PartitionStrategy::Order,
                ..
            } => "fixed:order",
            Blocking::Fixed {
                strategy: PartitionStrategy::Avg,
                ..
            } => "fixed:avg",
            Blocking::Fixed { .. } => "fixed:sort",
            Blocking::Variable { .. } => "vb",
            Blocking::GreedyForest => "greedy-forest",
            Blocking::RandomForest => "random-forest",
            Blocking::RedBlack => "red-black",
            Blocking::TreePartition => "tree-partition",
        }
    }

    /// Blocks come from a partition fixed before the run.
    pub fn is_fixed(&self) -> bool {
        matches!(self, Blocking::Fixed { .. } | Blocking::RedBlack | Blocking::TreePartition)
    }

    /// Every block induces a forest of the dependency graph.
    pub fn is_forest(&self) -> bool {
        matches!(
            self,
            Blocking::GreedyForest | Blocking::RandomForest | Blocking::RedBlack | Blocking::TreePartition
        )
    }

    pub fn tau(&self) -> Option<usize> {
        match *self {
            Blocking::Fixed { tau, .. } | Blocking::Variable { tau } => Some(tau),
            _ => None,
        }
    }
}

/// Source of the reference optimum `f*`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FStarMode {
    /// direct solve where one exists, a long reference run otherwise
    #[default]
    Auto,
    DirectSolve,
    /// a reference run with `multiplier` times the iteration budget
    LongRun { multiplier: usize },
}

/// Default budget multiplier of reference runs.
pub const LONG_RUN_MULTIPLIER: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub problem: ProblemSpec,
    pub blocking: Blocking,
    #[serde(with = "as_string")]
    pub selection: SelectionRule,
    #[serde(with = "as_string")]
    pub update: UpdateRule,
    pub iters: usize,
    pub seed: u64,
    #[serde(default)]
    pub f_star_mode: FStarMode,
    /// Record wall time in the `ms` column (otherwise zero, keeping traces
    /// byte-identical across runs).
    #[serde(default)]
    pub wall_time: bool,
}

fn incompatible<T>(msg: impl Into<String>) -> Result<T> {
    Err(BenchError::Incompatible(msg.into()))
}

impl SolverConfig {
    /// Checks the pairing of blocking, selection and update, and of the
    /// update with the problem's separable term.
    pub fn check(&self) -> Result<()> {
        let b = self.blocking;
        let sel = self.selection;
        let upd = self.update;
        if let Some(0) = b.tau() {
            return incompatible("block size must be positive");
        }
        if upd == UpdateRule::TreeExact && !b.is_forest() {
            return incompatible("the tree update needs forest-structured blocks");
        }
        if upd == UpdateRule::TreeExact && !matches!(self.problem.dataset, DatasetId::D | DatasetId::E) {
            return incompatible("the tree update needs a quadratic problem");
        }
        if matches!(upd, UpdateRule::GradientApproxL | UpdateRule::MatrixApproxH) && !b.is_fixed() {
            return incompatible(format!("`{upd}` keeps per-block estimates and needs fixed blocks"));
        }
        match sel {
            SelectionRule::Gsq(GsqApprox::Exact) if !b.is_fixed() => {
                return incompatible("gsq:exact needs fixed blocks");
            }
            SelectionRule::Gsq(GsqApprox::Iht { .. }) if !matches!(b, Blocking::Variable { .. }) => {
                return incompatible("gsq:iht needs variable blocks");
            }
            SelectionRule::Gsl if matches!(b, Blocking::Variable { .. }) => {
                return incompatible("gsl over variable blocks is intractable; use gsd:sirt");
            }
            _ => {}
        }
        match b {
            Blocking::GreedyForest
                if !matches!(sel, SelectionRule::Gs | SelectionRule::Gsl | SelectionRule::Gsd(_)) =>
            {
                return incompatible("greedy forests are grown with gs, gsl or gsd scores");
            }
            Blocking::RandomForest if sel != SelectionRule::Random => {
                return incompatible("random forests use random selection");
            }
            _ => {}
        }
        let composite = self.problem.composite.is_some();
        if upd.is_proximal() && !composite {
            return incompatible(format!("`{upd}` needs a separable term"));
        }
        if composite && !upd.is_proximal() {
            return incompatible(format!("`{upd}` ignores the separable term"));
        }
        if sel == SelectionRule::GsqProx && !composite {
            return incompatible("gsq-prox needs a separable term");
        }
        if composite && b.is_forest() {
            return incompatible("forest blockings are for smooth problems");
        }
        if self.problem.dataset != DatasetId::D && b == Blocking::TreePartition {
            return incompatible("tree partitions need the lattice problem");
        }
        if self.f_star_mode == FStarMode::DirectSolve
            && (composite || matches!(self.problem.dataset, DatasetId::B | DatasetId::C))
        {
            return incompatible("no direct solve for this problem");
        }
        Ok(())
    }
}

//! Grids of run configurations.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{Blocking, CompositeSpec, FStarMode, ProblemSpec, SolverConfig};
use crate::datasets::{DatasetId, Scale};
use crate::error::{BenchError, Result};

fn one() -> Vec<u64> {
    vec![0]
}

/// Cartesian grid; every compatible combination becomes one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub out_dir: PathBuf,
    pub problems: Vec<DatasetId>,
    #[serde(default = "desk")]
    pub scale: Scale,
    pub blockings: Vec<String>,
    pub selects: Vec<String>,
    pub updates: Vec<String>,
    pub block_sizes: Vec<usize>,
    pub iters: usize,
    #[serde(default = "one")]
    pub seeds: Vec<u64>,
    #[serde(default = "no_composite")]
    pub composite: String,
}

fn desk() -> Scale {
    Scale::Desk
}

fn no_composite() -> String {
    "none".into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub name: String,
    pub config: SolverConfig,
}

/// File stem of a run: its settings joined by dashes, colons replaced.
pub fn run_name(c: &SolverConfig) -> String {
    let tau = c.blocking.tau().map_or(String::new(), |t| format!("-b{t}"));
    format!(
        "{}-{}-{}-{}{}-s{}",
        c.problem.dataset,
        c.blocking.name(),
        c.selection,
        c.update,
        tau,
        c.seed
    )
    .replace(':', "_")
}

impl Grid {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Compatible runs and the descriptions of skipped combinations.
    pub fn expand(&self) -> Result<(Vec<GridRun>, Vec<String>)> {
        let composite: CompositeSpec = self.composite.parse()?;
        let mut runs = Vec::new();
        let mut skipped = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for &dataset in &self.problems {
            for blk in &self.blockings {
                for &tau in &self.block_sizes {
                    let blocking = Blocking::parse(blk, tau)?;
                    for sel in &self.selects {
                        let selection = sel.parse().map_err(|e| BenchError::Usage(format!("{e}")))?;
                        for upd in &self.updates {
                            let update = upd.parse().map_err(|e| BenchError::Usage(format!("{e}")))?;
                            for &seed in &self.seeds {
                                let config = SolverConfig {
                                    problem: ProblemSpec {
                                        dataset,
                                        scale: self.scale,
                                        seed,
                                        composite,
                                    },
                                    blocking,
                                    selection,
                                    update,
                                    iters: self.iters,
                                    seed,
                                    f_star_mode: FStarMode::Auto,
                                    wall_time: false,
                                };
                                let name = run_name(&config);
                                if !seen.insert(name.clone()) {
                                    continue;
                                }
                                match config.check() {
                                    Ok(()) => runs.push(GridRun { name, config }),
                                    Err(e) => skipped.push(format!("{name}: {e}")),
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((runs, skipped))
    }
}

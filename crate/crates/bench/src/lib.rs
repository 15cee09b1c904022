//! Experiment harness for block coordinate descent: dataset generators,
//! the solver loop, reference optima, traces and run analysis.

pub mod checks;
pub mod config;
pub mod datasets;
pub mod error;
pub mod reference;
pub mod solver;
pub mod sweep;
pub mod trace;

pub use config::{Blocking, CompositeSpec, FStarMode, ProblemSpec, SolverConfig};
pub use datasets::{gen_dataset, DatasetId, Scale};
pub use error::{BenchError, Result};
pub use solver::{detect_manifold, run, run_instance, IterView, RunOutput};
pub use trace::{emit_trace, AnalysisReport, Trace, TraceRow};

//! Block coordinate descent building blocks.
//!
//! * [`objectives`]: problem families, block derivatives, curvature bounds and
//!   separable proximal operators.
//! * [`blocking`]: fixed partitions, random blocks and forest-structured blocks.
//! * [`selection`]: cyclic, random and greedy block selection rules.
//! * [`updates`]: gradient, matrix, Newton, proximal and tree-exact updates.
//! * [`treesolver`]: linear-time solves on forest-structured systems.

pub mod blocking;
pub mod error;
pub mod linalg;
pub mod objectives;
pub mod selection;
pub mod sparse;
pub mod treesolver;
pub mod updates;

pub use blocking::{Block, DependencyGraph, FixedPartition, ForestState, PartitionStrategy};
pub use error::{BcdError, Result};
pub use objectives::{BlockDerivatives, Composite, Kind, LabelGraph, LipschitzInfo, PointState, ProblemInstance};

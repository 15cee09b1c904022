use serde::{Deserialize, Serialize};

use super::{Composite, Data, Kind, LabelGraph, ProblemInstance};
use crate::error::{BcdError, Result};
use crate::sparse::{CscMatrix, Triplet};

/// Portable JSON form of a problem instance.
///
/// `entries` holds the matrix as `(row, col, value)` triples; `targets`
/// holds `c`, `b`, the `{-1, 1}` labels or the class ids depending on
/// `kind`. Label-propagation instances carry their graph instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDescriptor {
    pub kind: Kind,
    pub dims: (usize, usize),
    #[serde(default)]
    pub entries: Vec<Triplet>,
    #[serde(default)]
    pub targets: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<LabelGraph>,
    #[serde(default)]
    pub composite: Composite,
}

impl ProblemDescriptor {
    pub fn build(&self) -> Result<ProblemInstance> {
        let (rows, cols) = self.dims;
        let matrix = || CscMatrix::from_triplets(rows, cols, &self.entries);
        let p = match self.kind {
            Kind::Quadratic => ProblemInstance::quadratic(matrix()?, self.targets.clone())?,
            Kind::LeastSquares => ProblemInstance::least_squares(matrix()?, self.targets.clone())?,
            Kind::Logistic => ProblemInstance::logistic(matrix()?, self.targets.clone())?,
            Kind::MultiClassLogistic => {
                let k = self
                    .classes
                    .ok_or_else(|| BcdError::Descriptor("multi-class descriptor needs `classes`".into()))?;
                let y = self
                    .targets
                    .iter()
                    .map(|&t| {
                        if t >= 0.0 && t.fract() == 0.0 {
                            Ok(t as usize)
                        } else {
                            Err(BcdError::Descriptor(format!("class label {t} is not a non-negative integer")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                ProblemInstance::multiclass_logistic(matrix()?, y, k)?
            }
            Kind::GraphQuadratic => {
                let g = self
                    .graph
                    .clone()
                    .ok_or_else(|| BcdError::Descriptor("graph descriptor needs `graph`".into()))?;
                ProblemInstance::label_propagation(g)?
            }
        };
        p.with_composite(self.composite)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("descriptor serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| BcdError::Descriptor(e.to_string()))
    }
}

impl ProblemInstance {
    pub fn to_descriptor(&self) -> ProblemDescriptor {
        let mut d = ProblemDescriptor {
            kind: self.kind,
            dims: (0, 0),
            entries: Vec::new(),
            targets: Vec::new(),
            classes: None,
            graph: None,
            composite: self.composite,
        };
        match &self.data {
            Data::Quadratic { graph: Some(g), .. } => d.graph = Some(g.graph.clone()),
            Data::Quadratic { a, c, .. } => {
                d.dims = (a.nrows(), a.ncols());
                d.entries = a.triplets();
                d.targets = c.clone();
            }
            Data::LeastSquares { a, b } => {
                d.dims = (a.nrows(), a.ncols());
                d.entries = a.triplets();
                d.targets = b.clone();
            }
            Data::Logistic { a, y } => {
                d.dims = (a.nrows(), a.ncols());
                d.entries = a.triplets();
                d.targets = y.clone();
            }
            Data::MultiClass { a, y, k } => {
                d.dims = (a.nrows(), a.ncols());
                d.entries = a.triplets();
                d.targets = y.iter().map(|&c| c as f64).collect();
                d.classes = Some(*k);
            }
        }
        d
    }
}

use nalgebra::DMatrix;

use super::{Data, ProblemInstance};
use crate::blocking::Block;
use crate::error::Result;
use crate::linalg::{max_eigenvalue, CURVATURE_FLOOR};
use crate::sparse::CscMatrix;

/// Curvature constants that do not depend on a block.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzInfo {
    /// `L_i` for every coordinate.
    pub per_coordinate: Vec<f64>,
    /// Absolute row sums `sum_j |M_ij|` of the global bound `M`.
    pub row_sums: Vec<f64>,
}

impl ProblemInstance {
    /// Matrix bound `H_b` with `grad^2_{bb} f(x) <= H_b` for every `x`.
    pub fn lipschitz_matrix(&self, b: &Block) -> Result<DMatrix<f64>> {
        self.check_block(b)?;
        let idx = b.indices();
        Ok(match &self.data {
            Data::Quadratic { a, .. } => a.dense_block(idx, idx),
            Data::LeastSquares { a, .. } => a.weighted_gram(idx, None),
            Data::Logistic { a, .. } => a.weighted_gram(idx, None) * 0.25,
            Data::MultiClass { a, k, .. } => {
                let k = *k;
                let mut feats: Vec<usize> = idx.iter().map(|&i| i / k).collect();
                feats.dedup();
                let gram = a.weighted_gram(&feats, None);
                let mut classes: Vec<usize> = idx.iter().map(|&i| i % k).collect();
                classes.sort_unstable();
                classes.dedup();
                // touching every class leaves no spare class to absorb mass
                let den = (classes.len() + 1).min(k) as f64;
                let nb = idx.len();
                let mut h = DMatrix::zeros(nb, nb);
                for s in 0..nb {
                    let ps = feats.binary_search(&(idx[s] / k)).unwrap();
                    for t in 0..nb {
                        let pt = feats.binary_search(&(idx[t] / k)).unwrap();
                        let delta = if idx[s] % k == idx[t] % k { 1.0 } else { 0.0 };
                        h[(s, t)] = 0.5 * (delta - 1.0 / den) * gram[(ps, pt)];
                    }
                }
                h
            }
        })
    }

    /// Scalar bound `L_b >= lambda_max(grad^2_{bb} f(x))`.
    pub fn lipschitz_block(&self, b: &Block) -> Result<f64> {
        self.check_block(b)?;
        if b.len() == 1 {
            return Ok(self.coord_lipschitz[b.indices()[0]]);
        }
        Ok(max_eigenvalue(&self.lipschitz_matrix(b)?).max(CURVATURE_FLOOR))
    }

    /// Sparse `M` with `grad^2 f(x) <= M` everywhere.
    pub fn global_bound(&self) -> CscMatrix {
        match &self.data {
            Data::Quadratic { a, .. } => a.clone(),
            Data::LeastSquares { a, .. } => a.gram(),
            Data::Logistic { a, .. } => a.gram().scale(0.25),
            Data::MultiClass { a, k, .. } => {
                let k = *k;
                let g = a.gram();
                let inv_k = 1.0 / k as f64;
                let mut trips = Vec::with_capacity(g.nnz() * k * k);
                for (r, c, v) in g.triplets() {
                    for cr in 0..k {
                        for cc in 0..k {
                            let delta = if cr == cc { 1.0 } else { 0.0 };
                            trips.push((r * k + cr, c * k + cc, 0.5 * (delta - inv_k) * v));
                        }
                    }
                }
                CscMatrix::from_triplets(self.n, self.n, &trips).expect("kronecker entries in range")
            }
        }
    }

    pub fn lipschitz_info(&self) -> LipschitzInfo {
        let m = self.global_bound();
        let mut row_sums = vec![0.0; self.n];
        for (r, _, v) in m.triplets() {
            row_sums[r] += v.abs();
        }
        for s in &mut row_sums {
            *s = s.max(CURVATURE_FLOOR);
        }
        LipschitzInfo {
            per_coordinate: self.coord_lipschitz.clone(),
            row_sums,
        }
    }
}

//! Linear-time solves for symmetric systems whose off-diagonal pattern is a
//! forest.
//!
//! Each tree is eliminated from its deepest level up to the root, folding
//! every node into its parent, then the solution is recovered root first.
//! Fill-in never leaves the tree edges, so the work is linear in the block.

use nalgebra::DMatrix;

use crate::blocking::Block;
use crate::error::{BcdError, Result};
use crate::objectives::{PointState, ProblemInstance};

/// `A~ x = c~` restricted to one block, with its tree layering.
#[derive(Debug, Clone)]
pub struct TreeSystem {
    block: Block,
    diag: Vec<f64>,
    /// local neighbours with the off-diagonal value
    nbrs: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    /// per tree, per level, local node ids (ascending)
    levels: Vec<Vec<Vec<usize>>>,
    parent: Vec<Option<(usize, f64)>>,
}

impl TreeSystem {
    /// Builds the system from local off-diagonal entries `(i, j, value)`
    /// with `i < j`. Fails on a cycle or a mismatched length.
    pub fn new(block: Block, diag: Vec<f64>, offdiag: &[(usize, usize, f64)], rhs: Vec<f64>) -> Result<Self> {
        let nb = block.len();
        if diag.len() != nb || rhs.len() != nb {
            return Err(BcdError::Dimension {
                expected: nb,
                got: diag.len().min(rhs.len()),
                context: "tree system",
            });
        }
        let mut nbrs = vec![Vec::new(); nb];
        for &(i, j, v) in offdiag {
            if i >= nb || j >= nb || i == j {
                return Err(BcdError::InvalidArgument(format!("bad off-diagonal ({i}, {j})")));
            }
            if v != 0.0 {
                nbrs[i].push((j, v));
                nbrs[j].push((i, v));
            }
        }
        for list in &mut nbrs {
            list.sort_unstable_by_key(|e| e.0);
        }
        let mut sys = Self {
            block,
            diag,
            nbrs,
            rhs,
            levels: Vec::new(),
            parent: vec![None; nb],
        };
        sys.layer()?;
        Ok(sys)
    }

    /// Breadth-first layering rooted at the lowest local node of each tree.
    fn layer(&mut self) -> Result<()> {
        let nb = self.diag.len();
        let mut visited = vec![false; nb];
        for root in 0..nb {
            if visited[root] {
                continue;
            }
            visited[root] = true;
            let mut levels = vec![vec![root]];
            loop {
                let mut next = Vec::new();
                for &u in levels.last().unwrap() {
                    let up = self.parent[u].map(|p| p.0);
                    for &(v, w) in &self.nbrs[u] {
                        if Some(v) == up {
                            continue;
                        }
                        if visited[v] {
                            return Err(BcdError::CycleDetected(self.block.indices()[v]));
                        }
                        visited[v] = true;
                        self.parent[v] = Some((u, w));
                        next.push(v);
                    }
                }
                if next.is_empty() {
                    break;
                }
                next.sort_unstable();
                levels.push(next);
            }
            self.levels.push(levels);
        }
        Ok(())
    }

    /// Dense symmetric matrix whose off-diagonal pattern must be a forest.
    pub fn from_dense(block: Block, h: &DMatrix<f64>, rhs: Vec<f64>) -> Result<Self> {
        let nb = h.nrows();
        let diag = (0..nb).map(|i| h[(i, i)]).collect();
        let mut off = Vec::new();
        for j in 0..nb {
            for i in 0..j {
                if h[(i, j)] != 0.0 {
                    off.push((i, j, h[(i, j)]));
                }
            }
        }
        Self::new(block, diag, &off, rhs)
    }

    pub fn block(&self) -> &Block {
        &self.block
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Level sets per tree, as coordinate indices.
    pub fn levels(&self) -> Vec<Vec<Vec<usize>>> {
        let ids = self.block.indices();
        self.levels
            .iter()
            .map(|t| t.iter().map(|l| l.iter().map(|&u| ids[u]).collect()).collect())
            .collect()
    }

    pub fn tree_count(&self) -> usize {
        self.levels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.nbrs.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// `A~ x`, for residual checks.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| self.diag[i] * x[i] + self.nbrs[i].iter().map(|&(j, v)| v * x[j]).sum::<f64>())
            .collect()
    }

    fn solve_tree(&self, t: usize, pivot: &mut [f64], carry: &mut [f64], x: &mut [f64], ops: &mut u64) -> Result<()> {
        let levels = &self.levels[t];
        for lvl in levels.iter().skip(1).rev() {
            for &i in lvl {
                let (p, w) = self.parent[i].expect("non-root has a parent");
                let piv = pivot[i];
                if piv == 0.0 || !piv.is_finite() {
                    return Err(BcdError::ZeroPivot(self.block.indices()[i]));
                }
                let f = w / piv;
                pivot[p] -= f * w;
                carry[p] -= f * carry[i];
                *ops += 1;
            }
        }
        for (depth, lvl) in levels.iter().enumerate() {
            for &i in lvl {
                let piv = pivot[i];
                if piv == 0.0 || !piv.is_finite() {
                    return Err(BcdError::ZeroPivot(self.block.indices()[i]));
                }
                let tail = if depth == 0 {
                    0.0
                } else {
                    let (p, w) = self.parent[i].unwrap();
                    w * x[p]
                };
                x[i] = (carry[i] - tail) / piv;
                *ops += 1;
            }
        }
        Ok(())
    }

    /// Solves every tree; returns the solution and the elimination work.
    pub fn solve_counted(&self) -> Result<(Vec<f64>, u64)> {
        let mut pivot = self.diag.clone();
        let mut carry = self.rhs.clone();
        let mut x = vec![0.0; self.diag.len()];
        let mut ops = 0;
        for t in 0..self.levels.len() {
            self.solve_tree(t, &mut pivot, &mut carry, &mut x, &mut ops)?;
        }
        Ok((x, ops))
    }
}

/// Solves a single-tree system.
pub fn message_passing_solve(sys: &TreeSystem) -> Result<Vec<f64>> {
    if sys.tree_count() > 1 {
        return Err(BcdError::InvalidArgument(format!(
            "system has {} trees; use forest_solve",
            sys.tree_count()
        )));
    }
    sys.solve_counted().map(|r| r.0)
}

/// Solves each tree of the forest independently.
pub fn forest_solve(sys: &TreeSystem) -> Result<Vec<f64>> {
    sys.solve_counted().map(|r| r.0)
}

/// Block system `A_bb x_b = c_b - A_{b,rest} x_rest` for a quadratic
/// problem, with the right-hand side read from the `A x` cache.
pub fn build_subsystem(p: &ProblemInstance, st: &PointState, b: &Block) -> Result<TreeSystem> {
    let (a, c) = p
        .quadratic_parts()
        .ok_or_else(|| BcdError::Unsupported("tree subsystems need a quadratic objective".into()))?;
    let idx = b.indices();
    if idx.last().is_some_and(|&i| i >= p.n()) {
        return Err(BcdError::InvalidBlock("block exceeds dimension".into()));
    }
    let ax = st.cache();
    let mut diag = Vec::with_capacity(idx.len());
    let mut rhs = Vec::with_capacity(idx.len());
    let mut off = Vec::new();
    for (li, &i) in idx.iter().enumerate() {
        // A is symmetric, so column i doubles as row i
        let (rows, vals) = a.col(i);
        let mut inside = 0.0;
        let mut d = 0.0;
        for (&j, &v) in rows.iter().zip(vals) {
            if let Some(lj) = b.position(j) {
                inside += v * st.x[j];
                if lj == li {
                    d = v;
                } else if li < lj {
                    off.push((li, lj, v));
                }
            }
        }
        diag.push(d);
        rhs.push(c[i] - ax[i] + inside);
    }
    TreeSystem::new(b.clone(), diag, &off, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocking::{greedy_forest, DependencyGraph};
    use crate::sparse::CscMatrix;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random tree (or forest) system with a diagonally dominant SPD matrix.
    fn random_system(nb: usize, forest: bool, rng: &mut ChaCha8Rng) -> (TreeSystem, DMatrix<f64>) {
        let mut off = Vec::new();
        for j in 1..nb {
            if forest && rng.random::<f64>() < 0.2 {
                continue;
            }
            let i = rng.random_range(0..j);
            off.push((i, j, rng.random_range(-1.0..1.0)));
        }
        let mut dense: DMatrix<f64> = DMatrix::zeros(nb, nb);
        for &(i, j, v) in &off {
            dense[(i, j)] = v;
            dense[(j, i)] = v;
        }
        let diag: Vec<f64> = (0..nb)
            .map(|i| dense.row(i).iter().map(|v| v.abs()).sum::<f64>() + rng.random_range(0.1..2.0))
            .collect();
        for i in 0..nb {
            dense[(i, i)] = diag[i];
        }
        let rhs: Vec<f64> = (0..nb).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sys = TreeSystem::new(Block::full(nb), diag, &off, rhs).unwrap();
        (sys, dense)
    }

    fn dense_solve(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
        a.clone().lu().solve(&DVector::from_column_slice(b)).unwrap().as_slice().to_vec()
    }

    fn rel_err(x: &[f64], y: &[f64]) -> f64 {
        let num: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        num / den
    }

    #[test]
    fn diagonal_system() {
        let sys = TreeSystem::new(Block::full(3), vec![2.0, 4.0, 5.0], &[], vec![1.0, 2.0, 10.0]).unwrap();
        assert_eq!(forest_solve(&sys).unwrap(), vec![0.5, 0.5, 2.0]);
    }

    #[test]
    fn tridiagonal_hand_solve() {
        let sys = TreeSystem::new(
            Block::full(3),
            vec![2.0, 2.0, 2.0],
            &[(0, 1, -1.0), (1, 2, -1.0)],
            vec![1.0, 0.0, 1.0],
        )
        .unwrap();
        let x = message_passing_solve(&sys).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_pivot_and_cycle_are_errors() {
        let sys = TreeSystem::new(Block::full(2), vec![1.0, 1.0], &[(0, 1, 1.0)], vec![1.0, 1.0]).unwrap();
        assert!(matches!(forest_solve(&sys), Err(BcdError::ZeroPivot(_))));
        let cyc = TreeSystem::new(
            Block::full(3),
            vec![3.0; 3],
            &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)],
            vec![0.0; 3],
        );
        assert!(matches!(cyc, Err(BcdError::CycleDetected(_))));
    }

    #[test]
    fn two_disjoint_edges() {
        let sys = TreeSystem::new(
            Block::full(4),
            vec![2.0, 3.0, 4.0, 5.0],
            &[(0, 1, 1.0), (2, 3, -1.0)],
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        assert_eq!(sys.tree_count(), 2);
        assert!(message_passing_solve(&sys).is_err());
        let x = forest_solve(&sys).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[4.0, -1.0, -1.0, 5.0]);
        let x1 = dense_solve(&a, &[1.0, 2.0]);
        let x2 = dense_solve(&b, &[3.0, 4.0]);
        assert!(rel_err(&x[..2], &x1) < 1e-14);
        assert!(rel_err(&x[2..], &x2) < 1e-14);
    }

    #[test]
    fn tree_order_does_not_change_solution() {
        // same forest with the two trees listed in opposite local order
        let a = TreeSystem::new(
            Block::full(4),
            vec![2.0, 3.0, 4.0, 5.0],
            &[(0, 1, 1.0), (2, 3, -1.0)],
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let b = TreeSystem::new(
            Block::full(4),
            vec![4.0, 5.0, 2.0, 3.0],
            &[(2, 3, 1.0), (0, 1, -1.0)],
            vec![3.0, 4.0, 1.0, 2.0],
        )
        .unwrap();
        let xa = forest_solve(&a).unwrap();
        let xb = forest_solve(&b).unwrap();
        assert_eq!(xa[..2], xb[2..]);
        assert_eq!(xa[2..], xb[..2]);
    }

    #[test]
    fn matches_dense_solver_on_random_forests() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..500 {
            let nb = rng.random_range(1..=500);
            let (sys, dense) = random_system(nb, trial % 2 == 0, &mut rng);
            let x = forest_solve(&sys).unwrap();
            let y = dense_solve(&dense, sys.rhs());
            assert!(rel_err(&x, &y) <= 1e-8, "trial {trial}");
            let r = sys.apply(&x);
            assert!(rel_err(&r, sys.rhs()) <= 1e-10);
        }
    }

    #[test]
    fn work_grows_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sizes = [100usize, 1000, 10000];
        let ops: Vec<f64> = sizes
            .iter()
            .map(|&nb| {
                let (sys, _) = random_system_sparse(nb, &mut rng);
                let (_, ops) = sys.solve_counted().unwrap();
                assert!(ops as usize <= 2 * (nb + sys.edge_count()));
                ops as f64
            })
            .collect();
        let slope = (ops[2].ln() - ops[0].ln()) / ((sizes[2] as f64).ln() - (sizes[0] as f64).ln());
        assert!(slope <= 1.1, "fitted exponent {slope}");
    }

    fn random_system_sparse(nb: usize, rng: &mut ChaCha8Rng) -> (TreeSystem, ()) {
        let off: Vec<(usize, usize, f64)> = (1..nb).map(|j| (rng.random_range(0..j), j, -1.0)).collect();
        let mut deg = vec![0.0; nb];
        for &(i, j, _) in &off {
            deg[i] += 1.0;
            deg[j] += 1.0;
        }
        let diag = deg.iter().map(|d| d + 1.0).collect();
        (TreeSystem::new(Block::full(nb), diag, &off, vec![1.0; nb]).unwrap(), ())
    }

    fn chain_problem(n: usize) -> ProblemInstance {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = CscMatrix::from_triplets(n, n, &t).unwrap();
        ProblemInstance::quadratic(a, (0..n).map(|i| i as f64 + 1.0).collect()).unwrap()
    }

    #[test]
    fn full_block_rhs_is_c() {
        let p = chain_problem(4);
        let st = p.state(vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let sys = build_subsystem(&p, &st, &Block::full(4)).unwrap();
        for (r, c) in sys.rhs().iter().zip(p.quadratic_parts().unwrap().1) {
            assert!((r - c).abs() < 1e-14);
        }
    }

    #[test]
    fn boundary_terms_from_neighbours() {
        let p = chain_problem(5);
        let st = p.state(vec![1.0, 7.0, 1.0, 3.0, -2.0]).unwrap();
        let sys = build_subsystem(&p, &st, &Block::single(1)).unwrap();
        // c1 - A10 * 1 - A12 * 1 = 2 + 1 + 1
        assert!((sys.rhs()[0] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn rhs_matches_dense_boundary_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.random_range(5..40);
            let mut t = Vec::new();
            for i in 0..n {
                t.push((i, i, 5.0));
                for j in 0..i {
                    if rng.random::<f64>() < 0.15 {
                        let v = rng.random_range(-1.0..1.0);
                        t.push((i, j, v));
                        t.push((j, i, v));
                    }
                }
            }
            let a = CscMatrix::from_triplets(n, n, &t).unwrap();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = ProblemInstance::quadratic(a.clone(), c.clone()).unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let st = p.state(x.clone()).unwrap();
            let g = DependencyGraph::from_problem(&p);
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let b = greedy_forest(&g, &scores).unwrap();
            let sys = build_subsystem(&p, &st, &b).unwrap();
            let dense = a.to_dense();
            for (li, &i) in b.indices().iter().enumerate() {
                let mut expect = c[i];
                for j in 0..n {
                    if !b.contains(j) {
                        expect -= dense[(i, j)] * x[j];
                    }
                }
                assert!((sys.rhs()[li] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
    }

    proptest! {
        #[test]
        fn single_tree_matches_dense(seed in 0u64..5000, nb in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (sys, dense) = random_system(nb, false, &mut rng);
            prop_assert_eq!(sys.tree_count(), 1);
            let x = message_passing_solve(&sys).unwrap();
            prop_assert!(rel_err(&x, &dense_solve(&dense, sys.rhs())) <= 1e-8);
        }
    }
}

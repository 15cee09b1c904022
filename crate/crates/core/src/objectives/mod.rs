//! Problem families, their block derivatives and curvature bounds.
//!
//! Every instance keeps a *linear cache* alongside the iterate (`A x`, the
//! residual, or the class scores) so that block gradients, line-search trial
//! values and block steps cost time proportional to the touched columns.

mod composite;
mod descriptor;
mod lipschitz;

pub use composite::Composite;
pub use descriptor::ProblemDescriptor;
pub use lipschitz::LipschitzInfo;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::blocking::Block;
use crate::error::{BcdError, Result};
use crate::linalg::CURVATURE_FLOOR;
use crate::sparse::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Quadratic,
    LeastSquares,
    Logistic,
    MultiClassLogistic,
    GraphQuadratic,
}

/// Label-propagation graph: weighted undirected edges over `node_count`
/// nodes, some of which carry fixed labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelGraph {
    pub node_count: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub labels: Vec<(usize, f64)>,
    /// `(rows, cols)` when the nodes are a row-major lattice.
    pub lattice: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct GraphData {
    graph: LabelGraph,
    node_of_var: Vec<usize>,
    var_of_node: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
enum Data {
    /// `1/2 x^T A x - c^T x + constant`
    Quadratic {
        a: CscMatrix,
        c: Vec<f64>,
        constant: f64,
        graph: Option<Box<GraphData>>,
    },
    /// `1/2 ||A x - b||^2`
    LeastSquares { a: CscMatrix, b: Vec<f64> },
    /// `sum_i log(1 + exp(-y_i a_i^T x))`
    Logistic { a: CscMatrix, y: Vec<f64> },
    /// softmax loss with `x[j * k + c] = X_jc`
    MultiClass {
        a: CscMatrix,
        y: Vec<usize>,
        k: usize,
    },
}

/// An immutable smooth objective with an optional separable term.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    n: usize,
    kind: Kind,
    data: Data,
    composite: Composite,
    coord_lipschitz: Vec<f64>,
}

/// An iterate together with its linear cache and objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct PointState {
    pub x: Vec<f64>,
    z: Vec<f64>,
    f: f64,
}

impl PointState {
    /// Smooth objective value at `x`.
    pub fn value(&self) -> f64 {
        self.f
    }

    /// The linear cache (`A x` for quadratics, residual for least squares,
    /// scores for the logistic families).
    pub fn cache(&self) -> &[f64] {
        &self.z
    }
}

/// Derivatives restricted to one block.
#[derive(Debug, Clone)]
pub struct BlockDerivatives {
    pub gradient: Vec<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Softmax of one row of scores, max-shifted.
fn softmax_into(scores: &[f64], out: &mut [f64]) -> f64 {
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(scores) {
        *o = (v - mx).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
    mx + s.ln()
}

impl ProblemInstance {
    /// `f(x) = 1/2 x^T A x - c^T x` for a symmetric `A`.
    pub fn quadratic(a: CscMatrix, c: Vec<f64>) -> Result<Self> {
        Self::quadratic_with_constant(a, c, 0.0, None)
    }

    fn quadratic_with_constant(
        a: CscMatrix,
        c: Vec<f64>,
        constant: f64,
        graph: Option<Box<GraphData>>,
    ) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(BcdError::Dimension {
                expected: a.nrows(),
                got: a.ncols(),
                context: "quadratic matrix must be square",
            });
        }
        if c.len() != a.ncols() {
            return Err(BcdError::Dimension {
                expected: a.ncols(),
                got: c.len(),
                context: "linear term",
            });
        }
        if let Some((row, col, diff)) = a.asymmetry() {
            if diff > 0.0 {
                return Err(BcdError::NotSymmetric { row, col, diff });
            }
        }
        let n = a.ncols();
        let coord = (0..n).map(|i| a.get(i, i).abs().max(CURVATURE_FLOOR)).collect();
        let kind = if graph.is_some() {
            Kind::GraphQuadratic
        } else {
            Kind::Quadratic
        };
        Ok(Self {
            n,
            kind,
            data: Data::Quadratic {
                a,
                c,
                constant,
                graph,
            },
            composite: Composite::None,
            coord_lipschitz: coord,
        })
    }

    /// `f(x) = 1/2 ||A x - b||^2`.
    pub fn least_squares(a: CscMatrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != a.nrows() {
            return Err(BcdError::Dimension {
                expected: a.nrows(),
                got: b.len(),
                context: "least-squares targets",
            });
        }
        let coord = a.col_sq_norms().into_iter().map(|v| v.max(CURVATURE_FLOOR)).collect();
        Ok(Self {
            n: a.ncols(),
            kind: Kind::LeastSquares,
            data: Data::LeastSquares { a, b },
            composite: Composite::None,
            coord_lipschitz: coord,
        })
    }

    /// Binary logistic loss with labels in `{-1, +1}`.
    pub fn logistic(a: CscMatrix, y: Vec<f64>) -> Result<Self> {
        if y.len() != a.nrows() {
            return Err(BcdError::Dimension {
                expected: a.nrows(),
                got: y.len(),
                context: "logistic labels",
            });
        }
        if let Some(bad) = y.iter().find(|v| **v != 1.0 && **v != -1.0) {
            return Err(BcdError::InvalidArgument(format!("logistic label {bad} not in {{-1, 1}}")));
        }
        let coord = a
            .col_sq_norms()
            .into_iter()
            .map(|v| (0.25 * v).max(CURVATURE_FLOOR))
            .collect();
        Ok(Self {
            n: a.ncols(),
            kind: Kind::Logistic,
            data: Data::Logistic { a, y },
            composite: Composite::None,
            coord_lipschitz: coord,
        })
    }

    /// Softmax loss over `k` classes; labels are `0..k`.
    pub fn multiclass_logistic(a: CscMatrix, y: Vec<usize>, k: usize) -> Result<Self> {
        if y.len() != a.nrows() {
            return Err(BcdError::Dimension {
                expected: a.nrows(),
                got: y.len(),
                context: "multi-class labels",
            });
        }
        if k < 2 {
            return Err(BcdError::InvalidArgument("need at least two classes".into()));
        }
        if let Some(bad) = y.iter().find(|&&c| c >= k) {
            return Err(BcdError::InvalidArgument(format!("class label {bad} >= {k}")));
        }
        // the single-class sub-block keeps the binary 0.25 factor
        let coord = a
            .col_sq_norms()
            .into_iter()
            .flat_map(|v| std::iter::repeat_n((0.25 * v).max(CURVATURE_FLOOR), k))
            .collect();
        Ok(Self {
            n: a.ncols() * k,
            kind: Kind::MultiClassLogistic,
            data: Data::MultiClass { a, y, k },
            composite: Composite::None,
            coord_lipschitz: coord,
        })
    }

    /// Label propagation `sum_{(i,j) in E} w_ij (x_i - x_j)^2` over the
    /// unlabeled nodes; labeled nodes enter as fixed boundary values.
    pub fn label_propagation(graph: LabelGraph) -> Result<Self> {
        let nn = graph.node_count;
        let mut label_of: Vec<Option<f64>> = vec![None; nn];
        for &(node, v) in &graph.labels {
            if node >= nn {
                return Err(BcdError::InvalidArgument(format!("label on missing node {node}")));
            }
            label_of[node] = Some(v);
        }
        let mut var_of_node = vec![None; nn];
        let mut node_of_var = Vec::new();
        for (node, l) in label_of.iter().enumerate() {
            if l.is_none() {
                var_of_node[node] = Some(node_of_var.len());
                node_of_var.push(node);
            }
        }
        let n = node_of_var.len();
        let mut trips = Vec::new();
        let mut c = vec![0.0; n];
        let mut constant = 0.0;
        for &(i, j, w) in &graph.edges {
            if i >= nn || j >= nn || i == j {
                return Err(BcdError::InvalidArgument(format!("bad edge ({i}, {j})")));
            }
            if w < 0.0 {
                return Err(BcdError::InvalidArgument(format!("negative weight on ({i}, {j})")));
            }
            match (var_of_node[i], var_of_node[j]) {
                (Some(vi), Some(vj)) => {
                    trips.push((vi, vi, 2.0 * w));
                    trips.push((vj, vj, 2.0 * w));
                    trips.push((vi, vj, -2.0 * w));
                    trips.push((vj, vi, -2.0 * w));
                }
                (Some(v), None) | (None, Some(v)) => {
                    let fixed = label_of[if var_of_node[i].is_some() { j } else { i }].unwrap();
                    trips.push((v, v, 2.0 * w));
                    c[v] += 2.0 * w * fixed;
                    constant += w * fixed * fixed;
                }
                (None, None) => {
                    let d = label_of[i].unwrap() - label_of[j].unwrap();
                    constant += w * d * d;
                }
            }
        }
        let a = CscMatrix::from_triplets(n, n, &trips)?;
        let data = GraphData {
            graph,
            node_of_var,
            var_of_node,
        };
        Self::quadratic_with_constant(a, c, constant, Some(Box::new(data)))
    }

    /// Same smooth part with a different separable term.
    pub fn with_composite(mut self, composite: Composite) -> Result<Self> {
        composite.validate()?;
        self.composite = composite;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn composite(&self) -> Composite {
        self.composite
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, Kind::Quadratic | Kind::GraphQuadratic | Kind::LeastSquares)
    }

    /// Matrix and linear term of the quadratic kinds.
    pub fn quadratic_parts(&self) -> Option<(&CscMatrix, &[f64])> {
        match &self.data {
            Data::Quadratic { a, c, .. } => Some((a, c)),
            _ => None,
        }
    }

    /// Design matrix of the `f(Ax)` kinds.
    pub fn design(&self) -> Option<&CscMatrix> {
        match &self.data {
            Data::LeastSquares { a, .. } | Data::Logistic { a, .. } | Data::MultiClass { a, .. } => Some(a),
            _ => None,
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.data {
            Data::MultiClass { k, .. } => Some(*k),
            _ => None,
        }
    }

    /// Graph metadata for label propagation instances.
    pub fn label_graph(&self) -> Option<&LabelGraph> {
        match &self.data {
            Data::Quadratic { graph: Some(g), .. } => Some(&g.graph),
            _ => None,
        }
    }

    /// Node id of each optimization variable (label propagation only).
    pub fn node_of_var(&self) -> Option<&[usize]> {
        match &self.data {
            Data::Quadratic { graph: Some(g), .. } => Some(&g.node_of_var),
            _ => None,
        }
    }

    pub fn var_of_node(&self) -> Option<&[Option<usize>]> {
        match &self.data {
            Data::Quadratic { graph: Some(g), .. } => Some(&g.var_of_node),
            _ => None,
        }
    }

    /// Per-coordinate Lipschitz constants `L_i`.
    pub fn coord_lipschitz(&self) -> &[f64] {
        &self.coord_lipschitz
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(BcdError::Dimension {
                expected: self.n,
                got: x.len(),
                context: "iterate",
            });
        }
        Ok(())
    }

    pub(crate) fn check_block(&self, b: &Block) -> Result<()> {
        if let Some(&last) = b.indices().last() {
            if last >= self.n {
                return Err(BcdError::InvalidBlock(format!("index {last} >= n = {}", self.n)));
            }
        }
        Ok(())
    }

    fn linear_cache(&self, x: &[f64]) -> Vec<f64> {
        match &self.data {
            Data::Quadratic { a, .. } => a.mul_vec(x),
            Data::LeastSquares { a, b } => {
                let mut r = a.mul_vec(x);
                r.iter_mut().zip(b).for_each(|(ri, bi)| *ri -= bi);
                r
            }
            Data::Logistic { a, .. } => a.mul_vec(x),
            Data::MultiClass { a, k, .. } => {
                let k = *k;
                let mut z = vec![0.0; a.nrows() * k];
                for j in 0..a.ncols() {
                    let (rows, vals) = a.col(j);
                    for c in 0..k {
                        let xj = x[j * k + c];
                        if xj == 0.0 {
                            continue;
                        }
                        for (&r, &v) in rows.iter().zip(vals) {
                            z[r * k + c] += v * xj;
                        }
                    }
                }
                z
            }
        }
    }

    fn value_from_cache(&self, x: &[f64], z: &[f64]) -> f64 {
        match &self.data {
            Data::Quadratic { c, constant, .. } => {
                let mut s = 0.0;
                for i in 0..x.len() {
                    s += x[i] * (0.5 * z[i] - c[i]);
                }
                s + constant
            }
            Data::LeastSquares { .. } => 0.5 * z.iter().map(|r| r * r).sum::<f64>(),
            Data::Logistic { y, .. } => z.iter().zip(y).map(|(zi, yi)| softplus(-yi * zi)).sum(),
            Data::MultiClass { y, k, .. } => {
                let mut buf = vec![0.0; *k];
                z.chunks(*k)
                    .zip(y)
                    .map(|(row, &yi)| softmax_into(row, &mut buf) - row[yi])
                    .sum()
            }
        }
    }

    /// Smooth objective value.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let z = self.linear_cache(x);
        Ok(self.value_from_cache(x, &z))
    }

    /// Builds the cached state for `x`.
    pub fn state(&self, x: Vec<f64>) -> Result<PointState> {
        self.check_dim(&x)?;
        let z = self.linear_cache(&x);
        let f = self.value_from_cache(&x, &z);
        Ok(PointState { x, z, f })
    }

    /// Recomputes the cache from scratch, discarding accumulated drift.
    pub fn refresh(&self, st: &mut PointState) {
        st.z = self.linear_cache(&st.x);
        st.f = self.value_from_cache(&st.x, &st.z);
    }

    /// Per-example gradient multipliers for the logistic families.
    fn residual_weights(&self, z: &[f64]) -> Vec<f64> {
        match &self.data {
            Data::Logistic { y, .. } => z.iter().zip(y).map(|(zi, yi)| -yi * sigmoid(-yi * zi)).collect(),
            Data::MultiClass { y, k, .. } => {
                let k = *k;
                let mut r = vec![0.0; z.len()];
                for (i, (row, out)) in z.chunks(k).zip(r.chunks_mut(k)).enumerate() {
                    softmax_into(row, out);
                    out[y[i]] -= 1.0;
                }
                r
            }
            _ => unreachable!("residual weights are only defined for logistic kinds"),
        }
    }

    /// Full gradient at the cached state.
    pub fn gradient(&self, st: &PointState) -> Vec<f64> {
        match &self.data {
            Data::Quadratic { c, .. } => st.z.iter().zip(c).map(|(z, c)| z - c).collect(),
            Data::LeastSquares { a, .. } => a.tr_mul_vec(&st.z),
            Data::Logistic { a, .. } => a.tr_mul_vec(&self.residual_weights(&st.z)),
            Data::MultiClass { a, k, .. } => {
                let k = *k;
                let r = self.residual_weights(&st.z);
                let mut g = vec![0.0; self.n];
                for j in 0..a.ncols() {
                    let (rows, vals) = a.col(j);
                    for (&row, &v) in rows.iter().zip(vals) {
                        for c in 0..k {
                            g[j * k + c] += v * r[row * k + c];
                        }
                    }
                }
                g
            }
        }
    }

    /// Gradient entries for the coordinates in `b`.
    pub fn block_gradient(&self, st: &PointState, b: &Block) -> Result<Vec<f64>> {
        self.check_block(b)?;
        let idx = b.indices();
        Ok(match &self.data {
            Data::Quadratic { c, .. } => idx.iter().map(|&i| st.z[i] - c[i]).collect(),
            Data::LeastSquares { a, .. } => idx.iter().map(|&i| a.col_dot(i, &st.z)).collect(),
            Data::Logistic { a, .. } => {
                let w = self.residual_weights(&st.z);
                idx.iter().map(|&i| a.col_dot(i, &w)).collect()
            }
            Data::MultiClass { a, k, .. } => {
                let k = *k;
                let r = self.residual_weights(&st.z);
                idx.iter()
                    .map(|&i| {
                        let (j, c) = (i / k, i % k);
                        let (rows, vals) = a.col(j);
                        rows.iter().zip(vals).map(|(&row, &v)| v * r[row * k + c]).sum()
                    })
                    .collect()
            }
        })
    }

    /// Instantaneous block Hessian `grad^2_{bb} f(x)`.
    pub fn block_hessian(&self, st: &PointState, b: &Block) -> Result<DMatrix<f64>> {
        self.check_block(b)?;
        let idx = b.indices();
        Ok(match &self.data {
            Data::Quadratic { a, .. } => a.dense_block(idx, idx),
            Data::LeastSquares { a, .. } => a.weighted_gram(idx, None),
            Data::Logistic { a, .. } => {
                let w: Vec<f64> = st
                    .z
                    .iter()
                    .map(|&z| {
                        let s = sigmoid(z);
                        s * (1.0 - s)
                    })
                    .collect();
                a.weighted_gram(idx, Some(&w))
            }
            Data::MultiClass { a, k, .. } => {
                let k = *k;
                let m = a.nrows();
                let mut p = vec![0.0; st.z.len()];
                for (row, out) in st.z.chunks(k).zip(p.chunks_mut(k)) {
                    softmax_into(row, out);
                }
                let feats: Vec<usize> = idx.iter().map(|&i| i / k).collect();
                let mut uniq = feats.clone();
                uniq.dedup();
                let cols = a.dense_cols(&uniq);
                let pos: Vec<usize> = feats.iter().map(|f| uniq.binary_search(f).unwrap()).collect();
                let nb = idx.len();
                let mut h = DMatrix::zeros(nb, nb);
                for s in 0..nb {
                    let cs = idx[s] % k;
                    for t in s..nb {
                        let ct = idx[t] % k;
                        let delta = if cs == ct { 1.0 } else { 0.0 };
                        let mut acc = 0.0;
                        for i in 0..m {
                            let ai = cols[(i, pos[s])] * cols[(i, pos[t])];
                            if ai != 0.0 {
                                let pc = p[i * k + cs];
                                acc += ai * pc * (delta - p[i * k + ct]);
                            }
                        }
                        h[(s, t)] = acc;
                        h[(t, s)] = acc;
                    }
                }
                h
            }
        })
    }

    pub fn block_derivatives(&self, st: &PointState, b: &Block, with_hessian: bool) -> Result<BlockDerivatives> {
        Ok(BlockDerivatives {
            gradient: self.block_gradient(st, b)?,
            hessian: if with_hessian {
                Some(self.block_hessian(st, b)?)
            } else {
                None
            },
        })
    }

    /// Change of the linear cache for a unit step `d` on block `b`.
    pub fn step_image(&self, b: &Block, d: &[f64]) -> Vec<f64> {
        let idx = b.indices();
        match &self.data {
            Data::Quadratic { a, .. } => {
                let mut out = vec![0.0; self.n];
                a.add_cols_mul(idx, d, 1.0, &mut out);
                out
            }
            Data::LeastSquares { a, .. } | Data::Logistic { a, .. } => {
                let mut out = vec![0.0; a.nrows()];
                a.add_cols_mul(idx, d, 1.0, &mut out);
                out
            }
            Data::MultiClass { a, k, .. } => {
                let k = *k;
                let mut out = vec![0.0; a.nrows() * k];
                for (&i, &di) in idx.iter().zip(d) {
                    if di == 0.0 {
                        continue;
                    }
                    let (j, c) = (i / k, i % k);
                    let (rows, vals) = a.col(j);
                    for (&r, &v) in rows.iter().zip(vals) {
                        out[r * k + c] += v * di;
                    }
                }
                out
            }
        }
    }

    /// `f(x + alpha U_b d)` from the cache and a precomputed [`step_image`].
    ///
    /// [`step_image`]: ProblemInstance::step_image
    pub fn trial_value(&self, st: &PointState, b: &Block, d: &[f64], image: &[f64], alpha: f64) -> f64 {
        let idx = b.indices();
        match &self.data {
            Data::Quadratic { c, .. } => {
                let mut lin = 0.0;
                let mut quad = 0.0;
                for (&i, &di) in idx.iter().zip(d) {
                    lin += (st.z[i] - c[i]) * di;
                    quad += di * image[i];
                }
                st.f + alpha * lin + 0.5 * alpha * alpha * quad
            }
            Data::LeastSquares { .. } => 0.5 * st.z.iter().zip(image).map(|(r, v)| (r + alpha * v).powi(2)).sum::<f64>(),
            Data::Logistic { y, .. } => st
                .z
                .iter()
                .zip(image)
                .zip(y)
                .map(|((z, v), yi)| softplus(-yi * (z + alpha * v)))
                .sum(),
            Data::MultiClass { y, k, .. } => {
                let k = *k;
                let mut row = vec![0.0; k];
                let mut buf = vec![0.0; k];
                let mut s = 0.0;
                for (i, &yi) in y.iter().enumerate() {
                    for c in 0..k {
                        row[c] = st.z[i * k + c] + alpha * image[i * k + c];
                    }
                    s += softmax_into(&row, &mut buf) - row[yi];
                }
                s
            }
        }
    }

    /// Applies `x_b += alpha d`, updating the cache and objective value.
    pub fn apply_step(&self, st: &mut PointState, b: &Block, d: &[f64], image: &[f64], alpha: f64) {
        let f_new = self.trial_value(st, b, d, image, alpha);
        for (&i, &di) in b.indices().iter().zip(d) {
            st.x[i] += alpha * di;
        }
        for (z, v) in st.z.iter_mut().zip(image) {
            *z += alpha * v;
        }
        st.f = f_new;
    }

    /// Moves block `b` to `target` (absolute values).
    pub fn move_block_to(&self, st: &mut PointState, b: &Block, target: &[f64]) {
        let d: Vec<f64> = b.indices().iter().zip(target).map(|(&i, &t)| t - st.x[i]).collect();
        let img = self.step_image(b, &d);
        self.apply_step(st, b, &d, &img, 1.0);
        for (&i, &t) in b.indices().iter().zip(target) {
            st.x[i] = t;
        }
    }

    /// Adjacency of the Hessian sparsity pattern (off-diagonal non-zeros).
    pub fn dependency_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        match &self.data {
            Data::Quadratic { a, .. } => {
                for (j, list) in adj.iter_mut().enumerate() {
                    list.extend(a.col(j).0.iter().copied().filter(|&i| i != j));
                }
            }
            Data::LeastSquares { a, .. } | Data::Logistic { a, .. } => {
                for (r, c, _) in a.gram().triplets() {
                    if r != c {
                        adj[c].push(r);
                    }
                }
            }
            Data::MultiClass { a, k, .. } => {
                let k = *k;
                let g = a.gram();
                for j in 0..a.ncols() {
                    for &j2 in g.col(j).0 {
                        for c in 0..k {
                            for c2 in 0..k {
                                let (u, v) = (j * k + c, j2 * k + c2);
                                if u != v {
                                    adj[u].push(v);
                                }
                            }
                        }
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Composite value `sum_i g_i(x_i)`.
    pub fn composite_value(&self, x: &[f64]) -> f64 {
        self.composite.value(x)
    }

    /// `f(x) + g(x)`.
    pub fn total_value(&self, st: &PointState) -> f64 {
        st.f + self.composite.value(&st.x)
    }

    /// Separable prox on a block: `argmin_y 1/(2 alpha) ||y - v||^2 + g_b(y)`.
    pub fn prox_separable(&self, v: &[f64], alpha: f64) -> Result<Vec<f64>> {
        if self.composite == Composite::None {
            return Err(BcdError::NoComposite);
        }
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(BcdError::InvalidArgument(format!("prox step {alpha} must be positive")));
        }
        Ok(v.iter().map(|&vi| self.composite.prox(vi, alpha)).collect())
    }
}

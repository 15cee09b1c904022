//! Blocks, fixed partitions, dependency graphs and forest-structured blocks.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BcdError, Result};
use crate::objectives::ProblemInstance;

/// Sorted, duplicate-free set of coordinate indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    indices: Vec<usize>,
}

/// splitmix64 finalizer, used for order-independent block fingerprints.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Block {
    /// Sorts `indices` and checks distinctness and range.
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(BcdError::InvalidBlock(format!("duplicate index {}", w[0])));
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(BcdError::InvalidBlock(format!("index {last} >= n = {n}")));
            }
        }
        Ok(Self { indices })
    }

    pub fn full(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
        }
    }

    pub fn single(i: usize) -> Self {
        Self { indices: vec![i] }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Position of coordinate `i` inside the block.
    pub fn position(&self, i: usize) -> Option<usize> {
        self.indices.binary_search(&i).ok()
    }

    /// Order-independent 64-bit fingerprint.
    pub fn fingerprint(&self) -> u64 {
        self.indices
            .iter()
            .fold(0u64, |acc, &i| acc.wrapping_add(splitmix64(i as u64)))
    }
}

/// Placement strategy for fixed blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    Order,
    Avg,
    Sort,
    /// colour classes of a greedy graph colouring
    RedBlack,
    /// two spanning-forest halves of a lattice
    Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPartition {
    blocks: Vec<Block>,
    strategy: PartitionStrategy,
    tau: usize,
}

impl FixedPartition {
    /// Validates disjointness and coverage of `0..n`.
    pub fn new(blocks: Vec<Block>, n: usize, strategy: PartitionStrategy, tau: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for b in &blocks {
            if b.is_empty() {
                return Err(BcdError::InvalidBlock("empty block in partition".into()));
            }
            for &i in b.indices() {
                if i >= n {
                    return Err(BcdError::InvalidBlock(format!("index {i} >= n = {n}")));
                }
                if seen[i] {
                    return Err(BcdError::InvalidBlock(format!("index {i} in two blocks")));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(BcdError::InvalidBlock(format!("index {i} not covered")));
        }
        Ok(Self { blocks, strategy, tau })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn strategy(&self) -> PartitionStrategy {
        self.strategy
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

fn check_tau(n: usize, tau: usize) -> Result<()> {
    if tau == 0 || tau > n {
        return Err(BcdError::InvalidArgument(format!("block size {tau} outside [1, {n}]")));
    }
    Ok(())
}

/// Order, Sort or Avg partition into blocks of at most `tau` coordinates.
pub fn partition_fixed(n: usize, tau: usize, strategy: PartitionStrategy, lips: &[f64]) -> Result<FixedPartition> {
    check_tau(n, tau)?;
    if lips.len() != n {
        return Err(BcdError::Dimension {
            expected: n,
            got: lips.len(),
            context: "per-coordinate Lipschitz constants",
        });
    }
    let mut desc: Vec<usize> = (0..n).collect();
    desc.sort_by(|&a, &b| lips[b].total_cmp(&lips[a]).then(a.cmp(&b)));
    let order: Vec<usize> = match strategy {
        PartitionStrategy::Order => (0..n).collect(),
        PartitionStrategy::Sort => desc,
        PartitionStrategy::Avg => {
            // alternate largest and smallest remaining
            let (mut lo, mut hi) = (0usize, n);
            let mut out = Vec::with_capacity(n);
            let mut take_top = true;
            while lo < hi {
                if take_top {
                    out.push(desc[lo]);
                    lo += 1;
                } else {
                    hi -= 1;
                    out.push(desc[hi]);
                }
                take_top = !take_top;
            }
            out
        }
        PartitionStrategy::RedBlack | PartitionStrategy::Tree => {
            return Err(BcdError::InvalidArgument(format!(
                "{strategy:?} partitions are built from a graph"
            )))
        }
    };
    let blocks = order
        .chunks(tau)
        .map(|c| Block::new(c.to_vec(), n))
        .collect::<Result<Vec<_>>>()?;
    FixedPartition::new(blocks, n, strategy, tau)
}

/// `tau` distinct coordinates drawn uniformly without replacement.
pub fn sample_tau_nice<R: Rng + ?Sized>(n: usize, tau: usize, rng: &mut R) -> Result<Block> {
    check_tau(n, tau)?;
    let idx = rand::seq::index::sample(rng, n, tau).into_vec();
    Block::new(idx, n)
}

/// Undirected graph of the Hessian's off-diagonal non-zeros.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    adjacency: Vec<Vec<usize>>,
}

impl DependencyGraph {
    /// Takes per-node neighbour lists; they are sorted, deduplicated and
    /// checked for symmetry and self-loops.
    pub fn from_adjacency(mut adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = adjacency.len();
        for (i, list) in adjacency.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if list.binary_search(&i).is_ok() {
                return Err(BcdError::InvalidArgument(format!("self-loop at {i}")));
            }
            if list.last().is_some_and(|&j| j >= n) {
                return Err(BcdError::InvalidArgument(format!("neighbour of {i} out of range")));
            }
        }
        for i in 0..n {
            for &j in &adjacency[i] {
                if adjacency[j].binary_search(&i).is_err() {
                    return Err(BcdError::InvalidArgument(format!("edge {i}-{j} is not symmetric")));
                }
            }
        }
        Ok(Self { adjacency })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(BcdError::InvalidArgument(format!("edge {i}-{j} out of range")));
            }
            adj[i].push(j);
            adj[j].push(i);
        }
        Self::from_adjacency(adj)
    }

    pub fn from_problem(p: &ProblemInstance) -> Self {
        Self::from_adjacency(p.dependency_adjacency()).expect("Hessian pattern is symmetric")
    }

    /// 4-neighbour lattice with row-major node numbering.
    pub fn lattice(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                if c + 1 < cols {
                    edges.push((v, v + 1));
                }
                if r + 1 < rows {
                    edges.push((v, v + cols));
                }
            }
        }
        Self::from_edges(rows * cols, &edges).expect("lattice edges in range")
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }
}

/// Incremental forest membership.
///
/// Tree ids are merged with a union-find whose representatives carry the
/// minimum node number of their tree, so `tree_min` stays exact across
/// arbitrary merge sequences.
#[derive(Debug, Clone)]
pub struct ForestState {
    label: Vec<usize>,
    parent: Vec<usize>,
    size: Vec<usize>,
    min_node: Vec<usize>,
    stamp: Vec<u64>,
    epoch: u64,
    ops: u64,
    members: usize,
}

impl ForestState {
    pub fn new(node_count: usize) -> Self {
        Self {
            label: vec![0; node_count],
            // id 0 means "not in the forest"
            parent: vec![0],
            size: vec![0],
            min_node: vec![usize::MAX],
            stamp: vec![0],
            epoch: 0,
            ops: 0,
            members: 0,
        }
    }

    fn find(&mut self, mut t: usize) -> usize {
        let mut root = t;
        while self.parent[root] != root {
            root = self.parent[root];
            self.ops += 1;
        }
        while self.parent[t] != root {
            let next = self.parent[t];
            self.parent[t] = root;
            t = next;
        }
        root
    }

    /// Raw tree id of node `i` (0 when outside the forest).
    pub fn label(&self, i: usize) -> usize {
        self.label[i]
    }

    pub fn in_forest(&self, i: usize) -> bool {
        self.label[i] != 0
    }

    /// Minimum node number of the tree containing `i`.
    pub fn tree_min(&mut self, i: usize) -> Option<usize> {
        match self.label[i] {
            0 => None,
            l => {
                let r = self.find(l);
                Some(self.min_node[r])
            }
        }
    }

    /// Elementary steps performed so far (neighbour visits plus find hops).
    pub fn ops(&self) -> u64 {
        self.ops
    }

    pub fn len(&self) -> usize {
        self.members
    }

    pub fn is_empty(&self) -> bool {
        self.members == 0
    }

    /// Members in ascending order.
    pub fn nodes(&self) -> Vec<usize> {
        (0..self.label.len()).filter(|&i| self.label[i] != 0).collect()
    }

    /// Adds `i` if it keeps the member set a forest; unchanged on rejection.
    pub fn try_add(&mut self, g: &DependencyGraph, i: usize) -> Result<bool> {
        if i >= self.label.len() {
            return Err(BcdError::InvalidArgument(format!("node {i} out of range")));
        }
        if self.label[i] != 0 {
            return Err(BcdError::AlreadyInForest(i));
        }
        self.epoch += 1;
        let mut roots: Vec<usize> = Vec::new();
        for &j in g.neighbours(i) {
            self.ops += 1;
            let l = self.label[j];
            if l == 0 {
                continue;
            }
            let r = self.find(l);
            if self.stamp[r] == self.epoch {
                return Ok(false);
            }
            self.stamp[r] = self.epoch;
            roots.push(r);
        }
        let root = match roots.len() {
            0 => {
                let id = self.parent.len();
                self.parent.push(id);
                self.size.push(0);
                self.min_node.push(i);
                self.stamp.push(0);
                id
            }
            _ => {
                let mut big = roots[0];
                for &r in &roots[1..] {
                    if self.size[r] > self.size[big] {
                        big = r;
                    }
                }
                for &r in &roots {
                    if r != big {
                        self.parent[r] = big;
                        self.size[big] += self.size[r];
                        self.min_node[big] = self.min_node[big].min(self.min_node[r]);
                        self.ops += 1;
                    }
                }
                big
            }
        };
        self.size[root] += 1;
        self.min_node[root] = self.min_node[root].min(i);
        self.label[i] = root;
        self.members += 1;
        Ok(true)
    }
}

/// Single-call form of [`ForestState::try_add`].
pub fn forest_try_add(state: &mut ForestState, g: &DependencyGraph, i: usize) -> Result<bool> {
    state.try_add(g, i)
}

fn forest_in_order(g: &DependencyGraph, order: &[usize]) -> Block {
    let mut st = ForestState::new(g.node_count());
    for &i in order {
        st.try_add(g, i).expect("each node is visited once");
    }
    Block {
        indices: st.nodes(),
    }
}

/// Greedy maximal forest: repeatedly add the highest-scoring node that keeps
/// the forest property.
///
/// A rejected node has two neighbours in one tree, and trees only grow, so a
/// single pass in score order already yields a maximal forest.
pub fn greedy_forest(g: &DependencyGraph, scores: &[f64]) -> Result<Block> {
    if scores.len() != g.node_count() {
        return Err(BcdError::Dimension {
            expected: g.node_count(),
            got: scores.len(),
            context: "forest scores",
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(BcdError::InvalidArgument(format!("score {i} is not finite")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(forest_in_order(g, &order))
}

/// Maximal forest grown in a uniformly random node order.
pub fn random_forest<R: Rng + ?Sized>(g: &DependencyGraph, rng: &mut R) -> Block {
    let mut order: Vec<usize> = (0..g.node_count()).collect();
    order.shuffle(rng);
    forest_in_order(g, &order)
}

/// Greedy sequential colouring; colour classes become the blocks.
pub fn red_black_partition(g: &DependencyGraph) -> FixedPartition {
    let n = g.node_count();
    let mut colour = vec![usize::MAX; n];
    let mut used = Vec::new();
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        used.clear();
        used.extend(g.neighbours(i).iter().map(|&j| colour[j]).filter(|&c| c != usize::MAX));
        used.sort_unstable();
        used.dedup();
        let c = used.iter().enumerate().find(|(k, &c)| *k != c).map_or(used.len(), |(k, _)| k);
        colour[i] = c;
        if c == classes.len() {
            classes.push(Vec::new());
        }
        classes[c].push(i);
    }
    let tau = classes.iter().map(Vec::len).max().unwrap_or(0);
    let blocks = classes.into_iter().map(|indices| Block { indices }).collect();
    FixedPartition::new(blocks, n, PartitionStrategy::RedBlack, tau).expect("colour classes partition the nodes")
}

/// Which half of the comb partition lattice node `(r, c)` belongs to.
/// Half A is the top row plus the even columns of the interior rows; half B
/// is the bottom row plus the odd interior columns.
pub fn comb_half(rows: usize, r: usize, c: usize) -> usize {
    if r == 0 || (r + 1 < rows && c % 2 == 0) {
        0
    } else {
        1
    }
}

/// Two-block partition of a `rows x cols` lattice where each block induces a
/// tree: a spine row with alternate columns hanging off it.
pub fn tree_partition_lattice(rows: usize, cols: usize) -> Result<FixedPartition> {
    if rows < 2 || cols < 2 {
        return Err(BcdError::InvalidArgument(format!("lattice {rows}x{cols} must be at least 2x2")));
    }
    let mut halves = [Vec::new(), Vec::new()];
    for r in 0..rows {
        for c in 0..cols {
            halves[comb_half(rows, r, c)].push(r * cols + c);
        }
    }
    let tau = halves[0].len().max(halves[1].len());
    let blocks = halves.into_iter().map(|indices| Block { indices }).collect();
    FixedPartition::new(blocks, rows * cols, PartitionStrategy::Tree, tau)
}

/// [`tree_partition_lattice`] after checking that `g` is exactly that lattice.
pub fn tree_partition(g: &DependencyGraph, rows: usize, cols: usize) -> Result<FixedPartition> {
    if *g != DependencyGraph::lattice(rows, cols) {
        return Err(BcdError::InvalidArgument(format!("graph is not a {rows}x{cols} lattice")));
    }
    tree_partition_lattice(rows, cols)
}

/// Breadth-first levels of each tree of the subgraph induced by `b`.
///
/// Trees are rooted at `roots` where given, otherwise at their lowest node.
/// Each returned tree is a list of levels; level 0 holds the root.
pub fn level_sets(g: &DependencyGraph, b: &Block, roots: &[usize]) -> Result<Vec<Vec<Vec<usize>>>> {
    let n = g.node_count();
    if b.indices().last().is_some_and(|&i| i >= n) {
        return Err(BcdError::InvalidBlock("block exceeds graph".into()));
    }
    let mut visited = vec![false; n];
    let mut parent = vec![usize::MAX; n];
    let mut trees = Vec::new();
    let starts = roots.iter().copied().chain(b.indices().iter().copied());
    for root in starts {
        if !b.contains(root) {
            return Err(BcdError::InvalidArgument(format!("root {root} is not in the block")));
        }
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut levels = vec![vec![root]];
        loop {
            let mut next = Vec::new();
            for &u in levels.last().unwrap() {
                for &v in g.neighbours(u) {
                    if !b.contains(v) || v == parent[u] {
                        continue;
                    }
                    if visited[v] {
                        return Err(BcdError::CycleDetected(v));
                    }
                    visited[v] = true;
                    parent[v] = u;
                    next.push(v);
                }
            }
            if next.is_empty() {
                break;
            }
            next.sort_unstable();
            levels.push(next);
        }
        trees.push(levels);
    }
    Ok(trees)
}

//! Synthetic problem generators.
//!
//! Every random stage draws from its own ChaCha stream derived from the seed,
//! so a stage can be regenerated on its own and changing a size in one stage
//! never shifts the numbers of another.

use std::fmt;
use std::str::FromStr;

use bcd_core::sparse::{CscMatrix, Triplet};
use bcd_core::{LabelGraph, ProblemInstance};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetId {
    A,
    B,
    C,
    D,
    E,
}

impl DatasetId {
    pub const ALL: [DatasetId; 5] = [DatasetId::A, DatasetId::B, DatasetId::C, DatasetId::D, DatasetId::E];
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for DatasetId {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(DatasetId::A),
            "B" => Ok(DatasetId::B),
            "C" => Ok(DatasetId::C),
            "D" => Ok(DatasetId::D),
            "E" => Ok(DatasetId::E),
            _ => Err(BenchError::Usage(format!("unknown problem `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

impl FromStr for Scale {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(BenchError::Usage(format!("unknown scale `{s}`"))),
        }
    }
}

/// Sizes of every generator at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sizes {
    /// rows and columns of the least-squares design (A, B)
    pub ls: (usize, usize),
    /// samples, features and classes of the multi-class problem (C)
    pub mcl: (usize, usize, usize),
    /// lattice side and labeled node count (D)
    pub lattice: (usize, usize),
    /// samples and labeled points of the two-moons graph (E)
    pub moons: (usize, usize),
}

impl Scale {
    pub fn sizes(&self) -> Sizes {
        match self {
            Scale::Desk => Sizes {
                ls: (100, 1000),
                mcl: (200, 100, 10),
                lattice: (20, 40),
                moons: (200, 5),
            },
            Scale::Paper => Sizes {
                ls: (1000, 10000),
                mcl: (1000, 200, 50),
                lattice: (50, 200),
                moons: (500, 5),
            },
        }
    }
}

/// Edge weight of the lattice graph.
pub const LATTICE_WEIGHT: f64 = 10000.0;
/// Neighbours per node in the two-moons graph.
pub const MOONS_NEIGHBOURS: usize = 5;
/// Standard deviation of the two-moons noise.
pub const MOONS_NOISE: f64 = 0.1;
/// Probability of flipping a binary label.
pub const LABEL_FLIP: f64 = 0.1;

mod stream {
    pub const ENTRIES: u64 = 1;
    pub const COL_SCALE: u64 = 2;
    pub const MASK: u64 = 3;
    pub const X: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const FLIP: u64 = 6;
    pub const CLASS_X: u64 = 7;
    pub const CLASS_E: u64 = 8;
    pub const LABEL_NODES: u64 = 9;
    pub const LABEL_VALUES: u64 = 10;
    pub const MOON_POINTS: u64 = 11;
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normals(r: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| r.sample(StandardNormal)).collect()
}

/// Keep probability of the sparsified design, `10 log(m) / m` capped at 1.
pub fn keep_probability(m: usize) -> f64 {
    (10.0 * (m as f64).ln() / m as f64).min(1.0)
}

/// Sparse design: standard normal entries, plus one, each column scaled by
/// ten times a standard normal, then each entry kept with
/// [`keep_probability`].
pub fn sparse_design(m: usize, n: usize, seed: u64) -> CscMatrix {
    let mut entries = rng(seed, stream::ENTRIES);
    let mut scales = rng(seed, stream::COL_SCALE);
    let mut mask = rng(seed, stream::MASK);
    let keep = keep_probability(m);
    let mut trips: Vec<Triplet> = Vec::new();
    for j in 0..n {
        let s = 10.0 * scales.sample::<f64, _>(StandardNormal);
        for i in 0..m {
            let v = (entries.sample::<f64, _>(StandardNormal) + 1.0) * s;
            if mask.random::<f64>() < keep && v != 0.0 {
                trips.push((i, j, v));
            }
        }
    }
    CscMatrix::from_triplets(m, n, &trips).expect("generated indices are in range")
}

/// Everything the least-squares recipe draws.
#[derive(Debug, Clone)]
pub struct LeastSquaresData {
    pub a: CscMatrix,
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    pub b: Vec<f64>,
}

/// `b = A x + e` over a [`sparse_design`].
pub fn least_squares_data(m: usize, n: usize, seed: u64) -> LeastSquaresData {
    let a = sparse_design(m, n, seed);
    let x = normals(&mut rng(seed, stream::X), n);
    let e = normals(&mut rng(seed, stream::NOISE), m);
    let mut b = a.mul_vec(&x);
    b.iter_mut().zip(&e).for_each(|(bi, ei)| *bi += ei);
    LeastSquaresData { a, x, e, b }
}

/// Signs of `A x` with a fraction of them flipped.
pub fn binary_labels(data: &LeastSquaresData, seed: u64) -> Vec<f64> {
    let mut flip = rng(seed, stream::FLIP);
    data.a
        .mul_vec(&data.x)
        .into_iter()
        .map(|s| {
            let y = if s >= 0.0 { 1.0 } else { -1.0 };
            if flip.random::<f64>() < LABEL_FLIP {
                -y
            } else {
                y
            }
        })
        .collect()
}

/// Class labels `argmax_c (A X + E)_ic`, ties to the lower class.
pub fn class_labels(a: &CscMatrix, k: usize, seed: u64) -> Vec<usize> {
    let (m, d) = (a.nrows(), a.ncols());
    let xs = normals(&mut rng(seed, stream::CLASS_X), d * k);
    let mut scores = normals(&mut rng(seed, stream::CLASS_E), m * k);
    for j in 0..d {
        let (rows, vals) = a.col(j);
        for (&i, &v) in rows.iter().zip(vals) {
            for c in 0..k {
                scores[i * k + c] += v * xs[j * k + c];
            }
        }
    }
    scores
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Lattice label-propagation graph: 4-neighbour edges of weight
/// [`LATTICE_WEIGHT`] and `labeled` random nodes with random `{-1, 1}` labels.
pub fn lattice_graph(side: usize, labeled: usize, seed: u64) -> LabelGraph {
    let mut edges = Vec::new();
    for r in 0..side {
        for c in 0..side {
            let v = r * side + c;
            if c + 1 < side {
                edges.push((v, v + 1, LATTICE_WEIGHT));
            }
            if r + 1 < side {
                edges.push((v, v + side, LATTICE_WEIGHT));
            }
        }
    }
    let mut nodes = sample(&mut rng(seed, stream::LABEL_NODES), side * side, labeled).into_vec();
    nodes.sort_unstable();
    let mut values = rng(seed, stream::LABEL_VALUES);
    let labels = nodes
        .into_iter()
        .map(|v| (v, if values.random::<bool>() { 1.0 } else { -1.0 }))
        .collect();
    LabelGraph {
        node_count: side * side,
        edges,
        labels,
        lattice: Some((side, side)),
    }
}

/// Two interleaved half circles with Gaussian noise; returns the points and
/// the moon of each point as `{-1, 1}`.
pub fn two_moons(samples: usize, seed: u64) -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut r = rng(seed, stream::MOON_POINTS);
    let upper = samples.div_ceil(2);
    let mut pts = Vec::with_capacity(samples);
    let mut moon = Vec::with_capacity(samples);
    for i in 0..samples {
        let t = std::f64::consts::PI * r.random::<f64>();
        let nx = MOONS_NOISE * r.sample::<f64, _>(StandardNormal);
        let ny = MOONS_NOISE * r.sample::<f64, _>(StandardNormal);
        if i < upper {
            pts.push([t.cos() + nx, t.sin() + ny]);
            moon.push(1.0);
        } else {
            pts.push([1.0 - t.cos() + nx, 0.5 - t.sin() + ny]);
            moon.push(-1.0);
        }
    }
    (pts, moon)
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Symmetrized k-nearest-neighbour edges (an edge is kept when either end
/// lists the other), sorted.
pub fn knn_edges(pts: &[[f64; 2]], k: usize) -> Vec<(usize, usize)> {
    let n = pts.len();
    let mut edges = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist2(&pts[i], &pts[a]).total_cmp(&dist2(&pts[i], &pts[b])).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            edges.push((i.min(j), i.max(j)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

fn components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = next;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if comp[w] == usize::MAX {
                    comp[w] = next;
                    stack.push(w);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Joins the components of a kNN graph by repeatedly adding the shortest
/// edge between the component of node 0 and the rest.
pub fn connect_components(pts: &[[f64; 2]], edges: &mut Vec<(usize, usize)>) {
    loop {
        let comp = components(pts.len(), edges);
        if comp.iter().all(|&c| c == 0) {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for i in (0..pts.len()).filter(|&i| comp[i] == 0) {
            for j in (0..pts.len()).filter(|&j| comp[j] != 0) {
                let d = dist2(&pts[i], &pts[j]);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("a second component exists");
        edges.push((i.min(j), i.max(j)));
        edges.sort_unstable();
    }
}

/// Two-moons label-propagation graph with unit weights and `labeled` random
/// points labeled by their moon.
pub fn moons_graph(samples: usize, labeled: usize, seed: u64) -> LabelGraph {
    let (pts, moon) = two_moons(samples, seed);
    let mut edges = knn_edges(&pts, MOONS_NEIGHBOURS);
    connect_components(&pts, &mut edges);
    let mut nodes = sample(&mut rng(seed, stream::LABEL_NODES), samples, labeled).into_vec();
    nodes.sort_unstable();
    LabelGraph {
        node_count: samples,
        edges: edges.into_iter().map(|(i, j)| (i, j, 1.0)).collect(),
        labels: nodes.into_iter().map(|v| (v, moon[v])).collect(),
        lattice: None,
    }
}

/// Builds dataset `id` at `scale`.
pub fn gen_dataset(id: DatasetId, scale: Scale, seed: u64) -> Result<ProblemInstance> {
    let sz = scale.sizes();
    let p = match id {
        DatasetId::A => {
            let d = least_squares_data(sz.ls.0, sz.ls.1, seed);
            ProblemInstance::least_squares(d.a, d.b)?
        }
        DatasetId::B => {
            let d = least_squares_data(sz.ls.0, sz.ls.1, seed);
            let y = binary_labels(&d, seed);
            ProblemInstance::logistic(d.a, y)?
        }
        DatasetId::C => {
            let (m, d, k) = sz.mcl;
            let a = sparse_design(m, d, seed);
            let y = class_labels(&a, k, seed);
            ProblemInstance::multiclass_logistic(a, y, k)?
        }
        DatasetId::D => ProblemInstance::label_propagation(lattice_graph(sz.lattice.0, sz.lattice.1, seed))?,
        DatasetId::E => ProblemInstance::label_propagation(moons_graph(sz.moons.0, sz.moons.1, seed))?,
    };
    Ok(p)
}

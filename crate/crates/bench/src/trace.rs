//! Per-iteration traces and their CSV / JSON forms.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{BenchError, Result};

pub const CSV_HEADER: [&str; 11] = [
    "iter",
    "obj",
    "gap",
    "grad_norm",
    "block_size",
    "block_hash",
    "step",
    "score",
    "active_count",
    "coord_updates",
    "ms",
];

/// One trace row. Row 0 is the starting point; row `k` describes `x^k` and
/// the update that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// `f(x^k) + g(x^k)`
    pub obj: f64,
    /// `obj - f*`
    pub gap: f64,
    /// max-norm of the gradient, or of the minimum-norm subgradient when a
    /// separable term is present
    pub grad_norm: f64,
    pub block_size: usize,
    /// order-independent hash of the block's indices
    pub block_hash: u64,
    pub step: f64,
    /// value of the selection rule at the chosen block
    pub score: f64,
    /// coordinates at the manifold value zero (separable problems only)
    pub active_count: usize,
    /// cumulative count of changed coordinates
    pub coord_updates: u64,
    /// wall time since the start, zero unless requested
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// per row, the number of reference active-set coordinates at zero
    pub zero_hits: Vec<usize>,
    /// per row, guaranteed decrease claimed by the update (row 0 has none)
    pub certificates: Vec<Option<f64>>,
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV text of the trace rows.
pub fn to_csv(trace: &Trace) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in &trace.rows {
        w.write_record([
            r.iter.to_string(),
            float(r.obj),
            float(r.gap),
            float(r.grad_norm),
            r.block_size.to_string(),
            r.block_hash.to_string(),
            float(r.step),
            float(r.score),
            r.active_count.to_string(),
            r.coord_updates.to_string(),
            float(r.ms),
        ])?;
    }
    w.into_inner().map_err(|e| BenchError::Trace(e.to_string()))
}

/// Parses rows written by [`to_csv`].
pub fn parse_csv(bytes: &[u8]) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(BenchError::Trace(format!("unexpected header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(BenchError::from)).collect()
}

/// Writes the trace CSV to `path`.
pub fn emit_trace(trace: &Trace, path: &Path) -> Result<()> {
    fs::write(path, to_csv(trace)?).map_err(|e| BenchError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    parse_csv(&fs::read(path).map_err(|e| BenchError::io(path, e))?)
}

/// Sidecar path: the trace path with `.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// An objective increase or broken progress guarantee that stopped a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub iter: usize,
    pub kind: ViolationKind,
    pub before: f64,
    pub after: f64,
    /// guaranteed decrease for certificate violations
    pub expected: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    ObjectiveIncrease,
    Certificate,
}

/// Summary of a run against its reference solution.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub f_star: f64,
    /// how `f_star` was obtained
    pub f_star_source: String,
    /// separable weight actually used
    pub lambda: Option<f64>,
    /// reference active set: coordinates at zero in the reference solution
    pub active_set_star: Option<Vec<usize>>,
    /// first row after which every row has the whole reference active set
    /// at zero
    pub identification_iteration: Option<usize>,
    /// least-squares slope of `ln(gap)` per iteration
    pub empirical_rate: Option<f64>,
    /// smallest eigenvalue of the smooth Hessian
    pub mu_hat: Option<f64>,
    /// `kappa` with `||x^k - x*|| <= (1 - 1/kappa)^k gamma` induced by the
    /// fitted rate on the gap
    pub kappa_hat: Option<f64>,
    /// `sqrt(2 (F(x^0) - F*) / mu)`
    pub gamma_hat: Option<f64>,
    /// minimum distance of `-grad_i f(x*)` to the boundary of the
    /// subdifferential over the reference active set
    pub delta: Option<f64>,
    /// global Lipschitz estimate used in the identification bound
    pub lipschitz: Option<f64>,
    /// `kappa log(2 L gamma / delta)`
    pub identification_bound: Option<f64>,
    pub violation: Option<Violation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: SolverConfig,
    pub report: AnalysisReport,
}

/// Writes the JSON sidecar next to `path`.
pub fn emit_sidecar(config: &SolverConfig, report: &AnalysisReport, path: &Path) -> Result<()> {
    let side = Sidecar {
        config: config.clone(),
        report: report.clone(),
    };
    let mut s = serde_json::to_string_pretty(&side)?;
    s.push('\n');
    let p = sidecar_path(path);
    fs::write(&p, s).map_err(|e| BenchError::io(&p, e))
}

/// First row `k` such that every row from `k` on has all `z_len`
/// reference active-set coordinates at zero.
pub fn first_stable_identification(zero_hits: &[usize], z_len: usize) -> Option<usize> {
    let mut k = zero_hits.len();
    while k > 0 && zero_hits[k - 1] == z_len {
        k -= 1;
    }
    (k < zero_hits.len()).then_some(k)
}

/// Least-squares slope of `ln(gap)` against the iteration over rows with a
/// gap above `floor`.
pub fn log_gap_slope(rows: &[TraceRow], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.gap > floor)
        .map(|r| (r.iter as f64, r.gap.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, obj: f64) -> TraceRow {
        TraceRow {
            iter: k,
            obj,
            gap: obj - 0.1,
            grad_norm: 1.0 / 3.0,
            block_size: 4,
            block_hash: u64::MAX - k as u64,
            step: std::f64::consts::PI,
            score: 1e-300,
            active_count: 2,
            coord_updates: 4 * k as u64,
            ms: 0.0,
        }
    }

    #[test]
    fn empty_trace_is_header_only() {
        let bytes = to_csv(&Trace::default()).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), CSV_HEADER.join(",") + "\n");
        assert!(parse_csv(CSV_HEADER.join(",").as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn rows_round_trip_exactly() {
        let rows: Vec<TraceRow> = (0..50).map(|k| row(k, 1.0 / (k as f64 + 0.7))).collect();
        let t = Trace {
            rows: rows.clone(),
            ..Trace::default()
        };
        let back = parse_csv(&to_csv(&t).unwrap()).unwrap();
        assert_eq!(back, rows);
        let text = String::from_utf8(to_csv(&t).unwrap()).unwrap();
        let gap = text.lines().nth(1).unwrap().split(',').nth(2).unwrap();
        let mantissa = gap.split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17);
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(parse_csv(b"iter,obj\n0,1\n").is_err());
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let t = Trace::default();
        assert!(emit_trace(&t, Path::new("/nonexistent-dir/x/trace.csv")).is_err());
    }

    #[test]
    fn identification_examples() {
        assert_eq!(first_stable_identification(&[3, 3, 3], 3), Some(0));
        assert_eq!(first_stable_identification(&[0, 3, 1, 3, 3], 3), Some(3));
        assert_eq!(first_stable_identification(&[0, 3, 1], 3), None);
        assert_eq!(first_stable_identification(&[], 3), None);
    }

    #[test]
    fn slope_of_geometric_gap() {
        let rows: Vec<TraceRow> = (0..20)
            .map(|k| TraceRow {
                iter: k,
                gap: 0.5f64.powi(k as i32),
                ..TraceRow::default()
            })
            .collect();
        assert!((log_gap_slope(&rows, 0.0).unwrap() - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(log_gap_slope(&rows[..1], 0.0), None);
    }

    #[test]
    fn sidecar_sits_next_to_trace() {
        assert_eq!(sidecar_path(Path::new("/tmp/a.csv")), PathBuf::from("/tmp/a.csv.json"));
    }
}

//! CSV and text writers. Floats are written in shortest round-trip form, so
//! every value reads back bit-exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use hcre_core::asymptotic::SweepTable;
use hcre_core::hcre::SolveReport;
use hcre_core::steady::SteadyCovariance;

use crate::error::{HarnessError, Result};

/// `prefix/name` when `prefix` is a directory (or ends in a separator),
/// otherwise `prefix_name`.
pub fn prefixed(prefix: &Path, name: &str) -> PathBuf {
    let s = prefix.as_os_str().to_string_lossy();
    if prefix.is_dir() || s.ends_with('/') || s.ends_with(std::path::MAIN_SEPARATOR) {
        prefix.join(name)
    } else {
        PathBuf::from(format!("{s}_{name}"))
    }
}

/// Creates `path`, including missing parent directories.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create_file(path)?))
}

fn rows_to_csv(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    let wrap = |e| HarnessError::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn node_columns(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

/// Columns `k, trace_P1 … trace_PN`.
pub fn write_trace_history(path: &Path, report: &SolveReport) -> Result<()> {
    let n = report.trace_history.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("k".to_string())
        .chain(node_columns("trace_P", n))
        .collect();
    let rows = report.trace_history.iter().enumerate().map(|(k, traces)| {
        std::iter::once(k.to_string())
            .chain(traces.iter().map(f64::to_string))
            .collect()
    });
    rows_to_csv(path, &header, rows)
}

/// One row: `trace_node_1 … trace_node_N, network_mse`.
pub fn write_steady_row(path: &Path, cov: &SteadyCovariance) -> Result<()> {
    let n = cov.per_node_trace.len();
    let header: Vec<String> = node_columns("trace_node_", n)
        .chain(std::iter::once("network_mse".to_string()))
        .collect();
    let row: Vec<String> = cov
        .per_node_trace
        .iter()
        .chain(std::iter::once(&cov.network_mse))
        .map(f64::to_string)
        .collect();
    rows_to_csv(path, &header, [row])
}

/// Largest `nN` for which the full stacked covariance is written.
pub const PCAL_DUMP_LIMIT: usize = 64;

/// Row-major text, one matrix row per line, values separated by spaces.
pub fn write_matrix_text(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() > PCAL_DUMP_LIMIT {
        return Err(HarnessError::InvalidArgument(format!(
            "matrix has {} rows; text dumps are limited to {PCAL_DUMP_LIMIT}",
            m.nrows()
        )));
    }
    let mut f = create_file(path)?;
    for i in 0..m.nrows() {
        let line: Vec<String> = m.row(i).iter().map(f64::to_string).collect();
        writeln!(f, "{}", line.join(" ")).map_err(|e| HarnessError::io(path, e))?;
    }
    f.flush().map_err(|e| HarnessError::io(path, e))
}

/// Columns `L, trace_node_1 … trace_node_N, centralized_trace, asymptotic_trace`.
pub fn write_sweep(path: &Path, table: &SweepTable) -> Result<()> {
    let n = table.rows.first().map_or(0, |r| r.traces.len());
    let header: Vec<String> = std::iter::once("L".to_string())
        .chain(node_columns("trace_node_", n))
        .chain([
            "centralized_trace".to_string(),
            "asymptotic_trace".to_string(),
        ])
        .collect();
    let rows = table.rows.iter().map(|r| {
        std::iter::once(r.depth.to_string())
            .chain(r.traces.iter().map(f64::to_string))
            .chain([
                table.centralized_trace.to_string(),
                table.asymptotic_trace.to_string(),
            ])
            .collect()
    });
    rows_to_csv(path, &header, rows)
}

/// Columns `k, node, squared_error` from `[k][i]` squared errors.
pub fn write_error_series(path: &Path, squared: &[Vec<f64>]) -> Result<()> {
    let header = [
        "k".to_string(),
        "node".to_string(),
        "squared_error".to_string(),
    ];
    let rows = squared.iter().enumerate().flat_map(|(k, row)| {
        row.iter()
            .enumerate()
            .map(move |(i, e)| vec![k.to_string(), (i + 1).to_string(), e.to_string()])
    });
    rows_to_csv(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_rules() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(prefixed(dir.path(), "a.csv"), dir.path().join("a.csv"));
        assert_eq!(
            prefixed(Path::new("out/run"), "a.csv"),
            PathBuf::from("out/run_a.csv")
        );
        assert_eq!(
            prefixed(Path::new("out/"), "a.csv"),
            PathBuf::from("out/a.csv")
        );
    }

    #[test]
    fn trace_history_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let report = SolveReport {
            iterations: 1,
            residual: 0.0,
            trace_history: vec![vec![1.0, 0.1 + 0.2], vec![2.0, 1.0 / 3.0]],
            converged: true,
            tolerance: 1e-10,
        };
        write_trace_history(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,trace_P1,trace_P2");
        let back: f64 = lines[2].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(back, 1.0 / 3.0);
        let back: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(back, 0.1 + 0.2);
    }

    #[test]
    fn matrix_dump_is_size_guarded() {
        let dir = tempfile::tempdir().unwrap();
        let big = DMatrix::zeros(PCAL_DUMP_LIMIT + 1, PCAL_DUMP_LIMIT + 1);
        assert!(write_matrix_text(&dir.path().join("m.txt"), &big).is_err());
        let small = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        write_matrix_text(&dir.path().join("m.txt"), &small).unwrap();
        assert_eq!(
            std::fs::read_to_string(dir.path().join("m.txt")).unwrap(),
            "1 0.5\n0.5 2\n"
        );
    }
}

//! Monte Carlo evaluation of the distributed filter against the steady-state
//! theory, and report files.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use hcre_core::filtersim::GainSchedule;
use hcre_core::hcre::{solve_fixed_point, Init, SolveOptions};
use hcre_core::steady::{build_error_operators, steady_covariance};

use crate::error::{HarnessError, Result};
use crate::output::{create_file, csv_writer, prefixed};
use crate::scenario::{ensure_valid, Preset, Scenario, WeightChoice};

/// Trials summed per work unit; fixed so the reduction order never depends on
/// the number of threads.
pub const TRIAL_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub trials: usize,
    pub horizon: usize,
    pub seed: u64,
    pub weights: WeightChoice,
    pub topology_seed: Option<u64>,
    pub noise_scale: f64,
    pub solve: SolveOptions,
}

impl ExperimentConfig {
    pub fn new(preset: Preset) -> Self {
        ExperimentConfig {
            preset,
            trials: 1000,
            horizon: 100,
            seed: 0,
            weights: WeightChoice::default(),
            topology_seed: None,
            noise_scale: 1.0,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub preset: String,
    pub variant: String,
    pub depth: usize,
    pub trials: usize,
    pub horizon: usize,
    pub seed: u64,
    pub topology_seed: Option<u64>,
    pub noise_scale: f64,
    /// `mse_ik[k][i]`: trial-averaged `‖x_k − x̂_{i,k|k-1}‖²`.
    #[serde(skip)]
    pub mse_ik: Vec<Vec<f64>>,
    /// Mean over nodes of `mse_ik[k]`.
    #[serde(skip)]
    pub mse_k: Vec<f64>,
    pub theory_mse: f64,
    pub theory_per_node: Vec<f64>,
    /// First step of the tail window (the last quarter of the horizon).
    pub tail_start: usize,
    pub tail_mse: f64,
    pub relative_gap_tail: f64,
    pub solver_iterations: usize,
    pub solver_residual: f64,
}

/// Number of steps in the tail window.
pub fn tail_len(horizon: usize) -> usize {
    horizon.div_ceil(4).max(1)
}

/// Runs `trials` independent simulations (trial `t` uses seed `seed + t`),
/// all starting from `x_0 = 0`, `x̂ = 0`, `P = I`, and compares the tail of the
/// network MSE with the steady-state theory.
pub fn monte_carlo(cfg: &ExperimentConfig) -> Result<McReport> {
    if cfg.trials == 0 || cfg.horizon == 0 {
        return Err(HarnessError::InvalidArgument(
            "trials and horizon must be at least 1".into(),
        ));
    }
    let scenario = Scenario::load(&cfg.preset, cfg.topology_seed)?;
    let weights = scenario.weights(&cfg.weights)?;
    let model = &scenario.model;
    ensure_valid(model, &weights)?;

    let (solution, report) = solve_fixed_point(model, &weights, &Init::Identity, &cfg.solve)?;
    if !report.converged {
        return Err(hcre_core::Error::NoConvergence {
            what: "fixed-point iteration",
            iterations: report.iterations,
        }
        .into());
    }
    let ops = build_error_operators(&solution, model, &weights)?;
    let theory = steady_covariance(&ops)?;

    let p0 = Init::Identity.build(model)?;
    let schedule = GainSchedule::new(model, &weights, &p0, cfg.horizon)?;
    let (n, nodes, horizon) = (model.n(), model.n_nodes(), cfg.horizon);
    let zero = DVector::zeros(n);

    let chunks: Vec<(usize, usize)> = (0..cfg.trials)
        .step_by(TRIAL_CHUNK)
        .map(|start| (start, (start + TRIAL_CHUNK).min(cfg.trials)))
        .collect();
    let partial: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|&(start, end)| -> Result<Vec<f64>> {
            let mut sums = vec![0.0; horizon * nodes];
            for t in start..end {
                let seed = cfg.seed.wrapping_add(t as u64);
                let sq = schedule.simulate_errors(horizon, &zero, seed, cfg.noise_scale)?;
                for (k, row) in sq.iter().enumerate() {
                    for (i, e) in row.iter().enumerate() {
                        sums[k * nodes + i] += e;
                    }
                }
            }
            Ok(sums)
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0; horizon * nodes];
    for chunk in &partial {
        for (s, c) in sums.iter_mut().zip(chunk) {
            *s += c;
        }
    }

    let trials = cfg.trials as f64;
    let mse_ik: Vec<Vec<f64>> = sums
        .chunks(nodes)
        .map(|r| r.iter().map(|s| s / trials).collect())
        .collect();
    let mse_k: Vec<f64> = mse_ik
        .iter()
        .map(|r| r.iter().sum::<f64>() / nodes as f64)
        .collect();
    let tail_start = horizon - tail_len(horizon);
    let tail = &mse_k[tail_start..];
    let tail_mse = tail.iter().sum::<f64>() / tail.len() as f64;

    Ok(McReport {
        preset: scenario.name.clone(),
        variant: weights.variant.name().to_string(),
        depth: weights.fusion_depth,
        trials: cfg.trials,
        horizon,
        seed: cfg.seed,
        topology_seed: scenario.topology_seed(),
        noise_scale: cfg.noise_scale,
        mse_ik,
        mse_k,
        theory_mse: theory.network_mse,
        theory_per_node: theory.per_node_trace,
        tail_start,
        tail_mse,
        relative_gap_tail: (tail_mse - theory.network_mse).abs() / theory.network_mse,
        solver_iterations: report.iterations,
        solver_residual: report.residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub mse_curves: PathBuf,
    pub per_node: PathBuf,
    pub summary: PathBuf,
}

/// Writes `mse_curves.csv` (k, mse_k, theory_mse), `per_node.csv`
/// (k, node, mse_ik) and `summary.json` under `prefix`.
pub fn emit_report(report: &McReport, prefix: &Path) -> Result<ReportFiles> {
    let files = ReportFiles {
        mse_curves: prefixed(prefix, "mse_curves.csv"),
        per_node: prefixed(prefix, "per_node.csv"),
        summary: prefixed(prefix, "summary.json"),
    };

    let mut w = csv_writer(&files.mse_curves)?;
    w.write_record(["k", "mse_k", "theory_mse"])
        .map_err(wrap(&files.mse_curves))?;
    for (k, m) in report.mse_k.iter().enumerate() {
        w.serialize((k, m, report.theory_mse))
            .map_err(wrap(&files.mse_curves))?;
    }
    w.flush()
        .map_err(|e| HarnessError::io(&files.mse_curves, e))?;

    let mut w = csv_writer(&files.per_node)?;
    w.write_record(["k", "node", "mse_ik"])
        .map_err(wrap(&files.per_node))?;
    for (k, row) in report.mse_ik.iter().enumerate() {
        for (i, m) in row.iter().enumerate() {
            w.serialize((k, i + 1, m)).map_err(wrap(&files.per_node))?;
        }
    }
    w.flush()
        .map_err(|e| HarnessError::io(&files.per_node, e))?;

    let mut f = create_file(&files.summary)?;
    serde_json::to_writer_pretty(&mut f, report)
        .map_err(|e| HarnessError::io(&files.summary, std::io::Error::other(e)))?;
    std::io::Write::write_all(&mut f, b"\n").map_err(|e| HarnessError::io(&files.summary, e))?;
    std::io::Write::flush(&mut f).map_err(|e| HarnessError::io(&files.summary, e))?;
    Ok(files)
}

fn wrap(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(preset: Preset) -> ExperimentConfig {
        ExperimentConfig {
            trials: 40,
            horizon: 20,
            ..ExperimentConfig::new(preset)
        }
    }

    #[test]
    fn deterministic_and_consistent() {
        let cfg = small(Preset::Scalar);
        let a = monte_carlo(&cfg).unwrap();
        let b = monte_carlo(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mse_k.len(), 20);
        assert_eq!(a.tail_start, 15);
        for (row, m) in a.mse_ik.iter().zip(&a.mse_k) {
            assert!(row.iter().all(|x| *x >= 0.0));
            assert!((row.iter().sum::<f64>() / 3.0 - m).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_runs_have_zero_error() {
        let cfg = ExperimentConfig {
            noise_scale: 0.0,
            ..small(Preset::Scalar)
        };
        let r = monte_carlo(&cfg).unwrap();
        assert!(r.mse_k.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn rejects_empty_runs() {
        let cfg = ExperimentConfig {
            trials: 0,
            ..small(Preset::Scalar)
        };
        assert!(matches!(
            monte_carlo(&cfg),
            Err(HarnessError::InvalidArgument(_))
        ));
    }

    #[test]
    fn tail_window() {
        assert_eq!(tail_len(100), 25);
        assert_eq!(tail_len(1), 1);
        assert_eq!(tail_len(10), 3);
    }
}

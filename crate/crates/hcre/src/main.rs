use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use hcre::output::{
    prefixed, write_error_series, write_matrix_text, write_steady_row, write_sweep,
    write_trace_history,
};
use hcre::scenario::ensure_valid;
use hcre::{
    emit_report, monte_carlo, ExperimentConfig, HarnessError, Preset, Result, Scenario,
    VariantChoice, WeightChoice,
};
use hcre_core::asymptotic::{fusion_depth_sweep, SweepVariant};
use hcre_core::filtersim::{run_filter, simulate_plant, FilterBank};
use hcre_core::hcre::{
    classical_bound_demo, contraction_certificate, monotone_solve, solve_fixed_point,
    verify_uniqueness, Init, SolveOptions,
};
use hcre_core::steady::{build_error_operators, schur_certificate, steady_covariance};

/// Harmonic-coupled Riccati equations: fixed points, certificates,
/// steady-state theory and Monte Carlo checks for distributed filters.
#[derive(Parser)]
#[command(name = "hcre", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the coupled fixed point and print per-node traces.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Start from c·I instead of I.
        #[arg(long)]
        init_scale: Option<f64>,
        /// Use the monotone solve from a small ε·I.
        #[arg(long)]
        monotone: bool,
    },
    /// Uniqueness over several initializations, contraction and Schur certificates.
    Certify {
        #[command(flatten)]
        common: Common,
    },
    /// Steady-state error covariance of the filter.
    Steady {
        #[command(flatten)]
        common: Common,
        /// Also write the full stacked covariance (small problems only).
        #[arg(long)]
        dump_pcal: bool,
    },
    /// Per-node traces as the fusion depth grows.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 5, 10, 20, 30, 60])]
        depths: Vec<usize>,
        /// CIDF only: use Metropolis weights when the graph's own weights are
        /// not doubly stochastic.
        #[arg(long)]
        doubly_stochastic: bool,
    },
    /// Monte Carlo MSE against the steady-state theory.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        noise_scale: f64,
        /// Write the squared-error series of the first trial.
        #[arg(long)]
        error_series: bool,
    },
    /// The classical boundedness estimate against the exact fixed point.
    DemoBound {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Scalar,
    Random6d,
    TargetTracking,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Cidf,
    Metropolis,
    Icf,
    Cmci,
    Custom,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, value_enum, conflicts_with = "config")]
    preset: Option<PresetArg>,
    /// TOML scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Fusion depth L.
    #[arg(long)]
    depth: Option<usize>,
    /// ICF consensus step.
    #[arg(long)]
    epsilon: Option<f64>,
    /// CMCI local weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    omega: Option<Vec<f64>>,
    /// Seed of the random geometric layout.
    #[arg(long)]
    topology_seed: Option<u64>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 100)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix: a directory, or a path stem that file names are appended to.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn preset(&self) -> Preset {
        match (&self.config, self.preset) {
            (Some(path), _) => Preset::Custom(path.clone()),
            (None, Some(PresetArg::Random6d)) => Preset::Random6d,
            (None, Some(PresetArg::TargetTracking)) => Preset::TargetTracking,
            (None, _) => Preset::Scalar,
        }
    }

    fn weight_choice(&self) -> WeightChoice {
        WeightChoice {
            variant: self.variant.map(|v| match v {
                VariantArg::Cidf => VariantChoice::Cidf,
                VariantArg::Metropolis => VariantChoice::Metropolis,
                VariantArg::Icf => VariantChoice::Icf,
                VariantArg::Cmci => VariantChoice::Cmci,
                VariantArg::Custom => VariantChoice::Custom,
            }),
            depth: self.depth,
            epsilon: self.epsilon,
            omega: self.omega.clone(),
        }
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    fn load(&self) -> Result<(Scenario, hcre_core::FusionWeights)> {
        let scenario = Scenario::load(&self.preset(), self.topology_seed)?;
        let weights = scenario.weights(&self.weight_choice())?;
        ensure_valid(&scenario.model, &weights)?;
        Ok((scenario, weights))
    }
}

fn header(scenario: &Scenario, weights: &hcre_core::FusionWeights) -> Value {
    json!({
        "preset": scenario.name,
        "variant": weights.variant.name(),
        "depth": weights.fusion_depth,
        "nodes": scenario.model.n_nodes(),
        "state_dim": scenario.model.n(),
        "topology_seed": scenario.topology_seed(),
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn not_converged(iterations: usize) -> HarnessError {
    hcre_core::Error::NoConvergence {
        what: "fixed-point iteration",
        iterations,
    }
    .into()
}

fn solve(common: &Common, init_scale: Option<f64>, monotone: bool) -> Result<Value> {
    let (scenario, weights) = common.load()?;
    let opts = common.solve_options();
    let (solution, report, epsilon) = if monotone {
        let (s, r, e) = monotone_solve(&scenario.model, &weights, &opts)?;
        (s, r, Some(e))
    } else {
        let init = init_scale.map_or(Init::Identity, Init::Scaled);
        let (s, r) = solve_fixed_point(&scenario.model, &weights, &init, &opts)?;
        (s, r, None)
    };
    let mut files = Vec::new();
    if let Some(out) = &common.out {
        let path = prefixed(out, "traces.csv");
        write_trace_history(&path, &report)?;
        files.push(path);
    }
    Ok(merge(
        header(&scenario, &weights),
        json!({
            "status": "ok",
            "converged": report.converged,
            "iterations": report.iterations,
            "residual": report.residual,
            "tolerance": report.tolerance,
            "traces": solution.traces(),
            "contraction_ratio": report.contraction_ratio(10),
            "monotone_epsilon": epsilon,
            "files": files,
        }),
    ))
}

fn certify(common: &Common) -> Result<Value> {
    let (scenario, weights) = common.load()?;
    let model = &scenario.model;
    let opts = common.solve_options();
    let inits = [Init::Scaled(0.01), Init::Identity, Init::Scaled(100.0)];
    let uniq = verify_uniqueness(model, &weights, &inits, &opts)?;
    let solution = &uniq.solutions[1];
    let contraction = contraction_certificate(solution, model, &weights)?;
    let ops = build_error_operators(solution, model, &weights)?;
    let schur = schur_certificate(&ops, solution, &weights)?;
    Ok(merge(
        header(&scenario, &weights),
        json!({
            "status": "ok",
            "uniqueness": { "max_gap": uniq.max_gap, "certified": uniq.certified },
            "contraction": {
                "rho": contraction.rho,
                "certified": contraction.certified,
                "stacked_rho": contraction.stacked_rho,
            },
            "schur": {
                "rho": schur.rho,
                "beta": schur.beta,
                "lyapunov_ok": schur.lyapunov_ok,
            },
        }),
    ))
}

fn steady(common: &Common, dump_pcal: bool) -> Result<Value> {
    let (scenario, weights) = common.load()?;
    let (solution, report) = solve_fixed_point(
        &scenario.model,
        &weights,
        &Init::Identity,
        &common.solve_options(),
    )?;
    if !report.converged {
        return Err(not_converged(report.iterations));
    }
    let ops = build_error_operators(&solution, &scenario.model, &weights)?;
    let cov = steady_covariance(&ops)?;
    let mut files = Vec::new();
    if let Some(out) = &common.out {
        let path = prefixed(out, "steady.csv");
        write_steady_row(&path, &cov)?;
        files.push(path);
        if dump_pcal {
            let path = prefixed(out, "pcal.txt");
            write_matrix_text(&path, &cov.pcal)?;
            files.push(path);
        }
    } else if dump_pcal {
        return Err(HarnessError::InvalidArgument(
            "--dump-pcal needs --out".into(),
        ));
    }
    Ok(merge(
        header(&scenario, &weights),
        json!({
            "status": "ok",
            "per_node_trace": cov.per_node_trace,
            "network_mse": cov.network_mse,
            "files": files,
        }),
    ))
}

fn sweep(common: &Common, depths: &[usize], doubly_stochastic: bool) -> Result<Value> {
    let scenario = Scenario::load(&common.preset(), common.topology_seed)?;
    let choice = common.weight_choice().or(&scenario.defaults);
    let n = scenario.model.n_nodes();
    let variant = match choice.variant.unwrap_or(VariantChoice::Cidf) {
        VariantChoice::Cidf => SweepVariant::Cidf { doubly_stochastic },
        VariantChoice::Metropolis => SweepVariant::Cidf {
            doubly_stochastic: true,
        },
        VariantChoice::Icf => SweepVariant::Icf {
            epsilon: choice.epsilon,
        },
        VariantChoice::Cmci => SweepVariant::Cmci {
            omega: choice.omega.unwrap_or_else(|| vec![n as f64; n]),
        },
        VariantChoice::Custom => {
            return Err(HarnessError::InvalidArgument(
                "custom weights have no fusion depth to sweep".into(),
            ))
        }
    };
    let table = fusion_depth_sweep(
        &scenario.model,
        &scenario.topology,
        &variant,
        depths,
        &common.solve_options(),
    )?;
    let mut files = Vec::new();
    if let Some(out) = &common.out {
        let path = prefixed(out, "sweep.csv");
        write_sweep(&path, &table)?;
        files.push(path);
    }
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|r| json!({ "depth": r.depth, "traces": r.traces, "spread": r.spread(), "converged": r.converged }))
        .collect();
    Ok(json!({
        "status": "ok",
        "preset": scenario.name,
        "variant": table.variant,
        "substitution": table.substitution,
        "centralized_trace": table.centralized_trace,
        "asymptotic_trace": table.asymptotic_trace,
        "rows": rows,
        "files": files,
    }))
}

fn simulate(common: &Common, noise_scale: f64, error_series: bool) -> Result<Value> {
    let cfg = ExperimentConfig {
        preset: common.preset(),
        trials: common.trials,
        horizon: common.horizon,
        seed: common.seed,
        weights: common.weight_choice(),
        topology_seed: common.topology_seed,
        noise_scale,
        solve: common.solve_options(),
    };
    let report = monte_carlo(&cfg)?;
    let mut files = Vec::new();
    if let Some(out) = &common.out {
        let written = emit_report(&report, out)?;
        files.extend([written.mse_curves, written.per_node, written.summary]);
        if error_series {
            let (scenario, weights) = common.load()?;
            let zero = nalgebra::DVector::zeros(scenario.model.n());
            let traj = simulate_plant(
                &scenario.model,
                common.horizon,
                &zero,
                common.seed,
                noise_scale,
            )?;
            let run = run_filter(
                &scenario.model,
                &weights,
                &traj,
                &FilterBank::default_for(&scenario.model),
            )?;
            let path = prefixed(out, "errors.csv");
            write_error_series(&path, &run.squared_errors())?;
            files.push(path);
        }
    }
    let mut value =
        serde_json::to_value(&report).map_err(|e| HarnessError::InvalidArgument(e.to_string()))?;
    value = merge(json!({ "status": "ok" }), value);
    Ok(merge(value, json!({ "files": files })))
}

fn demo_bound(out: Option<&PathBuf>) -> Result<Value> {
    let demo = classical_bound_demo()?;
    let value = json!({ "status": "ok", "bound": demo.bound, "exact": demo.exact, "bound_exceeds_exact": demo.bound > demo.exact });
    if let Some(out) = out {
        let path = prefixed(out, "bound.json");
        let mut f = hcre::output::create_file(&path)?;
        std::io::Write::write_all(&mut f, format!("{value:#}\n").as_bytes())
            .map_err(|e| HarnessError::Io { path, source: e })?;
    }
    Ok(value)
}

fn run(cli: Cli) -> Result<Value> {
    match &cli.command {
        Command::Solve {
            common,
            init_scale,
            monotone,
        } => solve(common, *init_scale, *monotone),
        Command::Certify { common } => certify(common),
        Command::Steady { common, dump_pcal } => steady(common, *dump_pcal),
        Command::Sweep {
            common,
            depths,
            doubly_stochastic,
        } => sweep(common, depths, *doubly_stochastic),
        Command::Simulate {
            common,
            noise_scale,
            error_series,
        } => simulate(common, *noise_scale, *error_series),
        Command::DemoBound { out } => demo_bound(out.as_ref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            eprintln!(
                "{}",
                json!({ "status": "error", "kind": "usage", "message": first })
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(value) => {
            println!("{value}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!(
                "{}",
                json!({ "status": "error", "kind": e.kind(), "message": e.to_string() })
            );
            ExitCode::FAILURE
        }
    }
}

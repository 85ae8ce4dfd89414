//! Behavior as the fusion depth `L → ∞`: Perron limit weights, the collapsed
//! single-node Riccati law, and the centralized benchmark.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hcre::{solve_fixed_point, Init, SolveOptions};
use crate::linalg::{
    observability_rank, perron_left_vector, spd_inverse, spectral_norm_sym, SpdMatrix,
};
use crate::model::{
    cidf_weights, cmci_weights, icf_default_epsilon, icf_weights, metropolis_weights,
    FusionWeights, SystemModel, Topology,
};

/// Perron tolerance for limit weights.
pub const LIMIT_TOL: f64 = 1e-14;

/// Iteration cap for the single-node Riccati solvers.
pub const RICCATI_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LimitWeights {
    /// Limit rows of `ℒ^k`.
    pub mu2: Vec<f64>,
    /// Limit rows of `ν^k`.
    pub mu4: Vec<f64>,
}

/// Perron left vectors of `ℒ` and `ν`. Both must be row stochastic and primitive.
pub fn limit_weights(weights: &FusionWeights) -> Result<LimitWeights> {
    if !weights.l_mat.is_row_stochastic() {
        return Err(Error::NotStochastic {
            context: "ℒ must be row stochastic for a limit",
            deviation: weights.l_mat.row_sum_deviation(),
        });
    }
    if !weights.nu_mat.is_row_stochastic() {
        return Err(Error::NotStochastic {
            context: "ν must be row stochastic for a limit (ICF and CMCI scale it)",
            deviation: weights.nu_mat.row_sum_deviation(),
        });
    }
    let mu2 = perron_left_vector(&weights.l_mat, LIMIT_TOL)?;
    let mu4 = perron_left_vector(&weights.nu_mat, LIMIT_TOL)?;
    Ok(LimitWeights {
        mu2: mu2.iter().copied().collect(),
        mu4: mu4.iter().copied().collect(),
    })
}

/// Fixed point of `P ← A(P⁻¹ + I_s)⁻¹Aᵀ + Q` for a fixed information matrix
/// `I_s`, iterated from `Q` until the relative change is at most `tol`.
///
/// `(A, I_s)` must be observable; otherwise [`Error::Undetectable`].
pub fn riccati_fixed_point(
    a: &DMatrix<f64>,
    q: &SpdMatrix,
    info: &DMatrix<f64>,
    tol: f64,
) -> Result<SpdMatrix> {
    let n = a.nrows();
    if info.shape() != (n, n) || q.dim() != n {
        return Err(Error::DimensionMismatch {
            context: "Riccati information matrix",
            expected: n,
            found: info.nrows(),
        });
    }
    if observability_rank(a, &[info])? < n {
        return Err(Error::Undetectable);
    }
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let y = p.inverse()?.into_matrix() + info;
        let next = SpdMatrix::new(a * spd_inverse(&y)? * a.transpose() + q.matrix())?;
        let gap = spectral_norm_sym(&(next.matrix() - p.matrix())) / p.max_eigenvalue();
        p = next;
        if gap <= tol {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence {
        what: "single-node Riccati iteration",
        iterations: RICCATI_MAX_ITER,
    })
}

/// The collapsed law every node follows as `L → ∞`, with information
/// `Σ_j μ₄_j C_jᵀR_j⁻¹C_j`.
pub fn asymptotic_fixed_point(model: &SystemModel, mu4: &[f64], tol: f64) -> Result<SpdMatrix> {
    if mu4.len() != model.n_nodes() {
        return Err(Error::DimensionMismatch {
            context: "limit weights vs sensor count",
            expected: model.n_nodes(),
            found: mu4.len(),
        });
    }
    riccati_fixed_point(model.a(), model.q(), &model.weighted_information(mu4), tol)
}

/// Centralized Kalman predictor covariance using every sensor.
pub fn centralized_riccati(model: &SystemModel, tol: f64) -> Result<SpdMatrix> {
    riccati_fixed_point(model.a(), model.q(), &model.total_information(), tol)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepVariant {
    /// Degree-normalized weights, or Metropolis weights when a doubly
    /// stochastic `ν` is requested and the graph's own weights are not.
    Cidf {
        doubly_stochastic: bool,
    },
    /// `None` uses `0.65 / d_max`.
    Icf {
        epsilon: Option<f64>,
    },
    Cmci {
        omega: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub depth: usize,
    pub traces: Vec<f64>,
    pub converged: bool,
    pub residual: f64,
}

impl SweepRow {
    pub fn spread(&self) -> f64 {
        let max = self
            .traces
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let min = self.traces.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub variant: &'static str,
    /// Set when the requested weights were replaced, e.g. `"metropolis"`.
    pub substitution: Option<String>,
    pub rows: Vec<SweepRow>,
    pub centralized_trace: f64,
    /// Trace of the `L → ∞` law for this variant. For ICF this is the
    /// centralized value.
    pub asymptotic_trace: f64,
}

/// Depth-1 weights the sweep deepens, plus an optional substitution label.
pub fn sweep_base_weights(
    topo: &Topology,
    variant: &SweepVariant,
) -> Result<(FusionWeights, Option<String>)> {
    match variant {
        SweepVariant::Cidf { doubly_stochastic } => {
            let w = cidf_weights(topo, 1)?;
            if *doubly_stochastic && !w.l_mat.is_doubly_stochastic(1e-12) {
                Ok((metropolis_weights(topo, 1)?, Some("metropolis".into())))
            } else {
                Ok((w, None))
            }
        }
        SweepVariant::Icf { epsilon } => {
            let eps = epsilon.unwrap_or_else(|| icf_default_epsilon(topo));
            Ok((icf_weights(topo, eps, 1)?, None))
        }
        SweepVariant::Cmci { omega } => Ok((cmci_weights(topo, omega, 1)?, None)),
    }
}

/// Solves the coupled iteration at each depth and records per-node traces.
pub fn fusion_depth_sweep(
    model: &SystemModel,
    topo: &Topology,
    variant: &SweepVariant,
    depths: &[usize],
    opts: &SolveOptions,
) -> Result<SweepTable> {
    let (base, substitution) = sweep_base_weights(topo, variant)?;
    let riccati_tol = opts.tol.min(1e-12);
    let centralized = centralized_riccati(model, riccati_tol)?;
    let asymptotic = match variant {
        SweepVariant::Icf { .. } => centralized.clone(),
        SweepVariant::Cidf { .. } => {
            let limits = limit_weights(&base)?;
            asymptotic_fixed_point(model, &limits.mu4, riccati_tol)?
        }
        SweepVariant::Cmci { omega } => {
            // ν^{(L)} = ℒ^L diag(ω) has limit rows μ₂ ∘ ω.
            let limits = limit_weights(&cidf_weights(topo, 1)?)?;
            let w: Vec<f64> = limits.mu2.iter().zip(omega).map(|(m, o)| m * o).collect();
            asymptotic_fixed_point(model, &w, riccati_tol)?
        }
    };
    let rows = depths
        .iter()
        .map(|&depth| {
            let weights = base.at_depth(depth)?;
            let (sol, report) = solve_fixed_point(model, &weights, &Init::Identity, opts)?;
            Ok(SweepRow {
                depth,
                traces: sol.traces(),
                converged: report.converged,
                residual: report.residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        variant: base.variant.name(),
        substitution,
        rows,
        centralized_trace: centralized.trace(),
        asymptotic_trace: asymptotic.trace(),
    })
}

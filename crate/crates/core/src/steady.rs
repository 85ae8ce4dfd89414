//! Stacked error dynamics of the steady-state filter and the exact
//! error covariance from the discrete Lyapunov equation
//! `𝒫 = 𝒜𝒫𝒜ᵀ + ΓRΓᵀ + 11ᵀ⊗Q`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hcre::{check_inputs, information_sum, CovarianceFamily};
use crate::linalg::{
    perron_left_vector, solve_dle, spd_inverse, spectral_norm_sym, spectral_radius, symmetrize,
    SpdMatrix,
};
use crate::model::{FusionWeights, SystemModel};

/// Relative tolerance on `A P̄_i Aᵀ = P_i − Q`.
pub const POSTERIOR_CHECK_TOL: f64 = 1e-8;

/// DLE tolerance used by [`steady_covariance`].
pub const DLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyOperators {
    /// `nN×nN`, block `(i, j)` = `ℓ_ij A P̄_i P_j⁻¹`.
    pub acal: DMatrix<f64>,
    /// `nN×Σm_i`, block `(i, j)` = `ν_ij A P̄_i C_jᵀ R_j⁻¹`.
    pub gamma: DMatrix<f64>,
    /// Block diagonal of the `R_i`.
    pub r_blk: DMatrix<f64>,
    /// `1_N 1_Nᵀ ⊗ Q`.
    pub q_inject: DMatrix<f64>,
    pub n: usize,
    pub n_nodes: usize,
    /// Measurement rows of each node.
    pub meas_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyCovariance {
    pub pcal: DMatrix<f64>,
    pub per_node_trace: Vec<f64>,
    pub network_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchurCertificate {
    /// `ρ(𝒜)`.
    pub rho: f64,
    /// Smallest `β` with `𝒜ᵀ𝒬𝒜 ⪯ β𝒬`.
    pub beta: f64,
    pub lyapunov_ok: bool,
    /// Perron left vector of `ℒ` used to build `𝒬 = diag(q_i P_i⁻¹)`.
    pub q: Vec<f64>,
}

/// `P̄_i = (Σ_j ν_ij C_jᵀR_j⁻¹C_j + ℓ_ij P_j⁻¹)⁻¹`, checked against
/// `A P̄_i Aᵀ = P_i − Q`.
pub fn fused_posterior(
    solution: &CovarianceFamily,
    model: &SystemModel,
    weights: &FusionWeights,
) -> Result<CovarianceFamily> {
    check_inputs(solution, model, weights)?;
    let inverses = solution.inverses()?;
    let a = model.a();
    let mut worst: f64 = 0.0;
    let mats = (0..model.n_nodes())
        .map(|i| {
            let pbar =
                SpdMatrix::new(spd_inverse(&information_sum(i, &inverses, model, weights))?)?;
            let lhs = a * pbar.matrix() * a.transpose();
            let rhs = solution.get(i).matrix() - model.q().matrix();
            let rel =
                spectral_norm_sym(&symmetrize(&(lhs - rhs))) / solution.get(i).max_eigenvalue();
            worst = worst.max(rel);
            Ok(pbar)
        })
        .collect::<Result<Vec<_>>>()?;
    if !(worst <= POSTERIOR_CHECK_TOL) {
        return Err(Error::NotFixedPoint { residual: worst });
    }
    CovarianceFamily::new(mats)
}

/// Assembles `𝒜`, `Γ`, `R` and `11ᵀ⊗Q` at a fixed point.
pub fn build_error_operators(
    solution: &CovarianceFamily,
    model: &SystemModel,
    weights: &FusionWeights,
) -> Result<SteadyOperators> {
    let posterior = fused_posterior(solution, model, weights)?;
    let inverses = solution.inverses()?;
    let (nodes, n) = (model.n_nodes(), model.n());
    let meas_dims: Vec<usize> = model.sensors().iter().map(|s| s.meas_dim()).collect();
    let offsets: Vec<usize> = meas_dims
        .iter()
        .scan(0, |acc, m| {
            let o = *acc;
            *acc += m;
            Some(o)
        })
        .collect();
    let total_m: usize = meas_dims.iter().sum();

    let mut acal = DMatrix::zeros(n * nodes, n * nodes);
    let mut gamma = DMatrix::zeros(n * nodes, total_m);
    for i in 0..nodes {
        let apbar = model.a() * posterior.get(i).matrix();
        for j in 0..nodes {
            let l = weights.l_mat.get(i, j);
            if l != 0.0 {
                acal.view_mut((i * n, j * n), (n, n))
                    .copy_from(&(&apbar * &inverses[j] * l));
            }
            let nu = weights.nu_mat.get(i, j);
            if nu != 0.0 && meas_dims[j] > 0 {
                let block = &apbar * model.sensor(j).info_gain() * nu;
                gamma
                    .view_mut((i * n, offsets[j]), (n, meas_dims[j]))
                    .copy_from(&block);
            }
        }
    }

    let mut r_blk = DMatrix::zeros(total_m, total_m);
    for (j, s) in model.sensors().iter().enumerate() {
        if let Some(r) = s.r() {
            r_blk
                .view_mut((offsets[j], offsets[j]), (meas_dims[j], meas_dims[j]))
                .copy_from(r.matrix());
        }
    }

    let mut q_inject = DMatrix::zeros(n * nodes, n * nodes);
    for i in 0..nodes {
        for j in 0..nodes {
            q_inject
                .view_mut((i * n, j * n), (n, n))
                .copy_from(model.q().matrix());
        }
    }

    Ok(SteadyOperators {
        acal,
        gamma,
        r_blk,
        q_inject,
        n,
        n_nodes: nodes,
        meas_dims,
    })
}

/// Tolerance for the Perron vector inside the Schur certificate.
pub const PERRON_TOL: f64 = 1e-14;

/// `ρ(𝒜)` together with the Lyapunov bound `𝒜ᵀ𝒬𝒜 ⪯ β𝒬`,
/// `𝒬 = diag(q_i P_i⁻¹)`.
///
/// `β` is the largest eigenvalue of `L⁻¹𝒜ᵀ𝒬𝒜L⁻ᵀ` with `𝒬 = LLᵀ`, and
/// always satisfies `β ≥ ρ(𝒜)²`.
pub fn schur_certificate(
    ops: &SteadyOperators,
    solution: &CovarianceFamily,
    weights: &FusionWeights,
) -> Result<SchurCertificate> {
    let (n, nodes) = (ops.n, ops.n_nodes);
    if solution.len() != nodes || weights.n_nodes() != nodes || solution.dim() != n {
        return Err(Error::DimensionMismatch {
            context: "certificate inputs vs operators",
            expected: nodes,
            found: solution.len(),
        });
    }
    let rho = spectral_radius(&ops.acal);
    let q = perron_left_vector(&weights.l_mat, PERRON_TOL)?;
    let inverses = solution.inverses()?;

    let mut qcal = DMatrix::zeros(n * nodes, n * nodes);
    for i in 0..nodes {
        qcal.view_mut((i * n, i * n), (n, n))
            .copy_from(&(&inverses[i] * q[i]));
    }
    let chol = nalgebra::Cholesky::new(qcal.clone())
        .ok_or(Error::NotPositiveDefinite("Lyapunov weight"))?;
    let lower = chol.l();
    let lower_inv = lower
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n * nodes, n * nodes))
        .ok_or(Error::NotPositiveDefinite("Lyapunov weight"))?;
    let m = symmetrize(
        &(&lower_inv * ops.acal.transpose() * &qcal * &ops.acal * lower_inv.transpose()),
    );
    let beta = m.symmetric_eigenvalues().max();
    Ok(SchurCertificate {
        rho,
        beta,
        lyapunov_ok: beta < 1.0,
        q: q.iter().copied().collect(),
    })
}

/// Solves the DLE for the stacked a-priori error covariance.
pub fn steady_covariance(ops: &SteadyOperators) -> Result<SteadyCovariance> {
    let w = symmetrize(&(&ops.gamma * &ops.r_blk * ops.gamma.transpose() + &ops.q_inject));
    let pcal = solve_dle(&ops.acal, &w, DLE_TOL, 200)?;
    Ok(covariance_summary(pcal, ops.n, ops.n_nodes))
}

fn covariance_summary(pcal: DMatrix<f64>, n: usize, nodes: usize) -> SteadyCovariance {
    let per_node_trace: Vec<f64> = (0..nodes)
        .map(|i| pcal.view((i * n, i * n), (n, n)).trace())
        .collect();
    let network_mse = per_node_trace.iter().sum::<f64>() / nodes as f64;
    SteadyCovariance {
        pcal,
        per_node_trace,
        network_mse,
    }
}

/// Squared norm of each `n`-block of a stacked error vector.
pub fn node_squared_errors(stacked: &DVector<f64>, n: usize) -> Vec<f64> {
    stacked
        .as_slice()
        .chunks(n)
        .map(|c| c.iter().map(|x| x * x).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hcre::{solve_fixed_point, Init, SolveOptions};
    use crate::model::{degree_normalized_weights, Sensor, Topology};
    use crate::presets::scalar_example;
    use alloc::vec;

    fn solved_scalar() -> (SystemModel, FusionWeights, CovarianceFamily) {
        let (model, weights, _) = scalar_example();
        let (sol, _) =
            solve_fixed_point(&model, &weights, &Init::Identity, &SolveOptions::default()).unwrap();
        (model, weights, sol)
    }

    #[test]
    fn posterior_on_scalar_example() {
        let (model, weights, sol) = solved_scalar();
        let post = fused_posterior(&sol, &model, &weights).unwrap();
        let p: Vec<f64> = (0..3).map(|i| sol.get(i).matrix()[(0, 0)]).collect();
        let expected = 1.0 / (0.5 + 0.5 / p[0] + 0.5 / p[1]);
        assert!((post.get(0).matrix()[(0, 0)] - expected).abs() < 1e-12);
        assert!((post.get(0).matrix()[(0, 0)] - (p[0] - 1.0)).abs() < 1e-8);
    }

    #[test]
    fn posterior_rejects_non_fixed_point() {
        let (model, weights, _) = scalar_example();
        let fam = CovarianceFamily::uniform(3, SpdMatrix::identity(1));
        assert!(matches!(
            fused_posterior(&fam, &model, &weights),
            Err(Error::NotFixedPoint { .. })
        ));
    }

    #[test]
    fn scalar_example_operators() {
        let (model, weights, sol) = solved_scalar();
        let ops = build_error_operators(&sol, &model, &weights).unwrap();
        assert_eq!(ops.acal.shape(), (3, 3));
        assert_eq!(ops.gamma.shape(), (3, 1));
        assert_eq!(ops.acal[(0, 2)], 0.0);
        let cert = schur_certificate(&ops, &sol, &weights).unwrap();
        assert!(cert.rho < 1.0);
        assert!(cert.lyapunov_ok);
        assert!(cert.beta >= cert.rho * cert.rho - 1e-12);
        let cov = steady_covariance(&ops).unwrap();
        assert!(cov
            .per_node_trace
            .iter()
            .all(|t| t.is_finite() && *t >= 1.0));
        let total: f64 = cov.per_node_trace.iter().sum();
        assert!((total - cov.pcal.trace()).abs() < 1e-12);
    }

    #[test]
    fn single_node_reduces_to_kalman() {
        let one = SpdMatrix::identity(1);
        let model = SystemModel::new(
            DMatrix::from_element(1, 1, 1.0),
            one.clone(),
            vec![Sensor::new(DMatrix::from_element(1, 1, 1.0), one).unwrap()],
        )
        .unwrap();
        let weights = degree_normalized_weights(&Topology::complete(1));
        let (sol, _) =
            solve_fixed_point(&model, &weights, &Init::Identity, &SolveOptions::default()).unwrap();
        let ops = build_error_operators(&sol, &model, &weights).unwrap();
        let p = sol.get(0).matrix()[(0, 0)];
        assert!((ops.acal[(0, 0)] - 1.0 / (1.0 + p)).abs() < 1e-12);
        let cov = steady_covariance(&ops).unwrap();
        assert!((cov.pcal[(0, 0)] - p).abs() < 1e-8);
        assert!((cov.pcal[(0, 0)] - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-8);
    }

    #[test]
    fn unobserving_node_has_no_gamma_columns() {
        let (model, weights, sol) = solved_scalar();
        let ops = build_error_operators(&sol, &model, &weights).unwrap();
        assert_eq!(ops.meas_dims, vec![1, 0, 0]);
        assert_eq!(ops.r_blk.shape(), (1, 1));
        assert!(ops.q_inject.iter().all(|x| *x == 1.0));
    }
}

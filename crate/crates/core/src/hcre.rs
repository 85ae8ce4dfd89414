//! The coupled iteration
//!
//! ```text
//! P_i ← A (Σ_j ℓ_ij P_j⁻¹ + ν_ij C_jᵀ R_j⁻¹ C_j)⁻¹ Aᵀ + Q
//! ```
//!
//! its fixed-point solvers, and numerical certificates for the properties of
//! the fixed point: monotone convergence from small initial values, uniqueness
//! across initializations, and contraction of the path-sum operator.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{
    loewner_geq, min_eigenvalue_sym, spd_inverse, spectral_norm_sym, spectral_radius, SpdMatrix,
};
use crate::model::{FusionWeights, SystemModel};

/// One SPD matrix per node, all of the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFamily {
    mats: Vec<SpdMatrix>,
}

impl CovarianceFamily {
    pub fn new(mats: Vec<SpdMatrix>) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| {
                Error::InvalidParameter("a covariance family needs at least one node".into())
            })?
            .dim();
        if let Some(bad) = mats.iter().find(|m| m.dim() != first) {
            return Err(Error::DimensionMismatch {
                context: "covariance family members",
                expected: first,
                found: bad.dim(),
            });
        }
        Ok(CovarianceFamily { mats })
    }

    pub fn uniform(n_nodes: usize, m: SpdMatrix) -> Self {
        CovarianceFamily {
            mats: vec![m; n_nodes],
        }
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mats[0].dim()
    }

    pub fn get(&self, i: usize) -> &SpdMatrix {
        &self.mats[i]
    }

    pub fn mats(&self) -> &[SpdMatrix] {
        &self.mats
    }

    pub fn into_mats(self) -> Vec<SpdMatrix> {
        self.mats
    }

    pub fn traces(&self) -> Vec<f64> {
        self.mats.iter().map(SpdMatrix::trace).collect()
    }

    pub fn inverses(&self) -> Result<Vec<DMatrix<f64>>> {
        self.mats.iter().map(|m| spd_inverse(m.matrix())).collect()
    }

    /// `max_i ‖P_i − P'_i‖₂`.
    pub fn max_gap(&self, other: &CovarianceFamily) -> f64 {
        self.mats
            .iter()
            .zip(&other.mats)
            .map(|(a, b)| spectral_norm_sym(&(a.matrix() - b.matrix())))
            .fold(0.0, f64::max)
    }

    /// `max_i ‖P_i − P'_i‖₂ / ‖P_i‖₂`.
    pub fn relative_gap(&self, other: &CovarianceFamily) -> f64 {
        self.mats
            .iter()
            .zip(&other.mats)
            .map(|(a, b)| spectral_norm_sym(&(a.matrix() - b.matrix())) / a.max_eigenvalue())
            .fold(0.0, f64::max)
    }
}

/// Starting point for the fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Identity,
    QInit,
    Scaled(f64),
    Family(CovarianceFamily),
}

impl Init {
    pub fn build(&self, model: &SystemModel) -> Result<CovarianceFamily> {
        let (nodes, n) = (model.n_nodes(), model.n());
        match self {
            Init::Identity => Ok(CovarianceFamily::uniform(nodes, SpdMatrix::identity(n))),
            Init::QInit => Ok(CovarianceFamily::uniform(nodes, model.q().clone())),
            Init::Scaled(c) => Ok(CovarianceFamily::uniform(
                nodes,
                SpdMatrix::scaled_identity(n, *c)?,
            )),
            Init::Family(f) => {
                check_family(f, model)?;
                Ok(f.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `max_i ‖P_i − step(P)_i‖₂ / ‖P_i‖₂` at the returned family.
    pub residual: f64,
    /// `trace_history[k][i] = tr P_i` after `k` steps.
    pub trace_history: Vec<Vec<f64>>,
    pub converged: bool,
    pub tolerance: f64,
}

impl SolveReport {
    /// Measured geometric decay rate of successive trace increments over the
    /// last `window` steps, or `None` when the history is too short or flat.
    pub fn contraction_ratio(&self, window: usize) -> Option<f64> {
        let h = &self.trace_history;
        let incr: Vec<f64> = h
            .windows(2)
            .map(|w| {
                w[0].iter()
                    .zip(&w[1])
                    .map(|(a, b)| (b - a).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let usable: Vec<f64> = incr.into_iter().take_while(|d| *d > 1e-13).collect();
        if usable.len() < 3 {
            return None;
        }
        let end = usable.len() - 1;
        let start = end.saturating_sub(window.max(1));
        if start == end {
            return None;
        }
        Some((usable[end] / usable[start]).powf(1.0 / (end - start) as f64))
    }
}

fn check_family(family: &CovarianceFamily, model: &SystemModel) -> Result<()> {
    if family.len() != model.n_nodes() {
        return Err(Error::DimensionMismatch {
            context: "family size vs sensor count",
            expected: model.n_nodes(),
            found: family.len(),
        });
    }
    if family.dim() != model.n() {
        return Err(Error::DimensionMismatch {
            context: "family dimension vs state dimension",
            expected: model.n(),
            found: family.dim(),
        });
    }
    Ok(())
}

pub(crate) fn check_inputs(
    family: &CovarianceFamily,
    model: &SystemModel,
    weights: &FusionWeights,
) -> Result<()> {
    check_family(family, model)?;
    check_weights(model, weights)
}

fn check_weights(model: &SystemModel, weights: &FusionWeights) -> Result<()> {
    if weights.n_nodes() != model.n_nodes() {
        return Err(Error::DimensionMismatch {
            context: "weights size vs sensor count",
            expected: model.n_nodes(),
            found: weights.n_nodes(),
        });
    }
    Ok(())
}

/// `Σ_j ℓ_ij Y_j + ν_ij C_jᵀR_j⁻¹C_j` for node `i`, given the inverses `Y_j = P_j⁻¹`.
pub fn information_sum(
    i: usize,
    inverses: &[DMatrix<f64>],
    model: &SystemModel,
    weights: &FusionWeights,
) -> DMatrix<f64> {
    let n = model.n();
    let mut s = DMatrix::zeros(n, n);
    for (j, y) in inverses.iter().enumerate() {
        let l = weights.l_mat.get(i, j);
        if l != 0.0 {
            s += y * l;
        }
        let nu = weights.nu_mat.get(i, j);
        if nu != 0.0 && model.sensor(j).meas_dim() > 0 {
            s += model.sensor(j).information() * nu;
        }
    }
    s
}

/// `Σ_j ℓ_ij Y_j` for node `i` (inverse of the harmonic mean `P̃_i`).
pub fn harmonic_information(
    i: usize,
    inverses: &[DMatrix<f64>],
    weights: &FusionWeights,
) -> DMatrix<f64> {
    let n = inverses[0].nrows();
    inverses
        .iter()
        .enumerate()
        .filter(|(j, _)| weights.l_mat.get(i, *j) != 0.0)
        .fold(DMatrix::zeros(n, n), |acc, (j, y)| {
            acc + y * weights.l_mat.get(i, j)
        })
}

/// One step of the coupled iteration; the information sum is factorized once per node.
pub fn hcre_step(
    family: &CovarianceFamily,
    model: &SystemModel,
    weights: &FusionWeights,
) -> Result<CovarianceFamily> {
    check_family(family, model)?;
    check_weights(model, weights)?;
    let inverses = family.inverses()?;
    step_from_inverses(&inverses, model, weights)
}

fn step_from_inverses(
    inverses: &[DMatrix<f64>],
    model: &SystemModel,
    weights: &FusionWeights,
) -> Result<CovarianceFamily> {
    let a = model.a();
    let mats = (0..model.n_nodes())
        .map(|i| {
            let s = information_sum(i, inverses, model, weights);
            let posterior =
                spd_inverse(&s).map_err(|_| Error::NotPositiveDefinite("information sum"))?;
            SpdMatrix::new(a * posterior * a.transpose() + model.q().matrix())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CovarianceFamily { mats })
}

/// Iterates [`hcre_step`] until the relative residual drops to `opts.tol`.
///
/// Running out of iterations is not an error: the report comes back with
/// `converged = false`.
pub fn solve_fixed_point(
    model: &SystemModel,
    weights: &FusionWeights,
    init: &Init,
    opts: &SolveOptions,
) -> Result<(CovarianceFamily, SolveReport)> {
    check_weights(model, weights)?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let mut current = init.build(model)?;
    let mut history = vec![current.traces()];
    let mut residual = f64::INFINITY;
    for k in 0..opts.max_iter {
        let next = hcre_step(&current, model, weights)?;
        residual = current.relative_gap(&next);
        if residual <= opts.tol {
            let report = SolveReport {
                iterations: k,
                residual,
                trace_history: history,
                converged: true,
                tolerance: opts.tol,
            };
            return Ok((current, report));
        }
        history.push(next.traces());
        current = next;
    }
    let report = SolveReport {
        iterations: opts.max_iter,
        residual,
        trace_history: history,
        converged: false,
        tolerance: opts.tol,
    };
    Ok((current, report))
}

/// Slack used for Loewner comparisons.
pub const LOEWNER_SLACK: f64 = 1e-10;

/// Monotone solve from `ε·I`.
///
/// `ε` starts at `λ_min(Q)/2` and is halved until one step gives
/// `P_{i,1} ⪰ P_{i,0}` for every node. Every later step must satisfy
/// `P_{i,k+1} ⪰ P_{i,k} − 1e-10·I`; a violation aborts with
/// [`Error::MonotonicityViolation`]. Returns the solution, the report and the
/// `ε` that was used.
pub fn monotone_solve(
    model: &SystemModel,
    weights: &FusionWeights,
    opts: &SolveOptions,
) -> Result<(CovarianceFamily, SolveReport, f64)> {
    check_weights(model, weights)?;
    let n = model.n();
    let mut epsilon = model.q().min_eigenvalue() / 2.0;
    let mut start = None;
    for _ in 0..64 {
        let p0 =
            CovarianceFamily::uniform(model.n_nodes(), SpdMatrix::scaled_identity(n, epsilon)?);
        let p1 = hcre_step(&p0, model, weights)?;
        let grows = p0
            .mats()
            .iter()
            .zip(p1.mats())
            .all(|(a, b)| loewner_geq(b.matrix(), a.matrix(), LOEWNER_SLACK));
        if grows {
            start = Some(p0);
            break;
        }
        epsilon /= 2.0;
    }
    let mut current = start.ok_or(Error::NoConvergence {
        what: "initial scale selection",
        iterations: 64,
    })?;

    let mut history = vec![current.traces()];
    let mut residual = f64::INFINITY;
    for k in 0..opts.max_iter {
        let next = hcre_step(&current, model, weights)?;
        for (node, (a, b)) in current.mats().iter().zip(next.mats()).enumerate() {
            let min_eigenvalue = min_eigenvalue_sym(&(b.matrix() - a.matrix()));
            if min_eigenvalue < -LOEWNER_SLACK {
                return Err(Error::MonotonicityViolation {
                    iteration: k,
                    node,
                    min_eigenvalue,
                });
            }
        }
        residual = current.relative_gap(&next);
        if residual <= opts.tol {
            let report = SolveReport {
                iterations: k,
                residual,
                trace_history: history,
                converged: true,
                tolerance: opts.tol,
            };
            return Ok((current, report, epsilon));
        }
        history.push(next.traces());
        current = next;
    }
    let report = SolveReport {
        iterations: opts.max_iter,
        residual,
        trace_history: history,
        converged: false,
        tolerance: opts.tol,
    };
    Ok((current, report, epsilon))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    /// Largest `‖P_i^{(a)} − P_i^{(b)}‖₂` over init pairs and nodes.
    pub max_gap: f64,
    /// `max_gap ≤ 10·tol·max(1, max_i ‖P_i‖₂)`; the tolerance is relative,
    /// so the gap is compared at the scale of the solution.
    pub certified: bool,
    pub solutions: Vec<CovarianceFamily>,
}

/// Solves from every init and compares the limits pairwise.
pub fn verify_uniqueness(
    model: &SystemModel,
    weights: &FusionWeights,
    inits: &[Init],
    opts: &SolveOptions,
) -> Result<UniquenessReport> {
    if inits.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one initialization is required".into(),
        ));
    }
    let mut solutions = Vec::with_capacity(inits.len());
    for init in inits {
        let (sol, report) = solve_fixed_point(model, weights, init, opts)?;
        if !report.converged {
            return Err(Error::NoConvergence {
                what: "fixed-point iteration",
                iterations: report.iterations,
            });
        }
        solutions.push(sol);
    }
    let mut max_gap: f64 = 0.0;
    for a in 0..solutions.len() {
        for b in a + 1..solutions.len() {
            max_gap = max_gap.max(solutions[a].max_gap(&solutions[b]));
        }
    }
    let scale = solutions
        .iter()
        .flat_map(|f| f.mats().iter().map(SpdMatrix::max_eigenvalue))
        .fold(1.0, f64::max);
    Ok(UniquenessReport {
        max_gap,
        certified: max_gap <= 10.0 * opts.tol * scale,
        solutions,
    })
}

/// Relative residual `max_i ‖P_i − step(P)_i‖₂ / ‖P_i‖₂`.
pub fn fixed_point_residual(
    family: &CovarianceFamily,
    model: &SystemModel,
    weights: &FusionWeights,
) -> Result<f64> {
    let next = hcre_step(family, model, weights)?;
    Ok(family.relative_gap(&next))
}

/// Residual above which an input is not treated as a fixed point.
pub const FIXED_POINT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionCertificate {
    /// Spectral radius of the path-sum operator `X_i ↦ Σ_j Ã_ij X_j Ã_ijᵀ`,
    /// whose powers are `Φ^{(m)}`.
    pub rho: f64,
    /// Spectral radius of the stacked `nN×nN` matrix with blocks `Ã_ij`.
    pub stacked_rho: f64,
    /// `rho < 1`.
    pub certified: bool,
    /// The blocks `Ã_ij`, row-major by `(i, j)`; zero blocks where `ℓ_ij = 0`.
    pub blocks: Vec<Option<DMatrix<f64>>>,
}

/// Contraction blocks `Ã_ij = √ℓ_ij P̃_i P_j⁻¹ A_{P̃_j}` at a fixed point, where
/// `P̃_i = (Σ_j ℓ_ij P_j⁻¹)⁻¹` and `A_{P̃_j} = A P̄_j P̃_j⁻¹` is the closed loop
/// `A − K_j C̃_j` written in information form.
pub fn contraction_blocks(
    solution: &CovarianceFamily,
    model: &SystemModel,
    weights: &FusionWeights,
) -> Result<Vec<Option<DMatrix<f64>>>> {
    let nodes = model.n_nodes();
    let inverses = solution.inverses()?;
    let harmonic_info: Vec<DMatrix<f64>> = (0..nodes)
        .map(|i| harmonic_information(i, &inverses, weights))
        .collect();
    let harmonic: Vec<DMatrix<f64>> = harmonic_info
        .iter()
        .map(spd_inverse)
        .collect::<Result<_>>()?;
    let closed_loop: Vec<DMatrix<f64>> = (0..nodes)
        .map(|j| {
            let posterior = spd_inverse(&information_sum(j, &inverses, model, weights))?;
            Ok(model.a() * posterior * &harmonic_info[j])
        })
        .collect::<Result<_>>()?;
    let mut blocks = Vec::with_capacity(nodes * nodes);
    for i in 0..nodes {
        for j in 0..nodes {
            let l = weights.l_mat.get(i, j);
            blocks.push(if l > 0.0 {
                Some(&harmonic[i] * &inverses[j] * &closed_loop[j] * l.sqrt())
            } else {
                None
            });
        }
    }
    Ok(blocks)
}

/// Certificate that the path-sum operator of the fixed point contracts.
///
/// `Φ^{(m)}_{ij}(P)` sums `X P Xᵀ` over all length-`m` products `X` of the
/// blocks `Ã`, so `Φ^{(m)} → 0` exactly when the linear map
/// `T(X)_i = Σ_j Ã_ij X_j Ã_ijᵀ` has spectral radius below one. `T` preserves
/// the PSD cone, so its spectral radius is reached by trace-ratio power
/// iteration from the identity. The spectral radius of the stacked block
/// matrix is reported alongside as `stacked_rho`.
pub fn contraction_certificate(
    solution: &CovarianceFamily,
    model: &SystemModel,
    weights: &FusionWeights,
) -> Result<ContractionCertificate> {
    check_family(solution, model)?;
    check_weights(model, weights)?;
    let residual = fixed_point_residual(solution, model, weights)?;
    if !(residual <= FIXED_POINT_TOL) {
        return Err(Error::NotFixedPoint { residual });
    }
    let blocks = contraction_blocks(solution, model, weights)?;
    let (nodes, n) = (model.n_nodes(), model.n());

    let mut stacked = DMatrix::zeros(n * nodes, n * nodes);
    for i in 0..nodes {
        for j in 0..nodes {
            if let Some(b) = &blocks[i * nodes + j] {
                stacked.view_mut((i * n, j * n), (n, n)).copy_from(b);
            }
        }
    }
    let stacked_rho = spectral_radius(&stacked);
    let rho = path_operator_radius(&blocks, nodes, n, 1e-12, 200_000)?;
    Ok(ContractionCertificate {
        rho,
        stacked_rho,
        certified: rho < 1.0,
        blocks,
    })
}

/// Spectral radius of `T(X)_i = Σ_j B_ij X_j B_ijᵀ` by power iteration on PSD
/// families, normalized by total trace.
///
/// `T` may have several eigenvalues of maximal modulus (a closed loop with a
/// complex pair `λ, λ̄` gives `λ²`, `λ̄²` and `|λ|²`), so plain iteration can
/// cycle. The iteration therefore runs on `T + σ·id` with `σ` a warm-up
/// estimate of the radius; the shift keeps the cone and leaves the Perron
/// eigenvalue as the only one of largest modulus.
pub fn path_operator_radius(
    blocks: &[Option<DMatrix<f64>>],
    nodes: usize,
    n: usize,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let apply = |x: &[DMatrix<f64>], shift: f64| -> Vec<DMatrix<f64>> {
        (0..nodes)
            .map(|i| {
                let mut acc = &x[i] * shift;
                for (j, xj) in x.iter().enumerate() {
                    if let Some(b) = &blocks[i * nodes + j] {
                        acc += b * xj * b.transpose();
                    }
                }
                crate::linalg::symmetrize(&acc)
            })
            .collect()
    };
    let total = |x: &[DMatrix<f64>]| -> f64 { x.iter().map(|m| m.trace()).sum() };

    const WARM_UP: usize = 50;
    let mut x: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n); nodes];
    let mut log_growth = 0.0;
    for _ in 0..WARM_UP {
        let before = total(&x);
        x = apply(&x, 0.0);
        let after = total(&x);
        if after == 0.0 {
            return Ok(0.0);
        }
        log_growth += (after / before).ln();
        x.iter_mut().for_each(|m| *m /= after);
    }
    let shift = (log_growth / WARM_UP as f64).exp();

    let mut last = f64::NAN;
    for _ in 0..max_iter {
        let before = total(&x);
        x = apply(&x, shift);
        let after = total(&x);
        let ratio = after / before - shift;
        x.iter_mut().for_each(|m| *m /= after);
        if (ratio - last).abs() <= tol * ratio.abs().max(1.0) {
            return Ok(ratio.max(0.0));
        }
        last = ratio;
    }
    Err(Error::NoConvergence {
        what: "path-sum operator power iteration",
        iterations: max_iter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundDemo {
    /// Classical boundedness estimate for node 3 with `β → 1`.
    pub bound: f64,
    /// The coupled fixed point `P_3`.
    pub exact: f64,
}

/// The 3-node scalar example: the classical bound
/// `P_3 ≤ A(ℓ_32 A⁻ᵀ(ℓ_21 C_1ᵀR⁻¹C_1)A⁻¹)⁻¹Aᵀ + Q` (with `β → 1`) against
/// the actual fixed point.
pub fn classical_bound_demo() -> Result<BoundDemo> {
    let (model, weights, _) = crate::presets::scalar_example();
    let a = model.a();
    let a_inv = a
        .clone()
        .try_inverse()
        .ok_or(Error::InvalidMatrix("state matrix is singular".into()))?;
    let relayed = model.sensor(0).information() * weights.l_mat.get(1, 0);
    let inner = a_inv.transpose() * relayed * &a_inv * weights.l_mat.get(2, 1);
    let bound = a * spd_inverse(&inner)? * a.transpose() + model.q().matrix();
    let (solution, report) =
        solve_fixed_point(&model, &weights, &Init::Identity, &SolveOptions::default())?;
    if !report.converged {
        return Err(Error::NoConvergence {
            what: "fixed-point iteration",
            iterations: report.iterations,
        });
    }
    Ok(BoundDemo {
        bound: bound[(0, 0)],
        exact: solution.get(2).matrix()[(0, 0)],
    })
}

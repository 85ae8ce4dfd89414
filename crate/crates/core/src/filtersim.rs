//! Plant simulation and the distributed filter run in information form.
//!
//! Noise is drawn from a ChaCha20 generator seeded with a 64-bit seed. For each
//! step `k` the draw order is fixed: `n` standard normals for the process noise
//! `ω_k`, then `m_i` standard normals for each sensor `i = 0, 1, …` in index
//! order. `ω_k = s·chol(Q)·z` and `v_{i,k} = s·chol(R_i)·z` with `s` the noise
//! scale.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hcre::{check_inputs, hcre_step, information_sum, CovarianceFamily};
use crate::linalg::{spd_inverse, SpdMatrix};
use crate::model::{FusionWeights, SystemModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0, …, x_{horizon-1}`.
    pub states: Vec<DVector<f64>>,
    /// `measurements[k][i] = y_{i,k}`; empty vectors for unobserving nodes.
    pub measurements: Vec<Vec<DVector<f64>>>,
    pub seed: u64,
    pub noise_scale: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }
}

fn standard_normals(rng: &mut ChaCha20Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Cholesky factors used to color the noise: process first, then each sensor.
#[derive(Debug, Clone, PartialEq)]
struct NoiseFactors {
    q: DMatrix<f64>,
    r: Vec<Option<DMatrix<f64>>>,
}

impl NoiseFactors {
    fn new(model: &SystemModel) -> Result<Self> {
        Ok(NoiseFactors {
            q: model.q().cholesky_factor(),
            r: model
                .sensors()
                .iter()
                .map(|s| s.r().map(SpdMatrix::cholesky_factor))
                .collect(),
        })
    }
}

/// Draws `x_{k+1} = A x_k + ω_k`, `y_{i,k} = C_i x_k + v_{i,k}` for `horizon` steps.
pub fn simulate_plant(
    model: &SystemModel,
    horizon: usize,
    x0: &DVector<f64>,
    seed: u64,
    noise_scale: f64,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    if x0.len() != model.n() {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: model.n(),
            found: x0.len(),
        });
    }
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(Error::InvalidParameter(
            "noise scale must be finite and nonnegative".into(),
        ));
    }
    let factors = NoiseFactors::new(model)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(horizon);
    let mut measurements = Vec::with_capacity(horizon);
    let mut x = x0.clone();
    for _ in 0..horizon {
        let w = &factors.q * standard_normals(&mut rng, model.n()) * noise_scale;
        let ys = model
            .sensors()
            .iter()
            .zip(&factors.r)
            .map(|(s, r)| match r {
                Some(r) => s.c() * &x + r * standard_normals(&mut rng, s.meas_dim()) * noise_scale,
                None => DVector::zeros(0),
            })
            .collect();
        let next = model.a() * &x + w;
        states.push(x);
        measurements.push(ys);
        x = next;
    }
    Ok(Trajectory {
        states,
        measurements,
        seed,
        noise_scale,
    })
}

/// Per-node a-priori estimates `x̂_{i,k|k-1}` and covariances `P_{i,k|k-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub estimates: Vec<DVector<f64>>,
    pub covariances: CovarianceFamily,
    pub k: usize,
}

impl FilterBank {
    pub fn new(estimates: Vec<DVector<f64>>, covariances: CovarianceFamily) -> Result<Self> {
        if estimates.len() != covariances.len() {
            return Err(Error::DimensionMismatch {
                context: "estimates vs covariances",
                expected: covariances.len(),
                found: estimates.len(),
            });
        }
        if let Some(bad) = estimates.iter().find(|x| x.len() != covariances.dim()) {
            return Err(Error::DimensionMismatch {
                context: "estimate dimension",
                expected: covariances.dim(),
                found: bad.len(),
            });
        }
        Ok(FilterBank {
            estimates,
            covariances,
            k: 0,
        })
    }

    /// Every node starts at `x̂ = x0_hat`, `P = p0`.
    pub fn uniform(n_nodes: usize, x0_hat: DVector<f64>, p0: SpdMatrix) -> Result<Self> {
        Self::new(
            vec![x0_hat; n_nodes],
            CovarianceFamily::uniform(n_nodes, p0),
        )
    }

    /// `x̂ = 0`, `P = I` at every node.
    pub fn default_for(model: &SystemModel) -> Self {
        FilterBank {
            estimates: vec![DVector::zeros(model.n()); model.n_nodes()],
            covariances: CovarianceFamily::uniform(model.n_nodes(), SpdMatrix::identity(model.n())),
            k: 0,
        }
    }
}

fn check_measurements(measurements: &[DVector<f64>], model: &SystemModel) -> Result<()> {
    if measurements.len() != model.n_nodes() {
        return Err(Error::DimensionMismatch {
            context: "measurement count",
            expected: model.n_nodes(),
            found: measurements.len(),
        });
    }
    for (y, s) in measurements.iter().zip(model.sensors()) {
        if y.len() != s.meas_dim() {
            return Err(Error::DimensionMismatch {
                context: "measurement length",
                expected: s.meas_dim(),
                found: y.len(),
            });
        }
    }
    Ok(())
}

fn propagate(
    model: &SystemModel,
    infos: Vec<DMatrix<f64>>,
    vecs: Vec<DVector<f64>>,
    k: usize,
) -> Result<FilterBank> {
    let a = model.a();
    let mut estimates = Vec::with_capacity(infos.len());
    let mut mats = Vec::with_capacity(infos.len());
    for (s, v) in infos.iter().zip(&vecs) {
        let posterior =
            spd_inverse(s).map_err(|_| Error::NotPositiveDefinite("fused information"))?;
        estimates.push(a * (&posterior * v));
        mats.push(SpdMatrix::new(
            a * posterior * a.transpose() + model.q().matrix(),
        )?);
    }
    Ok(FilterBank {
        estimates,
        covariances: CovarianceFamily::new(mats)?,
        k: k + 1,
    })
}

/// One predict/correct/fuse cycle with the weights applied in a single sweep:
/// `x̂_i′ = A P̄_i (Σ_j ℓ_ij P_j⁻¹ x̂_j + ν_ij C_jᵀR_j⁻¹ y_j)`,
/// `P_i′ = A P̄_i Aᵀ + Q`.
pub fn cidf_step(
    bank: &FilterBank,
    measurements: &[DVector<f64>],
    model: &SystemModel,
    weights: &FusionWeights,
) -> Result<FilterBank> {
    check_inputs(&bank.covariances, model, weights)?;
    check_measurements(measurements, model)?;
    let inverses = bank.covariances.inverses()?;
    let info_vecs: Vec<DVector<f64>> = inverses
        .iter()
        .zip(&bank.estimates)
        .map(|(y, x)| y * x)
        .collect();
    let obs_vecs: Vec<DVector<f64>> = model
        .sensors()
        .iter()
        .zip(measurements)
        .map(|(s, y)| s.info_gain() * y)
        .collect();
    let nodes = model.n_nodes();
    let mut infos = Vec::with_capacity(nodes);
    let mut vecs = Vec::with_capacity(nodes);
    for i in 0..nodes {
        infos.push(information_sum(i, &inverses, model, weights));
        let mut v = DVector::zeros(model.n());
        for j in 0..nodes {
            let l = weights.l_mat.get(i, j);
            if l != 0.0 {
                v += &info_vecs[j] * l;
            }
            let nu = weights.nu_mat.get(i, j);
            if nu != 0.0 && model.sensor(j).meas_dim() > 0 {
                v += &obs_vecs[j] * nu;
            }
        }
        vecs.push(v);
    }
    propagate(model, infos, vecs, bank.k)
}

/// Same cycle with the fusion carried out as `L` rounds of neighbor averaging
/// with the one-round consensus matrix, after each node absorbs its own
/// measurement scaled by `s_i`.
pub fn cidf_step_with_sweeps(
    bank: &FilterBank,
    measurements: &[DVector<f64>],
    model: &SystemModel,
    weights: &FusionWeights,
) -> Result<FilterBank> {
    check_inputs(&bank.covariances, model, weights)?;
    check_measurements(measurements, model)?;
    let (base, scale) = match (&weights.base, &weights.obs_scale) {
        (Some(b), Some(s)) => (b, s),
        _ => {
            return Err(Error::InvalidParameter(
                "custom weights have no consensus matrix to sweep".into(),
            ))
        }
    };
    let inverses = bank.covariances.inverses()?;
    let nodes = model.n_nodes();
    let mut infos: Vec<DMatrix<f64>> = Vec::with_capacity(nodes);
    let mut vecs: Vec<DVector<f64>> = Vec::with_capacity(nodes);
    for (j, (y, x)) in inverses.iter().zip(&bank.estimates).enumerate() {
        let s = model.sensor(j);
        infos.push(y + s.information() * scale[j]);
        vecs.push(y * x + s.info_gain() * &measurements[j] * scale[j]);
    }
    for _ in 0..weights.fusion_depth {
        let mut next_infos = Vec::with_capacity(nodes);
        let mut next_vecs = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let mut s = DMatrix::zeros(model.n(), model.n());
            let mut v = DVector::zeros(model.n());
            for j in 0..nodes {
                let b = base.get(i, j);
                if b != 0.0 {
                    s += &infos[j] * b;
                    v += &vecs[j] * b;
                }
            }
            next_infos.push(s);
            next_vecs.push(v);
        }
        infos = next_infos;
        vecs = next_vecs;
    }
    propagate(model, infos, vecs, bank.k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    /// `errors[k][i] = x_k − x̂_{i,k|k-1}`.
    pub errors: Vec<Vec<DVector<f64>>>,
    /// Covariances held at the start of each step.
    pub covariance_history: Vec<CovarianceFamily>,
    pub final_bank: FilterBank,
}

impl FilterRun {
    /// `‖e_{i,k}‖²` as `[k][i]`.
    pub fn squared_errors(&self) -> Vec<Vec<f64>> {
        self.errors
            .iter()
            .map(|row| row.iter().map(|e| e.norm_squared()).collect())
            .collect()
    }
}

/// Runs the filter over the whole trajectory, recording a-priori errors.
pub fn run_filter(
    model: &SystemModel,
    weights: &FusionWeights,
    trajectory: &Trajectory,
    bank0: &FilterBank,
) -> Result<FilterRun> {
    let mut bank = bank0.clone();
    let mut errors = Vec::with_capacity(trajectory.horizon());
    let mut covariance_history = Vec::with_capacity(trajectory.horizon());
    for (x, ys) in trajectory.states.iter().zip(&trajectory.measurements) {
        errors.push(bank.estimates.iter().map(|xh| x - xh).collect());
        covariance_history.push(bank.covariances.clone());
        bank = cidf_step(&bank, ys, model, weights)?;
    }
    Ok(FilterRun {
        errors,
        covariance_history,
        final_bank: bank,
    })
}

/// Per-step linear maps of the filter. Covariances never depend on the data,
/// so for a fixed initial covariance every run applies the same maps:
/// `x̂_i′ = Σ_j F_ij x̂_j + G_ij y_j` with `F_ij = ℓ_ij A P̄_i P_j⁻¹` and
/// `G_ij = ν_ij A P̄_i C_jᵀR_j⁻¹`.
/// `(j, F_ij, G_ij)`, either map absent when its weight is zero.
type GainTerm = (usize, Option<DMatrix<f64>>, Option<DMatrix<f64>>);

#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    n: usize,
    n_nodes: usize,
    /// `steps[k][i]` lists `(j, F_ij, G_ij)` for the nonzero weights.
    steps: Vec<Vec<Vec<GainTerm>>>,
    factors: NoiseFactors,
    meas_dims: Vec<usize>,
}

impl GainSchedule {
    pub fn new(
        model: &SystemModel,
        weights: &FusionWeights,
        p0: &CovarianceFamily,
        horizon: usize,
    ) -> Result<Self> {
        check_inputs(p0, model, weights)?;
        let nodes = model.n_nodes();
        let mut family = p0.clone();
        let mut steps = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let inverses = family.inverses()?;
            let mut per_node = Vec::with_capacity(nodes);
            for i in 0..nodes {
                let posterior = spd_inverse(&information_sum(i, &inverses, model, weights))?;
                let ap = model.a() * posterior;
                let mut terms = Vec::new();
                for (j, y) in inverses.iter().enumerate() {
                    let l = weights.l_mat.get(i, j);
                    let nu = weights.nu_mat.get(i, j);
                    let has_obs = nu != 0.0 && model.sensor(j).meas_dim() > 0;
                    if l == 0.0 && !has_obs {
                        continue;
                    }
                    let f = (l != 0.0).then(|| &ap * y * l);
                    let g = has_obs.then(|| &ap * model.sensor(j).info_gain() * nu);
                    terms.push((j, f, g));
                }
                per_node.push(terms);
            }
            steps.push(per_node);
            family = hcre_step(&family, model, weights)?;
        }
        Ok(GainSchedule {
            n: model.n(),
            n_nodes: nodes,
            steps,
            factors: NoiseFactors::new(model)?,
            meas_dims: model.sensors().iter().map(|s| s.meas_dim()).collect(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Squared a-priori errors `[k][i]` for one trajectory, every node
    /// starting from `x0_hat`.
    pub fn squared_errors(
        &self,
        trajectory: &Trajectory,
        x0_hat: &DVector<f64>,
    ) -> Result<Vec<Vec<f64>>> {
        if trajectory.horizon() > self.horizon() {
            return Err(Error::DimensionMismatch {
                context: "trajectory longer than gain schedule",
                expected: self.horizon(),
                found: trajectory.horizon(),
            });
        }
        if x0_hat.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "initial estimate",
                expected: self.n,
                found: x0_hat.len(),
            });
        }
        let mut est = vec![x0_hat.clone(); self.n_nodes];
        let mut out = Vec::with_capacity(trajectory.horizon());
        for (k, (x, ys)) in trajectory
            .states
            .iter()
            .zip(&trajectory.measurements)
            .enumerate()
        {
            out.push(est.iter().map(|xh| (x - xh).norm_squared()).collect());
            est = self.steps[k]
                .iter()
                .map(|terms| {
                    let mut v = DVector::zeros(self.n);
                    for (j, f, g) in terms {
                        if let Some(f) = f {
                            v.gemv(1.0, f, &est[*j], 1.0);
                        }
                        if let Some(g) = g {
                            v.gemv(1.0, g, &ys[*j], 1.0);
                        }
                    }
                    v
                })
                .collect();
        }
        Ok(out)
    }

    /// Squared a-priori errors `[k][i]` for the trajectory that
    /// [`simulate_plant`] would draw from `seed`, computed in error
    /// coordinates: `e_i′ = Σ_j F_ij e_j + ω − Σ_j G_ij v_j`, every node
    /// starting from the error `e0 = x_0 − x̂_0`.
    ///
    /// Since `Σ_j F_ij + G_ij C_j = A`, this is the same run as
    /// [`GainSchedule::squared_errors`] but never forms the state itself, so
    /// it stays accurate when `A` is unstable and the state grows without
    /// bound.
    pub fn simulate_errors(
        &self,
        horizon: usize,
        e0: &DVector<f64>,
        seed: u64,
        noise_scale: f64,
    ) -> Result<Vec<Vec<f64>>> {
        if horizon == 0 || horizon > self.horizon() {
            return Err(Error::InvalidParameter(
                "horizon must be between 1 and the schedule length".into(),
            ));
        }
        if e0.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "initial error",
                expected: self.n,
                found: e0.len(),
            });
        }
        if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
            return Err(Error::InvalidParameter(
                "noise scale must be finite and nonnegative".into(),
            ));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut err = vec![e0.clone(); self.n_nodes];
        let mut out = Vec::with_capacity(horizon);
        for k in 0..horizon {
            out.push(err.iter().map(|e| e.norm_squared()).collect());
            let w = &self.factors.q * standard_normals(&mut rng, self.n) * noise_scale;
            let vs: Vec<DVector<f64>> = self
                .factors
                .r
                .iter()
                .zip(&self.meas_dims)
                .map(|(r, &m)| match r {
                    Some(r) => r * standard_normals(&mut rng, m) * noise_scale,
                    None => DVector::zeros(0),
                })
                .collect();
            err = self.steps[k]
                .iter()
                .map(|terms| {
                    let mut v = w.clone();
                    for (j, f, g) in terms {
                        if let Some(f) = f {
                            v.gemv(1.0, f, &err[*j], 1.0);
                        }
                        if let Some(g) = g {
                            v.gemv(-1.0, g, &vs[*j], 1.0);
                        }
                    }
                    v
                })
                .collect();
        }
        Ok(out)
    }
}

//! Plant and sensor models, communication topologies and the `(ℒ, ν)` weight
//! pairs that parameterize each filter variant.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::linalg::{is_collectively_observable, observability_rank, NonnegativeMatrix, SpdMatrix};

/// One sensor: `y = C x + v`, `v ~ N(0, R)`. A sensor with no rows observes
/// nothing and contributes zero information.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    c: DMatrix<f64>,
    r: Option<SpdMatrix>,
    info: DMatrix<f64>,
    gain: DMatrix<f64>,
}

impl Sensor {
    pub fn new(c: DMatrix<f64>, r: SpdMatrix) -> Result<Self> {
        if c.nrows() == 0 {
            return Ok(Self::unobserving(c.ncols()));
        }
        if r.dim() != c.nrows() {
            return Err(Error::DimensionMismatch {
                context: "sensor noise covariance vs observation rows",
                expected: c.nrows(),
                found: r.dim(),
            });
        }
        let r_inv = r.inverse()?;
        let gain = c.transpose() * r_inv.matrix();
        let info = crate::linalg::symmetrize(&(&gain * &c));
        Ok(Sensor {
            c,
            r: Some(r),
            info,
            gain,
        })
    }

    /// A node that takes no measurements (`m_i = 0`).
    pub fn unobserving(n: usize) -> Self {
        Sensor {
            c: DMatrix::zeros(0, n),
            r: None,
            info: DMatrix::zeros(n, n),
            gain: DMatrix::zeros(n, 0),
        }
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn r(&self) -> Option<&SpdMatrix> {
        self.r.as_ref()
    }

    pub fn meas_dim(&self) -> usize {
        self.c.nrows()
    }

    /// `Cᵀ R⁻¹ C` (the zero matrix for an unobserving node).
    pub fn information(&self) -> &DMatrix<f64> {
        &self.info
    }

    /// `Cᵀ R⁻¹`, mapping a measurement into information space.
    pub fn info_gain(&self) -> &DMatrix<f64> {
        &self.gain
    }
}

/// `x_{k+1} = A x_k + w_k`, `w ~ N(0, Q)`, observed by `N` sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    q: SpdMatrix,
    sensors: Vec<Sensor>,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, q: SpdMatrix, sensors: Vec<Sensor>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || n == 0 {
            return Err(Error::DimensionMismatch {
                context: "state matrix must be square and nonempty",
                expected: n,
                found: a.ncols(),
            });
        }
        if q.dim() != n {
            return Err(Error::DimensionMismatch {
                context: "process noise covariance",
                expected: n,
                found: q.dim(),
            });
        }
        if sensors.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one sensor node is required".into(),
            ));
        }
        for s in &sensors {
            if s.c.ncols() != n {
                return Err(Error::DimensionMismatch {
                    context: "observation matrix columns",
                    expected: n,
                    found: s.c.ncols(),
                });
            }
        }
        Ok(SystemModel { a, q, sensors })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.sensors.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &SpdMatrix {
        &self.q
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn sensor(&self, i: usize) -> &Sensor {
        &self.sensors[i]
    }

    pub fn total_meas_dim(&self) -> usize {
        self.sensors.iter().map(Sensor::meas_dim).sum()
    }

    /// `Σ_j Cⱼᵀ Rⱼ⁻¹ Cⱼ`.
    pub fn total_information(&self) -> DMatrix<f64> {
        self.weighted_information(&vec![1.0; self.n_nodes()])
    }

    /// `Σ_j w_j Cⱼᵀ Rⱼ⁻¹ Cⱼ`.
    pub fn weighted_information(&self, w: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        self.sensors
            .iter()
            .zip(w)
            .fold(DMatrix::zeros(n, n), |acc, (s, &wj)| {
                acc + s.information() * wj
            })
    }

    pub fn is_collectively_observable(&self) -> Result<bool> {
        let blocks: Vec<&DMatrix<f64>> = self.sensors.iter().map(|s| &s.c).collect();
        is_collectively_observable(&self.a, &blocks)
    }
}

/// Communication graph with self-loops on every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    adjacency: Vec<bool>,
    positions: Option<Vec<[f64; 2]>>,
    seed: Option<u64>,
}

impl Topology {
    /// Builds from an explicit boolean adjacency; the diagonal is forced true.
    pub fn from_adjacency(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidParameter(
                "topology needs at least one node".into(),
            ));
        }
        let mut adjacency = vec![false; n * n];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "adjacency row",
                    expected: n,
                    found: row.len(),
                });
            }
            for (j, &a) in row.iter().enumerate() {
                adjacency[i * n + j] = a || i == j;
            }
        }
        Ok(Topology {
            n,
            adjacency,
            positions: None,
            seed: None,
        })
    }

    pub fn complete(n: usize) -> Self {
        Topology {
            n,
            adjacency: vec![true; n * n],
            positions: None,
            seed: None,
        }
    }

    /// Path `0 – 1 – … – (n-1)` with self-loops.
    pub fn path(n: usize) -> Self {
        let mut adjacency = vec![false; n * n];
        for i in 0..n {
            adjacency[i * n + i] = true;
            if i + 1 < n {
                adjacency[i * n + i + 1] = true;
                adjacency[(i + 1) * n + i] = true;
            }
        }
        Topology {
            n,
            adjacency,
            positions: None,
            seed: None,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    pub fn adjacency_rows(&self) -> Vec<Vec<bool>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.adjacent(i, j)).collect())
            .collect()
    }

    /// Neighbor count excluding the self-loop.
    pub fn degree(&self, i: usize) -> usize {
        (0..self.n)
            .filter(|&j| j != i && self.adjacent(i, j))
            .count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    /// Seed that produced a geometric layout (after connectivity retries).
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    fn bfs(&self, start: usize, reverse: bool) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for v in 0..self.n {
                let edge = if reverse {
                    self.adjacent(v, u)
                } else {
                    self.adjacent(u, v)
                };
                if edge && dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.bfs(0, false).iter().all(Option::is_some)
            && self.bfs(0, true).iter().all(Option::is_some)
    }

    /// Longest shortest-path length, `None` when not strongly connected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for s in 0..self.n {
            for d in self.bfs(s, false) {
                best = best.max(d?);
            }
        }
        Some(best)
    }
}

/// Maximum number of layouts tried by [`random_geometric_topology`].
pub const GEOMETRIC_ATTEMPTS: usize = 1000;

/// Nodes uniform on `[0, width]²`, linked when within `radius`. Layouts are
/// redrawn with `seed + 1, seed + 2, …` until strongly connected.
pub fn random_geometric_topology(n: usize, width: f64, radius: f64, seed: u64) -> Result<Topology> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "topology needs at least one node".into(),
        ));
    }
    if !(radius > 0.0) || !(width > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "width and radius must be positive (width {width}, radius {radius})"
        )));
    }
    let coord = Uniform::new_inclusive(0.0, width)
        .map_err(|e| Error::InvalidParameter(format!("bad region width: {e}")))?;
    for attempt in 0..GEOMETRIC_ATTEMPTS {
        let s = seed.wrapping_add(attempt as u64);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(s);
        let positions: Vec<[f64; 2]> = (0..n)
            .map(|_| [coord.sample(&mut rng), coord.sample(&mut rng)])
            .collect();
        let mut adjacency = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                let dx = positions[i][0] - positions[j][0];
                let dy = positions[i][1] - positions[j][1];
                adjacency[i * n + j] = i == j || (dx * dx + dy * dy).sqrt() <= radius;
            }
        }
        let topo = Topology {
            n,
            adjacency,
            positions: Some(positions),
            seed: Some(s),
        };
        if topo.is_strongly_connected() {
            return Ok(topo);
        }
    }
    Err(Error::Disconnected {
        attempts: GEOMETRIC_ATTEMPTS,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Cidf,
    Icf,
    Cmci,
    Custom,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Cidf => "cidf",
            Variant::Icf => "icf",
            Variant::Cmci => "cmci",
            Variant::Custom => "custom",
        }
    }
}

/// The `(ℒ, ν)` pair driving `P_i ← A(Σ_j ℓ_ij P_j⁻¹ + ν_ij C_jᵀR_j⁻¹C_j)⁻¹Aᵀ + Q`.
///
/// Built-in variants also keep the one-round consensus matrix (`base`) and the
/// per-node observation scale `s`, so that `ℒ = base^L` and
/// `ν = base^L · diag(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub l_mat: NonnegativeMatrix,
    pub nu_mat: NonnegativeMatrix,
    pub variant: Variant,
    pub fusion_depth: usize,
    pub omega: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub base: Option<NonnegativeMatrix>,
    pub obs_scale: Option<Vec<f64>>,
}

impl FusionWeights {
    fn layered(
        variant: Variant,
        base: NonnegativeMatrix,
        obs_scale: Vec<f64>,
        depth: usize,
        omega: Option<Vec<f64>>,
        epsilon: Option<f64>,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidParameter(
                "fusion depth must be at least 1".into(),
            ));
        }
        let l_mat = base.pow(depth);
        let nu_mat = l_mat.scale_columns(&obs_scale)?;
        Ok(FusionWeights {
            l_mat,
            nu_mat,
            variant,
            fusion_depth: depth,
            omega,
            epsilon,
            base: Some(base),
            obs_scale: Some(obs_scale),
        })
    }

    /// Arbitrary `(ℒ, ν)`; only shapes are checked here, see [`validate`].
    pub fn custom(l_mat: NonnegativeMatrix, nu_mat: NonnegativeMatrix) -> Result<Self> {
        if l_mat.size() != nu_mat.size() {
            return Err(Error::DimensionMismatch {
                context: "ℒ and ν sizes",
                expected: l_mat.size(),
                found: nu_mat.size(),
            });
        }
        Ok(FusionWeights {
            l_mat,
            nu_mat,
            variant: Variant::Custom,
            fusion_depth: 1,
            omega: None,
            epsilon: None,
            base: None,
            obs_scale: None,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.l_mat.size()
    }

    /// Same variant and parameters at a different fusion depth.
    pub fn at_depth(&self, depth: usize) -> Result<Self> {
        match (&self.base, &self.obs_scale) {
            (Some(base), Some(scale)) => Self::layered(
                self.variant,
                base.clone(),
                scale.clone(),
                depth,
                self.omega.clone(),
                self.epsilon,
            ),
            _ => Err(Error::InvalidParameter(
                "custom weights carry no consensus matrix to deepen".into(),
            )),
        }
    }
}

fn degree_normalized_matrix(topo: &Topology) -> NonnegativeMatrix {
    let n = topo.n_nodes();
    let m = DMatrix::from_fn(n, n, |i, j| {
        if topo.adjacent(i, j) {
            1.0 / (topo.degree(i) + 1) as f64
        } else {
            0.0
        }
    });
    // Entries are nonnegative and finite by construction.
    NonnegativeMatrix::new(m).expect("degree-normalized weights are nonnegative")
}

/// `ℓ_ij = a_ij / d_ii` with the self-loop counted in `d_ii`; `ν = ℒ`.
pub fn degree_normalized_weights(topo: &Topology) -> FusionWeights {
    let n = topo.n_nodes();
    FusionWeights::layered(
        Variant::Cidf,
        degree_normalized_matrix(topo),
        vec![1.0; n],
        1,
        None,
        None,
    )
    .expect("depth 1 is valid")
}

/// CIDF weights with `L` fusion rounds: `ℒ = ν = (degree-normalized)^L`.
pub fn cidf_weights(topo: &Topology, depth: usize) -> Result<FusionWeights> {
    let n = topo.n_nodes();
    FusionWeights::layered(
        Variant::Cidf,
        degree_normalized_matrix(topo),
        vec![1.0; n],
        depth,
        None,
        None,
    )
}

/// Metropolis–Hastings weights `w_ij = 1 / (1 + max(d_i, d_j))`, which are
/// doubly stochastic on undirected graphs. Used as CIDF weights.
pub fn metropolis_weights(topo: &Topology, depth: usize) -> Result<FusionWeights> {
    let n = topo.n_nodes();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i != j && topo.adjacent(i, j) {
                let w = 1.0 / (1 + topo.degree(i).max(topo.degree(j))) as f64;
                m[(i, j)] = w;
                off += w;
            }
        }
        m[(i, i)] = 1.0 - off;
    }
    FusionWeights::layered(
        Variant::Cidf,
        NonnegativeMatrix::new(m)?,
        vec![1.0; n],
        depth,
        None,
        None,
    )
}

/// Default ICF consensus step `0.65 / d_max`.
pub fn icf_default_epsilon(topo: &Topology) -> f64 {
    match topo.max_degree() {
        0 => 0.5,
        d => 0.65 / d as f64,
    }
}

/// Information-weighted consensus: `W = I − ε·Lap`, `ℒ = W^L`, `ν = N·W^L`.
pub fn icf_weights(topo: &Topology, epsilon: f64, depth: usize) -> Result<FusionWeights> {
    let n = topo.n_nodes();
    let dmax = topo.max_degree() as f64;
    if !(epsilon > 0.0) || epsilon * dmax >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "ICF step {epsilon} must satisfy 0 < ε < 1/max_degree = {}; otherwise W is not stochastic",
            1.0 / dmax
        )));
    }
    let w = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 - epsilon * topo.degree(i) as f64
        } else if topo.adjacent(i, j) {
            epsilon
        } else {
            0.0
        }
    });
    FusionWeights::layered(
        Variant::Icf,
        NonnegativeMatrix::new(w)?,
        vec![n as f64; n],
        depth,
        None,
        Some(epsilon),
    )
}

/// Hybrid CMCI: `ℒ = (degree-normalized)^L`, `ν_ij = ℓ_ij^{(L)} ω_j`.
pub fn cmci_weights(topo: &Topology, omega: &[f64], depth: usize) -> Result<FusionWeights> {
    let n = topo.n_nodes();
    if omega.len() != n {
        return Err(Error::DimensionMismatch {
            context: "CMCI local weights",
            expected: n,
            found: omega.len(),
        });
    }
    if omega.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter(
            "CMCI local weights must be positive".into(),
        ));
    }
    FusionWeights::layered(
        Variant::Cmci,
        degree_normalized_matrix(topo),
        omega.to_vec(),
        depth,
        Some(omega.to_vec()),
        None,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &'static str, passed: bool, measured: f64) {
        self.checks.push(Check {
            name,
            passed,
            measured,
        });
    }
}

/// Checks the standing assumptions: invertible `A`, `Q ≻ 0`, `R_i ≻ 0`,
/// collective observability, `ℒ` row stochastic and primitive, `ν` irreducible.
/// Each check carries the quantity it measured.
pub fn validate(model: &SystemModel, weights: &FusionWeights) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = model.n();

    let sv = model.a().clone().svd(false, false).singular_values;
    let (smin, smax) = (sv.min(), sv.max());
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    report.push("a_invertible", ratio > 1e-12, ratio);

    let qmin = model.q().min_eigenvalue();
    report.push("q_positive_definite", qmin > 0.0, qmin);

    let rmin = model
        .sensors()
        .iter()
        .filter_map(|s| s.r().map(SpdMatrix::min_eigenvalue))
        .fold(f64::INFINITY, f64::min);
    report.push("r_positive_definite", rmin > 0.0, rmin);

    let blocks: Vec<&DMatrix<f64>> = model.sensors().iter().map(Sensor::c).collect();
    let rank = observability_rank(model.a(), &blocks).unwrap_or(0);
    report.push("collective_observability", rank == n, rank as f64);

    let sizes_ok = weights.n_nodes() == model.n_nodes();
    report.push("weights_match_nodes", sizes_ok, weights.n_nodes() as f64);

    let dev = weights.l_mat.row_sum_deviation();
    report.push("l_row_stochastic", weights.l_mat.is_row_stochastic(), dev);

    let exponent = weights.l_mat.primitivity_exponent();
    report.push(
        "l_primitive",
        exponent.is_some(),
        exponent.map_or(f64::NAN, |k| k as f64),
    );

    report.push("nu_irreducible", weights.nu_mat.is_irreducible(), 0.0);
    report
}

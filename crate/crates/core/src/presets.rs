//! Built-in experiment setups and a seeded generator of random valid systems.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::Result;
use crate::linalg::SpdMatrix;
use crate::model::{
    cidf_weights, cmci_weights, degree_normalized_weights, icf_default_epsilon, icf_weights,
    random_geometric_topology, validate, FusionWeights, Sensor, SystemModel, Topology,
};

/// Three scalar nodes on a path: `A = Q = R = 1`, only node 1 measures.
pub fn scalar_example() -> (SystemModel, FusionWeights, Topology) {
    let one = SpdMatrix::identity(1);
    let model = SystemModel::new(
        DMatrix::from_element(1, 1, 1.0),
        one.clone(),
        vec![
            Sensor::new(DMatrix::from_element(1, 1, 1.0), one).expect("scalar sensor"),
            Sensor::unobserving(1),
            Sensor::unobserving(1),
        ],
    )
    .expect("scalar model");
    let topo = Topology::path(3);
    (model, degree_normalized_weights(&topo), topo)
}

/// Layout parameters for a random geometric network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricRecipe {
    pub n_nodes: usize,
    pub width: f64,
    pub radius: f64,
    pub seed: u64,
}

impl GeometricRecipe {
    pub fn build(&self) -> Result<Topology> {
        random_geometric_topology(self.n_nodes, self.width, self.radius, self.seed)
    }

    pub fn with_seed(self, seed: u64) -> Self {
        GeometricRecipe { seed, ..self }
    }
}

pub const DEFAULT_TOPOLOGY_SEED: u64 = 1;

/// 50 nodes in a 500×500 square with radius 110.
pub fn default_network() -> GeometricRecipe {
    GeometricRecipe {
        n_nodes: 50,
        width: 500.0,
        radius: 110.0,
        seed: DEFAULT_TOPOLOGY_SEED,
    }
}

/// Nodes `0..3` carry `c1`, nodes `3..6` carry `c2`, the other 44 measure nothing.
fn fifty_sensors(n: usize, c1: &[f64], c2: &[f64], r: f64) -> Vec<Sensor> {
    let r = SpdMatrix::from_scalar(r).expect("positive noise");
    let row =
        |c: &[f64]| Sensor::new(DMatrix::from_row_slice(1, n, c), r.clone()).expect("row sensor");
    let mut sensors = Vec::with_capacity(50);
    sensors.extend((0..3).map(|_| row(c1)));
    sensors.extend((0..3).map(|_| row(c2)));
    sensors.extend((0..44).map(|_| Sensor::unobserving(n)));
    sensors
}

const RANDOM6D_A: [f64; 36] = [
    0.3836, 0.2558, 0.2525, 0.1766, 0.4524, 0.3534, //
    0.1978, 0.2351, 0.4546, 0.5642, 0.1793, 0.4899, //
    0.3322, 0.4508, 0.4779, 0.4064, 0.5716, 0.4073, //
    0.5927, 0.4560, 0.5109, 0.6161, 0.2135, 0.1504, //
    0.6139, 0.4898, 0.3574, 0.3858, 0.6741, 0.6985, //
    0.5016, 0.0795, 0.0191, 0.5526, 0.0543, 0.4081,
];

const RANDOM6D_Q: [f64; 36] = [
    1.79, -0.69, 0.48, -0.39, -0.26, -0.25, //
    -0.69, 1.45, -0.07, 0.01, 0.56, 0.05, //
    0.48, -0.07, 2.12, -0.11, -0.61, -0.61, //
    -0.39, 0.01, -0.11, 1.88, 0.49, 0.46, //
    -0.26, 0.56, -0.61, 0.49, 2.37, 0.20, //
    -0.25, 0.05, -0.61, 0.46, 0.20, 1.24,
];

/// Unstable 6-state system observed by 6 of 50 scalar sensors.
pub fn random6d() -> (SystemModel, GeometricRecipe) {
    let a = DMatrix::from_row_slice(6, 6, &RANDOM6D_A);
    let q = SpdMatrix::new(DMatrix::from_row_slice(6, 6, &RANDOM6D_Q))
        .expect("printed Q is positive definite");
    let sensors = fifty_sensors(
        6,
        &[0.3711, 0.4438, 0.2733, 0.3920, 0.3768, 0.1424],
        &[0.7154, 0.3439, 0.4017, 0.9339, 0.1471, 0.2543],
        0.3818,
    );
    (
        SystemModel::new(a, q, sensors).expect("random6d model"),
        default_network(),
    )
}

/// Two decoupled constant-velocity axes, `T = 1`, with correlated process noise.
pub fn target_tracking() -> (SystemModel, GeometricRecipe) {
    let t = 1.0_f64;
    let mut a = DMatrix::zeros(4, 4);
    let mut q = DMatrix::zeros(4, 4);
    let g = DMatrix::from_row_slice(2, 2, &[t * t * t / 3.0, t * t / 2.0, t * t / 2.0, t]);
    for b in 0..2 {
        a[(2 * b, 2 * b)] = 1.0;
        a[(2 * b, 2 * b + 1)] = t;
        a[(2 * b + 1, 2 * b + 1)] = 1.0;
        for c in 0..2 {
            let scale = if b == c { 1.0 } else { 0.5 };
            q.view_mut((2 * b, 2 * c), (2, 2)).copy_from(&(&g * scale));
        }
    }
    let q = SpdMatrix::new(q).expect("tracking Q is positive definite");
    let sensors = fifty_sensors(4, &[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], 1.0);
    (
        SystemModel::new(a, q, sensors).expect("tracking model"),
        default_network(),
    )
}

/// A seeded random system with `n ≤ max_n` states and `N ≤ max_nodes` nodes,
/// a random connected graph and random variant weights, redrawn until it
/// passes [`validate`].
pub fn random_system(seed: u64, max_n: usize, max_nodes: usize) -> (SystemModel, FusionWeights) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    loop {
        if let Some(found) = draw_system(&mut rng, max_n.max(1), max_nodes.max(1)) {
            return found;
        }
    }
}

fn below(rng: &mut ChaCha20Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

fn draw_system(
    rng: &mut ChaCha20Rng,
    max_n: usize,
    max_nodes: usize,
) -> Option<(SystemModel, FusionWeights)> {
    let unit = Uniform::new(0.0, 1.0).ok()?;
    let n = 1 + below(rng, max_n);
    let nodes = 1 + below(rng, max_nodes);
    let normal = |r: &mut ChaCha20Rng| -> f64 { StandardNormal.sample(r) };

    let a = DMatrix::from_fn(n, n, |_, _| 0.7 * normal(rng));
    let b = DMatrix::from_fn(n, n, |_, _| normal(rng));
    let q = SpdMatrix::new(&b * b.transpose() * 0.3 + DMatrix::identity(n, n) * 0.1).ok()?;
    let sensors: Vec<Sensor> = (0..nodes)
        .map(|i| {
            if i == 0 || unit.sample(rng) < 0.5 {
                let m = 1 + below(rng, n);
                let c = DMatrix::from_fn(m, n, |_, _| normal(rng));
                let rb = DMatrix::from_fn(m, m, |_, _| normal(rng));
                let r = SpdMatrix::new(&rb * rb.transpose() * 0.2 + DMatrix::identity(m, m) * 0.3)
                    .ok()?;
                Sensor::new(c, r).ok()
            } else {
                Some(Sensor::unobserving(n))
            }
        })
        .collect::<Option<_>>()?;
    let model = SystemModel::new(a, q, sensors).ok()?;

    let mut adj = vec![vec![false; nodes]; nodes];
    for i in 1..nodes {
        let j = below(rng, i);
        adj[i][j] = true;
        adj[j][i] = true;
    }
    for i in 0..nodes {
        for j in i + 1..nodes {
            if unit.sample(rng) < 0.3 {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
    }
    let topo = Topology::from_adjacency(&adj).ok()?;
    let depth = 1 + below(rng, 3);
    let weights = match below(rng, 3) {
        0 => cidf_weights(&topo, depth).ok()?,
        1 => icf_weights(&topo, icf_default_epsilon(&topo), depth).ok()?,
        _ => {
            let omega: Vec<f64> = (0..nodes).map(|_| 0.5 + 1.5 * unit.sample(rng)).collect();
            cmci_weights(&topo, &omega, depth).ok()?
        }
    };
    validate(&model, &weights)
        .all_passed()
        .then_some((model, weights))
}

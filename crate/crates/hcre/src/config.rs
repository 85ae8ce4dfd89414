//! TOML scenario files.
//!
//! ```toml
//! [system]
//! a = [[1.0, 1.0], [0.0, 1.0]]
//! q = [[0.3, 0.1], [0.1, 0.2]]
//!
//! [[sensors]]
//! c = [[1.0, 0.0]]
//! r = [[0.5]]
//! count = 2          # optional, repeats the sensor
//!
//! [[sensors]]        # no `c`: a node that measures nothing
//!
//! [topology]
//! kind = "explicit"  # or "path", "complete", "geometric"
//! adjacency = [[1, 1, 0], [1, 1, 1], [0, 1, 1]]
//!
//! [weights]          # optional; command-line flags override it
//! variant = "icf"    # cidf | metropolis | icf | cmci | custom
//! depth = 3
//! epsilon = 0.3
//! ```
//!
//! A geometric topology takes `width`, `radius` and an optional `seed`, and
//! gets one node per sensor. Custom weights take `l` and `nu` matrices.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;

use hcre_core::linalg::{NonnegativeMatrix, SpdMatrix};
use hcre_core::model::{random_geometric_topology, Sensor, SystemModel, Topology};

use crate::error::{HarnessError, Result};
use crate::scenario::{VariantChoice, WeightChoice};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemSection,
    pub sensors: Vec<SensorSection>,
    pub topology: TopologySection,
    #[serde(default)]
    pub weights: Option<WeightsSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub a: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    #[serde(default)]
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub r: Vec<Vec<f64>>,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySection {
    Explicit {
        adjacency: Vec<Vec<u8>>,
    },
    Path {},
    Complete {},
    Geometric {
        width: f64,
        radius: f64,
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub variant: Option<VariantChoice>,
    pub depth: Option<usize>,
    pub epsilon: Option<f64>,
    pub omega: Option<Vec<f64>>,
    pub l: Option<Vec<Vec<f64>>>,
    pub nu: Option<Vec<Vec<f64>>>,
}

/// A scenario file turned into library types.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub model: SystemModel,
    pub topology: Topology,
    pub weights: WeightChoice,
    pub custom: Option<(NonnegativeMatrix, NonnegativeMatrix)>,
}

impl ScenarioConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text).map_err(|message| HarnessError::Config {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Builds the model and topology. `topology_seed` overrides the file's
    /// geometric seed.
    pub fn load(&self, topology_seed: Option<u64>) -> Result<LoadedScenario> {
        let a = matrix(&self.system.a, "system.a")?;
        let q = SpdMatrix::new(matrix(&self.system.q, "system.q")?)?;
        let n = a.nrows();
        let mut sensors = Vec::new();
        for (k, s) in self.sensors.iter().enumerate() {
            let sensor = if s.c.is_empty() {
                Sensor::unobserving(n)
            } else {
                let c = matrix(&s.c, "sensors.c")?;
                let r = SpdMatrix::new(matrix(&s.r, "sensors.r")?)
                    .map_err(|e| bad(format!("sensor {k}: {e}")))?;
                Sensor::new(c, r)?
            };
            sensors.extend(std::iter::repeat_n(sensor, s.count));
        }
        let model = SystemModel::new(a, q, sensors)?;
        let nodes = model.n_nodes();

        let topology = match &self.topology {
            TopologySection::Explicit { adjacency } => {
                let rows: Vec<Vec<bool>> = adjacency
                    .iter()
                    .map(|r| r.iter().map(|&x| x != 0).collect())
                    .collect();
                Topology::from_adjacency(&rows)?
            }
            TopologySection::Path {} => Topology::path(nodes),
            TopologySection::Complete {} => Topology::complete(nodes),
            TopologySection::Geometric {
                width,
                radius,
                seed,
            } => random_geometric_topology(
                nodes,
                *width,
                *radius,
                topology_seed.or(*seed).unwrap_or(0),
            )?,
        };
        if topology.n_nodes() != nodes {
            return Err(bad(format!(
                "topology has {} nodes but there are {nodes} sensors",
                topology.n_nodes()
            )));
        }

        let section = self.weights.clone().unwrap_or_default();
        let custom = match (&section.l, &section.nu) {
            (Some(l), Some(nu)) => Some((
                NonnegativeMatrix::new(matrix(l, "weights.l")?)?,
                NonnegativeMatrix::new(matrix(nu, "weights.nu")?)?,
            )),
            (None, None) => None,
            _ => return Err(bad("custom weights need both `l` and `nu`".into())),
        };
        let weights = WeightChoice {
            variant: section.variant,
            depth: section.depth,
            epsilon: section.epsilon,
            omega: section.omega,
        };
        Ok(LoadedScenario {
            model,
            topology,
            weights,
            custom,
        })
    }
}

fn bad(message: String) -> HarnessError {
    HarnessError::Config {
        path: PathBuf::from("<scenario>"),
        message,
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(bad(format!("{what} is empty")));
    }
    if rows.iter().any(|r| r.len() != cols) {
        return Err(bad(format!("{what} has rows of different lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

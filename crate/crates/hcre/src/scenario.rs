//! Named presets and custom scenarios, and how fusion weights are built for them.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use hcre_core::linalg::NonnegativeMatrix;
use hcre_core::model::{
    cidf_weights, cmci_weights, icf_default_epsilon, icf_weights, metropolis_weights, validate,
    FusionWeights, SystemModel, Topology, ValidationReport,
};
use hcre_core::presets;

use crate::config::ScenarioConfig;
use crate::error::{HarnessError, Result};

/// Default fusion depth for ICF.
pub const ICF_DEFAULT_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Scalar,
    Random6d,
    TargetTracking,
    Custom(PathBuf),
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Scalar => "scalar",
            Preset::Random6d => "random6d",
            Preset::TargetTracking => "target-tracking",
            Preset::Custom(_) => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "scalar" => Some(Preset::Scalar),
            "random6d" => Some(Preset::Random6d),
            "target-tracking" | "target_tracking" | "tracking" => Some(Preset::TargetTracking),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantChoice {
    /// Degree-normalized weights, `ν = ℒ`.
    Cidf,
    /// Metropolis–Hastings weights, `ν = ℒ`.
    Metropolis,
    Icf,
    Cmci,
    /// `l` and `nu` from a scenario file.
    Custom,
}

impl VariantChoice {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "cidf" => Some(VariantChoice::Cidf),
            "metropolis" => Some(VariantChoice::Metropolis),
            "icf" => Some(VariantChoice::Icf),
            "cmci" => Some(VariantChoice::Cmci),
            "custom" => Some(VariantChoice::Custom),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VariantChoice::Cidf => "cidf",
            VariantChoice::Metropolis => "metropolis",
            VariantChoice::Icf => "icf",
            VariantChoice::Cmci => "cmci",
            VariantChoice::Custom => "custom",
        }
    }
}

/// Requested weights; unset fields fall back to the scenario, then to the
/// built-in defaults (CIDF; depth 1, or 3 for ICF; `ε = 0.65/d_max`;
/// `ω_j = N`).
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct WeightChoice {
    pub variant: Option<VariantChoice>,
    pub depth: Option<usize>,
    pub epsilon: Option<f64>,
    pub omega: Option<Vec<f64>>,
}

impl WeightChoice {
    pub fn variant(variant: VariantChoice) -> Self {
        WeightChoice {
            variant: Some(variant),
            ..Default::default()
        }
    }

    /// Fields of `self` win over `fallback`.
    pub fn or(&self, fallback: &WeightChoice) -> WeightChoice {
        WeightChoice {
            variant: self.variant.or(fallback.variant),
            depth: self.depth.or(fallback.depth),
            epsilon: self.epsilon.or(fallback.epsilon),
            omega: self.omega.clone().or_else(|| fallback.omega.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: SystemModel,
    pub topology: Topology,
    pub defaults: WeightChoice,
    pub custom: Option<(NonnegativeMatrix, NonnegativeMatrix)>,
}

impl Scenario {
    /// Loads a preset. `topology_seed` replaces the default layout seed of
    /// the 50-node presets and of geometric scenario files.
    pub fn load(preset: &Preset, topology_seed: Option<u64>) -> Result<Self> {
        let name = preset.name().to_string();
        match preset {
            Preset::Scalar => {
                let (model, _, topology) = presets::scalar_example();
                Ok(Scenario {
                    name,
                    model,
                    topology,
                    defaults: WeightChoice::default(),
                    custom: None,
                })
            }
            Preset::Random6d | Preset::TargetTracking => {
                let (model, recipe) = if *preset == Preset::Random6d {
                    presets::random6d()
                } else {
                    presets::target_tracking()
                };
                let recipe = topology_seed.map_or(recipe, |s| recipe.with_seed(s));
                Ok(Scenario {
                    name,
                    model,
                    topology: recipe.build()?,
                    defaults: WeightChoice::default(),
                    custom: None,
                })
            }
            Preset::Custom(path) => {
                let loaded = ScenarioConfig::from_path(path)?.load(topology_seed)?;
                Ok(Scenario {
                    name,
                    model: loaded.model,
                    topology: loaded.topology,
                    defaults: loaded.weights,
                    custom: loaded.custom,
                })
            }
        }
    }

    /// Resolves `choice` against the scenario defaults into concrete weights.
    pub fn weights(&self, choice: &WeightChoice) -> Result<FusionWeights> {
        let c = choice.or(&self.defaults);
        let topo = &self.topology;
        let n = topo.n_nodes();
        let variant = c.variant.unwrap_or(VariantChoice::Cidf);
        let weights = match variant {
            VariantChoice::Cidf => cidf_weights(topo, c.depth.unwrap_or(1))?,
            VariantChoice::Metropolis => metropolis_weights(topo, c.depth.unwrap_or(1))?,
            VariantChoice::Icf => icf_weights(
                topo,
                c.epsilon.unwrap_or_else(|| icf_default_epsilon(topo)),
                c.depth.unwrap_or(ICF_DEFAULT_DEPTH),
            )?,
            VariantChoice::Cmci => {
                let omega = c.omega.clone().unwrap_or_else(|| vec![n as f64; n]);
                cmci_weights(topo, &omega, c.depth.unwrap_or(1))?
            }
            VariantChoice::Custom => {
                let (l, nu) = self.custom.clone().ok_or_else(|| {
                    HarnessError::InvalidArgument(
                        "custom weights need `l` and `nu` in a scenario file".into(),
                    )
                })?;
                FusionWeights::custom(l, nu)?
            }
        };
        Ok(weights)
    }

    /// Topology seed actually used by a geometric layout.
    pub fn topology_seed(&self) -> Option<u64> {
        self.topology.seed()
    }
}

/// Runs [`validate`] and turns failed checks into an error.
pub fn ensure_valid(model: &SystemModel, weights: &FusionWeights) -> Result<ValidationReport> {
    let report = validate(model, weights);
    if report.all_passed() {
        Ok(report)
    } else {
        let failed: Vec<String> = report
            .failed()
            .map(|c| format!("{} ({})", c.name, c.measured))
            .collect();
        Err(HarnessError::Validation(failed.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_preset_uses_the_path_weights() {
        let s = Scenario::load(&Preset::Scalar, None).unwrap();
        let w = s.weights(&WeightChoice::default()).unwrap();
        let (_, expected, _) = presets::scalar_example();
        assert_eq!(w.l_mat, expected.l_mat);
        assert_eq!(w.nu_mat, expected.nu_mat);
    }

    #[test]
    fn variant_defaults() {
        let s = Scenario::load(&Preset::Scalar, None).unwrap();
        let icf = s
            .weights(&WeightChoice::variant(VariantChoice::Icf))
            .unwrap();
        assert_eq!(icf.fusion_depth, ICF_DEFAULT_DEPTH);
        assert_eq!(icf.epsilon, Some(0.325));
        let cmci = s
            .weights(&WeightChoice::variant(VariantChoice::Cmci))
            .unwrap();
        assert_eq!(cmci.omega, Some(vec![3.0; 3]));
        assert!(matches!(
            s.weights(&WeightChoice::variant(VariantChoice::Custom)),
            Err(HarnessError::InvalidArgument(_))
        ));
    }

    #[test]
    fn validation_errors_name_the_check() {
        let s = Scenario::load(&Preset::Scalar, None).unwrap();
        let eye = FusionWeights::custom(
            NonnegativeMatrix::identity(3),
            NonnegativeMatrix::identity(3),
        )
        .unwrap();
        let err = ensure_valid(&s.model, &eye).unwrap_err();
        assert!(err.to_string().contains("l_primitive"));
    }

    #[test]
    fn preset_names_round_trip() {
        for p in [Preset::Scalar, Preset::Random6d, Preset::TargetTracking] {
            assert_eq!(Preset::from_name(p.name()), Some(p));
        }
    }
}

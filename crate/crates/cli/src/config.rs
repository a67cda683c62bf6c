//! JSON run configuration. Every section has defaults; unknown keys are
//! rejected.

use std::path::Path;

use featurelens::enrichment::AnnotateConfig;
use featurelens::features::SteerTarget;
use featurelens::nn::autoencoder::AeArchitecture;
use featurelens::nn::TrainConfig;
use featurelens::probe::{GdProbeConfig, ProbeMethod};
use featurelens::sae::SaeVariant;
use featurelens::sim::SimConfig;
use featurelens::structure::DEFAULT_PERCENTILES;
use serde::{Deserialize, Serialize};

use crate::sweep::SweepGrid;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub simulate: SimulateSection,
    pub train_ae: AeSection,
    pub train_sae: SaeSection,
    pub sweep: SweepGrid,
    pub probe: ProbeSection,
    pub structure: StructureSection,
    pub features: FeaturesSection,
    pub pipeline: AnnotateConfig,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            simulate: SimulateSection::default(),
            train_ae: AeSection::default(),
            train_sae: SaeSection::default(),
            sweep: SweepGrid::small(),
            probe: ProbeSection::default(),
            structure: StructureSection::default(),
            features: FeaturesSection::default(),
            pipeline: AnnotateConfig::default(),
            seeds: vec![0],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::User(format!("config {}: {e}", path.display())))
    }

    /// Replaces the seed list and every per-section seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self.simulate.large.seed = seed;
        self.train_ae.train.seed = seed;
        self.train_sae.train.seed = seed;
        self.sweep.train.seed = seed;
        self.probe.gd.seed = seed;
        self.pipeline.high_low.seed = seed;
        self
    }

    pub fn first_seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::User("config: seeds must not be empty".into()));
        }
        self.simulate.large.validate()?;
        self.train_ae.train.validate()?;
        self.train_sae.train.validate()?;
        self.sweep.validate()?;
        if self.train_ae.latent == 0 || self.train_ae.n_layers == 0 {
            return Err(CliError::User("config: train_ae latent and n_layers must be positive".into()));
        }
        if self.train_sae.scaling_factor == 0 {
            return Err(CliError::User("config: train_sae scaling_factor must be positive".into()));
        }
        if self.structure.percentiles.iter().any(|p| !(0.0..=100.0).contains(p)) {
            return Err(CliError::User("config: structure percentiles must lie in [0, 100]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Parameters of the `large` preset.
    pub large: SimConfig,
    pub small_n_train: usize,
    pub small_n_val: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            large: SimConfig::default(),
            small_n_train: 10000,
            small_n_val: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeSection {
    pub latent: usize,
    pub n_layers: usize,
    pub architecture: AeArchitecture,
    pub train: TrainConfig,
}

impl Default for AeSection {
    fn default() -> Self {
        AeSection {
            latent: 4,
            n_layers: 1,
            architecture: AeArchitecture::Wide,
            train: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 32,
                max_epochs: 200,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeSection {
    pub variant: SaeVariant,
    /// Hidden width as a multiple of the embedding width.
    pub scaling_factor: usize,
    pub train: TrainConfig,
}

impl Default for SaeSection {
    fn default() -> Self {
        SaeSection {
            variant: SaeVariant::Vanilla { l1_weight: 1e-3 },
            scaling_factor: 10,
            train: TrainConfig {
                max_epochs: 500,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub method: ProbeMethod,
    pub gd: GdProbeConfig,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            method: ProbeMethod::ClosedForm,
            gd: GdProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureSection {
    pub percentiles: Vec<f64>,
}

impl Default for StructureSection {
    fn default() -> Self {
        StructureSection {
            percentiles: DEFAULT_PERCENTILES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub steer_target: SteerTarget,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection {
            steer_target: SteerTarget::Max,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"simulte": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train_sae": {"lr": 1}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"pipeline": {"high_low": {"mode": "automated", "x": 1}}}"#).is_err());
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"train_sae": {"variant": {"variant": "topk", "k": 8}}, "seeds": [0, 42, 9307]}"#)
                .unwrap();
        assert_eq!(c.train_sae.variant, SaeVariant::TopK { k: 8 });
        assert_eq!(c.train_sae.scaling_factor, 10);
        assert_eq!(c.seeds, vec![0, 42, 9307]);
    }

    #[test]
    fn documented_example_parses() {
        let c: RunConfig = serde_json::from_str(
            r#"{
              "simulate": { "large": { "n_genes": 2000, "dim_x": 50 }, "small_n_train": 10000, "small_n_val": 2000 },
              "train_ae": { "latent": 4, "n_layers": 1, "architecture": "wide",
                            "train": { "learning_rate": 1e-3, "batch_size": 32, "max_epochs": 200 } },
              "train_sae": { "variant": { "variant": "vanilla", "l1_weight": 1e-3 }, "scaling_factor": 10 },
              "sweep": { "variants": ["vanilla", "prebias", "topk"], "scaling_factors": [2, 5, 10] },
              "probe": { "method": "closed_form" },
              "structure": { "percentiles": [20, 30, 40, 50, 60, 70] },
              "features": { "steer_target": "max" },
              "pipeline": { "high_low": { "mode": "automated", "low_cap": 1000 }, "primary_q": 1e-5, "record_p": 0.01 },
              "seeds": [0, 42, 9307]
            }"#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.simulate.large.n_genes, 2000);
        assert_eq!(c.sweep.tasks(&c.seeds).len(), 3 * (3 * 4 * 5 * 2 + 3 * 4 * 6));
    }

    #[test]
    fn seed_override_reaches_sections() {
        let c = RunConfig::default().with_seed(42);
        assert_eq!(c.seeds, vec![42]);
        assert_eq!(c.train_sae.train.seed, 42);
        assert_eq!(c.pipeline.high_low.seed, 42);
    }

    #[test]
    fn invalid_values_are_user_errors() {
        let mut c = RunConfig::default();
        c.train_sae.train.learning_rate = -1.0;
        assert!(matches!(c.validate(), Err(CliError::User(_))));
    }
}

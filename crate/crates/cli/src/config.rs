//! Run configuration: one TOML file with per-subcommand sections. Unknown
//! keys are rejected; missing keys take the documented defaults.

use serde::Deserialize;
use std::path::Path;
use vde_core::model::{DiscriminatorSpec, GeneratorSpec, NormKind};
use vde_core::phantom::PhantomSpec;
use vde_core::training::TrainingConfig;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub phantom: PhantomSpec,
    pub dataset: DatasetConfig,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub training: TrainingConfig,
    pub suppress: SuppressConfig,
    pub infer: InferConfig,
    pub froc: FrocConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Number of phantoms generated by `phantom-gen`.
    pub n: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n: 10,
            base_seed: 0,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuppressConfig {
    /// Bone edge threshold; derived from the bone image when absent.
    pub threshold: Option<f64>,
    pub solver_tolerance: f64,
    /// Spectral floor for the shadow reconstruction inside suppression.
    pub spectral_floor: f64,
}

impl Default for SuppressConfig {
    fn default() -> Self {
        let opts = vde_core::suppress::PoissonOptions::default();
        Self {
            threshold: None,
            solver_tolerance: opts.tolerance,
            spectral_floor: vde_core::suppress::SHADOW_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    /// Raw output bounds applied to the generated bone image; the input
    /// image's own bounds are used when absent.
    pub calibration_min: Option<f64>,
    pub calibration_max: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrocConfig {
    /// Acceptance radius in pixels.
    pub radius: f64,
    pub fp_levels: Vec<f64>,
    pub n_boot: usize,
    pub bootstrap_seed: u64,
}

impl Default for FrocConfig {
    fn default() -> Self {
        Self {
            radius: 25.0,
            fp_levels: vec![1.0, 2.0],
            n_boot: 2000,
            bootstrap_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
                toml::from_str(&text).map_err(|e| format!("config {}: {e}", p.display()))
            }
        }
    }

    /// Smoke profile: 32 phantoms at 64x64, 5 epochs, otherwise the standard
    /// defaults with a compact model and scale-adjusted augmentation.
    pub fn apply_smoke_profile(&mut self) {
        self.phantom.size = 64;
        self.dataset.n = 32;
        self.generator.base_channels = 16;
        self.discriminator.base_channels = 16;
        self.training.epochs = 5;
        self.training.checkpoint_every = 0;
        self.training.tx_range = scaled_translation(64);
        self.training.rot_range = 15.0;
        self.training.aug_multiplicity = 4;
        self.generator.norm = NormKind::Instance;
        self.discriminator.norm = NormKind::Instance;
    }

    /// Phantom-scale profile used for the longer quality run: 200 phantoms
    /// at 128x128, 50 epochs.
    pub fn apply_phantom128_profile(&mut self) {
        self.phantom.size = 128;
        self.dataset.n = 200;
        self.generator.base_channels = 12;
        self.discriminator.base_channels = 12;
        self.training.epochs = 50;
        self.training.checkpoint_every = 25;
        self.training.tx_range = scaled_translation(128);
        self.training.rot_range = 15.0;
        self.generator.norm = NormKind::Instance;
        self.discriminator.norm = NormKind::Instance;
    }
}

/// Translation range scaled from the clinical-resolution reference (80 px at
/// about 2022 px) down to phantom-sized images.
pub fn scaled_translation(size: usize) -> f64 {
    (80.0 * size as f64 / 2022.0).round().max(1.0)
}

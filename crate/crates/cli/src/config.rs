//! Run configuration: one TOML file capturing every knob of a pipeline
//! run, with CLI flag overrides. All randomness derives from the single
//! master seed through named substreams, so a config file fully
//! reproduces a run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use plepi_core::detect::HqParams;
use plepi_core::fusion::FusionConfig;
use plepi_core::model::AugmentConfig;
use plepi_core::rng;
use plepi_core::sim::{Abundance, SimConfig, SpotsPerCell, IDENTITY_CROSSTALK};
use plepi_core::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Lq,
    Hq,
}

impl std::fmt::Display for Quality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Quality::Lq => write!(f, "lq"),
            Quality::Hq => write!(f, "hq"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub n_fields: usize,
    pub n_cycles: usize,
    pub tile_width: usize,
    pub tile_height: usize,
    pub cells_per_field: usize,
    pub spots_per_cell: SpotsPerCell,
    pub min_spot_separation: f64,
    pub spot_sigma: f64,
    pub crosstalk: [[f64; 4]; 4],
    pub phasing: f64,
    pub channel_gain: [f64; 4],
    pub background_level: f64,
    pub sensor_noise_sd: f64,
    pub jitter_sd: f64,
    pub abundance: Abundance,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            n_fields: 8,
            n_cycles: 9,
            tile_width: 256,
            tile_height: 256,
            cells_per_field: 48,
            spots_per_cell: SpotsPerCell { min: 1, mean: 3.0 },
            min_spot_separation: 6.0,
            spot_sigma: 1.5,
            crosstalk: IDENTITY_CROSSTALK,
            phasing: 0.0,
            channel_gain: [1.0; 4],
            background_level: 0.0,
            sensor_noise_sd: 0.0,
            jitter_sd: 0.0,
            abundance: Abundance::Uniform,
        }
    }
}

impl SimSection {
    pub fn to_sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            n_fields: self.n_fields,
            n_cycles: self.n_cycles,
            tile_width: self.tile_width,
            tile_height: self.tile_height,
            n_channels: 4,
            cells_per_field: self.cells_per_field,
            spots_per_cell: self.spots_per_cell,
            min_spot_separation: self.min_spot_separation,
            spot_sigma: self.spot_sigma,
            crosstalk: self.crosstalk,
            phasing: self.phasing,
            channel_gain: self.channel_gain,
            background_level: self.background_level,
            sensor_noise_sd: self.sensor_noise_sd,
            jitter_sd: self.jitter_sd,
            abundance: self.abundance,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            labeled: 2,
            unlabeled: 4,
            test: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub unlabeled_weight: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub burn_in_epochs: usize,
    pub self_training_rounds: usize,
    pub channel_jitter: f64,
    pub feature_noise_sd: f64,
    /// Write a per-round pseudo-label dump CSV during training.
    pub dump_pseudo_labels: bool,
    /// Track per-round accuracy against the unlabeled fields' ground
    /// truth (monitoring only; the test split stays untouched).
    pub monitor_accuracy: bool,
    /// Training-time fusion overrides (pseudo-labeling). Decode always
    /// uses the top-level `[fusion]` section, so ablation variants change
    /// the learning strategy without changing the inference path.
    pub fusion: Option<FusionSection>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 0.1,
            unlabeled_weight: 1.0,
            ema_decay: 0.99,
            batch_size: 256,
            burn_in_epochs: 30,
            self_training_rounds: 5,
            channel_jitter: 0.2,
            feature_noise_sd: 0.02,
            dump_pseudo_labels: true,
            monitor_accuracy: true,
            fusion: None,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64, rounds_override: Option<usize>) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            unlabeled_weight: self.unlabeled_weight,
            ema_decay: self.ema_decay,
            batch_size: self.batch_size,
            burn_in_epochs: self.burn_in_epochs,
            self_training_rounds: rounds_override.unwrap_or(self.self_training_rounds),
            augment: AugmentConfig {
                channel_jitter: self.channel_jitter,
                feature_noise_sd: self.feature_noise_sd,
            },
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    /// Defaults depend on annotation quality when omitted: 0.9 after an
    /// HQ burn-in, 1.0 (nothing trusted as confident) after LQ.
    pub confident_threshold: Option<f64>,
    /// Quality-dependent default when omitted: 0.5 for HQ, 0.3 for LQ.
    pub mediocre_threshold: Option<f64>,
    pub top_n: usize,
    /// Median-objectness foreground threshold; 0 = derive from the LQ
    /// detection threshold.
    pub objectness_threshold: f64,
    pub match_radius: f64,
    pub use_codebook: bool,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            confident_threshold: None,
            mediocre_threshold: None,
            top_n: 4,
            objectness_threshold: 0.0,
            match_radius: 2.0,
            use_codebook: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    /// LQ local-maxima threshold; 0 = background + 5 * sensor noise.
    pub lq_threshold: f64,
    pub hq_threshold: f64,
    pub hq_percentile: f64,
    /// Minimum spot score for cell assignment (0 = no cutoff).
    pub cell_score_cutoff: f64,
}

impl Default for AnnotateSection {
    fn default() -> Self {
        AnnotateSection {
            lq_threshold: 0.0,
            hq_threshold: 0.25,
            hq_percentile: 99.9,
            cell_score_cutoff: 0.0,
        }
    }
}

/// The full run configuration (one TOML document).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub codebook: PathBuf,
    pub out_dir: PathBuf,
    pub quality: Quality,
    /// Extra letter-flip rate injected into the labeled set.
    pub flip_rate: f64,
    pub threads: usize,
    pub sim: SimSection,
    pub splits: SplitSection,
    pub train: TrainSection,
    pub fusion: FusionSection,
    pub annotate: AnnotateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            codebook: PathBuf::from("codebook.csv"),
            out_dir: PathBuf::from("run"),
            quality: Quality::Lq,
            flip_rate: 0.0,
            threads: 1,
            sim: SimSection::default(),
            splits: SplitSection::default(),
            train: TrainSection::default(),
            fusion: FusionSection::default(),
            annotate: AnnotateSection::default(),
        }
    }
}

/// Flag overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub rounds: Option<usize>,
    pub quality: Option<Quality>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("bad config {}: {e}", path.display())))?;
        // Paths in the config are relative to the config file.
        if let Some(dir) = path.parent() {
            if cfg.codebook.is_relative() {
                cfg.codebook = dir.join(&cfg.codebook);
            }
            if cfg.out_dir.is_relative() {
                cfg.out_dir = dir.join(&cfg.out_dir);
            }
        }
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(threads) = overrides.threads {
            self.threads = threads;
        }
        if let Some(rounds) = overrides.rounds {
            self.train.self_training_rounds = rounds;
        }
        if let Some(quality) = overrides.quality {
            self.quality = quality;
        }
        if let Some(out) = &overrides.out {
            self.out_dir = out.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !self.codebook.exists() {
            return Err(CliError::config(format!(
                "codebook file does not exist: {}",
                self.codebook.display()
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return Err(CliError::config("flip_rate must lie in [0, 1]".into()));
        }
        if self.threads == 0 {
            return Err(CliError::config("threads must be at least 1".into()));
        }
        let need = self.splits.labeled + self.splits.unlabeled + self.splits.test;
        if self.splits.labeled == 0 || self.splits.test == 0 {
            return Err(CliError::config(
                "splits need at least one labeled and one test field".into(),
            ));
        }
        if need > self.sim.n_fields {
            return Err(CliError::config(format!(
                "splits use {need} fields but the well has only {}",
                self.sim.n_fields
            )));
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        // Named substreams inside the simulator separate its stages from
        // the training and corruption streams that share the seed.
        self.sim.to_sim_config(self.seed)
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.to_train_config(self.seed, None)
    }

    /// Decode-time fusion config with quality-dependent threshold
    /// defaults.
    pub fn fusion_config(&self) -> FusionConfig {
        self.resolve_fusion(&self.fusion)
    }

    /// Training-time (pseudo-labeling) fusion config: the decode config
    /// unless `[train.fusion]` overrides it.
    pub fn training_fusion_config(&self) -> FusionConfig {
        match &self.train.fusion {
            Some(section) => self.resolve_fusion(section),
            None => self.fusion_config(),
        }
    }

    fn resolve_fusion(&self, section: &FusionSection) -> FusionConfig {
        let (default_tc, default_tm) = match self.quality {
            Quality::Hq => (0.9, 0.5),
            // After an LQ burn-in the teacher's confidence is noise-fit:
            // fuse privileged information into everything above the floor.
            Quality::Lq => (1.0, 0.3),
        };
        FusionConfig {
            confident_threshold: section.confident_threshold.unwrap_or(default_tc),
            mediocre_threshold: section.mediocre_threshold.unwrap_or(default_tm),
            top_n: section.top_n,
            objectness_threshold: if section.objectness_threshold > 0.0 {
                section.objectness_threshold
            } else {
                self.lq_threshold()
            },
            match_radius: section.match_radius,
            use_codebook: section.use_codebook,
        }
    }

    pub fn lq_threshold(&self) -> f64 {
        if self.annotate.lq_threshold > 0.0 {
            self.annotate.lq_threshold
        } else {
            plepi_core::detect::default_lq_threshold(
                self.sim.background_level,
                self.sim.sensor_noise_sd,
            )
        }
    }

    pub fn hq_params(&self) -> HqParams {
        HqParams {
            threshold: self.annotate.hq_threshold,
            background_level: self.sim.background_level,
            percentile: self.annotate.hq_percentile,
        }
    }

    /// Background level detections were measured against, by quality:
    /// LQ stores raw readouts, HQ subtracts background before
    /// normalization.
    pub fn detection_background(&self) -> f64 {
        match self.quality {
            Quality::Lq => self.sim.background_level,
            Quality::Hq => 0.0,
        }
    }

    /// Seeded disjoint field split: shuffle all field indices with the
    /// "split" substream and deal them out in order.
    pub fn field_splits(&self) -> FieldSplits {
        let mut fields: Vec<usize> = (0..self.sim.n_fields).collect();
        let mut rng = rng::stream(self.seed, "split", 0);
        plepi_core::model::shuffle(&mut fields, &mut rng);
        let labeled: Vec<usize> = fields[..self.splits.labeled].to_vec();
        let unlabeled: Vec<usize> =
            fields[self.splits.labeled..self.splits.labeled + self.splits.unlabeled].to_vec();
        let test: Vec<usize> = fields[self.splits.labeled + self.splits.unlabeled
            ..self.splits.labeled + self.splits.unlabeled + self.splits.test]
            .to_vec();
        FieldSplits {
            labeled,
            unlabeled,
            test,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSplits {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
}

impl FieldSplits {
    pub fn assert_disjoint(&self) -> Result<(), CliError> {
        let mut seen = BTreeSet::new();
        for f in self
            .labeled
            .iter()
            .chain(&self.unlabeled)
            .chain(&self.test)
        {
            if !seen.insert(*f) {
                return Err(CliError::config(format!(
                    "field {f} appears in more than one split"
                )));
            }
        }
        Ok(())
    }
}

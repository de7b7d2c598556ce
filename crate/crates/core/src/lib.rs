//! Core algorithms for codebook-constrained barcode calling on
//! in-situ-sequencing style data.
//!
//! The crate is organized as a pipeline of pure, deterministic stages:
//!
//! 1. [`codebook`] — barcode alphabet, codebook parsing/validation,
//!    Hamming-space utilities, trick-barcode design.
//! 2. [`sim`] — synthetic well generation with exact ground truth and
//!    per-cycle multi-channel tile rendering under a controllable noise
//!    model (crosstalk, phasing, channel gain, sensor noise, jitter).
//! 3. [`detect`] — noisy point-level annotation extraction from tiles at
//!    two quality levels, plus controlled label corruption.
//! 4. [`model`] — the per-spot base-caller (multinomial logistic
//!    regression), its losses and gradients, SGD, EMA teacher updates and
//!    feature augmentations.
//! 5. [`track`] / [`fusion`] — cross-cycle spot tracks built from
//!    location consensus, confidence partitioning, and codebook-evidence
//!    pseudo-label fusion.
//! 6. [`train`] — the teacher-student self-training loop (burn-in plus
//!    pseudo-labeled rounds).
//! 7. [`metrics`] — cell calling and the evaluation metric suite
//!    (abundance R², cell recovery, PPV/FDR splits).
//!
//! All randomness flows through named, seeded substreams ([`rng`]) so that
//! serial and parallel execution produce bit-identical results. The crate
//! is `no_std` + `alloc`; all IO and file formats live in the companion
//! CLI crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod codebook;
pub mod detect;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sim;
pub mod track;
pub mod train;

pub use codebook::{Base, Barcode, Codebook, EntryKind};
pub use detect::Detection;
pub use error::{ConfigError, DataError, NumericalError};
pub use fusion::{ConfidencePartition, CycleLabel, FusionConfig, PseudoBarcode, PseudoLabelSource};
pub use model::{BaseCallerModel, SpotFeatures, TrainConfig};
pub use sim::{GroundTruthWell, SimConfig, Tile};
pub use track::SpotTrack;
pub use train::{FieldBatch, SelfTrainOutcome, SerialExecutor, TaskExecutor};

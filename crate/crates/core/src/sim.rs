//! Synthetic well generation with exact ground truth, and per-cycle
//! multi-channel tile rendering.
//!
//! The generator stands in for a real benchmark plate: it owns the true
//! cell partition, spot positions, barcode identities, and abundance
//! table, so every downstream stage can be scored exactly. The renderer
//! reproduces the dominant imaging artifacts: channel crosstalk,
//! cycle-to-cycle phasing carryover, per-channel gain imbalance, constant
//! background, sub-pixel position jitter, and per-pixel sensor noise.

mod render;
mod well;

pub use render::{render_tile, render_tiles, Tile};
pub use well::{
    abundance_of_fields, export_reference_abundance, parse_reference_abundance, simulate_well,
    CellRecord, GroundTruthWell, SpotRecord,
};

use alloc::string::String;
use alloc::vec::Vec;

use crate::codebook::Base;
use crate::error::ConfigError;

/// Spot count per cell: `min` plus a Poisson draw with mean
/// `mean - min` (clamped at zero).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpotsPerCell {
    pub min: u32,
    pub mean: f64,
}

/// Barcode abundance model over the targeted codebook entries.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Abundance {
    /// Every targeted barcode equally likely.
    Uniform,
    /// Probabilities drawn once per well from a symmetric Dirichlet.
    Dirichlet { concentration: f64 },
}

/// Full description of a synthetic well.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub n_fields: usize,
    pub n_cycles: usize,
    pub tile_width: usize,
    pub tile_height: usize,
    /// Color channel count; the alphabet fixes this at 4.
    pub n_channels: usize,
    pub cells_per_field: usize,
    pub spots_per_cell: SpotsPerCell,
    /// Minimum center-to-center distance between spots of one field, in
    /// pixels. Keeps blobs resolvable by the local-maxima detectors.
    pub min_spot_separation: f64,
    /// Gaussian blob sigma in pixels (peak value 1 at the center).
    pub spot_sigma: f64,
    /// `crosstalk[s][c]` is the fraction of letter-`s` signal observed in
    /// channel `c`. Rows roughly sum to one; diagonals must be positive.
    pub crosstalk: [[f64; 4]; 4],
    /// Fraction of the previous cycle's signal carried into the current
    /// cycle. Cycle 0 has no predecessor and carries nothing over.
    pub phasing: f64,
    pub channel_gain: [f64; 4],
    pub background_level: f64,
    pub sensor_noise_sd: f64,
    /// Per-cycle isotropic Gaussian jitter of each spot's position.
    pub jitter_sd: f64,
    pub abundance: Abundance,
    pub seed: u64,
}

pub const IDENTITY_CROSSTALK: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

impl SimConfig {
    /// A small, moderately noisy well; tests and example configs override
    /// the fields they care about.
    pub fn new(n_fields: usize, n_cycles: usize) -> SimConfig {
        SimConfig {
            n_fields,
            n_cycles,
            tile_width: 128,
            tile_height: 128,
            n_channels: Base::COUNT,
            cells_per_field: 24,
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
            seed: 0,
        }
    }

    /// Margin kept between spot centers and tile edges so blobs stay
    /// mostly inside the tile.
    pub fn edge_margin(&self) -> f64 {
        libm::ceil(3.0 * self.spot_sigma) + 1.0
    }

    pub fn validate(&self, codebook_cycles: usize) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError(msg));
        if self.n_channels != Base::COUNT {
            return fail(alloc::format!(
                "n_channels must be {}, got {}",
                Base::COUNT,
                self.n_channels
            ));
        }
        if self.n_cycles != codebook_cycles {
            return fail(alloc::format!(
                "n_cycles {} does not match codebook length {}",
                self.n_cycles,
                codebook_cycles
            ));
        }
        if self.n_fields == 0 || self.n_cycles == 0 {
            return fail("n_fields and n_cycles must be positive".into());
        }
        if self.tile_width < 8 || self.tile_height < 8 {
            return fail("tile dimensions must be at least 8 px".into());
        }
        if self.cells_per_field == 0 {
            return fail("cells_per_field must be positive".into());
        }
        if !(self.phasing >= 0.0 && self.phasing < 1.0) {
            return fail("phasing must lie in [0, 1)".into());
        }
        for v in [
            self.spot_sigma,
            self.min_spot_separation,
            self.background_level,
            self.sensor_noise_sd,
            self.jitter_sd,
        ] {
            if !(v >= 0.0) {
                return fail("noise scales and geometry must be non-negative".into());
            }
        }
        if self.spot_sigma <= 0.0 {
            return fail("spot_sigma must be positive".into());
        }
        for (s, row) in self.crosstalk.iter().enumerate() {
            for &v in row {
                if !(v >= 0.0) {
                    return fail("crosstalk entries must be non-negative".into());
                }
            }
            if row[s] <= 0.0 {
                return fail("crosstalk diagonal must be strictly positive".into());
            }
        }
        for &g in &self.channel_gain {
            if !(g > 0.0) {
                return fail("channel gains must be positive".into());
            }
        }
        if self.spots_per_cell.mean < self.spots_per_cell.min as f64 {
            return fail("spots_per_cell.mean must be at least its min".into());
        }
        let usable_w = self.tile_width as f64 - 2.0 * self.edge_margin();
        let usable_h = self.tile_height as f64 - 2.0 * self.edge_margin();
        if usable_w < 4.0 || usable_h < 4.0 {
            return fail("tile too small for the configured spot size".into());
        }
        // Dart-throwing placement needs headroom; refuse configs whose
        // expected exclusion area exceeds half the usable area.
        let expected_spots = self.cells_per_field as f64 * self.spots_per_cell.mean;
        let exclusion = core::f64::consts::PI
            * (self.min_spot_separation / 2.0)
            * (self.min_spot_separation / 2.0);
        if expected_spots * exclusion.max(1.0) > 0.5 * usable_w * usable_h {
            return fail(alloc::format!(
                "cells_per_field {} with ~{:.1} spots each cannot fit a {}x{} tile at separation {}",
                self.cells_per_field,
                self.spots_per_cell.mean,
                self.tile_width,
                self.tile_height,
                self.min_spot_separation
            ));
        }
        if self.cells_per_field as f64 > usable_w * usable_h / 9.0 {
            return fail("cells_per_field too large for the tile size".into());
        }
        Ok(())
    }

    /// Per-channel observed signal for a spot whose current-cycle letter
    /// is `letter` and whose previous-cycle letter is `prev` (None at
    /// cycle 0): gain ⊙ (crosstalkᵀ · ((1−phasing)·onehot(letter) +
    /// phasing·onehot(prev))).
    pub fn spot_signal(&self, letter: Base, prev: Option<Base>) -> [f64; 4] {
        let mut mix = [0.0f64; 4];
        mix[letter.index()] += 1.0 - self.phasing;
        if let Some(p) = prev {
            mix[p.index()] += self.phasing;
        }
        let mut out = [0.0f64; 4];
        for (s, &m) in mix.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (c, o) in out.iter_mut().enumerate() {
                *o += m * self.crosstalk[s][c];
            }
        }
        for (c, o) in out.iter_mut().enumerate() {
            *o *= self.channel_gain[c];
        }
        out
    }
}

/// All tile coordinates of a well in render order (field-major).
pub fn tile_order(n_fields: usize, n_cycles: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(n_fields * n_cycles);
    for f in 0..n_fields {
        for r in 0..n_cycles {
            order.push((f, r));
        }
    }
    order
}

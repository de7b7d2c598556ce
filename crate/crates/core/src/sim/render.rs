//! Tile rendering: Gaussian blobs under the crosstalk/phasing/gain noise
//! model, plus background and per-pixel sensor noise.
//!
//! Rendering is pure per `(field, cycle)` pair; each tile draws from its
//! own named substream, so rendering tiles in parallel or in any order
//! produces bit-identical pixels.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::codebook::Base;
use crate::rng;

use super::well::GroundTruthWell;
use super::SimConfig;

/// One rendered image: `width x height` pixels with `Base::COUNT`
/// channels, stored row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub field: usize,
    pub cycle: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Tile {
    pub fn filled(field: usize, cycle: usize, width: usize, height: usize, value: f32) -> Tile {
        Tile {
            field,
            cycle,
            width,
            height,
            data: vec![value; width * height * Base::COUNT],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, channel: usize) -> usize {
        (y * self.width + x) * Base::COUNT + channel
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, channel: usize) -> f32 {
        self.data[self.index(x, y, channel)]
    }

    /// The four channel intensities at one pixel.
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 4] {
        let base = (y * self.width + x) * Base::COUNT;
        [
            self.data[base],
            self.data[base + 1],
            self.data[base + 2],
            self.data[base + 3],
        ]
    }

    /// Maximum over channels at one pixel.
    pub fn channel_max(&self, x: usize, y: usize) -> f32 {
        let p = self.pixel(x, y);
        p[0].max(p[1]).max(p[2]).max(p[3])
    }
}

/// Render one `(field, cycle)` tile of the well.
pub fn render_tile(well: &GroundTruthWell, cfg: &SimConfig, field: usize, cycle: usize) -> Tile {
    let mut tile = Tile::filled(
        field,
        cycle,
        cfg.tile_width,
        cfg.tile_height,
        cfg.background_level as f32,
    );
    let mut tile_rng = rng::stream(
        cfg.seed,
        "sim.render",
        (field * cfg.n_cycles + cycle) as u64,
    );

    let radius = libm::ceil(4.0 * cfg.spot_sigma) as i64;
    let inv_two_sigma2 = 1.0 / (2.0 * cfg.spot_sigma * cfg.spot_sigma);

    for spot in well.spots_in_field(field) {
        let (jx, jy) = if cfg.jitter_sd > 0.0 {
            let a: f64 = tile_rng.sample(StandardNormal);
            let b: f64 = tile_rng.sample(StandardNormal);
            (a * cfg.jitter_sd, b * cfg.jitter_sd)
        } else {
            (0.0, 0.0)
        };
        let (sx, sy) = (spot.x + jx, spot.y + jy);
        let letter = spot.barcode.base_at(cycle);
        let prev = if cycle > 0 {
            Some(spot.barcode.base_at(cycle - 1))
        } else {
            None
        };
        let signal = cfg.spot_signal(letter, prev);

        // Separable Gaussian stamp around the (sub-pixel) center.
        let x0 = ((libm::floor(sx) as i64) - radius).max(0) as usize;
        let x1 = ((libm::ceil(sx) as i64) + radius).min(cfg.tile_width as i64 - 1) as usize;
        let y0 = ((libm::floor(sy) as i64) - radius).max(0) as usize;
        let y1 = ((libm::ceil(sy) as i64) + radius).min(cfg.tile_height as i64 - 1) as usize;
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let wx: Vec<f64> = (x0..=x1)
            .map(|px| {
                let d = px as f64 - sx;
                libm::exp(-d * d * inv_two_sigma2)
            })
            .collect();
        let wy: Vec<f64> = (y0..=y1)
            .map(|py| {
                let d = py as f64 - sy;
                libm::exp(-d * d * inv_two_sigma2)
            })
            .collect();
        for (iy, py) in (y0..=y1).enumerate() {
            for (ix, px) in (x0..=x1).enumerate() {
                let weight = wx[ix] * wy[iy];
                let base = tile.index(px, py, 0);
                for (c, &s) in signal.iter().enumerate() {
                    tile.data[base + c] += (s * weight) as f32;
                }
            }
        }
    }

    if cfg.sensor_noise_sd > 0.0 {
        for v in tile.data.iter_mut() {
            let noise: f64 = tile_rng.sample(StandardNormal);
            *v = (*v as f64 + noise * cfg.sensor_noise_sd).max(0.0) as f32;
        }
    }
    tile
}

/// Render every tile of the well, field-major.
pub fn render_tiles(well: &GroundTruthWell, cfg: &SimConfig) -> Vec<Tile> {
    super::tile_order(cfg.n_fields, cfg.n_cycles)
        .into_iter()
        .map(|(f, r)| render_tile(well, cfg, f, r))
        .collect()
}

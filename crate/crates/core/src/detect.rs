//! Noisy point-level annotation extraction from rendered tiles.
//!
//! Two quality levels mirror the two realistic label sources: a cheap
//! single-tile thresholding detector (low quality) and a multi-step
//! field-level pipeline with per-channel normalization and cross-cycle
//! localization (higher quality, still noisy). [`corrupt_labels`] injects
//! additional controlled letter noise for ablations.

use alloc::vec::Vec;

use rand::Rng;

use crate::codebook::Base;
use crate::error::DataError;
use crate::rng;
use crate::sim::Tile;

/// One point annotation: a location in one cycle image with its channel
/// readout, an objectness score, and a letter label.
///
/// Detector outputs always satisfy `letter == argmax(intensity)`;
/// [`corrupt_labels`] deliberately breaks that relation to create noisy
/// supervision.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Detection {
    pub field: usize,
    pub cycle: usize,
    pub x: f64,
    pub y: f64,
    pub intensity: [f64; 4],
    pub objectness: f64,
    pub letter: Base,
}

pub fn argmax4(v: &[f64; 4]) -> Base {
    let mut best = 0;
    for c in 1..4 {
        if v[c] > v[best] {
            best = c;
        }
    }
    Base::from_index(best)
}

/// Local maxima of `values` (a `width x height` scalar image) strictly
/// above `threshold`, with plateau ties broken toward the smallest
/// `(y, x)` pixel.
fn local_maxima(values: &[f64], width: usize, height: usize, threshold: f64) -> Vec<(usize, usize)> {
    let mut maxima = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let v = values[y * width + x];
            if v <= threshold {
                continue;
            }
            let mut is_max = true;
            'scan: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let nv = values[ny as usize * width + nx as usize];
                    // Equal-valued neighbors yield to the smaller (y, x).
                    if nv > v || (nv == v && (ny as usize, nx as usize) < (y, x)) {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                maxima.push((x, y));
            }
        }
    }
    maxima
}

/// Cheap low-quality detector: local maxima of the raw channel-max
/// projection of a single tile. The intensity vector is the raw pixel
/// readout at the maximum, so channel gain imbalance and crosstalk bias
/// its letters.
pub fn detect_spots_lq(tile: &Tile, threshold: f64) -> Vec<Detection> {
    assert!(threshold > 0.0, "threshold must be positive");
    let (w, h) = (tile.width, tile.height);
    let mut proj = alloc::vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            proj[y * w + x] = tile.channel_max(x, y) as f64;
        }
    }
    local_maxima(&proj, w, h, threshold)
        .into_iter()
        .map(|(x, y)| {
            let p = tile.pixel(x, y);
            let intensity = [p[0] as f64, p[1] as f64, p[2] as f64, p[3] as f64];
            Detection {
                field: tile.field,
                cycle: tile.cycle,
                x: x as f64,
                y: y as f64,
                objectness: proj[y * w + x],
                letter: argmax4(&intensity),
                intensity,
            }
        })
        .collect()
}

/// Default LQ threshold: just above the background noise floor,
/// deliberately parameter-light and error-prone.
pub fn default_lq_threshold(background_level: f64, sensor_noise_sd: f64) -> f64 {
    (background_level + 5.0 * sensor_noise_sd).max(0.1)
}

/// Parameters of the higher-quality field-level detector.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HqParams {
    /// Detection threshold in normalized units (post per-channel scaling).
    pub threshold: f64,
    /// Constant background subtracted before normalization.
    pub background_level: f64,
    /// Percentile (in percent) scaled to 1 per channel per cycle.
    pub percentile: f64,
}

impl Default for HqParams {
    fn default() -> Self {
        HqParams {
            threshold: 0.25,
            background_level: 0.0,
            percentile: 99.9,
        }
    }
}

/// Higher-quality detector over all cycles of one field.
///
/// Steps: background subtraction, per-(cycle, channel) percentile
/// normalization, cross-cycle max projection to localize each spot once,
/// then per-cycle readout at the shared locations. Objectness is the
/// cross-cycle median of the projection value at the location, shared by
/// all cycles of the spot.
pub fn detect_spots_hq(tiles: &[&Tile], params: &HqParams) -> Result<Vec<Detection>, DataError> {
    assert!(!tiles.is_empty());
    let field = tiles[0].field;
    let n_cycles = tiles.len();
    let mut by_cycle: Vec<Option<&Tile>> = alloc::vec![None; n_cycles];
    for t in tiles {
        if t.cycle < n_cycles {
            by_cycle[t.cycle] = Some(t);
        }
    }
    for (r, slot) in by_cycle.iter().enumerate() {
        if slot.is_none() {
            return Err(DataError::IncompleteField {
                field,
                missing_cycle: r,
            });
        }
    }
    let (w, h) = (tiles[0].width, tiles[0].height);

    // Normalized planes, indexed [cycle][pixel * 4 + channel].
    let mut normalized: Vec<Vec<f64>> = Vec::with_capacity(n_cycles);
    for r in 0..n_cycles {
        let tile = by_cycle[r].unwrap();
        let mut plane = alloc::vec![0.0f64; w * h * 4];
        for c in 0..4 {
            let mut values: Vec<f64> = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    values.push((tile.at(x, y, c) as f64 - params.background_level).max(0.0));
                }
            }
            let mut sorted = values.clone();
            sorted.sort_unstable_by(|a, b| a.total_cmp(b));
            let rank = libm::ceil((params.percentile / 100.0) * sorted.len() as f64) as usize;
            let scale = sorted[rank.clamp(1, sorted.len()) - 1];
            let inv = if scale > 1e-9 { 1.0 / scale } else { 1.0 };
            for (i, v) in values.into_iter().enumerate() {
                plane[i * 4 + c] = v * inv;
            }
        }
        normalized.push(plane);
    }

    // Cross-cycle localization on the max projection.
    let mut proj = alloc::vec![0.0f64; w * h];
    let mut per_cycle_max: Vec<Vec<f64>> = alloc::vec![alloc::vec![0.0f64; w * h]; n_cycles];
    for (r, plane) in normalized.iter().enumerate() {
        for i in 0..w * h {
            let m = plane[i * 4]
                .max(plane[i * 4 + 1])
                .max(plane[i * 4 + 2])
                .max(plane[i * 4 + 3]);
            per_cycle_max[r][i] = m;
            if m > proj[i] {
                proj[i] = m;
            }
        }
    }

    let mut detections = Vec::new();
    for (x, y) in local_maxima(&proj, w, h, params.threshold) {
        let i = y * w + x;
        let mut stack: Vec<f64> = (0..n_cycles).map(|r| per_cycle_max[r][i]).collect();
        stack.sort_unstable_by(|a, b| a.total_cmp(b));
        let objectness = median_of_sorted(&stack);
        for (r, plane) in normalized.iter().enumerate() {
            let intensity = [
                plane[i * 4],
                plane[i * 4 + 1],
                plane[i * 4 + 2],
                plane[i * 4 + 3],
            ];
            detections.push(Detection {
                field,
                cycle: r,
                x: x as f64,
                y: y as f64,
                objectness,
                letter: argmax4(&intensity),
                intensity,
            });
        }
    }
    Ok(detections)
}

pub(crate) fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Replace each detection's letter with a uniformly random *different*
/// letter with probability `flip_rate`. Deterministic for a given seed;
/// positions and intensities are untouched.
pub fn corrupt_labels(dets: &[Detection], flip_rate: f64, seed: u64) -> Vec<Detection> {
    assert!((0.0..=1.0).contains(&flip_rate));
    let mut rng = rng::stream(seed, "corrupt", 0);
    dets.iter()
        .map(|d| {
            let mut out = d.clone();
            if flip_rate > 0.0 && rng.gen_range(0.0..1.0) < flip_rate {
                let shift = rng.gen_range(1..Base::COUNT);
                out.letter = Base::from_index((d.letter.index() + shift) % Base::COUNT);
            }
            out
        })
        .collect()
}

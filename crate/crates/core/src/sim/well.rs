//! Ground-truth well generation: seeded Voronoi cell partition, barcode
//! assignment from the abundance model, and separation-respecting spot
//! placement.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Dirichlet, Distribution, Poisson};

use crate::codebook::{Barcode, Codebook};
use crate::error::ConfigError;
use crate::rng;

use super::SimConfig;

/// One cell: a convex Voronoi region of its field.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellRecord {
    pub cell_id: usize,
    pub field: usize,
    pub centroid: (f64, f64),
    /// Counter-clockwise polygon vertices of the Voronoi region clipped
    /// to the tile rectangle.
    pub polygon: Vec<(f64, f64)>,
}

/// One planted spot with its true barcode.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpotRecord {
    pub spot_id: usize,
    pub cell_id: usize,
    pub field: usize,
    pub x: f64,
    pub y: f64,
    pub barcode: Barcode,
}

/// Exact ground truth for a synthetic well: the oracle every evaluation
/// stage scores against.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundTruthWell {
    pub n_fields: usize,
    pub n_cycles: usize,
    pub tile_width: usize,
    pub tile_height: usize,
    pub cells: Vec<CellRecord>,
    pub spots: Vec<SpotRecord>,
    pub true_abundance: BTreeMap<Barcode, u64>,
}

impl GroundTruthWell {
    pub fn spots_in_field(&self, field: usize) -> impl Iterator<Item = &SpotRecord> {
        self.spots.iter().filter(move |s| s.field == field)
    }

    pub fn cells_in_field(&self, field: usize) -> impl Iterator<Item = &CellRecord> {
        self.cells.iter().filter(move |c| c.field == field)
    }

    /// Index of the cell containing `(x, y)` in `field`: the nearest
    /// centroid, ties broken toward the lower cell id.
    pub fn cell_containing(&self, field: usize, x: f64, y: f64) -> Option<usize> {
        nearest_centroid(
            self.cells.iter().filter(|c| c.field == field),
            x,
            y,
        )
    }
}

fn nearest_centroid<'a>(
    cells: impl Iterator<Item = &'a CellRecord>,
    x: f64,
    y: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for c in cells {
        let dx = c.centroid.0 - x;
        let dy = c.centroid.1 - y;
        let d2 = dx * dx + dy * dy;
        match best {
            Some((_, bd)) if bd <= d2 => {}
            _ => best = Some((c.cell_id, d2)),
        }
    }
    best.map(|(id, _)| id)
}

/// Generate a ground-truth well. Deterministic for a given config.
///
/// Each field is partitioned into `cells_per_field` Voronoi cells around
/// seeded centroids; each cell receives one barcode identity drawn from
/// the abundance model, and every spot of the cell carries that barcode.
pub fn simulate_well(cfg: &SimConfig, cb: &Codebook) -> Result<GroundTruthWell, ConfigError> {
    cfg.validate(cb.n_cycles())?;
    let targeted: Vec<Barcode> = cb.targeted().collect();
    if targeted.is_empty() {
        return Err(ConfigError("codebook has no targeted entries".into()));
    }

    let probs = abundance_probs(cfg, targeted.len());

    let margin = cfg.edge_margin();
    let (w, h) = (cfg.tile_width as f64, cfg.tile_height as f64);
    let mut cells = Vec::new();
    let mut spots = Vec::new();
    let mut true_abundance: BTreeMap<Barcode, u64> = BTreeMap::new();

    for field in 0..cfg.n_fields {
        let mut field_rng = rng::stream(cfg.seed, "sim.field", field as u64);

        // Distinct centroids inside the margin-reduced rectangle.
        let mut centroids: Vec<(f64, f64)> = Vec::with_capacity(cfg.cells_per_field);
        while centroids.len() < cfg.cells_per_field {
            let p = (
                field_rng.gen_range(margin..w - margin),
                field_rng.gen_range(margin..h - margin),
            );
            if centroids.iter().all(|q| *q != p) {
                centroids.push(p);
            }
        }

        let first_cell_id = cells.len();
        for (i, &centroid) in centroids.iter().enumerate() {
            cells.push(CellRecord {
                cell_id: first_cell_id + i,
                field,
                centroid,
                polygon: voronoi_polygon(&centroids, i, w, h),
            });
        }

        // One barcode identity per cell, drawn up front together with the
        // spot counts.
        let cell_plan: Vec<(Barcode, u32)> = centroids
            .iter()
            .map(|_| {
                (
                    targeted[sample_index(&probs, &mut field_rng)],
                    draw_spot_count(&cfg.spots_per_cell, &mut field_rng),
                )
            })
            .collect();

        // Separation-respecting placement in two passes: every cell's
        // first spot lands before any cell's extras, so small cells are
        // not crowded out of their minimum count.
        let mut placed: Vec<(f64, f64)> = Vec::new();
        let min_sep2 = cfg.min_spot_separation * cfg.min_spot_separation;
        let place_attempts = |i: usize,
                              placed: &mut Vec<(f64, f64)>,
                              rng: &mut rand_chacha::ChaCha8Rng|
         -> Option<(f64, f64)> {
            let centroid = centroids[i];
            let ok = |p: (f64, f64), placed: &[(f64, f64)]| {
                p.0 >= margin
                    && p.0 <= w - margin
                    && p.1 >= margin
                    && p.1 <= h - margin
                    && nearest_point_index(&centroids, p) == i
                    && placed.iter().all(|q| dist2(*q, p) >= min_sep2)
            };
            for attempt in 0..512u32 {
                // Candidates concentrate toward the centroid as attempts
                // mount, so even tiny cells get hit.
                let shrink = 1.0 / (1.0 + attempt as f64 / 48.0);
                let raw = (
                    rng.gen_range(margin..w - margin),
                    rng.gen_range(margin..h - margin),
                );
                let candidate = (
                    centroid.0 + (raw.0 - centroid.0) * shrink,
                    centroid.1 + (raw.1 - centroid.1) * shrink,
                );
                if ok(candidate, placed) {
                    placed.push(candidate);
                    return Some(candidate);
                }
            }
            // Deterministic spiral around the centroid as a last resort.
            for radius_step in 0..24 {
                let radius = 0.25 * (radius_step + 1) as f64;
                for angle_step in 0..16 {
                    let angle = core::f64::consts::TAU * angle_step as f64 / 16.0;
                    let candidate = (
                        centroid.0 + radius * libm::cos(angle),
                        centroid.1 + radius * libm::sin(angle),
                    );
                    if ok(candidate, placed) {
                        placed.push(candidate);
                        return Some(candidate);
                    }
                }
            }
            None
        };

        for pass in 0..2 {
            for (i, &(barcode, n_spots)) in cell_plan.iter().enumerate() {
                let pass_spots = if pass == 0 {
                    n_spots.min(1)
                } else {
                    n_spots.saturating_sub(1)
                };
                for _ in 0..pass_spots {
                    let Some((x, y)) = place_attempts(i, &mut placed, &mut field_rng) else {
                        continue;
                    };
                    spots.push(SpotRecord {
                        spot_id: 0, // assigned after the loop
                        cell_id: first_cell_id + i,
                        field,
                        x,
                        y,
                        barcode,
                    });
                    *true_abundance.entry(barcode).or_insert(0) += 1;
                }
            }
        }
        // Keep downstream iteration in a stable raster-like order.
        let field_start = spots
            .iter()
            .position(|s| s.field == field)
            .unwrap_or(spots.len());
        spots[field_start..].sort_by(|a, b| {
            (a.y, a.x)
                .partial_cmp(&(b.y, b.x))
                .unwrap_or(core::cmp::Ordering::Equal)
        });
    }

    for (id, s) in spots.iter_mut().enumerate() {
        s.spot_id = id;
    }

    Ok(GroundTruthWell {
        n_fields: cfg.n_fields,
        n_cycles: cfg.n_cycles,
        tile_width: cfg.tile_width,
        tile_height: cfg.tile_height,
        cells,
        spots,
        true_abundance,
    })
}

fn abundance_probs(cfg: &SimConfig, n: usize) -> Vec<f64> {
    match cfg.abundance {
        super::Abundance::Uniform => alloc::vec![1.0 / n as f64; n],
        super::Abundance::Dirichlet { concentration } => {
            let mut rng = rng::stream(cfg.seed, "sim.abundance", 0);
            if n == 1 {
                return alloc::vec![1.0];
            }
            let dir = Dirichlet::new_with_size(concentration.max(1e-3), n)
                .expect("valid Dirichlet parameters");
            dir.sample(&mut rng)
        }
    }
}

fn draw_spot_count<R: Rng>(spec: &super::SpotsPerCell, rng: &mut R) -> u32 {
    let extra_mean = (spec.mean - spec.min as f64).max(0.0);
    let extra = if extra_mean > 0.0 {
        Poisson::new(extra_mean).expect("positive mean").sample(rng) as u32
    } else {
        0
    };
    spec.min + extra
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

fn nearest_point_index(points: &[(f64, f64)], p: (f64, f64)) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &q) in points.iter().enumerate() {
        let d = dist2(p, q);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Voronoi region of `centroids[i]` clipped to the `[0,w]x[0,h]`
/// rectangle, by Sutherland-Hodgman clipping against each neighbor's
/// bisector half-plane.
fn voronoi_polygon(centroids: &[(f64, f64)], i: usize, w: f64, h: f64) -> Vec<(f64, f64)> {
    let mut poly = alloc::vec![(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let (cx, cy) = centroids[i];
    for (j, &(ox, oy)) in centroids.iter().enumerate() {
        if j == i || poly.is_empty() {
            continue;
        }
        // Keep the side of the bisector closer to centroid i:
        // n·p <= n·m with n = other - self, m = midpoint.
        let nx = ox - cx;
        let ny = oy - cy;
        let mx = (ox + cx) / 2.0;
        let my = (oy + cy) / 2.0;
        let bound = nx * mx + ny * my;
        let inside = |p: (f64, f64)| nx * p.0 + ny * p.1 <= bound;

        let mut clipped = Vec::with_capacity(poly.len() + 1);
        for k in 0..poly.len() {
            let cur = poly[k];
            let next = poly[(k + 1) % poly.len()];
            let cur_in = inside(cur);
            let next_in = inside(next);
            if cur_in {
                clipped.push(cur);
            }
            if cur_in != next_in {
                let denom = nx * (next.0 - cur.0) + ny * (next.1 - cur.1);
                if denom.abs() > 1e-12 {
                    let t = (bound - nx * cur.0 - ny * cur.1) / denom;
                    clipped.push((
                        cur.0 + t * (next.0 - cur.0),
                        cur.1 + t * (next.1 - cur.1),
                    ));
                }
            }
        }
        poly = clipped;
    }
    poly
}

/// Reference abundance table as `barcode,count` CSV (sorted by barcode
/// for a canonical byte-stable output).
pub fn export_reference_abundance(well: &GroundTruthWell) -> String {
    let mut out = String::from("barcode,count\n");
    for (bc, count) in &well.true_abundance {
        out.push_str(&alloc::format!("{bc},{count}\n"));
    }
    out
}

/// Parse the `barcode,count` CSV produced by
/// [`export_reference_abundance`].
pub fn parse_reference_abundance(text: &str) -> Result<BTreeMap<Barcode, u64>, ConfigError> {
    let mut table = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (lineno == 0 && line.eq_ignore_ascii_case("barcode,count")) {
            continue;
        }
        let (bc, count) = line
            .split_once(',')
            .ok_or_else(|| ConfigError(alloc::format!("abundance line {} malformed", lineno + 1)))?;
        let barcode = Barcode::parse(bc.trim())
            .map_err(|e| ConfigError(alloc::format!("abundance line {}: {e}", lineno + 1)))?;
        let count: u64 = count
            .trim()
            .parse()
            .map_err(|_| ConfigError(alloc::format!("abundance line {}: bad count", lineno + 1)))?;
        table.insert(barcode, count);
    }
    Ok(table)
}

/// True abundance restricted to a subset of fields.
pub fn abundance_of_fields(well: &GroundTruthWell, fields: &[usize]) -> BTreeMap<Barcode, u64> {
    let mut table = BTreeMap::new();
    for s in &well.spots {
        if fields.contains(&s.field) {
            *table.entry(s.barcode).or_insert(0) += 1;
        }
    }
    table
}

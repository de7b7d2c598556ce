//! Cross-cycle spot tracks: the location-consensus grouping that turns
//! per-cycle detections into barcode-readout units.
//!
//! Objects at one physical location appear in every cycle of a field, so
//! detections are greedily matched across cycles by proximity to the
//! running track centroid. A track is foreground or background as a
//! whole — the all-or-none location evidence — decided by the median of
//! its member objectness scores.

use alloc::vec::Vec;

use crate::detect::{median_of_sorted, Detection};

/// One cycle slot of a track. Cycles with no matched detection carry an
/// intensity readout interpolated from the neighboring member cycles and
/// are flagged; flagged slots are never treated as confident downstream.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CycleSlot {
    pub intensity: [f64; 4],
    pub objectness: f64,
    pub interpolated: bool,
}

/// A candidate barcode location: exactly `n_cycles` slots plus a single
/// foreground decision shared by all of them.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpotTrack {
    pub field: usize,
    /// Consensus position: mean of the member detections.
    pub x: f64,
    pub y: f64,
    pub slots: Vec<CycleSlot>,
    /// Median of member objectness scores.
    pub objectness: f64,
    pub foreground: bool,
}

impl SpotTrack {
    pub fn n_cycles(&self) -> usize {
        self.slots.len()
    }

    pub fn n_members(&self) -> usize {
        self.slots.iter().filter(|s| !s.interpolated).count()
    }

    pub fn has_interpolated_slots(&self) -> bool {
        self.slots.iter().any(|s| s.interpolated)
    }
}

struct OpenTrack {
    sum_x: f64,
    sum_y: f64,
    members: Vec<Option<(usize, [f64; 4], f64)>>, // per cycle: (det index, intensity, objectness)
    n: usize,
}

impl OpenTrack {
    fn centroid(&self) -> (f64, f64) {
        (self.sum_x / self.n as f64, self.sum_y / self.n as f64)
    }
}

/// Group one field's detections (all cycles) into spot tracks.
///
/// Cycles are processed in order; each cycle's detections are matched to
/// open tracks by ascending distance to the running centroid (one
/// detection per track per cycle, within `radius`), and leftovers open
/// new tracks. Foreground is decided once per track: median member
/// objectness `>= objectness_threshold`.
pub fn build_tracks(
    dets: &[Detection],
    n_cycles: usize,
    radius: f64,
    objectness_threshold: f64,
) -> Vec<SpotTrack> {
    assert!(n_cycles > 0);
    let field = dets.first().map(|d| d.field).unwrap_or(0);
    debug_assert!(dets.iter().all(|d| d.field == field));

    // Per-cycle index lists in deterministic raster order.
    let mut by_cycle: Vec<Vec<usize>> = alloc::vec![Vec::new(); n_cycles];
    for (i, d) in dets.iter().enumerate() {
        debug_assert!(d.cycle < n_cycles);
        by_cycle[d.cycle].push(i);
    }
    for list in by_cycle.iter_mut() {
        list.sort_by(|&a, &b| {
            (dets[a].y, dets[a].x)
                .partial_cmp(&(dets[b].y, dets[b].x))
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
    }

    let mut tracks: Vec<OpenTrack> = Vec::new();
    let radius2 = radius * radius;
    assert!(radius > 0.0);
    let grid_key = |x: f64, y: f64| -> (i64, i64) {
        (libm::floor(x / radius) as i64, libm::floor(y / radius) as i64)
    };
    for (cycle, candidates) in by_cycle.iter().enumerate() {
        // All (distance, track, det) pairs within radius, greedily
        // assigned closest-first. Tracks are bucketed on a radius-sized
        // grid so only the 3x3 neighborhood of each detection is scanned;
        // the pair set (and therefore the result) matches the full scan.
        let mut grid: alloc::collections::BTreeMap<(i64, i64), Vec<usize>> =
            alloc::collections::BTreeMap::new();
        for (ti, t) in tracks.iter().enumerate() {
            let (cx, cy) = t.centroid();
            grid.entry(grid_key(cx, cy)).or_default().push(ti);
        }
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (di, &det_idx) in candidates.iter().enumerate() {
            let det = &dets[det_idx];
            let (kx, ky) = grid_key(det.x, det.y);
            for gx in kx - 1..=kx + 1 {
                for gy in ky - 1..=ky + 1 {
                    let Some(bucket) = grid.get(&(gx, gy)) else { continue };
                    for &ti in bucket {
                        let (cx, cy) = tracks[ti].centroid();
                        let dx = det.x - cx;
                        let dy = det.y - cy;
                        let d2 = dx * dx + dy * dy;
                        if d2 <= radius2 {
                            pairs.push((d2, ti, di));
                        }
                    }
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut track_taken = alloc::vec![false; tracks.len()];
        let mut det_taken = alloc::vec![false; candidates.len()];
        for (_, ti, di) in pairs {
            if track_taken[ti] || det_taken[di] {
                continue;
            }
            track_taken[ti] = true;
            det_taken[di] = true;
            let det = &dets[candidates[di]];
            let t = &mut tracks[ti];
            t.sum_x += det.x;
            t.sum_y += det.y;
            t.n += 1;
            t.members[cycle] = Some((candidates[di], det.intensity, det.objectness));
        }
        for (di, &det_idx) in candidates.iter().enumerate() {
            if det_taken[di] {
                continue;
            }
            let det = &dets[det_idx];
            let mut members = alloc::vec![None; n_cycles];
            members[cycle] = Some((det_idx, det.intensity, det.objectness));
            tracks.push(OpenTrack {
                sum_x: det.x,
                sum_y: det.y,
                members,
                n: 1,
            });
        }
    }

    tracks
        .into_iter()
        .map(|t| finalize_track(t, field, objectness_threshold))
        .collect()
}

fn finalize_track(t: OpenTrack, field: usize, objectness_threshold: f64) -> SpotTrack {
    let (x, y) = t.centroid();
    let mut member_scores: Vec<f64> = t
        .members
        .iter()
        .flatten()
        .map(|&(_, _, obj)| obj)
        .collect();
    member_scores.sort_unstable_by(|a, b| a.total_cmp(b));
    let objectness = median_of_sorted(&member_scores);

    let n_cycles = t.members.len();
    let present: Vec<usize> = (0..n_cycles).filter(|&r| t.members[r].is_some()).collect();
    let slots: Vec<CycleSlot> = (0..n_cycles)
        .map(|r| match t.members[r] {
            Some((_, intensity, obj)) => CycleSlot {
                intensity,
                objectness: obj,
                interpolated: false,
            },
            None => CycleSlot {
                intensity: interpolate_intensity(&t.members, &present, r),
                objectness: 0.0,
                interpolated: true,
            },
        })
        .collect();

    SpotTrack {
        field,
        x,
        y,
        slots,
        objectness,
        foreground: objectness >= objectness_threshold,
    }
}

/// Linear interpolation of the intensity readout between the nearest
/// member cycles; clamped to the nearest member at the ends.
fn interpolate_intensity(
    members: &[Option<(usize, [f64; 4], f64)>],
    present: &[usize],
    cycle: usize,
) -> [f64; 4] {
    let before = present.iter().rev().find(|&&r| r < cycle);
    let after = present.iter().find(|&&r| r > cycle);
    match (before, after) {
        (Some(&a), Some(&b)) => {
            let ia = members[a].unwrap().1;
            let ib = members[b].unwrap().1;
            let t = (cycle - a) as f64 / (b - a) as f64;
            let mut out = [0.0f64; 4];
            for c in 0..4 {
                out[c] = ia[c] + t * (ib[c] - ia[c]);
            }
            out
        }
        (Some(&a), None) => members[a].unwrap().1,
        (None, Some(&b)) => members[b].unwrap().1,
        (None, None) => [0.0; 4],
    }
}

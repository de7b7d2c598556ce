//! Cell calling and the evaluation metric suite: abundance R², cell
//! recovery, and PPV/FDR splits over targeted, trick, and
//! neither-targeted-nor-trick calls, at cell and spot level.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::codebook::{Barcode, Codebook, EntryKind};
use crate::error::DataError;
use crate::sim::CellRecord;

/// One decoded spot, ready for cell assignment. `barcode == None` marks
/// an abstained readout. `id` breaks score ties deterministically.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpotCall {
    pub id: usize,
    pub field: usize,
    pub x: f64,
    pub y: f64,
    pub barcode: Option<Barcode>,
    pub score: f64,
}

/// One cell's assignment: the barcode of its highest-confidence
/// non-abstained spot, or none.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellCall {
    pub cell_id: usize,
    pub barcode: Option<Barcode>,
    pub score: f64,
    /// Spots in the cell that called the assigned barcode.
    pub supporting_spots: usize,
}

/// Assign each spot to the cell containing it (nearest centroid of its
/// field; fields with no cells drop their spots) and each cell to the
/// barcode of its maximum-score qualifying spot.
///
/// Qualifying spots are non-abstained with `score >= min_score`. Ties go
/// to the smaller spot id, which makes the result independent of input
/// order. One `CellCall` is returned per cell, in `cells` order.
pub fn call_cells(
    spot_calls: &[SpotCall],
    cells: &[CellRecord],
    min_score: f64,
) -> Vec<CellCall> {
    // cell_id -> index in the output list.
    let mut index_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out: Vec<CellCall> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            index_of.insert(c.cell_id, i);
            CellCall {
                cell_id: c.cell_id,
                barcode: None,
                score: 0.0,
                supporting_spots: 0,
            }
        })
        .collect();

    // Best qualifying spot per cell: (score, -id) maximized via
    // (score, Reverse(id)) comparisons.
    let mut best: BTreeMap<usize, (f64, usize, Barcode)> = BTreeMap::new();
    let mut spots_by_cell: BTreeMap<usize, Vec<(Barcode, usize)>> = BTreeMap::new();
    for call in spot_calls {
        let Some(barcode) = call.barcode else { continue };
        if call.score < min_score {
            continue;
        }
        let containing = nearest_cell(cells, call.field, call.x, call.y);
        let Some(cell_id) = containing else { continue };
        spots_by_cell
            .entry(cell_id)
            .or_default()
            .push((barcode, call.id));
        let replace = match best.get(&cell_id) {
            None => true,
            Some(&(s, id, _)) => call.score > s || (call.score == s && call.id < id),
        };
        if replace {
            best.insert(cell_id, (call.score, call.id, barcode));
        }
    }

    for (cell_id, (score, _, barcode)) in best {
        let Some(&i) = index_of.get(&cell_id) else { continue };
        let supporting = spots_by_cell
            .get(&cell_id)
            .map(|v| v.iter().filter(|(bc, _)| *bc == barcode).count())
            .unwrap_or(0);
        out[i].barcode = Some(barcode);
        out[i].score = score;
        out[i].supporting_spots = supporting;
    }
    out
}

fn nearest_cell(cells: &[CellRecord], field: usize, x: f64, y: f64) -> Option<usize> {
    let mut nearest: Option<(f64, usize)> = None;
    for c in cells.iter().filter(|c| c.field == field) {
        let dx = c.centroid.0 - x;
        let dy = c.centroid.1 - y;
        let d2 = dx * dx + dy * dy;
        match nearest {
            Some((bd, _)) if bd <= d2 => {}
            _ => nearest = Some((d2, c.cell_id)),
        }
    }
    nearest.map(|(_, id)| id)
}

/// Coefficient of determination of `called` against `reference` over the
/// union of their barcodes (missing entries count as zero), with the
/// total sum of squares about the reference mean. Unbounded below; 1 only
/// when the tables agree everywhere.
pub fn abundance_r2(
    called: &BTreeMap<Barcode, u64>,
    reference: &BTreeMap<Barcode, u64>,
) -> Result<f64, DataError> {
    let keys: alloc::collections::BTreeSet<Barcode> =
        called.keys().chain(reference.keys()).copied().collect();
    if keys.is_empty() {
        return Err(DataError::UndefinedMetric("empty abundance tables".into()));
    }
    let n = keys.len() as f64;
    let ref_mean: f64 = keys
        .iter()
        .map(|k| *reference.get(k).unwrap_or(&0) as f64)
        .sum::<f64>()
        / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for k in &keys {
        let r = *reference.get(k).unwrap_or(&0) as f64;
        let c = *called.get(k).unwrap_or(&0) as f64;
        ss_res += (c - r) * (c - r);
        ss_tot += (r - ref_mean) * (r - ref_mean);
    }
    if ss_tot == 0.0 {
        return Err(DataError::UndefinedMetric(
            "zero-variance reference abundance".into(),
        ));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// As [`abundance_r2`] but on normalized frequencies instead of raw
/// counts.
pub fn abundance_r2_frequency(
    called: &BTreeMap<Barcode, u64>,
    reference: &BTreeMap<Barcode, u64>,
) -> Result<f64, DataError> {
    let called_total: u64 = called.values().sum();
    let ref_total: u64 = reference.values().sum();
    if ref_total == 0 {
        return Err(DataError::UndefinedMetric("empty reference abundance".into()));
    }
    let keys: alloc::collections::BTreeSet<Barcode> =
        called.keys().chain(reference.keys()).copied().collect();
    let n = keys.len() as f64;
    let freq = |table: &BTreeMap<Barcode, u64>, total: u64, k: &Barcode| -> f64 {
        if total == 0 {
            0.0
        } else {
            *table.get(k).unwrap_or(&0) as f64 / total as f64
        }
    };
    let ref_mean: f64 = keys.iter().map(|k| freq(reference, ref_total, k)).sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for k in &keys {
        let r = freq(reference, ref_total, k);
        let c = freq(called, called_total, k);
        ss_res += (c - r) * (c - r);
        ss_tot += (r - ref_mean) * (r - ref_mean);
    }
    if ss_tot == 0.0 {
        return Err(DataError::UndefinedMetric(
            "zero-variance reference abundance".into(),
        ));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Fraction of cells with an assigned barcode.
pub fn cell_recovery_rate(calls: &[CellCall], total_cells: usize) -> f64 {
    assert!(total_cells > 0, "total_cells must be positive");
    calls.iter().filter(|c| c.barcode.is_some()).count() as f64 / total_cells as f64
}

/// Assigned-call counts by codebook category. The three categories
/// partition the assigned calls, so their fractions sum to one by count
/// arithmetic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CallCounts {
    pub targeted: u64,
    pub trick: u64,
    pub other: u64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.targeted + self.trick + self.other
    }

    pub fn ppv(&self) -> f64 {
        self.targeted as f64 / self.total() as f64
    }

    pub fn fdr_trick(&self) -> f64 {
        self.trick as f64 / self.total() as f64
    }

    pub fn fdr_other(&self) -> f64 {
        self.other as f64 / self.total() as f64
    }

    /// The trick-rate normalization used by detection-rate-style FDRs:
    /// trick fraction of calls over trick fraction of the codebook.
    pub fn fdr_trick_rate_normalized(&self, cb: &Codebook) -> Option<f64> {
        let n_trick = cb.trick().count();
        if n_trick == 0 || self.total() == 0 {
            return None;
        }
        Some(self.fdr_trick() / (n_trick as f64 / cb.len() as f64))
    }
}

/// Classify assigned barcodes as targeted, trick, or neither.
pub fn ppv_fdr<'a>(
    assigned: impl Iterator<Item = &'a Barcode>,
    cb: &Codebook,
) -> Result<CallCounts, DataError> {
    let mut counts = CallCounts::default();
    for bc in assigned {
        match cb.kind_of(bc) {
            Some(EntryKind::Targeted) => counts.targeted += 1,
            Some(EntryKind::Trick) => counts.trick += 1,
            None => counts.other += 1,
        }
    }
    if counts.total() == 0 {
        return Err(DataError::UndefinedMetric("no assigned calls".into()));
    }
    Ok(counts)
}

/// Spot-level called abundance, restricted to targeted barcodes.
pub fn called_abundance<'a>(
    assigned: impl Iterator<Item = &'a Barcode>,
    cb: &Codebook,
) -> BTreeMap<Barcode, u64> {
    let mut table = BTreeMap::new();
    for bc in assigned {
        if cb.kind_of(bc) == Some(EntryKind::Targeted) {
            *table.entry(*bc).or_insert(0) += 1;
        }
    }
    table
}

/// Count-level detail behind the headline metrics.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CountsTable {
    pub total_cells: u64,
    pub assigned_cells: u64,
    pub total_spot_calls: u64,
    pub assigned_spot_calls: u64,
    pub abstained_spot_calls: u64,
    pub cell: CallCounts,
    pub spot: CallCounts,
    /// R² on normalized frequencies (headline `r2` uses raw counts).
    pub r2_frequency: Option<f64>,
    /// R² of cell-level called abundance against true cells per barcode.
    pub r2_cell_level: Option<f64>,
    /// Trick FDR normalized by the trick share of the codebook
    /// (detection-rate framing), at each level.
    pub fdr_trick_rate_normalized_cell: Option<f64>,
    pub fdr_trick_rate_normalized_spot: Option<f64>,
}

/// The full evaluation report. Metrics that are undefined for the run
/// (no assigned calls, degenerate reference) are `None`.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub schema_version: u32,
    /// Raw-count abundance R²: spot-level targeted calls against the
    /// reference table.
    pub r2: Option<f64>,
    pub cell_recovery_rate: Option<f64>,
    pub ppv_cell: Option<f64>,
    pub fdr_trick_cell: Option<f64>,
    pub fdr_other_cell: Option<f64>,
    pub ppv_spot: Option<f64>,
    pub fdr_trick_spot: Option<f64>,
    pub fdr_other_spot: Option<f64>,
    pub counts: CountsTable,
    /// Spot-level called abundance (targeted only), for plots and audits.
    pub called_abundance: BTreeMap<Barcode, u64>,
    /// The reference abundance the R² was computed against.
    pub reference_abundance: BTreeMap<Barcode, u64>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Assemble the report from decoded spot calls, cell calls, and the
/// reference abundance.
pub fn build_report(
    spot_calls: &[SpotCall],
    cell_calls: &[CellCall],
    total_cells: usize,
    reference: &BTreeMap<Barcode, u64>,
    reference_cells: Option<&BTreeMap<Barcode, u64>>,
    cb: &Codebook,
) -> MetricsReport {
    let assigned_spots: Vec<&Barcode> =
        spot_calls.iter().filter_map(|s| s.barcode.as_ref()).collect();
    let assigned_cells: Vec<&Barcode> =
        cell_calls.iter().filter_map(|c| c.barcode.as_ref()).collect();

    let spot_counts = ppv_fdr(assigned_spots.iter().copied(), cb).ok();
    let cell_counts = ppv_fdr(assigned_cells.iter().copied(), cb).ok();

    let called = called_abundance(assigned_spots.iter().copied(), cb);
    let r2 = abundance_r2(&called, reference).ok();
    let r2_frequency = abundance_r2_frequency(&called, reference).ok();
    let r2_cell_level = reference_cells.and_then(|truth| {
        let called_cells = called_abundance(assigned_cells.iter().copied(), cb);
        abundance_r2(&called_cells, truth).ok()
    });

    MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        r2,
        cell_recovery_rate: if total_cells > 0 {
            Some(cell_recovery_rate(cell_calls, total_cells))
        } else {
            None
        },
        ppv_cell: cell_counts.map(|c| c.ppv()),
        fdr_trick_cell: cell_counts.map(|c| c.fdr_trick()),
        fdr_other_cell: cell_counts.map(|c| c.fdr_other()),
        ppv_spot: spot_counts.map(|c| c.ppv()),
        fdr_trick_spot: spot_counts.map(|c| c.fdr_trick()),
        fdr_other_spot: spot_counts.map(|c| c.fdr_other()),
        counts: CountsTable {
            total_cells: total_cells as u64,
            assigned_cells: assigned_cells.len() as u64,
            total_spot_calls: spot_calls.len() as u64,
            assigned_spot_calls: assigned_spots.len() as u64,
            abstained_spot_calls: (spot_calls.len() - assigned_spots.len()) as u64,
            cell: cell_counts.unwrap_or_default(),
            spot: spot_counts.unwrap_or_default(),
            r2_frequency,
            r2_cell_level,
            fdr_trick_rate_normalized_cell: cell_counts
                .and_then(|c| c.fdr_trick_rate_normalized(cb)),
            fdr_trick_rate_normalized_spot: spot_counts
                .and_then(|c| c.fdr_trick_rate_normalized(cb)),
        },
        called_abundance: called,
        reference_abundance: reference.clone(),
    }
}

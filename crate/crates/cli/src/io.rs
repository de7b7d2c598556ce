//! On-disk artifact formats.
//!
//! - Well manifest: JSON (cells, spots, barcodes, positions).
//! - Tiles: one flat binary file per (field, cycle) of little-endian f32,
//!   row-major, channel-last, plus a JSON sidecar with the dimensions.
//! - Abundance: `barcode,count` CSV.
//! - Detections: `field,cycle,x,y,iA,iC,iG,iT,objectness,letter` CSV.
//! - Model checkpoints: JSON with a feature-spec version.
//! - Pseudo-label dumps: `field,track,cycle,letter,source,score` CSV.
//! - History: JSON lines, one record per round.
//! - Report: JSON with a fixed schema version.
//!
//! Everything is written byte-deterministically: map keys are ordered and
//! no timestamps are embedded.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use plepi_core::codebook::{Base, Codebook};
use plepi_core::detect::Detection;
use plepi_core::fusion::PseudoLabelSource;
use plepi_core::metrics::{CellCall, MetricsReport, SpotCall};
use plepi_core::sim::{GroundTruthWell, Tile};
use plepi_core::train::RoundRecord;
use plepi_core::BaseCallerModel;

use crate::error::CliError;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_codebook(path: &Path) -> Result<Codebook, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read codebook {}: {e}", path.display())))?;
    Ok(Codebook::parse(&text)?)
}

// ---- well manifest ----

pub fn write_well(path: &Path, well: &GroundTruthWell) -> Result<(), CliError> {
    write_atomic(path, serde_json::to_string_pretty(well)?.as_bytes())
}

pub fn read_well(path: &Path) -> Result<GroundTruthWell, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read well manifest {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

// ---- tiles ----

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct TileSidecar {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub field: usize,
    pub cycle: usize,
}

pub fn tile_paths(dir: &Path, field: usize, cycle: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("tile_f{field:04}_r{cycle:02}.bin")),
        dir.join(format!("tile_f{field:04}_r{cycle:02}.json")),
    )
}

pub fn write_tile(dir: &Path, tile: &Tile) -> Result<(), CliError> {
    let (bin_path, json_path) = tile_paths(dir, tile.field, tile.cycle);
    let mut bytes = Vec::with_capacity(tile.data.len() * 4);
    for v in &tile.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&bin_path, &bytes)?;
    let sidecar = TileSidecar {
        width: tile.width,
        height: tile.height,
        channels: 4,
        field: tile.field,
        cycle: tile.cycle,
    };
    write_atomic(&json_path, serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

pub fn read_tile(dir: &Path, field: usize, cycle: usize) -> Result<Tile, CliError> {
    let (bin_path, json_path) = tile_paths(dir, field, cycle);
    let sidecar: TileSidecar = serde_json::from_str(&fs::read_to_string(&json_path).map_err(
        |e| CliError::data(format!("cannot read tile sidecar {}: {e}", json_path.display())),
    )?)?;
    let mut file = fs::File::open(&bin_path)
        .map_err(|e| CliError::data(format!("cannot open tile {}: {e}", bin_path.display())))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let expected = sidecar.width * sidecar.height * sidecar.channels * 4;
    if bytes.len() != expected {
        return Err(CliError::data(format!(
            "tile {} has {} bytes, expected {expected}",
            bin_path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tile {
        field: sidecar.field,
        cycle: sidecar.cycle,
        width: sidecar.width,
        height: sidecar.height,
        data,
    })
}

// ---- detections ----

pub const DETECTIONS_HEADER: &str = "field,cycle,x,y,iA,iC,iG,iT,objectness,letter";

pub fn detections_to_csv(dets: &[Detection]) -> String {
    let mut out = String::from(DETECTIONS_HEADER);
    out.push('\n');
    for d in dets {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            d.field,
            d.cycle,
            d.x,
            d.y,
            d.intensity[0],
            d.intensity[1],
            d.intensity[2],
            d.intensity[3],
            d.objectness,
            d.letter
        ));
    }
    out
}

pub fn detections_from_csv(text: &str) -> Result<Vec<Detection>, CliError> {
    let mut dets = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (lineno == 0 && line == DETECTIONS_HEADER) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(CliError::data(format!(
                "detections line {}: expected 10 columns",
                lineno + 1
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64, CliError> {
            s.parse()
                .map_err(|_| CliError::data(format!("detections line {}: bad {what}", lineno + 1)))
        };
        let letter = Base::from_char(cols[9].chars().next().unwrap_or('?')).ok_or_else(|| {
            CliError::data(format!("detections line {}: bad letter", lineno + 1))
        })?;
        dets.push(Detection {
            field: cols[0]
                .parse()
                .map_err(|_| CliError::data(format!("detections line {}: bad field", lineno + 1)))?,
            cycle: cols[1]
                .parse()
                .map_err(|_| CliError::data(format!("detections line {}: bad cycle", lineno + 1)))?,
            x: parse_f(cols[2], "x")?,
            y: parse_f(cols[3], "y")?,
            intensity: [
                parse_f(cols[4], "iA")?,
                parse_f(cols[5], "iC")?,
                parse_f(cols[6], "iG")?,
                parse_f(cols[7], "iT")?,
            ],
            objectness: parse_f(cols[8], "objectness")?,
            letter,
        });
    }
    Ok(dets)
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<(), CliError> {
    write_atomic(path, detections_to_csv(dets).as_bytes())
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read detections {}: {e}", path.display())))?;
    detections_from_csv(&text)
}

// ---- model checkpoints ----

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub feature_spec_version: u32,
    pub model: BaseCallerModel,
}

pub const FEATURE_SPEC_VERSION: u32 = 1;

pub fn write_model(path: &Path, model: &BaseCallerModel) -> Result<(), CliError> {
    let ck = Checkpoint {
        feature_spec_version: FEATURE_SPEC_VERSION,
        model: model.clone(),
    };
    write_atomic(path, serde_json::to_string_pretty(&ck)?.as_bytes())
}

pub fn read_model(path: &Path) -> Result<BaseCallerModel, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read model {}: {e}", path.display())))?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    if ck.feature_spec_version != FEATURE_SPEC_VERSION {
        return Err(CliError::data(format!(
            "model {} has feature spec v{}, expected v{FEATURE_SPEC_VERSION}",
            path.display(),
            ck.feature_spec_version
        )));
    }
    Ok(ck.model)
}

// ---- spot calls / cell calls ----

pub const SPOT_CALLS_HEADER: &str = "id,field,x,y,barcode,score,source";

pub fn spot_calls_to_csv(calls: &[(SpotCall, PseudoLabelSource)]) -> String {
    let mut out = String::from(SPOT_CALLS_HEADER);
    out.push('\n');
    for (c, source) in calls {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.id,
            c.field,
            c.x,
            c.y,
            c.barcode.map(|b| b.to_string()).unwrap_or_default(),
            c.score,
            source_str(*source),
        ));
    }
    out
}

pub fn source_str(source: PseudoLabelSource) -> &'static str {
    match source {
        PseudoLabelSource::AllConfident => "all-confident",
        PseudoLabelSource::CodebookFused => "codebook-fused",
        PseudoLabelSource::Abstained => "abstained",
    }
}

pub fn read_spot_calls(path: &Path) -> Result<Vec<SpotCall>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read spot calls {}: {e}", path.display())))?;
    let mut calls = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (lineno == 0 && line == SPOT_CALLS_HEADER) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(CliError::data(format!(
                "spot calls line {}: expected 7 columns",
                lineno + 1
            )));
        }
        let barcode = if cols[4].is_empty() {
            None
        } else {
            Some(
                plepi_core::Barcode::parse(cols[4])
                    .map_err(|e| CliError::data(format!("spot calls line {}: {e}", lineno + 1)))?,
            )
        };
        calls.push(SpotCall {
            id: cols[0]
                .parse()
                .map_err(|_| CliError::data(format!("spot calls line {}: bad id", lineno + 1)))?,
            field: cols[1]
                .parse()
                .map_err(|_| CliError::data(format!("spot calls line {}: bad field", lineno + 1)))?,
            x: cols[2]
                .parse()
                .map_err(|_| CliError::data(format!("spot calls line {}: bad x", lineno + 1)))?,
            y: cols[3]
                .parse()
                .map_err(|_| CliError::data(format!("spot calls line {}: bad y", lineno + 1)))?,
            barcode,
            score: cols[5]
                .parse()
                .map_err(|_| CliError::data(format!("spot calls line {}: bad score", lineno + 1)))?,
        });
    }
    Ok(calls)
}

pub const CELL_CALLS_HEADER: &str = "cell_id,barcode,score,supporting_spots";

pub fn cell_calls_to_csv(calls: &[CellCall]) -> String {
    let mut out = String::from(CELL_CALLS_HEADER);
    out.push('\n');
    for c in calls {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.cell_id,
            c.barcode.map(|b| b.to_string()).unwrap_or_default(),
            c.score,
            c.supporting_spots
        ));
    }
    out
}

pub fn read_cell_calls(path: &Path) -> Result<Vec<CellCall>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read cell calls {}: {e}", path.display())))?;
    let mut calls = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (lineno == 0 && line == CELL_CALLS_HEADER) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(CliError::data(format!(
                "cell calls line {}: expected 4 columns",
                lineno + 1
            )));
        }
        let barcode = if cols[1].is_empty() {
            None
        } else {
            Some(
                plepi_core::Barcode::parse(cols[1])
                    .map_err(|e| CliError::data(format!("cell calls line {}: {e}", lineno + 1)))?,
            )
        };
        calls.push(CellCall {
            cell_id: cols[0]
                .parse()
                .map_err(|_| CliError::data(format!("cell calls line {}: bad cell_id", lineno + 1)))?,
            barcode,
            score: cols[2]
                .parse()
                .map_err(|_| CliError::data(format!("cell calls line {}: bad score", lineno + 1)))?,
            supporting_spots: cols[3].parse().map_err(|_| {
                CliError::data(format!("cell calls line {}: bad spot count", lineno + 1))
            })?,
        });
    }
    Ok(calls)
}

// ---- pseudo-label dumps ----

pub const PSEUDO_LABELS_HEADER: &str = "field,track,cycle,letter,source,score";

/// One labeled cycle per row.
pub struct PseudoLabelRow {
    pub field: usize,
    pub track: usize,
    pub cycle: usize,
    pub letter: Base,
    pub source: PseudoLabelSource,
    pub score: f64,
}

pub fn pseudo_labels_to_csv(rows: &[PseudoLabelRow]) -> String {
    let mut out = String::from(PSEUDO_LABELS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.field,
            r.track,
            r.cycle,
            r.letter,
            source_str(r.source),
            r.score
        ));
    }
    out
}

// ---- history / report ----

pub fn write_history(path: &Path, history: &[RoundRecord]) -> Result<(), CliError> {
    let mut out = String::new();
    for record in history {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_history(path: &Path) -> Result<Vec<RoundRecord>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read history {}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CliError::from))
        .collect()
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<(), CliError> {
    write_atomic(path, serde_json::to_string_pretty(report)?.as_bytes())
}

pub fn read_report(path: &Path) -> Result<MetricsReport, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read report {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes())
}

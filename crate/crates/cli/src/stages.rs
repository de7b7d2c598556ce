//! Pipeline stages. Each stage reads the artifacts of its predecessors
//! from the output directory and writes its own, so the subcommands
//! compose exactly like the end-to-end `pipeline` command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plepi_core::codebook::Barcode;
use plepi_core::detect::{corrupt_labels, detect_spots_hq, detect_spots_lq, Detection};
use plepi_core::fusion::{decode_track, track_probs, PseudoLabelSource};
use plepi_core::metrics::{build_report, call_cells, CellCall, MetricsReport, SpotCall};
use plepi_core::sim::{
    abundance_of_fields, export_reference_abundance, render_tile, simulate_well, tile_order,
    GroundTruthWell, Tile,
};
use plepi_core::track::build_tracks;
use plepi_core::train::{
    self_train_with_sink, pairs_from_detections, pairs_from_truth, FieldBatch, SelfTrainData,
    SelfTrainOutcome,
};
use plepi_core::BaseCallerModel;

use crate::config::{Quality, RunConfig};
use crate::error::CliError;
use crate::exec::RayonExecutor;
use crate::io;
use crate::render;

pub struct Paths {
    out: PathBuf,
}

impl Paths {
    pub fn new(out: &Path) -> Paths {
        Paths { out: out.to_path_buf() }
    }

    pub fn well(&self) -> PathBuf {
        self.out.join("well/manifest.json")
    }
    pub fn tiles(&self) -> PathBuf {
        self.out.join("well/tiles")
    }
    pub fn abundance(&self) -> PathBuf {
        self.out.join("well/abundance.csv")
    }
    pub fn detections(&self) -> PathBuf {
        self.out.join("annotate/detections.csv")
    }
    pub fn labeled(&self) -> PathBuf {
        self.out.join("annotate/labeled.csv")
    }
    pub fn burnin_teacher(&self) -> PathBuf {
        self.out.join("burnin/teacher.json")
    }
    pub fn burnin_student(&self) -> PathBuf {
        self.out.join("burnin/student.json")
    }
    pub fn teacher(&self) -> PathBuf {
        self.out.join("train/teacher.json")
    }
    pub fn student(&self) -> PathBuf {
        self.out.join("train/student.json")
    }
    pub fn history(&self) -> PathBuf {
        self.out.join("train/history.jsonl")
    }
    pub fn pseudo_dump(&self, round: usize) -> PathBuf {
        self.out.join(format!("train/pseudo_labels_round_{round}.csv"))
    }
    pub fn spot_calls(&self) -> PathBuf {
        self.out.join("decode/spot_calls.csv")
    }
    pub fn cell_calls(&self) -> PathBuf {
        self.out.join("cells/cell_calls.csv")
    }
    pub fn report_json(&self) -> PathBuf {
        self.out.join("eval/report.json")
    }
    pub fn report_text(&self) -> PathBuf {
        self.out.join("eval/report.txt")
    }
    pub fn plot(&self, name: &str) -> PathBuf {
        self.out.join("plots").join(name)
    }
}

/// Simulate the well and write manifest, tiles, and reference abundance.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<GroundTruthWell, CliError> {
    let cb = io::load_codebook(&cfg.codebook)?;
    let sim_cfg = cfg.sim_config();
    let well = simulate_well(&sim_cfg, &cb)?;
    let paths = Paths::new(&cfg.out_dir);
    io::write_well(&paths.well(), &well)?;
    let pool = RayonExecutor::new(cfg.threads);
    let order = tile_order(sim_cfg.n_fields, sim_cfg.n_cycles);
    let tile_dir = paths.tiles();
    std::fs::create_dir_all(&tile_dir)?;
    let results: Vec<Result<(), CliError>> = pool.map(order.len(), |i| {
        let (f, r) = order[i];
        let tile = render_tile(&well, &sim_cfg, f, r);
        io::write_tile(&tile_dir, &tile)
    });
    for r in results {
        r?;
    }
    io::write_text(&paths.abundance(), &export_reference_abundance(&well))?;
    eprintln!(
        "simulated well: {} cells, {} spots, {} tiles",
        well.cells.len(),
        well.spots.len(),
        order.len()
    );
    Ok(well)
}

fn read_field_tiles(paths: &Paths, field: usize, n_cycles: usize) -> Result<Vec<Tile>, CliError> {
    (0..n_cycles)
        .map(|r| io::read_tile(&paths.tiles(), field, r))
        .collect()
}

/// Detect spots in every field at the configured quality level; corrupt
/// the labeled fields' letters at `flip_rate` and write both CSVs.
pub fn cmd_annotate(cfg: &RunConfig) -> Result<(), CliError> {
    let paths = Paths::new(&cfg.out_dir);
    let pool = RayonExecutor::new(cfg.threads);
    let n_cycles = cfg.sim.n_cycles;
    let per_field: Vec<Result<Vec<Detection>, CliError>> = pool.map(cfg.sim.n_fields, |f| {
        let tiles = read_field_tiles(&paths, f, n_cycles)?;
        match cfg.quality {
            Quality::Lq => {
                let threshold = cfg.lq_threshold();
                let mut dets = Vec::new();
                for t in &tiles {
                    dets.extend(detect_spots_lq(t, threshold));
                }
                Ok(dets)
            }
            Quality::Hq => {
                let refs: Vec<&Tile> = tiles.iter().collect();
                Ok(detect_spots_hq(&refs, &cfg.hq_params())?)
            }
        }
    });
    let mut dets = Vec::new();
    for r in per_field {
        dets.extend(r?);
    }
    io::write_detections(&paths.detections(), &dets)?;

    let splits = cfg.field_splits();
    splits.assert_disjoint()?;
    let labeled_dets: Vec<Detection> = dets
        .iter()
        .filter(|d| splits.labeled.contains(&d.field))
        .cloned()
        .collect();
    let corrupted = corrupt_labels(&labeled_dets, cfg.flip_rate, cfg.seed);
    io::write_detections(&paths.labeled(), &corrupted)?;
    eprintln!(
        "annotated {} detections ({} labeled at flip rate {})",
        dets.len(),
        corrupted.len(),
        cfg.flip_rate
    );
    Ok(())
}

/// Supervised burn-in of student and teacher on the noisy labeled set.
pub fn cmd_burnin(cfg: &RunConfig) -> Result<(), CliError> {
    let paths = Paths::new(&cfg.out_dir);
    let labeled = io::read_detections(&paths.labeled())?;
    let pairs = pairs_from_detections(&labeled, cfg.detection_background());
    let mut train_cfg = cfg.train_config();
    train_cfg.self_training_rounds = 0;
    let outcome = run_self_training(cfg, &train_cfg, &pairs, &[], None)?;
    io::write_model(&paths.burnin_teacher(), &outcome.teacher)?;
    io::write_model(&paths.burnin_student(), &outcome.student)?;
    eprintln!("burn-in complete ({} labeled samples)", pairs.len());
    Ok(())
}

fn run_self_training(
    cfg: &RunConfig,
    train_cfg: &plepi_core::TrainConfig,
    labeled: &[(plepi_core::SpotFeatures, plepi_core::Base)],
    fields: &[FieldBatch],
    holdout: Option<&[(plepi_core::SpotFeatures, plepi_core::Base)]>,
) -> Result<SelfTrainOutcome, CliError> {
    let cb = io::load_codebook(&cfg.codebook)?;
    let paths = Paths::new(&cfg.out_dir);
    let fusion = cfg.training_fusion_config();
    let executor = RayonExecutor::new(cfg.threads);
    let data = SelfTrainData {
        labeled,
        fields,
        background_level: cfg.detection_background(),
        holdout,
    };
    let dump = cfg.train.dump_pseudo_labels;
    let mut dump_error: Option<CliError> = None;
    let outcome = self_train_with_sink(
        &BaseCallerModel::zeroed(),
        &BaseCallerModel::zeroed(),
        &data,
        train_cfg,
        &fusion,
        &cb,
        &executor,
        |round, field_labels| {
            if !dump || dump_error.is_some() {
                return;
            }
            let mut rows = Vec::new();
            for fl in field_labels {
                for tl in &fl.track_labels {
                    for (cycle, letter) in tl.labels.iter().enumerate() {
                        if let Some(letter) = letter {
                            rows.push(io::PseudoLabelRow {
                                field: fl.field,
                                track: tl.track,
                                cycle,
                                letter: *letter,
                                source: tl.source,
                                score: tl.score,
                            });
                        }
                    }
                }
            }
            if let Err(e) =
                io::write_text(&paths.pseudo_dump(round), &io::pseudo_labels_to_csv(&rows))
            {
                dump_error = Some(e);
            }
        },
    )?;
    if let Some(e) = dump_error {
        return Err(e);
    }
    Ok(outcome)
}

/// Self-training over the unlabeled fields; writes the trained models,
/// the history, and per-round pseudo-label dumps.
pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let paths = Paths::new(&cfg.out_dir);
    let splits = cfg.field_splits();
    splits.assert_disjoint()?;

    let labeled_dets = io::read_detections(&paths.labeled())?;
    let labeled = pairs_from_detections(&labeled_dets, cfg.detection_background());

    let all_dets = io::read_detections(&paths.detections())?;
    let fusion = cfg.training_fusion_config();
    let pool = RayonExecutor::new(cfg.threads);
    let unlabeled = &splits.unlabeled;
    let fields: Vec<FieldBatch> = pool.map(unlabeled.len(), |i| {
        let f = unlabeled[i];
        let dets: Vec<Detection> = all_dets.iter().filter(|d| d.field == f).cloned().collect();
        FieldBatch::from_detections(f, &dets, cfg.sim.n_cycles, &fusion)
    });

    // Monitoring accuracy against unlabeled-field ground truth; the test
    // split stays untouched until decode.
    let holdout_pairs = if cfg.train.monitor_accuracy {
        let well = io::read_well(&Paths::new(&cfg.out_dir).well())?;
        let monitor_dets: Vec<Detection> = all_dets
            .iter()
            .filter(|d| splits.unlabeled.contains(&d.field))
            .cloned()
            .collect();
        Some(pairs_from_truth(
            &monitor_dets,
            &well,
            cfg.detection_background(),
            cfg.fusion.match_radius,
        ))
    } else {
        None
    };

    let train_cfg = cfg.train_config();
    let outcome = run_self_training(cfg, &train_cfg, &labeled, &fields, holdout_pairs.as_deref())?;
    io::write_model(&paths.teacher(), &outcome.teacher)?;
    io::write_model(&paths.student(), &outcome.student)?;
    io::write_history(&paths.history(), &outcome.history)?;
    if let Some(last) = outcome.history.last() {
        eprintln!(
            "self-training finished: round {} with {} pseudo-labels, abstention {:.3}{}",
            last.round,
            last.n_confident_labels + last.n_fused_labels,
            last.abstention_rate,
            last.holdout_accuracy
                .map(|a| format!(", monitor accuracy {a:.4}"))
                .unwrap_or_default()
        );
    }
    Ok(())
}

fn model_for_decode(cfg: &RunConfig, model_path: Option<&Path>) -> Result<BaseCallerModel, CliError> {
    let paths = Paths::new(&cfg.out_dir);
    let path = match model_path {
        Some(p) => p.to_path_buf(),
        None => {
            if paths.teacher().exists() {
                paths.teacher()
            } else {
                paths.burnin_teacher()
            }
        }
    };
    io::read_model(&path)
}

/// Decode the test fields with the trained teacher: track building,
/// confidence partitioning, and codebook fusion per track.
pub fn cmd_decode(cfg: &RunConfig, model_path: Option<&Path>) -> Result<Vec<SpotCall>, CliError> {
    let paths = Paths::new(&cfg.out_dir);
    let cb = io::load_codebook(&cfg.codebook)?;
    let model = model_for_decode(cfg, model_path)?;
    let splits = cfg.field_splits();
    splits.assert_disjoint()?;
    let all_dets = io::read_detections(&paths.detections())?;
    let fusion = cfg.fusion_config();
    let background = cfg.detection_background();

    let pool = RayonExecutor::new(cfg.threads);
    let test = &splits.test;
    let per_field: Vec<Vec<(SpotCall, PseudoLabelSource)>> = pool.map(test.len(), |i| {
        let f = test[i];
        let dets: Vec<Detection> = all_dets.iter().filter(|d| d.field == f).cloned().collect();
        let tracks = build_tracks(&dets, cfg.sim.n_cycles, fusion.match_radius, fusion.objectness_threshold);
        let mut calls = Vec::new();
        for track in &tracks {
            if !track.foreground {
                continue;
            }
            let probs = track_probs(&model, track, background);
            let (_, call) = decode_track(track, &probs, &cb, &fusion);
            let barcode = match call.source {
                PseudoLabelSource::Abstained => None,
                _ => call.full_barcode(),
            };
            calls.push((
                SpotCall {
                    id: 0, // assigned globally below
                    field: f,
                    x: track.x,
                    y: track.y,
                    barcode,
                    score: call.score,
                },
                call.source,
            ));
        }
        calls
    });

    let mut calls: Vec<(SpotCall, PseudoLabelSource)> = Vec::new();
    for field_calls in per_field {
        calls.extend(field_calls);
    }
    for (i, (c, _)) in calls.iter_mut().enumerate() {
        c.id = i;
    }
    io::write_text(&paths.spot_calls(), &io::spot_calls_to_csv(&calls))?;
    eprintln!(
        "decoded {} foreground tracks on {} test fields ({} assigned)",
        calls.len(),
        splits.test.len(),
        calls.iter().filter(|(c, _)| c.barcode.is_some()).count()
    );
    Ok(calls.into_iter().map(|(c, _)| c).collect())
}

/// Assign each test-field cell the barcode of its best-scoring spot.
pub fn cmd_call_cells(cfg: &RunConfig) -> Result<Vec<CellCall>, CliError> {
    let paths = Paths::new(&cfg.out_dir);
    let well = io::read_well(&paths.well())?;
    let spot_calls = io::read_spot_calls(&paths.spot_calls())?;
    let splits = cfg.field_splits();
    let cells: Vec<_> = well
        .cells
        .iter()
        .filter(|c| splits.test.contains(&c.field))
        .cloned()
        .collect();
    let calls = call_cells(&spot_calls, &cells, cfg.annotate.cell_score_cutoff);
    io::write_text(&paths.cell_calls(), &io::cell_calls_to_csv(&calls))?;
    eprintln!(
        "called {} of {} test cells",
        calls.iter().filter(|c| c.barcode.is_some()).count(),
        calls.len()
    );
    Ok(calls)
}

/// True cell-level abundance of the test fields: each cell's identity is
/// the (single) barcode of its spots.
fn true_cell_abundance(well: &GroundTruthWell, test_fields: &[usize]) -> BTreeMap<Barcode, u64> {
    let mut per_cell: BTreeMap<usize, Barcode> = BTreeMap::new();
    for s in &well.spots {
        if test_fields.contains(&s.field) {
            per_cell.entry(s.cell_id).or_insert(s.barcode);
        }
    }
    let mut table = BTreeMap::new();
    for (_, bc) in per_cell {
        *table.entry(bc).or_insert(0) += 1;
    }
    table
}

/// Compute the metric suite against the ground truth of the test fields.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<MetricsReport, CliError> {
    let paths = Paths::new(&cfg.out_dir);
    let cb = io::load_codebook(&cfg.codebook)?;
    let well = io::read_well(&paths.well())?;
    let spot_calls = io::read_spot_calls(&paths.spot_calls())?;
    let cell_calls = io::read_cell_calls(&paths.cell_calls())?;
    let splits = cfg.field_splits();

    let reference = abundance_of_fields(&well, &splits.test);
    let reference_cells = true_cell_abundance(&well, &splits.test);
    let total_cells = well
        .cells
        .iter()
        .filter(|c| splits.test.contains(&c.field))
        .count();

    let report = build_report(
        &spot_calls,
        &cell_calls,
        total_cells,
        &reference,
        Some(&reference_cells),
        &cb,
    );
    io::write_report(&paths.report_json(), &report)?;
    io::write_text(&paths.report_text(), &render::report_text(&report))?;
    eprintln!(
        "evaluation: R² {} | cell recovery {} | PPV spot {}",
        report.r2.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into()),
        report
            .cell_recovery_rate
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "undefined".into()),
        report
            .ppv_spot
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "undefined".into()),
    );
    Ok(report)
}

/// Render the SVG plots and regenerate the text report.
pub fn cmd_report(cfg: &RunConfig) -> Result<(), CliError> {
    let paths = Paths::new(&cfg.out_dir);
    let report = io::read_report(&paths.report_json())?;
    io::write_text(&paths.report_text(), &render::report_text(&report))?;
    io::write_text(
        &paths.plot("abundance_scatter.svg"),
        &render::abundance_scatter_svg(&report),
    )?;
    if paths.history().exists() {
        let history = io::read_history(&paths.history())?;
        io::write_text(
            &paths.plot("history_curve.svg"),
            &render::history_curve_svg(&history),
        )?;
    }
    eprintln!("report written to {}", paths.report_text().display());
    Ok(())
}

/// The full pipeline: simulate, annotate, burn-in, train, decode, call
/// cells, evaluate, report.
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<MetricsReport, CliError> {
    cmd_simulate(cfg)?;
    cmd_annotate(cfg)?;
    cmd_burnin(cfg)?;
    cmd_train(cfg)?;
    cmd_decode(cfg, None)?;
    cmd_call_cells(cfg)?;
    let report = cmd_evaluate(cfg)?;
    cmd_report(cfg)?;
    Ok(report)
}

//! The teacher-student self-training loop.
//!
//! Phase 1 (burn-in) fits the student to the noisy labeled set and copies
//! it into the teacher. Phase 2 iterates rounds: the teacher snapshot
//! pseudo-labels every unlabeled field (tracks, confidence partition,
//! codebook fusion), then the student takes one combined
//! supervised+pseudo-label gradient step per field mini-batch and the
//! teacher follows by EMA. Pseudo-label generation is pure per field and
//! may run on any [`TaskExecutor`]; results are consumed in field order,
//! so parallel and serial execution train identically.

use alloc::vec::Vec;


use crate::codebook::{Base, Codebook};
use crate::detect::Detection;
use crate::error::ConfigError;
use crate::fusion::{decode_track, track_probs, FusionConfig, PseudoLabelSource};
use crate::model::{
    augment_strong, ema_update, featurize, featurize_intensity, train_supervised,
    BaseCallerModel, SpotFeatures, TrainConfig, FEATURE_DIM,
};
use crate::rng;
use crate::sim::GroundTruthWell;
use crate::track::{build_tracks, SpotTrack};

/// Maps `0..n` task indices to results. Implementations must preserve
/// index order in the output.
pub trait TaskExecutor {
    fn map_tasks<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T>;
}

/// Runs tasks in order on the calling thread (the reference mode).
pub struct SerialExecutor;

impl TaskExecutor for SerialExecutor {
    fn map_tasks<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

/// One unlabeled field's mini-batch: all its cross-cycle tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBatch {
    pub field: usize,
    pub tracks: Vec<SpotTrack>,
}

impl FieldBatch {
    /// Build the field's tracks from its detections (all cycles).
    pub fn from_detections(
        field: usize,
        dets: &[Detection],
        n_cycles: usize,
        cfg: &FusionConfig,
    ) -> FieldBatch {
        FieldBatch {
            field,
            tracks: build_tracks(dets, n_cycles, cfg.match_radius, cfg.objectness_threshold),
        }
    }
}

/// Inputs of one self-training run.
pub struct SelfTrainData<'a> {
    /// Noisy labeled samples (burn-in and the supervised loss term).
    pub labeled: &'a [(SpotFeatures, Base)],
    /// Unlabeled fields, pseudo-labeled each round.
    pub fields: &'a [FieldBatch],
    /// Background level subtracted when featurizing track readouts.
    pub background_level: f64,
    /// Optional ground-truth pairs for per-round held-out accuracy.
    pub holdout: Option<&'a [(SpotFeatures, Base)]>,
}

/// Per-round bookkeeping. Round 0 is the burn-in snapshot.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    pub round: usize,
    pub n_tracks: usize,
    pub n_foreground: usize,
    /// Letter-level pseudo-labels fed to the unsupervised loss.
    pub n_confident_labels: usize,
    pub n_fused_labels: usize,
    pub n_fused_tracks: usize,
    pub n_all_confident_tracks: usize,
    pub n_abstained_tracks: usize,
    /// Abstained tracks over foreground tracks.
    pub abstention_rate: f64,
    pub holdout_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SelfTrainOutcome {
    pub teacher: BaseCallerModel,
    pub student: BaseCallerModel,
    pub history: Vec<RoundRecord>,
}

/// Per-track pseudo-label detail, for dumps and audits.
pub struct TrackLabels {
    /// Index of the track within its [`FieldBatch`].
    pub track: usize,
    pub source: PseudoLabelSource,
    pub score: f64,
    /// The training letters per cycle (`None` = cycle not pseudo-labeled).
    pub labels: Vec<Option<Base>>,
}

/// Pseudo-labels of one field under one teacher snapshot.
pub struct FieldPseudoLabels {
    pub field: usize,
    pub pairs: Vec<(SpotFeatures, Base)>,
    pub track_labels: Vec<TrackLabels>,
    pub n_tracks: usize,
    pub n_foreground: usize,
    pub n_confident_labels: usize,
    pub n_fused_labels: usize,
    pub n_fused_tracks: usize,
    pub n_all_confident_tracks: usize,
    pub n_abstained_tracks: usize,
}

/// Run the teacher over one field and assemble its pseudo-label pairs:
/// confident letters always, mediocre letters only when codebook fusion
/// resolved them. Background tracks contribute nothing.
pub fn pseudo_label_field(
    teacher: &BaseCallerModel,
    batch: &FieldBatch,
    pcfg: &FusionConfig,
    cb: &Codebook,
    background_level: f64,
) -> FieldPseudoLabels {
    let mut out = FieldPseudoLabels {
        field: batch.field,
        pairs: Vec::new(),
        track_labels: Vec::new(),
        n_tracks: batch.tracks.len(),
        n_foreground: 0,
        n_confident_labels: 0,
        n_fused_labels: 0,
        n_fused_tracks: 0,
        n_all_confident_tracks: 0,
        n_abstained_tracks: 0,
    };
    for (track_index, track) in batch.tracks.iter().enumerate() {
        if !track.foreground {
            continue;
        }
        out.n_foreground += 1;
        let probs = track_probs(teacher, track, background_level);
        let (partition, call) = decode_track(track, &probs, cb, pcfg);
        let mut labels: Vec<Option<Base>> = alloc::vec![None; track.n_cycles()];
        for cl in &partition.confident {
            labels[cl.cycle] = Some(cl.letter);
            out.pairs.push((
                featurize_intensity(&track.slots[cl.cycle].intensity, background_level),
                cl.letter,
            ));
        }
        out.n_confident_labels += partition.confident.len();
        match call.source {
            PseudoLabelSource::CodebookFused => {
                out.n_fused_tracks += 1;
                for &cycle in &partition.mediocre {
                    let letter = call.letters[cycle].expect("fused sequence is complete");
                    labels[cycle] = Some(letter);
                    out.pairs.push((
                        featurize_intensity(&track.slots[cycle].intensity, background_level),
                        letter,
                    ));
                    out.n_fused_labels += 1;
                }
            }
            PseudoLabelSource::AllConfident => out.n_all_confident_tracks += 1,
            PseudoLabelSource::Abstained => out.n_abstained_tracks += 1,
        }
        out.track_labels.push(TrackLabels {
            track: track_index,
            source: call.source,
            score: call.score,
            labels,
        });
    }
    out
}

/// Fraction of holdout samples whose argmax prediction matches.
pub fn model_accuracy(model: &BaseCallerModel, data: &[(SpotFeatures, Base)]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .iter()
        .filter(|(x, y)| crate::detect::argmax4(&model.predict_probs(x)) == *y)
        .count();
    correct as f64 / data.len() as f64
}

/// Featurized (sample, noisy letter) pairs from labeled detections.
pub fn pairs_from_detections(
    dets: &[Detection],
    background_level: f64,
) -> Vec<(SpotFeatures, Base)> {
    dets.iter()
        .map(|d| (featurize(d, background_level), d.letter))
        .collect()
}

/// Featurized (sample, true letter) pairs: each detection is matched to
/// the nearest ground-truth spot within `radius` and labeled with that
/// spot's letter for the detection's cycle. Unmatched detections are
/// dropped.
pub fn pairs_from_truth(
    dets: &[Detection],
    well: &GroundTruthWell,
    background_level: f64,
    radius: f64,
) -> Vec<(SpotFeatures, Base)> {
    let mut pairs = Vec::new();
    for d in dets {
        let nearest = well
            .spots_in_field(d.field)
            .map(|s| {
                let dx = s.x - d.x;
                let dy = s.y - d.y;
                (dx * dx + dy * dy, s)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((d2, s)) = nearest {
            if d2 <= radius * radius {
                pairs.push((featurize(d, background_level), s.barcode.base_at(d.cycle)));
            }
        }
    }
    pairs
}

/// Burn-in plus pseudo-labeled self-training rounds.
///
/// With zero rounds the returned teacher is exactly the burn-in model.
/// Everything is deterministic for a given `cfg.seed`, including under a
/// parallel executor.
pub fn self_train<E: TaskExecutor>(
    teacher: &BaseCallerModel,
    student: &BaseCallerModel,
    data: &SelfTrainData<'_>,
    cfg: &TrainConfig,
    pcfg: &FusionConfig,
    cb: &Codebook,
    executor: &E,
) -> Result<SelfTrainOutcome, ConfigError> {
    self_train_with_sink(teacher, student, data, cfg, pcfg, cb, executor, |_, _| {})
}

/// As [`self_train`], with a per-round observer over the generated
/// pseudo-labels (for dump files and audits).
#[allow(clippy::too_many_arguments)]
pub fn self_train_with_sink<E: TaskExecutor>(
    teacher: &BaseCallerModel,
    student: &BaseCallerModel,
    data: &SelfTrainData<'_>,
    cfg: &TrainConfig,
    pcfg: &FusionConfig,
    cb: &Codebook,
    executor: &E,
    mut round_sink: impl FnMut(usize, &[FieldPseudoLabels]),
) -> Result<SelfTrainOutcome, ConfigError> {
    if data.labeled.is_empty() {
        return Err(ConfigError("labeled set is empty".into()));
    }
    cfg.validate()?;
    pcfg.validate()?;

    let _ = teacher; // the teacher is (re)initialized from the burn-in student

    let mut burnin_rng = rng::stream(cfg.seed, "train.burnin", 0);
    let student_model = train_supervised(student, data.labeled, cfg.burn_in_epochs, cfg, &mut burnin_rng);
    let mut teacher_model = student_model.clone();
    let mut student_model = student_model;

    let total_tracks: usize = data.fields.iter().map(|b| b.tracks.len()).sum();
    let total_foreground: usize = data
        .fields
        .iter()
        .flat_map(|b| &b.tracks)
        .filter(|t| t.foreground)
        .count();
    let mut history = Vec::with_capacity(cfg.self_training_rounds + 1);
    history.push(RoundRecord {
        round: 0,
        n_tracks: total_tracks,
        n_foreground: total_foreground,
        n_confident_labels: 0,
        n_fused_labels: 0,
        n_fused_tracks: 0,
        n_all_confident_tracks: 0,
        n_abstained_tracks: 0,
        abstention_rate: 0.0,
        holdout_accuracy: data.holdout.map(|h| model_accuracy(&teacher_model, h)),
    });

    let mut labeled_order: Vec<usize> = (0..data.labeled.len()).collect();
    let mut labeled_cursor = 0usize;

    for round in 1..=cfg.self_training_rounds {
        let snapshot = teacher_model.clone();
        let results = executor.map_tasks(data.fields.len(), &|i| {
            pseudo_label_field(&snapshot, &data.fields[i], pcfg, cb, data.background_level)
        });
        round_sink(round, &results);

        let mut round_rng = rng::stream(cfg.seed, "train.round", round as u64);
        crate::model::shuffle(&mut labeled_order, &mut round_rng);

        let mut record = RoundRecord {
            round,
            n_tracks: total_tracks,
            n_foreground: 0,
            n_confident_labels: 0,
            n_fused_labels: 0,
            n_fused_tracks: 0,
            n_all_confident_tracks: 0,
            n_abstained_tracks: 0,
            abstention_rate: 0.0,
            holdout_accuracy: None,
        };

        for (fi, field_labels) in results.iter().enumerate() {
            record.n_foreground += field_labels.n_foreground;
            record.n_confident_labels += field_labels.n_confident_labels;
            record.n_fused_labels += field_labels.n_fused_labels;
            record.n_fused_tracks += field_labels.n_fused_tracks;
            record.n_all_confident_tracks += field_labels.n_all_confident_tracks;
            record.n_abstained_tracks += field_labels.n_abstained_tracks;

            // Supervised term: the next cyclic chunk of the labeled set.
            let mut labeled_batch = Vec::with_capacity(cfg.batch_size.min(data.labeled.len()));
            for _ in 0..cfg.batch_size.min(data.labeled.len()) {
                labeled_batch.push(data.labeled[labeled_order[labeled_cursor]]);
                labeled_cursor = (labeled_cursor + 1) % labeled_order.len();
            }
            let (_, grad_s) = student_model.supervised_loss(&labeled_batch);

            // Pseudo-label term on strongly augmented inputs.
            let mut grad = grad_s;
            if !field_labels.pairs.is_empty() && cfg.unlabeled_weight > 0.0 {
                let mut aug_rng = rng::stream(
                    cfg.seed,
                    "train.augment",
                    (round * data.fields.len() + fi) as u64,
                );
                let aug_pairs: Vec<(SpotFeatures, Base)> = field_labels
                    .pairs
                    .iter()
                    .map(|(x, y)| (augment_strong(x, &cfg.augment, &mut aug_rng), *y))
                    .collect();
                let (_, grad_u) =
                    student_model.pseudo_label_loss(&aug_pairs, cfg.unlabeled_weight);
                for k in 0..4 {
                    for j in 0..FEATURE_DIM + 1 {
                        grad[k][j] += grad_u[k][j];
                    }
                }
            }

            student_model = student_model
                .sgd_step(&grad, cfg.learning_rate)
                .expect("training gradients stay finite");
            teacher_model = ema_update(&teacher_model, &student_model, cfg.ema_decay);
        }

        record.abstention_rate = if record.n_foreground > 0 {
            record.n_abstained_tracks as f64 / record.n_foreground as f64
        } else {
            0.0
        };
        record.holdout_accuracy = data.holdout.map(|h| model_accuracy(&teacher_model, h));
        history.push(record);
    }

    Ok(SelfTrainOutcome {
        teacher: teacher_model,
        student: student_model,
        history,
    })
}

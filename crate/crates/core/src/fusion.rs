//! Confidence partitioning and codebook-evidence pseudo-label fusion.
//!
//! Per track, each cycle's teacher prediction is *confident* (max
//! probability above the confident threshold: its letter is pseudo-labeled
//! directly and never altered), *mediocre* (between the two thresholds:
//! its letter is resolved jointly with the codebook evidence), or
//! *discarded*. Fusion selects, among codebook entries that agree with
//! every confident letter and whose mediocre-cycle letters fall inside the
//! per-cycle top-n candidates, the entry maximizing the product of the
//! teacher probabilities over the confident and mediocre cycles. Entries
//! outside the codebook carry zero prior probability, so a sequence ruled
//! out everywhere yields an abstention rather than a fabricated label.
//!
//! Setting the confident threshold to 1.0 puts every surviving cycle in
//! the mediocre set — the regime for a teacher whose confidence cannot be
//! trusted after fitting noisy labels.

use alloc::vec::Vec;

use crate::codebook::{Base, Barcode, Codebook};
use crate::error::ConfigError;
use crate::model::{featurize_intensity, BaseCallerModel};
use crate::track::SpotTrack;

/// Decoding/fusion knobs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FusionConfig {
    /// Confident threshold: a cycle is confident when its max probability
    /// strictly exceeds this. 1.0 disables the confident set entirely.
    pub confident_threshold: f64,
    /// Mediocre threshold: cycles with max probability below this are
    /// discarded.
    pub mediocre_threshold: f64,
    /// Per mediocre cycle, candidate letters are restricted to the top-n
    /// by teacher probability (1..=4).
    pub top_n: usize,
    /// Median-objectness threshold for a track's foreground decision.
    pub objectness_threshold: f64,
    /// Matching radius (pixels) for track building.
    pub match_radius: f64,
    /// When false, codebook fusion is bypassed: only confident letters are
    /// pseudo-labeled (the location-evidence-only ablation).
    pub use_codebook: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            confident_threshold: 0.9,
            mediocre_threshold: 0.5,
            top_n: 4,
            objectness_threshold: 0.3,
            match_radius: 2.0,
            use_codebook: true,
        }
    }
}

impl FusionConfig {
    /// The noise-overfitting regime: teacher confidence is not trusted,
    /// so codebook evidence is fused into every cycle above the floor.
    pub fn distrust_confidence(mut self) -> Self {
        self.confident_threshold = 1.0;
        self.mediocre_threshold = 0.3;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.confident_threshold)
            || !(0.0..=1.0).contains(&self.mediocre_threshold)
            || self.mediocre_threshold > self.confident_threshold
        {
            return Err(ConfigError(
                "thresholds must satisfy 0 <= mediocre <= confident <= 1".into(),
            ));
        }
        if !(1..=4).contains(&self.top_n) {
            return Err(ConfigError("top_n must lie in 1..=4".into()));
        }
        if !(self.match_radius > 0.0) {
            return Err(ConfigError("match_radius must be positive".into()));
        }
        Ok(())
    }
}

/// A confidently pseudo-labeled cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CycleLabel {
    pub cycle: usize,
    pub letter: Base,
    pub probability: f64,
}

/// Disjoint split of a track's cycles by prediction confidence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfidencePartition {
    pub confident: Vec<CycleLabel>,
    pub mediocre: Vec<usize>,
    pub discarded: Vec<usize>,
}

impl ConfidencePartition {
    /// Partition per-cycle probability vectors: confident above
    /// `confident_threshold` (strict), discarded below
    /// `mediocre_threshold` (strict), mediocre in between.
    pub fn from_probs(
        probs: &[[f64; 4]],
        confident_threshold: f64,
        mediocre_threshold: f64,
    ) -> ConfidencePartition {
        Self::from_probs_with_flags(probs, &[], confident_threshold, mediocre_threshold)
    }

    /// As [`ConfidencePartition::from_probs`], but cycles flagged as
    /// interpolated are capped at mediocre regardless of probability:
    /// a slot with no real measurement is never confident.
    pub fn from_probs_with_flags(
        probs: &[[f64; 4]],
        interpolated: &[bool],
        confident_threshold: f64,
        mediocre_threshold: f64,
    ) -> ConfidencePartition {
        debug_assert!(mediocre_threshold <= confident_threshold);
        let mut out = ConfidencePartition::default();
        for (cycle, p) in probs.iter().enumerate() {
            let letter = crate::detect::argmax4(p);
            let max = p[letter.index()];
            let flagged = interpolated.get(cycle).copied().unwrap_or(false);
            if max > confident_threshold && !flagged {
                out.confident.push(CycleLabel {
                    cycle,
                    letter,
                    probability: max,
                });
            } else if max >= mediocre_threshold || flagged {
                out.mediocre.push(cycle);
            } else {
                out.discarded.push(cycle);
            }
        }
        out
    }

    pub fn confident_letter(&self, cycle: usize) -> Option<Base> {
        self.confident
            .iter()
            .find(|cl| cl.cycle == cycle)
            .map(|cl| cl.letter)
    }
}

/// Where a pseudo-barcode's letters came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PseudoLabelSource {
    /// Every cycle was confident; the codebook was not consulted.
    AllConfident,
    /// Mediocre (and discarded) cycles were resolved by a codebook entry.
    CodebookFused,
    /// No codebook entry was compatible; mediocre cycles stay unlabeled.
    Abstained,
}

/// The decoded readout of one track.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PseudoBarcode {
    /// Per-cycle resolved letters; `None` marks an unlabeled cycle.
    pub letters: Vec<Option<Base>>,
    /// Product of the teacher probabilities of the selected letters over
    /// the confident and mediocre cycles (discarded cycles excluded).
    pub score: f64,
    pub source: PseudoLabelSource,
}

impl PseudoBarcode {
    /// The full sequence, if every cycle is labeled.
    pub fn full_barcode(&self) -> Option<Barcode> {
        let letters: Option<Vec<Base>> = self.letters.iter().copied().collect();
        letters.map(|l| Barcode::new(&l))
    }
}

/// Probability of the sequence formed by independent per-cycle labels:
/// the product over cycles of the max-class probability.
pub fn track_sequence_probability(probs: &[[f64; 4]]) -> f64 {
    probs
        .iter()
        .fold(1.0, |acc, p| acc * p[crate::detect::argmax4(p).index()])
}

/// Letters allowed at a mediocre cycle: the `top_n` by teacher
/// probability, ties broken by letter order. Returned as a 4-bit mask.
fn top_n_mask(p: &[f64; 4], top_n: usize) -> u8 {
    if top_n >= 4 {
        return 0b1111;
    }
    let mut order = [0usize, 1, 2, 3];
    // Insertion sort by descending probability, stable in letter order.
    for i in 1..4 {
        let mut j = i;
        while j > 0 && p[order[j]] > p[order[j - 1]] {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut mask = 0u8;
    for &k in order.iter().take(top_n) {
        mask |= 1 << k;
    }
    mask
}

/// Fuse codebook evidence into a partitioned track readout.
///
/// Candidates are the codebook entries (targeted and trick, insertion
/// order) that agree with every confident letter and whose letter at each
/// mediocre cycle is within that cycle's top-n. The winner maximizes the
/// product of teacher probabilities over confident and mediocre cycles;
/// ties keep the earliest entry. Confident letters are never altered. If
/// all cycles are confident the codebook is not consulted, and if no
/// entry is compatible the mediocre cycles stay unlabeled.
pub fn fuse_codebook(
    partition: &ConfidencePartition,
    probs: &[[f64; 4]],
    cb: &Codebook,
    top_n: usize,
) -> PseudoBarcode {
    let n_cycles = probs.len();
    debug_assert_eq!(cb.n_cycles(), n_cycles);

    let mut letters: Vec<Option<Base>> = alloc::vec![None; n_cycles];
    for cl in &partition.confident {
        letters[cl.cycle] = Some(cl.letter);
    }

    if partition.mediocre.is_empty() && partition.confident.len() == n_cycles {
        return PseudoBarcode {
            score: confident_product(partition, probs),
            letters,
            source: PseudoLabelSource::AllConfident,
        };
    }

    // Cycle roles for the candidate scan: confident letter to match,
    // mediocre mask to satisfy, or unconstrained (discarded).
    let mut allowed = [0u8; crate::codebook::MAX_CYCLES];
    let mut in_product = alloc::vec![false; n_cycles];
    for cl in &partition.confident {
        allowed[cl.cycle] = 1 << cl.letter.index();
        in_product[cl.cycle] = true;
    }
    for &cycle in &partition.mediocre {
        allowed[cycle] = top_n_mask(&probs[cycle], top_n);
        in_product[cycle] = true;
    }
    for &cycle in &partition.discarded {
        allowed[cycle] = 0b1111;
    }

    let mut best: Option<(f64, Barcode)> = None;
    'candidates: for candidate in cb.barcodes() {
        for cycle in 0..n_cycles {
            if allowed[cycle] & (1 << candidate.base_at(cycle).index()) == 0 {
                continue 'candidates;
            }
        }
        let mut score = 1.0f64;
        for cycle in 0..n_cycles {
            if in_product[cycle] {
                score *= probs[cycle][candidate.base_at(cycle).index()];
            }
        }
        match &best {
            Some((s, _)) if *s >= score => {}
            _ => best = Some((score, candidate)),
        }
    }

    match best {
        Some((score, winner)) => PseudoBarcode {
            letters: winner.letters().map(Some).collect(),
            score,
            source: PseudoLabelSource::CodebookFused,
        },
        None => PseudoBarcode {
            score: confident_product(partition, probs),
            letters,
            source: PseudoLabelSource::Abstained,
        },
    }
}

fn confident_product(partition: &ConfidencePartition, probs: &[[f64; 4]]) -> f64 {
    // Multiplied in cycle order so independently coded checks can match
    // the rounding exactly.
    let mut score = 1.0;
    for (cycle, p) in probs.iter().enumerate() {
        if let Some(letter) = partition.confident_letter(cycle) {
            score *= p[letter.index()];
        }
    }
    score
}

/// Teacher probabilities for each cycle slot of a track.
pub fn track_probs(
    teacher: &BaseCallerModel,
    track: &SpotTrack,
    background_level: f64,
) -> Vec<[f64; 4]> {
    track
        .slots
        .iter()
        .map(|slot| teacher.predict_probs(&featurize_intensity(&slot.intensity, background_level)))
        .collect()
}

/// Decode one track: partition its teacher predictions and either fuse
/// codebook evidence or, with `use_codebook` off, keep confident letters
/// only.
pub fn decode_track(
    track: &SpotTrack,
    probs: &[[f64; 4]],
    cb: &Codebook,
    cfg: &FusionConfig,
) -> (ConfidencePartition, PseudoBarcode) {
    let flags: Vec<bool> = track.slots.iter().map(|s| s.interpolated).collect();
    let partition = ConfidencePartition::from_probs_with_flags(
        probs,
        &flags,
        cfg.confident_threshold,
        cfg.mediocre_threshold,
    );
    let call = if cfg.use_codebook {
        fuse_codebook(&partition, probs, cb, cfg.top_n)
    } else {
        let mut letters: Vec<Option<Base>> = alloc::vec![None; probs.len()];
        for cl in &partition.confident {
            letters[cl.cycle] = Some(cl.letter);
        }
        let source = if partition.confident.len() == probs.len() {
            PseudoLabelSource::AllConfident
        } else {
            PseudoLabelSource::Abstained
        };
        PseudoBarcode {
            score: confident_product(&partition, probs),
            letters,
            source,
        }
    };
    (partition, call)
}

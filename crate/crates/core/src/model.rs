//! The per-spot base caller: multinomial logistic regression over
//! hand-built channel features, with supervised and pseudo-label losses,
//! plain SGD, EMA teacher updates, and input augmentations.
//!
//! The model family is deliberately compact: the pseudo-label fusion
//! machinery only consumes probability vectors, and a closed-form
//! classifier keeps every loss and update exactly testable.

use alloc::vec::Vec;

use rand::Rng;

use crate::codebook::Base;
use crate::detect::Detection;
use crate::error::NumericalError;

/// Feature dimension: 4 sum-normalized channel intensities, 4
/// L2-normalized channel intensities, and the log total intensity.
/// All scale information lives in the last component.
pub const FEATURE_DIM: usize = 9;

/// Floor applied to the total intensity before taking its log, so
/// zero-intensity degenerates stay finite without favoring any letter.
pub const LOG_TOTAL_FLOOR: f64 = 1e-6;

/// Weight matrix shape: one row per letter, `FEATURE_DIM` columns plus a
/// trailing bias column. Gradients share the shape.
pub type WeightMatrix = [[f64; FEATURE_DIM + 1]; 4];

/// Per-(spot, cycle) feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpotFeatures(pub [f64; FEATURE_DIM]);

/// Build features from a detection's intensity readout.
///
/// The channel components are scale-free (sum- and L2-normalized after
/// background subtraction); a zero vector keeps both normalized blocks at
/// zero and clamps the log-total at `ln(LOG_TOTAL_FLOOR)`.
pub fn featurize(det: &Detection, background_level: f64) -> SpotFeatures {
    featurize_intensity(&det.intensity, background_level)
}

pub fn featurize_intensity(intensity: &[f64; 4], background_level: f64) -> SpotFeatures {
    let mut sub = [0.0f64; 4];
    for (c, &v) in intensity.iter().enumerate() {
        sub[c] = (v - background_level).max(0.0);
    }
    let total: f64 = sub.iter().sum();
    let norm2 = libm::sqrt(sub.iter().map(|v| v * v).sum());
    let mut out = [0.0f64; FEATURE_DIM];
    if total > 0.0 {
        for c in 0..4 {
            out[c] = sub[c] / total;
        }
    }
    if norm2 > 0.0 {
        for c in 0..4 {
            out[4 + c] = sub[c] / norm2;
        }
    }
    out[8] = libm::log(total.max(LOG_TOTAL_FLOOR));
    SpotFeatures(out)
}

/// Teacher/student classifier: softmax of `weights · [x; 1] / temperature`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BaseCallerModel {
    weights: WeightMatrix,
    temperature: f64,
}

impl BaseCallerModel {
    /// All-zero weights: the uniform predictor.
    pub fn zeroed() -> BaseCallerModel {
        BaseCallerModel {
            weights: [[0.0; FEATURE_DIM + 1]; 4],
            temperature: 1.0,
        }
    }

    pub fn from_weights(weights: WeightMatrix, temperature: f64) -> BaseCallerModel {
        assert!(temperature > 0.0);
        assert!(weights.iter().flatten().all(|w| w.is_finite()));
        BaseCallerModel {
            weights,
            temperature,
        }
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Class-conditional probabilities over {A, C, G, T}.
    pub fn predict_probs(&self, x: &SpotFeatures) -> [f64; 4] {
        let mut logits = [0.0f64; 4];
        for (k, row) in self.weights.iter().enumerate() {
            let mut z = row[FEATURE_DIM]; // bias
            for (j, &v) in x.0.iter().enumerate() {
                z += row[j] * v;
            }
            logits[k] = z / self.temperature;
        }
        softmax4(&logits)
    }

    /// Mean cross-entropy of the batch and its gradient w.r.t. weights.
    pub fn supervised_loss(&self, batch: &[(SpotFeatures, Base)]) -> (f64, WeightMatrix) {
        assert!(!batch.is_empty(), "loss of an empty batch is undefined");
        let mut loss = 0.0f64;
        let mut grad: WeightMatrix = [[0.0; FEATURE_DIM + 1]; 4];
        let inv_n = 1.0 / batch.len() as f64;
        for (x, label) in batch {
            let probs = self.predict_probs(x);
            loss -= libm::log(probs[label.index()].max(f64::MIN_POSITIVE));
            for k in 0..4 {
                let delta =
                    (probs[k] - if k == label.index() { 1.0 } else { 0.0 }) * inv_n / self.temperature;
                for (j, &v) in x.0.iter().enumerate() {
                    grad[k][j] += delta * v;
                }
                grad[k][FEATURE_DIM] += delta;
            }
        }
        (loss * inv_n, grad)
    }

    /// Pseudo-label (unsupervised) loss: the supervised cross-entropy on
    /// teacher-assigned letters, scaled by `unlabeled_weight`.
    pub fn pseudo_label_loss(
        &self,
        batch: &[(SpotFeatures, Base)],
        unlabeled_weight: f64,
    ) -> (f64, WeightMatrix) {
        assert!(unlabeled_weight >= 0.0);
        if unlabeled_weight == 0.0 || batch.is_empty() {
            return (0.0, [[0.0; FEATURE_DIM + 1]; 4]);
        }
        let (loss, mut grad) = self.supervised_loss(batch);
        for row in grad.iter_mut() {
            for g in row.iter_mut() {
                *g *= unlabeled_weight;
            }
        }
        (loss * unlabeled_weight, grad)
    }

    /// One plain SGD step: `weights -= learning_rate * gradient`.
    pub fn sgd_step(
        &self,
        gradient: &WeightMatrix,
        learning_rate: f64,
    ) -> Result<BaseCallerModel, NumericalError> {
        if gradient.iter().flatten().any(|g| !g.is_finite()) {
            return Err(NumericalError::NonFiniteGradient);
        }
        let mut weights = self.weights;
        for (row, grow) in weights.iter_mut().zip(gradient.iter()) {
            for (w, &g) in row.iter_mut().zip(grow.iter()) {
                *w -= learning_rate * g;
            }
        }
        Ok(BaseCallerModel {
            weights,
            temperature: self.temperature,
        })
    }
}

fn softmax4(logits: &[f64; 4]) -> [f64; 4] {
    let m = logits[0].max(logits[1]).max(logits[2]).max(logits[3]);
    let mut exps = [0.0f64; 4];
    let mut sum = 0.0;
    for (k, &z) in logits.iter().enumerate() {
        let e = libm::exp(z - m);
        exps[k] = e;
        sum += e;
    }
    for e in exps.iter_mut() {
        *e /= sum;
    }
    exps
}

/// Exponential-moving-average teacher update:
/// `teacher <- decay * teacher + (1 - decay) * student`, elementwise.
/// Weight shapes are fixed by the type, so no mismatch can occur.
pub fn ema_update(
    teacher: &BaseCallerModel,
    student: &BaseCallerModel,
    decay: f64,
) -> BaseCallerModel {
    assert!((0.0..=1.0).contains(&decay));
    let mut weights = teacher.weights;
    for (trow, srow) in weights.iter_mut().zip(student.weights.iter()) {
        for (t, &s) in trow.iter_mut().zip(srow.iter()) {
            *t = decay * *t + (1.0 - decay) * s;
        }
    }
    BaseCallerModel {
        weights,
        temperature: teacher.temperature,
    }
}

/// Strong-augmentation knobs. Zero amplitudes make the augmentation the
/// identity, bit for bit.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentConfig {
    /// Multiplicative per-channel jitter amplitude (fraction).
    pub channel_jitter: f64,
    /// Additive Gaussian noise on each feature component.
    pub feature_noise_sd: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            channel_jitter: 0.2,
            feature_noise_sd: 0.02,
        }
    }
}

/// Weak augmentation: the identity (the teacher sees inputs as they are).
pub fn augment_weak(x: &SpotFeatures) -> SpotFeatures {
    *x
}

/// Strong augmentation: reconstruct the channel intensities, apply
/// multiplicative channel jitter, re-featurize, then add feature noise.
pub fn augment_strong<R: Rng>(
    x: &SpotFeatures,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> SpotFeatures {
    let mut out = if cfg.channel_jitter > 0.0 {
        // Sum-normalized block times the exponentiated log-total restores
        // the background-subtracted intensities.
        let total = libm::exp(x.0[8]);
        let mut intensity = [0.0f64; 4];
        for c in 0..4 {
            let jitter = 1.0 + rng.gen_range(-cfg.channel_jitter..=cfg.channel_jitter);
            intensity[c] = (x.0[c] * total * jitter).max(0.0);
        }
        featurize_intensity(&intensity, 0.0)
    } else {
        *x
    };
    if cfg.feature_noise_sd > 0.0 {
        for v in out.0.iter_mut() {
            let noise: f64 = rng.sample(rand_distr::StandardNormal);
            *v += noise * cfg.feature_noise_sd;
        }
    }
    out
}

/// Shared training knobs for burn-in and self-training.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of the pseudo-label loss in the student objective.
    pub unlabeled_weight: f64,
    /// EMA decay of the teacher toward the student, in [0, 1).
    pub ema_decay: f64,
    pub batch_size: usize,
    pub burn_in_epochs: usize,
    pub self_training_rounds: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            unlabeled_weight: 1.0,
            ema_decay: 0.99,
            batch_size: 256,
            burn_in_epochs: 30,
            self_training_rounds: 5,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), crate::error::ConfigError> {
        if self.unlabeled_weight < 0.0 {
            return Err(crate::error::ConfigError(
                "unlabeled_weight must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(crate::error::ConfigError(
                "ema_decay must lie in [0, 1)".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(crate::error::ConfigError("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Supervised epochs over a labeled set with seeded shuffling. Returns
/// the trained model.
pub fn train_supervised(
    model: &BaseCallerModel,
    labeled: &[(SpotFeatures, Base)],
    epochs: usize,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> BaseCallerModel {
    let mut model = model.clone();
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    for _ in 0..epochs {
        shuffle(&mut order, rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(SpotFeatures, Base)> = chunk.iter().map(|&i| labeled[i]).collect();
            let (_, grad) = model.supervised_loss(&batch);
            model = model
                .sgd_step(&grad, cfg.learning_rate)
                .expect("finite gradient");
        }
    }
    model
}

/// Fisher-Yates with the caller's generator (kept local so `rand`'s
/// std-dependent shuffle is not needed).
pub fn shuffle<T>(items: &mut [T], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

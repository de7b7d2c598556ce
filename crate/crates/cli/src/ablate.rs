//! The ablation grid: {baseline, location evidence only, full fusion}
//! × {LQ, HQ} on one seeded well, reporting abundance R² and cell
//! recovery per cell of the grid.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{Quality, RunConfig};
use crate::error::CliError;
use crate::io;
use crate::stages;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Burn-in only: the teacher never sees unlabeled data.
    Baseline,
    /// Self-training with location consensus but no codebook fusion.
    LocationOnly,
    /// The full method: location consensus plus codebook fusion.
    Full,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Baseline, Strategy::LocationOnly, Strategy::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::LocationOnly => "location-only",
            Strategy::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub strategy: Strategy,
    pub quality: Quality,
    pub r2: Option<f64>,
    pub cell_recovery: Option<f64>,
    pub monitor_accuracy: Option<f64>,
    pub fused_pseudo_labels: u64,
}

/// Derive the variant config: same seed and well, its own output
/// subdirectory, and the strategy's training knobs. Only the learning
/// strategy differs; every variant decodes the test fields through the
/// base config's inference path.
pub fn variant_config(base: &RunConfig, strategy: Strategy, quality: Quality) -> RunConfig {
    let mut cfg = base.clone();
    cfg.quality = quality;
    cfg.out_dir = base
        .out_dir
        .join("ablate")
        .join(format!("{}_{}", quality, strategy.as_str()));
    match strategy {
        Strategy::Baseline => {
            cfg.train.self_training_rounds = 0;
        }
        Strategy::LocationOnly => {
            // Codebook fusion bypassed during pseudo-labeling; without it
            // there is nothing to resolve mediocre cycles, so this
            // variant pseudo-labels by plain confidence thresholding over
            // consensus foreground tracks.
            let mut training = cfg.fusion.clone();
            training.use_codebook = false;
            training.confident_threshold = Some(0.9);
            training.mediocre_threshold = Some(0.5);
            cfg.train.fusion = Some(training);
        }
        Strategy::Full => {}
    }
    cfg
}

pub fn cmd_ablate(base: &RunConfig) -> Result<Vec<AblationCell>, CliError> {
    let mut cells = Vec::new();
    for quality in [Quality::Lq, Quality::Hq] {
        for strategy in Strategy::ALL {
            let cfg = variant_config(base, strategy, quality);
            eprintln!("=== ablation: {} / {} ===", quality, strategy.as_str());
            let report = stages::cmd_pipeline(&cfg)?;
            let history = io::read_history(&stages::Paths::new(&cfg.out_dir).history())?;
            let fused: u64 = history.iter().map(|r| r.n_fused_labels as u64).sum();
            let monitor = history.last().and_then(|r| r.holdout_accuracy);
            cells.push(AblationCell {
                strategy,
                quality,
                r2: report.r2,
                cell_recovery: report.cell_recovery_rate,
                monitor_accuracy: monitor,
                fused_pseudo_labels: fused,
            });
        }
    }

    let csv_path: PathBuf = base.out_dir.join("ablation.csv");
    let mut csv = String::from("strategy,quality,r2,cell_recovery,monitor_accuracy,fused_pseudo_labels\n");
    for c in &cells {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.strategy.as_str(),
            c.quality,
            c.r2.map(|v| v.to_string()).unwrap_or_default(),
            c.cell_recovery.map(|v| v.to_string()).unwrap_or_default(),
            c.monitor_accuracy.map(|v| v.to_string()).unwrap_or_default(),
            c.fused_pseudo_labels
        ));
    }
    io::write_text(&csv_path, &csv)?;
    io::write_text(&base.out_dir.join("ablation.txt"), &ablation_table(&cells))?;
    eprintln!("{}", ablation_table(&cells));
    Ok(cells)
}

/// Text table mirroring the two-quality ablation layout.
pub fn ablation_table(cells: &[AblationCell]) -> String {
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "  -  ".into());
    let get = |s: Strategy, q: Quality| {
        cells
            .iter()
            .find(|c| c.strategy == s && c.quality == q)
            .expect("complete grid")
    };
    let mut out = String::new();
    out.push_str("                     LQ                    HQ\n");
    out.push_str("strategy         R2      recovery    R2      recovery\n");
    for s in Strategy::ALL {
        let lq = get(s, Quality::Lq);
        let hq = get(s, Quality::Hq);
        out.push_str(&format!(
            "{:<14}   {:>6}   {:>6}      {:>6}   {:>6}\n",
            s.as_str(),
            fmt(lq.r2),
            fmt(lq.cell_recovery),
            fmt(hq.r2),
            fmt(hq.cell_recovery),
        ));
    }
    out
}

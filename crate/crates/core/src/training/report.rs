use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalResult;
use crate::training::{EarlyStop, TrainConfig};

/// Dev metrics after one epoch (epoch 0 is the untrained starting point).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub dev_bleu: Option<f64>,
    pub dev_energy: Option<f64>,
}

impl EpochRecord {
    pub fn metric(&self, which: EarlyStop) -> Option<f64> {
        match which {
            EarlyStop::DevBleu => self.dev_bleu,
            EarlyStop::DevEnergy => self.dev_energy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub regime: String,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_checkpoint: String,
    pub best_metric: Option<f64>,
    /// Epoch at which a non-finite loss or gradient stopped training.
    pub diverged_at: Option<usize>,
    pub final_eval: Option<EvalResult>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn new(regime: &str, config: &TrainConfig) -> Self {
        Self {
            regime: regime.to_string(),
            config: config.clone(),
            epochs: Vec::new(),
            best_epoch: 0,
            best_checkpoint: checkpoint_id(0),
            best_metric: None,
            diverged_at: None,
            final_eval: None,
            notes: Vec::new(),
        }
    }

    /// Records an epoch and reports whether it is the new best (earliest
    /// epoch wins ties).
    pub fn push(&mut self, record: EpochRecord) -> bool {
        let which = self.config.early_stop;
        let value = record.metric(which);
        let better = match (value, self.best_metric) {
            (Some(v), None) => v.is_finite(),
            (Some(v), Some(b)) => match which {
                EarlyStop::DevBleu => v > b,
                EarlyStop::DevEnergy => v < b,
            },
            (None, _) => false,
        };
        if better {
            self.best_epoch = record.epoch;
            self.best_checkpoint = checkpoint_id(record.epoch);
            self.best_metric = value;
        }
        self.epochs.push(record);
        better
    }

    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Per-epoch table with right-aligned tab-separated columns, followed
    /// by `#`-prefixed summary lines.
    pub fn to_tsv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut rows = vec![vec![
            "epoch".to_string(),
            "train_loss".to_string(),
            "dev_bleu".to_string(),
            "dev_energy".to_string(),
        ]];
        for r in &self.epochs {
            rows.push(vec![r.epoch.to_string(), fmt(r.train_loss), fmt(r.dev_bleu), fmt(r.dev_energy)]);
        }
        let mut out = aligned_tsv(&rows);
        let _ = writeln!(out, "# regime\t{}", self.regime);
        let _ = writeln!(out, "# early_stop\t{}", self.config.early_stop);
        let _ = writeln!(out, "# best\t{}\t{}", self.best_checkpoint, fmt(self.best_metric));
        if let Some(e) = self.diverged_at {
            let _ = writeln!(out, "# diverged_at\t{e}");
        }
        if let Some(f) = &self.final_eval {
            let _ = writeln!(out, "# final\tbleu={:.2}\tenergy={:.4}\tn={}", f.bleu, f.mean_energy, f.n_sentences);
        }
        for n in &self.notes {
            let _ = writeln!(out, "# note\t{n}");
        }
        out
    }

    /// Writes `<prefix>.json` and `<prefix>.tsv`, returning both paths.
    pub fn save(&self, prefix: &Path) -> Result<Vec<std::path::PathBuf>> {
        let json = prefix.with_extension("json");
        let tsv = prefix.with_extension("tsv");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        std::fs::write(&tsv, self.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
        Ok(vec![json, tsv])
    }
}

pub fn checkpoint_id(epoch: usize) -> String {
    format!("epoch-{epoch}")
}

/// Tab-separated rows padded so columns line up in a terminal.
pub fn aligned_tsv(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    out
}

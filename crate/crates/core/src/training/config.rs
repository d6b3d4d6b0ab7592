use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::operators::OperatorKind;

/// Dev metric that selects the kept checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EarlyStop {
    DevBleu,
    DevEnergy,
}

impl EarlyStop {
    pub fn name(self) -> &'static str {
        match self {
            EarlyStop::DevBleu => "dev-bleu",
            EarlyStop::DevEnergy => "dev-energy",
        }
    }
}

impl fmt::Display for EarlyStop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EarlyStop {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dev-bleu" => Ok(EarlyStop::DevBleu),
            "dev-energy" => Ok(EarlyStop::DevEnergy),
            other => Err(Error::config("early_stop", format!("{other:?} is not dev-bleu | dev-energy"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_grid: Vec<f64>,
    pub epochs: usize,
    pub token_budget: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
    pub o1: OperatorKind,
    pub o2: OperatorKind,
    pub early_stop: EarlyStop,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            lr_grid: vec![5e-4, 1e-4, 5e-5, 1e-5, 5e-6, 1e-6],
            epochs: 30,
            token_budget: 1024,
            weight_decay: 0.01,
            dropout: 0.1,
            seed: 1,
            o1: OperatorKind::Sx,
            o2: OperatorKind::St,
            early_stop: EarlyStop::DevBleu,
        }
    }
}

const KEYS: [&str; 10] = [
    "lr",
    "lr_grid",
    "epochs",
    "token_budget",
    "weight_decay",
    "dropout",
    "seed",
    "o1",
    "o2",
    "early_stop",
];

/// Desk-scale starting points for the three kinds of run.
///
/// The general defaults (lr 1e-4, 1024-token batches, weight decay 0.01)
/// barely move a small model in a few hundred updates on a 2k-pair corpus,
/// so these presets use smaller batches, larger steps and no decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Teacher,
    Baseline,
    Engine,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Teacher => "teacher",
            Preset::Baseline => "nat",
            Preset::Engine => "engine",
        }
    }

    pub fn config(self) -> TrainConfig {
        let base = TrainConfig {
            token_budget: 256,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        match self {
            Preset::Teacher => TrainConfig { lr: 3e-3, epochs: 20, ..base },
            Preset::Baseline => TrainConfig { lr: 3e-3, epochs: 10, ..base },
            Preset::Engine => TrainConfig {
                lr: 1e-3,
                epochs: 10,
                early_stop: EarlyStop::DevEnergy,
                ..base
            },
        }
    }
}

impl TrainConfig {
    /// Defaults for energy training: dev-energy model selection.
    pub fn engine() -> Self {
        Self {
            early_stop: EarlyStop::DevEnergy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.lr_grid.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::config("lr_grid", "entries must be positive"));
        }
        if self.token_budget == 0 {
            return Err(Error::config("token_budget", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        Ok(())
    }

    /// Overrides every training key present in `kv`; other keys are ignored.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        if kv.contains("lr") {
            self.lr = kv.get("lr")?;
        }
        if kv.contains("lr_grid") {
            self.lr_grid = kv.get_list("lr_grid")?;
        }
        if kv.contains("epochs") {
            self.epochs = kv.get("epochs")?;
        }
        if kv.contains("token_budget") {
            self.token_budget = kv.get("token_budget")?;
        }
        if kv.contains("weight_decay") {
            self.weight_decay = kv.get("weight_decay")?;
        }
        if kv.contains("dropout") {
            self.dropout = kv.get("dropout")?;
        }
        if kv.contains("seed") {
            self.seed = kv.get("seed")?;
        }
        if kv.contains("o1") {
            self.o1 = kv.get("o1")?;
        }
        if kv.contains("o2") {
            self.o2 = kv.get("o2")?;
        }
        if kv.contains("early_stop") {
            self.early_stop = kv.get("early_stop")?;
        }
        self.validate()
    }

    pub fn from_kv(base: Self, kv: &KeyValues) -> Result<Self> {
        let mut cfg = base;
        cfg.apply(kv)?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("lr", self.lr);
        let grid: Vec<String> = self.lr_grid.iter().map(f64::to_string).collect();
        kv.set("lr_grid", grid.join(","));
        kv.set("epochs", self.epochs);
        kv.set("token_budget", self.token_budget);
        kv.set("weight_decay", self.weight_decay);
        kv.set("dropout", self.dropout);
        kv.set("seed", self.seed);
        kv.set("o1", self.o1);
        kv.set("o2", self.o2);
        kv.set("early_stop", self.early_stop);
        kv
    }

    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }
}

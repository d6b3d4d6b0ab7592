//! Command-line driver. Every subcommand reads a flat `key = value` config,
//! applies `--key value` overrides, runs one pipeline step, and records what
//! it read and wrote in a JSON manifest.

mod commands;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KeyValues;

pub const COMMANDS: [&str; 9] = [
    "gen-data",
    "train-teacher",
    "distill",
    "train-nat",
    "train-engine",
    "grid",
    "evaluate",
    "decode",
    "refine-eval",
];

pub const USAGE: &str = "\
usage: engine <command> [--config PATH] [--key value ...]

commands:
  gen-data       write synthetic train/dev/test splits and vocabularies
  train-teacher  train the autoregressive energy model
  distill        replace training targets with teacher beam outputs
  train-nat      cross-entropy training of an inference network
                 (--targets reference|distill, --arch birnn-tagger|masked-conditional)
  train-engine   train an inference network against the frozen teacher energy
  grid           energy training for every (O1, O2) operator pair
  evaluate       energy and BLEU of several networks (--regimes a,b,c)
  decode         write a network's outputs as text
  refine-eval    BLEU after each requested number of mask-predict rounds

common flags:
  --config PATH  --seed INT  --jobs INT  --o1 OP  --o2 OP  --iterations CSV
  --length-beam INT  --oracle-length BOOL  --run-dir DIR  --data-dir DIR
Any config key may be given as a flag; dashes become underscores. Keys
prefixed with teacher., nat. or engine. apply only to that kind of run.";

/// Record of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seed: u64,
    pub settings: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    fn path(run_dir: &Path, command: &str) -> PathBuf {
        run_dir.join(format!("{command}.manifest.json"))
    }
}

/// Parsed command line: the subcommand, the config file, and the merged
/// settings (file first, flags on top).
#[derive(Clone, Debug, PartialEq)]
pub struct Invocation {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub file: KeyValues,
    pub flags: KeyValues,
}

impl Invocation {
    pub fn parse(args: &[String]) -> Result<Self> {
        let command = args
            .first()
            .ok_or_else(|| Error::Invalid(format!("missing command\n\n{USAGE}")))?
            .clone();
        if !COMMANDS.contains(&command.as_str()) {
            return Err(Error::Invalid(format!("unknown command {command:?}\n\n{USAGE}")));
        }
        let mut config_path = None;
        let mut flags = KeyValues::new();
        let mut rest = args[1..].iter();
        while let Some(flag) = rest.next() {
            let name = flag
                .strip_prefix("--")
                .ok_or_else(|| Error::Invalid(format!("expected a --flag, found {flag:?}")))?;
            let value = rest
                .next()
                .ok_or_else(|| Error::config(name.replace('-', "_"), "flag needs a value"))?;
            if name == "config" {
                config_path = Some(PathBuf::from(value));
            } else {
                flags.set(name.replace('-', "_"), value);
            }
        }
        let file = match &config_path {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::new(),
        };
        Ok(Self {
            command,
            config_path,
            file,
            flags,
        })
    }

    /// Settings seen by a run of kind `section`: plain keys, then
    /// `section.`-prefixed keys, with flags overriding the file.
    pub fn settings(&self, section: Option<&str>) -> KeyValues {
        let mut out = KeyValues::new();
        for source in [&self.file, &self.flags] {
            let mut layer = KeyValues::new();
            let mut scoped = KeyValues::new();
            for (k, v) in source.iter() {
                match section.and_then(|s| k.strip_prefix(s).and_then(|r| r.strip_prefix('.'))) {
                    Some(stripped) => scoped.set(stripped, v),
                    None => layer.set(k, v),
                }
            }
            layer.merge(&scoped);
            out.merge(&layer);
        }
        out
    }
}

/// Executes a command line and returns its manifest, which is also written
/// to `<run_dir>/<command>.manifest.json`.
pub fn run(args: &[String]) -> Result<RunManifest> {
    let inv = Invocation::parse(args)?;
    let started = unix_now();
    let all = inv.settings(None);
    let run_dir = PathBuf::from(all.get_or("run_dir", "runs".to_string())?);
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let mut io = commands::Artifacts::default();
    commands::dispatch(&inv, &run_dir, &mut io)?;
    let manifest = RunManifest {
        command: inv.command.clone(),
        config_path: inv.config_path.as_ref().map(|p| p.display().to_string()),
        seed: all.get_or("seed", 1u64)?,
        settings: all.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        inputs: io.inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: io.outputs.iter().map(|p| p.display().to_string()).collect(),
        started_unix: started,
        finished_unix: unix_now(),
    };
    for p in &io.outputs {
        if !p.exists() {
            return Err(Error::Invalid(format!("artifact {} was not produced", p.display())));
        }
    }
    let path = RunManifest::path(&run_dir, &inv.command);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Entry point for the binary: runs, reports, and returns the exit code.
pub fn main_with_args(args: &[String]) -> i32 {
    if args.is_empty() || args.iter().any(|a| a == "--help" || a == "-h") {
        println!("{USAGE}");
        return if args.is_empty() { 2 } else { 0 };
    }
    match run(args) {
        Ok(m) => {
            for o in &m.outputs {
                println!("wrote {o}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[cfg(test)]
mod tests;

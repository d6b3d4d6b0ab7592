use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::Invocation;
use crate::corpus::{
    generate_synthetic, strip_eos, text_paths, ParallelCorpus, SyntheticSpec, Task, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{bleu_stripped, evaluate, EvalResult};
use crate::infnet::{Arch, InferenceNetwork};
use crate::kv::KeyValues;
use crate::teacher::TeacherModel;
use crate::training::{
    aligned_tsv, distill, max_decode_len, mix_seed, operator_grid, sweep_lr, train_engine,
    train_nat_baseline, train_teacher, ExperimentReport, Preset, TrainConfig,
};

/// Files a command read and wrote, in order.
#[derive(Default)]
pub(super) struct Artifacts {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

struct Ctx<'a> {
    inv: &'a Invocation,
    run_dir: &'a Path,
    data_dir: PathBuf,
    io: &'a mut Artifacts,
}

pub(super) fn dispatch(inv: &Invocation, run_dir: &Path, io: &mut Artifacts) -> Result<()> {
    let data_dir = PathBuf::from(inv.settings(None).get_or("data_dir", "data".to_string())?);
    let mut ctx = Ctx {
        inv,
        run_dir,
        data_dir,
        io,
    };
    match inv.command.as_str() {
        "gen-data" => gen_data(&mut ctx),
        "train-teacher" => cmd_train_teacher(&mut ctx),
        "distill" => cmd_distill(&mut ctx),
        "train-nat" => cmd_train_nat(&mut ctx),
        "train-engine" => cmd_train_engine(&mut ctx),
        "grid" => cmd_grid(&mut ctx),
        "evaluate" => cmd_evaluate(&mut ctx),
        "decode" => cmd_decode(&mut ctx),
        "refine-eval" => cmd_refine_eval(&mut ctx),
        other => Err(Error::Invalid(format!("unknown command {other:?}"))),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("{raw:?} is not a boolean"))),
    }
}

impl Ctx<'_> {
    fn settings(&self, section: Option<&str>) -> KeyValues {
        self.inv.settings(section)
    }

    fn train_config(&self, preset: Preset) -> Result<TrainConfig> {
        TrainConfig::from_kv(preset.config(), &self.settings(Some(preset.name())))
    }

    /// Path from key `key`, or `<run_dir>/<default>`.
    fn run_path(&self, kv: &KeyValues, key: &str, default: &str) -> Result<PathBuf> {
        Ok(match kv.raw(key) {
            Some(p) => PathBuf::from(p),
            None => self.run_dir.join(default),
        })
    }

    fn vocab_paths(&self) -> (PathBuf, PathBuf) {
        (self.data_dir.join("vocab.src"), self.data_dir.join("vocab.tgt"))
    }

    fn vocabs(&mut self) -> Result<(Vocabulary, Vocabulary)> {
        let (s, t) = self.vocab_paths();
        let out = (Vocabulary::load(&s)?, Vocabulary::load(&t)?);
        self.io.inputs.extend([s, t]);
        Ok(out)
    }

    fn corpus(&mut self, prefix: &Path, vocabs: &(Vocabulary, Vocabulary)) -> Result<ParallelCorpus> {
        let c = ParallelCorpus::read_text(prefix, &vocabs.0, &vocabs.1)?;
        let (s, t) = text_paths(prefix);
        self.io.inputs.extend([s, t]);
        if c.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(c)
    }

    fn split(&mut self, name: &str, vocabs: &(Vocabulary, Vocabulary)) -> Result<ParallelCorpus> {
        let prefix = self.data_dir.join(name);
        self.corpus(&prefix, vocabs)
    }

    fn teacher(&mut self, kv: &KeyValues) -> Result<TeacherModel> {
        let prefix = self.run_path(kv, "teacher", "teacher")?;
        let t = TeacherModel::load(&prefix)?;
        self.io.inputs.extend([prefix.with_extension("cfg"), prefix.with_extension("ckpt")]);
        Ok(t)
    }

    fn network(&mut self, prefix: &Path) -> Result<InferenceNetwork> {
        let n = InferenceNetwork::load(prefix)?;
        self.io.inputs.extend([prefix.with_extension("cfg"), prefix.with_extension("ckpt")]);
        Ok(n)
    }

    /// Network for a named regime: key `net.<regime>` or `<run_dir>/<regime>`.
    fn regime_network(&mut self, kv: &KeyValues, regime: &str) -> Result<InferenceNetwork> {
        let prefix = self.run_path(kv, &format!("net.{regime}"), regime)?;
        self.network(&prefix)
    }

    fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.io.outputs.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(path, text)
    }

    fn save_teacher(&mut self, model: &TeacherModel, prefix: &Path) -> Result<()> {
        model.save(prefix)?;
        self.io.outputs.extend([prefix.with_extension("ckpt"), prefix.with_extension("cfg")]);
        Ok(())
    }

    fn save_network(&mut self, net: &InferenceNetwork, prefix: &Path) -> Result<()> {
        net.save(prefix)?;
        self.io.outputs.extend([prefix.with_extension("ckpt"), prefix.with_extension("cfg")]);
        Ok(())
    }

    fn save_report(&mut self, report: &ExperimentReport, model_prefix: &Path) -> Result<()> {
        let paths = report.save(&with_suffix(model_prefix, "-report"))?;
        self.io.outputs.extend(paths);
        Ok(())
    }
}

/// Runs `train` once, or over the whole learning-rate grid when
/// `lr_sweep = true`, appending the sweep results to the report notes.
fn maybe_sweep<M>(
    kv: &KeyValues,
    cfg: &TrainConfig,
    mut train: impl FnMut(&TrainConfig) -> Result<(M, ExperimentReport)>,
) -> Result<(M, ExperimentReport)> {
    let sweep = match kv.raw("lr_sweep") {
        Some(raw) => parse_bool("lr_sweep", raw)?,
        None => false,
    };
    if !sweep {
        return train(cfg);
    }
    let (model, mut report, table) = sweep_lr(cfg, train)?;
    for (lr, metric) in table {
        let m = metric.map_or("none".to_string(), |m| format!("{m:.4}"));
        report.notes.push(format!("lr {lr}: best metric {m}"));
    }
    Ok((model, report))
}

fn gen_data(ctx: &mut Ctx) -> Result<()> {
    let kv = ctx.settings(None);
    let task: Task = kv.get_or("task", Task::ShiftedSubstitution)?;
    let seed: u64 = kv.get_or("seed", 1)?;
    let mut spec = SyntheticSpec::new(
        task,
        0,
        kv.get_or("min_len", 3)?,
        kv.get_or("max_len", 8)?,
        kv.get_or("vocab_size", 20)?,
        seed,
    );
    spec.swap_prob = kv.get_or("swap_prob", 0.0)?;
    fs::create_dir_all(&ctx.data_dir).map_err(|e| Error::io(&ctx.data_dir, e))?;
    let mut vocabs = None;
    for (i, (split, default_n)) in [("train", 2000usize), ("dev", 200), ("test", 200)].into_iter().enumerate() {
        spec.n_pairs = kv.get_or(&format!("n_{split}"), default_n)?;
        spec.seed = mix_seed(&[seed, i as u64]);
        let corpus = generate_synthetic(&spec)?;
        let prefix = ctx.data_dir.join(split);
        corpus.write_text(&prefix)?;
        let (s, t) = text_paths(&prefix);
        ctx.io.outputs.extend([s, t]);
        vocabs.get_or_insert((corpus.vocab_src, corpus.vocab_tgt));
    }
    let (vs, vt) = vocabs.expect("three splits");
    let (ps, pt) = ctx.vocab_paths();
    vs.save(&ps)?;
    vt.save(&pt)?;
    ctx.io.outputs.extend([ps, pt]);
    Ok(())
}

fn cmd_train_teacher(ctx: &mut Ctx) -> Result<()> {
    let kv = ctx.settings(Some("teacher"));
    let cfg = ctx.train_config(Preset::Teacher)?;
    let vocabs = ctx.vocabs()?;
    let train = ctx.split("train", &vocabs)?;
    let dev = ctx.split("dev", &vocabs)?;
    let (model, report) = maybe_sweep(&kv, &cfg, |c| train_teacher(&train, &dev, c))?;
    let out = ctx.run_path(&kv, "out", "teacher")?;
    ctx.save_teacher(&model, &out)?;
    ctx.save_report(&report, &out)
}

#[derive(Serialize)]
struct DistillSummary {
    pairs: usize,
    beam: usize,
    greedy_fallbacks: usize,
    truncated: usize,
    /// Share of pairs whose distilled target has teacher energy no higher
    /// than the reference target.
    not_worse_than_reference: f64,
    mean_energy_distilled: f64,
    mean_energy_reference: f64,
}

fn cmd_distill(ctx: &mut Ctx) -> Result<()> {
    let kv = ctx.settings(None);
    let beam: usize = kv.get_or("beam", 5)?;
    let teacher = ctx.teacher(&kv)?;
    let vocabs = ctx.vocabs()?;
    let train = ctx.split("train", &vocabs)?;
    let (distilled, stats) = distill(&teacher, &train, beam)?;
    let src = train.sources();
    let e_ref = teacher.energies(&src, &train.targets())?;
    let e_dis = teacher.energies(&src, &distilled.targets())?;
    let not_worse = e_dis.iter().zip(&e_ref).filter(|(d, r)| d <= r).count();
    let n = e_ref.len() as f64;
    let prefix = ctx.run_path(&kv, "out", "train.distill")?;
    distilled.write_text(&prefix)?;
    let (s, t) = text_paths(&prefix);
    ctx.io.outputs.extend([s, t]);
    let summary = DistillSummary {
        pairs: stats.pairs,
        beam,
        greedy_fallbacks: stats.greedy_fallbacks,
        truncated: stats.truncated,
        not_worse_than_reference: not_worse as f64 / n,
        mean_energy_distilled: e_dis.iter().sum::<f64>() / n,
        mean_energy_reference: e_ref.iter().sum::<f64>() / n,
    };
    ctx.write_json(with_suffix(&prefix, ".stats.json"), &summary)
}

fn cmd_train_nat(ctx: &mut Ctx) -> Result<()> {
    let kv = ctx.settings(Some("nat"));
    let cfg = ctx.train_config(Preset::Baseline)?;
    let arch: Arch = kv.get_or("arch", Arch::MaskedConditional)?;
    let targets = kv.get_or("targets", "reference".to_string())?;
    let vocabs = ctx.vocabs()?;
    let (train, default_out) = match targets.as_str() {
        "reference" => (ctx.split("train", &vocabs)?, "baseline"),
        "distill" => {
            let prefix = ctx.run_path(&kv, "distilled", "train.distill")?;
            (ctx.corpus(&prefix, &vocabs)?, "distill")
        }
        other => return Err(Error::config("targets", format!("{other:?} is not reference | distill"))),
    };
    let dev = ctx.split("dev", &vocabs)?;
    let (net, report) = maybe_sweep(&kv, &cfg, |c| train_nat_baseline(&train, &dev, arch, c))?;
    let out = ctx.run_path(&kv, "out", default_out)?;
    ctx.save_network(&net, &out)?;
    ctx.save_report(&report, &out)
}

fn check_compatible(teacher: &TeacherModel, net: &InferenceNetwork, what: &str) -> Result<()> {
    if teacher.tgt_vocab() != net.config.tgt_vocab || teacher.config.src_vocab != net.config.src_vocab {
        return Err(Error::Invalid(format!(
            "{what}: network vocabularies ({}, {}) do not match the teacher ({}, {})",
            net.config.src_vocab,
            net.config.tgt_vocab,
            teacher.config.src_vocab,
            teacher.tgt_vocab()
        )));
    }
    Ok(())
}

fn cmd_train_engine(ctx: &mut Ctx) -> Result<()> {
    let kv = ctx.settings(Some("engine"));
    let cfg = ctx.train_config(Preset::Engine)?;
    let teacher = ctx.teacher(&kv)?;
    let init_prefix = ctx.run_path(&kv, "init", "distill")?;
    let init = ctx.network(&init_prefix)?;
    check_compatible(&teacher, &init, "init")?;
    let vocabs = ctx.vocabs()?;
    let train = ctx.split("train", &vocabs)?;
    let dev = ctx.split("dev", &vocabs)?;
    let (net, report) = maybe_sweep(&kv, &cfg, |c| train_engine(&teacher, &train, &dev, &init, c))?;
    let out = ctx.run_path(&kv, "out", "engine")?;
    ctx.save_network(&net, &out)?;
    ctx.save_report(&report, &out)
}

fn cmd_grid(ctx: &mut Ctx) -> Result<()> {
    let kv = ctx.settings(Some("engine"));
    let cfg = ctx.train_config(Preset::Engine)?;
    let jobs: usize = kv.get_or("jobs", 1)?;
    if jobs == 0 {
        return Err(Error::config("jobs", "must be at least 1"));
    }
    let teacher = ctx.teacher(&kv)?;
    let init_prefix = ctx.run_path(&kv, "init", "distill")?;
    let init = ctx.network(&init_prefix)?;
    check_compatible(&teacher, &init, "init")?;
    let vocabs = ctx.vocabs()?;
    let train = ctx.split("train", &vocabs)?;
    let dev = ctx.split("dev", &vocabs)?;
    let grid = operator_grid(&teacher, &train, &dev, &init, &cfg, jobs)?;
    let out = ctx.run_path(&kv, "out", "grid")?;
    ctx.write(out.with_extension("tsv"), grid.to_tsv())?;
    ctx.write_json(out.with_extension("json"), &grid)
}

/// How networks are decoded at evaluation time.
#[derive(Clone, Copy, Debug, Serialize)]
struct DecodeSettings {
    oracle_length: bool,
    length_beam: usize,
    iterations: usize,
}

impl DecodeSettings {
    fn from_kv(kv: &KeyValues, iterations: usize) -> Result<Self> {
        let oracle_length = match kv.raw("oracle_length") {
            Some(raw) => parse_bool("oracle_length", raw)?,
            None => true,
        };
        let length_beam = kv.get_or("length_beam", 3)?;
        if length_beam == 0 {
            return Err(Error::config("length_beam", "must be at least 1"));
        }
        Ok(Self {
            oracle_length,
            length_beam,
            iterations,
        })
    }
}

fn decode_corpus(net: &InferenceNetwork, corpus: &ParallelCorpus, d: DecodeSettings) -> Result<Vec<Vec<usize>>> {
    if d.iterations == 0 {
        return Err(Error::config("iterations", "must be at least 1"));
    }
    if d.iterations > 1 && net.arch() != Arch::MaskedConditional {
        return Err(Error::RefinementArch);
    }
    let lengths: Vec<usize> = corpus.pairs.iter().map(|p| p.target.len()).collect();
    let oracle = d.oracle_length.then_some(lengths.as_slice());
    Ok(net
        .decode(&corpus.sources(), oracle, d.length_beam, d.iterations)?
        .into_iter()
        .map(|s| s.tokens)
        .collect())
}

#[derive(Serialize)]
struct EvaluateRow {
    regime: String,
    #[serde(flatten)]
    result: EvalResult,
}

#[derive(Serialize)]
struct EvaluateTable {
    split: String,
    decode: DecodeSettings,
    rows: Vec<EvaluateRow>,
}

fn cmd_evaluate(ctx: &mut Ctx) -> Result<()> {
    let kv = ctx.settings(None);
    let regimes: Vec<String> = if kv.contains("regimes") {
        kv.get_list("regimes")?
    } else {
        vec!["baseline".into(), "distill".into(), "engine".into()]
    };
    let split = kv.get_or("split", "test".to_string())?;
    let d = DecodeSettings::from_kv(&kv, kv.get_or("iterations", 1)?)?;
    let teacher = ctx.teacher(&kv)?;
    let vocabs = ctx.vocabs()?;
    let corpus = ctx.split(&split, &vocabs)?;
    let sources = corpus.sources();
    let refs = corpus.targets();
    let mut rows = Vec::new();
    for regime in &regimes {
        let hyps = if regime == "teacher" {
            let beam: usize = kv.get_or("beam", 5)?;
            let max_len = max_decode_len(&sources);
            sources
                .iter()
                .map(|s| teacher.beam_search(s, beam, max_len).map(|h| h.tokens))
                .collect::<Result<Vec<_>>>()?
        } else {
            let net = ctx.regime_network(&kv, regime)?;
            check_compatible(&teacher, &net, regime)?;
            decode_corpus(&net, &corpus, d)?
        };
        rows.push(EvaluateRow {
            regime: regime.clone(),
            result: evaluate(&teacher, &sources, &hyps, &refs)?,
        });
    }
    let mut tsv = vec![vec!["regime".to_string(), "energy".into(), "bleu".into(), "sentences".into()]];
    for r in &rows {
        tsv.push(vec![
            r.regime.clone(),
            format!("{:.3}", r.result.mean_energy),
            format!("{:.2}", r.result.bleu),
            r.result.n_sentences.to_string(),
        ]);
    }
    let out = ctx.run_path(&kv, "out", "evaluate")?;
    ctx.write(out.with_extension("tsv"), aligned_tsv(&tsv))?;
    ctx.write_json(out.with_extension("json"), &EvaluateTable { split, decode: d, rows })
}

fn cmd_decode(ctx: &mut Ctx) -> Result<()> {
    let kv = ctx.settings(None);
    let d = DecodeSettings::from_kv(&kv, kv.get_or("iterations", 1)?)?;
    let split = kv.get_or("split", "test".to_string())?;
    let net_prefix = ctx.run_path(&kv, "net", "engine")?;
    let net = ctx.network(&net_prefix)?;
    let vocabs = ctx.vocabs()?;
    let corpus = ctx.split(&split, &vocabs)?;
    if net.config.src_vocab != vocabs.0.len() || net.config.tgt_vocab != vocabs.1.len() {
        return Err(Error::Invalid("network vocabularies do not match the data".into()));
    }
    let hyps = decode_corpus(&net, &corpus, d)?;
    let mut text = String::new();
    for h in &hyps {
        text.push_str(&vocabs.1.decode(strip_eos(h)).join(" "));
        text.push('\n');
    }
    let default = format!("{}.{split}.hyp", net_prefix.file_name().and_then(|n| n.to_str()).unwrap_or("net"));
    let out = ctx.run_path(&kv, "out", &default)?;
    ctx.write(out, text)
}

#[derive(Serialize)]
struct RefineTable {
    split: String,
    oracle_length: bool,
    length_beam: usize,
    iterations: Vec<usize>,
    /// One row per regime, BLEU at each iteration count.
    rows: Vec<(String, Vec<f64>)>,
}

fn cmd_refine_eval(ctx: &mut Ctx) -> Result<()> {
    let kv = ctx.settings(None);
    let iterations: Vec<usize> = if kv.contains("iterations") {
        kv.get_list("iterations")?
    } else {
        vec![1, 10]
    };
    if iterations.is_empty() || iterations.contains(&0) {
        return Err(Error::config("iterations", "needs positive counts"));
    }
    let regimes: Vec<String> = if kv.contains("regimes") {
        kv.get_list("regimes")?
    } else {
        vec!["distill".into(), "engine".into()]
    };
    let split = kv.get_or("split", "dev".to_string())?;
    let base = DecodeSettings::from_kv(&kv, 1)?;
    let vocabs = ctx.vocabs()?;
    let corpus = ctx.split(&split, &vocabs)?;
    let refs = corpus.targets();
    let mut rows = Vec::new();
    for regime in &regimes {
        let net = ctx.regime_network(&kv, regime)?;
        if net.arch() != Arch::MaskedConditional {
            return Err(Error::Invalid(format!(
                "{regime}: refinement needs a masked-conditional network, found {}",
                net.arch()
            )));
        }
        let mut scores = Vec::with_capacity(iterations.len());
        for &it in &iterations {
            let hyps = decode_corpus(&net, &corpus, DecodeSettings { iterations: it, ..base })?;
            scores.push(bleu_stripped(&hyps, &refs)?);
        }
        rows.push((regime.clone(), scores));
    }
    let mut tsv = vec![std::iter::once("regime".to_string())
        .chain(iterations.iter().map(|i| format!("iter={i}")))
        .collect::<Vec<_>>()];
    for (r, s) in &rows {
        tsv.push(std::iter::once(r.clone()).chain(s.iter().map(|b| format!("{b:.2}"))).collect());
    }
    let out = ctx.run_path(&kv, "out", "refine")?;
    ctx.write(out.with_extension("tsv"), aligned_tsv(&tsv))?;
    let table = RefineTable {
        split,
        oracle_length: base.oracle_length,
        length_beam: base.length_beam,
        iterations,
        rows,
    };
    ctx.write_json(out.with_extension("json"), &table)
}

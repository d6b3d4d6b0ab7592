//! Teacher pretraining, the two cross-entropy regimes for inference
//! networks (references or distilled targets), energy training against a
//! frozen teacher, and the operator grid.

mod config;
mod report;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{EarlyStop, Preset, TrainConfig};
pub use report::{aligned_tsv, checkpoint_id, EpochRecord, ExperimentReport};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Bound, Graph, Matrix, ParamStore, Var};
use crate::corpus::{make_batches, Batch, ParallelCorpus, MASK};
use crate::error::{Error, Result};
use crate::eval::bleu_stripped;
use crate::infnet::{Arch, InfNetConfig, InferenceNetwork};
use crate::operators::{NoiseStream, OperatorKind};
use crate::teacher::{TeacherConfig, TeacherModel};

/// Deterministic seed derivation (splitmix64 over the parts).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Longest output the pipeline decodes for a source set.
pub fn max_decode_len(sources: &[&[usize]]) -> usize {
    2 * sources.iter().map(|s| s.len()).max().unwrap_or(0) + 2
}

trait HasParams: Clone {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl HasParams for TeacherModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl HasParams for InferenceNetwork {
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// Where a training step sits, and the seed for its randomness.
#[derive(Clone, Copy, Debug)]
struct StepCtx {
    seed: u64,
}

/// Dev metrics of one evaluation pass: `(bleu, energy)`.
type DevMetrics = (Option<f64>, Option<f64>);

fn batch_slices<'a>(corpus: &'a ParallelCorpus, batch: &Batch) -> (Vec<&'a [usize]>, Vec<&'a [usize]>) {
    let src = batch.indices.iter().map(|&i| corpus.pairs[i].source.as_slice()).collect();
    let tgt = batch.indices.iter().map(|&i| corpus.pairs[i].target.as_slice()).collect();
    (src, tgt)
}

/// Shared epoch loop: Adam over every parameter not listed in `frozen`,
/// dev evaluation after every epoch (and before the first), and the best
/// model under `cfg.early_stop` kept.
fn fit<M, L, E, A>(
    mut model: M,
    train: &ParallelCorpus,
    cfg: &TrainConfig,
    regime: &str,
    frozen: &[usize],
    mut loss: L,
    mut eval: E,
    mut after_epoch: A,
) -> Result<(M, ExperimentReport)>
where
    M: HasParams,
    L: FnMut(&M, &mut Graph, &Bound, &Batch, StepCtx) -> Result<Var>,
    E: FnMut(&M) -> Result<DevMetrics>,
    A: FnMut(&M) -> Result<()>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut report = ExperimentReport::new(regime, cfg);
    if cfg.epochs == 0 {
        return Ok((model, report));
    }
    let (dev_bleu, dev_energy) = eval(&model)?;
    report.push(EpochRecord {
        epoch: 0,
        train_loss: None,
        dev_bleu,
        dev_energy,
    });
    let mut best = model.clone();

    let trainable: Vec<usize> = (0..model.params().len()).filter(|i| !frozen.contains(i)).collect();
    let subset = |m: &M| -> Vec<Matrix> { trainable.iter().map(|&i| m.params().values()[i].clone()).collect() };
    let mut state = AdamState::new(&subset(&model));
    let adam = AdamConfig::new(cfg.lr, cfg.weight_decay);

    'epochs: for epoch in 1..=cfg.epochs {
        let batches = make_batches(train, cfg.token_budget, mix_seed(&[cfg.seed, epoch as u64]))?;
        let mut total = 0.0;
        for (index, batch) in batches.iter().enumerate() {
            let ctx = StepCtx {
                seed: mix_seed(&[cfg.seed, epoch as u64, index as u64]),
            };
            let mut g = Graph::training(ctx.seed);
            let p = model.params().bind(&mut g, true);
            let l = loss(&model, &mut g, &p, batch, ctx)?;
            let value = g.scalar(l);
            if !value.is_finite() {
                report.diverged_at = Some(epoch);
                break 'epochs;
            }
            let mut grads = g.backward(l)?;
            let all = model.params().collect_grads(&p, &mut grads);
            let grads: Vec<Matrix> = trainable.iter().map(|&i| all[i].clone()).collect();
            let mut values = subset(&model);
            match adam_step(&mut values, &grads, &mut state, &adam) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient) => {
                    report.diverged_at = Some(epoch);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            for (v, &i) in values.into_iter().zip(&trainable) {
                model.params_mut().values_mut()[i] = v;
            }
            total += value;
        }
        after_epoch(&model)?;
        let (dev_bleu, dev_energy) = eval(&model)?;
        let improved = report.push(EpochRecord {
            epoch,
            train_loss: Some(total / batches.len() as f64),
            dev_bleu,
            dev_energy,
        });
        if improved {
            best = model.clone();
        }
    }
    if let Some(e) = report.diverged_at {
        report.notes.push(format!("non-finite loss or gradient in epoch {e}; training stopped"));
    }
    Ok((best, report))
}

/// Teacher-forced cross-entropy training of a fresh teacher; the kept
/// checkpoint maximises greedy dev BLEU (or minimises dev reference
/// energy under `dev-energy`).
pub fn train_teacher(train: &ParallelCorpus, dev: &ParallelCorpus, cfg: &TrainConfig) -> Result<(TeacherModel, ExperimentReport)> {
    let mut tcfg = TeacherConfig::new(train.vocab_src.len(), train.vocab_tgt.len());
    tcfg.dropout = cfg.dropout;
    let model = TeacherModel::new(tcfg, mix_seed(&[cfg.seed, 0x7e]))?;
    train_teacher_from(model, train, dev, cfg)
}

pub fn train_teacher_from(
    model: TeacherModel,
    train: &ParallelCorpus,
    dev: &ParallelCorpus,
    cfg: &TrainConfig,
) -> Result<(TeacherModel, ExperimentReport)> {
    if dev.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dev_src = dev.sources();
    let dev_tgt = dev.targets();
    let max_len = max_decode_len(&dev_src);
    let early = cfg.early_stop;
    fit(
        model,
        train,
        cfg,
        "teacher",
        &[],
        |m: &TeacherModel, g, p, batch, _| {
            let (src, tgt) = batch_slices(train, batch);
            let (sum, count) = m.xent_loss(g, p, &src, &tgt)?;
            Ok(g.scale(sum, 1.0 / count as f64))
        },
        |m: &TeacherModel| {
            let hyps = m.greedy_decode_batch(&dev_src, max_len)?;
            let bleu = bleu_stripped(&hyps, &dev_tgt)?;
            let energy = match early {
                EarlyStop::DevEnergy => {
                    let e = m.energies(&dev_src, &dev_tgt)?;
                    Some(e.iter().sum::<f64>() / e.len() as f64)
                }
                EarlyStop::DevBleu => None,
            };
            Ok((Some(bleu), energy))
        },
        |_| Ok(()),
    )
}

/// Counters from a distillation pass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillStats {
    pub pairs: usize,
    /// Sources whose beam produced no eos-terminated hypothesis.
    pub greedy_fallbacks: usize,
    /// Outputs that still lacked eos after the fallback and were closed.
    pub truncated: usize,
}

/// Replaces every target with the teacher's beam-search output.
pub fn distill(teacher: &TeacherModel, corpus: &ParallelCorpus, beam: usize) -> Result<(ParallelCorpus, DistillStats)> {
    use crate::corpus::EOS;
    let sources = corpus.sources();
    let max_len = max_decode_len(&sources);
    let mut stats = DistillStats {
        pairs: corpus.len(),
        ..DistillStats::default()
    };
    let mut targets = Vec::with_capacity(corpus.len());
    for src in &sources {
        let h = teacher.beam_search(src, beam, max_len)?;
        let mut t = if h.tokens.last() == Some(&EOS) {
            h.tokens
        } else {
            stats.greedy_fallbacks += 1;
            teacher.greedy_decode(src, max_len)?
        };
        if t.last() != Some(&EOS) {
            stats.truncated += 1;
            t.truncate(max_len - 1);
            t.push(EOS);
        }
        targets.push(t);
    }
    Ok((corpus.with_targets(targets)?, stats))
}

/// Builds a fresh inference network sized for `train` and `dev`.
pub fn new_network(arch: Arch, train: &ParallelCorpus, dev: &ParallelCorpus, cfg: &TrainConfig) -> Result<InferenceNetwork> {
    let max_src = train.max_source_len().max(dev.max_source_len());
    let mut ncfg = InfNetConfig::new(arch, train.vocab_src.len(), train.vocab_tgt.len(), max_src);
    ncfg.dropout = cfg.dropout;
    InferenceNetwork::new(ncfg, mix_seed(&[cfg.seed, 0x1f]))
}

/// Per-position cross-entropy at oracle length plus a length loss. The
/// masked-conditional network sees each target with a uniformly drawn
/// number of masked positions and is scored only on those.
pub fn nat_loss(net: &InferenceNetwork, g: &mut Graph, p: &Bound, sources: &[&[usize]], targets: &[&[usize]], seed: u64) -> Result<Var> {
    let lengths: Vec<usize> = targets.iter().map(|t| t.len()).collect();
    if let Some(&l) = lengths.iter().find(|&&l| l > net.max_len()) {
        return Err(Error::LengthOutOfRange { len: l, max: net.max_len() });
    }
    let vocab = net.config.tgt_vocab;
    let enc = net.encode(g, p, sources)?;
    let mut scored: Vec<Vec<bool>> = lengths.iter().map(|&l| vec![true; l]).collect();
    let inputs: Option<Vec<Vec<usize>>> = (net.arch() == Arch::MaskedConditional).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        targets
            .iter()
            .zip(scored.iter_mut())
            .map(|(t, keep)| {
                let n = rng.gen_range(1..=t.len());
                let masked = sample(&mut rng, t.len(), n).into_vec();
                keep.iter_mut().for_each(|k| *k = false);
                let mut input = t.to_vec();
                for i in masked {
                    input[i] = MASK;
                    keep[i] = true;
                }
                input
            })
            .collect()
    });
    let out = net.logits(g, p, &enc, &lengths, inputs.as_deref())?;
    let mut ce = None;
    let mut count = 0usize;
    for (t, &z) in out.logits.iter().enumerate() {
        let w = Matrix::from_shape_fn((lengths.len(), vocab), |(b, v)| {
            if t < lengths[b] && scored[b][t] && targets[b][t] == v {
                -1.0
            } else {
                0.0
            }
        });
        count += (0..lengths.len()).filter(|&b| t < lengths[b] && scored[b][t]).count();
        let lp = g.log_softmax_rows(z);
        let w = g.constant(w);
        let prod = g.mul(lp, w)?;
        let s = g.sum(prod);
        ce = Some(match ce {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    let ce = g.scale(ce.expect("nonempty batch"), 1.0 / count.max(1) as f64);
    let llp = net.length_logp(g, p, &enc)?;
    let lw = Matrix::from_shape_fn((lengths.len(), net.max_len()), |(b, l)| {
        if l + 1 == lengths[b] {
            -1.0 / lengths.len() as f64
        } else {
            0.0
        }
    });
    let lw = g.constant(lw);
    let len_terms = g.mul(llp, lw)?;
    let len_loss = g.sum(len_terms);
    g.add(ce, len_loss)
}

/// Oracle-length single-pass decoding of the dev set.
fn decode_dev(net: &InferenceNetwork, dev: &ParallelCorpus) -> Result<Vec<Vec<usize>>> {
    let lengths: Vec<usize> = dev.pairs.iter().map(|p| p.target.len()).collect();
    Ok(net
        .decode_at_lengths(&dev.sources(), &lengths)?
        .into_iter()
        .map(|s| s.tokens)
        .collect())
}

/// Cross-entropy training of a fresh inference network on `train`'s targets
/// (references or a distilled corpus), selected by oracle-length dev BLEU.
pub fn train_nat_baseline(
    train: &ParallelCorpus,
    dev: &ParallelCorpus,
    arch: Arch,
    cfg: &TrainConfig,
) -> Result<(InferenceNetwork, ExperimentReport)> {
    let net = new_network(arch, train, dev, cfg)?;
    train_nat_baseline_from(net, train, dev, cfg)
}

pub fn train_nat_baseline_from(
    net: InferenceNetwork,
    train: &ParallelCorpus,
    dev: &ParallelCorpus,
    cfg: &TrainConfig,
) -> Result<(InferenceNetwork, ExperimentReport)> {
    if cfg.early_stop == EarlyStop::DevEnergy {
        return Err(Error::config("early_stop", "dev-energy needs a teacher; use dev-bleu for cross-entropy training"));
    }
    if dev.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dev_tgt = dev.targets();
    fit(
        net,
        train,
        cfg,
        "nat-baseline",
        &[],
        |m: &InferenceNetwork, g, p, batch, ctx| {
            let (src, tgt) = batch_slices(train, batch);
            nat_loss(m, g, p, &src, &tgt, ctx.seed)
        },
        |m: &InferenceNetwork| Ok((Some(bleu_stripped(&decode_dev(m, dev)?, &dev_tgt)?), None)),
        |_| Ok(()),
    )
}

/// Mean teacher energy of the network's oracle-length argmax outputs,
/// with the BLEU of the same outputs.
pub fn dev_energy_and_bleu(teacher: &TeacherModel, net: &InferenceNetwork, dev: &ParallelCorpus) -> Result<(f64, f64)> {
    let hyps = decode_dev(net, dev)?;
    let refs: Vec<&[usize]> = hyps.iter().map(Vec::as_slice).collect();
    let e = teacher.energies(&dev.sources(), &refs)?;
    let energy = e.iter().sum::<f64>() / e.len() as f64;
    Ok((energy, bleu_stripped(&hyps, &dev.targets())?))
}

/// Trains `init` to minimise the teacher's generalized energy at oracle
/// lengths, with `cfg.o1` shaping decoder inputs and `cfg.o2` the scored
/// outputs. The teacher is evaluated without dropout and never updated; its
/// parameter hash is checked after every epoch. The length head stays fixed.
pub fn train_engine(
    teacher: &TeacherModel,
    train: &ParallelCorpus,
    dev: &ParallelCorpus,
    init: &InferenceNetwork,
    cfg: &TrainConfig,
) -> Result<(InferenceNetwork, ExperimentReport)> {
    if dev.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if teacher.tgt_vocab() != init.config.tgt_vocab {
        return Err(Error::Invalid(format!(
            "teacher has {} target words, network {}",
            teacher.tgt_vocab(),
            init.config.tgt_vocab
        )));
    }
    let mut energy_model = teacher.clone();
    energy_model.config.dropout = 0.0;
    let before = teacher.params.hash();
    let mut net = init.clone();
    net.config.dropout = cfg.dropout;
    let frozen = net.length_head_params();
    let (o1, o2) = (cfg.o1, cfg.o2);
    let (net, mut report) = fit(
        net,
        train,
        cfg,
        "engine",
        &frozen,
        |m: &InferenceNetwork, g, p, batch, ctx| {
            let (src, tgt) = batch_slices(train, batch);
            let lengths: Vec<usize> = tgt.iter().map(|t| t.len()).collect();
            let enc = m.encode(g, p, &src)?;
            let out = m.logits(g, p, &enc, &lengths, None)?;
            let tp = energy_model.params.bind(g, false);
            let tenc = energy_model.encode(g, &tp, &src)?;
            let mut noise = NoiseStream::new(ctx.seed ^ 0x5eed);
            let ge = energy_model.generalized_energy(g, &tp, &tenc, &out.logits, &lengths, o1, o2, &mut noise)?;
            Ok(g.scale(ge.total, 1.0 / src.len() as f64))
        },
        |m: &InferenceNetwork| {
            let (energy, bleu) = dev_energy_and_bleu(&energy_model, m, dev)?;
            Ok((Some(bleu), Some(energy)))
        },
        |_| {
            let after = energy_model.params.hash();
            if after != before {
                return Err(Error::TeacherModified {
                    before: before.clone(),
                    after,
                });
            }
            Ok(())
        },
    )?;
    report.notes.push(format!("teacher sha256 {before}"));
    Ok((net, report))
}

/// Runs `run` once per learning rate in `cfg.lr_grid` and keeps the run
/// with the best early-stop metric (earliest rate on ties).
pub fn sweep_lr<M, F>(cfg: &TrainConfig, mut run: F) -> Result<(M, ExperimentReport, Vec<(f64, Option<f64>)>)>
where
    F: FnMut(&TrainConfig) -> Result<(M, ExperimentReport)>,
{
    if cfg.lr_grid.is_empty() {
        return Err(Error::config("lr_grid", "empty"));
    }
    let mut best: Option<(M, ExperimentReport)> = None;
    let mut table = Vec::new();
    for &lr in &cfg.lr_grid {
        let mut c = cfg.clone();
        c.lr = lr;
        let (m, r) = run(&c)?;
        table.push((lr, r.best_metric));
        let better = match (&best, r.best_metric) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some((_, b)), Some(v)) => match (b.best_metric, cfg.early_stop) {
                (None, _) => true,
                (Some(bv), EarlyStop::DevBleu) => v > bv,
                (Some(bv), EarlyStop::DevEnergy) => v < bv,
            },
        };
        if better {
            best = Some((m, r));
        }
    }
    let (m, r) = best.expect("nonempty grid");
    Ok((m, r, table))
}

/// One `(O1, O2)` cell of the operator grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub o1: OperatorKind,
    pub o2: OperatorKind,
    pub dev_energy: Option<f64>,
    pub dev_bleu: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub config: TrainConfig,
    /// Row-major: rows O1, columns O2, both in `OperatorKind::ALL` order.
    pub cells: Vec<GridCell>,
}

impl GridReport {
    pub fn cell(&self, o1: OperatorKind, o2: OperatorKind) -> &GridCell {
        self.cells
            .iter()
            .find(|c| c.o1 == o1 && c.o2 == o2)
            .expect("grid holds every pair")
    }

    /// Mean dev energy over the finished cells of row `o1`.
    pub fn row_mean_energy(&self, o1: OperatorKind) -> Option<f64> {
        let e: Vec<f64> = self.cells.iter().filter(|c| c.o1 == o1).filter_map(|c| c.dev_energy).collect();
        (!e.is_empty()).then(|| e.iter().sum::<f64>() / e.len() as f64)
    }

    pub fn min_energy(&self) -> Option<f64> {
        self.cells.iter().filter_map(|c| c.dev_energy).reduce(f64::min)
    }

    /// `energy (bleu)` cells with `sx/stl/sg/st/gx` row and column headers.
    pub fn to_tsv(&self) -> String {
        let mut rows = vec![std::iter::once("o1\\o2".to_string())
            .chain(OperatorKind::ALL.iter().map(|k| k.name().to_string()))
            .collect::<Vec<_>>()];
        for o1 in OperatorKind::ALL {
            let mut row = vec![o1.name().to_string()];
            for o2 in OperatorKind::ALL {
                let c = self.cell(o1, o2);
                row.push(match (c.dev_energy, c.dev_bleu) {
                    (Some(e), Some(b)) => format!("{e:.2} ({b:.1})"),
                    _ => "failed".to_string(),
                });
            }
            rows.push(row);
        }
        aligned_tsv(&rows)
    }
}

/// One energy-training run per operator pair, identical otherwise. Cells
/// run on up to `jobs` threads; a failing cell is recorded and the rest
/// continue. Each cell reports its best-checkpoint dev energy and BLEU.
pub fn operator_grid(
    teacher: &TeacherModel,
    train: &ParallelCorpus,
    dev: &ParallelCorpus,
    init: &InferenceNetwork,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<GridReport> {
    let pairs: Vec<(OperatorKind, OperatorKind)> = OperatorKind::ALL
        .iter()
        .flat_map(|&a| OperatorKind::ALL.iter().map(move |&b| (a, b)))
        .collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<GridCell>>> = Mutex::new(vec![None; pairs.len()]);
    let run_cell = |(o1, o2): (OperatorKind, OperatorKind)| -> GridCell {
        let mut c = cfg.clone();
        c.o1 = o1;
        c.o2 = o2;
        c.early_stop = EarlyStop::DevEnergy;
        match train_engine(teacher, train, dev, init, &c) {
            Ok((_, r)) => {
                let best = r.best_record().cloned();
                let failed = r.diverged_at.map(|e| format!("diverged in epoch {e}"));
                GridCell {
                    o1,
                    o2,
                    dev_energy: best.as_ref().and_then(|b| b.dev_energy),
                    dev_bleu: best.as_ref().and_then(|b| b.dev_bleu),
                    error: failed,
                }
            }
            Err(e) => GridCell {
                o1,
                o2,
                dev_energy: None,
                dev_bleu: None,
                error: Some(e.to_string()),
            },
        }
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, pairs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= pairs.len() {
                    break;
                }
                let cell = run_cell(pairs[i]);
                results.lock().expect("no poisoned workers")[i] = Some(cell);
            });
        }
    });
    let cells = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect();
    Ok(GridReport {
        config: cfg.clone(),
        cells,
    })
}

#[cfg(test)]
mod tests;

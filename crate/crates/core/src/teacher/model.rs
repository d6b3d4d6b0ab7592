use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, Matrix, ParamId, ParamStore, Var};
use crate::corpus::{BOS, PAD};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::layers::{attend, attention_bias, masked_mean, BiLstm, Linear, Lstm, LstmState};
use crate::operators::{apply_on_graph, sample_gumbel_matrix, NoiseStream, OperatorKind};

const SIMPLEX_TOL: f64 = 1e-6;
/// Sentences per chunk when scoring many pairs at once.
const SCORE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub emb: usize,
    /// Units per direction of the bidirectional encoder.
    pub enc_hidden: usize,
    /// Decoder units; equal to `2 * enc_hidden` so decoder states can
    /// attend directly over encoder outputs.
    pub dec_hidden: usize,
    pub dropout: f64,
}

impl TeacherConfig {
    pub fn new(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            src_vocab,
            tgt_vocab,
            emb: 32,
            enc_hidden: 32,
            dec_hidden: 64,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dec_hidden != 2 * self.enc_hidden {
            return Err(Error::config(
                "dec_hidden",
                format!("must equal 2 * enc_hidden ({})", 2 * self.enc_hidden),
            ));
        }
        if self.src_vocab == 0 || self.tgt_vocab == 0 {
            return Err(Error::config("tgt_vocab", "vocabularies must be nonempty"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("kind", "teacher");
        kv.set("src_vocab", self.src_vocab);
        kv.set("tgt_vocab", self.tgt_vocab);
        kv.set("emb", self.emb);
        kv.set("enc_hidden", self.enc_hidden);
        kv.set("dec_hidden", self.dec_hidden);
        kv.set("dropout", self.dropout);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let kind = kv.require("kind")?;
        if kind != "teacher" {
            return Err(Error::config("kind", format!("expected teacher, found {kind}")));
        }
        let cfg = Self {
            src_vocab: kv.get("src_vocab")?,
            tgt_vocab: kv.get("tgt_vocab")?,
            emb: kv.get("emb")?,
            enc_hidden: kv.get("enc_hidden")?,
            dec_hidden: kv.get("dec_hidden")?,
            dropout: kv.get("dropout")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Autoregressive encoder-decoder defining `E(x, y) = -log p(y | x)`.
#[derive(Clone, Debug)]
pub struct TeacherModel {
    pub config: TeacherConfig,
    pub params: ParamStore,
    src_emb: ParamId,
    tgt_emb: ParamId,
    encoder: BiLstm,
    init: Linear,
    decoder: Lstm,
    combine: Linear,
    output: Linear,
}

/// Encoder outputs for a batch of sources, attended to at every step.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub keys: Vec<Var>,
    pub bias: Matrix,
    pub init: LstmState,
}

impl Encoded {
    pub fn batch(&self) -> usize {
        self.bias.nrows()
    }

    /// Reorders (or replicates) batch rows, e.g. for beam hypotheses.
    pub fn select_rows(&self, g: &mut Graph, rows: &[usize]) -> Result<Self> {
        let keys = self
            .keys
            .iter()
            .map(|&k| g.gather_rows(k, rows))
            .collect::<Result<_>>()?;
        Ok(Self {
            keys,
            bias: self.bias.select(ndarray::Axis(0), rows),
            init: LstmState {
                h: g.gather_rows(self.init.h, rows)?,
                c: g.gather_rows(self.init.c, rows)?,
            },
        })
    }
}

/// Decoder recurrent state plus the previous attentional vector, which is
/// fed back as part of the next input. Stepping never mutates a state; it
/// returns a new one.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub lstm: LstmState,
    pub feed: Var,
}

impl DecoderState {
    pub fn select_rows(&self, g: &mut Graph, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            lstm: LstmState {
                h: g.gather_rows(self.lstm.h, rows)?,
                c: g.gather_rows(self.lstm.c, rows)?,
            },
            feed: g.gather_rows(self.feed, rows)?,
        })
    }
}

/// Result of scoring logits under the generalized energy.
#[derive(Clone, Debug)]
pub struct GeneralizedEnergy {
    /// Sum over the batch, as a differentiable `1 x 1` node.
    pub total: Var,
    pub per_sentence: Vec<f64>,
    /// Local energies `e_t` per sentence, one entry per position.
    pub local: Vec<Vec<f64>>,
}

/// Right-pads token rows and returns the padded rows with a 0/1 mask.
pub(crate) fn pad_rows(seqs: &[&[usize]]) -> (Vec<Vec<usize>>, Matrix) {
    let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut mask = Matrix::zeros((seqs.len(), width));
    let rows = seqs
        .iter()
        .enumerate()
        .map(|(b, s)| {
            mask.row_mut(b).slice_mut(ndarray::s![..s.len()]).fill(1.0);
            let mut r = s.to_vec();
            r.resize(width, PAD);
            r
        })
        .collect();
    (rows, mask)
}

pub(crate) fn column(rows: &[Vec<usize>], t: usize) -> Vec<usize> {
    rows.iter().map(|r| r[t]).collect()
}

pub(crate) fn one_hot(rows: usize, cols: usize, index: usize) -> Matrix {
    let mut m = Matrix::zeros((rows, cols));
    m.column_mut(index).fill(1.0);
    m
}

impl TeacherModel {
    pub fn new(config: TeacherConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = &config;
        let src_emb = params.add_glorot("src_emb", c.src_vocab, c.emb, &mut rng);
        let tgt_emb = params.add_glorot("tgt_emb", c.tgt_vocab, c.emb, &mut rng);
        let encoder = BiLstm::new(&mut params, "enc", c.emb, c.enc_hidden, &mut rng);
        let init = Linear::new(&mut params, "init", 2 * c.enc_hidden, c.dec_hidden, &mut rng);
        let decoder = Lstm::new(&mut params, "dec", c.emb + c.dec_hidden, c.dec_hidden, &mut rng);
        let combine = Linear::new(&mut params, "combine", c.dec_hidden + 2 * c.enc_hidden, c.dec_hidden, &mut rng);
        let output = Linear::new(&mut params, "out", c.dec_hidden, c.tgt_vocab, &mut rng);
        Ok(Self {
            config,
            params,
            src_emb,
            tgt_emb,
            encoder,
            init,
            decoder,
            combine,
            output,
        })
    }

    pub fn tgt_vocab(&self) -> usize {
        self.config.tgt_vocab
    }

    /// Zeroes the output projection so every next-token distribution is
    /// uniform.
    pub fn zero_output_projection(&mut self) {
        for name in ["out.w", "out.b"] {
            let idx = self.params.names().iter().position(|n| n == name).expect("output layer");
            self.params.values_mut()[idx].fill(0.0);
        }
    }

    pub fn save(&self, prefix: &Path) -> Result<()> {
        self.params.save(&prefix.with_extension("ckpt"))?;
        self.config.to_kv().save(&prefix.with_extension("cfg"))
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let cfg_path = prefix.with_extension("cfg");
        let config = TeacherConfig::from_kv(&KeyValues::load(&cfg_path)?)?;
        let mut model = Self::new(config, 0)?;
        let ckpt = prefix.with_extension("ckpt");
        let stored = ParamStore::load(&ckpt)?;
        model.params.assign_from(&stored, &ckpt)?;
        Ok(model)
    }

    pub fn encode(&self, g: &mut Graph, p: &Bound, sources: &[&[usize]]) -> Result<Encoded> {
        if sources.is_empty() || sources.iter().any(|s| s.is_empty()) {
            return Err(Error::Invalid("teacher cannot encode an empty source".into()));
        }
        let (rows, mask) = pad_rows(sources);
        let rate = self.config.dropout;
        let mut inputs = Vec::with_capacity(mask.ncols());
        for t in 0..mask.ncols() {
            let e = g.gather_rows(p[self.src_emb], &column(&rows, t))?;
            inputs.push(g.dropout(e, rate));
        }
        let keys = self.encoder.run(g, p, &inputs, &mask)?;
        let pooled = masked_mean(g, &keys, &mask)?;
        let h0 = self.init.forward(g, p, pooled)?;
        let h0 = g.tanh(h0);
        let c0 = g.constant(Matrix::zeros((sources.len(), self.config.dec_hidden)));
        Ok(Encoded {
            keys,
            bias: attention_bias(&mask),
            init: LstmState { h: h0, c: c0 },
        })
    }

    pub fn initial_state(&self, g: &mut Graph, enc: &Encoded) -> DecoderState {
        let feed = g.constant(Matrix::zeros((enc.batch(), self.config.dec_hidden)));
        DecoderState { lstm: enc.init, feed }
    }

    /// Expected target embedding `input · E` for a `batch x |V|` node.
    pub fn embed(&self, g: &mut Graph, p: &Bound, input: Var) -> Result<Var> {
        check_simplex(g.value(input))?;
        g.matmul(input, p[self.tgt_emb])
    }

    /// Embedding lookup for discrete inputs.
    pub fn embed_tokens(&self, g: &mut Graph, p: &Bound, tokens: &[usize]) -> Result<Var> {
        g.gather_rows(p[self.tgt_emb], tokens)
    }

    /// One decoder step from an embedded input. Returns next-token
    /// log-probabilities (`batch x |V|`) and the new state.
    pub fn step_embedded(
        &self,
        g: &mut Graph,
        p: &Bound,
        enc: &Encoded,
        state: &DecoderState,
        embedded: Var,
    ) -> Result<(Var, DecoderState)> {
        let x = g.dropout(embedded, self.config.dropout);
        let x = g.concat_cols(&[x, state.feed])?;
        let lstm = self.decoder.step(g, p, x, state.lstm)?;
        let ctx = attend(g, lstm.h, &enc.keys, &enc.bias)?;
        let both = g.concat_cols(&[lstm.h, ctx])?;
        let hidden = self.combine.forward(g, p, both)?;
        let feed = g.tanh(hidden);
        let hidden = g.dropout(feed, self.config.dropout);
        let logits = self.output.forward(g, p, hidden)?;
        Ok((g.log_softmax_rows(logits), DecoderState { lstm, feed }))
    }

    /// Decoder step on distribution-valued inputs (rows on the simplex).
    pub fn step(
        &self,
        g: &mut Graph,
        p: &Bound,
        enc: &Encoded,
        state: &DecoderState,
        input: Var,
    ) -> Result<(Var, DecoderState)> {
        let e = self.embed(g, p, input)?;
        self.step_embedded(g, p, enc, state, e)
    }

    pub fn step_tokens(
        &self,
        g: &mut Graph,
        p: &Bound,
        enc: &Encoded,
        state: &DecoderState,
        tokens: &[usize],
    ) -> Result<(Var, DecoderState)> {
        let e = self.embed_tokens(g, p, tokens)?;
        self.step_embedded(g, p, enc, state, e)
    }

    /// Teacher-forced token cross-entropy summed over non-pad target
    /// positions, plus the token count.
    pub fn xent_loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        sources: &[&[usize]],
        targets: &[&[usize]],
    ) -> Result<(Var, usize)> {
        let enc = self.encode(g, p, sources)?;
        let (rows, mask) = pad_rows(targets);
        let batch = targets.len();
        let mut state = self.initial_state(g, &enc);
        let mut total = None;
        for t in 0..mask.ncols() {
            let inputs = if t == 0 { vec![BOS; batch] } else { column(&rows, t - 1) };
            let (logp, next) = self.step_tokens(g, p, &enc, &state, &inputs)?;
            state = next;
            let pick = Matrix::from_shape_fn(g.shape(logp), |(b, v)| {
                if v == rows[b][t] && mask[[b, t]] > 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
            let pick = g.constant(pick);
            let term = g.mul(logp, pick)?;
            let term = g.sum(term);
            total = Some(match total {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let tokens = mask.sum() as usize;
        Ok((total.expect("nonempty targets"), tokens))
    }

    /// `E(x, y) = -sum_t log p(y_t | y_<t, x)` with `y_0 = bos`.
    pub fn energy(&self, source: &[usize], target: &[usize]) -> Result<f64> {
        Ok(self.energies(&[source], &[target])?[0])
    }

    /// Energies of many pairs, scored in chunks.
    pub fn energies(&self, sources: &[&[usize]], targets: &[&[usize]]) -> Result<Vec<f64>> {
        Ok(self
            .local_energies(sources, targets)?
            .into_iter()
            .map(|local| local.into_iter().fold(0.0, |acc, e| acc + e))
            .collect())
    }

    /// Per-position `-log p(y_t | y_<t, x)` for each pair.
    pub fn local_energies(&self, sources: &[&[usize]], targets: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        if sources.len() != targets.len() {
            return Err(Error::Invalid(format!(
                "{} sources but {} targets",
                sources.len(),
                targets.len()
            )));
        }
        if let Some(i) = targets.iter().position(|t| t.is_empty()) {
            return Err(Error::Invalid(format!("target {i} is empty")));
        }
        let mut out = Vec::with_capacity(sources.len());
        for (src, tgt) in sources.chunks(SCORE_CHUNK).zip(targets.chunks(SCORE_CHUNK)) {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let enc = self.encode(&mut g, &p, src)?;
            let (rows, mask) = pad_rows(tgt);
            let mut state = self.initial_state(&mut g, &enc);
            let mut local: Vec<Vec<f64>> = tgt.iter().map(|t| Vec::with_capacity(t.len())).collect();
            for t in 0..mask.ncols() {
                let inputs = if t == 0 { vec![BOS; tgt.len()] } else { column(&rows, t - 1) };
                let (logp, next) = self.step_tokens(&mut g, &p, &enc, &state, &inputs)?;
                state = next;
                let lp = g.value(logp);
                for (b, seq) in tgt.iter().enumerate() {
                    if t < seq.len() {
                        local[b].push(-lp[[b, seq[t]]]);
                    }
                }
            }
            out.extend(local);
        }
        Ok(out)
    }

    /// Generalized energy of a batch whose target positions are given as
    /// logits `z_1..z_T` (one `batch x |V|` node per position). Row `b`
    /// contributes its first `lengths[b]` positions. Position `t` reads
    /// `O1(z_{t-1})` as decoder input (bos one-hot for `t = 1`) and scores
    /// the decoder's log-distribution with `O2(z_t)`.
    #[allow(clippy::too_many_arguments)]
    pub fn generalized_energy(
        &self,
        g: &mut Graph,
        p: &Bound,
        enc: &Encoded,
        logits: &[Var],
        lengths: &[usize],
        o1: OperatorKind,
        o2: OperatorKind,
        noise: &mut NoiseStream,
    ) -> Result<GeneralizedEnergy> {
        let steps = lengths.iter().copied().max().unwrap_or(0);
        if steps == 0 || lengths.contains(&0) {
            return Err(Error::Invalid("generalized energy needs T >= 1".into()));
        }
        if logits.len() < steps {
            return Err(Error::Invalid(format!(
                "{} logit positions for length {steps}",
                logits.len()
            )));
        }
        let batch = lengths.len();
        let vocab = self.config.tgt_vocab;
        let mut state = self.initial_state(g, enc);
        let mut input = g.constant(one_hot(batch, vocab, BOS));
        let mut total = None;
        let mut local = vec![Vec::new(); batch];
        for t in 0..steps {
            let (logp, next) = self.step(g, p, enc, &state, input)?;
            state = next;
            let z = logits[t];
            let n2 = o2.needs_noise().then(|| sample_gumbel_matrix(batch, vocab, noise));
            let out = apply_on_graph(g, o2, z, n2.as_ref())?;
            let e = g.row_dot(out, logp)?;
            let valid = Matrix::from_shape_fn((batch, 1), |(b, _)| if t < lengths[b] { -1.0 } else { 0.0 });
            let e = g.scale_rows(e, valid)?;
            for (b, row) in local.iter_mut().enumerate() {
                if t < lengths[b] {
                    row.push(g.value(e)[[b, 0]]);
                }
            }
            let s = g.sum(e);
            total = Some(match total {
                None => s,
                Some(acc) => g.add(acc, s)?,
            });
            if t + 1 < steps {
                let n1 = o1.needs_noise().then(|| sample_gumbel_matrix(batch, vocab, noise));
                input = apply_on_graph(g, o1, z, n1.as_ref())?;
            }
        }
        let per_sentence = local.iter().map(|l| l.iter().fold(0.0, |a, e| a + e)).collect();
        Ok(GeneralizedEnergy {
            total: total.expect("steps >= 1"),
            per_sentence,
            local,
        })
    }

    /// Generalized energy of one source against a `T x |V|` logit node.
    pub fn generalized_energy_single(
        &self,
        g: &mut Graph,
        p: &Bound,
        source: &[usize],
        z: Var,
        o1: OperatorKind,
        o2: OperatorKind,
        noise: &mut NoiseStream,
    ) -> Result<Var> {
        let (steps, vocab) = g.shape(z);
        if vocab != self.config.tgt_vocab {
            return Err(Error::ShapeMismatch {
                op: "generalized_energy",
                left: (steps, vocab),
                right: (steps, self.config.tgt_vocab),
            });
        }
        let enc = self.encode(g, p, &[source])?;
        let rows = (0..steps).map(|t| g.gather_rows(z, &[t])).collect::<Result<Vec<_>>>()?;
        Ok(self
            .generalized_energy(g, p, &enc, &rows, &[steps], o1, o2, noise)?
            .total)
    }

    /// Opens a single-source decoding session for step-by-step queries.
    pub fn session(&self, source: &[usize]) -> Result<TeacherSession<'_>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let enc = self.encode(&mut g, &p, &[source])?;
        Ok(TeacherSession {
            model: self,
            g,
            p,
            enc,
        })
    }
}

fn check_simplex(m: &Matrix) -> Result<()> {
    for (row, r) in m.rows().into_iter().enumerate() {
        let sum = r.sum();
        let min = r.fold(f64::INFINITY, |a, &b| a.min(b));
        if (sum - 1.0).abs() > SIMPLEX_TOL || min < -SIMPLEX_TOL || !sum.is_finite() {
            return Err(Error::NotOnSimplex { row, sum, min });
        }
    }
    Ok(())
}

/// Step-by-step access to the decoder for one source sentence.
pub struct TeacherSession<'a> {
    model: &'a TeacherModel,
    g: Graph,
    p: Bound,
    enc: Encoded,
}

impl TeacherSession<'_> {
    pub fn initial_state(&mut self) -> DecoderState {
        self.model.initial_state(&mut self.g, &self.enc)
    }

    fn input_row(&mut self, input: &[f64]) -> Result<Var> {
        let v = self.model.tgt_vocab();
        if input.len() != v {
            return Err(Error::ShapeMismatch {
                op: "decoder_step",
                left: (1, input.len()),
                right: (1, v),
            });
        }
        let m = Matrix::from_shape_vec((1, v), input.to_vec()).expect("row");
        Ok(self.g.constant(m))
    }

    /// Expected embedding of a distribution over target tokens.
    pub fn embed(&mut self, input: &[f64]) -> Result<Vec<f64>> {
        let x = self.input_row(input)?;
        let e = self.model.embed(&mut self.g, &self.p, x)?;
        Ok(self.g.value(e).iter().copied().collect())
    }

    /// `log p(. | prefix, x)` after feeding `input` from `state`.
    pub fn step(&mut self, state: &DecoderState, input: &[f64]) -> Result<(Vec<f64>, DecoderState)> {
        let x = self.input_row(input)?;
        let (logp, next) = self.model.step(&mut self.g, &self.p, &self.enc, state, x)?;
        Ok((self.g.value(logp).iter().copied().collect(), next))
    }

    pub fn step_token(&mut self, state: &DecoderState, token: usize) -> Result<(Vec<f64>, DecoderState)> {
        let (logp, next) = self
            .model
            .step_tokens(&mut self.g, &self.p, &self.enc, state, &[token])?;
        Ok((self.g.value(logp).iter().copied().collect(), next))
    }
}

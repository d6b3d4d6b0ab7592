use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, Matrix, ParamId, ParamStore, Var};
use crate::corpus::MASK;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::layers::{attend, attention_bias, masked_mean, BiLstm, Linear};
use crate::teacher::{column, pad_rows};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    BirnnTagger,
    MaskedConditional,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::BirnnTagger => "birnn-tagger",
            Arch::MaskedConditional => "masked-conditional",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "birnn-tagger" => Ok(Arch::BirnnTagger),
            "masked-conditional" => Ok(Arch::MaskedConditional),
            other => Err(Error::config(
                "arch",
                format!("{other:?} is not birnn-tagger | masked-conditional"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfNetConfig {
    pub arch: Arch,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub emb: usize,
    /// Units per direction of both recurrent stacks.
    pub hidden: usize,
    /// Largest target length the network can emit (`L_max`).
    pub max_len: usize,
    pub dropout: f64,
}

impl InfNetConfig {
    /// Defaults with `L_max = 2 * max_source_len + 2`.
    pub fn new(arch: Arch, src_vocab: usize, tgt_vocab: usize, max_source_len: usize) -> Self {
        Self {
            arch,
            src_vocab,
            tgt_vocab,
            emb: 32,
            hidden: 32,
            max_len: 2 * max_source_len + 2,
            dropout: 0.1,
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("kind", "infnet");
        kv.set("arch", self.arch);
        kv.set("src_vocab", self.src_vocab);
        kv.set("tgt_vocab", self.tgt_vocab);
        kv.set("emb", self.emb);
        kv.set("hidden", self.hidden);
        kv.set("max_len", self.max_len);
        kv.set("dropout", self.dropout);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let kind = kv.require("kind")?;
        if kind != "infnet" {
            return Err(Error::config("kind", format!("expected infnet, found {kind}")));
        }
        Ok(Self {
            arch: kv.get("arch")?,
            src_vocab: kv.get("src_vocab")?,
            tgt_vocab: kv.get("tgt_vocab")?,
            emb: kv.get("emb")?,
            hidden: kv.get("hidden")?,
            max_len: kv.get("max_len")?,
            dropout: kv.get("dropout")?,
        })
    }
}

/// Non-autoregressive network producing one logit vector per target
/// position for a requested length, plus a distribution over lengths.
///
/// Each target position `t` of a length-`L` output starts from position
/// embeddings of `t` and `L - 1 - t` (and, for the masked-conditional
/// architecture, the embedding of the observed or masked token), runs a
/// bidirectional LSTM across positions, and attends over the encoded
/// source with the resulting state as query.
#[derive(Clone, Debug)]
pub struct InferenceNetwork {
    pub config: InfNetConfig,
    pub params: ParamStore,
    src_emb: ParamId,
    tok_emb: Option<ParamId>,
    pos_emb: ParamId,
    rpos_emb: ParamId,
    encoder: BiLstm,
    positions: BiLstm,
    readout: Linear,
    output: Linear,
    length_head: Linear,
}

/// Encoded sources shared by the token and length heads.
#[derive(Clone, Debug)]
pub struct SourceEncoding {
    pub keys: Vec<Var>,
    pub bias: Matrix,
    pub pooled: Var,
}

/// Time-major logits for a batch: `logits[t]` is `batch x |V|`.
#[derive(Clone, Debug)]
pub struct NetOutput {
    pub logits: Vec<Var>,
    pub lengths: Vec<usize>,
}

impl InferenceNetwork {
    pub fn new(config: InfNetConfig, seed: u64) -> Result<Self> {
        if config.max_len == 0 {
            return Err(Error::config("max_len", "must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = &config;
        let src_emb = params.add_glorot("src_emb", c.src_vocab, c.emb, &mut rng);
        let tok_emb = (c.arch == Arch::MaskedConditional)
            .then(|| params.add_glorot("tok_emb", c.tgt_vocab, c.emb, &mut rng));
        let pos_emb = params.add_glorot("pos_emb", c.max_len, c.emb, &mut rng);
        let rpos_emb = params.add_glorot("rpos_emb", c.max_len, c.emb, &mut rng);
        let encoder = BiLstm::new(&mut params, "enc", c.emb, c.hidden, &mut rng);
        let positions = BiLstm::new(&mut params, "pos", c.emb, c.hidden, &mut rng);
        let readout = Linear::new(&mut params, "readout", 4 * c.hidden, 2 * c.hidden, &mut rng);
        let output = Linear::new(&mut params, "out", 2 * c.hidden, c.tgt_vocab, &mut rng);
        let length_head = Linear::new(&mut params, "length", 2 * c.hidden, c.max_len, &mut rng);
        Ok(Self {
            config,
            params,
            src_emb,
            tok_emb,
            pos_emb,
            rpos_emb,
            encoder,
            positions,
            readout,
            output,
            length_head,
        })
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn max_len(&self) -> usize {
        self.config.max_len
    }

    /// Indices of the length-head parameters (held fixed during energy
    /// training).
    pub fn length_head_params(&self) -> Vec<usize> {
        self.params
            .names()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with("length."))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn save(&self, prefix: &Path) -> Result<()> {
        self.params.save(&prefix.with_extension("ckpt"))?;
        self.config.to_kv().save(&prefix.with_extension("cfg"))
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let config = InfNetConfig::from_kv(&KeyValues::load(&prefix.with_extension("cfg"))?)?;
        let mut net = Self::new(config, 0)?;
        let ckpt = prefix.with_extension("ckpt");
        let stored = ParamStore::load(&ckpt)?;
        net.params.assign_from(&stored, &ckpt)?;
        Ok(net)
    }

    pub fn encode(&self, g: &mut Graph, p: &Bound, sources: &[&[usize]]) -> Result<SourceEncoding> {
        if sources.is_empty() || sources.iter().any(|s| s.is_empty()) {
            return Err(Error::Invalid("cannot encode an empty source".into()));
        }
        let (rows, mask) = pad_rows(sources);
        let mut inputs = Vec::with_capacity(mask.ncols());
        for t in 0..mask.ncols() {
            let e = g.gather_rows(p[self.src_emb], &column(&rows, t))?;
            inputs.push(g.dropout(e, self.config.dropout));
        }
        let keys = self.encoder.run(g, p, &inputs, &mask)?;
        let pooled = masked_mean(g, &keys, &mask)?;
        Ok(SourceEncoding {
            keys,
            bias: attention_bias(&mask),
            pooled,
        })
    }

    /// Log-distribution over lengths `1..=L_max` (column `l - 1`).
    pub fn length_logp(&self, g: &mut Graph, p: &Bound, enc: &SourceEncoding) -> Result<Var> {
        let logits = self.length_head.forward(g, p, enc.pooled)?;
        Ok(g.log_softmax_rows(logits))
    }

    /// Logits for every requested length. `tokens[b]` (masked-conditional
    /// only) gives the observed token or `MASK` per position; `None` means
    /// fully masked.
    pub fn logits(
        &self,
        g: &mut Graph,
        p: &Bound,
        enc: &SourceEncoding,
        lengths: &[usize],
        tokens: Option<&[Vec<usize>]>,
    ) -> Result<NetOutput> {
        let max = self.config.max_len;
        if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > max) {
            return Err(Error::LengthOutOfRange { len: bad, max });
        }
        if tokens.is_some() && self.tok_emb.is_none() {
            return Err(Error::RefinementArch);
        }
        let batch = lengths.len();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        let mask = Matrix::from_shape_fn((batch, steps), |(b, t)| if t < lengths[b] { 1.0 } else { 0.0 });

        let mut inputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let pos: Vec<usize> = lengths.iter().map(|&l| t.min(l - 1)).collect();
            let rpos: Vec<usize> = lengths.iter().map(|&l| (l - 1).saturating_sub(t)).collect();
            let a = g.gather_rows(p[self.pos_emb], &pos)?;
            let b = g.gather_rows(p[self.rpos_emb], &rpos)?;
            let mut x = g.add(a, b)?;
            if let Some(tok_emb) = self.tok_emb {
                let toks: Vec<usize> = match tokens {
                    Some(rows) => rows
                        .iter()
                        .zip(lengths)
                        .map(|(r, &l)| if t < l { r[t] } else { MASK })
                        .collect(),
                    None => vec![MASK; batch],
                };
                let e = g.gather_rows(p[tok_emb], &toks)?;
                x = g.add(x, e)?;
            }
            inputs.push(g.dropout(x, self.config.dropout));
        }
        let states = self.positions.run(g, p, &inputs, &mask)?;
        let mut logits = Vec::with_capacity(steps);
        for s in states {
            let ctx = attend(g, s, &enc.keys, &enc.bias)?;
            let both = g.concat_cols(&[s, ctx])?;
            let h = self.readout.forward(g, p, both)?;
            let h = g.tanh(h);
            let h = g.dropout(h, self.config.dropout);
            logits.push(self.output.forward(g, p, h)?);
        }
        Ok(NetOutput {
            logits,
            lengths: lengths.to_vec(),
        })
    }

    /// Evaluation-mode logits for one source at length `len`, as an
    /// `len x |V|` matrix.
    pub fn forward(&self, source: &[usize], len: usize) -> Result<Matrix> {
        Ok(self.forward_batch(&[source], &[len], None)?.remove(0))
    }

    /// Evaluation-mode logits for many `(source, length)` pairs.
    pub fn forward_batch(
        &self,
        sources: &[&[usize]],
        lengths: &[usize],
        tokens: Option<&[Vec<usize>]>,
    ) -> Result<Vec<Matrix>> {
        if sources.len() != lengths.len() {
            return Err(Error::Invalid("one length per source required".into()));
        }
        let mut out = Vec::with_capacity(sources.len());
        for start in (0..sources.len()).step_by(256) {
            let end = (start + 256).min(sources.len());
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let enc = self.encode(&mut g, &p, &sources[start..end])?;
            let toks = tokens.map(|t| &t[start..end]);
            let o = self.logits(&mut g, &p, &enc, &lengths[start..end], toks)?;
            for (b, &len) in lengths[start..end].iter().enumerate() {
                let m = Matrix::from_shape_fn((len, self.config.tgt_vocab), |(t, v)| g.value(o.logits[t])[[b, v]]);
                out.push(m);
            }
        }
        Ok(out)
    }

    /// Length log-distributions (`1 x L_max` rows) for many sources.
    pub fn length_distributions(&self, sources: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(sources.len());
        for chunk in sources.chunks(256) {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let enc = self.encode(&mut g, &p, chunk)?;
            let lp = self.length_logp(&mut g, &p, &enc)?;
            out.extend(g.value(lp).rows().into_iter().map(|r| r.to_vec()));
        }
        Ok(out)
    }
}

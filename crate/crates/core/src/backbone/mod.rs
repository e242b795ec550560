//! Tiny pre-LN transformers: a bidirectional encoder and a causal decoder
//! whose LM head is tied to the token embedding.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Matrix, ParamId, ParamStore, Var};
use crate::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};

const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

pub type EncoderConfig = BackboneConfig;
pub type DecoderConfig = BackboneConfig;

impl BackboneConfig {
    /// Hidden 64, 2 layers, 4 heads, 128 positions.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_dim: 64,
            n_layers: 2,
            n_heads: 4,
            max_seq_len: 128,
            dropout_rate: 0.1,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ModelConfig(m));
        if self.vocab_size == 0 || self.hidden_dim == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return bad(format!("all sizes must be positive: {self:?}"));
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive".into());
        }
        if self.hidden_dim % self.n_heads != 0 {
            return bad(format!(
                "hidden_dim {} is not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    qkv_w: ParamId,
    qkv_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
}

/// Parameter handles of a transformer stack living in some [`ParamStore`].
#[derive(Debug, Clone)]
pub struct TransformerBody {
    config: BackboneConfig,
    causal: bool,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    final_g: ParamId,
    final_b: ParamId,
}

impl TransformerBody {
    /// Registers freshly initialized weights under `prefix`.
    pub fn register(
        config: &BackboneConfig,
        causal: bool,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let resid_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        let tok_emb = store.add_normal(format!("{prefix}.tok_emb"), config.vocab_size, h, INIT_STD, rng);
        let pos_emb = store.add_normal(format!("{prefix}.pos_emb"), config.max_seq_len, h, INIT_STD, rng);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("{prefix}.layers.{l}");
            blocks.push(Block {
                ln1_g: store.add_constant(format!("{p}.ln1.gain"), 1, h, 1.0),
                ln1_b: store.add_constant(format!("{p}.ln1.bias"), 1, h, 0.0),
                qkv_w: store.add_normal(format!("{p}.attn.qkv.weight"), h, 3 * h, INIT_STD, rng),
                qkv_b: store.add_constant(format!("{p}.attn.qkv.bias"), 1, 3 * h, 0.0),
                out_w: store.add_normal(format!("{p}.attn.out.weight"), h, h, resid_std, rng),
                out_b: store.add_constant(format!("{p}.attn.out.bias"), 1, h, 0.0),
                ln2_g: store.add_constant(format!("{p}.ln2.gain"), 1, h, 1.0),
                ln2_b: store.add_constant(format!("{p}.ln2.bias"), 1, h, 0.0),
                ff1_w: store.add_normal(format!("{p}.ffn.in.weight"), h, 4 * h, INIT_STD, rng),
                ff1_b: store.add_constant(format!("{p}.ffn.in.bias"), 1, 4 * h, 0.0),
                ff2_w: store.add_normal(format!("{p}.ffn.out.weight"), 4 * h, h, resid_std, rng),
                ff2_b: store.add_constant(format!("{p}.ffn.out.bias"), 1, h, 0.0),
            });
        }
        Ok(Self {
            config: config.clone(),
            causal,
            tok_emb,
            pos_emb,
            blocks,
            final_g: store.add_constant(format!("{prefix}.ln_f.gain"), 1, h, 1.0),
            final_b: store.add_constant(format!("{prefix}.ln_f.bias"), 1, h, 0.0),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn is_causal(&self) -> bool {
        self.causal
    }

    pub fn token_embedding(&self) -> ParamId {
        self.tok_emb
    }

    pub fn check_input(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty input sequence".into()));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} outside vocabulary of size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Final-layer hidden states, one row per position. `key_mask[j] == false`
    /// hides position `j` from every query. Passing an rng turns dropout on.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ids: &[usize],
        key_mask: Option<&[bool]>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        self.check_input(ids)?;
        let n = ids.len();
        if let Some(m) = key_mask {
            if m.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "mask length {} differs from sequence length {n}",
                    m.len()
                )));
            }
        }
        let allowed = self.attention_pattern(n, key_mask);
        let h = self.config.hidden_dim;
        let dh = self.config.head_dim();
        let p = self.config.dropout_rate;
        let positions: Vec<usize> = (0..n).collect();

        let tok = g.param(store, self.tok_emb);
        let pos = g.param(store, self.pos_emb);
        let te = g.gather_rows(tok, ids);
        let pe = g.gather_rows(pos, &positions);
        let mut x = g.add(te, pe);
        x = dropout(g, x, p, rng.as_deref_mut());

        for b in &self.blocks {
            let [ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b] = [
                b.ln1_g, b.ln1_b, b.qkv_w, b.qkv_b, b.out_w, b.out_b, b.ln2_g, b.ln2_b, b.ff1_w,
                b.ff1_b, b.ff2_w, b.ff2_b,
            ]
            .map(|id| g.param(store, id));

            let a = g.layer_norm(x, ln1_g, ln1_b);
            let qkv = g.affine(a, qkv_w, qkv_b);
            let heads: Vec<Var> = (0..self.config.n_heads)
                .map(|hd| {
                    let q = g.slice_cols(qkv, hd * dh, dh);
                    let k = g.slice_cols(qkv, h + hd * dh, dh);
                    let v = g.slice_cols(qkv, 2 * h + hd * dh, dh);
                    let scores = g.matmul_bt(q, k);
                    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
                    let probs = g.softmax(scores, Some(&allowed));
                    g.matmul(probs, v)
                })
                .collect();
            let attn = g.concat_cols(&heads);
            let attn = g.affine(attn, out_w, out_b);
            let attn = dropout(g, attn, p, rng.as_deref_mut());
            x = g.add(x, attn);

            let f = g.layer_norm(x, ln2_g, ln2_b);
            let f = g.affine(f, ff1_w, ff1_b);
            let f = g.gelu(f);
            let f = g.affine(f, ff2_w, ff2_b);
            let f = dropout(g, f, p, rng.as_deref_mut());
            x = g.add(x, f);
        }
        let fg = g.param(store, self.final_g);
        let fb = g.param(store, self.final_b);
        Ok(g.layer_norm(x, fg, fb))
    }

    /// Row-major `n × n` attention permissions.
    fn attention_pattern(&self, n: usize, key_mask: Option<&[bool]>) -> Vec<bool> {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            let mut any = false;
            for j in 0..n {
                let ok = key_mask.is_none_or(|m| m[j]) && (!self.causal || j <= i);
                allowed[i * n + j] = ok;
                any |= ok;
            }
            // A query with nothing visible attends to itself; its output is
            // never visible to unmasked positions.
            if !any {
                allowed[i * n + i] = true;
            }
        }
        allowed
    }
}

fn dropout(g: &mut Graph, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    let Some(rng) = rng else { return x };
    if p == 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - p);
    let mask = (0..g.value(x).data().len())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    g.dropout(x, mask)
}

/// Per-sequence hidden states of a batch plus the mask used to produce them.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    /// One `seq × hidden_dim` matrix per sequence.
    pub states: Vec<Matrix>,
    pub mask: Vec<Vec<bool>>,
}

impl HiddenStates {
    /// `(batch, seq, hidden)` for a rectangular batch.
    pub fn shape(&self) -> (usize, usize, usize) {
        let first = self.states.first();
        (
            self.states.len(),
            first.map_or(0, Matrix::rows),
            first.map_or(0, Matrix::cols),
        )
    }
}

fn check_batch(ids: &[Vec<usize>], mask: &[Vec<bool>]) -> Result<()> {
    if ids.len() != mask.len() {
        return Err(Error::InvalidArgument(format!(
            "{} sequences but {} masks",
            ids.len(),
            mask.len()
        )));
    }
    Ok(())
}

/// Bidirectional encoder with its own parameter store.
#[derive(Debug, Clone)]
pub struct Encoder {
    body: TransformerBody,
    params: ParamStore,
}

impl Encoder {
    /// Seeded initialization from `config.seed`.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let body = TransformerBody::register(config, false, "encoder", &mut params, &mut rng)?;
        Ok(Self { body, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.body.config()
    }

    pub fn body(&self) -> &TransformerBody {
        &self.body
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Eval-mode forward over a batch; `mask[b][t] == false` marks padding.
    pub fn forward(&self, ids: &[Vec<usize>], mask: &[Vec<bool>]) -> Result<HiddenStates> {
        check_batch(ids, mask)?;
        let states = ids
            .iter()
            .zip(mask)
            .map(|(seq, m)| {
                let mut g = Graph::new();
                let h = self.body.forward(&mut g, &self.params, seq, Some(m), None)?;
                Ok(g.value(h).clone())
            })
            .collect::<Result<_>>()?;
        Ok(HiddenStates {
            states,
            mask: mask.to_vec(),
        })
    }
}

/// Causal decoder with an LM head tied to the token embedding.
#[derive(Debug, Clone)]
pub struct Decoder {
    body: TransformerBody,
    params: ParamStore,
}

impl Decoder {
    pub fn init(config: &DecoderConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let body = TransformerBody::register(config, true, "decoder", &mut params, &mut rng)?;
        Ok(Self { body, params })
    }

    pub fn config(&self) -> &DecoderConfig {
        self.body.config()
    }

    pub fn body(&self) -> &TransformerBody {
        &self.body
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// `seq × vocab` next-token logits on `g`.
    pub fn logits(
        &self,
        g: &mut Graph,
        ids: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let h = self.body.forward(g, &self.params, ids, None, rng)?;
        let emb = g.param(&self.params, self.body.token_embedding());
        Ok(g.matmul_bt(h, emb))
    }

    /// Eval-mode next-token logits for a batch, one `seq × vocab` matrix each.
    pub fn forward(&self, ids: &[Vec<usize>], mask: &[Vec<bool>]) -> Result<Vec<Matrix>> {
        check_batch(ids, mask)?;
        ids.iter()
            .zip(mask)
            .map(|(seq, m)| {
                let mut g = Graph::new();
                let h = self.body.forward(&mut g, &self.params, seq, Some(m), None)?;
                let emb = g.param(&self.params, self.body.token_embedding());
                let logits = g.matmul_bt(h, emb);
                Ok(g.value(logits).clone())
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        save_checkpoint(path, &Checkpoint::new("decoder", self.config(), &self.params)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let config: DecoderConfig = ckpt.expect_kind("decoder")?.config()?;
        let mut model = Self::init(&config)?;
        model.params.load_values_from(&ckpt.params)?;
        Ok(model)
    }
}

impl Encoder {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        save_checkpoint(path, &Checkpoint::new("encoder", self.config(), &self.params)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let config: EncoderConfig = ckpt.expect_kind("encoder")?.config()?;
        let mut model = Self::init(&config)?;
        model.params.load_values_from(&ckpt.params)?;
        Ok(model)
    }
}

//! A small post-LN transformer encoder over lattice tokens.
//!
//! Token ids go through a factorized embedding (a `vocab × d_e` table followed
//! by a `d_e → d_h` projection). There is no input position embedding:
//! positions enter only through the lattice position attention terms, which
//! are computed once per sequence and added to every layer's logits. The
//! masked-segment head is tied to the token table; the sentence-order head
//! reads the `[CLS]` vector.
//!
//! Everything runs in `f64` with explicit backward passes so gradients can be
//! checked against finite differences.

mod gradcheck;
mod heads;
pub mod ops;
mod summary;
mod train;

use std::str::FromStr;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpa::{gaussian, softmax_rows, LatticeGeometry, LpaCache, LpaParams, INIT_STD};
use crate::msp::{PretrainInstance, SopLabel};
use crate::params::{TensorMut, TensorRef};
use ops::{cross_entropy, gelu, gelu_backward, LayerNorm, LayerNormCache, Linear};

pub use gradcheck::{grad_check, GradCheckReport, GroupError};
pub use heads::{classify_cls, extract_char_chain, ClsHead};
pub use summary::{attention_summary, sentence_input, TokenAttention};
pub use train::{evaluate, AdamConfig, AdamState, StepMetrics, Trainer};

/// Default position table size: the phase-two cap of 692 tokens plus one.
pub const DEFAULT_L_MAX: usize = 693;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "lite")]
    Lite,
    #[serde(rename = "toy")]
    Toy,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Preset::Base),
            "lite" => Ok(Preset::Lite),
            "toy" => Ok(Preset::Toy),
            _ => Err(Error::Config(format!("unknown preset {s:?} (base, lite, toy)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub d_h: usize,
    pub d_e: usize,
    pub d_ffn: usize,
    pub n_heads: usize,
    pub l_max: usize,
    pub vocab_size: usize,
    pub hidden_dropout: f64,
    pub attention_dropout: f64,
}

impl EncoderConfig {
    pub fn preset(preset: Preset, vocab_size: usize) -> Self {
        let (n_layers, d_h, d_e, d_ffn, n_heads, dropout) = match preset {
            Preset::Base => (12, 768, 128, 3072, 12, 0.1),
            Preset::Lite => (6, 512, 128, 2048, 8, 0.1),
            Preset::Toy => (2, 64, 16, 128, 4, 0.0),
        };
        EncoderConfig {
            n_layers,
            d_h,
            d_e,
            d_ffn,
            n_heads,
            l_max: DEFAULT_L_MAX,
            vocab_size,
            hidden_dropout: dropout,
            attention_dropout: dropout,
        }
    }

    pub fn base(vocab_size: usize) -> Self {
        Self::preset(Preset::Base, vocab_size)
    }

    pub fn lite(vocab_size: usize) -> Self {
        Self::preset(Preset::Lite, vocab_size)
    }

    pub fn toy(vocab_size: usize) -> Self {
        Self::preset(Preset::Toy, vocab_size)
    }

    pub fn d_k(&self) -> usize {
        self.d_h / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_heads == 0 || !self.d_h.is_multiple_of(self.n_heads) {
            return bad(format!("hidden size {} is not divisible by {} heads", self.d_h, self.n_heads));
        }
        if self.n_layers == 0 || self.d_e == 0 || self.d_ffn == 0 || self.l_max == 0 {
            return bad("layer count and sizes must be positive".into());
        }
        if self.vocab_size < crate::vocab::NUM_SPECIALS as usize {
            return bad(format!("vocabulary of {} cannot hold the special tokens", self.vocab_size));
        }
        for p in [self.hidden_dropout, self.attention_dropout] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout {p} outside [0, 1)"));
            }
        }
        Ok(())
    }

    /// Parameters on the token-embedding path: `vocab·d_e + d_e·d_h`.
    pub fn embedding_params(&self) -> usize {
        self.vocab_size * self.d_e + self.d_e * self.d_h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln1: LayerNorm,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub ln2: LayerNorm,
}

impl EncoderLayer {
    fn init<R: Rng + ?Sized>(c: &EncoderConfig, rng: &mut R) -> Self {
        EncoderLayer {
            q: Linear::init(c.d_h, c.d_h, INIT_STD, rng),
            k: Linear::init(c.d_h, c.d_h, INIT_STD, rng),
            v: Linear::init(c.d_h, c.d_h, INIT_STD, rng),
            o: Linear::init(c.d_h, c.d_h, INIT_STD, rng),
            ln1: LayerNorm::new(c.d_h),
            ffn1: Linear::init(c.d_h, c.d_ffn, INIT_STD, rng),
            ffn2: Linear::init(c.d_ffn, c.d_h, INIT_STD, rng),
            ln2: LayerNorm::new(c.d_h),
        }
    }

    fn zeros(c: &EncoderConfig) -> Self {
        EncoderLayer {
            q: Linear::zeros(c.d_h, c.d_h),
            k: Linear::zeros(c.d_h, c.d_h),
            v: Linear::zeros(c.d_h, c.d_h),
            o: Linear::zeros(c.d_h, c.d_h),
            ln1: LayerNorm::zeros(c.d_h),
            ffn1: Linear::zeros(c.d_h, c.d_ffn),
            ffn2: Linear::zeros(c.d_ffn, c.d_h),
            ln2: LayerNorm::zeros(c.d_h),
        }
    }
}

/// All trainable tensors. The same type doubles as a gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub config: EncoderConfig,
    /// (vocab_size, d_e); also the output table of the masked-segment head.
    pub tok_emb: Array2<f64>,
    pub emb_proj: Linear,
    pub emb_ln: LayerNorm,
    pub layers: Vec<EncoderLayer>,
    /// Shared by every layer.
    pub lpa: LpaParams,
    pub msp_dense: Linear,
    pub msp_ln: LayerNorm,
    pub msp_bias: Array1<f64>,
    pub sop: Linear,
}

/// Token ids and spans of one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderInput {
    pub ids: Vec<u32>,
    pub starts: Vec<usize>,
    pub ends: Vec<usize>,
    pub cls_index: Option<usize>,
}

impl From<&PretrainInstance> for EncoderInput {
    fn from(inst: &PretrainInstance) -> Self {
        EncoderInput {
            ids: inst.token_ids.clone(),
            starts: inst.starts.clone(),
            ends: inst.ends.clone(),
            cls_index: (!inst.token_ids.is_empty()).then_some(0),
        }
    }
}

impl EncoderInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Reorder tokens: position `k` of the result holds token `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        EncoderInput {
            ids: perm.iter().map(|&i| self.ids[i]).collect(),
            starts: perm.iter().map(|&i| self.starts[i]).collect(),
            ends: perm.iter().map(|&i| self.ends[i]).collect(),
            cls_index: self.cls_index.map(|c| perm.iter().position(|&i| i == c).expect("permutation")),
        }
    }
}

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn_masks: Option<Vec<Array2<f64>>>,
    ctx: Array2<f64>,
    attn_out_mask: Option<Array2<f64>>,
    ln1: LayerNormCache,
    x1: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
    ln2: LayerNormCache,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache {
    ids: Vec<u32>,
    emb: Array2<f64>,
    ln0: LayerNormCache,
    emb_mask: Option<Array2<f64>>,
    geom: LatticeGeometry,
    lpa: LpaCache,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    /// Post-softmax attention, indexed `[layer][head]`, each (n × n).
    pub fn attention(&self) -> Vec<&[Array2<f64>]> {
        self.layers.iter().map(|l| l.probs.as_slice()).collect()
    }
}

fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut Option<&mut dyn RngCore>) -> Option<Array2<f64>> {
    let rng = rng.as_mut()?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    }))
}

fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

/// Loss terms for one instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub msp: f64,
    pub sop: f64,
    pub msp_targets: usize,
    pub msp_correct: usize,
    pub sop_correct: bool,
    /// Set when the instance had no masked targets (the MSP term is then 0).
    pub no_targets: bool,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.msp + self.sop
    }
}

struct MspCache {
    rows: Vec<usize>,
    h: Array2<f64>,
    t1: Array2<f64>,
    t2: Array2<f64>,
    ln: LayerNormCache,
    t3: Array2<f64>,
    dlogits: Array2<f64>,
}

impl EncoderState {
    pub fn init<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        Ok(EncoderState {
            tok_emb: gaussian(c.vocab_size, c.d_e, INIT_STD, rng),
            emb_proj: Linear::init(c.d_e, c.d_h, INIT_STD, rng),
            emb_ln: LayerNorm::new(c.d_h),
            layers: (0..c.n_layers).map(|_| EncoderLayer::init(c, rng)).collect(),
            lpa: LpaParams::init(c.l_max, c.d_e, c.d_k(), c.n_heads, rng),
            msp_dense: Linear::init(c.d_h, c.d_e, INIT_STD, rng),
            msp_ln: LayerNorm::new(c.d_e),
            msp_bias: Array1::zeros(c.vocab_size),
            sop: Linear::init(c.d_h, 2, INIT_STD, rng),
            config,
        })
    }

    /// A zero-filled tensor set for `config`.
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        Ok(EncoderState {
            tok_emb: Array2::zeros((c.vocab_size, c.d_e)),
            emb_proj: Linear::zeros(c.d_e, c.d_h),
            emb_ln: LayerNorm::zeros(c.d_h),
            layers: (0..c.n_layers).map(|_| EncoderLayer::zeros(c)).collect(),
            lpa: LpaParams::zeros(c.l_max, c.d_e, c.d_k(), c.n_heads),
            msp_dense: Linear::zeros(c.d_h, c.d_e),
            msp_ln: LayerNorm::zeros(c.d_e),
            msp_bias: Array1::zeros(c.vocab_size),
            sop: Linear::zeros(c.d_h, 2),
            config,
        })
    }

    /// A zero-filled tensor set with the same shapes.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("validated at construction")
    }

    /// Named tensors in a fixed order. LPA tensors keep their own names
    /// (`p_s`, `w_q.0`, `b.0.ss`, ...); encoder tensors are prefixed.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = self.lpa.tensors();
        out.push(TensorRef::arr2("tok_emb", &self.tok_emb));
        self.emb_proj.tensors("emb_proj", &mut out);
        self.emb_ln.tensors("emb_ln", &mut out);
        for (i, l) in self.layers.iter().enumerate() {
            l.q.tensors(&format!("layer.{i}.attn.q"), &mut out);
            l.k.tensors(&format!("layer.{i}.attn.k"), &mut out);
            l.v.tensors(&format!("layer.{i}.attn.v"), &mut out);
            l.o.tensors(&format!("layer.{i}.attn.o"), &mut out);
            l.ln1.tensors(&format!("layer.{i}.ln1"), &mut out);
            l.ffn1.tensors(&format!("layer.{i}.ffn1"), &mut out);
            l.ffn2.tensors(&format!("layer.{i}.ffn2"), &mut out);
            l.ln2.tensors(&format!("layer.{i}.ln2"), &mut out);
        }
        self.msp_dense.tensors("msp.dense", &mut out);
        self.msp_ln.tensors("msp.ln", &mut out);
        out.push(TensorRef::arr1("msp.bias", &self.msp_bias));
        self.sop.tensors("sop", &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = self.lpa.tensors_mut();
        out.push(TensorMut::arr2("tok_emb", &mut self.tok_emb));
        self.emb_proj.tensors_mut("emb_proj", &mut out);
        self.emb_ln.tensors_mut("emb_ln", &mut out);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.q.tensors_mut(&format!("layer.{i}.attn.q"), &mut out);
            l.k.tensors_mut(&format!("layer.{i}.attn.k"), &mut out);
            l.v.tensors_mut(&format!("layer.{i}.attn.v"), &mut out);
            l.o.tensors_mut(&format!("layer.{i}.attn.o"), &mut out);
            l.ln1.tensors_mut(&format!("layer.{i}.ln1"), &mut out);
            l.ffn1.tensors_mut(&format!("layer.{i}.ffn1"), &mut out);
            l.ffn2.tensors_mut(&format!("layer.{i}.ffn2"), &mut out);
            l.ln2.tensors_mut(&format!("layer.{i}.ln2"), &mut out);
        }
        self.msp_dense.tensors_mut("msp.dense", &mut out);
        self.msp_ln.tensors_mut("msp.ln", &mut out);
        out.push(TensorMut::arr1("msp.bias", &mut self.msp_bias));
        self.sop.tensors_mut("sop", &mut out);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn check_input(&self, input: &EncoderInput) -> Result<()> {
        let n = input.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if n > self.config.l_max {
            return Err(Error::PositionOverflow {
                position: n,
                max: self.config.l_max,
            });
        }
        if let Some(&id) = input.ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::Shape(format!(
                "token id {id} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Run the encoder. Passing an RNG enables dropout; `None` is eval mode
    /// and fully deterministic. Returns per-token hidden vectors (n × d_h).
    pub fn forward(&self, input: &EncoderInput, mut rng: Option<&mut dyn RngCore>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(input)?;
        let c = &self.config;
        let n = input.len();
        let geom = LatticeGeometry::new(&input.starts, &input.ends, input.cls_index, c.l_max)?;
        let (pos, lpa_cache) = self.lpa.scores(&geom)?;

        let idx: Vec<usize> = input.ids.iter().map(|&i| i as usize).collect();
        let emb = self.tok_emb.select(Axis(0), &idx);
        let z0 = self.emb_proj.forward(&emb);
        let (h0, ln0) = self.emb_ln.forward(&z0);
        let emb_mask = dropout_mask((n, c.d_h), c.hidden_dropout, &mut rng);
        let mut h = apply_mask(h0, &emb_mask);

        let dk = c.d_k();
        let scale = 1.0 / (2.0 * dk as f64).sqrt();
        let mut layers = Vec::with_capacity(c.n_layers);
        for layer in &self.layers {
            let q = layer.q.forward(&h);
            let k = layer.k.forward(&h);
            let v = layer.v.forward(&h);
            let mut ctx = Array2::zeros((n, c.d_h));
            let mut probs = Vec::with_capacity(c.n_heads);
            let mut attn_masks = rng.is_some().then(Vec::new);
            for (hd, pos_h) in pos.iter().enumerate() {
                let cols = s![.., hd * dk..(hd + 1) * dk];
                let logits = q.slice(cols).dot(&k.slice(cols).t()) * scale + pos_h;
                let p = softmax_rows(&logits);
                let mask = dropout_mask((n, n), c.attention_dropout, &mut rng);
                let pd = apply_mask(p.clone(), &mask);
                ctx.slice_mut(cols).assign(&pd.dot(&v.slice(cols)));
                if let (Some(ms), Some(m)) = (attn_masks.as_mut(), mask) {
                    ms.push(m);
                }
                probs.push(p);
            }
            if attn_masks.as_ref().is_some_and(|m| m.is_empty()) {
                attn_masks = None;
            }
            let a = layer.o.forward(&ctx);
            let attn_out_mask = dropout_mask((n, c.d_h), c.hidden_dropout, &mut rng);
            let a = apply_mask(a, &attn_out_mask);
            let (x1, ln1) = layer.ln1.forward(&(&h + &a));
            let f1 = layer.ffn1.forward(&x1);
            let g = gelu(&f1);
            let f2 = layer.ffn2.forward(&g);
            let ffn_mask = dropout_mask((n, c.d_h), c.hidden_dropout, &mut rng);
            let f2 = apply_mask(f2, &ffn_mask);
            let (out, ln2) = layer.ln2.forward(&(&x1 + &f2));
            layers.push(LayerCache {
                input: h,
                q,
                k,
                v,
                probs,
                attn_masks,
                ctx,
                attn_out_mask,
                ln1,
                x1,
                f1,
                g,
                ffn_mask,
                ln2,
            });
            h = out;
        }
        let cache = ForwardCache {
            ids: input.ids.clone(),
            emb,
            ln0,
            emb_mask,
            geom,
            lpa: lpa_cache,
            layers,
        };
        Ok((h, cache))
    }

    /// Hidden vectors plus the `[CLS]` vector (row `cls_index`, else row 0).
    pub fn encode(&self, input: &EncoderInput) -> Result<(Array2<f64>, Array1<f64>)> {
        let (h, _) = self.forward(input, None)?;
        let cls = h.row(input.cls_index.unwrap_or(0)).to_owned();
        Ok((h, cls))
    }

    fn msp_forward(&self, hidden: &Array2<f64>, targets: &[(usize, u32)]) -> (f64, usize, MspCache) {
        let rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
        let labels: Vec<usize> = targets.iter().map(|t| t.1 as usize).collect();
        let h = hidden.select(Axis(0), &rows);
        let t1 = self.msp_dense.forward(&h);
        let t2 = gelu(&t1);
        let (t3, ln) = self.msp_ln.forward(&t2);
        let logits = t3.dot(&self.tok_emb.t()) + &self.msp_bias;
        let (loss, dlogits, hits) = cross_entropy(&logits, &labels);
        (loss, hits, MspCache { rows, h, t1, t2, ln, t3, dlogits })
    }

    /// Mean cross-entropy over the targets through the tied output table.
    /// With no targets the loss is 0 and the flag is set.
    pub fn msp_loss(&self, hidden: &Array2<f64>, targets: &[(usize, u32)]) -> (f64, bool) {
        if targets.is_empty() {
            return (0.0, true);
        }
        (self.msp_forward(hidden, targets).0, false)
    }

    pub fn sop_logits(&self, cls_vec: &Array1<f64>) -> Array1<f64> {
        cls_vec.dot(&self.sop.w) + &self.sop.b
    }

    /// Two-way cross-entropy of the sentence-order head.
    pub fn sop_loss(&self, cls_vec: &Array1<f64>, label: SopLabel) -> f64 {
        let logits = self.sop_logits(cls_vec).insert_axis(Axis(0));
        cross_entropy(&logits, &[label.index()]).0
    }

    /// Forward both losses; when `grads` is given, also accumulate the
    /// gradient of `msp + sop` into it.
    pub fn loss_and_grad(
        &self,
        inst: &PretrainInstance,
        grads: Option<&mut EncoderState>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<LossBreakdown> {
        let input = EncoderInput::from(inst);
        let (hidden, cache) = self.forward(&input, rng)?;
        let cls = input.cls_index.unwrap_or(0);

        let mut out = LossBreakdown {
            msp_targets: inst.msp_targets.len(),
            no_targets: inst.msp_targets.is_empty(),
            ..Default::default()
        };
        let msp = (!inst.msp_targets.is_empty()).then(|| self.msp_forward(&hidden, &inst.msp_targets));
        if let Some((loss, hits, _)) = &msp {
            out.msp = *loss;
            out.msp_correct = *hits;
        }
        let sop_logits = self.sop_logits(&hidden.row(cls).to_owned()).insert_axis(Axis(0));
        let (sop_loss, d_sop, sop_hits) = cross_entropy(&sop_logits, &[inst.sop_label.index()]);
        out.sop = sop_loss;
        out.sop_correct = sop_hits == 1;

        let Some(g) = grads else {
            return Ok(out);
        };
        let mut dh = Array2::<f64>::zeros(hidden.dim());
        if let Some((_, _, mc)) = msp {
            g.msp_bias += &mc.dlogits.sum_axis(Axis(0));
            g.tok_emb += &mc.dlogits.t().dot(&mc.t3);
            let dt3 = mc.dlogits.dot(&self.tok_emb);
            let dt2 = self.msp_ln.backward(&mc.ln, &dt3, &mut g.msp_ln);
            let dt1 = gelu_backward(&mc.t1, &dt2);
            let dh_t = self.msp_dense.backward(&mc.h, &dt1, &mut g.msp_dense);
            let _ = &mc.t2;
            for (k, &r) in mc.rows.iter().enumerate() {
                let mut row = dh.row_mut(r);
                row += &dh_t.row(k);
            }
        }
        let cls_row = hidden.slice(s![cls..cls + 1, ..]).to_owned();
        let d_cls = self.sop.backward(&cls_row, &d_sop, &mut g.sop);
        {
            let mut row = dh.row_mut(cls);
            row += &d_cls.row(0);
        }
        self.backward(&cache, dh, g);
        Ok(out)
    }

    /// Backpropagate dL/d(hidden) through the stack into `g`.
    pub fn backward(&self, cache: &ForwardCache, d_hidden: Array2<f64>, g: &mut EncoderState) {
        let c = &self.config;
        let n = d_hidden.nrows();
        let dk = c.d_k();
        let scale = 1.0 / (2.0 * dk as f64).sqrt();
        let mut d_pos: Vec<Array2<f64>> = (0..c.n_heads).map(|_| Array2::zeros((n, n))).collect();
        let mut dh = d_hidden;

        for (li, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let gl = &mut g.layers[li];
            let d_sum2 = layer.ln2.backward(&lc.ln2, &dh, &mut gl.ln2);
            let mut dx1 = d_sum2.clone();
            let df2 = apply_mask(d_sum2, &lc.ffn_mask);
            let dg = layer.ffn2.backward(&lc.g, &df2, &mut gl.ffn2);
            let df1 = gelu_backward(&lc.f1, &dg);
            dx1 += &layer.ffn1.backward(&lc.x1, &df1, &mut gl.ffn1);

            let d_sum1 = layer.ln1.backward(&lc.ln1, &dx1, &mut gl.ln1);
            let mut dh_in = d_sum1.clone();
            let da = apply_mask(d_sum1, &lc.attn_out_mask);
            let dctx = layer.o.backward(&lc.ctx, &da, &mut gl.o);

            let mut dq = Array2::zeros((n, c.d_h));
            let mut dk_ = Array2::zeros((n, c.d_h));
            let mut dv = Array2::zeros((n, c.d_h));
            for hd in 0..c.n_heads {
                let cols = s![.., hd * dk..(hd + 1) * dk];
                let p = &lc.probs[hd];
                let mask = lc.attn_masks.as_ref().map(|m| &m[hd]);
                let pd = match mask {
                    Some(m) => p * m,
                    None => p.clone(),
                };
                let dctx_h = dctx.slice(cols);
                let mut dp = dctx_h.dot(&lc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&pd.t().dot(&dctx_h));
                if let Some(m) = mask {
                    dp *= m;
                }
                let mut dlogits = Array2::zeros((n, n));
                for i in 0..n {
                    let dot = p.row(i).dot(&dp.row(i));
                    for j in 0..n {
                        dlogits[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot);
                    }
                }
                d_pos[hd] += &dlogits;
                dq.slice_mut(cols).assign(&(dlogits.dot(&lc.k.slice(cols)) * scale));
                dk_.slice_mut(cols).assign(&(dlogits.t().dot(&lc.q.slice(cols)) * scale));
            }
            dh_in += &layer.q.backward(&lc.input, &dq, &mut gl.q);
            dh_in += &layer.k.backward(&lc.input, &dk_, &mut gl.k);
            dh_in += &layer.v.backward(&lc.input, &dv, &mut gl.v);
            dh = dh_in;
        }

        self.lpa.backward(&cache.geom, &cache.lpa, &d_pos, &mut g.lpa);

        let dh0 = apply_mask(dh, &cache.emb_mask);
        let dz0 = self.emb_ln.backward(&cache.ln0, &dh0, &mut g.emb_ln);
        let demb = self.emb_proj.backward(&cache.emb, &dz0, &mut g.emb_proj);
        for (k, &id) in cache.ids.iter().enumerate() {
            let mut row = g.tok_emb.row_mut(id as usize);
            row += &demb.row(k);
        }
    }
}

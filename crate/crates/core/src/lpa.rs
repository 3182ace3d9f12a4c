//! Lattice position attention.
//!
//! Each head adds three positional terms to its content logits:
//!
//! * `att`: a scaled dot product between the projected concatenations of the
//!   start- and end-position embeddings of the two tokens,
//! * `b`: four learned scalars looked up by the clipped start/end distances
//!   (ss, se, es, ee),
//! * `r`: one learned scalar per positional relation.
//!
//! The tables are shared by every layer. Scores whose query or key is `[CLS]`
//! have their positional sum replaced by a per-head scalar (`cls_q` when
//! `[CLS]` is the query, `cls_k` when it is the key).

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{
    distance_offsets, relation_unchecked, DistanceOffsets, PositionRelation, Span, DISTANCE_BUCKETS,
    NUM_RELATIONS,
};
use crate::params::{TensorMut, TensorRef};

pub const DIRECTIONS: [&str; 4] = ["ss", "se", "es", "ee"];
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LpaHead {
    /// (2·d_e, d_k)
    pub w_q: Array2<f64>,
    /// (2·d_e, d_k)
    pub w_k: Array2<f64>,
    /// Distance tables indexed by clipped offset + 128, in [`DIRECTIONS`] order.
    pub b: [Array1<f64>; 4],
    /// One scalar per [`PositionRelation`] code.
    pub r: Array1<f64>,
    pub cls_q: f64,
    pub cls_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpaParams {
    /// Start-position embeddings (l_max, d_e).
    pub p_s: Array2<f64>,
    /// End-position embeddings (l_max, d_e).
    pub p_e: Array2<f64>,
    pub heads: Vec<LpaHead>,
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl LpaParams {
    pub fn zeros(l_max: usize, d_e: usize, d_k: usize, n_heads: usize) -> Self {
        LpaParams {
            p_s: Array2::zeros((l_max, d_e)),
            p_e: Array2::zeros((l_max, d_e)),
            heads: (0..n_heads)
                .map(|_| LpaHead {
                    w_q: Array2::zeros((2 * d_e, d_k)),
                    w_k: Array2::zeros((2 * d_e, d_k)),
                    b: std::array::from_fn(|_| Array1::zeros(DISTANCE_BUCKETS)),
                    r: Array1::zeros(NUM_RELATIONS),
                    cls_q: 0.0,
                    cls_k: 0.0,
                })
                .collect(),
        }
    }

    /// Embeddings and projections drawn from N(0, 0.02²); distance, relation
    /// and reset scalars start at zero.
    pub fn init<R: Rng + ?Sized>(l_max: usize, d_e: usize, d_k: usize, n_heads: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(l_max, d_e, d_k, n_heads);
        p.p_s = gaussian(l_max, d_e, INIT_STD, rng);
        p.p_e = gaussian(l_max, d_e, INIT_STD, rng);
        for h in &mut p.heads {
            h.w_q = gaussian(2 * d_e, d_k, INIT_STD, rng);
            h.w_k = gaussian(2 * d_e, d_k, INIT_STD, rng);
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.l_max(), self.d_e(), self.d_k(), self.heads.len())
    }

    pub fn l_max(&self) -> usize {
        self.p_s.nrows()
    }

    pub fn d_e(&self) -> usize {
        self.p_s.ncols()
    }

    pub fn d_k(&self) -> usize {
        self.heads.first().map_or(0, |h| h.w_q.ncols())
    }

    /// Number of distance and relation scalars: heads × (4 × 257 + 7).
    pub fn distance_relation_params(&self) -> usize {
        self.heads
            .iter()
            .map(|h| h.b.iter().map(Array1::len).sum::<usize>() + h.r.len())
            .sum()
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = vec![TensorRef::arr2("p_s", &self.p_s), TensorRef::arr2("p_e", &self.p_e)];
        for (i, h) in self.heads.iter().enumerate() {
            out.push(TensorRef::arr2(format!("w_q.{i}"), &h.w_q));
            out.push(TensorRef::arr2(format!("w_k.{i}"), &h.w_k));
            for (dir, t) in DIRECTIONS.iter().zip(&h.b) {
                out.push(TensorRef::arr1(format!("b.{i}.{dir}"), t));
            }
            out.push(TensorRef::arr1(format!("r.{i}"), &h.r));
            out.push(TensorRef::scalar(format!("cls_q.{i}"), &h.cls_q));
            out.push(TensorRef::scalar(format!("cls_k.{i}"), &h.cls_k));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = vec![
            TensorMut::arr2("p_s", &mut self.p_s),
            TensorMut::arr2("p_e", &mut self.p_e),
        ];
        for (i, h) in self.heads.iter_mut().enumerate() {
            out.push(TensorMut::arr2(format!("w_q.{i}"), &mut h.w_q));
            out.push(TensorMut::arr2(format!("w_k.{i}"), &mut h.w_k));
            for (dir, t) in DIRECTIONS.iter().zip(h.b.iter_mut()) {
                out.push(TensorMut::arr1(format!("b.{i}.{dir}"), t));
            }
            out.push(TensorMut::arr1(format!("r.{i}"), &mut h.r));
            out.push(TensorMut::scalar(format!("cls_q.{i}"), &mut h.cls_q));
            out.push(TensorMut::scalar(format!("cls_k.{i}"), &mut h.cls_k));
        }
        out
    }
}

/// Pairwise relation codes and distance buckets for one token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGeometry {
    pub starts: Vec<usize>,
    pub ends: Vec<usize>,
    pub cls_index: Option<usize>,
    relations: Vec<u8>,
    buckets: Vec<[u16; 4]>,
}

impl LatticeGeometry {
    /// Validates the spans (start ≤ end, no duplicates, positions below
    /// `l_max`) and precomputes every pairwise term index.
    pub fn new(starts: &[usize], ends: &[usize], cls_index: Option<usize>, l_max: usize) -> Result<Self> {
        let n = starts.len();
        if ends.len() != n {
            return Err(Error::Shape(format!("{n} starts but {} ends", ends.len())));
        }
        if let Some(c) = cls_index {
            if c >= n {
                return Err(Error::Shape(format!("cls index {c} out of range for {n} tokens")));
            }
        }
        let mut seen = std::collections::HashMap::with_capacity(n);
        for (i, (&s, &e)) in starts.iter().zip(ends).enumerate() {
            if s > e {
                return Err(Error::InvalidSpan { start: s, end: e });
            }
            if e >= l_max {
                return Err(Error::PositionOverflow { position: e, max: l_max });
            }
            if let Some(j) = seen.insert((s, e), i) {
                return Err(Error::DuplicateSpan {
                    first: j,
                    second: i,
                    start: s,
                    end: e,
                });
            }
        }
        let mut relations = Vec::with_capacity(n * n);
        let mut buckets = Vec::with_capacity(n * n);
        for i in 0..n {
            let src = Span { start: starts[i], end: ends[i] };
            for j in 0..n {
                let tgt = Span { start: starts[j], end: ends[j] };
                let rel = if i == j {
                    PositionRelation::Self_
                } else {
                    relation_unchecked(src, tgt)
                };
                relations.push(rel.code());
                buckets.push(distance_offsets(src, tgt).bucket_indices().map(|b| b as u16));
            }
        }
        Ok(LatticeGeometry {
            starts: starts.to_vec(),
            ends: ends.to_vec(),
            cls_index,
            relations,
            buckets,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn relation(&self, i: usize, j: usize) -> PositionRelation {
        PositionRelation::from_code(self.relations[i * self.len() + j]).expect("valid code")
    }

    pub fn buckets(&self, i: usize, j: usize) -> [usize; 4] {
        self.buckets[i * self.len() + j].map(usize::from)
    }

    /// Whether entry (i, j) is replaced by a reset scalar.
    fn is_reset(&self, i: usize, j: usize) -> bool {
        self.cls_index.is_some_and(|c| i == c || j == c)
    }
}

pub fn distance_bias(head: &LpaHead, offsets: &DistanceOffsets) -> f64 {
    bucket_bias(head, offsets.bucket_indices())
}

fn bucket_bias(head: &LpaHead, idx: [usize; 4]) -> f64 {
    head.b[0][idx[0]] + head.b[1][idx[1]] + head.b[2][idx[2]] + head.b[3][idx[3]]
}

pub fn relation_bias(head: &LpaHead, rel: PositionRelation) -> f64 {
    head.r[rel.code() as usize]
}

/// Rows `[P_S[s_i]; P_E[e_i]]`, shape (n, 2·d_e).
fn position_rows(p_s: &Array2<f64>, p_e: &Array2<f64>, starts: &[usize], ends: &[usize]) -> Result<Array2<f64>> {
    let d_e = p_s.ncols();
    let l_max = p_s.nrows();
    let mut x = Array2::zeros((starts.len(), 2 * d_e));
    for (i, (&s, &e)) in starts.iter().zip(ends).enumerate() {
        for p in [s, e] {
            if p >= l_max {
                return Err(Error::PositionOverflow { position: p, max: l_max });
            }
        }
        x.slice_mut(s![i, ..d_e]).assign(&p_s.row(s));
        x.slice_mut(s![i, d_e..]).assign(&p_e.row(e));
    }
    Ok(x)
}

/// `att[i][j] = ([P_S[s_i]; P_E[e_i]] W_q) · ([P_S[s_j]; P_E[e_j]] W_k) / sqrt(2·d_k)`.
pub fn abs_position_term(
    p_s: &Array2<f64>,
    p_e: &Array2<f64>,
    w_q: &Array2<f64>,
    w_k: &Array2<f64>,
    starts: &[usize],
    ends: &[usize],
) -> Result<Array2<f64>> {
    let x = position_rows(p_s, p_e, starts, ends)?;
    let scale = 1.0 / (2.0 * w_q.ncols() as f64).sqrt();
    Ok(x.dot(w_q).dot(&x.dot(w_k).t()) * scale)
}

/// `att + b + r`, with every entry in the `[CLS]` row set to `cls_q` and every
/// other entry in the `[CLS]` column set to `cls_k`.
pub fn positional_scores(
    att: &Array2<f64>,
    b: &Array2<f64>,
    r: &Array2<f64>,
    cls_index: Option<usize>,
    cls_q: f64,
    cls_k: f64,
) -> Result<Array2<f64>> {
    if att.dim() != b.dim() || att.dim() != r.dim() || att.nrows() != att.ncols() {
        return Err(Error::Shape(format!(
            "att {:?}, b {:?}, r {:?}",
            att.dim(),
            b.dim(),
            r.dim()
        )));
    }
    let mut pos = att + b + r;
    if let Some(c) = cls_index {
        if c >= pos.nrows() {
            return Err(Error::Shape(format!("cls index {c} out of range")));
        }
        pos.column_mut(c).fill(cls_k);
        pos.row_mut(c).fill(cls_q);
    }
    Ok(pos)
}

/// Full logits: content scores `alpha` plus the (reset) positional terms.
#[allow(clippy::too_many_arguments)]
pub fn combine_scores(
    alpha: &Array2<f64>,
    att: &Array2<f64>,
    b: &Array2<f64>,
    r: &Array2<f64>,
    cls_index: Option<usize>,
    cls_q: f64,
    cls_k: f64,
) -> Result<Array2<f64>> {
    if alpha.dim() != att.dim() {
        return Err(Error::Shape(format!("alpha {:?} vs att {:?}", alpha.dim(), att.dim())));
    }
    Ok(alpha + &positional_scores(att, b, r, cls_index, cls_q, cls_k)?)
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Intermediate values needed to backpropagate through [`LpaParams::scores`].
#[derive(Debug, Clone)]
pub struct LpaCache {
    x: Array2<f64>,
    uq: Vec<Array2<f64>>,
    uk: Vec<Array2<f64>>,
}

impl LpaParams {
    /// Per-head positional score matrices (n × n), already reset for `[CLS]`.
    pub fn scores(&self, geom: &LatticeGeometry) -> Result<(Vec<Array2<f64>>, LpaCache)> {
        let n = geom.len();
        let x = position_rows(&self.p_s, &self.p_e, &geom.starts, &geom.ends)?;
        let scale = 1.0 / (2.0 * self.d_k() as f64).sqrt();
        let mut out = Vec::with_capacity(self.heads.len());
        let mut cache = LpaCache {
            uq: Vec::with_capacity(self.heads.len()),
            uk: Vec::with_capacity(self.heads.len()),
            x: Array2::zeros((0, 0)),
        };
        for h in &self.heads {
            let uq = x.dot(&h.w_q);
            let uk = x.dot(&h.w_k);
            let mut pos = uq.dot(&uk.t()) * scale;
            for i in 0..n {
                for j in 0..n {
                    pos[[i, j]] = if geom.is_reset(i, j) {
                        if Some(i) == geom.cls_index {
                            h.cls_q
                        } else {
                            h.cls_k
                        }
                    } else {
                        pos[[i, j]] + bucket_bias(h, geom.buckets(i, j)) + relation_bias(h, geom.relation(i, j))
                    };
                }
            }
            out.push(pos);
            cache.uq.push(uq);
            cache.uk.push(uk);
        }
        cache.x = x;
        Ok((out, cache))
    }

    /// Accumulate into `grads` the gradient of a loss whose derivative with
    /// respect to each head's positional scores is `d_scores[h]`.
    pub fn backward(&self, geom: &LatticeGeometry, cache: &LpaCache, d_scores: &[Array2<f64>], grads: &mut LpaParams) {
        let n = geom.len();
        let d_e = self.d_e();
        let scale = 1.0 / (2.0 * self.d_k() as f64).sqrt();
        let mut dx = Array2::<f64>::zeros(cache.x.dim());
        for (hi, (h, g)) in self.heads.iter().zip(grads.heads.iter_mut()).enumerate() {
            let d = &d_scores[hi];
            let mut datt = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    let v = d[[i, j]];
                    if geom.is_reset(i, j) {
                        if Some(i) == geom.cls_index {
                            g.cls_q += v;
                        } else {
                            g.cls_k += v;
                        }
                        continue;
                    }
                    datt[[i, j]] = v * scale;
                    for (dir, &k) in geom.buckets(i, j).iter().enumerate() {
                        g.b[dir][k] += v;
                    }
                    g.r[geom.relation(i, j).code() as usize] += v;
                }
            }
            let duq = datt.dot(&cache.uk[hi]);
            let duk = datt.t().dot(&cache.uq[hi]);
            g.w_q += &cache.x.t().dot(&duq);
            g.w_k += &cache.x.t().dot(&duk);
            dx += &duq.dot(&h.w_q.t());
            dx += &duk.dot(&h.w_k.t());
        }
        for (i, (&s, &e)) in geom.starts.iter().zip(&geom.ends).enumerate() {
            let mut gs = grads.p_s.row_mut(s);
            gs += &dx.slice(s![i, ..d_e]);
            let mut ge = grads.p_e.row_mut(e);
            ge += &dx.slice(s![i, d_e..]);
        }
    }
}

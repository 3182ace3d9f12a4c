//! Mean attention received by each lattice token.

use serde::{Deserialize, Serialize};

use super::{EncoderInput, EncoderState};
use crate::error::Result;
use crate::lattice::Lattice;
use crate::vocab::{CLS_ID, SEP_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAttention {
    pub surface: String,
    pub s: usize,
    pub e: usize,
    pub score: f64,
}

/// `[CLS] tokens [SEP]` with `[CLS]` at position 0 and `[SEP]` one past the
/// last character.
pub fn sentence_input(lattice: &Lattice) -> EncoderInput {
    let n = lattice.n_chars();
    let mut ids = vec![CLS_ID];
    let mut starts = vec![0];
    let mut ends = vec![0];
    for t in &lattice.tokens {
        ids.push(t.id);
        starts.push(t.start);
        ends.push(t.end);
    }
    ids.push(SEP_ID);
    starts.push(n + 1);
    ends.push(n + 1);
    EncoderInput {
        ids,
        starts,
        ends,
        cls_index: Some(0),
    }
}

/// Encode one sentence in eval mode and average, over all layers, heads and
/// lattice-token rows, the attention each lattice token receives. Each row
/// is first renormalized over lattice-token columns, so `[CLS]`/`[SEP]`
/// neither send nor receive and the scores sum to 1.
pub fn attention_summary(state: &EncoderState, lattice: &Lattice) -> Result<Vec<TokenAttention>> {
    let input = sentence_input(lattice);
    let (_, cache) = state.forward(&input, None)?;
    let m = lattice.tokens.len();
    let cols = 1..=m;
    let mut scores = vec![0.0; m];
    let mut rows = 0usize;
    for layer in cache.attention() {
        for p in layer {
            for i in cols.clone() {
                let total: f64 = cols.clone().map(|j| p[[i, j]]).sum();
                for (k, j) in cols.clone().enumerate() {
                    scores[k] += p[[i, j]] / total;
                }
                rows += 1;
            }
        }
    }
    Ok(lattice
        .tokens
        .iter()
        .zip(scores)
        .map(|(t, s)| TokenAttention {
            surface: t.surface.clone(),
            s: t.start,
            e: t.end,
            score: s / rows.max(1) as f64,
        })
        .collect())
}

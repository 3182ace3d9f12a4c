//! Browser bindings for the lattice demo page.
//!
//! Every export takes the sentence and a word list (separated by whitespace,
//! commas or `、`) and returns a JSON string, so the same functions are
//! testable natively.

use ndarray::Array2;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use wordlattice::geometry::NUM_RELATIONS;
use wordlattice::lpa::{softmax_rows, LatticeGeometry};
use wordlattice::{build_lattice, build_vocabulary, detect_segments, Lattice, LatticeToken, PatternMatcher};

#[derive(Serialize)]
struct TokenView {
    surface: String,
    s: usize,
    e: usize,
    gran: &'static str,
}

impl From<&LatticeToken> for TokenView {
    fn from(t: &LatticeToken) -> Self {
        TokenView {
            surface: t.surface.clone(),
            s: t.start,
            e: t.end,
            gran: t.granularity.as_str(),
        }
    }
}

#[derive(Serialize)]
struct LatticeView {
    text: String,
    tokens: Vec<TokenView>,
    /// Token indices of each minimal segment.
    segments: Vec<Vec<usize>>,
}

#[derive(Serialize)]
struct GeometryView {
    tokens: Vec<TokenView>,
    /// Relation code 0–6 for every ordered token pair.
    relations: Vec<Vec<u8>>,
    /// Clipped (ss, se, es, ee) for every ordered token pair.
    offsets: Vec<Vec<[i64; 4]>>,
}

#[derive(Serialize)]
struct AttentionView {
    tokens: Vec<TokenView>,
    /// Row-stochastic attention from positional terms only.
    weights: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ErrorView {
    error: String,
}

fn words_of(list: &str) -> Vec<(String, u64)> {
    list.split(|c: char| c.is_whitespace() || c == ',' || c == '、' || c == '，')
        .filter(|w| !w.is_empty())
        .map(|w| (w.to_string(), 1))
        .collect()
}

fn lattice_for(text: &str, words: &str) -> wordlattice::Result<Lattice> {
    let (vocab, _) = build_vocabulary([text], &words_of(words), usize::MAX);
    build_lattice(text, &PatternMatcher::new(&vocab), &vocab)
}

fn to_json<T: Serialize>(r: wordlattice::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).expect("serializable"),
        Err(e) => serde_json::to_string(&ErrorView { error: e.to_string() }).expect("serializable"),
    }
}

/// Lattice tokens and minimal segments.
pub fn lattice_view(text: &str, words: &str) -> String {
    to_json(lattice_for(text, words).map(|lat| LatticeView {
        tokens: lat.tokens.iter().map(TokenView::from).collect(),
        segments: detect_segments(&lat).into_iter().map(|s| s.token_indices).collect(),
        text: lat.text,
    }))
}

/// Pairwise relations and clipped distance offsets.
pub fn geometry_view(text: &str, words: &str) -> String {
    to_json(lattice_for(text, words).and_then(|lat| {
        let starts: Vec<usize> = lat.tokens.iter().map(|t| t.start).collect();
        let ends: Vec<usize> = lat.tokens.iter().map(|t| t.end).collect();
        let geom = LatticeGeometry::new(&starts, &ends, None, lat.n_chars() + 1)?;
        let n = lat.tokens.len();
        let span = |i: usize| wordlattice::Span::new(starts[i], ends[i]);
        let mut offsets = vec![vec![[0i64; 4]; n]; n];
        for (i, row) in offsets.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = wordlattice::distance_offsets(span(i)?, span(j)?).as_array();
            }
        }
        Ok(GeometryView {
            relations: (0..n).map(|i| (0..n).map(|j| geom.relation(i, j).code()).collect()).collect(),
            offsets,
            tokens: lat.tokens.iter().map(TokenView::from).collect(),
        })
    }))
}

/// Attention produced by relation biases `r` (one per relation code) plus a
/// start-to-start distance penalty `decay · |s_j − s_i|`.
pub fn attention_view(text: &str, words: &str, r: &[f64], decay: f64) -> String {
    to_json(lattice_for(text, words).and_then(|lat| {
        if r.len() != NUM_RELATIONS {
            return Err(wordlattice::Error::Shape(format!(
                "expected {NUM_RELATIONS} relation biases, got {}",
                r.len()
            )));
        }
        let starts: Vec<usize> = lat.tokens.iter().map(|t| t.start).collect();
        let ends: Vec<usize> = lat.tokens.iter().map(|t| t.end).collect();
        let geom = LatticeGeometry::new(&starts, &ends, None, lat.n_chars() + 1)?;
        let n = lat.tokens.len();
        let logits = Array2::from_shape_fn((n, n), |(i, j)| {
            let dss = wordlattice::clip(starts[j] as i64 - starts[i] as i64);
            r[geom.relation(i, j).code() as usize] - decay * dss.abs() as f64
        });
        let w = softmax_rows(&logits);
        Ok(AttentionView {
            tokens: lat.tokens.iter().map(TokenView::from).collect(),
            weights: w.rows().into_iter().map(|row| row.to_vec()).collect(),
        })
    }))
}

#[wasm_bindgen]
pub fn lattice(text: &str, words: &str) -> String {
    lattice_view(text, words)
}

#[wasm_bindgen]
pub fn geometry(text: &str, words: &str) -> String {
    geometry_view(text, words)
}

#[wasm_bindgen]
pub fn attention(text: &str, words: &str, relation_bias: Vec<f64>, decay: f64) -> String {
    attention_view(text, words, &relation_bias, decay)
}

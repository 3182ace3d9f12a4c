//! Masked segment prediction and sentence-order prediction instances.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::segment::{detect_segments, Segment};
use crate::vocab::{CLS_ID, MASK_ID, NUM_SPECIALS, SEP_ID};

pub const DEFAULT_MASK_RATIO: f64 = 0.15;

/// How a selected token is corrupted: replaced by `[MASK]` with `mask_prob`,
/// by a random non-special id with `random_prob`, otherwise kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingPolicy {
    pub mask_prob: f64,
    pub random_prob: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy {
            mask_prob: 0.8,
            random_prob: 0.1,
        }
    }
}

impl MaskingPolicy {
    pub const ALWAYS_MASK: MaskingPolicy = MaskingPolicy {
        mask_prob: 1.0,
        random_prob: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SopLabel {
    #[serde(rename = "in_order")]
    InOrder = 0,
    #[serde(rename = "swapped")]
    Swapped = 1,
}

impl SopLabel {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainInstance {
    pub token_ids: Vec<u32>,
    #[serde(rename = "s_arr")]
    pub starts: Vec<usize>,
    #[serde(rename = "e_arr")]
    pub ends: Vec<usize>,
    pub mask_positions: Vec<usize>,
    /// (instance index, original id) for every masked index.
    pub msp_targets: Vec<(usize, u32)>,
    pub sop_label: SopLabel,
    pub n_chars: usize,
}

impl PretrainInstance {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of non-special tokens (everything except `[CLS]` and `[SEP]`s).
    pub fn content_tokens(&self) -> usize {
        self.token_ids.len().saturating_sub(3)
    }

    pub fn spans(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.starts.iter().copied().zip(self.ends.iter().copied())
    }

    /// Pairs (unmasked index, target index) whose spans share a character.
    /// Always empty for instances built by this module.
    pub fn leaking_pairs(&self) -> Vec<(usize, usize)> {
        let mut is_target = vec![false; self.len()];
        for &(i, _) in &self.msp_targets {
            is_target[i] = true;
        }
        let mut out = Vec::new();
        for &(t, _) in &self.msp_targets {
            for (u, &masked) in is_target.iter().enumerate() {
                if !masked && self.starts[u] <= self.ends[t] && self.starts[t] <= self.ends[u] {
                    out.push((u, t));
                }
            }
        }
        out
    }
}

pub(crate) fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("mask ratio must lie in (0, 1), got {ratio}")))
    }
}

/// Sample segments uniformly without replacement until the selected token
/// count first reaches `ratio` of all tokens in `segments`. At least one
/// segment is chosen whenever any exist. Returned in input order.
pub fn select_mask_segments<R: Rng + ?Sized>(
    segments: &[Segment],
    ratio: f64,
    rng: &mut R,
) -> Result<Vec<Segment>> {
    check_ratio(ratio)?;
    if segments.is_empty() {
        return Ok(Vec::new());
    }
    let total: usize = segments.iter().map(Segment::len).sum();
    let budget = ratio * total as f64;
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.shuffle(rng);
    let mut picked = Vec::new();
    let mut count = 0usize;
    for i in order {
        picked.push(i);
        count += segments[i].len();
        if count as f64 >= budget {
            break;
        }
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| segments[i].clone()).collect())
}

/// Corrupt every token of the selected segments and return the prediction
/// targets as (index, original id), ascending by index.
pub fn apply_msp_mask<R: Rng + ?Sized>(
    token_ids: &mut [u32],
    selected: &[Segment],
    vocab_size: usize,
    policy: MaskingPolicy,
    rng: &mut R,
) -> Vec<(usize, u32)> {
    let mut indices: Vec<usize> = selected
        .iter()
        .flat_map(|s| s.token_indices.iter().copied())
        .collect();
    indices.sort_unstable();
    indices.dedup();
    corrupt(token_ids, &indices, vocab_size, policy, rng)
}

pub(crate) fn corrupt<R: Rng + ?Sized>(
    token_ids: &mut [u32],
    indices: &[usize],
    vocab_size: usize,
    policy: MaskingPolicy,
    rng: &mut R,
) -> Vec<(usize, u32)> {
    let mut targets = Vec::with_capacity(indices.len());
    for &i in indices {
        let original = token_ids[i];
        targets.push((i, original));
        let u: f64 = rng.random();
        if u < policy.mask_prob {
            token_ids[i] = MASK_ID;
        } else if u < policy.mask_prob + policy.random_prob {
            token_ids[i] = if vocab_size > NUM_SPECIALS as usize {
                rng.random_range(NUM_SPECIALS..vocab_size as u32)
            } else {
                MASK_ID
            };
        }
    }
    targets
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    /// Maximum tokens per instance, including `[CLS]` and both `[SEP]`s.
    pub token_cap: usize,
    pub mask_ratio: f64,
    pub policy: MaskingPolicy,
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        check_ratio(self.mask_ratio)?;
        if self.token_cap < 4 {
            return Err(Error::Config(format!(
                "token cap {} leaves no room for content",
                self.token_cap
            )));
        }
        let p = self.policy;
        if !(0.0..=1.0).contains(&p.mask_prob)
            || !(0.0..=1.0).contains(&p.random_prob)
            || p.mask_prob + p.random_prob > 1.0
        {
            return Err(Error::Config("masking probabilities must sum to at most 1".into()));
        }
        Ok(())
    }
}

/// An unmasked `[CLS] first [SEP] second [SEP]` layout with the segments of
/// both parts expressed as instance indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairLayout {
    pub token_ids: Vec<u32>,
    pub starts: Vec<usize>,
    pub ends: Vec<usize>,
    pub segments: Vec<Segment>,
    pub sop_label: SopLabel,
    pub n_chars: usize,
}

struct Part<'a> {
    lat: &'a Lattice,
    segments: Vec<Segment>,
    tokens: usize,
    truncated: bool,
}

impl<'a> Part<'a> {
    fn new(lat: &'a Lattice) -> Self {
        let segments = detect_segments(lat);
        Part {
            lat,
            tokens: lat.tokens.len(),
            segments,
            truncated: false,
        }
    }

    fn drop_last_segment(&mut self) -> bool {
        match self.segments.pop() {
            Some(s) => {
                self.tokens -= s.len();
                self.truncated = true;
                true
            }
            None => false,
        }
    }

    fn n_chars(&self) -> usize {
        if self.truncated {
            self.segments.last().map_or(0, |s| s.end)
        } else {
            self.lat.n_chars()
        }
    }
}

/// Lay out two sentences as `[CLS] A [SEP] B [SEP]` (B first when `swap`).
///
/// `[CLS]` sits at position 0; character positions continue across the pair
/// and each `[SEP]` occupies one position. Over-long pairs lose whole trailing
/// segments, first from the second part, then from the first.
pub fn layout_pair(a: &Lattice, b: &Lattice, swap: bool, token_cap: usize) -> PairLayout {
    let (first, second) = if swap { (b, a) } else { (a, b) };
    let mut first = Part::new(first);
    let mut second = Part::new(second);
    let budget = token_cap.saturating_sub(3);
    while first.tokens + second.tokens > budget {
        if !second.drop_last_segment() && !first.drop_last_segment() {
            break;
        }
    }
    if first.truncated || second.truncated {
        log::debug!(
            "truncated pair to {} + {} tokens (cap {token_cap})",
            first.tokens,
            second.tokens
        );
    }

    let n = first.tokens + second.tokens + 3;
    let mut layout = PairLayout {
        token_ids: Vec::with_capacity(n),
        starts: Vec::with_capacity(n),
        ends: Vec::with_capacity(n),
        segments: Vec::new(),
        sop_label: if swap {
            SopLabel::Swapped
        } else {
            SopLabel::InOrder
        },
        n_chars: first.n_chars() + second.n_chars(),
    };
    let push = |l: &mut PairLayout, id: u32, s: usize, e: usize| {
        l.token_ids.push(id);
        l.starts.push(s);
        l.ends.push(e);
    };
    push(&mut layout, CLS_ID, 0, 0);
    let mut offset = 0usize;
    for part in [&first, &second] {
        for seg in &part.segments {
            let base = layout.token_ids.len();
            for &ti in &seg.token_indices {
                let t = &part.lat.tokens[ti];
                push(&mut layout, t.id, t.start + offset, t.end + offset);
            }
            layout.segments.push(Segment {
                token_indices: (base..base + seg.len()).collect(),
                start: seg.start + offset,
                end: seg.end + offset,
            });
        }
        offset += part.n_chars() + 1;
        push(&mut layout, SEP_ID, offset, offset);
    }
    layout
}

/// Lay out a sentence pair, then select and corrupt whole segments.
pub fn build_pretrain_instance<R: Rng + ?Sized>(
    a: &Lattice,
    b: &Lattice,
    swap: bool,
    cfg: &InstanceConfig,
    vocab_size: usize,
    rng: &mut R,
) -> Result<PretrainInstance> {
    cfg.validate()?;
    if a.tokens.is_empty() || b.tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    let layout = layout_pair(a, b, swap, cfg.token_cap);
    let selected = select_mask_segments(&layout.segments, cfg.mask_ratio, rng)?;
    let mut token_ids = layout.token_ids;
    let msp_targets = apply_msp_mask(&mut token_ids, &selected, vocab_size, cfg.policy, rng);
    debug_assert!(token_ids.len() <= cfg.token_cap);
    Ok(PretrainInstance {
        token_ids,
        starts: layout.starts,
        ends: layout.ends,
        mask_positions: msp_targets.iter().map(|t| t.0).collect(),
        msp_targets,
        sop_label: layout.sop_label,
        n_chars: layout.n_chars,
    })
}

/// Baseline corruption that ignores lattice structure: each non-special token
/// is chosen independently with probability `ratio` (at least one overall).
/// Used to measure how much overlapping tokens leak masked content.
pub fn random_token_mask<R: Rng + ?Sized>(
    layout: &PairLayout,
    ratio: f64,
    vocab_size: usize,
    policy: MaskingPolicy,
    rng: &mut R,
) -> Result<PretrainInstance> {
    check_ratio(ratio)?;
    let candidates: Vec<usize> = layout
        .segments
        .iter()
        .flat_map(|s| s.token_indices.iter().copied())
        .collect();
    let mut chosen: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < ratio)
        .collect();
    if chosen.is_empty() && !candidates.is_empty() {
        chosen.push(candidates[rng.random_range(0..candidates.len())]);
    }
    chosen.sort_unstable();
    let mut token_ids = layout.token_ids.clone();
    let msp_targets = corrupt(&mut token_ids, &chosen, vocab_size, policy, rng);
    Ok(PretrainInstance {
        token_ids,
        starts: layout.starts.clone(),
        ends: layout.ends.clone(),
        mask_positions: chosen,
        msp_targets,
        sop_label: layout.sop_label,
        n_chars: layout.n_chars,
    })
}

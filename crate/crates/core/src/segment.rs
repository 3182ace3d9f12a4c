//! Minimal lattice segments: the smallest groups of tokens such that no token
//! outside a group overlaps a token inside it.

use crate::lattice::Lattice;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    /// Indices into `Lattice::tokens`, ascending.
    pub token_indices: Vec<usize>,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.token_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_indices.is_empty()
    }
}

/// Walk the characters in order. A segment closes at character `p` once every
/// token that started inside the open segment ends at or before `p`.
pub fn detect_segments(lat: &Lattice) -> Vec<Segment> {
    let tokens = &lat.tokens;
    let last = tokens.iter().map(|t| t.end).max().unwrap_or(0);
    let mut segments = Vec::new();
    let mut next = 0usize;
    let mut open: Vec<usize> = Vec::new();
    let mut open_start = 0usize;
    let mut reach = 0usize;

    for p in 1..=last {
        while next < tokens.len() && tokens[next].start == p {
            if open.is_empty() {
                open_start = p;
            }
            reach = reach.max(tokens[next].end);
            open.push(next);
            next += 1;
        }
        if !open.is_empty() && reach == p {
            segments.push(Segment {
                token_indices: std::mem::take(&mut open),
                start: open_start,
                end: p,
            });
        }
    }
    debug_assert_eq!(next, tokens.len(), "tokens must be sorted by start");
    segments
}

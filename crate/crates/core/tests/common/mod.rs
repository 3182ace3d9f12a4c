//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use wordlattice::{build_lattice, build_vocabulary, Lattice, PatternMatcher, Vocabulary};

/// A small CJK alphabet so random words actually occur in random text.
pub const ALPHABET: [char; 8] = ['天', '地', '人', '和', '日', '月', '山', '水'];

pub struct Case {
    pub text: String,
    pub words: Vec<String>,
}

/// Random vocabulary (1..=50 words of length 2..=4) and text (1..=64 chars).
pub fn random_case<R: Rng>(rng: &mut R, alphabet_len: usize) -> Case {
    let alphabet = &ALPHABET[..alphabet_len.clamp(2, ALPHABET.len())];
    let n_words = rng.random_range(1..=50);
    let words = (0..n_words)
        .map(|_| {
            let len = rng.random_range(2..=4);
            (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
        })
        .collect();
    let n = rng.random_range(1..=64);
    let text = (0..n).map(|_| *alphabet.choose(rng).unwrap()).collect();
    Case { text, words }
}

pub fn vocab_for(texts: &[&str], words: &[String]) -> (Vocabulary, PatternMatcher) {
    let counts: Vec<(String, u64)> = words.iter().map(|w| (w.clone(), 1)).collect();
    let (vocab, _) = build_vocabulary(texts.iter().copied(), &counts, usize::MAX);
    let matcher = PatternMatcher::new(&vocab);
    (vocab, matcher)
}

pub fn lattice_of(case: &Case) -> Lattice {
    let (vocab, matcher) = vocab_for(&[&case.text], &case.words);
    build_lattice(&case.text, &matcher, &vocab).unwrap()
}

/// Every substring that is a vocabulary word, plus every single character,
/// as (s, e, surface) with closed 1-based spans.
pub fn brute_force_tokens(text: &str, words: &[String]) -> BTreeSet<(usize, usize, String)> {
    let chars: Vec<char> = text.chars().collect();
    let words: BTreeSet<&str> = words.iter().map(String::as_str).collect();
    let mut out = BTreeSet::new();
    for i in 0..chars.len() {
        for j in i..chars.len() {
            let sub: String = chars[i..=j].iter().collect();
            if i == j || words.contains(sub.as_str()) {
                out.insert((i + 1, j + 1, sub));
            }
        }
    }
    out
}

pub fn lattice_tokens(lat: &Lattice) -> BTreeSet<(usize, usize, String)> {
    lat.tokens
        .iter()
        .map(|t| (t.start, t.end, t.surface.clone()))
        .collect()
}

/// Connected components of the pairwise overlap graph, each sorted, ordered
/// by smallest member.
pub fn overlap_components(spans: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let n = spans.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (spans[i], spans[j]);
            if a.0 <= b.1 && b.0 <= a.1 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = find(&mut parent, i);
        groups[r].push(i);
    }
    groups.into_iter().filter(|g| !g.is_empty()).collect()
}

/// Relation code of `tgt` seen from `src`, from the seven defining predicates.
/// Returns every code whose predicate holds, so callers can check uniqueness.
pub fn relation_predicates(src: (usize, usize), tgt: (usize, usize), same_index: bool) -> Vec<u8> {
    let (si, ei) = src;
    let (sj, ej) = tgt;
    let identical = src == tgt;
    let preds = [
        same_index,
        !same_index && ej < si,
        !same_index && sj < si && si <= ej && ej < ei,
        !same_index && !identical && si <= sj && ej <= ei,
        !same_index && !identical && sj <= si && ei <= ej,
        !same_index && si < sj && sj <= ei && ei < ej,
        !same_index && ei < sj,
    ];
    (0..7u8).filter(|&k| preds[k as usize]).collect()
}

/// Every way to tile characters 1..=n with the given spans.
pub fn segmentation_paths(spans: &[(usize, usize)], n: usize) -> Vec<Vec<usize>> {
    fn go(spans: &[(usize, usize)], pos: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos > n {
            out.push(cur.clone());
            return;
        }
        for (k, &(s, e)) in spans.iter().enumerate() {
            if s == pos {
                cur.push(k);
                go(spans, e + 1, n, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(spans, 1, n, &mut Vec::new(), &mut out);
    out
}

//! Word lattices: the character backbone plus every vocabulary word found in
//! the text, listed as tokens with closed 1-based character spans.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::PatternMatcher;
use crate::text::{is_non_chinese_word_char, normalize_str};
use crate::vocab::{Granularity, Vocabulary, UNK_ID};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeToken {
    pub surface: String,
    #[serde(rename = "s")]
    pub start: usize,
    #[serde(rename = "e")]
    pub end: usize,
    #[serde(rename = "gran")]
    pub granularity: Granularity,
    pub id: u32,
}

impl LatticeToken {
    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn len_chars(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn overlaps(&self, other: &LatticeToken) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    fn shifted(mut self, offset: usize) -> Self {
        self.start += offset;
        self.end += offset;
        self
    }
}

/// One sentence's lattice. Also the line-delimited JSON record schema
/// `{"text": .., "tokens": [{"surface","s","e","gran","id"}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub text: String,
    pub tokens: Vec<LatticeToken>,
}

impl Lattice {
    pub fn n_chars(&self) -> usize {
        self.text.chars().count()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("lattice serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }

    /// Text covered by a closed 1-based span.
    pub fn slice(&self, start: usize, end: usize) -> String {
        self.text.chars().skip(start - 1).take(end + 1 - start).collect()
    }
}

fn char_token(c: char, pos: usize, vocab: &Vocabulary) -> LatticeToken {
    let surface = c.to_string();
    LatticeToken {
        id: vocab.id_of(&surface).unwrap_or(UNK_ID),
        surface,
        start: pos,
        end: pos,
        granularity: Granularity::Character,
    }
}

/// Tokenize a maximal run of non-Chinese letters/digits by greedy
/// longest-match against word-piece entries, falling back to single characters
/// (which map to `[UNK]` when absent). The returned tokens tile the run and
/// carry 1-based positions relative to it.
pub fn segment_non_chinese(span: &str, vocab: &Vocabulary) -> Vec<LatticeToken> {
    let chars: Vec<char> = span.chars().collect();
    let max_len = vocab.max_piece_chars().max(1);
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let longest = (2..=max_len.min(chars.len() - i)).rev().find_map(|len| {
            let piece: String = chars[i..i + len].iter().collect();
            match vocab.id_of(&piece) {
                Some(id)
                    if vocab.entry(id).map(|e| e.granularity) == Some(Granularity::WordPiece) =>
                {
                    Some((piece, len, id))
                }
                _ => None,
            }
        });
        match longest {
            Some((surface, len, id)) => {
                out.push(LatticeToken {
                    surface,
                    start: i + 1,
                    end: i + len,
                    granularity: Granularity::WordPiece,
                    id,
                });
                i += len;
            }
            None => {
                out.push(char_token(chars[i], i + 1, vocab));
                i += 1;
            }
        }
    }
    out
}

/// Build the lattice of `text` (normalized first).
///
/// Every non-whitespace character outside a non-Chinese run gets a backbone
/// token; non-Chinese runs are tiled by [`segment_non_chinese`]; every
/// vocabulary word found by the matcher is added. Tokens are deduplicated by
/// span (backbone wins) and sorted by (start, end).
pub fn build_lattice(text: &str, matcher: &PatternMatcher, vocab: &Vocabulary) -> Result<Lattice> {
    let text = normalize_str(text);
    if text.is_empty() {
        return Err(Error::EmptyInput);
    }
    let chars: Vec<char> = text.chars().collect();
    let mut by_span: BTreeMap<(usize, usize), LatticeToken> = BTreeMap::new();

    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if is_non_chinese_word_char(c) {
            let run_end = chars[i..]
                .iter()
                .position(|&c| !is_non_chinese_word_char(c))
                .map_or(chars.len(), |k| i + k);
            let run: String = chars[i..run_end].iter().collect();
            for tok in segment_non_chinese(&run, vocab) {
                let tok = tok.shifted(i);
                by_span.insert(tok.span(), tok);
            }
            i = run_end;
        } else {
            by_span.insert((i + 1, i + 1), char_token(c, i + 1, vocab));
            i += 1;
        }
    }

    for m in matcher.find_all(&text) {
        by_span.entry((m.start, m.end)).or_insert_with(|| LatticeToken {
            surface: chars[m.start - 1..m.end].iter().collect(),
            start: m.start,
            end: m.end,
            granularity: Granularity::Word,
            id: m.id,
        });
    }

    Ok(Lattice {
        text,
        tokens: by_span.into_values().collect(),
    })
}

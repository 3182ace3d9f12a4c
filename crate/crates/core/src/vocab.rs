//! Vocabulary of characters, lattice words and non-Chinese word-pieces.
//!
//! Ids are dense. The five special tokens always occupy ids 0..=4; the
//! remaining ids follow the order entries were added (or the line order of a
//! vocabulary file).

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{is_chinese, is_non_chinese_word_char, normalize_text};

pub const CLS_ID: u32 = 0;
pub const SEP_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const PAD_ID: u32 = 4;
pub const NUM_SPECIALS: u32 = 5;

pub const SPECIAL_SURFACES: [&str; NUM_SPECIALS as usize] =
    ["[CLS]", "[SEP]", "[MASK]", "[UNK]", "[PAD]"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Granularity {
    #[serde(rename = "char")]
    Character,
    #[serde(rename = "word")]
    Word,
    #[serde(rename = "piece")]
    WordPiece,
    #[serde(rename = "special")]
    Special,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Character => "char",
            Granularity::Word => "word",
            Granularity::WordPiece => "piece",
            Granularity::Special => "special",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" => Granularity::Character,
            "word" => Granularity::Word,
            "piece" => Granularity::WordPiece,
            "special" => Granularity::Special,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub surface: String,
    pub frequency: u64,
    pub granularity: Granularity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    ids: HashMap<String, u32>,
}

/// Diagnostics collected while building a vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VocabReport {
    pub records: usize,
    pub rejected_records: usize,
    pub skipped_words: usize,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::specials_only()
    }
}

impl Vocabulary {
    pub fn specials_only() -> Self {
        let mut v = Vocabulary {
            entries: Vec::new(),
            ids: HashMap::new(),
        };
        for s in SPECIAL_SURFACES {
            v.push(s.to_string(), 0, Granularity::Special);
        }
        v
    }

    fn push(&mut self, surface: String, frequency: u64, granularity: Granularity) -> u32 {
        let id = self.entries.len() as u32;
        self.ids.insert(surface.clone(), id);
        self.entries.push(VocabEntry {
            surface,
            frequency,
            granularity,
        });
        id
    }

    /// Build from explicit entries (specials are prepended). Duplicate
    /// surfaces are rejected.
    pub fn from_entries(entries: impl IntoIterator<Item = VocabEntry>) -> Result<Self> {
        let mut v = Self::specials_only();
        for (i, e) in entries.into_iter().enumerate() {
            if e.granularity == Granularity::Special {
                return Err(Error::VocabFormat {
                    line: i + 1,
                    reason: "special entries are reserved".into(),
                });
            }
            if v.ids.contains_key(&e.surface) {
                return Err(Error::VocabFormat {
                    line: i + 1,
                    reason: format!("duplicate surface {:?}", e.surface),
                });
            }
            v.push(e.surface, e.frequency, e.granularity);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id_of(&self, surface: &str) -> Option<u32> {
        self.ids.get(surface).copied()
    }

    pub fn entry(&self, id: u32) -> Option<&VocabEntry> {
        self.entries.get(id as usize)
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn words(&self) -> impl Iterator<Item = (u32, &str)> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.granularity == Granularity::Word)
            .map(|(i, e)| (i as u32, e.surface.as_str()))
    }

    pub fn count_by(&self, granularity: Granularity) -> usize {
        self.entries
            .iter()
            .filter(|e| e.granularity == granularity)
            .count()
    }

    /// Longest surface among word-pieces and characters, in characters.
    pub(crate) fn max_piece_chars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.granularity, Granularity::WordPiece | Granularity::Character))
            .map(|e| e.surface.chars().count())
            .max()
            .unwrap_or(1)
    }

    /// Write one `surface<TAB>frequency<TAB>flag` line per non-special entry,
    /// in id order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries[NUM_SPECIALS as usize..] {
            writeln!(w, "{}\t{}\t{}", e.surface, e.frequency, e.granularity.as_str())?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| Error::VocabFormat {
                line: i + 1,
                reason: reason.to_string(),
            };
            let mut fields = line.split('\t');
            let (Some(surface), Some(freq), Some(flag), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected surface<TAB>frequency<TAB>flag"));
            };
            if surface.is_empty() {
                return Err(bad("empty surface"));
            }
            let frequency = freq.parse().map_err(|_| bad("frequency is not an integer"))?;
            let granularity = Granularity::parse(flag).ok_or_else(|| bad("unknown flag"))?;
            entries.push(VocabEntry {
                surface: surface.to_string(),
                frequency,
                granularity,
            });
        }
        Self::from_entries(entries).map_err(|e| match e {
            Error::VocabFormat { line, reason } => Error::VocabFormat { line, reason },
            other => other,
        })
    }
}

/// Parse a word-frequency list: one word per line, optionally followed by a
/// tab- or space-separated count (default 1). Blank lines and lines starting
/// with `#` are ignored.
pub fn read_word_counts<R: BufRead>(r: R) -> Result<Vec<(String, u64)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap_or_default();
        let count = match parts.next() {
            Some(c) => c.parse().map_err(|_| Error::VocabFormat {
                line: i + 1,
                reason: format!("bad count {c:?}"),
            })?,
            None => 1,
        };
        out.push((word.to_string(), count));
    }
    Ok(out)
}

fn by_frequency(counts: BTreeMap<String, u64>) -> Vec<(String, u64)> {
    let mut v: Vec<_> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// Build a vocabulary from a corpus and an external word-frequency list.
///
/// Characters come from the corpus itself, so every character that occurs in
/// it is representable. From the word list, Chinese multi-character words
/// compete for `max_words` slots ordered by (frequency desc, surface asc);
/// multi-character runs of non-Chinese letters/digits are kept as word-pieces.
/// Corpus records that are not valid UTF-8 are rejected and counted.
pub fn build_vocabulary<I, T>(
    corpus: I,
    word_counts: &[(String, u64)],
    max_words: usize,
) -> (Vocabulary, VocabReport)
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    let mut report = VocabReport::default();
    let mut chars: BTreeMap<String, u64> = BTreeMap::new();
    for record in corpus {
        report.records += 1;
        let raw = record.as_ref();
        if std::str::from_utf8(raw).is_err() {
            report.rejected_records += 1;
            log::warn!("rejecting corpus record {}: invalid UTF-8", report.records);
            continue;
        }
        let text = normalize_text(raw).text;
        for c in text.chars().filter(|c| !c.is_whitespace()) {
            *chars.entry(c.to_string()).or_default() += 1;
        }
    }

    let mut words: BTreeMap<String, u64> = BTreeMap::new();
    let mut pieces: BTreeMap<String, u64> = BTreeMap::new();
    for (raw, count) in word_counts {
        let w = normalize_text(raw.as_bytes()).text;
        if w.chars().count() < 2 {
            continue;
        }
        if w.chars().all(is_chinese) {
            *words.entry(w).or_default() += count;
        } else if w.chars().all(is_non_chinese_word_char) {
            *pieces.entry(w).or_default() += count;
        } else {
            report.skipped_words += 1;
            log::debug!("skipping mixed-script word {w:?}");
        }
    }

    let mut vocab = Vocabulary::specials_only();
    for (surface, f) in by_frequency(chars) {
        vocab.push(surface, f, Granularity::Character);
    }
    for (surface, f) in by_frequency(words).into_iter().take(max_words) {
        vocab.push(surface, f, Granularity::Word);
    }
    for (surface, f) in by_frequency(pieces) {
        vocab.push(surface, f, Granularity::WordPiece);
    }
    (vocab, report)
}

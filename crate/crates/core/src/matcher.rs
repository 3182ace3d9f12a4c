//! Multi-pattern word matcher over the vocabulary's lattice words.

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};

use crate::vocab::Vocabulary;

/// A vocabulary word found in a text, with its closed 1-based character span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WordMatch {
    pub start: usize,
    pub end: usize,
    pub id: u32,
}

/// Compiled automaton over every multi-character `Word` entry of a vocabulary.
///
/// Reports all overlapping occurrences, so the cost of a scan is linear in the
/// text length plus the number of matches. Immutable once built.
#[derive(Debug, Clone)]
pub struct PatternMatcher {
    automaton: Option<AhoCorasick>,
    ids: Vec<u32>,
}

impl PatternMatcher {
    pub fn new(vocab: &Vocabulary) -> Self {
        let (ids, patterns): (Vec<u32>, Vec<&str>) = vocab
            .words()
            .filter(|(_, w)| w.chars().nth(1).is_some())
            .unzip();
        let automaton = if patterns.is_empty() {
            None
        } else {
            Some(
                AhoCorasickBuilder::new()
                    .match_kind(MatchKind::Standard)
                    .build(&patterns)
                    .expect("vocabulary words compile into an automaton"),
            )
        };
        PatternMatcher { automaton, ids }
    }

    pub fn num_patterns(&self) -> usize {
        self.ids.len()
    }

    /// All word occurrences in `text`, sorted by (start, end).
    pub fn find_all(&self, text: &str) -> Vec<WordMatch> {
        let Some(ac) = &self.automaton else {
            return Vec::new();
        };
        // char_at[b] = 0-based char index of the char beginning at byte b
        let mut char_at = vec![0usize; text.len() + 1];
        let mut n = 0;
        for (b, _) in text.char_indices() {
            char_at[b] = n;
            n += 1;
        }
        char_at[text.len()] = n;

        let mut out: Vec<WordMatch> = ac
            .find_overlapping_iter(text)
            .map(|m| WordMatch {
                start: char_at[m.start()] + 1,
                end: char_at[m.end()],
                id: self.ids[m.pattern().as_usize()],
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Convenience constructor matching the pipeline vocabulary.
pub fn compile_matcher(vocab: &Vocabulary) -> PatternMatcher {
    PatternMatcher::new(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{Granularity, VocabEntry};

    fn vocab_of(words: &[&str]) -> Vocabulary {
        Vocabulary::from_entries(words.iter().map(|w| VocabEntry {
            surface: w.to_string(),
            frequency: 1,
            granularity: Granularity::Word,
        }))
        .unwrap()
    }

    fn spans(m: &[WordMatch]) -> Vec<(usize, usize)> {
        m.iter().map(|m| (m.start, m.end)).collect()
    }

    #[test]
    fn lattice_words_of_example_sentence() {
        let v = vocab_of(&["研究", "研究生", "生活", "充实"]);
        let m = PatternMatcher::new(&v).find_all("研究生活很充实");
        assert_eq!(spans(&m), vec![(1, 2), (1, 3), (3, 4), (6, 7)]);
        assert_eq!(m[1].id, v.id_of("研究生").unwrap());
    }

    #[test]
    fn empty_word_set_matches_nothing() {
        let v = Vocabulary::specials_only();
        let m = PatternMatcher::new(&v);
        assert_eq!(m.num_patterns(), 0);
        assert!(m.find_all("研究生活很充实").is_empty());
    }

    #[test]
    fn overlapping_patterns() {
        let v = vocab_of(&["aba", "bab"]);
        let m = PatternMatcher::new(&v).find_all("ababab");
        assert_eq!(spans(&m), vec![(1, 3), (2, 4), (3, 5), (4, 6)]);
    }

    #[test]
    fn single_characters_are_not_patterns() {
        let v = vocab_of(&["很", "充实"]);
        let m = PatternMatcher::new(&v);
        assert_eq!(m.num_patterns(), 1);
        assert_eq!(spans(&m.find_all("很充实")), vec![(2, 3)]);
    }
}

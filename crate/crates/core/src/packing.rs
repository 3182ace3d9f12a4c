//! Packing documents into fixed-budget sentence-pair instances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{build_lattice, Lattice};
use crate::matcher::PatternMatcher;
use crate::msp::{build_pretrain_instance, check_ratio, InstanceConfig, MaskingPolicy, PretrainInstance};
use crate::text::is_non_chinese_word_char;
use crate::vocab::Vocabulary;

/// Paired character budget and lattice token cap. A lattice instance holds
/// about 35% more tokens than the characters it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// 128 characters, 173 lattice tokens.
    One,
    /// 512 characters, 692 lattice tokens.
    Two,
}

impl Phase {
    pub fn char_budget(self) -> usize {
        match self {
            Phase::One => 128,
            Phase::Two => 512,
        }
    }

    pub fn token_cap(self) -> usize {
        match self {
            Phase::One => 173,
            Phase::Two => 692,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Phase::One),
            2 => Some(Phase::Two),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PackingConfig {
    pub char_budget: usize,
    pub token_cap: usize,
    pub mask_ratio: f64,
    pub policy: MaskingPolicy,
}

impl PackingConfig {
    pub fn for_phase(phase: Phase, mask_ratio: f64) -> Self {
        PackingConfig {
            char_budget: phase.char_budget(),
            token_cap: phase.token_cap(),
            mask_ratio,
            policy: MaskingPolicy::default(),
        }
    }

    pub fn instance_config(&self) -> InstanceConfig {
        InstanceConfig {
            token_cap: self.token_cap,
            mask_ratio: self.mask_ratio,
            policy: self.policy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_ratio(self.mask_ratio)?;
        if self.char_budget < 2 {
            return Err(Error::Config("character budget must be at least 2".into()));
        }
        self.instance_config().validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackReport {
    pub split_sentences: usize,
    pub skipped_chunks: usize,
    pub instances: usize,
}

fn joined_len(chunk: &str, next: &str) -> usize {
    chunk.chars().count() + usize::from(needs_space(chunk, next)) + next.chars().count()
}

fn needs_space(left: &str, right: &str) -> bool {
    match (left.chars().last(), right.chars().next()) {
        (Some(a), Some(b)) => is_non_chinese_word_char(a) && is_non_chinese_word_char(b),
        _ => false,
    }
}

fn join(parts: &[String]) -> String {
    let mut out = String::new();
    for p in parts {
        if needs_space(&out, p) {
            out.push(' ');
        }
        out.push_str(p);
    }
    out
}

/// Greedily group consecutive sentences while their joined length stays
/// within `char_budget`. Sentences longer than the budget are cut into
/// budget-sized pieces first.
pub fn pack_sentences(
    sentences: &[String],
    char_budget: usize,
    report: &mut PackReport,
) -> Vec<Vec<String>> {
    let mut pieces: Vec<String> = Vec::new();
    for s in sentences.iter().filter(|s| !s.is_empty()) {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() > char_budget {
            report.split_sentences += 1;
            log::warn!(
                "sentence of {} characters exceeds the budget of {char_budget}; splitting",
                chars.len()
            );
            pieces.extend(chars.chunks(char_budget).map(|c| c.iter().collect()));
        } else {
            pieces.push(s.clone());
        }
    }

    let mut chunks = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for p in pieces {
        if !current.is_empty() && joined_len(&join(&current), &p) > char_budget {
            chunks.push(std::mem::take(&mut current));
        }
        current.push(p);
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

/// Split a packed chunk into the two halves of a sentence-order pair: at a
/// random sentence boundary, or at the middle character of a lone sentence.
fn split_chunk<R: Rng + ?Sized>(chunk: &[String], rng: &mut R) -> Option<(String, String)> {
    if chunk.len() >= 2 {
        let k = rng.random_range(1..chunk.len());
        return Some((join(&chunk[..k]), join(&chunk[k..])));
    }
    let chars: Vec<char> = chunk.first()?.chars().collect();
    if chars.len() < 2 {
        return None;
    }
    let mid = chars.len() / 2;
    Some((chars[..mid].iter().collect(), chars[mid..].iter().collect()))
}

/// Turn one document (its sentences, in order) into pre-training instances.
/// Sentence pairs never cross document boundaries.
pub fn pack_document<R: Rng + ?Sized>(
    sentences: &[String],
    vocab: &Vocabulary,
    matcher: &PatternMatcher,
    cfg: &PackingConfig,
    rng: &mut R,
    report: &mut PackReport,
) -> Result<Vec<PretrainInstance>> {
    cfg.validate()?;
    let icfg = cfg.instance_config();
    let mut out = Vec::new();
    for chunk in pack_sentences(sentences, cfg.char_budget, report) {
        let Some((a, b)) = split_chunk(&chunk, rng) else {
            report.skipped_chunks += 1;
            continue;
        };
        let (la, lb) = match (lattice_or_none(&a, matcher, vocab)?, lattice_or_none(&b, matcher, vocab)?) {
            (Some(la), Some(lb)) => (la, lb),
            _ => {
                report.skipped_chunks += 1;
                continue;
            }
        };
        let swap = rng.random_bool(0.5);
        let inst = build_pretrain_instance(&la, &lb, swap, &icfg, vocab.len(), rng)?;
        assert!(inst.len() <= cfg.token_cap, "token cap exceeded");
        out.push(inst);
        report.instances += 1;
    }
    Ok(out)
}

fn lattice_or_none(text: &str, matcher: &PatternMatcher, vocab: &Vocabulary) -> Result<Option<Lattice>> {
    match build_lattice(text, matcher, vocab) {
        Ok(l) if !l.tokens.is_empty() => Ok(Some(l)),
        Ok(_) | Err(Error::EmptyInput) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::build_vocabulary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sentence(c: char, n: usize) -> String {
        std::iter::repeat_n(c, n).collect()
    }

    #[test]
    fn phase_presets() {
        assert_eq!((Phase::One.char_budget(), Phase::One.token_cap()), (128, 173));
        assert_eq!((Phase::Two.char_budget(), Phase::Two.token_cap()), (512, 692));
        assert_eq!(Phase::from_number(3), None);
    }

    #[test]
    fn greedy_packing() {
        let s = vec![sentence('甲', 50), sentence('乙', 50), sentence('丙', 50)];
        let mut r = PackReport::default();
        let chunks = pack_sentences(&s, 128, &mut r);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0], s[..2].to_vec());
        assert_eq!(chunks[1], s[2..].to_vec());
        assert_eq!(r.split_sentences, 0);
    }

    #[test]
    fn oversize_sentence_is_split() {
        let s = vec![sentence('甲', 300)];
        let mut r = PackReport::default();
        let chunks = pack_sentences(&s, 128, &mut r);
        let lens: Vec<usize> = chunks.iter().map(|c| c[0].chars().count()).collect();
        assert_eq!(lens, vec![128, 128, 44]);
        assert_eq!(r.split_sentences, 1);
    }

    #[test]
    fn latin_sentences_keep_a_space() {
        assert_eq!(join(&["abc".into(), "def".into()]), "abc def");
        assert_eq!(join(&["研究。".into(), "abc".into()]), "研究。abc");
    }

    #[test]
    fn documents_become_capped_instances() {
        let doc: Vec<String> = (0..12).map(|i| format!("研究生活很充实第{i}天。")).collect();
        let words = vec![("研究".to_string(), 2), ("研究生".to_string(), 1), ("生活".to_string(), 1)];
        let (v, _) = build_vocabulary(doc.iter(), &words, 10);
        let m = PatternMatcher::new(&v);
        let cfg = PackingConfig {
            char_budget: 40,
            token_cap: 30,
            mask_ratio: 0.15,
            policy: MaskingPolicy::default(),
        };
        let mut r = PackReport::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let insts = pack_document(&doc, &v, &m, &cfg, &mut rng, &mut r).unwrap();
        assert!(!insts.is_empty());
        assert_eq!(r.instances, insts.len());
        for inst in &insts {
            assert!(inst.len() <= 30);
            assert!(inst.leaking_pairs().is_empty());
        }
        let again = pack_document(&doc, &v, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(2), &mut PackReport::default()).unwrap();
        assert_eq!(insts, again);
    }

    #[test]
    fn bad_ratio_is_rejected() {
        let v = Vocabulary::specials_only();
        let m = PatternMatcher::new(&v);
        let mut cfg = PackingConfig::for_phase(Phase::One, 0.15);
        cfg.mask_ratio = 1.5;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(pack_document(&[], &v, &m, &cfg, &mut rng, &mut PackReport::default()).is_err());
    }
}

//! Generated corpora for the training experiments.
//!
//! Every word owns a private set of characters, so any one token of a word
//! determines the rest of it. Word order is controlled separately: with
//! `follow_prob = 0` and `zipf_exponent = 0` sentences are uniform random
//! word sequences and context carries no information, which isolates what a
//! model can read off overlapping lattice tokens.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::Result;
use crate::lattice::{build_lattice, Lattice};
use crate::matcher::PatternMatcher;
use crate::msp::{
    build_pretrain_instance, layout_pair, random_token_mask, InstanceConfig, MaskingPolicy, PretrainInstance,
};
use crate::vocab::{build_vocabulary, Vocabulary};

/// First code point used for generated characters (CJK block).
const FIRST_CHAR: u32 = 0x4E00;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_words: usize,
    pub min_word_chars: usize,
    pub max_word_chars: usize,
    pub min_sentence_words: usize,
    pub max_sentence_words: usize,
    /// Exponent of the Zipf law for word frequencies (0 = uniform).
    pub zipf_exponent: f64,
    /// Probability that a word is followed by its fixed successor.
    pub follow_prob: f64,
}

impl SyntheticSpec {
    /// Uniform random word sequences.
    pub fn mutually_determined() -> Self {
        SyntheticSpec {
            n_words: 40,
            min_word_chars: 2,
            max_word_chars: 3,
            min_sentence_words: 4,
            max_sentence_words: 7,
            zipf_exponent: 0.0,
            follow_prob: 0.0,
        }
    }

    /// A small skewed vocabulary with mostly fixed successors.
    pub fn structured() -> Self {
        SyntheticSpec {
            n_words: 10,
            zipf_exponent: 2.0,
            follow_prob: 0.95,
            ..Self::mutually_determined()
        }
    }
}

pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub words: Vec<String>,
    pub vocab: Vocabulary,
    pub matcher: PatternMatcher,
    successor: Vec<usize>,
    unigram: WeightedIndex<f64>,
}

impl SyntheticCorpus {
    pub fn new<R: Rng + ?Sized>(spec: SyntheticSpec, rng: &mut R) -> Result<Self> {
        let mut next_char = FIRST_CHAR;
        let mut words = Vec::with_capacity(spec.n_words);
        for _ in 0..spec.n_words {
            let len = rng.random_range(spec.min_word_chars..=spec.max_word_chars);
            let w: String = (0..len)
                .map(|_| {
                    let c = char::from_u32(next_char).expect("CJK code point");
                    next_char += 1;
                    c
                })
                .collect();
            words.push(w);
        }
        let counts: Vec<(String, u64)> = words.iter().map(|w| (w.clone(), 1)).collect();
        let (vocab, _) = build_vocabulary(words.iter(), &counts, words.len());
        let matcher = PatternMatcher::new(&vocab);
        let successor = (0..spec.n_words).map(|_| rng.random_range(0..spec.n_words)).collect();
        let weights: Vec<f64> = (1..=spec.n_words).map(|r| (r as f64).powf(-spec.zipf_exponent)).collect();
        let unigram = WeightedIndex::new(weights).map_err(|e| crate::Error::Config(e.to_string()))?;
        Ok(SyntheticCorpus {
            spec,
            words,
            vocab,
            matcher,
            successor,
            unigram,
        })
    }

    pub fn sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let n = rng.random_range(self.spec.min_sentence_words..=self.spec.max_sentence_words);
        let mut w = self.unigram.sample(rng);
        let mut out = self.words[w].clone();
        for _ in 1..n {
            w = if rng.random::<f64>() < self.spec.follow_prob {
                self.successor[w]
            } else {
                self.unigram.sample(rng)
            };
            out.push_str(&self.words[w]);
        }
        out
    }

    pub fn lattice<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Lattice> {
        build_lattice(&self.sentence(rng), &self.matcher, &self.vocab)
    }

    /// Sentence pairs masked by whole segments.
    pub fn msp_instances<R: Rng + ?Sized>(
        &self,
        n: usize,
        cfg: &InstanceConfig,
        rng: &mut R,
    ) -> Result<Vec<PretrainInstance>> {
        (0..n)
            .map(|_| {
                let (a, b) = (self.lattice(rng)?, self.lattice(rng)?);
                let swap = rng.random::<bool>();
                build_pretrain_instance(&a, &b, swap, cfg, self.vocab.len(), rng)
            })
            .collect()
    }

    /// Sentence pairs masked token by token, ignoring segments.
    pub fn random_mask_instances<R: Rng + ?Sized>(
        &self,
        n: usize,
        cfg: &InstanceConfig,
        rng: &mut R,
    ) -> Result<Vec<PretrainInstance>> {
        (0..n)
            .map(|_| {
                let (a, b) = (self.lattice(rng)?, self.lattice(rng)?);
                let swap = rng.random::<bool>();
                let layout = layout_pair(&a, &b, swap, cfg.token_cap);
                random_token_mask(&layout, cfg.mask_ratio, self.vocab.len(), cfg.policy, rng)
            })
            .collect()
    }
}

/// Instance settings used by the experiments: phase-one cap, 15% masking.
pub fn default_instance_config() -> InstanceConfig {
    InstanceConfig {
        token_cap: crate::packing::Phase::One.token_cap(),
        mask_ratio: crate::msp::DEFAULT_MASK_RATIO,
        policy: MaskingPolicy::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::detect_segments;
    use crate::vocab::Granularity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn each_word_is_one_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = SyntheticCorpus::new(SyntheticSpec::mutually_determined(), &mut rng).unwrap();
        assert_eq!(c.vocab.count_by(Granularity::Word), 40);
        for _ in 0..20 {
            let lat = c.lattice(&mut rng).unwrap();
            let words = lat.tokens.iter().filter(|t| t.granularity == Granularity::Word).count();
            let segs = detect_segments(&lat);
            assert_eq!(segs.len(), words);
            assert!(segs.iter().all(|s| s.end > s.start));
        }
    }

    #[test]
    fn instances_are_leak_free_only_under_msp() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = SyntheticCorpus::new(SyntheticSpec::mutually_determined(), &mut rng).unwrap();
        let cfg = default_instance_config();
        let msp = c.msp_instances(50, &cfg, &mut rng).unwrap();
        assert!(msp.iter().all(|i| i.leaking_pairs().is_empty()));
        let random = c.random_mask_instances(50, &cfg, &mut rng).unwrap();
        assert!(random.iter().any(|i| !i.leaking_pairs().is_empty()));
    }

    #[test]
    fn structured_corpus_follows_successors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = SyntheticCorpus::new(SyntheticSpec::structured(), &mut rng).unwrap();
        let s = c.sentence(&mut rng);
        assert!(s.chars().all(|ch| (ch as u32) >= FIRST_CHAR));
    }
}

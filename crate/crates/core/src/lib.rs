//! Multi-granularity word lattices for Chinese pre-training.
//!
//! A sentence is turned into a [`Lattice`]: one token per character plus every
//! vocabulary word found in it, each carrying its closed character span.
//! Lattices are packed into [`PretrainInstance`]s whose masks cover whole
//! minimal segments, so no visible token overlaps a masked one. The
//! [`encoder`] module is a small transformer whose attention logits add
//! lattice position terms (absolute start/end positions, clipped distances,
//! and one of seven positional relations) to the content scores.
//!
//! ```
//! use wordlattice::{build_lattice, build_vocabulary, detect_segments, PatternMatcher};
//!
//! let words = [("研究", 1), ("研究生", 1), ("生活", 1), ("充实", 1)]
//!     .map(|(w, c)| (w.to_string(), c));
//! let (vocab, _) = build_vocabulary(["研究生活很充实"], &words, 10);
//! let matcher = PatternMatcher::new(&vocab);
//! let lattice = build_lattice("研究生活很充实", &matcher, &vocab).unwrap();
//! assert_eq!(lattice.tokens.len(), 11);
//! assert_eq!(detect_segments(&lattice).len(), 3);
//! ```

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod instance_file;
pub mod lattice;
pub mod lpa;
pub mod matcher;
pub mod msp;
pub mod packing;
pub mod params;
pub mod segment;
pub mod synthetic;
pub mod text;
pub mod vocab;

pub use error::{Error, Result};
pub use geometry::{clip, distance_offsets, relation, DistanceOffsets, PositionRelation, Span};
pub use lattice::{build_lattice, segment_non_chinese, Lattice, LatticeToken};
pub use matcher::{compile_matcher, PatternMatcher, WordMatch};
pub use msp::{
    apply_msp_mask, build_pretrain_instance, select_mask_segments, InstanceConfig, MaskingPolicy,
    PretrainInstance, SopLabel,
};
pub use packing::{pack_document, pack_sentences, PackingConfig, Phase};
pub use segment::{detect_segments, Segment};
pub use text::normalize_text;
pub use vocab::{build_vocabulary, Granularity, Vocabulary};

//! Positional relation and clipped start/end distances between two tokens.
//!
//! Spans are closed and 1-based: a token covering the first two characters has
//! span (1, 2). Position 0 is reserved for `[CLS]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DISTANCE: i64 = 128;
/// Entries per distance table: offsets -128..=128.
pub const DISTANCE_BUCKETS: usize = 2 * MAX_DISTANCE as usize + 1;
pub const NUM_RELATIONS: usize = 7;

/// Relation of a target token to a source token. "Left" and "right" describe
/// where the target lies relative to the source.
///
/// The discriminants are the stable serialized codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum PositionRelation {
    Self_ = 0,
    LeftDetached = 1,
    LeftOverlapped = 2,
    Contains = 3,
    ContainedBy = 4,
    RightOverlapped = 5,
    RightDetached = 6,
}

impl PositionRelation {
    pub const ALL: [PositionRelation; NUM_RELATIONS] = [
        PositionRelation::Self_,
        PositionRelation::LeftDetached,
        PositionRelation::LeftOverlapped,
        PositionRelation::Contains,
        PositionRelation::ContainedBy,
        PositionRelation::RightOverlapped,
        PositionRelation::RightDetached,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// The relation seen from the other token.
    pub fn mirror(self) -> Self {
        use PositionRelation::*;
        match self {
            Self_ => Self_,
            LeftDetached => RightDetached,
            RightDetached => LeftDetached,
            LeftOverlapped => RightOverlapped,
            RightOverlapped => LeftOverlapped,
            Contains => ContainedBy,
            ContainedBy => Contains,
        }
    }

    /// Two tokens can belong to the same segmentation path only when detached.
    pub fn is_detached(self) -> bool {
        matches!(self, PositionRelation::LeftDetached | PositionRelation::RightDetached)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidSpan { start, end });
        }
        Ok(Span { start, end })
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

/// Classify `tgt` relative to `src`.
///
/// Overlap uses closed intervals, so tokens sharing a boundary character
/// (such as (1,3) and (3,4)) are overlapped rather than unclassified.
pub fn relation(src: Span, tgt: Span, same_index: bool) -> Result<PositionRelation> {
    use PositionRelation::*;
    for s in [src, tgt] {
        Span::new(s.start, s.end)?;
    }
    let identical = src == tgt;
    if same_index {
        if !identical {
            return Err(Error::Shape(format!(
                "same token given two spans {src:?} and {tgt:?}"
            )));
        }
        return Ok(Self_);
    }
    if identical {
        return Err(Error::DuplicateSpan {
            first: 0,
            second: 1,
            start: src.start,
            end: src.end,
        });
    }
    Ok(relation_unchecked(src, tgt))
}

/// [`relation`] for distinct, valid, non-identical spans.
pub(crate) fn relation_unchecked(src: Span, tgt: Span) -> PositionRelation {
    use PositionRelation::*;
    if src.end < tgt.start {
        RightDetached
    } else if tgt.end < src.start {
        LeftDetached
    } else if src.start <= tgt.start && tgt.end <= src.end {
        Contains
    } else if tgt.start <= src.start && src.end <= tgt.end {
        ContainedBy
    } else if src.start < tgt.start {
        RightOverlapped
    } else {
        LeftOverlapped
    }
}

pub fn clip(t: i64) -> i64 {
    t.clamp(-MAX_DISTANCE, MAX_DISTANCE)
}

/// Clipped start/end differences `tgt - src`: ss, se (tgt start - src end),
/// es (tgt end - src start) and ee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DistanceOffsets {
    pub ss: i64,
    pub se: i64,
    pub es: i64,
    pub ee: i64,
}

impl DistanceOffsets {
    pub fn as_array(&self) -> [i64; 4] {
        [self.ss, self.se, self.es, self.ee]
    }

    /// Table indices after shifting by +128; always in `0..DISTANCE_BUCKETS`.
    pub fn bucket_indices(&self) -> [usize; 4] {
        self.as_array().map(|d| (d + MAX_DISTANCE) as usize)
    }
}

pub fn distance_offsets(src: Span, tgt: Span) -> DistanceOffsets {
    let d = |a: usize, b: usize| clip(a as i64 - b as i64);
    DistanceOffsets {
        ss: d(tgt.start, src.start),
        se: d(tgt.start, src.end),
        es: d(tgt.end, src.start),
        ee: d(tgt.end, src.end),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PositionRelation::*;

    fn rel(a: (usize, usize), b: (usize, usize)) -> PositionRelation {
        relation(a.into(), b.into(), false).unwrap()
    }

    #[test]
    fn worked_examples() {
        assert_eq!(rel((1, 3), (1, 2)), Contains);
        assert_eq!(relation((1, 2).into(), (1, 2).into(), true).unwrap(), Self_);
        assert_eq!(rel((1, 2), (3, 4)), RightDetached);
        assert_eq!(rel((1, 3), (3, 4)), RightOverlapped);
        assert_eq!(rel((3, 4), (1, 3)), LeftOverlapped);
        assert_eq!(rel((1, 2), (1, 3)), ContainedBy);
        assert_eq!(rel((5, 5), (1, 3)), LeftDetached);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            relation((3, 2).into(), (1, 1).into(), false),
            Err(Error::InvalidSpan { start: 3, end: 2 })
        ));
        assert!(matches!(
            relation((1, 2).into(), (1, 2).into(), false),
            Err(Error::DuplicateSpan { .. })
        ));
        assert!(relation((1, 2).into(), (1, 3).into(), true).is_err());
    }

    #[test]
    fn codes_are_stable() {
        for (i, r) in PositionRelation::ALL.iter().enumerate() {
            assert_eq!(r.code() as usize, i);
            assert_eq!(PositionRelation::from_code(i as u8), Some(*r));
        }
        assert_eq!(PositionRelation::from_code(7), None);
        assert_eq!(serde_json::to_string(&RightDetached).unwrap(), "\"RightDetached\"");
    }

    #[test]
    fn offsets() {
        let o = distance_offsets((1, 2).into(), (3, 4).into());
        assert_eq!(o.as_array(), [2, 1, 3, 2]);
        // identical span (s, e) = (1, 3): se = s - e, es = e - s
        let o = distance_offsets((1, 3).into(), (1, 3).into());
        assert_eq!(o.as_array(), [0, -2, 2, 0]);
        let o = distance_offsets((1, 1).into(), (300, 300).into());
        assert_eq!(o.as_array(), [128; 4]);
        assert_eq!(o.bucket_indices(), [256; 4]);
        let o = distance_offsets((300, 300).into(), (1, 1).into());
        assert_eq!(o.bucket_indices(), [0; 4]);
    }

    #[test]
    fn clipping() {
        assert_eq!(clip(200), 128);
        assert_eq!(clip(0), 0);
        assert_eq!(clip(-129), -128);
        assert_eq!(clip(128), 128);
        assert_eq!(DISTANCE_BUCKETS, 257);
    }
}

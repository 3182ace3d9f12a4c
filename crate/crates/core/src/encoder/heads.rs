//! Helpers for downstream use of an encoded lattice.

use ndarray::{Array1, Axis};
use rand::Rng;

use super::ops::Linear;
use crate::lattice::{Lattice, LatticeToken};
use crate::lpa::{softmax_rows, INIT_STD};
use crate::vocab::Granularity;

/// The character backbone: every non-word token, in position order.
/// Sequence-labeling heads read these rows.
pub fn extract_char_chain(lattice: &Lattice) -> Vec<LatticeToken> {
    let mut chain: Vec<LatticeToken> = lattice
        .tokens
        .iter()
        .filter(|t| t.granularity != Granularity::Word)
        .cloned()
        .collect();
    chain.sort_by_key(|t| (t.start, t.end));
    chain
}

/// Affine classifier over the `[CLS]` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsHead {
    pub linear: Linear,
}

impl ClsHead {
    pub fn init<R: Rng + ?Sized>(d_h: usize, n_classes: usize, rng: &mut R) -> Self {
        ClsHead {
            linear: Linear::init(d_h, n_classes, INIT_STD, rng),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.linear.b.len()
    }
}

/// Class probabilities for one `[CLS]` vector.
pub fn classify_cls(cls_vec: &Array1<f64>, head: &ClsHead) -> Array1<f64> {
    let logits = (cls_vec.dot(&head.linear.w) + &head.linear.b).insert_axis(Axis(0));
    softmax_rows(&logits).index_axis_move(Axis(0), 0)
}

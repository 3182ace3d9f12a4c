//! Finite-difference check of the analytic gradients.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EncoderState;
use crate::error::Result;
use crate::msp::PretrainInstance;

/// Denominator floor for the relative error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GroupError> {
        self.groups.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare analytic gradients of `msp + sop` with central differences of
/// step `epsilon`. Every tensor is a group; up to `per_group` coordinates of
/// each are sampled. Runs in eval mode (no dropout).
pub fn grad_check<R: Rng + ?Sized>(
    state: &EncoderState,
    inst: &PretrainInstance,
    epsilon: f64,
    per_group: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let mut grads = state.zeros_like();
    state.loss_and_grad(inst, Some(&mut grads), None)?;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.to_vec()).collect();

    let mut probe = state.clone();
    let names: Vec<(String, usize)> = state.tensors().iter().map(|t| (t.name.clone(), t.data.len())).collect();
    let mut groups = Vec::with_capacity(names.len());
    for (ti, (name, len)) in names.into_iter().enumerate() {
        let coords = sample(rng, len, per_group.min(len)).into_vec();
        let mut worst = 0.0f64;
        for &k in &coords {
            let orig = probe.tensors()[ti].data[k];
            let mut loss_at = |v: f64| -> Result<f64> {
                probe.tensors_mut()[ti].data[k] = v;
                Ok(probe.loss_and_grad(inst, None, None)?.total())
            };
            let plus = loss_at(orig + epsilon)?;
            let minus = loss_at(orig - epsilon)?;
            loss_at(orig)?;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic[ti][k], numeric));
        }
        groups.push(GroupError {
            name,
            checked: coords.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport { groups })
}

//! Dense building blocks with hand-written backward passes.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::lpa::gaussian;
use crate::params::{TensorMut, TensorRef};

const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// (in, out)
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            w: Array2::zeros((d_in, d_out)),
            b: Array1::zeros(d_out),
        }
    }

    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, std: f64, rng: &mut R) -> Self {
        Linear {
            w: gaussian(d_in, d_out, std, rng),
            b: Array1::zeros(d_out),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients and returns dL/dx.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, g: &mut Linear) -> Array2<f64> {
        g.w += &x.t().dot(dy);
        g.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        out.push(TensorRef::arr2(format!("{prefix}.w"), &self.w));
        out.push(TensorRef::arr1(format!("{prefix}.b"), &self.b));
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        out.push(TensorMut::arr2(format!("{prefix}.w"), &mut self.w));
        out.push(TensorMut::arr1(format!("{prefix}.b"), &mut self.b));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        LayerNorm {
            gamma: Array1::zeros(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *is = 1.0 / (var + LN_EPS).sqrt();
            let s = *is;
            row.mapv_inplace(|v| v * s);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, g: &mut LayerNorm) -> Array2<f64> {
        g.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        g.beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.dim());
        for i in 0..dy.nrows() {
            let dxh = dxhat.row(i);
            let xh = cache.xhat.row(i);
            let mean_d = dxh.sum() / d;
            let mean_dx = dxh.dot(&xh) / d;
            let is = cache.inv_std[i];
            for k in 0..dy.ncols() {
                dx[[i, k]] = is * (dxh[k] - mean_d - xh[k] * mean_dx);
            }
        }
        dx
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        out.push(TensorRef::arr1(format!("{prefix}.g"), &self.gamma));
        out.push(TensorRef::arr1(format!("{prefix}.b"), &self.beta));
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        out.push(TensorMut::arr1(format!("{prefix}.g"), &mut self.gamma));
        out.push(TensorMut::arr1(format!("{prefix}.b"), &mut self.beta));
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + libm::erf(v / SQRT_2)))
}

pub fn gelu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        let cdf = 0.5 * (1.0 + libm::erf(v / SQRT_2));
        let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
        *d *= cdf + v * pdf;
    });
    dx
}

/// Mean cross-entropy of `logits` rows against `labels`; returns the loss,
/// dL/dlogits and per-row argmax hits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>, usize) {
    let m = labels.len().max(1) as f64;
    let probs = crate::lpa::softmax_rows(logits);
    let mut loss = 0.0;
    let mut hits = 0;
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        let best = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc })
            .0;
        hits += usize::from(best == y);
        grad[[i, y]] -= 1.0;
    }
    grad /= m;
    (loss / m, grad, hits)
}

//! Named views over model tensors, used by the optimizer, checkpoints and the
//! gradient checker.

use ndarray::{Array1, Array2};

#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

impl<'a> TensorRef<'a> {
    pub fn arr2(name: impl Into<String>, a: &'a Array2<f64>) -> Self {
        TensorRef {
            name: name.into(),
            shape: a.shape().to_vec(),
            data: a.as_slice().expect("standard layout"),
        }
    }

    pub fn arr1(name: impl Into<String>, a: &'a Array1<f64>) -> Self {
        TensorRef {
            name: name.into(),
            shape: vec![a.len()],
            data: a.as_slice().expect("standard layout"),
        }
    }

    pub fn scalar(name: impl Into<String>, v: &'a f64) -> Self {
        TensorRef {
            name: name.into(),
            shape: vec![1],
            data: std::slice::from_ref(v),
        }
    }
}

impl<'a> TensorMut<'a> {
    pub fn arr2(name: impl Into<String>, a: &'a mut Array2<f64>) -> Self {
        TensorMut {
            name: name.into(),
            shape: a.shape().to_vec(),
            data: a.as_slice_mut().expect("standard layout"),
        }
    }

    pub fn arr1(name: impl Into<String>, a: &'a mut Array1<f64>) -> Self {
        TensorMut {
            name: name.into(),
            shape: vec![a.len()],
            data: a.as_slice_mut().expect("standard layout"),
        }
    }

    pub fn scalar(name: impl Into<String>, v: &'a mut f64) -> Self {
        TensorMut {
            name: name.into(),
            shape: vec![1],
            data: std::slice::from_mut(v),
        }
    }
}

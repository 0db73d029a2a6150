//! Dense real arrays, a reverse-mode differentiation tape over them, and Adam.
//!
//! The operator set is deliberately small: exactly what the depth networks,
//! their losses and the pose probe need. Every operation records its inputs
//! on a [`Tape`]; [`Tape::backward`] replays the record in reverse and
//! consumes the tape.

mod adam;
mod gemm;
mod gradcheck;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradient_check, GradCheck};
pub use tape::{Gradients, Tape, Var};

pub(crate) use gemm::gemm;

use crate::error::{Error, Result};

/// Row-major n-dimensional array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::config(format!("invalid tensor shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::config(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "invalid tensor shape {shape:?}"
        );
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// One-dimensional tensor holding `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector tensor");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::config(format!(
                "expected a [C,H,W] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::config(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack rank-3 tensors with equal spatial extent along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let (_, h, w) = parts
            .first()
            .ok_or_else(|| Error::config("concat of zero tensors"))?
            .dims3()?;
        let mut c_total = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.dims3()?;
            if (ph, pw) != (h, w) {
                return Err(Error::config(format!(
                    "spatial mismatch in concat: {h}x{w} vs {ph}x{pw}"
                )));
            }
            c_total += c;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(vec![c_total, h, w], data)
    }
}

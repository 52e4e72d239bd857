//! Dense numeric kernel with hand-written backward passes.
//!
//! Everything runs in `f64`. Layers register their parameters in a
//! [`ParamStore`] and expose a `forward` that returns a cache plus a
//! `backward` that accumulates into the store's gradient slots.

mod adam;
mod checkpoint;
mod ggnn;
mod gradcheck;
mod gru;
mod hgru;
mod params;
mod pool;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, read_checkpoint_meta, write_checkpoint, CheckpointMeta};
pub use ggnn::{ggnn_layer, GgnnParams, GgnnPass, RelationBuckets, DEFAULT_RELATION_BUCKETS};
pub use gradcheck::{grad_check, grad_check_floor, relative_error, relative_error_floor, GradCheckReport};
pub use gru::{gru_cell, GruParams, GruStep};
pub use hgru::{hierarchical_gru, HgruParams, HgruPass};
pub use params::{load_pretrained, Embedding, GradBuffer, GradSink, Init, ParamId, ParamStore, ParamView};
pub use pool::{masked_softmax, pool, pool_backward, softmax_nll, PoolMode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("tensor data", n, data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Stacks equal-length rows into an `M x d` matrix.
    pub fn from_rows(rows: &[Vec<f64>], width: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::dim("matrix row", width, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: vec![rows.len(), width],
            data,
        })
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Width of one leading-axis slice.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += M x` for a row-major `rows x cols` block.
pub(crate) fn matvec_acc(m: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Mᵀ y`.
pub(crate) fn matvec_t_acc(m: &[f64], cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), cols);
    for (yi, row) in y.iter().zip(m.chunks_exact(cols)) {
        if *yi == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(row) {
            *o += yi * w;
        }
    }
}

/// `g += y xᵀ`.
pub(crate) fn outer_acc(g: &mut [f64], y: &[f64], x: &[f64]) {
    for (yi, row) in y.iter().zip(g.chunks_exact_mut(x.len())) {
        if *yi == 0.0 {
            continue;
        }
        for (gi, xi) in row.iter_mut().zip(x) {
            *gi += yi * xi;
        }
    }
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

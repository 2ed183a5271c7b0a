//! Dense rank-4 tensors, the convolution kernels behind them, a define-by-run
//! differentiation tape and the Adam optimizer.

mod adam;
mod graph;
pub mod kernels;

pub use adam::AdamState;
pub use graph::{Activation, Graph, Var};
pub use kernels::Exec;

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("value count {len} does not match shape {shape}")]
    LengthMismatch { shape: Shape, len: usize },
    #[error("channel mismatch: expected {expected} input channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("even kernel size {0}x{1} is not supported")]
    EvenKernel(usize, usize),
    #[error("dilation must be at least 1")]
    ZeroDilation,
    #[error("bias has {actual} entries, expected {expected}")]
    BiasMismatch { expected: usize, actual: usize },
    #[error("convolution output would be empty for input {input} with kernel {kernel}")]
    EmptyOutput { input: Shape, kernel: Shape },
    #[error("incompatible shapes {0} and {1}")]
    Incompatible(Shape, Shape),
    #[error("concat needs at least one input")]
    EmptyConcat,
    #[error("channel slice {start}..{end} out of range for {shape}")]
    SliceOutOfRange {
        shape: Shape,
        start: usize,
        end: usize,
    },
    #[error("backward needs a single-element loss, got {0}")]
    NonScalarLoss(Shape),
    #[error("unknown variable {0}")]
    UnknownVar(usize),
}

/// (batch, channels, height, width).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
        }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub const fn same_spatial(&self, other: &Shape) -> bool {
        self.batch == other.batch && self.height == other.height && self.width == other.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.channels, self.height, self.width
        )
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Row-major NCHW buffer of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != shape.numel() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.batch {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = &self.shape;
        ((n * s.channels + c) * s.height + y) * s.width + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f64) {
        let i = self.offset(n, c, y, x);
        self.data[i] = value;
    }

    /// Contiguous `height * width` slice for one (batch, channel) pair.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::Incompatible(self.shape, other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(inputs: &[&Tensor]) -> Result<Self, TensorError> {
        let first = inputs.first().ok_or(TensorError::EmptyConcat)?.shape;
        let mut channels = 0;
        for t in inputs {
            if !t.shape.same_spatial(&first) {
                return Err(TensorError::Incompatible(first, t.shape));
            }
            channels += t.shape.channels;
        }
        let shape = Shape::new(first.batch, channels, first.height, first.width);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.batch {
            for t in inputs {
                let per = t.shape.channels * t.shape.plane();
                data.extend_from_slice(&t.data[n * per..(n + 1) * per]);
            }
        }
        Ok(Self { shape, data })
    }

    /// Channels `start..start + len` of every batch entry.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self, TensorError> {
        let s = self.shape;
        if start + len > s.channels || len == 0 {
            return Err(TensorError::SliceOutOfRange {
                shape: s,
                start,
                end: start + len,
            });
        }
        let shape = Shape::new(s.batch, len, s.height, s.width);
        let mut data = Vec::with_capacity(shape.numel());
        let p = s.plane();
        for n in 0..s.batch {
            let base = (n * s.channels + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Ok(Self { shape, data })
    }

    /// Crop the spatial window `[row, row + h) x [col, col + w)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self, TensorError> {
        let s = self.shape;
        if row + h > s.height || col + w > s.width {
            return Err(TensorError::Incompatible(
                s,
                Shape::new(s.batch, s.channels, row + h, col + w),
            ));
        }
        let shape = Shape::new(s.batch, s.channels, h, w);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..s.batch {
            for c in 0..s.channels {
                for y in row..row + h {
                    let start = self.offset(n, c, y, col);
                    data.extend_from_slice(&self.data[start..start + w]);
                }
            }
        }
        Ok(Self { shape, data })
    }

    /// Stack single-image tensors along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self, TensorError> {
        let first = items.first().ok_or(TensorError::EmptyConcat)?.shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first {
                return Err(TensorError::Incompatible(first, t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let shape = Shape::new(
            first.batch * items.len(),
            first.channels,
            first.height,
            first.width,
        );
        Ok(Self { shape, data })
    }

    /// Mirror every plane left-right.
    pub fn flip_horizontal(&self) -> Self {
        let w = self.shape.width;
        let mut out = self.clone();
        for row in out.data.chunks_mut(w.max(1)) {
            row.reverse();
        }
        out
    }
}

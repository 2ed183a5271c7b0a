use serde::{Deserialize, Serialize};

use super::{DataError, Head};
use crate::tensor::{Shape, Tensor, TensorError};

/// Non-negative single-channel map whose sum is the person count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMap {
    height: usize,
    width: usize,
    grid: Vec<f64>,
    count: f64,
}

impl DensityMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            grid: vec![0.0; height * width],
            count: 0.0,
        }
    }

    /// Build from a row-major grid. Negative entries are rejected.
    pub fn from_grid(height: usize, width: usize, grid: Vec<f64>) -> Result<Self, DataError> {
        if grid.len() != height * width {
            return Err(TensorError::LengthMismatch {
                shape: Shape::new(1, 1, height, width),
                len: grid.len(),
            }
            .into());
        }
        if let Some(v) = grid.iter().find(|v| !(**v >= 0.0)) {
            return Err(DataError::InvalidParameter(format!(
                "density entry {v} is not a non-negative number"
            )));
        }
        let count = grid.iter().sum();
        Ok(Self {
            height,
            width,
            grid,
            count,
        })
    }

    /// Take channel 0 of batch entry `n`.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self, DataError> {
        let s = t.shape();
        Self::from_grid(s.height, s.width, t.plane(n, 0).to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(Shape::new(1, 1, self.height, self.width), self.grid.clone())
            .expect("grid matches its dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.grid[y * self.width + x]
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn max(&self) -> f64 {
        self.grid.iter().copied().fold(0.0, f64::max)
    }

    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self, DataError> {
        let t = self.to_tensor().crop(row, col, h, w)?;
        Self::from_tensor(&t, 0)
    }

    pub fn flip_horizontal(&self) -> Self {
        let t = self.to_tensor().flip_horizontal();
        Self {
            height: self.height,
            width: self.width,
            grid: t.into_data(),
            count: self.count,
        }
    }
}

/// Sum of truncated Gaussian bumps, one per head, each renormalized so the
/// mass that falls inside the image is exactly one.
///
/// A head at `(x, y)` is centred on pixel `(floor(x), floor(y))`; the bump
/// covers a square window of radius `ceil(3 * sigma)`.
pub fn generate_density_map(
    heads: &[Head],
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<DensityMap, DataError> {
    if height == 0 || width == 0 {
        return Err(DataError::InvalidParameter(format!(
            "density map size {height}x{width} must be positive"
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(DataError::InvalidParameter(format!(
            "sigma {sigma} must be positive"
        )));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut grid = vec![0.0; height * width];
    let mut bump = Vec::new();
    for head in heads {
        let cx = (head.x.floor().max(0.0) as usize).min(width - 1) as isize;
        let cy = (head.y.floor().max(0.0) as usize).min(height - 1) as isize;
        let y0 = (cy - radius).max(0) as usize;
        let y1 = ((cy + radius) as usize).min(height - 1);
        let x0 = (cx - radius).max(0) as usize;
        let x1 = ((cx + radius) as usize).min(width - 1);
        bump.clear();
        let mut mass = 0.0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dy, dx) = (y as f64 - cy as f64, x as f64 - cx as f64);
                let v = (-(dx * dx + dy * dy) / denom).exp();
                mass += v;
                bump.push(v);
            }
        }
        let mut k = 0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                grid[y * width + x] += bump[k] / mass;
                k += 1;
            }
        }
    }
    DensityMap::from_grid(height, width, grid)
}

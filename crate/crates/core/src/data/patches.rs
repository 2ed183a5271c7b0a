use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, DensityMap};
use crate::tensor::{Shape, Tensor};

pub const PATCHES_PER_IMAGE: usize = 9;

/// An image patch (`1 x C x h x w`) and its aligned density crop.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub image: Tensor,
    pub density: DensityMap,
    pub origin: (usize, usize),
    pub flipped: bool,
}

impl PatchPair {
    pub fn flip(&self) -> Self {
        Self {
            image: self.image.flip_horizontal(),
            density: self.density.flip_horizontal(),
            origin: self.origin,
            flipped: !self.flipped,
        }
    }
}

/// Four quadrants followed by five random quarter-area crops.
///
/// Odd heights or widths lose their last row or column first so that the
/// quadrants tile the image exactly.
pub fn extract_training_patches<R: Rng + ?Sized>(
    image: &Tensor,
    density: &DensityMap,
    rng: &mut R,
) -> Result<Vec<PatchPair>, DataError> {
    let s = image.shape();
    if s.height < 2 || s.width < 2 {
        return Err(DataError::TooSmall {
            height: s.height,
            width: s.width,
        });
    }
    if density.height() != s.height || density.width() != s.width {
        return Err(DataError::InvalidParameter(format!(
            "density {}x{} does not match image {}x{}",
            density.height(),
            density.width(),
            s.height,
            s.width
        )));
    }
    let (h_even, w_even) = (s.height & !1, s.width & !1);
    let (h, w) = (h_even / 2, w_even / 2);

    let mut origins = vec![(0, 0), (0, w), (h, 0), (h, w)];
    for _ in 4..PATCHES_PER_IMAGE {
        origins.push((
            rng.random_range(0..=h_even - h),
            rng.random_range(0..=w_even - w),
        ));
    }
    origins
        .into_iter()
        .map(|(row, col)| {
            Ok(PatchPair {
                image: image.crop(row, col, h, w)?,
                density: density.crop(row, col, h, w)?,
                origin: (row, col),
                flipped: false,
            })
        })
        .collect()
}

/// Mirror image and density together with probability one half.
pub fn random_hflip<R: Rng + ?Sized>(pair: PatchPair, rng: &mut R) -> PatchPair {
    if rng.random_bool(0.5) {
        pair.flip()
    } else {
        pair
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Placement of inference tiles within the source image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileLayout {
    pub height: usize,
    pub width: usize,
    pub tiles: Vec<TileRect>,
}

fn split(extent: usize) -> Vec<(usize, usize)> {
    if extent < 2 {
        vec![(0, extent)]
    } else {
        let half = extent / 2;
        vec![(0, half), (half, extent - half)]
    }
}

/// Cut an image into non-overlapping tiles of roughly `H/2 x W/2`; the
/// second row and column of tiles absorb any odd remainder.
pub fn tile_for_inference(image: &Tensor) -> (Vec<Tensor>, TileLayout) {
    let s = image.shape();
    let mut tiles = Vec::new();
    let mut rects = Vec::new();
    for (row, height) in split(s.height) {
        for &(col, width) in &split(s.width) {
            let rect = TileRect {
                row,
                col,
                height,
                width,
            };
            tiles.push(
                image
                    .crop(row, col, height, width)
                    .expect("tile inside image"),
            );
            rects.push(rect);
        }
    }
    (
        tiles,
        TileLayout {
            height: s.height,
            width: s.width,
            tiles: rects,
        },
    )
}

/// Place per-tile tensors back at their layout positions.
pub fn reassemble(layout: &TileLayout, tiles: &[Tensor]) -> Result<Tensor, DataError> {
    if tiles.len() != layout.tiles.len() {
        return Err(DataError::InvalidParameter(format!(
            "{} tiles for a layout of {}",
            tiles.len(),
            layout.tiles.len()
        )));
    }
    let first = tiles[0].shape();
    let mut out = Tensor::zeros(Shape::new(
        first.batch,
        first.channels,
        layout.height,
        layout.width,
    ));
    for (rect, tile) in layout.tiles.iter().zip(tiles) {
        let ts = tile.shape();
        if ts.height != rect.height
            || ts.width != rect.width
            || ts.channels != first.channels
            || ts.batch != first.batch
        {
            return Err(DataError::InvalidParameter(format!(
                "tile {ts} does not fit slot {}x{}",
                rect.height, rect.width
            )));
        }
        for n in 0..ts.batch {
            for c in 0..ts.channels {
                for y in 0..ts.height {
                    let src = tile.offset(n, c, y, 0);
                    let dst = out.offset(n, c, rect.row + y, rect.col);
                    out.data_mut()[dst..dst + ts.width]
                        .copy_from_slice(&tile.data()[src..src + ts.width]);
                }
            }
        }
    }
    Ok(out)
}

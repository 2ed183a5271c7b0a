use std::path::Path;

use image::DynamicImage;

use super::DataError;
use crate::tensor::{Shape, Tensor};

/// Multiplier applied to 8-bit pixel values when they become model input.
/// Raw intensities: with the small Gaussian init, unit-range input leaves
/// the output heads at their bias.
pub const INPUT_SCALE: f64 = 1.0;

/// Load a PNG/PGM image as a `1 x channels x H x W` tensor.
///
/// Grayscale sources are replicated for three-channel models; RGB sources
/// are reduced to luma for single-channel models.
pub fn load_image(path: &Path, channels: usize) -> Result<Tensor, DataError> {
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) if e.kind() == std::io::ErrorKind::NotFound => {
            DataError::MissingImage(path.to_path_buf())
        }
        source => DataError::Image {
            path: path.to_path_buf(),
            source,
        },
    })?;
    image_to_tensor(&img, channels)
}

pub(crate) fn image_to_tensor(img: &DynamicImage, channels: usize) -> Result<Tensor, DataError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match channels {
        1 => {
            let g = img.to_luma8();
            let data = g.as_raw().iter().map(|&p| p as f64 * INPUT_SCALE).collect();
            Ok(Tensor::new(Shape::new(1, 1, h, w), data)?)
        }
        3 => {
            let rgb = img.to_rgb8();
            let raw = rgb.as_raw();
            Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |[_, c, y, x]| {
                raw[(y * w + x) * 3 + c] as f64 * INPUT_SCALE
            }))
        }
        c => Err(DataError::Channels(c)),
    }
}

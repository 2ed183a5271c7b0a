//! Images, head annotations, ground-truth density maps, training patches and
//! inference tiles.

mod annotations;
mod dataset;
mod density;
mod image_io;
mod patches;
pub mod synthetic;

pub use annotations::{load_annotations, parse_annotations, ClampWarning, Head, HeadAnnotations};
pub use dataset::{DatasetIndex, Sample, Split};
pub use density::{generate_density_map, DensityMap};
pub use image_io::{load_image, INPUT_SCALE};
pub use patches::{
    extract_training_patches, random_hflip, reassemble, tile_for_inference, PatchPair, TileLayout,
    TileRect, PATCHES_PER_IMAGE,
};

use std::path::PathBuf;

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("annotation references missing image {0}")]
    MissingImage(PathBuf),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("image {height}x{width} is smaller than 2x2")]
    TooSmall { height: usize, width: usize },
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

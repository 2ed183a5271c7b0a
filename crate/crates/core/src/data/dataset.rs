use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    generate_density_map, load_annotations, load_image, DataError, DensityMap, HeadAnnotations,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Index file: `{"train": ["a.json", ...], "test": [...]}` with paths
/// relative to the index file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    #[serde(default)]
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub test: Vec<PathBuf>,
    #[serde(skip)]
    pub root: PathBuf,
}

/// One loaded image with its annotations and ground truth.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub annotations: HeadAnnotations,
    pub density: DensityMap,
}

impl DatasetIndex {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut index: DatasetIndex =
            serde_json::from_str(&text).map_err(|source| DataError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        index.root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(index)
    }

    pub fn entries(&self, split: Split) -> Vec<PathBuf> {
        let list = match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        };
        list.iter().map(|p| self.root.join(p)).collect()
    }

    /// Load every entry of a split, failing on the first bad item.
    pub fn load_split(
        &self,
        split: Split,
        channels: usize,
        sigma: f64,
    ) -> Result<Vec<Sample>, DataError> {
        self.entries(split)
            .iter()
            .map(|p| Sample::load(p, channels, sigma))
            .collect()
    }
}

impl Sample {
    pub fn load(annotation_path: &Path, channels: usize, sigma: f64) -> Result<Self, DataError> {
        let (annotations, _) = load_annotations(annotation_path)?;
        let image = load_image(&annotations.image_path, channels)?;
        let density = generate_density_map(
            &annotations.heads,
            annotations.height,
            annotations.width,
            sigma,
        )?;
        Ok(Self {
            id: annotations.image_id.clone(),
            image,
            annotations,
            density,
        })
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub x: f64,
    pub y: f64,
}

/// Head positions for one image, clamped into `[0, width) x [0, height)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadAnnotations {
    pub image_id: String,
    /// Image path resolved against the annotation file's directory.
    pub image_path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub heads: Vec<Head>,
}

impl HeadAnnotations {
    pub fn count(&self) -> usize {
        self.heads.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClampWarning {
    pub index: usize,
    pub original: Head,
    pub clamped: Head,
}

#[derive(Deserialize, Serialize)]
struct AnnotationFile {
    image: String,
    heads: Vec<[f64; 2]>,
}

/// Parse an annotation document for an image of known size.
pub fn parse_annotations(
    json: &str,
    base_dir: &Path,
    width: usize,
    height: usize,
) -> Result<(HeadAnnotations, Vec<ClampWarning>), serde_json::Error> {
    let file: AnnotationFile = serde_json::from_str(json)?;
    let mut warnings = Vec::new();
    let mut heads = Vec::with_capacity(file.heads.len());
    for (index, [x, y]) in file.heads.into_iter().enumerate() {
        if !x.is_finite() || !y.is_finite() {
            return Err(serde::de::Error::custom(format!(
                "head {index} has a non-finite coordinate"
            )));
        }
        let original = Head { x, y };
        let clamped = Head {
            x: clamp_coord(x, width),
            y: clamp_coord(y, height),
        };
        if clamped != original {
            log::warn!(
                "{}: head {index} at ({x}, {y}) clamped to ({}, {})",
                file.image,
                clamped.x,
                clamped.y
            );
            warnings.push(ClampWarning {
                index,
                original,
                clamped,
            });
        }
        heads.push(clamped);
    }
    Ok((
        HeadAnnotations {
            image_path: base_dir.join(&file.image),
            image_id: file.image,
            width,
            height,
            heads,
        },
        warnings,
    ))
}

fn clamp_coord(v: f64, extent: usize) -> f64 {
    if v < 0.0 {
        0.0
    } else if v >= extent as f64 {
        extent.saturating_sub(1) as f64
    } else {
        v
    }
}

/// Read an annotation file and clamp its heads to the referenced image.
pub fn load_annotations(path: &Path) -> Result<(HeadAnnotations, Vec<ClampWarning>), DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let file: AnnotationFile = serde_json::from_str(&text).map_err(|source| DataError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let image_path = base.join(&file.image);
    if !image_path.is_file() {
        return Err(DataError::MissingImage(image_path));
    }
    let (w, h) = image::image_dimensions(&image_path).map_err(|source| DataError::Image {
        path: image_path.clone(),
        source,
    })?;
    parse_annotations(&text, base, w as usize, h as usize).map_err(|source| DataError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(json: &str) -> (HeadAnnotations, Vec<ClampWarning>) {
        parse_annotations(json, Path::new("data"), 40, 30).unwrap()
    }

    #[test]
    fn empty_head_list() {
        let (a, w) = parse(r#"{"image": "a.png", "heads": []}"#);
        assert_eq!(a.count(), 0);
        assert!(w.is_empty());
        assert_eq!(a.image_path, Path::new("data/a.png"));
    }

    #[test]
    fn in_bounds_heads_preserved_in_order() {
        let (a, w) = parse(r#"{"image": "a.png", "heads": [[1.5, 2.0], [39.9, 29.9], [0, 0]]}"#);
        assert_eq!(a.count(), 3);
        assert!(w.is_empty());
        assert_eq!(a.heads[0], Head { x: 1.5, y: 2.0 });
        assert_eq!(a.heads[1], Head { x: 39.9, y: 29.9 });
        assert_eq!(a.heads[2], Head { x: 0.0, y: 0.0 });
    }

    #[test]
    fn out_of_bounds_heads_are_clamped_with_warning() {
        let (a, w) = parse(r#"{"image": "a.png", "heads": [[45, 10], [-3, -0.5], [5, 30]]}"#);
        assert_eq!(a.heads[0], Head { x: 39.0, y: 10.0 });
        assert_eq!(a.heads[1], Head { x: 0.0, y: 0.0 });
        assert_eq!(a.heads[2], Head { x: 5.0, y: 29.0 });
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].original, Head { x: 45.0, y: 10.0 });
    }

    #[test]
    fn malformed_json_is_an_error() {
        assert!(parse_annotations("{\"image\": 3}", Path::new("."), 4, 4).is_err());
        assert!(parse_annotations("[", Path::new("."), 4, 4).is_err());
    }

    #[test]
    fn load_reports_missing_image() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        std::fs::write(&p, r#"{"image": "nope.png", "heads": []}"#).unwrap();
        assert!(matches!(
            load_annotations(&p),
            Err(DataError::MissingImage(_))
        ));
    }
}

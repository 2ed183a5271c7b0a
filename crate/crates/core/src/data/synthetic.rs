//! Synthetic "dot crowd" scenes: bright head blobs on a dim, smoothly varying
//! background. Used by tests, benches and the demo dataset writer.

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::Rng;

use super::{DataError, Head};

#[derive(Clone, Debug)]
pub struct SyntheticImage {
    pub image: GrayImage,
    pub heads: Vec<Head>,
}

const BLOB_SIGMA: f64 = 4.0;
const BLOB_PEAK: f64 = 60.0;
/// Heads closer than this are redrawn, so blobs never merge.
const MIN_SEPARATION: f64 = 4.0;
const MAX_DRAWS: usize = 10_000;

/// A `size`x`size` scene with a head count drawn from `heads`. A canvas too
/// small for the requested count at the minimum spacing gets fewer heads.
pub fn dot_crowd<R: Rng + ?Sized>(
    rng: &mut R,
    size: usize,
    heads: RangeInclusive<usize>,
) -> SyntheticImage {
    let n = rng.random_range(heads);
    let margin = (2.0 * BLOB_SIGMA).min(size as f64 / 4.0);
    let mut placed: Vec<Head> = Vec::with_capacity(n);
    for _ in 0..MAX_DRAWS {
        if placed.len() == n {
            break;
        }
        let cand = Head {
            x: rng.random_range(margin..size as f64 - margin),
            y: rng.random_range(margin..size as f64 - margin),
        };
        if placed
            .iter()
            .all(|h| (h.x - cand.x).hypot(h.y - cand.y) >= MIN_SEPARATION)
        {
            placed.push(cand);
        }
    }
    let heads = placed;

    let tilt_x: f64 = rng.random_range(-4.0..4.0);
    let tilt_y: f64 = rng.random_range(-4.0..4.0);
    let mut img = GrayImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 / size as f64, y as f64 / size as f64);
            let mut v = 8.0 + tilt_x * fx + tilt_y * fy + rng.random_range(-3.0..3.0);
            for h in &heads {
                // blobs centred on the same pixel the density map uses
                let dx = x as f64 - h.x.floor();
                let dy = y as f64 - h.y.floor();
                v += BLOB_PEAK * (-(dx * dx + dy * dy) / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp();
            }
            img.put_pixel(
                x as u32,
                y as u32,
                Luma([v.round().clamp(0.0, 255.0) as u8]),
            );
        }
    }
    SyntheticImage { image: img, heads }
}

/// Write images, annotation files and an `index.json` into `dir`.
/// Returns the index path.
pub fn write_dataset(
    dir: &Path,
    train: &[SyntheticImage],
    test: &[SyntheticImage],
) -> Result<PathBuf, DataError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let write_split = |prefix: &str, items: &[SyntheticImage]| -> Result<Vec<String>, DataError> {
        let mut names = Vec::new();
        for (i, item) in items.iter().enumerate() {
            let image_name = format!("{prefix}_{i:03}.png");
            let ann_name = format!("{prefix}_{i:03}.json");
            let image_path = dir.join(&image_name);
            item.image
                .save(&image_path)
                .map_err(|source| DataError::Image {
                    path: image_path.clone(),
                    source,
                })?;
            let heads: Vec<[f64; 2]> = item.heads.iter().map(|h| [h.x, h.y]).collect();
            let doc = serde_json::json!({ "image": image_name, "heads": heads });
            let ann_path = dir.join(&ann_name);
            std::fs::write(&ann_path, serde_json::to_string_pretty(&doc).expect("json"))
                .map_err(io(&ann_path))?;
            names.push(ann_name);
        }
        Ok(names)
    };
    let train_names = write_split("train", train)?;
    let test_names = write_split("test", test)?;
    let index = dir.join("index.json");
    let doc = serde_json::json!({ "train": train_names, "test": test_names });
    std::fs::write(&index, serde_json::to_string_pretty(&doc).expect("json"))
        .map_err(io(&index))?;
    Ok(index)
}

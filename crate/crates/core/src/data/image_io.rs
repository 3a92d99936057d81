//! Image-folder ingestion, decoding, and stochastic augmentation.

use image::imageops::FilterType;
use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{DatasetManifest, ManifestRecord, Payload};
use crate::error::{Error, Result};
use crate::model::{DomainTag, TensorBatch};

/// Reads a `root/<class_name>/<image files>` layout. Class names map to
/// indices in lexicographic order; unreadable files are skipped and
/// counted; a class folder without a single readable image is an error.
pub fn ingest_image_folder(
    root: &Path,
    resize: u32,
    domain: DomainTag,
) -> Result<(DatasetManifest, u64)> {
    if resize == 0 {
        return Err(Error::config("resize must be positive"));
    }
    let mut class_dirs: Vec<std::path::PathBuf> = Vec::new();
    let mut warnings = 0u64;
    for entry in std::fs::read_dir(root)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", root.display())))?
    {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            class_dirs.push(entry.path());
        } else {
            warnings += 1; // stray file at the root
        }
    }
    class_dirs.sort();
    if class_dirs.len() < 2 {
        return Err(Error::data(format!(
            "expected at least 2 class folders under {}, found {}",
            root.display(),
            class_dirs.len()
        )));
    }
    let mut records = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let class_name = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut valid = 0usize;
        for file in files {
            match image::open(&file) {
                Ok(_) => {
                    let name = file
                        .file_name()
                        .map(|n| n.to_string_lossy().to_string())
                        .unwrap_or_default();
                    records.push(ManifestRecord {
                        id: format!("{class_name}/{name}"),
                        label,
                        group: None,
                        payload: Payload::Image(file),
                    });
                    valid += 1;
                }
                Err(_) => warnings += 1,
            }
        }
        if valid == 0 {
            return Err(Error::data(format!(
                "class folder '{class_name}' contains no readable images"
            )));
        }
    }
    let manifest = DatasetManifest {
        domain,
        num_classes: class_dirs.len(),
        provenance: format!("folder:{}", root.display()),
        split: None,
        resize: Some(resize),
        flips: None,
        records,
    };
    manifest.validate()?;
    Ok((manifest, warnings))
}

/// Decodes an image to a `(3, s, s)` RGB tensor in `[0, 1]`.
pub fn load_image(path: &Path, resize: u32) -> Result<Array3<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::data(format!("cannot decode {}: {e}", path.display())))?;
    let img = img
        .resize_exact(resize, resize, FilterType::Triangle)
        .to_rgb8();
    let s = resize as usize;
    let mut out = Array3::zeros((3, s, s));
    for (x, y, pixel) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = pixel.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Probabilities and magnitudes for the four stochastic transforms.
/// Applied in a fixed order: color jitter, grayscale, gaussian blur,
/// horizontal flip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub color_jitter_p: f64,
    /// Brightness/contrast/saturation factors drawn from
    /// `[1 - strength, 1 + strength]`.
    pub jitter_strength: f64,
    pub grayscale_p: f64,
    pub blur_p: f64,
    pub blur_sigma_min: f64,
    pub blur_sigma_max: f64,
    pub horizontal_flip_p: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            color_jitter_p: 0.8,
            jitter_strength: 0.4,
            grayscale_p: 0.2,
            blur_p: 0.5,
            blur_sigma_min: 0.1,
            blur_sigma_max: 2.0,
            horizontal_flip_p: 0.5,
        }
    }
}

impl AugmentPolicy {
    /// Identity policy: every probability zero.
    pub fn disabled() -> Self {
        AugmentPolicy {
            color_jitter_p: 0.0,
            jitter_strength: 0.0,
            grayscale_p: 0.0,
            blur_p: 0.0,
            blur_sigma_min: 0.1,
            blur_sigma_max: 0.1,
            horizontal_flip_p: 0.0,
        }
    }
}

fn luma(img: &Array3<f64>, y: usize, x: usize) -> f64 {
    0.299 * img[[0, y, x]] + 0.587 * img[[1, y, x]] + 0.114 * img[[2, y, x]]
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Applies the policy's transforms to one `(3, h, w)` image.
pub fn augment_image(img: &Array3<f64>, policy: &AugmentPolicy, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let (_, h, w) = img.dim();
    let mut out = img.clone();

    if policy.color_jitter_p > 0.0 && rng.random::<f64>() < policy.color_jitter_p {
        let s = policy.jitter_strength;
        let brightness = rng.random_range((1.0 - s).max(0.0)..=(1.0 + s));
        let contrast = rng.random_range((1.0 - s).max(0.0)..=(1.0 + s));
        let saturation = rng.random_range((1.0 - s).max(0.0)..=(1.0 + s));
        out.mapv_inplace(|v| clamp01(v * brightness));
        // contrast blends toward the mean gray level
        let mut mean = 0.0;
        for y in 0..h {
            for x in 0..w {
                mean += luma(&out, y, x);
            }
        }
        mean /= (h * w) as f64;
        out.mapv_inplace(|v| clamp01(mean + (v - mean) * contrast));
        // saturation blends toward per-pixel luma
        for y in 0..h {
            for x in 0..w {
                let l = luma(&out, y, x);
                for c in 0..3 {
                    out[[c, y, x]] = clamp01(l + (out[[c, y, x]] - l) * saturation);
                }
            }
        }
    }

    if policy.grayscale_p > 0.0 && rng.random::<f64>() < policy.grayscale_p {
        for y in 0..h {
            for x in 0..w {
                let l = luma(&out, y, x);
                for c in 0..3 {
                    out[[c, y, x]] = l;
                }
            }
        }
    }

    if policy.blur_p > 0.0 && rng.random::<f64>() < policy.blur_p {
        let sigma = rng.random_range(policy.blur_sigma_min..=policy.blur_sigma_max);
        out = gaussian_blur(&out, sigma);
    }

    if policy.horizontal_flip_p > 0.0 && rng.random::<f64>() < policy.horizontal_flip_p {
        let mut flipped = out.clone();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    flipped[[c, y, x]] = out[[c, y, w - 1 - x]];
                }
            }
        }
        out = flipped;
    }

    out
}

/// Batch-level augmentation: image batches are augmented per sample,
/// vector batches pass through unchanged.
pub fn augment_batch(batch: TensorBatch, policy: &AugmentPolicy, rng: &mut ChaCha8Rng) -> TensorBatch {
    match batch {
        TensorBatch::Vector(v) => TensorBatch::Vector(v),
        TensorBatch::Image(imgs) => {
            let (n, c, h, w) = imgs.dim();
            let mut out = imgs.clone();
            for i in 0..n {
                let one = Array3::from_shape_fn((c, h, w), |(cc, y, x)| imgs[[i, cc, y, x]]);
                let aug = augment_image(&one, policy, rng);
                for cc in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            out[[i, cc, y, x]] = aug[[cc, y, x]];
                        }
                    }
                }
            }
            TensorBatch::Image(out)
        }
    }
}

/// Separable gaussian blur with clamp-to-edge padding.
fn gaussian_blur(img: &Array3<f64>, sigma: f64) -> Array3<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= sum;
    }
    let (c, h, w) = img.dim();
    let mut horiz = Array3::zeros((c, h, w));
    for cc in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, k) in kernel.iter().enumerate() {
                    let sx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1);
                    acc += k * img[[cc, y, sx as usize]];
                }
                horiz[[cc, y, x]] = acc;
            }
        }
    }
    let mut out = Array3::zeros((c, h, w));
    for cc in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, k) in kernel.iter().enumerate() {
                    let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1);
                    acc += k * horiz[[cc, sy as usize, x]];
                }
                out[[cc, y, x]] = acc;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn test_image(seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, 8, 8), |_| rng.random::<f64>())
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let img = test_image(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = augment_image(&img, &AugmentPolicy::disabled(), &mut rng);
        assert_eq!(img, out);
    }

    #[test]
    fn double_flip_is_identity() {
        let img = test_image(3);
        let policy = AugmentPolicy {
            horizontal_flip_p: 1.0,
            ..AugmentPolicy::disabled()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let once = augment_image(&img, &policy, &mut rng);
        assert_ne!(img, once);
        let twice = augment_image(&once, &policy, &mut rng);
        assert_eq!(img, twice);
    }

    #[test]
    fn augmentation_is_seed_deterministic() {
        let img = test_image(5);
        let policy = AugmentPolicy::default();
        let a = augment_image(&img, &policy, &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment_image(&img, &policy, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn vector_batches_pass_through_unchanged() {
        let batch = TensorBatch::Vector(ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        match augment_batch(batch, &AugmentPolicy::default(), &mut rng) {
            TensorBatch::Vector(v) => assert_eq!(v, ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]])),
            _ => panic!("vector expected"),
        }
    }

    fn write_png(path: &Path, w: u32, h: u32, value: u8) {
        let img = image::RgbImage::from_pixel(w, h, image::Rgb([value, value / 2, 255 - value]));
        img.save(path).unwrap();
    }

    #[test]
    fn ingest_folder_lexicographic_classes_and_histogram() {
        let dir = tempfile::tempdir().unwrap();
        let abnormal = dir.path().join("abnormal");
        let normal = dir.path().join("normal");
        std::fs::create_dir(&abnormal).unwrap();
        std::fs::create_dir(&normal).unwrap();
        for i in 0..3 {
            write_png(&abnormal.join(format!("a{i}.png")), 10, 8, 40 + i as u8);
        }
        for i in 0..5 {
            write_png(&normal.join(format!("n{i}.png")), 12, 12, 100 + i as u8);
        }
        let (manifest, warnings) =
            ingest_image_folder(dir.path(), 16, DomainTag::Target).unwrap();
        assert_eq!(warnings, 0);
        assert_eq!(manifest.num_classes, 2);
        assert_eq!(manifest.histogram(), vec![3, 5]);
        // "abnormal" sorts before "normal" so it gets label 0
        assert!(manifest.records[0].id.starts_with("abnormal/"));
        assert_eq!(manifest.records[0].label, 0);
    }

    #[test]
    fn ingest_skips_non_images_and_counts_warnings() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["a", "b"] {
            let d = dir.path().join(class);
            std::fs::create_dir(&d).unwrap();
            write_png(&d.join("ok.png"), 6, 6, 10);
            std::fs::write(d.join("notes.txt"), "not an image").unwrap();
        }
        let (manifest, warnings) = ingest_image_folder(dir.path(), 8, DomainTag::Target).unwrap();
        assert_eq!(manifest.len(), 2);
        assert_eq!(warnings, 2);
    }

    #[test]
    fn ingest_errors_on_empty_class() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("a")).unwrap();
        let d = dir.path().join("b");
        std::fs::create_dir(&d).unwrap();
        write_png(&d.join("ok.png"), 6, 6, 10);
        assert!(ingest_image_folder(dir.path(), 8, DomainTag::Target).is_err());
    }

    #[test]
    fn ingest_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["x", "y"] {
            let d = dir.path().join(class);
            std::fs::create_dir(&d).unwrap();
            for i in 0..4 {
                write_png(&d.join(format!("{i}.png")), 6, 6, i as u8 * 30);
            }
        }
        let (m1, _) = ingest_image_folder(dir.path(), 8, DomainTag::Target).unwrap();
        let (m2, _) = ingest_image_folder(dir.path(), 8, DomainTag::Target).unwrap();
        assert_eq!(m1.to_text(), m2.to_text());
    }

    #[test]
    fn decode_respects_resize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        write_png(&path, 20, 14, 77);
        let img = load_image(&path, 9).unwrap();
        assert_eq!(img.dim(), (3, 9, 9));
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

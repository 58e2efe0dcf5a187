//! Training-pair synthesis and the on-disk dataset layout.
//!
//! A dataset directory holds `manifest.json` plus one 8-bit RGB PNG pair per
//! sample. Pixels map to tensors as `v = byte/127.5 − 1` and back as
//! `byte = round((v+1)·127.5)` clamped, so a PNG round trip is exact on
//! byte-quantized data.

use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blur::{apply_nonuniform_blur, sample_blur_field, BlurFieldParams};
use crate::error::{Error, Result};
use crate::seed::derive2;
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

/// An aligned (blurred, ground-truth) sample in normalized pixel space.
#[derive(Debug, Clone)]
pub struct ImagePair {
    /// 3×H×W in [−1,1].
    pub blurred: Tensor<f32>,
    /// Same shape and range.
    pub sharp: Tensor<f32>,
    pub provenance: PairProvenance,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairProvenance {
    /// Dataset-level seed.
    pub seed: u64,
    /// Seed of the blur field that produced this pair.
    pub field_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub blur_file: String,
    pub sharp_file: String,
    pub field_seed: u64,
}

/// Byte → normalized value.
pub fn byte_to_norm(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

/// Normalized value → byte, clamped.
pub fn norm_to_byte(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Decode an RGB image into a 3×H×W tensor in [−1,1].
pub fn image_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[(c * h + y) * w + x] = byte_to_norm(px.0[c]);
        }
    }
    Tensor::new(&[3, h, w], data, false).expect("consistent dimensions")
}

/// Quantize a 3×H×W tensor in [−1,1] back to an RGB image.
pub fn tensor_to_image(t: &Tensor<f32>) -> Result<RgbImage> {
    let shape = t.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Shape(format!("expected 3×H×W tensor, got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let data = t.data_ref();
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = image::Rgb([
                norm_to_byte(data[y * w + x]),
                norm_to_byte(data[(h + y) * w + x]),
                norm_to_byte(data[(2 * h + y) * w + x]),
            ]);
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    Ok(img)
}

pub fn load_image_tensor(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.to_rgb8();
    Ok(image_to_tensor(&img))
}

pub fn save_image_tensor(t: &Tensor<f32>, path: &Path) -> Result<()> {
    tensor_to_image(t)?.save(path)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Edge length of the square training patches.
    pub size: usize,
    /// Random flips and 90° rotations on the sharp crop.
    pub augment: bool,
    /// Additive Gaussian noise on the blurred half, in [−1,1] units.
    pub noise_sigma: f64,
    pub field: BlurFieldParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 64,
            augment: true,
            noise_sigma: 0.01,
            field: BlurFieldParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub manifest_path: PathBuf,
    pub written: usize,
    /// Source files skipped as unreadable or undersized.
    pub skipped_sources: usize,
}

fn crop(t: &Tensor<f32>, y0: usize, x0: usize, size: usize) -> Tensor<f32> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let data = t.data_ref();
    let mut out = vec![0.0f32; 3 * size * size];
    for c in 0..3 {
        for y in 0..size {
            let src = (c * h + y0 + y) * w + x0;
            out[(c * size + y) * size..(c * size + y + 1) * size]
                .copy_from_slice(&data[src..src + size]);
        }
    }
    Tensor::new(&[3, size, size], out, false).unwrap()
}

fn flip_h(t: &Tensor<f32>) -> Tensor<f32> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let data = t.data_ref();
    let mut out = data.clone();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out[(c * h + y) * w + x] = data[(c * h + y) * w + (w - 1 - x)];
            }
        }
    }
    Tensor::new(t.shape(), out, false).unwrap()
}

fn flip_v(t: &Tensor<f32>) -> Tensor<f32> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let data = t.data_ref();
    let mut out = data.clone();
    for c in 0..3 {
        for y in 0..h {
            let src = (c * h + (h - 1 - y)) * w;
            out[(c * h + y) * w..(c * h + y + 1) * w].copy_from_slice(&data[src..src + w]);
        }
    }
    Tensor::new(t.shape(), out, false).unwrap()
}

fn rot90(t: &Tensor<f32>) -> Tensor<f32> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let data = t.data_ref();
    let mut out = vec![0.0f32; 3 * w * h];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                // (y, x) → (x, h−1−y)
                out[(c * w + x) * h + (h - 1 - y)] = data[(c * h + y) * w + x];
            }
        }
    }
    Tensor::new(&[3, w, h], out, false).unwrap()
}

/// Synthesize `count` blurred/sharp pairs from the images under `sharp_dir`
/// into `out_dir`. Unreadable or undersized sources are skipped (tallied in
/// the summary); producing zero pairs is an error. Every random choice is a
/// pure function of `(rng_seed, pair index)`, so the dataset is byte-stable.
pub fn make_dataset(
    sharp_dir: &Path,
    out_dir: &Path,
    count: usize,
    config: &SynthConfig,
    rng_seed: u64,
) -> Result<SynthSummary> {
    if config.size == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }

    let mut paths: Vec<PathBuf> = std::fs::read_dir(sharp_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();

    let mut sources = Vec::new();
    let mut skipped = 0usize;
    for p in &paths {
        match image::open(p) {
            Ok(img) => {
                let rgb = img.to_rgb8();
                if (rgb.width() as usize) < config.size || (rgb.height() as usize) < config.size {
                    skipped += 1;
                    continue;
                }
                sources.push(image_to_tensor(&rgb));
            }
            Err(_) => skipped += 1,
        }
    }
    if sources.is_empty() && count > 0 {
        return Err(Error::EmptyDataset(format!(
            "no usable source images in {} ({} skipped)",
            sharp_dir.display(),
            skipped
        )));
    }

    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(derive2(rng_seed, i as u64, 0));
        let src = &sources[rng.random_range(0..sources.len())];
        let (h, w) = (src.shape()[1], src.shape()[2]);
        let y0 = rng.random_range(0..=h - config.size);
        let x0 = rng.random_range(0..=w - config.size);
        let mut sharp = crop(src, y0, x0, config.size);
        if config.augment {
            if rng.random::<bool>() {
                sharp = flip_h(&sharp);
            }
            if rng.random::<bool>() {
                sharp = flip_v(&sharp);
            }
            for _ in 0..rng.random_range(0..4u32) {
                sharp = rot90(&sharp);
            }
        }

        let field_seed = derive2(rng_seed, i as u64, 1);
        let field = sample_blur_field(&config.field, field_seed)?;
        let blurred = apply_nonuniform_blur(&sharp, &field, config.noise_sigma, derive2(rng_seed, i as u64, 2))?;

        let blur_file = format!("pair{i:05}_blur.png");
        let sharp_file = format!("pair{i:05}_sharp.png");
        save_image_tensor(&blurred, &out_dir.join(&blur_file))?;
        save_image_tensor(&sharp, &out_dir.join(&sharp_file))?;
        entries.push(ManifestEntry { id: i, blur_file, sharp_file, field_seed });
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: rng_seed,
        count,
        size: config.size,
        entries,
    };
    let manifest_path = out_dir.join(MANIFEST_NAME);
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(SynthSummary { manifest_path, written: count, skipped_sources: skipped })
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Dataset(format!(
            "manifest version {} unsupported (expected {MANIFEST_VERSION})",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Load every pair listed in the manifest.
pub fn load_dataset(dir: &Path) -> Result<Vec<ImagePair>> {
    let manifest = load_manifest(dir)?;
    let mut pairs = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let blurred = load_image_tensor(&dir.join(&entry.blur_file))?;
        let sharp = load_image_tensor(&dir.join(&entry.sharp_file))?;
        if blurred.shape() != sharp.shape() {
            return Err(Error::Dataset(format!(
                "pair {}: blurred {:?} vs sharp {:?}",
                entry.id,
                blurred.shape(),
                sharp.shape()
            )));
        }
        pairs.push(ImagePair {
            blurred,
            sharp,
            provenance: PairProvenance { seed: manifest.seed, field_seed: entry.field_seed },
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboardish(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([
                ((x * 7 + y * 13) % 256) as u8,
                ((x * 3 + y * 5) % 256) as u8,
                ((x * 11 + y * 2) % 256) as u8,
            ])
        })
    }

    #[test]
    fn pixel_mapping_roundtrips_bytes() {
        for b in [0u8, 1, 127, 128, 254, 255] {
            assert_eq!(norm_to_byte(byte_to_norm(b)), b);
        }
        assert_eq!(byte_to_norm(255), 1.0);
        assert_eq!(byte_to_norm(0), -1.0);
    }

    #[test]
    fn image_tensor_roundtrip_is_exact() {
        let img = checkerboardish(9, 7);
        let t = image_to_tensor(&img);
        assert_eq!(t.shape(), &[3, 7, 9]);
        let back = tensor_to_image(&t).unwrap();
        assert_eq!(img.as_raw(), back.as_raw());
    }

    #[test]
    fn synthesis_writes_pairs_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let src_dir = dir.path().join("src");
        std::fs::create_dir(&src_dir).unwrap();
        checkerboardish(128, 128).save(src_dir.join("a.png")).unwrap();
        // One unusable source: too small.
        checkerboardish(16, 16).save(src_dir.join("tiny.png")).unwrap();

        let out = dir.path().join("out");
        let cfg = SynthConfig { size: 32, ..Default::default() };
        let summary = make_dataset(&src_dir, &out, 4, &cfg, 5).unwrap();
        assert_eq!(summary.written, 4);
        assert_eq!(summary.skipped_sources, 1);

        let pairs = load_dataset(&out).unwrap();
        assert_eq!(pairs.len(), 4);
        for p in &pairs {
            assert_eq!(p.blurred.shape(), &[3, 32, 32]);
            assert_eq!(p.sharp.shape(), &[3, 32, 32]);
            assert!(p.blurred.to_vec().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn synthesis_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let src_dir = dir.path().join("src");
        std::fs::create_dir(&src_dir).unwrap();
        checkerboardish(96, 96).save(src_dir.join("a.png")).unwrap();

        let cfg = SynthConfig { size: 32, ..Default::default() };
        let out1 = dir.path().join("out1");
        let out2 = dir.path().join("out2");
        make_dataset(&src_dir, &out1, 3, &cfg, 42).unwrap();
        make_dataset(&src_dir, &out2, 3, &cfg, 42).unwrap();

        let m1 = std::fs::read(out1.join(MANIFEST_NAME)).unwrap();
        let m2 = std::fs::read(out2.join(MANIFEST_NAME)).unwrap();
        assert_eq!(m1, m2);
        for entry in load_manifest(&out1).unwrap().entries {
            let a = std::fs::read(out1.join(&entry.blur_file)).unwrap();
            let b = std::fs::read(out2.join(&entry.blur_file)).unwrap();
            assert_eq!(a, b, "blur PNG bytes differ for pair {}", entry.id);
        }
    }

    #[test]
    fn zero_count_yields_valid_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let src_dir = dir.path().join("src");
        std::fs::create_dir(&src_dir).unwrap();
        checkerboardish(64, 64).save(src_dir.join("a.png")).unwrap();
        let out = dir.path().join("out");
        let summary = make_dataset(&src_dir, &out, 0, &SynthConfig::default(), 0).unwrap();
        assert_eq!(summary.written, 0);
        assert_eq!(load_manifest(&out).unwrap().entries.len(), 0);
    }

    #[test]
    fn unusable_sources_yield_empty_dataset_error() {
        let dir = tempfile::tempdir().unwrap();
        let src_dir = dir.path().join("src");
        std::fs::create_dir(&src_dir).unwrap();
        std::fs::write(src_dir.join("junk.png"), b"not a png").unwrap();
        let out = dir.path().join("out");
        let err = make_dataset(&src_dir, &out, 2, &SynthConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }

    #[test]
    fn augmentations_preserve_shape_and_content_set() {
        let img = checkerboardish(8, 8);
        let t = image_to_tensor(&img);
        for aug in [flip_h(&t), flip_v(&t), rot90(&t)] {
            assert_eq!(aug.shape(), &[3, 8, 8]);
            let mut a = t.to_vec();
            let mut b = aug.to_vec();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            assert_eq!(a, b, "augmentation must permute pixels, not change them");
        }
        // Four quarter-turns come back around.
        let r4 = rot90(&rot90(&rot90(&rot90(&t))));
        assert_eq!(r4.to_vec(), t.to_vec());
    }
}

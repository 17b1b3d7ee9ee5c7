//! Deterministic synthetic lesion corpus.
//!
//! Each sample is a 3-channel image: a per-channel flat background plus
//! uniform pixel noise, and, for positive samples, one to three bright
//! circular blobs with smoothly tapered edges. Everything is a pure
//! function of `(seed, sample index, field tag)` through keyed
//! [`Stream`]s, so generation is order-independent and bitwise
//! reproducible. Ground truth is exact: the mask is the pixel support of
//! the blobs, and each box is its blob's tight bounding rectangle, so
//! every mask pixel lies in a box and every box contains mask pixels.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{BoxRect, GroundTruth};
use crate::rng::Stream;
use crate::tensor::{t4f, Tensor4};

const TAG_SAMPLE: u64 = 0xDA7A;
const TAG_BACKGROUND: u64 = 1;
const TAG_NOISE: u64 = 2;
const TAG_BLOBS: u64 = 3;
const TAG_SPLIT: u64 = 0x5B11;

pub const CHANNELS: usize = 3;

/// Spatial downsampling factor of the reference model; image dims must be
/// divisible by it so feature cells tile images exactly.
pub const FEATURE_STRIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub blob_count_min: usize,
    pub blob_count_max: usize,
    pub radius_min: f32,
    pub radius_max: f32,
    pub lesion_min: f32,
    pub lesion_max: f32,
    pub background_min: f32,
    pub background_max: f32,
    pub noise_sigma: f32,
    /// Fraction of positive (lesioned) samples; assignment is exact.
    pub balance: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            height: 64,
            width: 64,
            blob_count_min: 1,
            blob_count_max: 3,
            radius_min: 5.0,
            radius_max: 8.0,
            lesion_min: 0.75,
            lesion_max: 0.95,
            background_min: 0.20,
            background_max: 0.40,
            noise_sigma: 0.05,
            balance: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::Config { detail });
        if self.height == 0 || self.width == 0 {
            return fail("image dims must be positive".into());
        }
        if self.height % FEATURE_STRIDE != 0 || self.width % FEATURE_STRIDE != 0 {
            return fail(format!(
                "image dims {}x{} must be divisible by the feature stride {FEATURE_STRIDE}",
                self.height, self.width
            ));
        }
        if self.blob_count_min == 0 || self.blob_count_min > self.blob_count_max {
            return fail(format!(
                "blob count range {}..={} is invalid",
                self.blob_count_min, self.blob_count_max
            ));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return fail("lesion radius range is invalid".into());
        }
        let quarter = self.height.min(self.width) as f32 / 4.0;
        if self.radius_max >= quarter {
            return fail(format!(
                "lesion radius {} must stay under a quarter of the image ({quarter})",
                self.radius_max
            ));
        }
        for (name, lo, hi) in [
            ("lesion intensity", self.lesion_min, self.lesion_max),
            ("background intensity", self.background_min, self.background_max),
        ] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return fail(format!("{name} range [{lo}, {hi}] is invalid"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise sigma {} is invalid", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.balance) {
            return fail(format!("class balance {} must lie in [0, 1]", self.balance));
        }
        Ok(())
    }

    /// Exact label assignment: sample `i` is positive iff the running
    /// count `floor((i+1)*balance)` increments at `i`, which yields
    /// exactly `floor(n*balance)` positives among any prefix of length n.
    pub fn label_for(&self, index: usize) -> usize {
        let before = ((index as f64) * self.balance).floor();
        let after = ((index as f64 + 1.0) * self.balance).floor();
        (after - before) as usize
    }
}

/// One rendered lesion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub center_y: f64,
    pub center_x: f64,
    pub radius: f64,
    pub intensity: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor4,
    pub label: usize,
    pub gt: GroundTruth,
}

fn draw_blobs(spec: &SynthSpec, index: usize) -> Vec<Blob> {
    let mut stream = Stream::new(spec.seed, &[TAG_SAMPLE, index as u64, TAG_BLOBS]);
    let count = stream.range_usize(spec.blob_count_min, spec.blob_count_max);
    let h = spec.height as f32;
    let w = spec.width as f32;
    (0..count)
        .map(|_| {
            let radius = stream.range_f32(spec.radius_min, spec.radius_max);
            let center_y = stream.range_f32(radius, h - 1.0 - radius);
            let center_x = stream.range_f32(radius, w - 1.0 - radius);
            let intensity = stream.range_f32(spec.lesion_min, spec.lesion_max);
            Blob {
                center_y: center_y as f64,
                center_x: center_x as f64,
                radius: radius as f64,
                intensity,
            }
        })
        .collect()
}

/// Smooth edge profile: 1 at the blob center falling to 0 at the rim,
/// with zero slope at both ends (the cubic smoothstep of 1 - d/r).
fn taper(distance: f64, radius: f64) -> f32 {
    let t = 1.0 - distance / radius;
    if t <= 0.0 {
        return 0.0;
    }
    (t * t * (3.0 - 2.0 * t)) as f32
}

/// Generates sample `index` along with its blob parameters.
pub fn generate_sample_detailed(spec: &SynthSpec, index: usize) -> Result<(Sample, Vec<Blob>)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);

    let mut bg_stream = Stream::new(spec.seed, &[TAG_SAMPLE, index as u64, TAG_BACKGROUND]);
    let background: Vec<f32> = (0..CHANNELS)
        .map(|_| bg_stream.range_f32(spec.background_min, spec.background_max))
        .collect();

    // Uniform noise on [-a, a] has standard deviation a / sqrt(3).
    let amplitude = spec.noise_sigma * 3.0f32.sqrt();
    let mut noise_stream = Stream::new(spec.seed, &[TAG_SAMPLE, index as u64, TAG_NOISE]);
    let mut image = Tensor4::zeros(1, CHANNELS, h, w);
    for ch in 0..CHANNELS {
        for y in 0..h {
            for x in 0..w {
                let noise = noise_stream.range_f32(-amplitude, amplitude);
                image.set(0, ch, y, x, background[ch] + noise);
            }
        }
    }

    let label = spec.label_for(index);
    let mut gt = GroundTruth::empty(h, w);
    let blobs = if label == 1 { draw_blobs(spec, index) } else { Vec::new() };

    for blob in &blobs {
        let y_lo = (blob.center_y - blob.radius).floor().max(0.0) as usize;
        let y_hi = ((blob.center_y + blob.radius).ceil() as usize).min(h - 1);
        let x_lo = (blob.center_x - blob.radius).floor().max(0.0) as usize;
        let x_hi = ((blob.center_x + blob.radius).ceil() as usize).min(w - 1);
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let dy = y as f64 - blob.center_y;
                let dx = x as f64 - blob.center_x;
                let d = (dy * dy + dx * dx).sqrt();
                let factor = taper(d, blob.radius);
                if factor <= 0.0 {
                    continue;
                }
                for ch in 0..CHANNELS {
                    let v = image.at(0, ch, y, x);
                    image.set(0, ch, y, x, v + (blob.intensity - v) * factor);
                }
                gt.mask.set(0, 0, y, x, 1.0);
                bounds = Some(match bounds {
                    None => (y, x, y, x),
                    Some((r0, c0, r1, c1)) => (r0.min(y), c0.min(x), r1.max(y), c1.max(x)),
                });
            }
        }
        let (r0, c0, r1, c1) = bounds.expect("blob placement keeps the disk inside the image");
        gt.boxes.push(BoxRect {
            row0: r0,
            col0: c0,
            row1: r1 + 1,
            col1: c1 + 1,
        });
    }

    Ok((Sample { image, label, gt }, blobs))
}

pub fn generate_sample(spec: &SynthSpec, index: usize) -> Result<Sample> {
    generate_sample_detailed(spec, index).map(|(sample, _)| sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Deterministic 70/15/15 split: indices are ordered by a seeded hash
/// (ties by index) and the sorted order is cut at exact counts, so the
/// split sizes never drift with n.
pub fn split_assignments(seed: u64, n: usize) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    let keys: Vec<u64> = (0..n)
        .map(|i| Stream::new(seed, &[TAG_SPLIT, i as u64]).next_u64())
        .collect();
    order.sort_by_key(|&i| (keys[i], i));

    let val = n * 15 / 100;
    let test = n * 15 / 100;
    let train = n - val - test;
    let mut splits = vec![Split::Train; n];
    for (pos, &idx) in order.iter().enumerate() {
        splits[idx] = if pos < train {
            Split::Train
        } else if pos < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub label: usize,
    pub split: Split,
    pub image: String,
    pub mask: String,
    pub boxes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: SynthSpec,
    /// Mean pixel value per channel over the whole corpus; used as the
    /// masking fill for sensitivity metrics.
    pub channel_means: [f32; 3],
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_VERSION: u32 = 1;

fn sample_stem(index: usize) -> String {
    format!("sample_{index:05}")
}

/// Generates `n` samples under `dir`: `images/*.t4f`, `masks/*.t4f`,
/// `boxes/*.json`, and `manifest.json`. Regenerating with the same spec
/// reproduces every file bitwise.
pub fn generate_corpus(spec: &SynthSpec, n: usize, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    if n < 2 {
        return Err(Error::Config {
            detail: format!("corpus size must be at least 2, got {n}"),
        });
    }

    for sub in ["images", "masks", "boxes"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(&dir.join(sub), e))?;
    }

    let splits = split_assignments(spec.seed, n);
    let mut entries = Vec::with_capacity(n);
    let mut channel_sums = [0.0f64; 3];

    for index in 0..n {
        let sample = generate_sample(spec, index)?;
        let stem = sample_stem(index);
        let image_rel = format!("images/{stem}.t4f");
        let mask_rel = format!("masks/{stem}.t4f");
        let boxes_rel = format!("boxes/{stem}.json");

        t4f::write(&dir.join(&image_rel), &sample.image)?;
        t4f::write(&dir.join(&mask_rel), &sample.gt.mask)?;
        let boxes_json = serde_json::to_vec_pretty(&sample.gt.boxes).expect("boxes serialize");
        t4f::write_atomic(&dir.join(&boxes_rel), &boxes_json)?;

        for ch in 0..CHANNELS {
            let mut acc = 0.0f64;
            for &v in sample.image.plane(0, ch) {
                acc += v as f64;
            }
            channel_sums[ch] += acc;
        }

        entries.push(ManifestEntry {
            id: index,
            label: sample.label,
            split: splits[index],
            image: image_rel,
            mask: mask_rel,
            boxes: boxes_rel,
        });
    }

    let pixels = (n * spec.height * spec.width) as f64;
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        spec: *spec,
        channel_means: [
            (channel_sums[0] / pixels) as f32,
            (channel_sums[1] / pixels) as f32,
            (channel_sums[2] / pixels) as f32,
        ],
        entries,
    };
    let manifest_json = serde_json::to_vec_pretty(&manifest).expect("manifest serialize");
    t4f::write_atomic(&dir.join("manifest.json"), &manifest_json)?;
    Ok(manifest)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = manifest_path(dir);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))
}

/// Loads one sample's files back into memory.
pub fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<Sample> {
    let image = t4f::read(&dir.join(&entry.image))?;
    let mask = t4f::read(&dir.join(&entry.mask))?;
    let boxes_path = dir.join(&entry.boxes);
    let bytes = fs::read(&boxes_path).map_err(|e| Error::io(&boxes_path, e))?;
    let boxes: Vec<BoxRect> =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&boxes_path, e.to_string()))?;
    Ok(Sample {
        image,
        label: entry.label,
        gt: GroundTruth { mask, boxes },
    })
}

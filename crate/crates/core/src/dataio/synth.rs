//! Seeded synthetic snippet features standing in for a frozen image encoder.
//!
//! Normal snippets are draws from one Gaussian cloud. Abnormal videos carry
//! one to three planted segments whose features are pushed along a
//! category-specific unit direction; the push ramps in and out with a raised
//! cosine over `ramp_width` snippets outside the labelled span, so the frames
//! next to a segment are partially shifted while still labelled normal.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{write_category_names, DatasetManifest, FeatureSequence, ManifestEntry};
use super::format::{write_features, write_gt};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};

const CATEGORY_NAMES: [&str; 7] = [
    "normal",
    "fighting",
    "shooting",
    "riot",
    "abuse",
    "car_accident",
    "explosion",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_videos: usize,
    /// Extra held-out videos written to a second manifest (0 disables).
    pub num_test_videos: usize,
    pub feature_dim: usize,
    pub num_categories: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of abnormal videos, in `[0, 1)`.
    pub anomaly_ratio: f64,
    pub shift_magnitude: f64,
    pub min_segment: usize,
    pub max_segment: usize,
    pub ramp_width: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_videos: 60,
            num_test_videos: 40,
            feature_dim: 32,
            num_categories: 7,
            min_len: 160,
            max_len: 320,
            anomaly_ratio: 0.5,
            shift_magnitude: 3.0,
            min_segment: 12,
            max_segment: 48,
            ramp_width: 4,
            noise_std: 0.6,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_categories < 2 {
            return fail("num_categories must be at least 2");
        }
        if !(0.0..1.0).contains(&self.anomaly_ratio) {
            return fail("anomaly_ratio must lie in [0, 1)");
        }
        if self.num_videos == 0 || self.feature_dim == 0 {
            return fail("num_videos and feature_dim must be positive");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail("need 0 < min_len <= max_len");
        }
        if self.min_segment == 0 || self.min_segment > self.max_segment {
            return fail("need 0 < min_segment <= max_segment");
        }
        if self.max_segment > self.min_len {
            return fail("max_segment must not exceed min_len");
        }
        if !(self.shift_magnitude.is_finite()
            && self.noise_std.is_finite()
            && self.noise_std >= 0.0)
        {
            return fail("shift_magnitude and noise_std must be finite, noise_std >= 0");
        }
        Ok(())
    }
}

/// Result of [`generate_synthetic_dataset`]: the in-memory videos plus the
/// manifests that were written.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub train: Vec<FeatureSequence>,
    pub test: Vec<FeatureSequence>,
    pub train_manifest: DatasetManifest,
    pub test_manifest: Option<DatasetManifest>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Raised-cosine envelope: 1 inside `[start, end)`, falling to 0 over `ramp`
/// snippets on either side.
fn envelope(t: usize, start: usize, end: usize, ramp: usize) -> f64 {
    let dist = if t < start {
        start - t
    } else if t >= end {
        t + 1 - end
    } else {
        return 1.0;
    };
    if ramp == 0 || dist > ramp {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * dist as f64 / (ramp as f64 + 1.0)).cos())
    }
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    base: Vec<f64>,
    directions: Vec<Vec<f64>>,
}

impl Generator<'_> {
    fn plant_segments(&mut self, n: usize) -> Vec<(usize, usize, u32)> {
        let cfg = self.cfg;
        let want = self.rng.random_range(1..=3usize);
        let gap = 2 * cfg.ramp_width + 1;
        let mut segs: Vec<(usize, usize, u32)> = Vec::new();
        let mut attempts = 0;
        while segs.len() < want && attempts < 200 {
            attempts += 1;
            let len = self
                .rng
                .random_range(cfg.min_segment..=cfg.max_segment)
                .min(n);
            let start = self.rng.random_range(0..=n - len);
            let cat = self.rng.random_range(1..cfg.num_categories as u32);
            let clashes = segs
                .iter()
                .any(|&(s, e, _)| start < e + gap && s < start + len + gap);
            if !clashes {
                segs.push((start, start + len, cat));
            }
        }
        segs.sort_unstable();
        segs
    }

    fn video(&mut self, video_id: String, abnormal: bool) -> FeatureSequence {
        let cfg = self.cfg;
        let d = cfg.feature_dim;
        let n = self.rng.random_range(cfg.min_len..=cfg.max_len);
        let offset: Vec<f64> = (0..d).map(|_| 0.25 * gaussian(&mut self.rng)).collect();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            for j in 0..d {
                data.push(self.base[j] + offset[j] + cfg.noise_std * gaussian(&mut self.rng));
            }
        }
        let mut gt = vec![0u32; n];
        let mut labels = BTreeSet::new();
        if abnormal {
            for (start, end, cat) in self.plant_segments(n) {
                labels.insert(cat);
                gt[start..end].iter_mut().for_each(|g| *g = cat);
                let dir = &self.directions[cat as usize - 1];
                let lo = start.saturating_sub(cfg.ramp_width);
                let hi = (end + cfg.ramp_width).min(n);
                for t in lo..hi {
                    let w = cfg.shift_magnitude * envelope(t, start, end, cfg.ramp_width);
                    for j in 0..d {
                        data[t * d + j] += w * dir[j];
                    }
                }
            }
        }
        if labels.is_empty() {
            labels.insert(0);
        }
        FeatureSequence {
            video_id,
            features: Matrix::from_vec(n, d, data.into_iter().map(|v| v as f32).collect()),
            video_labels: labels,
            gt_frames: Some(gt),
        }
    }

    fn split(&mut self, prefix: &str, count: usize) -> Vec<FeatureSequence> {
        let abnormal_count = (count as f64 * self.cfg.anomaly_ratio).round() as usize;
        let mut flags: Vec<bool> = (0..count).map(|i| i < abnormal_count).collect();
        flags.shuffle(&mut self.rng);
        flags
            .into_iter()
            .enumerate()
            .map(|(i, abnormal)| self.video(format!("{prefix}_{i:04}"), abnormal))
            .collect()
    }
}

/// Generates train (and optionally test) videos in memory. Pure function of
/// `cfg`.
pub fn synthesize(cfg: &SynthConfig) -> Result<(Vec<FeatureSequence>, Vec<FeatureSequence>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base: Vec<f64> = (0..cfg.feature_dim)
        .map(|_| 0.5 * gaussian(&mut rng))
        .collect();
    let directions = (1..cfg.num_categories)
        .map(|_| unit_vector(&mut rng, cfg.feature_dim))
        .collect();
    let mut gen = Generator {
        cfg,
        rng,
        base,
        directions,
    };
    let train = gen.split("vid", cfg.num_videos);
    let test = gen.split("test", cfg.num_test_videos);
    Ok((train, test))
}

pub fn category_names(num_categories: usize) -> Vec<(u32, String)> {
    (0..num_categories)
        .map(|m| {
            let name = CATEGORY_NAMES
                .get(m)
                .map_or_else(|| format!("category_{m}"), |s| s.to_string());
            (m as u32, name)
        })
        .collect()
}

fn persist(
    out_dir: &Path,
    videos: &[FeatureSequence],
    cfg: &SynthConfig,
    manifest_name: &str,
) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(videos.len());
    for v in videos {
        let feature_rel = Path::new("features").join(format!("{}.cplf", v.video_id));
        write_features(&out_dir.join(&feature_rel), &v.features)?;
        let gt_rel = v.gt_frames.as_ref().map(|gt| {
            let rel = Path::new("gt").join(format!("{}.txt", v.video_id));
            write_gt(&out_dir.join(&rel), gt).map(|_| rel)
        });
        entries.push(ManifestEntry {
            video_id: v.video_id.clone(),
            feature_path: feature_rel,
            labels: v.video_labels.iter().copied().collect(),
            gt_path: gt_rel.transpose()?,
        });
    }
    let manifest = DatasetManifest {
        entries,
        feature_dim: cfg.feature_dim,
        num_categories: cfg.num_categories,
    };
    manifest.write(&out_dir.join(manifest_name))?;
    Ok(manifest)
}

/// Writes `manifest.tsv`, `test_manifest.tsv` (when test videos are
/// requested), `categories.tsv`, `features/*.cplf` and `gt/*.txt` under
/// `out_dir`.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    let (train, test) = synthesize(cfg)?;
    for sub in ["features", "gt"] {
        let p = out_dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let train_manifest = persist(out_dir, &train, cfg, "manifest.tsv")?;
    let test_manifest = if test.is_empty() {
        None
    } else {
        Some(persist(out_dir, &test, cfg, "test_manifest.tsv")?)
    };
    write_category_names(
        &out_dir.join("categories.tsv"),
        &category_names(cfg.num_categories),
    )?;
    Ok(SynthOutput {
        train,
        test,
        train_manifest,
        test_manifest,
    })
}

//! Consistency-aware refinement of multi-scale scores into pseudo labels.
//!
//! Raw per-level logits are normalized to `[0, 1]` and upsampled to `n`
//! snippets. At every snippet the `L` scale values are fused with weights
//! from an RBF affinity whose bandwidth is the (scaled) median absolute
//! deviation of those values; a scale's weight is its total affinity to the
//! other scales, normalized over all ordered pairs `i ≠ j`. The fused track is
//! then binarized, nearby runs merged, short runs dropped, and the survivors
//! rendered as plateaus with Gaussian tails.

use std::fmt;
use std::path::Path;

use crate::dataio::FeatureSequence;
use crate::diffcore::{interpolate, sigmoid, softmax, Matrix, Real};
use crate::error::{Error, FormatError, Result};
use crate::model::DualBranchModel;
use crate::pyramid::{resample_to_n, ScorePyramid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineConfig {
    /// Binarization threshold θ; a snippet is abnormal when its score exceeds it.
    pub threshold: f64,
    /// Runs separated by at most this many snippets are merged.
    pub max_gap: usize,
    /// Runs shorter than this are dropped.
    pub min_length: usize,
    /// Standard deviation (in snippets) of the boundary taper.
    pub boundary_sigma: f64,
    /// Multiplier turning the MAD into a bandwidth.
    pub mad_scale: f64,
    /// Lower bound on the bandwidth.
    pub bandwidth_floor: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            max_gap: 5,
            min_length: 3,
            boundary_sigma: 2.0,
            mad_scale: 1.4826,
            bandwidth_floor: 1e-6,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("refine threshold must lie in (0, 1)".into()));
        }
        if self.max_gap == 0 || self.min_length == 0 {
            return Err(Error::Config(
                "max_gap and min_length must be positive".into(),
            ));
        }
        for (name, v) in [
            ("boundary_sigma", self.boundary_sigma),
            ("mad_scale", self.mad_scale),
            ("bandwidth_floor", self.bandwidth_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Binary,
    Category,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Binary => "B",
            Branch::Category => "C",
        })
    }
}

/// Soft snippet-level supervision in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoTrack {
    pub values: Vec<f64>,
    pub source: Branch,
    pub video_id: String,
}

impl PseudoTrack {
    pub fn zeros(n: usize, source: Branch, video_id: impl Into<String>) -> Self {
        Self {
            values: vec![0.0; n],
            source,
            video_id: video_id.into(),
        }
    }

    /// Runs of full-strength (== 1) snippets.
    pub fn plateaus(&self) -> Vec<(usize, usize)> {
        runs(&self.values.iter().map(|&v| v >= 1.0).collect::<Vec<_>>())
    }
}

/// Half-open `[start, end)` runs of `true`.
pub fn runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, mask.len()));
    }
    out
}

/// Softmax over categories, then the mass of every abnormal category
/// (`1 - p_normal`), per snippet.
pub fn abnormal_track<T: Real>(category_logits: &Matrix<T>) -> Vec<f64> {
    (0..category_logits.rows())
        .map(|r| {
            let row: Vec<f64> = category_logits
                .row(r)
                .iter()
                .map(|v| v.to_f64_lossless())
                .collect();
            softmax(&row)[1..].iter().sum::<f64>()
        })
        .collect()
}

/// Normalizes each level to `[0, 1]` and interpolates it to `n` snippets.
/// Rows of the result are levels.
pub fn normalize_and_upsample<T: Real>(
    pyramid: &ScorePyramid<T>,
    branch: Branch,
    n: usize,
) -> Result<Matrix<f64>> {
    let mut out = Matrix::zeros(pyramid.num_levels(), n);
    for (i, level) in pyramid.levels.iter().enumerate() {
        let probs: Vec<f64> = match branch {
            Branch::Binary => {
                if level.cols() != 1 {
                    return Err(Error::shape(
                        "normalize_and_upsample",
                        format!("binary level has {} columns", level.cols()),
                    ));
                }
                level
                    .data()
                    .iter()
                    .map(|v| sigmoid(v.to_f64_lossless()))
                    .collect()
            }
            Branch::Category => {
                if level.cols() < 2 {
                    return Err(Error::shape(
                        "normalize_and_upsample",
                        "category level needs at least 2 columns",
                    ));
                }
                abnormal_track(level)
            }
        };
        out.row_mut(i).copy_from_slice(&interpolate(&probs, n));
    }
    Ok(out)
}

fn median(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

/// `max(c · median(|x - median(x)|), floor)`.
pub fn mad_bandwidth(x: &[f64], mad_scale: f64, floor: f64) -> f64 {
    if x.is_empty() {
        return floor;
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let center = median(&sorted);
    let mut dev: Vec<f64> = x.iter().map(|v| (v - center).abs()).collect();
    dev.sort_by(f64::total_cmp);
    (mad_scale * median(&dev)).max(floor)
}

/// Scale weights from pairwise RBF affinities excluding self-pairs. Falls back
/// to uniform weights when every affinity underflows.
pub fn rbf_weights(x: &[f64], sigma: f64) -> Vec<f64> {
    let l = x.len();
    if l <= 1 {
        return vec![1.0; l];
    }
    let denom = 2.0 * sigma * sigma;
    let affinity: Vec<f64> = (0..l)
        .map(|i| {
            (0..l)
                .filter(|&j| j != i)
                .map(|j| (-(x[i] - x[j]).powi(2) / denom).exp())
                .sum()
        })
        .collect();
    let total: f64 = affinity.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return vec![1.0 / l as f64; l];
    }
    affinity.into_iter().map(|a| a / total).collect()
}

/// RBF-weighted fusion of the level rows of `tracks`, one value per snippet.
pub fn aggregate_scales(tracks: &Matrix<f64>, cfg: &RefineConfig) -> Vec<f64> {
    (0..tracks.cols())
        .map(|t| {
            let column = tracks.col_vec(t);
            let sigma = mad_bandwidth(&column, cfg.mad_scale, cfg.bandwidth_floor);
            let w = rbf_weights(&column, sigma);
            let fused: f64 = w.iter().zip(&column).map(|(a, b)| a * b).sum();
            // convex combination; clip roundoff
            let (lo, hi) = column
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            fused.clamp(lo, hi)
        })
        .collect()
}

/// Plain per-snippet mean over levels.
pub fn mean_scales(tracks: &Matrix<f64>) -> Vec<f64> {
    let l = tracks.rows() as f64;
    (0..tracks.cols())
        .map(|t| tracks.col_vec(t).iter().sum::<f64>() / l)
        .collect()
}

/// Merges runs separated by at most `max_gap` snippets.
pub fn merge_runs(runs: &[(usize, usize)], max_gap: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for &(s, e) in runs {
        match out.last_mut() {
            Some(last) if s - last.1 <= max_gap => last.1 = e,
            _ => out.push((s, e)),
        }
    }
    out
}

/// Binarize, merge, filter and render surviving runs as plateaus with
/// Gaussian tails truncated at `3σ_b`.
pub fn refine_segments(scores: &[f64], cfg: &RefineConfig) -> Vec<(usize, usize)> {
    let mask: Vec<bool> = scores.iter().map(|&s| s > cfg.threshold).collect();
    merge_runs(&runs(&mask), cfg.max_gap)
        .into_iter()
        .filter(|(s, e)| e - s >= cfg.min_length)
        .collect()
}

pub fn render_plateaus(n: usize, segments: &[(usize, usize)], sigma: f64) -> Vec<f64> {
    let mut out = vec![0.0f64; n];
    let reach = 3.0 * sigma;
    for &(s, e) in segments {
        let span = reach.floor() as usize;
        let lo = s.saturating_sub(span);
        let hi = (e + span).min(n);
        for (t, slot) in out.iter_mut().enumerate().take(hi).skip(lo) {
            let dist = if t < s {
                (s - t) as f64
            } else if t >= e {
                (t + 1 - e) as f64
            } else {
                0.0
            };
            let v = if dist == 0.0 {
                1.0
            } else if dist <= reach {
                (-dist * dist / (2.0 * sigma * sigma)).exp()
            } else {
                0.0
            };
            *slot = slot.max(v);
        }
    }
    out
}

pub fn temporal_refine(
    scores: &[f64],
    cfg: &RefineConfig,
    source: Branch,
    video_id: &str,
) -> PseudoTrack {
    let segments = refine_segments(scores, cfg);
    PseudoTrack {
        values: render_plateaus(scores.len(), &segments, cfg.boundary_sigma),
        source,
        video_id: video_id.to_string(),
    }
}

/// How per-level scores become a pseudo track.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackMode {
    /// RBF scale fusion followed by temporal refinement.
    Refined,
    /// Plain mean over levels, no refinement.
    RawMean,
}

pub fn track_from_levels(
    levels: &Matrix<f64>,
    cfg: &RefineConfig,
    mode: TrackMode,
    source: Branch,
    video_id: &str,
) -> PseudoTrack {
    match mode {
        TrackMode::Refined => {
            temporal_refine(&aggregate_scales(levels, cfg), cfg, source, video_id)
        }
        TrackMode::RawMean => PseudoTrack {
            values: mean_scales(levels),
            source,
            video_id: video_id.to_string(),
        },
    }
}

/// Pseudo tracks `(pseudo_b, pseudo_c)` for one video from a stage-1 model.
/// Normal-only videos get all-zero tracks.
pub fn generate_pseudo_tracks<T: Real>(
    model: &DualBranchModel<T>,
    video: &FeatureSequence,
    n: usize,
    cfg: &RefineConfig,
    mode: TrackMode,
) -> Result<(PseudoTrack, PseudoTrack)> {
    let id = &video.video_id;
    if !video.is_abnormal() {
        return Ok((
            PseudoTrack::zeros(n, Branch::Binary, id),
            PseudoTrack::zeros(n, Branch::Category, id),
        ));
    }
    let feats = resample_to_n(&video.features.cast::<T>(), n, model.config.levels)?;
    let logits = model.logits(&feats)?;
    let b = normalize_and_upsample(&logits.binary, Branch::Binary, n)?;
    let c = normalize_and_upsample(&logits.category, Branch::Category, n)?;
    Ok((
        track_from_levels(&b, cfg, mode, Branch::Binary, id),
        track_from_levels(&c, cfg, mode, Branch::Category, id),
    ))
}

/// `snippet_index<TAB>pseudo_b<TAB>pseudo_c` with a header row.
pub fn write_pseudo_tsv(path: &Path, pseudo_b: &PseudoTrack, pseudo_c: &PseudoTrack) -> Result<()> {
    if pseudo_b.values.len() != pseudo_c.values.len() {
        return Err(Error::shape("write_pseudo_tsv", "track lengths differ"));
    }
    let mut s = String::from("snippet_index\tpseudo_b\tpseudo_c\n");
    for (i, (b, c)) in pseudo_b.values.iter().zip(&pseudo_c.values).enumerate() {
        s.push_str(&format!("{i}\t{b}\t{c}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_pseudo_tsv(path: &Path, video_id: &str) -> Result<(PseudoTrack, PseudoTrack)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::format(path, FormatError::Malformed(m));
    let mut b = Vec::new();
    let mut c = Vec::new();
    for (i, line) in text.lines().skip(1).enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad(format!("row {}: expected 3 columns", i + 1)));
        }
        if cols[0].parse::<usize>().ok() != Some(i) {
            return Err(bad(format!("row {}: snippet index {:?}", i + 1, cols[0])));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| (0.0..=1.0).contains(v))
                .ok_or_else(|| bad(format!("row {}: value {s:?} outside [0, 1]", i + 1)))
        };
        b.push(parse(cols[1])?);
        c.push(parse(cols[2])?);
    }
    Ok((
        PseudoTrack {
            values: b,
            source: Branch::Binary,
            video_id: video_id.to_string(),
        },
        PseudoTrack {
            values: c,
            source: Branch::Category,
            video_id: video_id.to_string(),
        },
    ))
}

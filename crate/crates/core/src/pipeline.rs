//! Two-stage training, pseudo-label generation, inference and evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::car::{
    generate_pseudo_tracks, read_pseudo_tsv, write_pseudo_tsv, PseudoTrack, RefineConfig, TrackMode,
};
use crate::dataio::{Dataset, FeatureSequence};
use crate::diffcore::{
    adam_step, interpolate_rows, save_checkpoint, sigmoid, softmax, Gradients, Graph, Matrix,
    OptimState, Real,
};
use crate::error::{Error, Result};
use crate::losses::{
    bce_video_loss, binary_focal_loss, category_focal_loss, mil_align_loss, total_loss, LossConfig,
};
use crate::metrics::{
    extract_segments, frame_ap, frame_auc, gt_segments, map_at_iou, EvalReport, DEFAULT_IOUS,
    DEFAULT_SEGMENT_THRESHOLDS,
};
use crate::model::{DualBranchModel, ModelConfig};
use crate::pyramid::{check_length, resample_to_n, ScorePyramid};

/// Which pseudo track supervises which branch in stage 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PseudoDirection {
    /// No snippet-level term.
    None,
    /// The binary track supervises the category branch.
    BToC,
    /// The category track supervises the binary branch.
    CToB,
    /// Each branch is fed its own track.
    SelfFeed,
    /// Both cross directions.
    Both,
}

impl PseudoDirection {
    pub const ALL: [PseudoDirection; 5] = [
        Self::None,
        Self::BToC,
        Self::CToB,
        Self::SelfFeed,
        Self::Both,
    ];
}

impl fmt::Display for PseudoDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::BToC => "b2c",
            Self::CToB => "c2b",
            Self::SelfFeed => "self",
            Self::Both => "both",
        })
    }
}

impl FromStr for PseudoDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "b2c" | "b->c" | "btoc" => Ok(Self::BToC),
            "c2b" | "c->b" | "ctob" => Ok(Self::CToB),
            "self" => Ok(Self::SelfFeed),
            "both" | "cross" => Ok(Self::Both),
            other => Err(Error::Config(format!(
                "unknown pseudo direction {other:?} (expected none, b2c, c2b, self, both)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub levels: usize,
    /// Fixed snippet count every video is resampled to.
    pub n: usize,
    /// Encoder width.
    pub width: usize,
    pub stage: u8,
    pub direction: PseudoDirection,
    /// Refine pseudo tracks with CAR; otherwise use the plain level mean.
    pub car: bool,
    pub loss: LossConfig,
    pub refine: RefineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 1e-4,
            seed: 1,
            levels: 6,
            n: 192,
            width: 32,
            stage: 1,
            direction: PseudoDirection::Both,
            car: true,
            loss: LossConfig::default(),
            refine: RefineConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.width == 0 {
            return Err(Error::Config(
                "epochs, batch_size and width must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !matches!(self.stage, 1 | 2) {
            return Err(Error::Config(format!(
                "stage must be 1 or 2, got {}",
                self.stage
            )));
        }
        check_length(self.n, self.levels)?;
        self.loss.validate()?;
        self.refine.validate()
    }

    pub fn track_mode(&self) -> TrackMode {
        if self.car {
            TrackMode::Refined
        } else {
            TrackMode::RawMean
        }
    }

    pub fn model_config(&self, dataset: &Dataset) -> ModelConfig {
        ModelConfig {
            input_dim: dataset.feature_dim,
            width: self.width,
            levels: self.levels,
            num_categories: dataset.num_categories,
        }
    }

    /// Seed of the parameter initialization for the configured stage.
    pub fn init_seed(&self) -> u64 {
        self.seed
            .wrapping_mul(1_000_003)
            .wrapping_add(u64::from(self.stage))
    }

    /// Sets one `key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "levels" => self.levels = parse_value(key, value)?,
            "n" => self.n = parse_value(key, value)?,
            "width" => self.width = parse_value(key, value)?,
            "stage" => self.stage = parse_value(key, value)?,
            "direction" => self.direction = value.parse()?,
            "car" => self.car = parse_value(key, value)?,
            "topk_divisor" => self.loss.topk_divisor = parse_value(key, value)?,
            "focal_gamma" => self.loss.focal_gamma = parse_value(key, value)?,
            "focal_alpha" => self.loss.focal_alpha = parse_value(key, value)?,
            "p_min" => self.loss.p_min = parse_value(key, value)?,
            "threshold" => self.refine.threshold = parse_value(key, value)?,
            "max_gap" => self.refine.max_gap = parse_value(key, value)?,
            "min_length" => self.refine.min_length = parse_value(key, value)?,
            "boundary_sigma" => self.refine.boundary_sigma = parse_value(key, value)?,
            "mad_scale" => self.refine.mad_scale = parse_value(key, value)?,
            "bandwidth_floor" => self.refine.bandwidth_floor = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text (blank lines and `#` comments allowed)
    /// on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key = value", i + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Fully resolved configuration, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let entries: [(&str, String); 20] = [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("seed", self.seed.to_string()),
            ("levels", self.levels.to_string()),
            ("n", self.n.to_string()),
            ("width", self.width.to_string()),
            ("stage", self.stage.to_string()),
            ("direction", self.direction.to_string()),
            ("car", self.car.to_string()),
            ("topk_divisor", self.loss.topk_divisor.to_string()),
            ("focal_gamma", self.loss.focal_gamma.to_string()),
            ("focal_alpha", self.loss.focal_alpha.to_string()),
            ("p_min", self.loss.p_min.to_string()),
            ("threshold", self.refine.threshold.to_string()),
            ("max_gap", self.refine.max_gap.to_string()),
            ("min_length", self.refine.min_length.to_string()),
            ("boundary_sigma", self.refine.boundary_sigma.to_string()),
            ("mad_scale", self.refine.mad_scale.to_string()),
            ("bandwidth_floor", self.refine.bandwidth_floor.to_string()),
        ];
        entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// FNV-1a hash of the resolved text, as 16 hex digits.
    pub fn fingerprint(&self) -> String {
        let hash = self
            .to_text()
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
                (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
            });
        format!("{hash:016x}")
    }
}

/// `(pseudo_b, pseudo_c)` per video id.
pub type PseudoTracks = BTreeMap<String, (PseudoTrack, PseudoTrack)>;

/// Mean loss terms over the videos of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub bce: f64,
    pub nce: f64,
    pub focal: f64,
    pub total: f64,
}

pub fn loss_log_tsv(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch\tL_bce\tL_nce\tL_focal\tL_total\n");
    for e in history {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.epoch, e.bce, e.nce, e.focal, e.total
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct StageOutput {
    pub model: DualBranchModel<f32>,
    pub history: Vec<EpochLoss>,
}

/// Where a stage writes its checkpoint (after every epoch) and loss log.
#[derive(Clone, Debug)]
pub struct StageArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl StageArtifacts {
    pub fn in_dir(dir: &Path, stage: u8) -> Self {
        Self {
            checkpoint: dir.join(format!("stage{stage}.ckpt")),
            log: dir.join(format!("train_stage{stage}.log.tsv")),
        }
    }
}

/// Reads `<dir>/<video_id>.tsv` for every video. Abnormal videos must have a
/// track; normal videos without one get zero tracks.
pub fn load_pseudo_tracks(dir: &Path, dataset: &Dataset, n: usize) -> Result<PseudoTracks> {
    if !dir.is_dir() {
        return Err(Error::Precondition(format!(
            "pseudo-label directory {} does not exist",
            dir.display()
        )));
    }
    let mut out = PseudoTracks::new();
    for v in &dataset.videos {
        let path = dir.join(format!("{}.tsv", v.video_id));
        let tracks = if path.exists() {
            read_pseudo_tsv(&path, &v.video_id)?
        } else if v.is_abnormal() {
            return Err(Error::Precondition(format!(
                "missing pseudo track for abnormal video {} in {}",
                v.video_id,
                dir.display()
            )));
        } else {
            zero_tracks(n, &v.video_id)
        };
        if tracks.0.values.len() != n {
            return Err(Error::Validation(format!(
                "{}: pseudo track has {} snippets, expected {n}",
                v.video_id,
                tracks.0.values.len()
            )));
        }
        out.insert(v.video_id.clone(), tracks);
    }
    Ok(out)
}

fn zero_tracks(n: usize, id: &str) -> (PseudoTrack, PseudoTrack) {
    use crate::car::Branch;
    (
        PseudoTrack::zeros(n, Branch::Binary, id),
        PseudoTrack::zeros(n, Branch::Category, id),
    )
}

/// Pseudo tracks for every video from a stage-1 model.
pub fn generate_all_tracks(
    model: &DualBranchModel<f32>,
    dataset: &Dataset,
    n: usize,
    refine: &RefineConfig,
    mode: TrackMode,
) -> Result<PseudoTracks> {
    let tracks: Vec<_> = dataset
        .videos
        .par_iter()
        .map(|v| generate_pseudo_tracks(model, v, n, refine, mode).map(|t| (v.video_id.clone(), t)))
        .collect::<Result<_>>()?;
    Ok(tracks.into_iter().collect())
}

pub fn write_pseudo_dir(dir: &Path, tracks: &PseudoTracks) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, (b, c)) in tracks {
        write_pseudo_tsv(&dir.join(format!("{id}.tsv")), b, c)?;
    }
    Ok(())
}

struct Prepared<'a> {
    video: &'a FeatureSequence,
    features: Matrix<f32>,
    labels: Vec<u32>,
}

fn prepare<'a>(dataset: &'a Dataset, cfg: &TrainConfig) -> Result<Vec<Prepared<'a>>> {
    dataset
        .videos
        .iter()
        .map(|v| {
            Ok(Prepared {
                video: v,
                features: resample_to_n(&v.features, cfg.n, cfg.levels)?,
                labels: v.video_labels.iter().copied().collect(),
            })
        })
        .collect()
}

/// Per-epoch visiting order: abnormal and normal videos interleaved 1:1, the
/// minority class resampled (reshuffled on each pass) up to the majority size.
pub fn balanced_order(abnormal: &[usize], normal: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let draw = |pool: &[usize], count: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let mut pass = pool.to_vec();
            pass.shuffle(rng);
            out.extend(pass.into_iter().take(count - out.len()));
        }
        out
    };
    if abnormal.is_empty() || normal.is_empty() {
        return draw(
            if abnormal.is_empty() {
                normal
            } else {
                abnormal
            },
            abnormal.len() + normal.len(),
            rng,
        );
    }
    let size = abnormal.len().max(normal.len());
    let a = draw(abnormal, size, rng);
    let b = draw(normal, size, rng);
    a.into_iter().zip(b).flat_map(|(x, y)| [x, y]).collect()
}

struct VideoStep {
    grads: Gradients<f32>,
    bce: f64,
    nce: f64,
    focal: f64,
}

fn video_step(
    model: &DualBranchModel<f32>,
    item: &Prepared<'_>,
    tracks: Option<&(PseudoTrack, PseudoTrack)>,
    cfg: &TrainConfig,
) -> Result<VideoStep> {
    let mut g = Graph::new();
    let x = g.input(item.features.clone());
    let out = model.forward(&mut g, x)?;
    let bce = bce_video_loss(&mut g, &out.binary, item.video.is_abnormal(), &cfg.loss)?;
    let nce = mil_align_loss(&mut g, &out.category, &item.labels, &cfg.loss)?;
    let mut terms = vec![bce, nce];
    let mut focal_terms = Vec::new();
    if let Some((pb, pc)) = tracks {
        let (to_b, to_c) = match cfg.direction {
            PseudoDirection::None => (None, None),
            PseudoDirection::BToC => (None, Some(pb)),
            PseudoDirection::CToB => (Some(pc), None),
            PseudoDirection::SelfFeed => (Some(pb), Some(pc)),
            PseudoDirection::Both => (Some(pc), Some(pb)),
        };
        if let Some(t) = to_b {
            focal_terms.push(binary_focal_loss(
                &mut g,
                &out.binary,
                &t.values,
                &cfg.loss,
            )?);
        }
        if let Some(t) = to_c {
            focal_terms.push(category_focal_loss(
                &mut g,
                &out.category,
                &t.values,
                &cfg.loss,
            )?);
        }
    }
    terms.extend(&focal_terms);
    let loss = terms[1..]
        .iter()
        .try_fold(terms[0], |acc, &t| g.add(acc, t))?;
    g.check_finite()?;
    let focal = focal_terms.iter().map(|&t| f64::from(g.scalar(t))).sum();
    Ok(VideoStep {
        grads: g.backward(loss, model.params.len())?,
        bce: f64::from(g.scalar(bce)),
        nce: f64::from(g.scalar(nce)),
        focal,
    })
}

/// Trains one stage from a fresh seeded initialization. Stage 2 needs
/// `tracks`; stage 1 ignores them.
pub fn train_stage(
    dataset: &Dataset,
    cfg: &TrainConfig,
    tracks: Option<&PseudoTracks>,
    artifacts: Option<&StageArtifacts>,
) -> Result<StageOutput> {
    cfg.validate()?;
    if dataset.videos.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let tracks = match (cfg.stage, tracks) {
        (2, None) => {
            return Err(Error::Precondition(
                "stage 2 needs pseudo tracks (--pseudo-dir)".into(),
            ))
        }
        (2, Some(t)) => {
            for v in dataset.videos.iter().filter(|v| v.is_abnormal()) {
                if !t.contains_key(&v.video_id) {
                    return Err(Error::Precondition(format!(
                        "missing pseudo track for {}",
                        v.video_id
                    )));
                }
            }
            Some(t)
        }
        _ => None,
    };
    let zero = zero_tracks(cfg.n, "");
    let items = prepare(dataset, cfg)?;
    let mut model = DualBranchModel::<f32>::init(cfg.model_config(dataset), cfg.init_seed());
    let mut opt = OptimState::new(&model.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed() ^ 0x5eed_ba7c);
    let (abnormal, normal): (Vec<usize>, Vec<usize>) =
        (0..items.len()).partition(|&i| items[i].video.is_abnormal());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = balanced_order(&abnormal, &normal, &mut rng);
        let mut sums = [0.0f64; 3];
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let tag = |e: Error| match e {
                Error::NonFinite { op } => Error::NonFinite {
                    op: format!("epoch {epoch}, batch {}: {op}", b + 1),
                },
                other => other,
            };
            let steps: Vec<VideoStep> = batch
                .par_iter()
                .map(|&i| {
                    let t = tracks.map(|t| t.get(&items[i].video.video_id).unwrap_or(&zero));
                    video_step(&model, &items[i], t, cfg)
                })
                .collect::<Result<_>>()
                .map_err(tag)?;
            let mut grads = Gradients::empty(model.params.len());
            for s in &steps {
                grads.add_assign(&s.grads);
                sums[0] += s.bce;
                sums[1] += s.nce;
                sums[2] += s.focal;
            }
            grads.scale(1.0 / batch.len() as f32);
            model.params.accumulate(&grads);
            adam_step(&mut model.params, &mut opt).map_err(tag)?;
        }
        let count = order.len() as f64;
        let [bce, nce, focal] = sums.map(|s| s / count);
        let total = total_loss(bce, nce, (cfg.stage == 2).then_some(focal))?;
        history.push(EpochLoss {
            epoch,
            bce,
            nce,
            focal,
            total,
        });
        if let Some(a) = artifacts {
            save_checkpoint(&a.checkpoint, &model.params)?;
            fs::write(&a.log, loss_log_tsv(&history)).map_err(|e| Error::io(&a.log, e))?;
        }
    }
    Ok(StageOutput { model, history })
}

/// Snippet-level anomaly scores `S_ab` (length `n`) and category
/// probabilities `S_cls` (`n × M`).
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResult {
    pub s_ab: Vec<f64>,
    pub s_cls: Matrix<f64>,
}

/// Upsamples every level's logits to `n`, averages them over levels, then
/// applies sigmoid (binary) and a row softmax (category).
pub fn aggregate_logits<T: Real>(
    binary: &ScorePyramid<T>,
    category: &ScorePyramid<T>,
    n: usize,
) -> Result<InferenceResult> {
    if binary.lengths() != category.lengths() || binary.num_levels() == 0 {
        return Err(Error::shape(
            "aggregate_logits",
            format!(
                "binary levels {:?} vs category levels {:?}",
                binary.lengths(),
                category.lengths()
            ),
        ));
    }
    let mean_up = |p: &ScorePyramid<T>| {
        let mut acc = Matrix::zeros(n, p.levels[0].cols());
        for level in &p.levels {
            acc.add_assign(&interpolate_rows(&level.cast::<f64>(), n));
        }
        acc.map(|v| v / p.num_levels() as f64)
    };
    let b = mean_up(binary);
    let c = mean_up(category);
    let s_ab = b.data().iter().map(|&v| sigmoid(v)).collect();
    let mut s_cls = Matrix::zeros(n, c.cols());
    for t in 0..n {
        s_cls.row_mut(t).copy_from_slice(&softmax(c.row(t)));
    }
    Ok(InferenceResult { s_ab, s_cls })
}

pub fn aggregate_inference<T: Real>(
    model: &DualBranchModel<T>,
    video: &FeatureSequence,
    n: usize,
) -> Result<InferenceResult> {
    let feats = resample_to_n(&video.features.cast::<T>(), n, model.config.levels)?;
    let logits = model.logits(&feats)?;
    aggregate_logits(&logits.binary, &logits.category, n)
}

/// Nearest-index resampling of a per-snippet label track to `n` entries
/// (endpoints pinned).
pub fn resample_labels(labels: &[u32], n: usize) -> Vec<u32> {
    let t = labels.len();
    if t == 0 {
        return vec![0; n];
    }
    (0..n)
        .map(|i| {
            let src = if n == 1 {
                0.0
            } else {
                i as f64 * (t - 1) as f64 / (n - 1) as f64
            };
            labels[(src.round() as usize).min(t - 1)]
        })
        .collect()
}

pub fn scores_tsv(result: &InferenceResult) -> String {
    let mut s = String::from("snippet\tS_ab");
    for m in 0..result.s_cls.cols() {
        s.push_str(&format!("\tS_cls_{m}"));
    }
    s.push('\n');
    for (t, ab) in result.s_ab.iter().enumerate() {
        s.push_str(&format!("{t}\t{ab}"));
        for v in result.s_cls.row(t) {
            s.push_str(&format!("\t{v}"));
        }
        s.push('\n');
    }
    s
}

/// Inference plus metrics over a labelled evaluation set.
pub fn evaluate(
    model: &DualBranchModel<f32>,
    dataset: &Dataset,
    n: usize,
    fingerprint: &str,
) -> Result<(EvalReport, Vec<InferenceResult>)> {
    let results: Vec<InferenceResult> = dataset
        .videos
        .par_iter()
        .map(|v| aggregate_inference(model, v, n))
        .collect::<Result<_>>()?;
    let mut scores = Vec::with_capacity(n * results.len());
    let mut labels = Vec::with_capacity(n * results.len());
    let mut preds = Vec::with_capacity(results.len());
    let mut gts = Vec::with_capacity(results.len());
    for (v, r) in dataset.videos.iter().zip(&results) {
        let gt = v.gt_frames.as_ref().ok_or_else(|| {
            Error::Validation(format!(
                "{}: evaluation needs ground-truth snippet labels",
                v.video_id
            ))
        })?;
        let gt = resample_labels(gt, n);
        scores.extend_from_slice(&r.s_ab);
        labels.extend(gt.iter().map(|&c| c != 0));
        preds.push(extract_segments(
            &r.s_ab,
            &r.s_cls,
            &DEFAULT_SEGMENT_THRESHOLDS,
        )?);
        gts.push(gt_segments(&gt));
    }
    let report = EvalReport {
        frame_ap: frame_ap(&scores, &labels)?,
        frame_auc: frame_auc(&scores, &labels)?,
        map: map_at_iou(&preds, &gts, &DEFAULT_IOUS)?,
        segment_thresholds: DEFAULT_SEGMENT_THRESHOLDS.to_vec(),
        fingerprint: fingerprint.to_string(),
    };
    Ok((report, results))
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub stage1: StageOutput,
    pub stage2: StageOutput,
    pub stage1_report: EvalReport,
    pub report: EvalReport,
}

/// Stage 1, pseudo tracks, stage 2, evaluation. Every artifact lands in
/// `run_dir`.
pub fn run_pipeline(
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    run_dir: &Path,
) -> Result<PipelineOutput> {
    let cfg1 = TrainConfig { stage: 1, ..*cfg };
    let cfg2 = TrainConfig { stage: 2, ..*cfg };
    cfg2.validate()?;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let resolved = run_dir.join("config.resolved");
    fs::write(&resolved, cfg2.to_text()).map_err(|e| Error::io(&resolved, e))?;

    let stage1 = train_stage(
        train,
        &cfg1,
        None,
        Some(&StageArtifacts::in_dir(run_dir, 1)),
    )?;
    let tracks = generate_all_tracks(&stage1.model, train, cfg.n, &cfg.refine, cfg.track_mode())?;
    write_pseudo_dir(&run_dir.join("pseudo"), &tracks)?;
    let stage2 = train_stage(
        train,
        &cfg2,
        Some(&tracks),
        Some(&StageArtifacts::in_dir(run_dir, 2)),
    )?;

    let fingerprint = cfg2.fingerprint();
    let (stage1_report, _) = evaluate(&stage1.model, test, cfg.n, &fingerprint)?;
    stage1_report.write(&run_dir.join("stage1_report.tsv"))?;
    let (report, results) = evaluate(&stage2.model, test, cfg.n, &fingerprint)?;
    report.write(&run_dir.join("report.tsv"))?;
    write_scores_dir(&run_dir.join("scores"), test, &results)?;
    Ok(PipelineOutput {
        stage1,
        stage2,
        stage1_report,
        report,
    })
}

pub fn write_scores_dir(dir: &Path, dataset: &Dataset, results: &[InferenceResult]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (v, r) in dataset.videos.iter().zip(results) {
        let path = dir.join(format!("{}.tsv", v.video_id));
        fs::write(&path, scores_tsv(r)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synthesize, SynthConfig};

    fn tiny_data() -> (Dataset, Dataset) {
        let cfg = SynthConfig {
            num_videos: 8,
            num_test_videos: 4,
            feature_dim: 8,
            num_categories: 3,
            min_len: 40,
            max_len: 60,
            min_segment: 6,
            max_segment: 12,
            ..SynthConfig::default()
        };
        let (train, test) = synthesize(&cfg).unwrap();
        let wrap = |videos| Dataset {
            videos,
            feature_dim: 8,
            num_categories: 3,
        };
        (wrap(train), wrap(test))
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr: 1e-3,
            levels: 3,
            n: 32,
            width: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let mut cfg = TrainConfig::default();
        cfg.apply_text("# comment\nlr = 0.003\ndirection = self\n\ncar=false")
            .unwrap();
        assert_eq!(cfg.lr, 0.003);
        assert_eq!(cfg.direction, PseudoDirection::SelfFeed);
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert!(matches!(
            cfg.set("learning_rate", "1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(cfg.set("epochs", "x"), Err(Error::Config(_))));
        assert_ne!(cfg.fingerprint(), TrainConfig::default().fingerprint());
    }

    #[test]
    fn balanced_order_interleaves_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let order = balanced_order(&[0, 1], &[2, 3, 4, 5, 6], &mut rng);
        assert_eq!(order.len(), 10);
        for pair in order.chunks(2) {
            assert!(pair[0] < 2 && pair[1] >= 2);
        }
        let normals: std::collections::BTreeSet<_> = order.iter().skip(1).step_by(2).collect();
        assert_eq!(normals.len(), 5);
    }

    #[test]
    fn aggregation_examples() {
        let c = 0.7f64;
        let binary =
            ScorePyramid::new(vec![Matrix::filled(8, 1, c), Matrix::filled(4, 1, c)]).unwrap();
        let category =
            ScorePyramid::new(vec![Matrix::filled(8, 3, 0.2), Matrix::filled(4, 3, -1.0)]).unwrap();
        let r = aggregate_logits(&binary, &category, 8).unwrap();
        assert!(r.s_ab.iter().all(|&s| (s - sigmoid(c)).abs() < 1e-15));
        for t in 0..8 {
            assert!((r.s_cls.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        let binary =
            ScorePyramid::new(vec![Matrix::filled(4, 1, 0.0), Matrix::filled(2, 1, 2.0)]).unwrap();
        let r = aggregate_logits(&binary, &category.clone(), 4);
        assert!(r.is_err());
        let category =
            ScorePyramid::new(vec![Matrix::filled(4, 2, 0.0), Matrix::filled(2, 2, 0.0)]).unwrap();
        let r = aggregate_logits(&binary, &category, 4).unwrap();
        assert!(r.s_ab.iter().all(|&s| (s - sigmoid(1.0)).abs() < 1e-15));
    }

    #[test]
    fn label_resampling_pins_endpoints() {
        assert_eq!(resample_labels(&[1, 0, 0, 2], 7), vec![1, 0, 0, 0, 0, 2, 2]);
        assert_eq!(resample_labels(&[3, 4], 2), vec![3, 4]);
    }

    #[test]
    fn stage_two_requires_tracks() {
        let (train, _) = tiny_data();
        let cfg = TrainConfig {
            stage: 2,
            ..tiny_cfg()
        };
        assert!(matches!(
            train_stage(&train, &cfg, None, None),
            Err(Error::Precondition(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_pseudo_tracks(dir.path(), &train, cfg.n),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let (train, _) = tiny_data();
        let cfg = tiny_cfg();
        let a = train_stage(&train, &cfg, None, None).unwrap();
        let b = train_stage(&train, &cfg, None, None).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 2);
        assert_eq!(a.history[0].focal, 0.0);
    }

    #[test]
    fn pipeline_writes_run_directory() {
        let (train, test) = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let out = run_pipeline(&train, &test, &tiny_cfg(), dir.path()).unwrap();
        for f in [
            "config.resolved",
            "stage1.ckpt",
            "stage2.ckpt",
            "train_stage1.log.tsv",
            "train_stage2.log.tsv",
            "report.tsv",
        ] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        for v in &train.videos {
            assert!(dir
                .path()
                .join("pseudo")
                .join(format!("{}.tsv", v.video_id))
                .is_file());
        }
        for v in &test.videos {
            assert!(dir
                .path()
                .join("scores")
                .join(format!("{}.tsv", v.video_id))
                .is_file());
        }
        let r = &out.report;
        for v in [r.frame_ap, r.frame_auc, r.map_avg()] {
            assert!((0.0..=1.0).contains(&v));
        }
        let reloaded = load_pseudo_tracks(&dir.path().join("pseudo"), &train, 32).unwrap();
        let regenerated = generate_all_tracks(
            &out.stage1.model,
            &train,
            32,
            &RefineConfig::default(),
            TrackMode::Refined,
        )
        .unwrap();
        assert_eq!(reloaded, regenerated);
    }
}

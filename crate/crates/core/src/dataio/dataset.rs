use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use super::format::{read_features, read_gt};
use crate::diffcore::Matrix;
use crate::error::{Error, FormatError, Result};

/// One video: snippet embeddings plus its weak (video-level) labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    /// `n_raw × d`
    pub features: Matrix<f32>,
    /// Category ids present in the video; `{0}` means normal-only.
    pub video_labels: BTreeSet<u32>,
    /// Per-snippet category ids, used for evaluation only.
    pub gt_frames: Option<Vec<u32>>,
}

impl FeatureSequence {
    pub fn n_raw(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn is_abnormal(&self) -> bool {
        self.video_labels.iter().any(|&l| l != 0)
    }

    /// Abnormal category ids (label set without 0).
    pub fn abnormal_labels(&self) -> impl Iterator<Item = u32> + '_ {
        self.video_labels.iter().copied().filter(|&l| l != 0)
    }

    pub fn validate(&self, num_categories: usize) -> Result<()> {
        let id = &self.video_id;
        if !self.features.is_finite() {
            return Err(Error::Validation(format!(
                "{id}: non-finite feature entries"
            )));
        }
        if self.video_labels.is_empty() {
            return Err(Error::Validation(format!("{id}: empty label set")));
        }
        if let Some(&bad) = self
            .video_labels
            .iter()
            .find(|&&l| l as usize >= num_categories)
        {
            return Err(Error::Validation(format!(
                "{id}: label id {bad} out of range for {num_categories} categories"
            )));
        }
        if let Some(gt) = &self.gt_frames {
            if gt.len() != self.n_raw() {
                return Err(Error::Validation(format!(
                    "{id}: {} gt entries for {} snippets",
                    gt.len(),
                    self.n_raw()
                )));
            }
            if let Some(&bad) = gt.iter().find(|&&g| g as usize >= num_categories) {
                return Err(Error::Validation(format!(
                    "{id}: gt category {bad} out of range"
                )));
            }
            if !self.is_abnormal() && gt.iter().any(|&g| g != 0) {
                return Err(Error::Validation(format!(
                    "{id}: normal-only video has abnormal gt frames"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub feature_path: PathBuf,
    pub labels: Vec<u32>,
    pub gt_path: Option<PathBuf>,
}

/// Dataset index. Serialized as UTF-8 TSV (`video_id`, `feature_path`,
/// comma-separated label ids, `gt_path` or `-`) preceded by two `#` metadata
/// lines carrying `feature_dim` and `num_categories`. Relative paths resolve
/// against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub feature_dim: usize,
    pub num_categories: usize,
}

impl DatasetManifest {
    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "# feature_dim={}\n# num_categories={}\n",
            self.feature_dim, self.num_categories
        );
        for e in &self.entries {
            let labels: Vec<String> = e.labels.iter().map(u32::to_string).collect();
            let gt = e
                .gt_path
                .as_ref()
                .map_or_else(|| "-".to_string(), |p| p.display().to_string());
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.video_id,
                e.feature_path.display(),
                labels.join(","),
                gt
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut feature_dim = None;
        let mut num_categories = None;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.split_once('=') {
                    let v: usize = v
                        .trim()
                        .parse()
                        .map_err(|e| FormatError::Malformed(format!("line {}: {e}", lineno + 1)))?;
                    match k.trim() {
                        "feature_dim" => feature_dim = Some(v),
                        "num_categories" => num_categories = Some(v),
                        _ => {}
                    }
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(FormatError::Malformed(format!(
                    "line {}: expected 4 columns, found {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            let labels = cols[2]
                .split(',')
                .map(|s| s.trim().parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| FormatError::Malformed(format!("line {}: labels: {e}", lineno + 1)))?;
            entries.push(ManifestEntry {
                video_id: cols[0].to_string(),
                feature_path: PathBuf::from(cols[1]),
                labels,
                gt_path: (cols[3] != "-").then(|| PathBuf::from(cols[3])),
            });
        }
        let num_categories = num_categories
            .ok_or_else(|| FormatError::Malformed("missing `# num_categories=` line".into()))?;
        let feature_dim = feature_dim
            .ok_or_else(|| FormatError::Malformed("missing `# feature_dim=` line".into()))?;
        Ok(Self {
            entries,
            feature_dim,
            num_categories,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::format(path, e))
    }
}

/// Loaded dataset in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub videos: Vec<FeatureSequence>,
    pub feature_dim: usize,
    pub num_categories: usize,
}

/// Loads every entry of a manifest, validating ids, dimensions and labels.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    if manifest.num_categories < 2 {
        return Err(Error::Validation(format!(
            "num_categories must be at least 2, got {}",
            manifest.num_categories
        )));
    }
    let mut seen = HashSet::new();
    let mut videos = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        if !seen.insert(e.video_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate video_id {}",
                e.video_id
            )));
        }
        let features = read_features(&resolve(&e.feature_path))?;
        if features.cols() != manifest.feature_dim {
            return Err(Error::Validation(format!(
                "{}: dimension mismatch, feature dim {} but dataset dim {}",
                e.video_id,
                features.cols(),
                manifest.feature_dim
            )));
        }
        let gt_frames = e
            .gt_path
            .as_ref()
            .map(|p| read_gt(&resolve(p)))
            .transpose()?;
        let seq = FeatureSequence {
            video_id: e.video_id.clone(),
            features,
            video_labels: e.labels.iter().copied().collect(),
            gt_frames,
        };
        seq.validate(manifest.num_categories)?;
        videos.push(seq);
    }
    Ok(Dataset {
        videos,
        feature_dim: manifest.feature_dim,
        num_categories: manifest.num_categories,
    })
}

/// Category-name table (`id<TAB>name`), used for labeling reports only.
pub fn read_category_names(path: &Path) -> Result<Vec<(u32, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, name) = l.split_once('\t').ok_or_else(|| {
                Error::format(path, FormatError::Malformed(format!("bad row {l:?}")))
            })?;
            let id = id.trim().parse::<u32>().map_err(|e| {
                Error::format(path, FormatError::Malformed(format!("bad id {id:?}: {e}")))
            })?;
            Ok((id, name.trim().to_string()))
        })
        .collect()
}

pub fn write_category_names(path: &Path, names: &[(u32, String)]) -> Result<()> {
    let mut s = String::new();
    for (id, name) in names {
        s.push_str(&format!("{id}\t{name}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

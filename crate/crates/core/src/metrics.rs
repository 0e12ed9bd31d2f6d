//! Snippet-level AP/AUC and segment-level mAP@IoU.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_IOUS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const DEFAULT_SEGMENT_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Step-interpolated average precision over a ranking. `hits[i]` marks item
/// `i` as a true positive; `num_positives` may exceed the hit count (missed
/// ground truth). Items with equal score form one block evaluated at the
/// block end.
pub fn ap_from_ranked(scores: &[f64], hits: &[bool], num_positives: usize) -> Result<f64> {
    if num_positives == 0 {
        return Err(Error::UndefinedMetric(
            "average precision with no positives".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ap = 0.0;
    let mut seen = 0usize;
    let mut tp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut block_tp = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            block_tp += usize::from(hits[order[j]]);
            j += 1;
        }
        seen += j - i;
        tp += block_tp;
        if block_tp > 0 {
            ap += (block_tp as f64 / num_positives as f64) * (tp as f64 / seen as f64);
        }
        i = j;
    }
    Ok(ap)
}

pub fn frame_ap(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    ap_from_ranked(scores, labels, positives)
}

/// Mann–Whitney AUC: probability a positive outranks a negative, ties
/// counting one half.
pub fn frame_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // for each tie block: wins against every negative strictly below, half
    // credit for negatives inside the block
    let mut wins = 0.0f64;
    let mut negatives_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let block_pos = order[i..j].iter().filter(|&&k| labels[k]).count();
        let block_neg = (j - i) - block_pos;
        wins += block_pos as f64 * (negatives_below as f64 + 0.5 * block_neg as f64);
        negatives_below += block_neg;
        i = j;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "metric",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            op: "metric scores".into(),
        });
    }
    Ok(())
}

/// Half-open snippet interval `[start, end)` with an abnormal category.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub category: u32,
    pub confidence: f64,
}

pub fn temporal_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Candidate segments: for each threshold, every maximal run with
/// `S_ab > threshold`, labelled with the abnormal category of highest mean
/// `S_cls` over the run and scored by the run's mean `S_ab`. Identical
/// (span, category) candidates keep the highest confidence.
pub fn extract_segments(
    s_ab: &[f64],
    s_cls: &Matrix<f64>,
    thresholds: &[f64],
) -> Result<Vec<Segment>> {
    if s_cls.rows() != s_ab.len() || s_cls.cols() < 2 {
        return Err(Error::shape(
            "extract_segments",
            format!("S_ab length {} vs S_cls {:?}", s_ab.len(), s_cls.shape()),
        ));
    }
    if thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::Config(
            "segment thresholds must lie in (0, 1)".into(),
        ));
    }
    let mut best: BTreeMap<(usize, usize, u32), f64> = BTreeMap::new();
    for &thr in thresholds {
        let mask: Vec<bool> = s_ab.iter().map(|&s| s > thr).collect();
        for (start, end) in crate::car::runs(&mask) {
            let len = (end - start) as f64;
            let mut category = 1u32;
            let mut best_mean = f64::NEG_INFINITY;
            for m in 1..s_cls.cols() {
                let mean = (start..end).map(|t| s_cls.get(t, m)).sum::<f64>() / len;
                if mean > best_mean {
                    best_mean = mean;
                    category = m as u32;
                }
            }
            let confidence = s_ab[start..end].iter().sum::<f64>() / len;
            let slot = best.entry((start, end, category)).or_insert(confidence);
            *slot = slot.max(confidence);
        }
    }
    Ok(best
        .into_iter()
        .map(|((start, end, category), confidence)| Segment {
            start,
            end,
            category,
            confidence,
        })
        .collect())
}

/// Ground-truth segments: maximal runs of one nonzero category.
pub fn gt_segments(gt_frames: &[u32]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < gt_frames.len() {
        let c = gt_frames[i];
        let mut j = i;
        while j < gt_frames.len() && gt_frames[j] == c {
            j += 1;
        }
        if c != 0 {
            out.push(Segment {
                start: i,
                end: j,
                category: c,
                confidence: 1.0,
            });
        }
        i = j;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    /// `(iou, mAP)` in the order requested.
    pub per_iou: Vec<(f64, f64)>,
    /// `(category, iou, AP)`.
    pub per_category: Vec<(u32, f64, f64)>,
}

impl MapResult {
    pub fn average(&self) -> f64 {
        self.per_iou.iter().map(|(_, v)| v).sum::<f64>() / self.per_iou.len() as f64
    }
}

fn category_ap(
    predictions: &[Vec<Segment>],
    ground_truth: &[Vec<Segment>],
    category: u32,
    iou: f64,
) -> Result<f64> {
    let mut preds: Vec<(usize, Segment)> = predictions
        .iter()
        .enumerate()
        .flat_map(|(v, segs)| {
            segs.iter()
                .filter(|s| s.category == category)
                .map(move |s| (v, *s))
        })
        .collect();
    preds.sort_by(|a, b| {
        b.1.confidence
            .partial_cmp(&a.1.confidence)
            .unwrap_or(Ordering::Equal)
    });
    let mut used: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
    let num_gt = ground_truth
        .iter()
        .flatten()
        .filter(|g| g.category == category)
        .count();
    let mut hits = Vec::with_capacity(preds.len());
    for (v, p) in &preds {
        let mut best: Option<(usize, f64)> = None;
        for (k, g) in ground_truth[*v].iter().enumerate() {
            if g.category != category || used[*v][k] {
                continue;
            }
            let o = temporal_iou((p.start, p.end), (g.start, g.end));
            if o >= iou && best.is_none_or(|(_, b)| o > b) {
                best = Some((k, o));
            }
        }
        if let Some((k, _)) = best {
            used[*v][k] = true;
        }
        hits.push(best.is_some());
    }
    let scores: Vec<f64> = preds.iter().map(|(_, p)| p.confidence).collect();
    ap_from_ranked(&scores, &hits, num_gt)
}

/// Mean over ground-truth categories of the per-category AP, for each IoU
/// threshold. `predictions[v]` and `ground_truth[v]` belong to video `v`.
pub fn map_at_iou(
    predictions: &[Vec<Segment>],
    ground_truth: &[Vec<Segment>],
    ious: &[f64],
) -> Result<MapResult> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::shape(
            "map_at_iou",
            format!(
                "{} prediction lists vs {} gt lists",
                predictions.len(),
                ground_truth.len()
            ),
        ));
    }
    let categories: Vec<u32> = ground_truth
        .iter()
        .flatten()
        .map(|g| g.category)
        .filter(|&c| c != 0)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if categories.is_empty() {
        return Err(Error::UndefinedMetric("no ground-truth segments".into()));
    }
    let mut per_iou = Vec::with_capacity(ious.len());
    let mut per_category = Vec::new();
    for &iou in ious {
        let mut total = 0.0;
        for &c in &categories {
            let ap = category_ap(predictions, ground_truth, c, iou)?;
            per_category.push((c, iou, ap));
            total += ap;
        }
        per_iou.push((iou, total / categories.len() as f64));
    }
    Ok(MapResult {
        per_iou,
        per_category,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub frame_ap: f64,
    pub frame_auc: f64,
    pub map: MapResult,
    pub segment_thresholds: Vec<f64>,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn map_avg(&self) -> f64 {
        self.map.average()
    }

    /// `metric<TAB>value` rows followed by per-category AP rows.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        s.push_str(&format!("frame_ap\t{}\n", self.frame_ap));
        s.push_str(&format!("frame_auc\t{}\n", self.frame_auc));
        for (iou, v) in &self.map.per_iou {
            s.push_str(&format!("mAP@{iou}\t{v}\n"));
        }
        s.push_str(&format!("mAP_avg\t{}\n", self.map_avg()));
        let thresholds: Vec<String> = self.segment_thresholds.iter().map(f64::to_string).collect();
        s.push_str(&format!("segment_thresholds\t{}\n", thresholds.join(",")));
        s.push_str(&format!("config_fingerprint\t{}\n", self.fingerprint));
        for (c, iou, ap) in &self.map.per_category {
            s.push_str(&format!("category_{c}_AP@{iou}\t{ap}\n"));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

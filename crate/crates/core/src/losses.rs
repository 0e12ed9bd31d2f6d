//! Video-level MIL losses and the snippet-level soft focal loss.

use crate::diffcore::{top_k_indices, Graph, Matrix, Real, Var};
use crate::error::{Error, Result};
use crate::pyramid::ScorePyramid;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// `K_i = max(1, floor(t_i / topk_divisor))`.
    pub topk_divisor: usize,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// Lower clamp for every log argument.
    pub p_min: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            topk_divisor: 16,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            p_min: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topk_divisor == 0 {
            return Err(Error::Config("topk_divisor must be positive".into()));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(Error::Config("focal_gamma must be >= 0".into()));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::Config("focal_alpha must lie in (0, 1)".into()));
        }
        if !(self.p_min > 0.0 && self.p_min < 0.5) {
            return Err(Error::Config("p_min must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn top_k(&self, len: usize) -> usize {
        (len / self.topk_divisor).max(1)
    }
}

/// Mean of the `k` largest scores (ties toward the lower index).
pub fn topk_mean(scores: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > scores.len() {
        return Err(Error::Validation(format!(
            "top-k with k={k} over {} scores",
            scores.len()
        )));
    }
    let idx = top_k_indices(scores, k);
    Ok(idx.iter().map(|&i| scores[i]).sum::<f64>() / k as f64)
}

fn clamped_log<T: Real>(g: &mut Graph<T>, x: Var, p_min: f64) -> Var {
    let c = g.clamp(x, T::lit(p_min), T::one());
    g.log(c)
}

/// Binary cross-entropy of the top-K mean snippet probability against the
/// video label, averaged over levels.
pub fn bce_video_loss<T: Real>(
    g: &mut Graph<T>,
    binary_logits: &[Var],
    abnormal: bool,
    cfg: &LossConfig,
) -> Result<Var> {
    let mut per_level = Vec::with_capacity(binary_logits.len());
    for &logits in binary_logits {
        let probs = g.sigmoid(logits);
        let k = cfg.top_k(g.shape(logits).0);
        let video = g.topk_mean_cols(probs, k)?;
        let term = if abnormal {
            clamped_log(g, video, cfg.p_min)
        } else {
            let inv = g.one_minus(video);
            clamped_log(g, inv, cfg.p_min)
        };
        per_level.push(g.scale(term, -T::one()));
    }
    g.mean_of(&per_level)
}

/// Cross-entropy of the softmax over top-K-pooled category logits, averaged
/// over the positive categories and then over levels.
pub fn mil_align_loss<T: Real>(
    g: &mut Graph<T>,
    category_logits: &[Var],
    positives: &[u32],
    cfg: &LossConfig,
) -> Result<Var> {
    if positives.is_empty() {
        return Err(Error::Validation(
            "mil_align_loss needs a nonempty label set".into(),
        ));
    }
    let mut per_level = Vec::with_capacity(category_logits.len());
    for &logits in category_logits {
        let (t, m) = g.shape(logits);
        let mut mask = Matrix::zeros(1, m);
        let share = T::one() / T::from_usize(positives.len()).expect("len");
        for &p in positives {
            let p = p as usize;
            if p >= m {
                return Err(Error::Validation(format!(
                    "label {p} out of range for {m} categories"
                )));
            }
            mask.set(0, p, share);
        }
        let video = g.topk_mean_cols(logits, cfg.top_k(t))?;
        let log_probs = g.log_softmax_rows(video);
        let mask = g.input(mask);
        let picked = g.mul(log_probs, mask)?;
        let total = g.sum(picked);
        per_level.push(g.scale(total, -T::one()));
    }
    g.mean_of(&per_level)
}

/// Soft-target focal loss over `n × 1` probabilities:
/// `mean(-[q α (1-p)^γ log p + (1-q)(1-α) p^γ log(1-p)])`, with `p` clamped to
/// `[p_min, 1 - p_min]`.
pub fn focal_soft_loss<T: Real>(
    g: &mut Graph<T>,
    pred: Var,
    target: &[f64],
    cfg: &LossConfig,
) -> Result<Var> {
    let (n, c) = g.shape(pred);
    if c != 1 || n != target.len() {
        return Err(Error::shape(
            "focal_soft_loss",
            format!("prediction {n}x{c} vs target length {}", target.len()),
        ));
    }
    if target.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(Error::Validation("focal target outside [0, 1]".into()));
    }
    let (alpha, gamma) = (cfg.focal_alpha, T::lit(cfg.focal_gamma));
    let pos_w = Matrix::column(target.iter().map(|&q| T::lit(q * alpha)).collect());
    let neg_w = Matrix::column(
        target
            .iter()
            .map(|&q| T::lit((1.0 - q) * (1.0 - alpha)))
            .collect(),
    );
    let p = g.clamp(pred, T::lit(cfg.p_min), T::lit(1.0 - cfg.p_min));
    let q = g.one_minus(p);
    let log_p = g.log(p);
    let log_q = g.log(q);
    let q_pow = g.pow(q, gamma);
    let p_pow = g.pow(p, gamma);
    let pos = g.mul(q_pow, log_p)?;
    let neg = g.mul(p_pow, log_q)?;
    let pos_w = g.input(pos_w);
    let neg_w = g.input(neg_w);
    let pos = g.mul(pos, pos_w)?;
    let neg = g.mul(neg, neg_w)?;
    let both = g.add(pos, neg)?;
    let mean = g.mean(both);
    Ok(g.scale(mean, -T::one()))
}

/// Focal loss of the binary branch against a track: each level's snippet
/// probabilities are upsampled to the track length, scored, and the level
/// losses averaged.
pub fn binary_focal_loss<T: Real>(
    g: &mut Graph<T>,
    binary_logits: &[Var],
    target: &[f64],
    cfg: &LossConfig,
) -> Result<Var> {
    let mut per_level = Vec::with_capacity(binary_logits.len());
    for &logits in binary_logits {
        let probs = g.sigmoid(logits);
        let up = g.upsample(probs, target.len());
        per_level.push(focal_soft_loss(g, up, target, cfg)?);
    }
    g.mean_of(&per_level)
}

/// Focal loss of the category branch's abnormal confidence
/// `1 - softmax(logits)[normal]`, per level as in [`binary_focal_loss`].
pub fn category_focal_loss<T: Real>(
    g: &mut Graph<T>,
    category_logits: &[Var],
    target: &[f64],
    cfg: &LossConfig,
) -> Result<Var> {
    let mut per_level = Vec::with_capacity(category_logits.len());
    for &logits in category_logits {
        let probs = g.softmax_rows(logits);
        let normal = g.select_col(probs, 0)?;
        let abnormal = g.one_minus(normal);
        let up = g.upsample(abnormal, target.len());
        per_level.push(focal_soft_loss(g, up, target, cfg)?);
    }
    g.mean_of(&per_level)
}

/// Unweighted sum; stage 1 passes `focal = None`.
pub fn total_loss(bce: f64, nce: f64, focal: Option<f64>) -> Result<f64> {
    let terms = [Some(bce), Some(nce), focal];
    if terms.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "total_loss".into(),
        });
    }
    Ok(terms.iter().flatten().sum())
}

/// Evaluates [`bce_video_loss`] on materialized logits.
pub fn bce_video_loss_value<T: Real>(
    logits: &ScorePyramid<T>,
    abnormal: bool,
    cfg: &LossConfig,
) -> Result<T> {
    let mut g = Graph::new();
    let vars: Vec<Var> = logits.levels.iter().map(|l| g.input(l.clone())).collect();
    let out = bce_video_loss(&mut g, &vars, abnormal, cfg)?;
    g.check_finite()?;
    Ok(g.scalar(out))
}

/// Evaluates [`mil_align_loss`] on materialized logits.
pub fn mil_align_loss_value<T: Real>(
    logits: &ScorePyramid<T>,
    positives: &[u32],
    cfg: &LossConfig,
) -> Result<T> {
    let mut g = Graph::new();
    let vars: Vec<Var> = logits.levels.iter().map(|l| g.input(l.clone())).collect();
    let out = mil_align_loss(&mut g, &vars, positives, cfg)?;
    g.check_finite()?;
    Ok(g.scalar(out))
}

/// Evaluates [`focal_soft_loss`] on a probability vector.
pub fn focal_soft_loss_value(pred: &[f64], target: &[f64], cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let p = g.input(Matrix::column(pred.to_vec()));
    let out = focal_soft_loss(&mut g, p, target, cfg)?;
    g.check_finite()?;
    Ok(g.scalar(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn topk_cases() {
        let s = [0.9, 0.1, 0.8];
        assert_eq!(topk_mean(&s, 1).unwrap(), 0.9);
        assert!((topk_mean(&s, 3).unwrap() - 0.6).abs() < 1e-15);
        assert!((topk_mean(&s, 2).unwrap() - 0.85).abs() < 1e-15);
        assert!(topk_mean(&s, 0).is_err());
        assert!(topk_mean(&s, 4).is_err());
    }

    #[test]
    fn k_rule() {
        let c = cfg();
        let ks: Vec<usize> = [192, 96, 48, 24, 12, 6]
            .iter()
            .map(|&t| c.top_k(t))
            .collect();
        assert_eq!(ks, vec![12, 6, 3, 1, 1, 1]);
    }

    #[test]
    fn bce_normal_at_half() {
        let pyr =
            ScorePyramid::<f64>::new(vec![Matrix::zeros(32, 1), Matrix::zeros(16, 1)]).unwrap();
        let l = bce_video_loss_value(&pyr, false, &cfg()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_saturated_abnormal() {
        let pyr = ScorePyramid::new(vec![Matrix::filled(16, 1, 60.0f64)]).unwrap();
        let l = bce_video_loss_value(&pyr, true, &cfg()).unwrap();
        assert!(l.abs() < 1e-12);
        // fully wrong prediction hits the clamp instead of infinity
        let l = bce_video_loss_value(&pyr, false, &cfg()).unwrap();
        assert!((l - (-(1e-7f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn mil_uniform_is_log_m() {
        let pyr = ScorePyramid::<f64>::new(vec![Matrix::zeros(16, 7)]).unwrap();
        let l = mil_align_loss_value(&pyr, &[3], &cfg()).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
        let l = mil_align_loss_value(&pyr, &[2, 5], &cfg()).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
        let mut peaked = Matrix::zeros(16, 7);
        for r in 0..16 {
            peaked.set(r, 3, 50.0);
        }
        let pyr = ScorePyramid::new(vec![peaked]).unwrap();
        assert!(mil_align_loss_value(&pyr, &[3], &cfg()).unwrap() < 1e-20);
        assert!(mil_align_loss_value(&pyr, &[], &cfg()).is_err());
    }

    #[test]
    fn focal_examples() {
        let bce_half = LossConfig {
            focal_gamma: 0.0,
            focal_alpha: 0.5,
            ..cfg()
        };
        let (p, q): ([f64; 3], [f64; 3]) = ([0.3, 0.8, 0.55], [0.0, 1.0, 0.4]);
        let soft_bce: f64 = p
            .iter()
            .zip(q)
            .map(|(p, q)| -(q * p.ln() + (1.0 - q) * (1.0 - p).ln()))
            .sum::<f64>()
            / 3.0;
        let l = focal_soft_loss_value(&p, &q, &bce_half).unwrap();
        assert!((l - 0.5 * soft_bce).abs() < 1e-12);

        let l = focal_soft_loss_value(&[0.5], &[1.0], &cfg()).unwrap();
        assert!((l - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l - 0.04332).abs() < 1e-5);

        let l = focal_soft_loss_value(&[0.0], &[0.0], &cfg()).unwrap();
        assert!((0.0..1e-7 * 1e-7 * 20.0).contains(&l));
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(1.0, 2.0, Some(3.0)).unwrap(), 6.0);
        assert_eq!(total_loss(1.0, 2.0, None).unwrap(), 3.0);
        assert_eq!(total_loss(0.0, 0.0, Some(0.0)).unwrap(), 0.0);
        assert!(total_loss(f64::NAN, 0.0, None).is_err());
    }
}

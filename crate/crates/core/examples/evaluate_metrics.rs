//! Frame-level and segment-level metrics on small hand-made score tracks.

use cross_pseudo_vad::diffcore::Matrix;
use cross_pseudo_vad::metrics::{
    extract_segments, frame_ap, frame_auc, gt_segments, map_at_iou, temporal_iou, DEFAULT_IOUS,
    DEFAULT_SEGMENT_THRESHOLDS,
};

fn main() -> anyhow::Result<()> {
    let scores = [0.9, 0.8, 0.3, 0.1];
    let labels = [true, false, true, false];
    println!(
        "AP {:.4}  AUC {:.4}",
        frame_ap(&scores, &labels)?,
        frame_auc(&scores, &labels)?
    );

    let gt = [0, 0, 2, 2, 2, 2, 0, 0, 0, 3, 3, 3, 0, 0];
    let s_ab = [
        0.1, 0.2, 0.7, 0.9, 0.8, 0.6, 0.2, 0.1, 0.4, 0.8, 0.9, 0.3, 0.1, 0.1,
    ];
    let m = 4;
    let mut cls = Matrix::zeros(gt.len(), m);
    for (t, &c) in gt.iter().enumerate() {
        let hot = if c == 0 { 1 } else { c as usize };
        for k in 0..m {
            cls.set(t, k, if k == hot { 0.7 } else { 0.1 });
        }
    }

    let truth = gt_segments(&gt);
    let preds = extract_segments(&s_ab, &cls, &DEFAULT_SEGMENT_THRESHOLDS)?;
    println!("\nground truth");
    for s in &truth {
        println!("  [{:>2}, {:>2}) category {}", s.start, s.end, s.category);
    }
    println!("predictions");
    for s in &preds {
        let best = truth
            .iter()
            .map(|g| temporal_iou((s.start, s.end), (g.start, g.end)))
            .fold(0.0, f64::max);
        println!(
            "  [{:>2}, {:>2}) category {} conf {:.3} best IoU {best:.2}",
            s.start, s.end, s.category, s.confidence
        );
    }

    let result = map_at_iou(&[preds], &[truth], &DEFAULT_IOUS)?;
    for (iou, v) in &result.per_iou {
        println!("mAP@{iou:.1} {v:.4}");
    }
    println!("average {:.4}", result.average());
    Ok(())
}

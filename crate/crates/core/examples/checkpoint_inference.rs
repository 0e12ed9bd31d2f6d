//! Saves a freshly initialized model, reloads it and scores one synthetic
//! video with the level-averaged inference path.

use cross_pseudo_vad::dataio::{synthesize, SynthConfig};
use cross_pseudo_vad::diffcore::{load_checkpoint, save_checkpoint};
use cross_pseudo_vad::model::{DualBranchModel, ModelConfig};
use cross_pseudo_vad::pipeline::{aggregate_inference, resample_labels};

fn main() -> anyhow::Result<()> {
    let synth = SynthConfig {
        num_videos: 4,
        num_test_videos: 0,
        ..SynthConfig::default()
    };
    let (videos, _) = synthesize(&synth)?;
    let video = videos
        .iter()
        .find(|v| v.is_abnormal())
        .expect("an abnormal video");

    let config = ModelConfig {
        input_dim: synth.feature_dim,
        width: 32,
        levels: 6,
        num_categories: synth.num_categories,
    };
    let model = DualBranchModel::<f32>::init(config, 1);
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &model.params)?;
    let restored = DualBranchModel::from_params(load_checkpoint(&path)?)?;
    println!("checkpoint {} bytes", std::fs::metadata(&path)?.len());

    let n = 192;
    let a = aggregate_inference(&model, video, n)?;
    let b = aggregate_inference(&restored, video, n)?;
    assert_eq!(a, b);

    let gt = resample_labels(video.gt_frames.as_ref().unwrap(), n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.s_ab[j].total_cmp(&a.s_ab[i]));
    println!(
        "{} ({} raw snippets), top untrained scores:",
        video.video_id,
        video.n_raw()
    );
    for &t in &order[..8] {
        let row = a.s_cls.row(t);
        let cat = (0..row.len())
            .max_by(|&i, &j| row[i].total_cmp(&row[j]))
            .unwrap();
        println!(
            "  t={t:>3} S_ab {:.4} argmax class {cat} gt {}",
            a.s_ab[t], gt[t]
        );
    }
    Ok(())
}

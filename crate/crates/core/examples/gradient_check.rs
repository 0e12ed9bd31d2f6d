//! Finite-difference check of the full stage-1 objective on a tiny model.

use cross_pseudo_vad::diffcore::{grad_check, Matrix};
use cross_pseudo_vad::losses::{bce_video_loss, mil_align_loss, LossConfig};
use cross_pseudo_vad::model::{DualBranchModel, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let config = ModelConfig {
        input_dim: 3,
        width: 4,
        levels: 3,
        num_categories: 4,
    };
    let model = DualBranchModel::<f64>::init(config, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let features = Matrix::from_vec(8, 3, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect());
    let loss_cfg = LossConfig::default();
    println!("{} parameters", model.params.flatten().len());

    // Top-K pooling is piecewise, so a coarse step can cross a selection switch.
    for h in [1e-4, 1e-5, 1e-6, 1e-7] {
        let worst = grad_check(&model.params, h, |g, p| {
            let x = g.input(features.clone());
            let out = model.forward_with(g, p, x)?;
            let bce = bce_video_loss(g, &out.binary, true, &loss_cfg)?;
            let nce = mil_align_loss(g, &out.category, &[2], &loss_cfg)?;
            g.add(bce, nce)
        })?;
        println!("h = {h:e}: worst relative error {worst:.2e}");
    }
    Ok(())
}

//! Full two-stage run on the synthetic benchmark, one run per seed.
//!
//! ```text
//! cargo run --release --example train_two_stage -- [lr] [batch] [epochs]
//! ```

use std::time::Instant;

use cross_pseudo_vad::dataio::{synthesize, Dataset, SynthConfig};
use cross_pseudo_vad::pipeline::{run_pipeline, TrainConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let synth = SynthConfig::default();
    let (train, test) = synthesize(&synth)?;
    let wrap = |videos| Dataset {
        videos,
        feature_dim: synth.feature_dim,
        num_categories: synth.num_categories,
    };
    let (train, test) = (wrap(train), wrap(test));
    let mut cfg = TrainConfig::default();
    if let Some(lr) = args.first() {
        cfg.lr = lr.parse()?;
    }
    if let Some(b) = args.get(1) {
        cfg.batch_size = b.parse()?;
    }
    if let Some(e) = args.get(2) {
        cfg.epochs = e.parse()?;
    }
    let dir = tempfile::tempdir()?;
    for seed in [1, 2, 3] {
        let start = Instant::now();
        let cfg = TrainConfig { seed, ..cfg };
        let out = run_pipeline(&train, &test, &cfg, &dir.path().join(format!("seed{seed}")))?;
        let first = out.stage1.history.first().unwrap().total;
        let last = out.stage1.history.last().unwrap().total;
        println!(
            "seed {seed}: stage1 AP {:.4} AUC {:.4} mAP {:.4} | stage2 AP {:.4} AUC {:.4} mAP {:.4} | loss {first:.3}->{last:.3} | {:.1}s",
            out.stage1_report.frame_ap,
            out.stage1_report.frame_auc,
            out.stage1_report.map_avg(),
            out.report.frame_ap,
            out.report.frame_auc,
            out.report.map_avg(),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

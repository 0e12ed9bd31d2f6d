//! Supervision-direction and CAR ablation on the synthetic benchmark.
//!
//! ```text
//! cargo run --release --example ablation -- [lr]
//! ```

use cross_pseudo_vad::ablation::{run_ablation, AblationSpec};
use cross_pseudo_vad::dataio::{synthesize, Dataset, SynthConfig};
use cross_pseudo_vad::pipeline::TrainConfig;

fn main() -> anyhow::Result<()> {
    let synth = SynthConfig::default();
    let (train, test) = synthesize(&synth)?;
    let wrap = |videos| Dataset {
        videos,
        feature_dim: synth.feature_dim,
        num_categories: synth.num_categories,
    };
    let lr = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(5e-3);
    let base = TrainConfig {
        lr,
        ..TrainConfig::default()
    };
    let table = run_ablation(&AblationSpec::default(), &wrap(train), &wrap(test), &base)?;
    print!("{}", table.to_tsv());
    for (seed, ap) in &table.stage1_ap {
        println!("stage 1 seed {seed}: AP {ap:.4}");
    }
    for (d, car) in AblationSpec::default().configurations() {
        let mean = table.mean_ap(d, car).unwrap_or(f64::NAN);
        let car = car.map_or("-", |c| if c { "CAR" } else { "no CAR" });
        println!("{d:>5} {car:>6}: mean AP {mean:.4}");
    }
    Ok(())
}

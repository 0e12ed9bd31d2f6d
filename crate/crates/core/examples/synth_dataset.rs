//! Writes the seeded synthetic benchmark to disk, reloads it and prints a
//! per-split summary.
//!
//! ```text
//! cargo run --example synth_dataset -- [out_dir] [seed]
//! ```

use std::path::PathBuf;

use cross_pseudo_vad::dataio::{generate_synthetic_dataset, load_dataset, Dataset, SynthConfig};

fn summarize(name: &str, ds: &Dataset) {
    let abnormal = ds.videos.iter().filter(|v| v.is_abnormal()).count();
    let (mut frames, mut positive) = (0usize, 0usize);
    for v in &ds.videos {
        let gt = v.gt_frames.as_deref().unwrap_or(&[]);
        frames += gt.len();
        positive += gt.iter().filter(|&&c| c != 0).count();
    }
    println!(
        "{name}: {} videos ({abnormal} abnormal), d={}, M={}, {frames} snippets, {:.1}% abnormal snippets",
        ds.videos.len(),
        ds.feature_dim,
        ds.num_categories,
        100.0 * positive as f64 / frames.max(1) as f64
    );
}

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let tmp = tempfile::tempdir()?;
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| tmp.path().join("synth"));
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let written = generate_synthetic_dataset(&cfg, &out)?;
    println!("wrote dataset to {}", out.display());

    let train = load_dataset(&out.join("manifest.tsv"))?;
    assert_eq!(train.videos, written.train);
    summarize("train", &train);
    if written.test_manifest.is_some() {
        summarize("test", &load_dataset(&out.join("test_manifest.tsv"))?);
    }

    if let Some(v) = train.videos.iter().find(|v| v.is_abnormal()) {
        let labels: Vec<u32> = v.abnormal_labels().collect();
        let track: String = v
            .gt_frames
            .as_ref()
            .unwrap()
            .iter()
            .map(|&c| {
                if c == 0 {
                    '.'
                } else {
                    char::from_digit(c, 10).unwrap_or('#')
                }
            })
            .collect();
        println!("\n{} labels {labels:?}, {} snippets", v.video_id, v.n_raw());
        for chunk in track.as_bytes().chunks(80) {
            println!("  {}", std::str::from_utf8(chunk)?);
        }
    }
    Ok(())
}

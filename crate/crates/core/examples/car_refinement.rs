//! Consistency-aware refinement on a hand-built multi-scale track.
//!
//! Six scales agree on one abnormal event, one scale hallucinates a spike,
//! and the agreeing scales dip briefly inside the event. Scale fusion should
//! suppress the spike and the gap rule should bridge the dip.

use cross_pseudo_vad::car::{
    aggregate_scales, mad_bandwidth, mean_scales, rbf_weights, temporal_refine, Branch,
    RefineConfig,
};
use cross_pseudo_vad::diffcore::Matrix;

fn bar(values: &[f64]) -> String {
    const RAMP: [char; 5] = [' ', '.', ':', '+', '#'];
    values
        .iter()
        .map(|&v| RAMP[((v.clamp(0.0, 1.0) * 4.0).round()) as usize])
        .collect()
}

fn main() {
    let n = 72;
    let levels = 6;
    let mut data = Vec::with_capacity(levels * n);
    for l in 0..levels {
        for t in 0..n {
            let event = (20..44).contains(&t) && !(30..32).contains(&t);
            let wobble = 0.05 * ((t * 7 + l * 3) % 5) as f64;
            let mut v = if event { 0.8 - wobble } else { 0.1 + wobble };
            if l == 5 && (55..60).contains(&t) {
                v = 0.95;
            }
            data.push(v);
        }
    }
    let tracks = Matrix::from_vec(levels, n, data);
    let cfg = RefineConfig::default();

    let column: Vec<f64> = (0..levels).map(|l| tracks.get(l, 57)).collect();
    let sigma = mad_bandwidth(&column, cfg.mad_scale, cfg.bandwidth_floor);
    println!("snippet 57 scale scores {column:.2?}");
    println!(
        "  bandwidth {sigma:.4}, weights {:.3?}",
        rbf_weights(&column, sigma)
    );

    let mean = mean_scales(&tracks);
    let fused = aggregate_scales(&tracks, &cfg);
    let track = temporal_refine(&fused, &cfg, Branch::Binary, "demo");
    println!("\nmean   |{}|", bar(&mean));
    println!("fused  |{}|", bar(&fused));
    println!("track  |{}|", bar(&track.values));
    println!("\nplateaus {:?}", track.plateaus());
}

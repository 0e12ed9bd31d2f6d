//! Acceptance criteria 1 to 9, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the verdict lines are always printed;
//! the process exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use cross_pseudo_vad::branches::{b_branch, c_branch, compose_prompt_embeddings_raw, BranchParams};
use cross_pseudo_vad::car::{
    mad_bandwidth, rbf_weights, refine_segments, temporal_refine, Branch, RefineConfig, TrackMode,
};
use cross_pseudo_vad::cli::main_with_args;
use cross_pseudo_vad::dataio::{synthesize, Dataset, SynthConfig};
use cross_pseudo_vad::diffcore::{grad_check, Graph, Matrix, ParamSet, Var};
use cross_pseudo_vad::losses::{
    bce_video_loss, binary_focal_loss, category_focal_loss, mil_align_loss, LossConfig,
};
use cross_pseudo_vad::metrics::{frame_ap, frame_auc, gt_segments, temporal_iou};
use cross_pseudo_vad::pipeline::{
    aggregate_logits, generate_all_tracks, resample_labels, run_pipeline, TrainConfig,
};
use cross_pseudo_vad::pyramid::{BlockInit, EncoderParams, ScorePyramid};

type Outcome = Result<String, String>;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn eq1_oracle(x: &[f64], sigma: f64) -> Vec<f64> {
    let l = x.len();
    let mut k = vec![vec![0.0; l]; l];
    let mut total = 0.0;
    for i in 0..l {
        for j in 0..l {
            if i != j {
                k[i][j] = (-(x[i] - x[j]) * (x[i] - x[j]) / (2.0 * sigma * sigma)).exp();
                total += k[i][j];
            }
        }
    }
    if total == 0.0 {
        return vec![1.0 / l as f64; l];
    }
    k.iter()
        .map(|row| row.iter().sum::<f64>() / total)
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for case in 0..10_000 {
        let l = rng.random_range(2..=8);
        let x: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
        let sigma = 10f64.powf(rng.random_range(-1.5..0.5));
        let w = rbf_weights(&x, sigma);
        let oracle = eq1_oracle(&x, sigma);
        for (a, b) in w.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
        check(
            w.iter().all(|&v| v >= 0.0),
            format!("case {case}: negative weight"),
        )?;
        check(
            (w.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
            format!("case {case}: weights sum to {}", w.iter().sum::<f64>()),
        )?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    check(secs < 5.0, format!("took {secs:.2}s"))?;
    Ok(format!("max deviation {worst:.1e}, {secs:.2}s"))
}

fn sorted_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn criterion_2() -> Outcome {
    let (c, floor) = (1.4826, 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for case in 0..10_000 {
        let l = rng.random_range(2..=12);
        let x: Vec<f64> = (0..l).map(|_| gauss(&mut rng)).collect();
        let med = sorted_median(x.clone());
        let mad = sorted_median(x.iter().map(|v| (v - med).abs()).collect());
        let oracle = (c * mad).max(floor);
        let got = mad_bandwidth(&x, c, floor);
        check(got == oracle, format!("case {case}: {got} vs {oracle}"))?;
    }
    for v in [0.0, 0.3, -7.5] {
        for l in 2..=8 {
            check(
                mad_bandwidth(&vec![v; l], c, floor) == floor,
                "constant vector not floored",
            )?;
        }
    }
    Ok("10000 exact matches; constants floored".into())
}

fn randomize(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    for p in params.iter_mut() {
        for v in p.values.iter_mut() {
            *v = scale * gauss(rng);
        }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
    Matrix::from_vec(r, c, (0..r * c).map(|_| gauss(rng)).collect())
}

/// Random linear readout `Σ_i sum(v_i ⊙ R_i)` turning a list of vars into a
/// scalar that exercises every output entry.
fn readout(
    g: &mut Graph<f64>,
    vars: &[Var],
    rng: &mut ChaCha8Rng,
) -> cross_pseudo_vad::Result<Var> {
    let mut terms = Vec::new();
    for &v in vars {
        let (r, c) = g.shape(v);
        let w = g.input(random_matrix(rng, r, c));
        let prod = g.mul(v, w)?;
        terms.push(g.sum(prod));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

fn criterion_3() -> Outcome {
    const POINTS: u64 = 100;
    const H: f64 = 1e-6;
    let (n, d_in, width, levels, m) = (8, 3, 4, 3, 4);
    let lengths = [8usize, 4, 2];
    let cfg = LossConfig::default();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |name: &'static str, err: f64| -> Result<(), String> {
        let slot = worst.entry(name).or_insert(0.0);
        *slot = slot.max(err);
        check(err < 1e-4, format!("{name}: relative error {err:e}"))
    };
    for point in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + point);
        let fail = |e: cross_pseudo_vad::Error| format!("point {point}: {e}");

        let mut params = ParamSet::<f64>::new();
        let enc = EncoderParams::init(
            &mut params,
            &mut rng,
            d_in,
            width,
            levels,
            BlockInit::Random,
        );
        randomize(&mut params, &mut rng, 0.5);
        let x = random_matrix(&mut rng, n, d_in);
        let seed = rng.random::<u64>();
        let err = grad_check(&params, H, |g, p| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let xv = g.input(x.clone());
            let outs = enc.encode(g, p, xv)?;
            readout(g, &outs, &mut r)
        })
        .map_err(fail)?;
        record("encoder blocks", err)?;

        let mut params = ParamSet::<f64>::new();
        let branches = BranchParams::init(&mut params, &mut rng, width, levels, m);
        randomize(&mut params, &mut rng, 0.5);
        let feats: Vec<Matrix<f64>> = lengths
            .iter()
            .map(|&t| random_matrix(&mut rng, t, width))
            .collect();
        let seed = rng.random::<u64>();
        let err = grad_check(&params, H, |g, p| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let lv: Vec<Var> = feats.iter().map(|f| g.input(f.clone())).collect();
            let outs = b_branch(g, p, &branches.binary_heads, &lv)?;
            readout(g, &outs, &mut r)
        })
        .map_err(fail)?;
        record("binary head", err)?;

        let err = grad_check(&params, H, |g, p| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let prompts = branches.prompts.compose(g, p)?;
            readout(g, &prompts, &mut r)
        })
        .map_err(fail)?;
        record("prompt composition", err)?;

        let err = grad_check(&params, H, |g, p| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let lv: Vec<Var> = feats.iter().map(|f| g.input(f.clone())).collect();
            let prompts = branches.prompts.compose(g, p)?;
            let inv_t = branches.prompts.inverse_temperature(g, p);
            let outs = c_branch(g, &prompts, &lv, inv_t)?;
            readout(g, &outs, &mut r)
        })
        .map_err(fail)?;
        record("category head", err)?;

        let mut logits = ParamSet::<f64>::new();
        let bin: Vec<_> = lengths
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                logits.add(
                    format!("b{i}"),
                    vec![t, 1],
                    (0..t).map(|_| gauss(&mut rng)).collect(),
                )
            })
            .collect();
        let cat: Vec<_> = lengths
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                logits.add(
                    format!("c{i}"),
                    vec![t, m],
                    (0..t * m).map(|_| gauss(&mut rng)).collect(),
                )
            })
            .collect();
        let abnormal = rng.random::<bool>();
        let labels: Vec<u32> = if abnormal {
            vec![1, rng.random_range(2..m as u32)]
        } else {
            vec![0]
        };
        let target: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();

        let err = grad_check(&logits, H, |g, p| {
            let vars: Vec<Var> = bin.iter().map(|&id| g.param(p, id)).collect();
            bce_video_loss(g, &vars, abnormal, &cfg)
        })
        .map_err(fail)?;
        record("bce loss", err)?;
        let err = grad_check(&logits, H, |g, p| {
            let vars: Vec<Var> = cat.iter().map(|&id| g.param(p, id)).collect();
            mil_align_loss(g, &vars, &labels, &cfg)
        })
        .map_err(fail)?;
        record("mil align loss", err)?;
        let err = grad_check(&logits, H, |g, p| {
            let b: Vec<Var> = bin.iter().map(|&id| g.param(p, id)).collect();
            let c: Vec<Var> = cat.iter().map(|&id| g.param(p, id)).collect();
            let lb = binary_focal_loss(g, &b, &target, &cfg)?;
            let lc = category_focal_loss(g, &c, &target, &cfg)?;
            g.add(lb, lc)
        })
        .map_err(fail)?;
        record("focal loss", err)?;
    }
    let summary: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    Ok(format!(
        "{POINTS} points each; worst: {}",
        summary.join(", ")
    ))
}

fn random_track(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(20..=200);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let level = rng.random::<f64>();
        let len = rng.random_range(1..=12);
        for _ in 0..len {
            out.push((level + 0.15 * gauss(rng)).clamp(0.0, 1.0));
        }
    }
    out.truncate(n);
    out
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut nonempty = 0;
    for case in 0..1_000 {
        let cfg = RefineConfig {
            max_gap: rng.random_range(1..=6),
            min_length: rng.random_range(1..=5),
            ..RefineConfig::default()
        };
        let scores = random_track(&mut rng);
        let track = temporal_refine(&scores, &cfg, Branch::Binary, "v");
        let segs = track.plateaus();
        nonempty += usize::from(!segs.is_empty());
        check(
            track.values.iter().all(|v| (0.0..=1.0).contains(v)),
            format!("case {case}: value outside [0, 1]"),
        )?;
        check(
            segs.iter().all(|(a, b)| b - a >= cfg.min_length),
            format!("case {case}: segment shorter than {}", cfg.min_length),
        )?;
        check(
            segs.windows(2).all(|w| w[1].0 - w[0].1 > cfg.max_gap),
            format!("case {case}: gap <= {}", cfg.max_gap),
        )?;
        let mut skeleton = vec![0.0; scores.len()];
        for &(a, b) in &segs {
            skeleton[a..b].iter_mut().for_each(|v| *v = 1.0);
        }
        check(
            refine_segments(&skeleton, &cfg) == segs,
            format!("case {case}: skeleton not idempotent"),
        )?;
    }
    Ok(format!("1000 tracks ({nonempty} with segments)"))
}

fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_tp = 0.0;
    for t in thresholds {
        let (mut tp, mut k) = (0.0, 0.0);
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                k += 1.0;
                if l {
                    tp += 1.0;
                }
            }
        }
        ap += (tp - prev_tp) / p * (tp / k);
        prev_tp = tp;
    }
    ap
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

fn criterion_5() -> Outcome {
    let ap = frame_ap(&[0.9, 0.8, 0.1], &[true, false, true]).map_err(|e| e.to_string())?;
    let auc = frame_auc(&[0.9, 0.8, 0.1], &[true, false, true]).map_err(|e| e.to_string())?;
    check((ap - 5.0 / 6.0).abs() < 1e-15, format!("worked AP {ap}"))?;
    check(auc == 0.5, format!("worked AUC {auc}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for _ in 0..1_000 {
        let n = rng.random_range(2..=50);
        let levels = rng.random_range(2..=20);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let ap = frame_ap(&scores, &labels).map_err(|e| e.to_string())?;
        let auc = frame_auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((ap - brute_ap(&scores, &labels)).abs());
        worst = worst.max((auc - brute_auc(&scores, &labels)).abs());
    }
    check(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    Ok(format!(
        "AP {ap:.4}, AUC {auc}; 1000 random instances, max deviation {worst:.1e}"
    ))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (width, levels, m) = (
            rng.random_range(2..=8),
            rng.random_range(1..=6),
            rng.random_range(3..=8),
        );
        let mut params = ParamSet::<f64>::new();
        let bank = BranchParams::init(&mut params, &mut rng, width, levels, m).prompts;
        randomize(&mut params, &mut rng, 1.0);
        let raw = compose_prompt_embeddings_raw(&bank, &params).map_err(|e| e.to_string())?;
        let e = params.get(bank.category).as_matrix();
        let q: Vec<Vec<f64>> = bank
            .level
            .iter()
            .map(|&id| params.get(id).values.clone())
            .collect();
        for i in 0..levels {
            for m1 in 1..m {
                for m2 in 1..m {
                    for k in 0..width {
                        let lhs = raw[i].get(m1, k) - raw[i].get(m2, k);
                        worst = worst.max((lhs - (e.get(m1, k) - e.get(m2, k))).abs());
                    }
                }
            }
            for j in 0..levels {
                for mm in 1..m {
                    for k in 0..width {
                        let lhs = raw[i].get(mm, k) - raw[j].get(mm, k);
                        worst = worst.max((lhs - (q[i][k] - q[j][k])).abs());
                    }
                }
            }
        }
    }
    check(worst <= 1e-9, format!("max deviation {worst:e}"))?;
    Ok(format!("100 banks, max deviation {worst:.1e}"))
}

fn canonical() -> (Dataset, Dataset) {
    let synth = SynthConfig::default();
    let (train, test) = synthesize(&synth).expect("synthesize");
    let wrap = |videos| Dataset {
        videos,
        feature_dim: synth.feature_dim,
        num_categories: synth.num_categories,
    };
    (wrap(train), wrap(test))
}

/// Fraction of planted abnormal segments in the training set that a refined
/// pseudo_b plateau covers at temporal IoU >= 0.5.
fn pseudo_b_recall(
    model_tracks: &cross_pseudo_vad::pipeline::PseudoTracks,
    train: &Dataset,
    n: usize,
) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for v in train.videos.iter().filter(|v| v.is_abnormal()) {
        let gt = gt_segments(&resample_labels(v.gt_frames.as_deref().unwrap_or(&[]), n));
        let plateaus = model_tracks[&v.video_id].0.plateaus();
        total += gt.len();
        hit += gt
            .iter()
            .filter(|s| {
                plateaus
                    .iter()
                    .any(|&p| temporal_iou(p, (s.start, s.end)) >= 0.5)
            })
            .count();
    }
    hit as f64 / total.max(1) as f64
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let (train, test) = canonical();
    // learning rate raised from the 1e-4 default so 20 epochs of 2 batches train
    let base = TrainConfig {
        lr: 5e-3,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut s1, mut s2) = (Vec::new(), Vec::new());
    let mut recall = Vec::new();
    for seed in [1, 2, 3] {
        let cfg = TrainConfig { seed, ..base };
        let out = run_pipeline(&train, &test, &cfg, &dir.path().join(format!("seed{seed}")))
            .map_err(|e| e.to_string())?;
        let tracks = generate_all_tracks(
            &out.stage1.model,
            &train,
            cfg.n,
            &cfg.refine,
            TrackMode::Refined,
        )
        .map_err(|e| e.to_string())?;
        recall.push(pseudo_b_recall(&tracks, &train, cfg.n));
        s1.push(out.stage1_report.frame_ap);
        s2.push(out.report.frame_ap);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m1, m2) = (mean(&s1), mean(&s2));
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "stage-1 AP {m1:.4} {s1:.3?}, stage-2 AP {m2:.4} {s2:.3?}, pseudo_b recall@0.5 {:.3}, {secs:.1}s",
        mean(&recall)
    );
    check(m2 >= m1 + 0.02, detail.clone())?;
    check(secs < 600.0, detail.clone())?;
    Ok(detail)
}

fn collect_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("read_dir").flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).expect("read"));
            }
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let code = main_with_args([
        "cpvad",
        "synth",
        "--seed",
        "7",
        "--out",
        data.to_str().unwrap(),
    ]);
    check(code == 0, format!("synth exited {code}"))?;
    let mut runs = Vec::new();
    for name in ["run_a", "run_b"] {
        let out = dir.path().join(name);
        let code = main_with_args([
            "cpvad",
            "run",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "1",
            "--lr",
            "0.005",
        ]);
        check(code == 0, format!("run exited {code}"))?;
        runs.push(collect_files(&out));
    }
    let files = runs[0].len();
    check(
        runs[0].keys().eq(runs[1].keys()),
        "run directories list different files",
    )?;
    for (path, bytes) in &runs[0] {
        check(
            &runs[1][path] == bytes,
            format!("{} differs", path.display()),
        )?;
    }
    for key in ["stage1.ckpt", "stage2.ckpt", "report.tsv"] {
        check(
            runs[0].contains_key(Path::new(key)),
            format!("{key} missing"),
        )?;
    }
    check(
        runs[0].keys().any(|p| p.starts_with("pseudo")),
        "no pseudo tracks written",
    )?;
    Ok(format!("{files} files byte-identical across two runs"))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Linear interpolation of `v` to `n` points with both endpoints pinned.
fn lerp_to(v: &[f64], n: usize) -> Vec<f64> {
    if v.len() == 1 {
        return vec![v[0]; n];
    }
    (0..n)
        .map(|t| {
            let pos = t as f64 * (v.len() - 1) as f64 / (n - 1) as f64;
            let lo = pos.floor() as usize;
            if lo + 1 >= v.len() {
                v[v.len() - 1]
            } else {
                v[lo] + (pos - lo as f64) * (v[lo + 1] - v[lo])
            }
        })
        .collect()
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let (mut worst, mut worst_row) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let levels = rng.random_range(1..=6);
        let m = rng.random_range(2..=8);
        let n = 8 << (levels - 1);
        let lens: Vec<usize> = (0..levels).map(|i| n >> i).collect();
        let bin: Vec<Matrix<f64>> = lens
            .iter()
            .map(|&t| random_matrix(&mut rng, t, 1).map(|v| 3.0 * v))
            .collect();
        let cat: Vec<Matrix<f64>> = lens
            .iter()
            .map(|&t| random_matrix(&mut rng, t, m).map(|v| 3.0 * v))
            .collect();
        let got = aggregate_logits(
            &ScorePyramid::new(bin.clone()).map_err(|e| e.to_string())?,
            &ScorePyramid::new(cat.clone()).map_err(|e| e.to_string())?,
            n,
        )
        .map_err(|e| e.to_string())?;

        let mut avg_b = vec![0.0; n];
        for level in &bin {
            for (a, v) in avg_b.iter_mut().zip(lerp_to(&level.col_vec(0), n)) {
                *a += v / levels as f64;
            }
        }
        let mut avg_c = vec![vec![0.0; m]; n];
        for level in &cat {
            for k in 0..m {
                for (t, v) in lerp_to(&level.col_vec(k), n).into_iter().enumerate() {
                    avg_c[t][k] += v / levels as f64;
                }
            }
        }
        for t in 0..n {
            worst = worst.max((got.s_ab[t] - sigmoid(avg_b[t])).abs());
            let z: f64 = avg_c[t].iter().map(|v| v.exp()).sum();
            for k in 0..m {
                worst = worst.max((got.s_cls.get(t, k) - avg_c[t][k].exp() / z).abs());
            }
            worst_row = worst_row.max((got.s_cls.row(t).iter().sum::<f64>() - 1.0).abs());
        }
    }
    check(worst <= 1e-9, format!("max deviation {worst:e}"))?;
    check(
        worst_row <= 1e-6,
        format!("row sum deviation {worst_row:e}"),
    )?;
    Ok(format!(
        "100 pyramids, max deviation {worst:.1e}, row sums within {worst_row:.1e}"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("RBF scale weights match the direct formula", criterion_1),
        ("MAD bandwidth matches a sort-based oracle", criterion_2),
        ("gradient suite", criterion_3),
        ("temporal refinement properties", criterion_4),
        ("frame AP/AUC match brute force", criterion_5),
        ("prompt-sharing identities", criterion_6),
        ("stage 2 improves frame AP over stage 1", criterion_7),
        ("full runs are byte-identical", criterion_8),
        (
            "inference aggregation matches a direct implementation",
            criterion_9,
        ),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let verdict = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok(detail) => println!("criterion {}: PASS  {name} ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({detail})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

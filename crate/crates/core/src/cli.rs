//! The `cpvad` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ablation::{run_ablation, AblationSpec};
use crate::car::TrackMode;
use crate::dataio::{generate_synthetic_dataset, load_dataset, Dataset, SynthConfig};
use crate::diffcore::load_checkpoint;
use crate::error::{Error, ErrorClass, Result};
use crate::model::DualBranchModel;
use crate::pipeline::{
    evaluate, generate_all_tracks, load_pseudo_tracks, run_pipeline, train_stage, write_pseudo_dir,
    write_scores_dir, PseudoDirection, StageArtifacts, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "cpvad",
    version,
    about = "Dual-branch weakly supervised video anomaly detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic feature dataset.
    Synth(SynthArgs),
    /// Train one stage.
    Train(TrainArgs),
    /// Write pseudo tracks from a stage-1 checkpoint.
    Pseudo(PseudoArgs),
    /// Evaluate a checkpoint on a labelled manifest.
    Eval(EvalArgs),
    /// Stage 1, pseudo tracks, stage 2 and evaluation in one run directory.
    Run(RunArgs),
    /// Compare pseudo-label directions and CAR across seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub num_videos: usize,
    #[arg(long, default_value_t = 40)]
    pub num_test_videos: usize,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 7)]
    pub num_categories: usize,
    #[arg(long, default_value_t = 160)]
    pub min_len: usize,
    #[arg(long, default_value_t = 320)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0.5)]
    pub anomaly_ratio: f64,
    #[arg(long, default_value_t = 3.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 0.6)]
    pub noise: f64,
}

/// Training hyperparameters shared by every training subcommand. A config
/// file is applied first, then `--set` entries, then the explicit flags.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub direction: Option<PseudoDirection>,
    /// Use plain level means instead of CAR-refined tracks.
    #[arg(long)]
    pub no_car: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.levels {
            cfg.levels = v;
        }
        if let Some(v) = self.direction {
            cfg.direction = v;
        }
        if self.no_car {
            cfg.car = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory holding `manifest.tsv` and optionally `test_manifest.tsv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, conflicts_with = "data")]
    pub manifest: Option<PathBuf>,
    /// Evaluation manifest; defaults to the training manifest when absent.
    #[arg(long)]
    pub test_manifest: Option<PathBuf>,
}

impl DataArgs {
    fn train_path(&self) -> Result<PathBuf> {
        match (&self.manifest, &self.data) {
            (Some(m), _) => Ok(m.clone()),
            (None, Some(d)) => Ok(d.join("manifest.tsv")),
            (None, None) => Err(Error::Config(
                "one of --data or --manifest is required".into(),
            )),
        }
    }

    fn test_path(&self) -> Result<PathBuf> {
        if let Some(t) = &self.test_manifest {
            return Ok(t.clone());
        }
        if let Some(d) = &self.data {
            let t = d.join("test_manifest.tsv");
            if t.exists() {
                return Ok(t);
            }
        }
        self.train_path()
    }

    pub fn load_train(&self) -> Result<Dataset> {
        load_dataset(&self.train_path()?)
    }

    pub fn load_test(&self) -> Result<Dataset> {
        load_dataset(&self.test_path()?)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Pseudo tracks from `pseudo` (stage 2 only).
    #[arg(long)]
    pub pseudo_dir: Option<PathBuf>,
    /// Output directory for the checkpoint, loss log and resolved config.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PseudoArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory receiving `report.tsv` and `scores/`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "none,b2c,c2b,self,both")]
    pub directions: Vec<PseudoDirection>,
    /// CAR settings to sweep: `on`, `off` or both.
    #[arg(long, value_delimiter = ',', default_value = "on,off")]
    pub car: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

fn parse_car(values: &[String]) -> Result<Vec<bool>> {
    values
        .iter()
        .map(|v| match v.trim() {
            "on" | "true" => Ok(true),
            "off" | "false" => Ok(false),
            other => Err(Error::Config(format!(
                "--car expects on/off, got {other:?}"
            ))),
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_model(path: &Path) -> Result<DualBranchModel<f32>> {
    DualBranchModel::from_params(load_checkpoint(path)?)
}

fn check_levels(model: &DualBranchModel<f32>, cfg: &TrainConfig) -> Result<()> {
    if model.config.levels != cfg.levels {
        return Err(Error::Config(format!(
            "checkpoint has {} levels but the config asks for {}",
            model.config.levels, cfg.levels
        )));
    }
    Ok(())
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => {
            let cfg = SynthConfig {
                num_videos: a.num_videos,
                num_test_videos: a.num_test_videos,
                feature_dim: a.feature_dim,
                num_categories: a.num_categories,
                min_len: a.min_len,
                max_len: a.max_len,
                anomaly_ratio: a.anomaly_ratio,
                shift_magnitude: a.shift,
                noise_std: a.noise,
                seed: a.seed,
                ..SynthConfig::default()
            };
            let out = generate_synthetic_dataset(&cfg, &a.out)?;
            println!(
                "wrote {} training and {} test videos to {}",
                out.train.len(),
                out.test.len(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let mut cfg = a.config.resolve()?;
            cfg.stage = a.stage;
            let train = a.data.load_train()?;
            let tracks = match (a.stage, &a.pseudo_dir) {
                (2, None) => {
                    return Err(Error::Precondition(
                        "train --stage 2 requires --pseudo-dir".into(),
                    ))
                }
                (2, Some(dir)) => Some(load_pseudo_tracks(dir, &train, cfg.n)?),
                _ => None,
            };
            create_dir(&a.out)?;
            write_text(&a.out.join("config.resolved"), &cfg.to_text())?;
            let out = train_stage(
                &train,
                &cfg,
                tracks.as_ref(),
                Some(&StageArtifacts::in_dir(&a.out, a.stage)),
            )?;
            if let Some(last) = out.history.last() {
                println!(
                    "stage {} epoch {}: L_total {:.6}",
                    a.stage, last.epoch, last.total
                );
            }
        }
        Command::Pseudo(a) => {
            let cfg = a.config.resolve()?;
            let model = load_model(&a.checkpoint)?;
            check_levels(&model, &cfg)?;
            let train = a.data.load_train()?;
            let mode = if cfg.car {
                TrackMode::Refined
            } else {
                TrackMode::RawMean
            };
            let tracks = generate_all_tracks(&model, &train, cfg.n, &cfg.refine, mode)?;
            write_pseudo_dir(&a.out, &tracks)?;
            println!(
                "wrote {} pseudo tracks to {}",
                tracks.len(),
                a.out.display()
            );
        }
        Command::Eval(a) => {
            let cfg = a.config.resolve()?;
            let model = load_model(&a.checkpoint)?;
            check_levels(&model, &cfg)?;
            let test = a.data.load_test()?;
            let (report, results) = evaluate(&model, &test, cfg.n, &cfg.fingerprint())?;
            create_dir(&a.out)?;
            report.write(&a.out.join("report.tsv"))?;
            write_scores_dir(&a.out.join("scores"), &test, &results)?;
            print!("{}", report.to_tsv());
        }
        Command::Run(a) => {
            let cfg = a.config.resolve()?;
            let train = a.data.load_train()?;
            let test = a.data.load_test()?;
            let out = run_pipeline(&train, &test, &cfg, &a.out)?;
            println!(
                "stage 1 frame AP {:.4}; stage 2 frame AP {:.4}, AUC {:.4}, avg mAP {:.4}",
                out.stage1_report.frame_ap,
                out.report.frame_ap,
                out.report.frame_auc,
                out.report.map_avg()
            );
        }
        Command::Ablate(a) => {
            let base = a.config.resolve()?;
            let spec = AblationSpec {
                directions: a.directions,
                car: parse_car(&a.car)?,
                seeds: a.seeds,
            };
            let train = a.data.load_train()?;
            let test = a.data.load_test()?;
            let table = run_ablation(&spec, &train, &test, &base)?;
            create_dir(&a.out)?;
            write_text(&a.out.join("config.resolved"), &base.to_text())?;
            table.write(&a.out.join("ablation.tsv"))?;
            print!("{}", table.to_tsv());
        }
    }
    Ok(())
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.class())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_are_usage_errors() {
        assert_eq!(main_with_args(["cpvad", "frobnicate"]), 1);
        assert_eq!(main_with_args(["cpvad", "synth", "--bogus"]), 1);
        assert_eq!(main_with_args(["cpvad", "--help"]), 0);
    }

    #[test]
    fn config_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        fs::write(&path, "lr = 0.01\nepochs = 3\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            overrides: vec!["epochs=4".into(), "max_gap=7".into()],
            lr: Some(0.02),
            no_car: true,
            ..ConfigArgs::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(
            (cfg.lr, cfg.epochs, cfg.refine.max_gap, cfg.car),
            (0.02, 4, 7, false)
        );
        let bad = ConfigArgs {
            overrides: vec!["epochs".into()],
            ..ConfigArgs::default()
        };
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn car_values() {
        assert_eq!(
            parse_car(&["on".into(), "off".into()]).unwrap(),
            vec![true, false]
        );
        assert!(parse_car(&["maybe".into()]).is_err());
    }
}

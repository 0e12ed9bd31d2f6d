//! Pseudo-label structure ablation: supervision direction × CAR × seed.

use std::fmt::Write as _;
use std::path::Path;

use crate::car::TrackMode;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::{evaluate, generate_all_tracks, train_stage, PseudoDirection, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSpec {
    pub directions: Vec<PseudoDirection>,
    /// CAR settings to try for every direction other than `none`.
    pub car: Vec<bool>,
    pub seeds: Vec<u64>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            directions: PseudoDirection::ALL.to_vec(),
            car: vec![true, false],
            seeds: vec![1, 2, 3],
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.directions.is_empty() {
            return Err(Error::Config(
                "ablation needs at least one seed and one direction".into(),
            ));
        }
        if self.car.is_empty() && self.directions.iter().any(|&d| d != PseudoDirection::None) {
            return Err(Error::Config(
                "ablation needs at least one CAR setting".into(),
            ));
        }
        Ok(())
    }

    /// `(direction, car)` pairs in table order; `none` appears once with
    /// `car = None`.
    pub fn configurations(&self) -> Vec<(PseudoDirection, Option<bool>)> {
        let mut out = Vec::new();
        for &d in &self.directions {
            if d == PseudoDirection::None {
                out.push((d, None));
            } else {
                out.extend(self.car.iter().map(|&c| (d, Some(c))));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub direction: PseudoDirection,
    pub car: Option<bool>,
    pub seed: u64,
    pub frame_ap: f64,
    pub frame_auc: f64,
    pub map_avg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// `(seed, frame_ap)` of the shared stage-1 model.
    pub stage1_ap: Vec<(u64, f64)>,
}

impl AblationTable {
    /// Mean frame AP over seeds for one configuration.
    pub fn mean_ap(&self, direction: PseudoDirection, car: Option<bool>) -> Option<f64> {
        let aps: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.direction == direction && r.car == car)
            .map(|r| r.frame_ap)
            .collect();
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("direction\tcar\tseed\tframe_ap\tframe_auc\tmap_avg\n");
        for r in &self.rows {
            let car = match r.car {
                Some(true) => "on",
                Some(false) => "off",
                None => "-",
            };
            let _ = writeln!(
                s,
                "{}\t{car}\t{}\t{}\t{}\t{}",
                r.direction, r.seed, r.frame_ap, r.frame_auc, r.map_avg
            );
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Trains stage 1 once per seed, then one stage-2 model per configuration
/// from that seed's tracks, and evaluates each on `test`.
pub fn run_ablation(
    spec: &AblationSpec,
    train: &Dataset,
    test: &Dataset,
    base: &TrainConfig,
) -> Result<AblationTable> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut stage1_ap = Vec::new();
    for &seed in &spec.seeds {
        let cfg1 = TrainConfig {
            seed,
            stage: 1,
            ..*base
        };
        let stage1 = train_stage(train, &cfg1, None, None)?;
        stage1_ap.push((
            seed,
            evaluate(&stage1.model, test, base.n, &cfg1.fingerprint())?
                .0
                .frame_ap,
        ));
        let refined = generate_all_tracks(
            &stage1.model,
            train,
            base.n,
            &base.refine,
            TrackMode::Refined,
        )?;
        let raw = generate_all_tracks(
            &stage1.model,
            train,
            base.n,
            &base.refine,
            TrackMode::RawMean,
        )?;
        for (direction, car) in spec.configurations() {
            let cfg2 = TrainConfig {
                seed,
                stage: 2,
                direction,
                car: car.unwrap_or(true),
                ..*base
            };
            let tracks = if cfg2.car { &refined } else { &raw };
            let stage2 = train_stage(train, &cfg2, Some(tracks), None)?;
            let (report, _) = evaluate(&stage2.model, test, base.n, &cfg2.fingerprint())?;
            rows.push(AblationRow {
                direction,
                car,
                seed,
                frame_ap: report.frame_ap,
                frame_auc: report.frame_auc,
                map_avg: report.map_avg(),
            });
        }
    }
    Ok(AblationTable { rows, stage1_ap })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn none_collapses_car_axis() {
        let spec = AblationSpec {
            directions: vec![
                PseudoDirection::Both,
                PseudoDirection::SelfFeed,
                PseudoDirection::None,
            ],
            car: vec![true, false],
            seeds: vec![1],
        };
        assert_eq!(
            spec.configurations(),
            vec![
                (PseudoDirection::Both, Some(true)),
                (PseudoDirection::Both, Some(false)),
                (PseudoDirection::SelfFeed, Some(true)),
                (PseudoDirection::SelfFeed, Some(false)),
                (PseudoDirection::None, None),
            ]
        );
        assert!(AblationSpec {
            seeds: vec![],
            ..spec
        }
        .validate()
        .is_err());
    }

    #[test]
    fn table_formats_rows() {
        let table = AblationTable {
            rows: vec![AblationRow {
                direction: PseudoDirection::None,
                car: None,
                seed: 2,
                frame_ap: 0.5,
                frame_auc: 0.75,
                map_avg: 0.25,
            }],
            stage1_ap: vec![(2, 0.4)],
        };
        assert_eq!(
            table.to_tsv(),
            "direction\tcar\tseed\tframe_ap\tframe_auc\tmap_avg\nnone\t-\t2\t0.5\t0.75\t0.25\n"
        );
        assert_eq!(table.mean_ap(PseudoDirection::None, None), Some(0.5));
        assert_eq!(table.mean_ap(PseudoDirection::Both, Some(true)), None);
    }
}

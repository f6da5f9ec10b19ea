//! Repeated-sampling experiments summarized as bias, ESE, ASE, RMSE and
//! coverage per estimator.

use std::fmt::Write as _;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparators::{freedman, FreedmanVariant};
use crate::error::{Error, Result};
use crate::kernel::Grid;
use crate::pipeline::{EstimatorConfig, EstimatorKind, Prepared, PropensityModel};
use crate::resampling::{run_resampling, PerturbationConfig, PteReport};

use super::dgp::{
    dataset_from_units, draw_units, outcome_spec, propensity_basis, DgpOptions, Setting,
    Specification,
};
use super::truth::TruthValues;

pub const MIN_SCENARIO_SIZE: usize = 100;

/// Which nuisance models are misspecified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Both correct.
    Cc,
    /// Propensity wrong.
    Psw,
    /// Outcome regression wrong.
    Orw,
    /// Both wrong.
    Bw,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Cc => "cc",
            Scenario::Psw => "psw",
            Scenario::Orw => "orw",
            Scenario::Bw => "bw",
        }
    }

    pub fn propensity(self) -> Specification {
        match self {
            Scenario::Cc | Scenario::Orw => Specification::Correct,
            Scenario::Psw | Scenario::Bw => Specification::Misspecified,
        }
    }

    pub fn outcome(self) -> Specification {
        match self {
            Scenario::Cc | Scenario::Psw => Specification::Correct,
            Scenario::Orw | Scenario::Bw => Specification::Misspecified,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cc" => Ok(Scenario::Cc),
            "psw" => Ok(Scenario::Psw),
            "orw" => Ok(Scenario::Orw),
            "bw" => Ok(Scenario::Bw),
            other => Err(Error::InvalidConfig(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEstimator {
    Dr,
    Ipw,
    FreedmanNaive,
    FreedmanX,
    FreedmanIpw,
    WangRct,
}

impl SimEstimator {
    pub fn name(self) -> &'static str {
        match self {
            SimEstimator::Dr => "dr",
            SimEstimator::Ipw => "ipw",
            SimEstimator::FreedmanNaive => "f_naive",
            SimEstimator::FreedmanX => "f_x",
            SimEstimator::FreedmanIpw => "f_ipw",
            SimEstimator::WangRct => "w_rct",
        }
    }

    /// Whether the estimator comes with resampling standard errors.
    pub fn has_inference(self) -> bool {
        !matches!(
            self,
            SimEstimator::FreedmanNaive | SimEstimator::FreedmanX | SimEstimator::FreedmanIpw
        )
    }
}

impl std::str::FromStr for SimEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dr" => Ok(SimEstimator::Dr),
            "ipw" => Ok(SimEstimator::Ipw),
            "f_naive" => Ok(SimEstimator::FreedmanNaive),
            "f_x" => Ok(SimEstimator::FreedmanX),
            "f_ipw" => Ok(SimEstimator::FreedmanIpw),
            "w_rct" => Ok(SimEstimator::WangRct),
            other => Err(Error::InvalidConfig(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub setting: Setting,
    pub n: usize,
    pub scenario: Scenario,
    pub reps: usize,
    pub seed: u64,
    pub dgp: DgpOptions,
}

impl ScenarioSpec {
    pub fn new(setting: Setting, n: usize, scenario: Scenario, reps: usize, seed: u64) -> Self {
        ScenarioSpec {
            setting,
            n,
            scenario,
            reps,
            seed,
            dgp: DgpOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_SCENARIO_SIZE {
            return Err(Error::SampleTooSmall {
                required: MIN_SCENARIO_SIZE,
                actual: self.n,
            });
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig(
                "at least one replication is needed".into(),
            ));
        }
        Ok(())
    }

    /// Estimator configuration with the scenario's nuisance models.
    pub fn estimator_config(&self) -> EstimatorConfig {
        let ps = propensity_basis(self.setting, self.scenario.propensity(), self.dgp.log_shift);
        let or = outcome_spec(self.setting, self.scenario.outcome());
        EstimatorConfig::new(PropensityModel::Logistic(ps), Some(or))
    }
}

/// Transformation estimate and pointwise interval on a fixed grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub g: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub estimator: SimEstimator,
    pub pte: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub status: String,
    #[serde(skip)]
    pub curve: Option<CurveRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub estimator: SimEstimator,
    pub setting: u8,
    pub n: usize,
    pub scenario: Scenario,
    pub reps_ok: usize,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub ese: f64,
    /// NaN when the estimator has no standard error.
    pub ase: f64,
    pub rmse: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub spec: ScenarioSpec,
    pub rows: Vec<ResultRow>,
    pub records: Vec<RepRecord>,
}

impl ScenarioResult {
    pub fn records_for(&self, est: SimEstimator) -> impl Iterator<Item = &RepRecord> {
        self.records.iter().filter(move |r| r.estimator == est)
    }

    pub fn row(&self, est: SimEstimator) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.estimator == est)
    }
}

fn record_from_report(
    rep: usize,
    est: SimEstimator,
    report: Result<PteReport>,
    eval_grid: Option<&Grid>,
) -> RepRecord {
    match report {
        Ok(r) => {
            let curve = eval_grid.map(|grid| {
                let band = Grid::new(r.curve.s[0], *r.curve.s.last().unwrap(), r.curve.s.len())
                    .expect("estimation grid");
                let at = |v: &[f64]| -> Vec<f64> {
                    grid.points()
                        .iter()
                        .map(|&s| band.interpolate(v, s))
                        .collect()
                };
                CurveRecord {
                    g: at(&r.curve.g),
                    lo: at(&r.curve.lo),
                    hi: at(&r.curve.hi),
                }
            });
            RepRecord {
                rep,
                estimator: est,
                pte: Some(r.point.pte),
                se: Some(r.se_pte),
                ci: Some(r.ci_pte),
                status: "ok".into(),
                curve,
            }
        }
        Err(e) => failed(rep, est, e),
    }
}

fn failed(rep: usize, est: SimEstimator, e: Error) -> RepRecord {
    RepRecord {
        rep,
        estimator: est,
        pte: None,
        se: None,
        ci: None,
        status: e.to_string(),
        curve: None,
    }
}

fn run_rep(
    spec: &ScenarioSpec,
    rep: usize,
    estimators: &[SimEstimator],
    pc: &PerturbationConfig,
    eval_grid: Option<&Grid>,
) -> Vec<RepRecord> {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    rng.set_stream(rep as u64);
    let units = draw_units(spec.setting, spec.n, &mut rng, &spec.dgp);
    let rep_pc = PerturbationConfig {
        seed: rng.next_u64(),
        ..*pc
    };
    let data = match dataset_from_units(&units) {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return estimators
                .iter()
                .map(|&est| failed(rep, est, Error::InvalidConfig(msg.clone())))
                .collect();
        }
    };
    let config = spec.estimator_config();
    let prepared = Prepared::new(&data, &config);
    let mut wang_config = config.clone();
    wang_config.propensity = PropensityModel::Randomized;
    estimators
        .iter()
        .map(|&est| match est {
            SimEstimator::Dr | SimEstimator::Ipw => {
                let kind = if est == SimEstimator::Dr {
                    EstimatorKind::Dr
                } else {
                    EstimatorKind::Ipw
                };
                let report = match &prepared {
                    Ok(p) => run_resampling(p, kind, &rep_pc),
                    Err(e) => Err(Error::InvalidConfig(e.to_string())),
                };
                record_from_report(rep, est, report, eval_grid)
            }
            SimEstimator::WangRct => {
                let report = Prepared::new(&data, &wang_config)
                    .and_then(|p| run_resampling(&p, EstimatorKind::Ipw, &rep_pc));
                record_from_report(rep, est, report, eval_grid)
            }
            SimEstimator::FreedmanNaive | SimEstimator::FreedmanX | SimEstimator::FreedmanIpw => {
                let variant = match est {
                    SimEstimator::FreedmanNaive => FreedmanVariant::Naive,
                    SimEstimator::FreedmanX => FreedmanVariant::WithX,
                    _ => FreedmanVariant::Ipw,
                };
                let basis = match &config.propensity {
                    PropensityModel::Logistic(b) => Some(b),
                    PropensityModel::Randomized => None,
                };
                match freedman(&data, variant, basis) {
                    Ok(r) if !r.undefined => RepRecord {
                        rep,
                        estimator: est,
                        pte: Some(r.pte),
                        se: None,
                        ci: None,
                        status: "ok".into(),
                        curve: None,
                    },
                    Ok(_) => failed(rep, est, Error::UnstablePte(0.0)),
                    Err(e) => failed(rep, est, e),
                }
            }
        })
        .collect()
}

/// Summary statistics of per-replication estimates against `truth`.
pub fn summarize(
    est: SimEstimator,
    spec: &ScenarioSpec,
    records: &[&RepRecord],
    truth: f64,
) -> ResultRow {
    let ok: Vec<&&RepRecord> = records.iter().filter(|r| r.pte.is_some()).collect();
    let k = ok.len();
    let kf = k as f64;
    let vals: Vec<f64> = ok.iter().map(|r| r.pte.unwrap()).collect();
    let mean = vals.iter().sum::<f64>() / kf;
    let ese = if k > 1 {
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt()
    } else {
        0.0
    };
    let rmse = (vals.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / kf).sqrt();
    let (ase, coverage) = if est.has_inference() && k > 0 {
        let ase = ok.iter().map(|r| r.se.unwrap()).sum::<f64>() / kf;
        let covered = ok
            .iter()
            .filter(|r| {
                let (lo, hi) = r.ci.unwrap();
                lo <= truth && truth <= hi
            })
            .count();
        (ase, covered as f64 / kf)
    } else {
        (f64::NAN, f64::NAN)
    };
    ResultRow {
        estimator: est,
        setting: spec.setting.number(),
        n: spec.n,
        scenario: spec.scenario,
        reps_ok: k,
        truth,
        mean,
        bias: mean - truth,
        ese,
        ase,
        rmse,
        coverage,
    }
}

/// Run every estimator on `spec.reps` independent datasets. Each dataset
/// and its resampling weights come from their own seed stream. Curves are
/// kept on `eval_grid` when given.
pub fn run_scenario(
    spec: &ScenarioSpec,
    estimators: &[SimEstimator],
    pc: &PerturbationConfig,
    truth: &TruthValues,
    eval_grid: Option<&Grid>,
) -> Result<ScenarioResult> {
    spec.validate()?;
    pc.validate()?;
    if estimators.is_empty() {
        return Err(Error::InvalidConfig("no estimators requested".into()));
    }
    let records: Vec<RepRecord> = (0..spec.reps)
        .into_par_iter()
        .flat_map_iter(|rep| run_rep(spec, rep, estimators, pc, eval_grid))
        .collect();
    let rows = estimators
        .iter()
        .map(|&est| {
            let mine: Vec<&RepRecord> = records.iter().filter(|r| r.estimator == est).collect();
            summarize(est, spec, &mine, truth.pte)
        })
        .collect();
    Ok(ScenarioResult {
        spec: spec.clone(),
        rows,
        records,
    })
}

pub fn write_rows_csv<P: AsRef<Path>>(rows: &[ResultRow], path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width text table of result rows.
pub fn format_table(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>7} {:>5} {:>8} {:>4} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "est",
        "setting",
        "n",
        "scenario",
        "ok",
        "truth",
        "mean",
        "bias",
        "ESE",
        "ASE",
        "RMSE",
        "cover"
    );
    let num = |v: f64| {
        if v.is_nan() {
            "-".to_string()
        } else {
            format!("{v:.3}")
        }
    };
    for r in rows {
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>5} {:>8} {:>4} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            r.estimator.name(),
            r.setting,
            r.n,
            r.scenario.name(),
            r.reps_ok,
            num(r.truth),
            num(r.mean),
            num(r.bias),
            num(r.ese),
            num(r.ase),
            num(r.rmse),
            num(r.coverage)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(rep: usize, pte: f64, se: f64) -> RepRecord {
        RepRecord {
            rep,
            estimator: SimEstimator::Dr,
            pte: Some(pte),
            se: Some(se),
            ci: Some((pte - 2.0 * se, pte + 2.0 * se)),
            status: "ok".into(),
            curve: None,
        }
    }

    #[test]
    fn rmse_decomposes() {
        let spec = ScenarioSpec::new(Setting::One, 400, Scenario::Cc, 5, 0);
        let recs: Vec<RepRecord> = [0.51, 0.57, 0.49, 0.60, 0.55]
            .iter()
            .enumerate()
            .map(|(i, &v)| rec(i, v, 0.02))
            .collect();
        let refs: Vec<&RepRecord> = recs.iter().collect();
        let row = summarize(SimEstimator::Dr, &spec, &refs, 0.54);
        let k = 5.0;
        let lhs = row.rmse * row.rmse;
        let rhs = row.bias * row.bias + row.ese * row.ese * (k - 1.0) / k;
        assert!((lhs - rhs).abs() < 1e-10);
        assert!((row.ase - 0.02).abs() < 1e-15);
        assert!((row.coverage - 0.6).abs() < 1e-15);
    }

    #[test]
    fn failures_are_excluded() {
        let spec = ScenarioSpec::new(Setting::One, 400, Scenario::Cc, 3, 0);
        let mut bad = rec(2, 0.0, 0.0);
        bad.pte = None;
        let recs = [rec(0, 0.5, 0.1), rec(1, 0.6, 0.1), bad];
        let refs: Vec<&RepRecord> = recs.iter().collect();
        let row = summarize(SimEstimator::Dr, &spec, &refs, 0.55);
        assert_eq!(row.reps_ok, 2);
        assert!((row.mean - 0.55).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(ScenarioSpec::new(Setting::One, 50, Scenario::Cc, 1, 0)
            .validate()
            .is_err());
        assert!(ScenarioSpec::new(Setting::One, 100, Scenario::Cc, 0, 0)
            .validate()
            .is_err());
        assert!("xx".parse::<Scenario>().is_err());
        assert_eq!("bw".parse::<Scenario>().unwrap(), Scenario::Bw);
    }
}

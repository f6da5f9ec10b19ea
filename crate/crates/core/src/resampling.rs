//! Perturbation resampling: every estimation stage is refitted under i.i.d.
//! unit-exponential case weights normalized to mean one.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::ipw::EffectEstimates;
use crate::pipeline::{EstimatorKind, PointEstimate, Prepared};

/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    #[default]
    Normal,
    Percentile,
}

impl std::str::FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(CiMethod::Normal),
            "percentile" => Ok(CiMethod::Percentile),
            other => Err(Error::InvalidConfig(format!(
                "unknown interval method '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub replicates: usize,
    pub seed: u64,
    pub ci_level: f64,
    pub ci_method: CiMethod,
}

impl PerturbationConfig {
    pub fn new(replicates: usize, seed: u64) -> Self {
        PerturbationConfig {
            replicates,
            seed,
            ci_level: 0.95,
            ci_method: CiMethod::Normal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidConfig(format!(
                "number of replicates must be at least 2, got {}",
                self.replicates
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence level {} outside (0, 1)",
                self.ci_level
            )));
        }
        Ok(())
    }
}

/// Unit-exponential draws rescaled to have mean exactly one.
pub fn perturb_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    normalize_mean(v)
}

fn normalize_mean(mut v: Vec<f64>) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x /= mean);
    v
}

/// Weights of replicate `rep`, drawn from their own stream of `seed` so that
/// any schedule of replicates gives the same draws.
pub fn replicate_weights(n: usize, seed: u64, rep: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    perturb_weights(n, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub effects: Option<EffectEstimates>,
    /// `"ok"` or the error that dropped the replicate.
    pub status: String,
    /// Transformation on the base grid.
    #[serde(skip)]
    pub g: Option<Vec<f64>>,
}

/// Pointwise summary of the transformation across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub s: Vec<f64>,
    pub g: Vec<f64>,
    pub se: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PteReport {
    pub estimator: EstimatorKind,
    pub point: EffectEstimates,
    pub lambda: f64,
    pub se_pte: f64,
    pub se_delta: f64,
    pub se_delta_g: f64,
    pub ci_pte: (f64, f64),
    pub ci_level: f64,
    pub ci_method: CiMethod,
    pub n_failed: usize,
    pub replicates: Vec<ReplicateRecord>,
    pub curve: CurveBand,
}

impl PteReport {
    /// CSV with columns `rep, delta, delta_g, pte, status`.
    pub fn write_replicates_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rep", "delta", "delta_g", "pte", "status"])?;
        for r in &self.replicates {
            let (d, dg, p) = match &r.effects {
                Some(e) => (
                    format!("{:?}", e.delta),
                    format!("{:?}", e.delta_g),
                    format!("{:?}", e.pte),
                ),
                None => (String::new(), String::new(), String::new()),
            };
            w.write_record([r.rep.to_string(), d, dg, p, r.status.clone()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Linear-interpolation sample quantile of sorted values.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

fn interval(point: f64, se: f64, draws: &[f64], level: f64, method: CiMethod) -> (f64, f64) {
    match method {
        CiMethod::Normal => {
            let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
            (point - z * se, point + z * se)
        }
        CiMethod::Percentile => {
            let mut s = draws.to_vec();
            s.sort_by(f64::total_cmp);
            let a = (1.0 - level) / 2.0;
            (quantile_sorted(&s, a), quantile_sorted(&s, 1.0 - a))
        }
    }
}

/// Point estimate plus perturbation standard errors and intervals.
pub fn run_resampling(
    prepared: &Prepared<'_>,
    kind: EstimatorKind,
    pc: &PerturbationConfig,
) -> Result<PteReport> {
    pc.validate()?;
    let base = prepared.base(kind)?;
    let n = prepared.data.len();
    resample_from(prepared, kind, &base, pc, |rep| {
        replicate_weights(n, pc.seed, rep)
    })
}

pub(crate) fn resample_from<F>(
    prepared: &Prepared<'_>,
    kind: EstimatorKind,
    base: &PointEstimate,
    pc: &PerturbationConfig,
    weights: F,
) -> Result<PteReport>
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    let records: Vec<ReplicateRecord> = (0..pc.replicates)
        .into_par_iter()
        .map(|rep| {
            let v = weights(rep);
            match prepared.estimate(kind, &v, Some(base)) {
                Ok(est) => Ok(ReplicateRecord {
                    rep,
                    effects: Some(est.effects),
                    status: "ok".into(),
                    g: Some(est.transform.g),
                }),
                Err(e) if e.is_recoverable() => Ok(ReplicateRecord {
                    rep,
                    effects: None,
                    status: e.to_string(),
                    g: None,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    summarize(base, kind, pc, records)
}

fn summarize(
    base: &PointEstimate,
    kind: EstimatorKind,
    pc: &PerturbationConfig,
    records: Vec<ReplicateRecord>,
) -> Result<PteReport> {
    let total = records.len();
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.effects.is_some()).collect();
    let n_failed = total - ok.len();
    if n_failed as f64 > MAX_FAILED_FRACTION * total as f64 {
        return Err(Error::ResamplingUnstable {
            failed: n_failed,
            total,
        });
    }
    let pick = |f: fn(&EffectEstimates) -> f64| -> Vec<f64> {
        ok.iter().map(|r| f(r.effects.as_ref().unwrap())).collect()
    };
    let pte = pick(|e| e.pte);
    let se_pte = sd(&pte);
    let se_delta = sd(&pick(|e| e.delta));
    let se_delta_g = sd(&pick(|e| e.delta_g));
    let point = base.effects;
    let ci_pte = interval(point.pte, se_pte, &pte, pc.ci_level, pc.ci_method);

    let grid = &base.transform.grid;
    let gk = grid.len();
    let mut se = vec![0.0; gk];
    let mut lo = vec![0.0; gk];
    let mut hi = vec![0.0; gk];
    for k in 0..gk {
        let draws: Vec<f64> = ok.iter().map(|r| r.g.as_ref().unwrap()[k]).collect();
        se[k] = sd(&draws);
        let (l, h) = interval(
            base.transform.g[k],
            se[k],
            &draws,
            pc.ci_level,
            pc.ci_method,
        );
        lo[k] = l;
        hi[k] = h;
    }
    Ok(PteReport {
        estimator: kind,
        point,
        lambda: base.transform.lambda,
        se_pte,
        se_delta,
        se_delta_g,
        ci_pte,
        ci_level: pc.ci_level,
        ci_method: pc.ci_method,
        n_failed,
        replicates: records,
        curve: CurveBand {
            s: grid.points().to_vec(),
            g: base.transform.g.clone(),
            se,
            lo,
            hi,
        },
    })
}

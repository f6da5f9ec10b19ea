//! Empirical checks of the stochastic-ordering conditions that keep the PTE
//! in `[0, 1]`: survival functions and conditional outcome means of the
//! transformed surrogate, compared across arms with inverse probability
//! weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::std_dev;
use crate::pipeline::{PointEstimate, Prepared};
use crate::propensity::{weights_from_pi, PropensityFit};
use crate::resampling::{replicate_weights, PerturbationConfig};

pub const DEFAULT_U_GRID_SIZE: usize = 101;
/// Violations larger than this many perturbation standard errors are flagged.
pub const FLAG_MULTIPLIER: f64 = 2.0;
/// Conditional means need this local effective sample size in each arm.
pub const MIN_LOCAL_ESS: f64 = 10.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingCheck {
    /// Largest oriented violation over the grid (0 when none).
    pub max_violation: f64,
    /// Grid value where it occurs.
    pub at: f64,
    /// Perturbation standard error of the arm difference there.
    pub se: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// `+1` when the estimated effect is non-negative, else `-1`; the
    /// orderings are checked in this direction.
    pub orientation: f64,
    pub u: Vec<f64>,
    /// Weighted `P(g(S) >= u)` per arm.
    pub survival: [Vec<f64>; 2],
    /// Weighted kernel means of `Y` given `g(S) = u` per arm; NaN outside
    /// the common support or where local data are too sparse.
    pub conditional_mean: [Vec<f64>; 2],
    pub support: [(f64, f64); 2],
    pub overlap: (f64, f64),
    pub survival_order: OrderingCheck,
    pub mean_order: OrderingCheck,
    pub n_replicates: usize,
}

struct Curves {
    survival: [Vec<f64>; 2],
    mean: [Vec<f64>; 2],
}

fn curves(
    gs: &[f64],
    y: &[f64],
    omega: &[Vec<f64>; 2],
    u: &[f64],
    bw: f64,
    overlap: (f64, f64),
) -> Curves {
    let mut survival: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut mean: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for arm in 0..2 {
        let w = &omega[arm];
        let tot: f64 = w.iter().sum();
        survival[arm] = u
            .iter()
            .map(|&t| {
                gs.iter()
                    .zip(w)
                    .filter(|(&g, _)| g >= t)
                    .map(|(_, &wi)| wi)
                    .sum::<f64>()
                    / tot
            })
            .collect();
        mean[arm] = u
            .iter()
            .map(|&t| {
                if t < overlap.0 || t > overlap.1 {
                    return f64::NAN;
                }
                let (mut num, mut den, mut sq) = (0.0, 0.0, 0.0);
                for i in 0..gs.len() {
                    if w[i] == 0.0 {
                        continue;
                    }
                    let z = (gs[i] - t) / bw;
                    let k = w[i] * (-0.5 * z * z).exp();
                    num += k * y[i];
                    den += k;
                    sq += k * k;
                }
                if den > 0.0 && den * den >= MIN_LOCAL_ESS * sq {
                    num / den
                } else {
                    f64::NAN
                }
            })
            .collect();
    }
    Curves { survival, mean }
}

/// Oriented violation `orientation * (a0 - a1)` at each grid point.
fn violations(c0: &[f64], c1: &[f64], orientation: f64) -> Vec<f64> {
    c0.iter()
        .zip(c1)
        .map(|(a, b)| {
            let v = orientation * (a - b);
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k] > v[best] {
            best = k;
        }
    }
    best
}

fn omega_of(fit: &PropensityFit, a: &[u8], v: &[f64]) -> [Vec<f64>; 2] {
    [0u8, 1].map(|arm| {
        weights_from_pi(&fit.fitted_pi1, a, arm, fit.clip)
            .scaled(v)
            .omega
    })
}

/// Check both orderings for the transformation in `base`. Standard errors
/// come from `pc.replicates` perturbation refits of the estimate, evaluated
/// at the grid point of the largest observed violation.
pub fn check_assumptions(
    prepared: &Prepared<'_>,
    base: &PointEstimate,
    pc: &PerturbationConfig,
    grid_size: usize,
) -> Result<AssumptionReport> {
    pc.validate()?;
    if grid_size < 2 {
        return Err(Error::InvalidConfig(
            "diagnostic grid needs at least two points".into(),
        ));
    }
    let data = prepared.data;
    let n = data.len();
    let a = data.a();
    let y = data.y();
    let gs: Vec<f64> = data.s().iter().map(|&s| base.transform.eval(s)).collect();

    let mut support = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for i in 0..n {
        let sp = &mut support[a[i] as usize];
        sp.0 = sp.0.min(gs[i]);
        sp.1 = sp.1.max(gs[i]);
    }
    let overlap = (
        support[0].0.max(support[1].0),
        support[0].1.min(support[1].1),
    );
    if !(overlap.1 > overlap.0) {
        return Err(Error::DisjointSupport);
    }
    let lo = support[0].0.min(support[1].0);
    let hi = support[0].1.max(support[1].1);
    let u: Vec<f64> = (0..grid_size)
        .map(|k| lo + (hi - lo) * k as f64 / (grid_size - 1) as f64)
        .collect();
    let bw = 1.06 * std_dev(&gs).max(f64::MIN_POSITIVE) * (n as f64).powf(-0.2);
    let orientation = if base.effects.delta >= 0.0 { 1.0 } else { -1.0 };

    let ones = vec![1.0; n];
    let c = curves(
        &gs,
        y,
        &omega_of(&base.propensity, a, &ones),
        &u,
        bw,
        overlap,
    );
    let sv = violations(&c.survival[0], &c.survival[1], orientation);
    let mv = violations(&c.mean[0], &c.mean[1], orientation);
    let (ks, km) = (argmax(&sv), argmax(&mv));

    let draws: Vec<Option<(f64, f64)>> = (0..pc.replicates)
        .into_par_iter()
        .map(|rep| {
            let v = replicate_weights(n, pc.seed, rep);
            let est = match prepared.estimate(base.kind, &v, Some(base)) {
                Ok(e) => e,
                Err(e) if e.is_recoverable() => return Ok(None),
                Err(e) => return Err(e),
            };
            let gr: Vec<f64> = data.s().iter().map(|&s| est.transform.eval(s)).collect();
            let omega = omega_of(&est.propensity, a, &v);
            let r = curves(&gr, y, &omega, &u, bw, overlap);
            Ok(Some((
                r.survival[0][ks] - r.survival[1][ks],
                r.mean[0][km] - r.mean[1][km],
            )))
        })
        .collect::<Result<_>>()?;
    let s_draws: Vec<f64> = draws.iter().flatten().map(|d| d.0).collect();
    let m_draws: Vec<f64> = draws
        .iter()
        .flatten()
        .map(|d| d.1)
        .filter(|d| d.is_finite())
        .collect();
    let check = |viol: &[f64], k: usize, draws: &[f64]| {
        let max_violation = viol[k].max(0.0);
        let se = std_dev(draws);
        OrderingCheck {
            max_violation,
            at: u[k],
            se,
            flagged: max_violation > FLAG_MULTIPLIER * se,
        }
    };
    Ok(AssumptionReport {
        orientation,
        survival_order: check(&sv, ks, &s_draws),
        mean_order: check(&mv, km, &m_draws),
        u,
        survival: c.survival,
        conditional_mean: c.mean,
        support,
        overlap,
        n_replicates: s_draws.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oriented_violations() {
        let v = violations(&[0.5, 0.6, f64::NAN], &[0.4, 0.7, 0.1], 1.0);
        assert!((v[0] - 0.1).abs() < 1e-15 && (v[1] + 0.1).abs() < 1e-15);
        assert_eq!(v[2], f64::NEG_INFINITY);
        let v = violations(&[0.5], &[0.4], -1.0);
        assert!((v[0] + 0.1).abs() < 1e-15);
        assert_eq!(argmax(&[0.1, 0.3, 0.2]), 1);
    }

    #[test]
    fn weighted_survival() {
        let gs = [1.0, 2.0, 3.0, 4.0];
        let y = [0.0; 4];
        let omega = [vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 3.0]];
        let c = curves(&gs, &y, &omega, &[0.0, 2.0, 4.0], 1.0, (0.0, 5.0));
        assert_eq!(c.survival[0], vec![1.0, 0.5, 0.0]);
        assert_eq!(c.survival[1], vec![1.0, 1.0, 0.75]);
    }
}

//! Inverse-probability-weighted kernel estimation of the optimal surrogate
//! transformation and the proportion of treatment effect explained.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{trapz, Grid, KernelConfig, SurrogateSmoother};
use crate::propensity::WeightVector;

/// Density estimates below this are treated as having no local data.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-10;
const OVERLAP_FLOOR: f64 = 1e-12;
const EFFECT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flavor {
    Ipw,
    Dr,
}

/// Grid-evaluated `m_a`, `f_a` and `P_a` for both arms.
#[derive(Debug, Clone)]
pub struct ComponentCurves {
    pub grid: Grid,
    pub m: [Vec<f64>; 2],
    pub f: [Vec<f64>; 2],
    pub p: [Vec<f64>; 2],
    /// Grid points where `m_a` had no local data and was filled.
    pub flagged: [Vec<bool>; 2],
    pub flavor: Flavor,
}

/// `g(s) = m(s) + lambda P0(s)` on a grid, linearly interpolated off-grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateTransform {
    pub lambda: f64,
    pub g: Vec<f64>,
    pub grid: Grid,
}

impl SurrogateTransform {
    pub fn eval(&self, s: f64) -> f64 {
        self.grid.interpolate(&self.g, s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimates {
    pub delta: f64,
    pub delta_g: f64,
    pub pte: f64,
}

impl EffectEstimates {
    pub fn from_deltas(delta: f64, delta_g: f64) -> Result<Self> {
        if !(delta.abs() > EFFECT_FLOOR) {
            return Err(Error::UnstablePte(delta));
        }
        Ok(EffectEstimates {
            delta,
            delta_g,
            pte: delta_g / delta,
        })
    }
}

/// Replace flagged entries by the nearest unflagged value (ties go left).
pub(crate) fn fill_nearest(values: &mut [f64], flagged: &[bool]) -> Result<()> {
    let n = values.len();
    if flagged.iter().all(|&f| f) {
        return Err(Error::EmptySupport);
    }
    let src = values.to_vec();
    for k in 0..n {
        if !flagged[k] {
            continue;
        }
        let mut d = 1;
        loop {
            if k >= d && !flagged[k - d] {
                values[k] = src[k - d];
                break;
            }
            if k + d < n && !flagged[k + d] {
                values[k] = src[k + d];
                break;
            }
            d += 1;
        }
    }
    Ok(())
}

/// `P_a = f_a / (f_0 + f_1)`; where both densities vanish the arms split
/// evenly.
pub(crate) fn arm_probabilities(f0: &[f64], f1: &[f64]) -> [Vec<f64>; 2] {
    let mut p0 = Vec::with_capacity(f0.len());
    let mut p1 = Vec::with_capacity(f0.len());
    for (&a, &b) in f0.iter().zip(f1) {
        let t = a + b;
        if t > 0.0 {
            let q0 = a / t;
            p0.push(q0);
            p1.push(1.0 - q0);
        } else {
            p0.push(0.5);
            p1.push(0.5);
        }
    }
    [p0, p1]
}

/// IPW kernel estimates of `m_a`, `f_a`, `P_a` on the padded surrogate grid.
pub fn ipw_curves(
    data: &Dataset,
    w0: &WeightVector,
    w1: &WeightVector,
    k: &KernelConfig,
) -> Result<ComponentCurves> {
    let smoother = SurrogateSmoother::new(data.s(), k)?;
    ipw_curves_with(data.y(), &smoother, w0, w1)
}

pub(crate) fn ipw_curves_with(
    y: &[f64],
    smoother: &SurrogateSmoother,
    w0: &WeightVector,
    w1: &WeightVector,
) -> Result<ComponentCurves> {
    let g = smoother.grid.len();
    let n = y.len();
    if smoother.kmat.nrows() != n || w0.omega.len() != n || w1.omega.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: w0.omega.len().min(w1.omega.len()),
        });
    }
    let mut m: [Vec<f64>; 2] = [vec![0.0; g], vec![0.0; g]];
    let mut f: [Vec<f64>; 2] = [vec![0.0; g], vec![0.0; g]];
    let mut flagged: [Vec<bool>; 2] = [vec![false; g], vec![false; g]];
    for (arm, w) in [w0, w1].into_iter().enumerate() {
        let total = w.sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateArm(arm as u8));
        }
        let mut num = vec![0.0; g];
        let mut den = vec![0.0; g];
        for i in 0..n {
            let wi = w.omega[i];
            if wi == 0.0 {
                continue;
            }
            let wy = wi * y[i];
            let row = smoother.kmat.row(i);
            let row = row.as_slice().expect("kernel matrix is row-major");
            for k in 0..g {
                den[k] += row[k] * wi;
                num[k] += row[k] * wy;
            }
        }
        for k in 0..g {
            f[arm][k] = den[k] / total;
            if f[arm][k] < DEGENERATE_DENOMINATOR {
                flagged[arm][k] = true;
            } else {
                m[arm][k] = num[k] / den[k];
            }
        }
        fill_nearest(&mut m[arm], &flagged[arm])?;
    }
    let p = arm_probabilities(&f[0], &f[1]);
    Ok(ComponentCurves {
        grid: smoother.grid.clone(),
        m,
        f,
        p,
        flagged,
        flavor: Flavor::Ipw,
    })
}

/// Ratio of quadratures defining lambda. The numerator integrand is zeroed
/// at flagged points.
pub(crate) fn lambda_from_parts(
    grid: &Grid,
    m: &[Vec<f64>; 2],
    f0: &[f64],
    p: &[Vec<f64>; 2],
    flagged: &[Vec<bool>; 2],
) -> Result<f64> {
    let num: Vec<f64> = (0..grid.len())
        .map(|k| {
            if flagged[0][k] || flagged[1][k] {
                0.0
            } else {
                (m[0][k] - m[1][k]) * p[1][k] * f0[k]
            }
        })
        .collect();
    let den: Vec<f64> = (0..grid.len()).map(|k| p[0][k] * f0[k]).collect();
    let den = trapz(grid, &den);
    if !(den > OVERLAP_FLOOR) {
        return Err(Error::NoOverlap);
    }
    Ok(trapz(grid, &num) / den)
}

pub fn lambda_hat(c: &ComponentCurves) -> Result<f64> {
    lambda_from_parts(&c.grid, &c.m, &c.f[0], &c.p, &c.flagged)
}

pub(crate) fn transform_from_parts(
    grid: &Grid,
    m: &[Vec<f64>; 2],
    p: &[Vec<f64>; 2],
    lambda: f64,
) -> SurrogateTransform {
    let g = (0..grid.len())
        .map(|k| m[0][k] * p[0][k] + m[1][k] * p[1][k] + lambda * p[0][k])
        .collect();
    SurrogateTransform {
        lambda,
        g,
        grid: grid.clone(),
    }
}

pub fn g_hat(c: &ComponentCurves, lambda: f64) -> SurrogateTransform {
    transform_from_parts(&c.grid, &c.m, &c.p, lambda)
}

/// Hajek (weight-normalized) effect estimates.
pub fn ipw_effects(
    data: &Dataset,
    w0: &WeightVector,
    w1: &WeightVector,
    g: &SurrogateTransform,
) -> Result<EffectEstimates> {
    let gs: Vec<f64> = data.s().iter().map(|&s| g.eval(s)).collect();
    effects_from_values(data.y(), &gs, w0, w1)
}

pub(crate) fn effects_from_values(
    y: &[f64],
    gs: &[f64],
    w0: &WeightVector,
    w1: &WeightVector,
) -> Result<EffectEstimates> {
    let mean = |v: &[f64], w: &WeightVector| -> Result<f64> {
        let tot = w.sum();
        if !(tot > 0.0) {
            return Err(Error::DegenerateArm(w.arm));
        }
        Ok(v.iter().zip(&w.omega).map(|(x, o)| x * o).sum::<f64>() / tot)
    };
    let delta = mean(y, w1)? - mean(y, w0)?;
    let delta_g = mean(gs, w1)? - mean(gs, w0)?;
    EffectEstimates::from_deltas(delta, delta_g)
}

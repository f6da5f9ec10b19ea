//! Population targets by Monte Carlo over potential-outcome draws.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipw::{arm_probabilities, fill_nearest, lambda_from_parts, transform_from_parts};
use crate::kernel::{std_dev, Grid};

use super::dgp::{draw_units, DgpOptions, Setting};

/// Kernel contributions beyond this many bandwidths are dropped.
const KERNEL_WINDOW: f64 = 8.0;
/// Fraction of pooled surrogate mass left outside the default grid at each end.
const GRID_TAIL: f64 = 1e-4;
pub const DEFAULT_TRUTH_GRID_SIZE: usize = 401;
pub const MIN_TRUTH_SAMPLE: usize = 10_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthValues {
    pub delta: f64,
    pub delta_g: f64,
    pub pte: f64,
    pub lambda: f64,
    pub grid: Grid,
    pub g_curve: Vec<f64>,
}

impl TruthValues {
    pub fn g(&self, s: f64) -> f64 {
        self.grid.interpolate(&self.g_curve, s)
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Grid spanning all but a `1e-4` tail fraction of the pooled potential
/// surrogates in a pilot draw.
pub fn default_truth_grid(setting: Setting, seed: u64, opts: &DgpOptions) -> Result<Grid> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let units = draw_units(setting, 200_000, &mut rng, opts);
    let mut s: Vec<f64> = units.iter().flat_map(|u| [u.po.s0, u.po.s1]).collect();
    s.sort_by(f64::total_cmp);
    Grid::new(
        quantile(&s, GRID_TAIL),
        quantile(&s, 1.0 - GRID_TAIL),
        DEFAULT_TRUTH_GRID_SIZE,
    )
}

/// Unweighted kernel density and local-linear regression of `y` on `s` over
/// `grid`, with points lacking data flagged.
fn smooth(s: &[f64], y: &[f64], grid: &Grid, h: f64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    let ss: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let n = s.len() as f64;
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt() * n);
    let mut f = Vec::with_capacity(grid.len());
    let mut m = Vec::with_capacity(grid.len());
    let mut flagged = Vec::with_capacity(grid.len());
    for &g in grid.points() {
        let lo = ss.partition_point(|&v| v < g - KERNEL_WINDOW * h);
        let hi = ss.partition_point(|&v| v <= g + KERNEL_WINDOW * h);
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in lo..hi {
            let d = ss[k] - g;
            let z = d / h;
            let w = (-0.5 * z * z).exp();
            s0 += w;
            s1 += w * d;
            s2 += w * d * d;
            t0 += w * ys[k];
            t1 += w * d * ys[k];
        }
        f.push(s0 * norm);
        let det = s0 * s2 - s1 * s1;
        let ok = s0 > 0.0 && det > 1e-12 * s0 * s2;
        flagged.push(!ok);
        m.push(if ok { (s2 * t0 - s1 * t1) / det } else { 0.0 });
    }
    (f, m, flagged)
}

struct RepTruth {
    delta: f64,
    delta_g: f64,
    lambda: f64,
    g: Vec<f64>,
}

fn truth_once(
    setting: Setting,
    n: usize,
    rng: &mut ChaCha20Rng,
    grid: &Grid,
    opts: &DgpOptions,
) -> Result<RepTruth> {
    let units = draw_units(setting, n, rng, opts);
    let s0: Vec<f64> = units.iter().map(|u| u.po.s0).collect();
    let s1: Vec<f64> = units.iter().map(|u| u.po.s1).collect();
    let y0: Vec<f64> = units.iter().map(|u| u.po.y0).collect();
    let y1: Vec<f64> = units.iter().map(|u| u.po.y1).collect();
    let pooled: Vec<f64> = s0.iter().chain(&s1).copied().collect();
    let h = 1.06 * std_dev(&pooled) * (n as f64).powf(-0.2);
    let (f0, mut m0, fl0) = smooth(&s0, &y0, grid, h);
    let (f1, mut m1, fl1) = smooth(&s1, &y1, grid, h);
    fill_nearest(&mut m0, &fl0)?;
    fill_nearest(&mut m1, &fl1)?;
    let m = [m0, m1];
    let p = arm_probabilities(&f0, &f1);
    let lambda = lambda_from_parts(grid, &m, &f0, &p, &[fl0, fl1])?;
    let t = transform_from_parts(grid, &m, &p, lambda);
    let nf = n as f64;
    let delta = y1.iter().zip(&y0).map(|(a, b)| a - b).sum::<f64>() / nf;
    let delta_g = s1
        .iter()
        .zip(&s0)
        .map(|(&a, &b)| t.eval(a) - t.eval(b))
        .sum::<f64>()
        / nf;
    Ok(RepTruth {
        delta,
        delta_g,
        lambda,
        g: t.g,
    })
}

/// Average over `reps` independent samples of size `n` of the effect on the
/// outcome, the effect on the optimal transformation built from kernel
/// smooths of each arm's potential pairs, and that transformation on `grid`.
pub fn monte_carlo_truth(
    setting: Setting,
    n: usize,
    reps: usize,
    grid: &Grid,
    seed: u64,
    opts: &DgpOptions,
) -> Result<TruthValues> {
    if n < MIN_TRUTH_SAMPLE {
        return Err(Error::SampleTooSmall {
            required: MIN_TRUTH_SAMPLE,
            actual: n,
        });
    }
    if reps == 0 {
        return Err(Error::InvalidConfig(
            "at least one replication is needed".into(),
        ));
    }
    let mut delta = 0.0;
    let mut delta_g = 0.0;
    let mut lambda = 0.0;
    let mut g = vec![0.0; grid.len()];
    for rep in 0..reps {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64);
        let r = truth_once(setting, n, &mut rng, grid, opts)?;
        delta += r.delta;
        delta_g += r.delta_g;
        lambda += r.lambda;
        g.iter_mut().zip(&r.g).for_each(|(a, b)| *a += b);
    }
    let k = reps as f64;
    delta /= k;
    delta_g /= k;
    g.iter_mut().for_each(|v| *v /= k);
    Ok(TruthValues {
        delta,
        delta_g,
        pte: delta_g / delta,
        lambda: lambda / k,
        grid: grid.clone(),
        g_curve: g,
    })
}

//! Varying-coefficient regression of Y on (1, X) localized in S.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipw::fill_nearest;
use crate::kernel::Grid;
use crate::linalg::SymMatrix;
use crate::propensity::expit;

const LOCAL_RIDGE: f64 = 1e-8;
const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 50;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Identity,
    Logit,
}

impl Link {
    pub fn apply(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Logit => expit(eta),
        }
    }
}

impl std::str::FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Link::Identity),
            "logit" => Ok(Link::Logit),
            other => Err(Error::InvalidConfig(format!("unknown link '{other}'"))),
        }
    }
}

/// Coefficient curves `beta(s)` on the surrogate grid; the first entry of
/// each vector is the intercept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaryingCoefficients {
    pub grid: Grid,
    pub beta: Vec<Vec<f64>>,
    /// Grid points with too little local data or a failed solve; their
    /// coefficients are copied from the nearest solved point.
    pub flagged: Vec<bool>,
    pub link: Link,
}

impl VaryingCoefficients {
    /// Linearly interpolated coefficients, constant beyond the grid ends.
    pub fn coefficients_at(&self, s: f64) -> Vec<f64> {
        let (k, t) = self.grid.bracket(s);
        if t == 0.0 {
            return self.beta[k].clone();
        }
        if t == 1.0 {
            return self.beta[k + 1].clone();
        }
        self.beta[k]
            .iter()
            .zip(&self.beta[k + 1])
            .map(|(a, b)| a * (1.0 - t) + b * t)
            .collect()
    }

    /// Linear predictor `beta(s)^T (1, x)`.
    pub fn linear_predictor(&self, s: f64, x: &[f64]) -> f64 {
        let b = self.coefficients_at(s);
        b[0] + b[1..].iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
    }
}

/// `psi_m(s, x) = M(beta(s)^T (1, x))`.
pub fn psi_m(fit: &VaryingCoefficients, s: f64, x: &[f64]) -> f64 {
    fit.link.apply(fit.linear_predictor(s, x))
}

/// Fit from the arm's design rows (intercept first), outcomes, case weights
/// and the arm's rows of the surrogate kernel matrix (`n_a x grid`).
pub(crate) fn fit_vglm_kernel(
    rows: &Array2<f64>,
    y: &[f64],
    v: &[f64],
    kmat: &Array2<f64>,
    grid: &Grid,
    h: f64,
    link: Link,
) -> Result<VaryingCoefficients> {
    let n = rows.nrows();
    let k = rows.ncols();
    let g = grid.len();
    let tri = k * (k + 1) / 2;
    // per record: weighted upper-triangle outer products, x*y and the weight
    let width = tri + k + 1;
    let mut stats = Array2::<f64>::zeros((n, width));
    for i in 0..n {
        let r = rows.row(i);
        let mut c = 0;
        for a in 0..k {
            for b in a..k {
                stats[[i, c]] = v[i] * r[a] * r[b];
                c += 1;
            }
        }
        for a in 0..k {
            stats[[i, tri + a]] = v[i] * r[a] * y[i];
        }
        stats[[i, tri + k]] = v[i];
    }
    let local = kmat.t().dot(&stats);
    let ess_scale = h * SQRT_2PI;
    let min_ess = (k + 1) as f64;

    let mut beta = vec![vec![0.0; k]; g];
    let mut flagged = vec![false; g];
    let ess: Vec<f64> = (0..g).map(|j| local[[j, tri + k]] * ess_scale).collect();

    match link {
        Link::Identity => {
            for j in 0..g {
                if ess[j] < min_ess {
                    flagged[j] = true;
                    continue;
                }
                let mut xtx = SymMatrix::zeros(k);
                let mut c = 0;
                for a in 0..k {
                    for b in a..k {
                        xtx.data[a * k + b] = local[[j, c]];
                        c += 1;
                    }
                }
                xtx.mirror();
                let xty: Vec<f64> = (0..k).map(|a| local[[j, tri + a]]).collect();
                let finite = |b: &Vec<f64>| b.iter().all(|x| x.is_finite());
                let solved = xtx.solve(&xty, 1e-15).filter(finite).or_else(|| {
                    // near-singular: retry with a small ridge
                    let mut r = xtx.clone();
                    r.add_diagonal(LOCAL_RIDGE * xtx.trace() / k as f64);
                    r.solve(&xty, 1e-15).filter(finite)
                });
                match solved {
                    Some(b) => beta[j] = b,
                    None => flagged[j] = true,
                }
            }
        }
        Link::Logit => {
            let start = (0..g)
                .max_by(|&a, &b| ess[a].total_cmp(&ess[b]))
                .expect("grid is nonempty");
            let mut order: Vec<usize> = (start..g).collect();
            order.extend((0..start).rev());
            let mut warm: Option<Vec<f64>> = None;
            for (pos, &j) in order.iter().enumerate() {
                if pos == g - start {
                    // switch direction: restart from the anchor point
                    warm = (!flagged[start]).then(|| beta[start].clone());
                }
                if ess[j] < min_ess {
                    flagged[j] = true;
                    continue;
                }
                let w: Vec<f64> = (0..n).map(|i| v[i] * kmat[[i, j]]).collect();
                let init = warm.clone().unwrap_or_else(|| {
                    let tw: f64 = w.iter().sum();
                    let ybar = w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / tw;
                    let mut b0 = vec![0.0; k];
                    let p = ybar.clamp(1e-3, 1.0 - 1e-3);
                    b0[0] = (p / (1.0 - p)).ln();
                    b0
                });
                match local_logit(rows, y, &w, init) {
                    Some(b) => {
                        warm = Some(b.clone());
                        beta[j] = b;
                    }
                    None => flagged[j] = true,
                }
            }
        }
    }

    if flagged.iter().all(|&f| f) {
        return Err(Error::VglmFailure);
    }
    for l in 0..k {
        let mut col: Vec<f64> = beta.iter().map(|b| b[l]).collect();
        fill_nearest(&mut col, &flagged).map_err(|_| Error::VglmFailure)?;
        for (b, c) in beta.iter_mut().zip(col) {
            b[l] = c;
        }
    }
    Ok(VaryingCoefficients {
        grid: grid.clone(),
        beta,
        flagged,
        link,
    })
}

/// Newton iteration on the kernel-weighted logistic estimating equation.
fn local_logit(rows: &Array2<f64>, y: &[f64], w: &[f64], init: Vec<f64>) -> Option<Vec<f64>> {
    let n = rows.nrows();
    let k = rows.ncols();
    let total: f64 = w.iter().sum();
    let mut beta = init;
    for _ in 0..NEWTON_MAX_ITER {
        let mut score = vec![0.0; k];
        let mut info = SymMatrix::zeros(k);
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            let r = rows.row(i);
            let r = r.as_slice().expect("row-major design");
            let eta: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = expit(eta);
            for a in 0..k {
                score[a] += w[i] * r[a] * (y[i] - p);
            }
            info.add_outer_upper(r, w[i] * p * (1.0 - p));
        }
        info.mirror();
        let max_score = score.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if max_score / total < NEWTON_TOL {
            return Some(beta);
        }
        let ridge = LOCAL_RIDGE * info.trace() / k as f64;
        info.add_diagonal(ridge);
        let step = info.solve(&score, 1e-15)?;
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if beta.iter().any(|b| !b.is_finite() || b.abs() > 1e3) {
            return None;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::kernel_matrix;

    fn setup(n: usize, y: impl Fn(f64, f64) -> f64) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
        let s: Vec<f64> = (0..n).map(|i| (i as f64 * 0.61).sin() * 2.0).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 1.37).cos()).collect();
        let rows = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { 1.0 } else { x[i] });
        let yv = s.iter().zip(&x).map(|(&s, &x)| y(s, x)).collect();
        (rows, yv, s)
    }

    #[test]
    fn exact_linear_model() {
        let (rows, y, s) = setup(60, |_, x| 2.0 + 3.0 * x);
        let grid = Grid::covering(&s, 51, 0.05).unwrap();
        let k = kernel_matrix(&s, &grid, 0.4).unwrap();
        let fit = fit_vglm_kernel(&rows, &y, &[1.0; 60], &k, &grid, 0.4, Link::Identity).unwrap();
        for (b, f) in fit.beta.iter().zip(&fit.flagged) {
            if !f {
                assert!(
                    (b[0] - 2.0).abs() < 1e-6 && (b[1] - 3.0).abs() < 1e-6,
                    "{b:?}"
                );
            }
        }
    }

    #[test]
    fn zero_column_gets_zero_coefficient() {
        let (rows, y, s) = setup(40, |s, x| 1.0 + s + x);
        let mut r3 = Array2::zeros((40, 3));
        for i in 0..40 {
            r3[[i, 0]] = rows[[i, 0]];
            r3[[i, 1]] = rows[[i, 1]];
        }
        let grid = Grid::covering(&s, 51, 0.05).unwrap();
        let k = kernel_matrix(&s, &grid, 0.5).unwrap();
        let fit = fit_vglm_kernel(&r3, &y, &[1.0; 40], &k, &grid, 0.5, Link::Identity).unwrap();
        assert!(fit.beta.iter().all(|b| b[2] == 0.0));
    }

    #[test]
    fn psi_m_values() {
        let grid = Grid::new(0.0, 1.0, 51).unwrap();
        let fit = VaryingCoefficients {
            grid: grid.clone(),
            beta: vec![vec![1.0, 2.0]; 51],
            flagged: vec![false; 51],
            link: Link::Identity,
        };
        assert!((psi_m(&fit, 0.3, &[3.0]) - 7.0).abs() < 1e-12);
        let logit = VaryingCoefficients {
            link: Link::Logit,
            beta: vec![vec![0.0, 0.0]; 51],
            ..fit.clone()
        };
        assert_eq!(psi_m(&logit, 0.5, &[1.0]), 0.5);
        let ramp = VaryingCoefficients {
            beta: (0..51).map(|k| vec![k as f64, 1.0 - k as f64]).collect(),
            ..fit
        };
        let a = grid.points()[10];
        let b = grid.points()[11];
        let mid = psi_m(&ramp, 0.5 * (a + b), &[2.0]);
        let ends = 0.5 * (psi_m(&ramp, a, &[2.0]) + psi_m(&ramp, b, &[2.0]));
        assert!((mid - ends).abs() < 1e-12);
    }

    #[test]
    fn logit_recovers_constant_coefficients() {
        let n = 400;
        let s: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64) * 2.0 - 1.0).collect();
        let x: Vec<f64> = (0..n)
            .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
            .collect();
        let rows = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { 1.0 } else { x[i] });
        // deterministic "probability" outcomes make the population solution exact
        let y: Vec<f64> = x.iter().map(|&x| expit(0.5 - 1.2 * x)).collect();
        let grid = Grid::covering(&s, 51, 0.05).unwrap();
        let k = kernel_matrix(&s, &grid, 0.3).unwrap();
        let fit = fit_vglm_kernel(&rows, &y, &vec![1.0; n], &k, &grid, 0.3, Link::Logit).unwrap();
        for b in &fit.beta {
            assert!(
                (b[0] - 0.5).abs() < 1e-6 && (b[1] + 1.2).abs() < 1e-6,
                "{b:?}"
            );
        }
    }
}

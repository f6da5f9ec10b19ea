//! Logistic propensity model fitted by case-weighted maximum likelihood, and
//! the inverse probability weights derived from it.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

pub const DEFAULT_CLIP: f64 = 0.01;
const SEPARATION_BOUND: f64 = 30.0;
const MAX_ITER: usize = 100;

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^x) without overflow
#[inline]
fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityFit {
    /// Coefficients on the logit scale, in basis order.
    pub alpha: Vec<f64>,
    pub basis: BasisSpec,
    /// Fitted `P(A = 1 | X)` per record, unclipped.
    pub fitted_pi1: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Probabilities are clipped to `[clip, 1 - clip]` before inversion.
    pub clip: f64,
}

impl PropensityFit {
    /// Propensity fixed at `pi1` for every record.
    pub fn constant(n: usize, pi1: f64, clip: f64) -> Self {
        PropensityFit {
            alpha: vec![(pi1 / (1.0 - pi1)).ln()],
            basis: BasisSpec {
                terms: Vec::new(),
                intercept: true,
            },
            fitted_pi1: vec![pi1; n],
            converged: true,
            iterations: 0,
            clip,
        }
    }

    /// Propensity equal to the observed treated fraction.
    pub fn empirical_fraction(data: &Dataset, clip: f64) -> Self {
        let (_, n1) = data.arm_sizes();
        Self::constant(data.len(), n1 as f64 / data.len() as f64, clip)
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = clip;
        self
    }
}

/// Per-record inverse probability weights for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub arm: u8,
    pub omega: Vec<f64>,
}

impl WeightVector {
    /// Elementwise product with case weights.
    pub fn scaled(&self, case_weights: &[f64]) -> WeightVector {
        WeightVector {
            arm: self.arm,
            omega: self
                .omega
                .iter()
                .zip(case_weights)
                .map(|(w, v)| w * v)
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.omega.iter().sum()
    }
}

/// Fit `P(A = 1 | X) = expit(alpha^T Phi(X))` by Newton-Raphson with step
/// halving. `case_weights = None` means unit weights.
pub fn fit_logistic(
    data: &Dataset,
    basis: &BasisSpec,
    case_weights: Option<&[f64]>,
) -> Result<PropensityFit> {
    let design = basis.design(data)?;
    fit_logistic_design(&design, data.a(), case_weights, basis.clone(), DEFAULT_CLIP)
}

pub(crate) fn fit_logistic_design(
    design: &Array2<f64>,
    a: &[u8],
    case_weights: Option<&[f64]>,
    basis: BasisSpec,
    clip: f64,
) -> Result<PropensityFit> {
    let n = design.nrows();
    let k = design.ncols();
    if a.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: a.len(),
        });
    }
    let ones;
    let w: &[f64] = match case_weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: w.len(),
                });
            }
            w
        }
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    if k == 0 {
        return Err(Error::SingularDesign);
    }

    // standardize non-intercept columns over rows that carry weight
    let intercept = basis.intercept;
    let active: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::SingularDesign);
    }
    let mut center = vec![0.0; k];
    let mut scale = vec![1.0; k];
    let first = usize::from(intercept);
    for j in first..k {
        let col: Vec<f64> = active.iter().map(|&i| design[[i, j]]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
        if intercept {
            if !(var > 0.0) {
                return Err(Error::SingularDesign);
            }
            center[j] = m;
            scale[j] = var.sqrt();
        } else {
            let rms = (col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64).sqrt();
            if !(rms > 0.0) {
                return Err(Error::SingularDesign);
            }
            scale[j] = rms;
        }
    }
    let z = Array2::from_shape_fn((n, k), |(i, j)| (design[[i, j]] - center[j]) / scale[j]);

    let loglik = |beta: &[f64]| -> f64 {
        active
            .iter()
            .map(|&i| {
                let eta: f64 = (0..k).map(|j| z[[i, j]] * beta[j]).sum();
                w[i] * (f64::from(a[i]) * eta - log1pexp(eta))
            })
            .sum()
    };

    let mut beta = vec![0.0; k];
    let mut ll = loglik(&beta);
    let mut converged = false;
    let mut iterations = 0;
    let mut row = vec![0.0; k];
    while iterations < MAX_ITER {
        let mut score = vec![0.0; k];
        let mut info = SymMatrix::zeros(k);
        for &i in &active {
            for j in 0..k {
                row[j] = z[[i, j]];
            }
            let eta: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum();
            let p = expit(eta);
            let r = w[i] * (f64::from(a[i]) - p);
            for j in 0..k {
                score[j] += r * row[j];
            }
            info.add_outer_upper(&row, w[i] * p * (1.0 - p));
        }
        info.mirror();
        let max_score = score.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if max_score < 1e-8 {
            converged = true;
            break;
        }
        let step = match info.solve(&score, 1e-14) {
            Some(s) => s,
            None => {
                let big = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
                return Err(if big > SEPARATION_BOUND / 2.0 {
                    Error::Separation(big)
                } else {
                    Error::SingularDesign
                });
            }
        };
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let cll = loglik(&cand);
            if cll.is_finite() && cll >= ll - 1e-12 * ll.abs().max(1.0) {
                accepted = Some((cand, cll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cll)) = accepted else {
            break;
        };
        let rel = (cll - ll).abs() / (ll.abs() + 1e-10);
        beta = cand;
        ll = cll;
        let big = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        if big > SEPARATION_BOUND {
            return Err(Error::Separation(big));
        }
        if rel < 1e-10 {
            converged = true;
            break;
        }
    }
    if !converged {
        let big = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        if big > SEPARATION_BOUND / 2.0 {
            return Err(Error::Separation(big));
        }
        return Err(Error::SingularDesign);
    }

    let fitted_pi1: Vec<f64> = (0..n)
        .map(|i| expit((0..k).map(|j| z[[i, j]] * beta[j]).sum()))
        .collect();
    // back to the original design scale
    let mut alpha: Vec<f64> = (0..k).map(|j| beta[j] / scale[j]).collect();
    if intercept {
        let shift: f64 = (1..k).map(|j| alpha[j] * center[j]).sum();
        alpha[0] -= shift;
    }
    Ok(PropensityFit {
        alpha,
        basis,
        fitted_pi1,
        converged,
        iterations,
        clip,
    })
}

/// `omega_ai = I(A_i = a) / pi_a(X_i)` with `pi` clipped to `[clip, 1 - clip]`.
pub fn ipw_weights(fit: &PropensityFit, data: &Dataset, arm: u8) -> Result<WeightVector> {
    if fit.fitted_pi1.len() != data.len() {
        return Err(Error::Dimension {
            expected: data.len(),
            actual: fit.fitted_pi1.len(),
        });
    }
    Ok(weights_from_pi(&fit.fitted_pi1, data.a(), arm, fit.clip))
}

pub(crate) fn weights_from_pi(pi1: &[f64], a: &[u8], arm: u8, clip: f64) -> WeightVector {
    let omega = pi1
        .iter()
        .zip(a)
        .map(|(&p, &ai)| {
            if ai != arm {
                return 0.0;
            }
            let p = p.clamp(clip, 1.0 - clip);
            if arm == 1 {
                1.0 / p
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect();
    WeightVector { arm, omega }
}

/// Score of the case-weighted log-likelihood on the original design scale.
pub fn logistic_score(
    design: &Array2<f64>,
    a: &[u8],
    case_weights: Option<&[f64]>,
    alpha: &[f64],
) -> Vec<f64> {
    let k = design.ncols();
    let mut score = vec![0.0; k];
    for i in 0..design.nrows() {
        let w = case_weights.map_or(1.0, |w| w[i]);
        let eta: f64 = (0..k).map(|j| design[[i, j]] * alpha[j]).sum();
        let r = w * (f64::from(a[i]) - expit(eta));
        for j in 0..k {
            score[j] += r * design[[i, j]];
        }
    }
    score
}

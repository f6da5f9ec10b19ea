//! Kernel estimate of the conditional density of S given the fitted index.

use serde::{Deserialize, Serialize};

use super::mrc::IndexCoefficients;
use crate::kernel::kh;

const INDEX_DENOMINATOR_FLOOR: f64 = 1e-12;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Double-kernel ratio estimator of `S | X` for one arm. Records carry the
/// case weights they were fitted with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalDensity {
    pub index: IndexCoefficients,
    /// Index-kernel bandwidth.
    pub zeta: f64,
    /// Surrogate-kernel bandwidth.
    pub h: f64,
    pub(crate) u: Vec<f64>,
    pub(crate) s: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

impl ConditionalDensity {
    pub fn new(
        index: IndexCoefficients,
        rows: &[Vec<f64>],
        s: &[f64],
        case_weights: &[f64],
        zeta: f64,
        h: f64,
    ) -> Self {
        let u = rows.iter().map(|r| index.index(r)).collect();
        ConditionalDensity {
            index,
            zeta,
            h,
            u,
            s: s.to_vec(),
            v: case_weights.to_vec(),
        }
    }

    pub fn index_values(&self) -> &[f64] {
        &self.u
    }

    /// Normalized index-kernel weights of the arm records at index value
    /// `u0`. When every weight underflows the nearest weighted record's index
    /// is used instead and the flag is set.
    pub fn index_weights(&self, u0: f64) -> (Vec<f64>, bool) {
        let mut w = vec![0.0; self.u.len()];
        let flagged = self.index_weights_into(u0, &mut w);
        (w, flagged)
    }

    /// [`Self::index_weights`] written into `out`; returns the flag.
    pub(crate) fn index_weights_into(&self, u0: f64, out: &mut [f64]) -> bool {
        let inv = 1.0 / self.zeta;
        for ((o, &u), &v) in out.iter_mut().zip(&self.u).zip(&self.v) {
            let z = (u - u0) * inv;
            *o = v * (-0.5 * z * z).exp();
        }
        let total: f64 = out.iter().sum();
        if total * inv * FRAC_1_SQRT_2PI >= INDEX_DENOMINATOR_FLOOR {
            let r = 1.0 / total;
            out.iter_mut().for_each(|x| *x *= r);
            return false;
        }
        let nearest = self
            .u
            .iter()
            .zip(&self.v)
            .filter(|(_, &v)| v > 0.0)
            .map(|(&u, _)| u)
            .min_by(|a, b| (a - u0).abs().total_cmp(&(b - u0).abs()));
        match nearest {
            Some(u1) if u1 != u0 => {
                self.index_weights_into(u1, out);
            }
            _ => out.iter_mut().for_each(|x| *x = 0.0),
        }
        true
    }

    /// `psi_f(s; x)` at index value `u0 = gamma^T x`.
    pub fn density_at_index(&self, s: f64, u0: f64) -> f64 {
        let (w, _) = self.index_weights(u0);
        w.iter()
            .zip(&self.s)
            .map(|(wi, si)| wi * kh(si - s, self.h))
            .sum()
    }

    pub fn density(&self, s: f64, x: &[f64]) -> f64 {
        self.density_at_index(s, self.index.index(x))
    }
}

/// `psi_f(s; x)` for an arm given its records' index-design rows and
/// surrogate values, with unit case weights.
pub fn conditional_density(
    fit: &IndexCoefficients,
    rows: &[Vec<f64>],
    s_arm: &[f64],
    s: f64,
    x: &[f64],
    h: f64,
    zeta: f64,
) -> f64 {
    let ones = vec![1.0; rows.len()];
    ConditionalDensity::new(fit.clone(), rows, s_arm, &ones, zeta, h).density(s, x)
}

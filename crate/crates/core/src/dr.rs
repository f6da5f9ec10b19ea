//! Doubly robust (augmented IPW) estimation of the surrogate transformation
//! and the proportion of treatment effect explained.
//!
//! The augmentation terms are sums over all records of products of the
//! outcome-regression evaluators. For the identity link these sums factor
//! through the index-kernel weight matrix, so no `n x n_a x grid` tensor is
//! ever formed.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ipw::{
    arm_probabilities, fill_nearest, lambda_from_parts, transform_from_parts, ComponentCurves,
    EffectEstimates, Flavor, SurrogateTransform, DEGENERATE_DENOMINATOR,
};
use crate::kernel::{KernelConfig, SurrogateSmoother};
use crate::outcome::{ArmOutcomeModel, Link, OutcomeDesign, OutcomeRegressionFit};
use crate::propensity::{expit, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DrOptions {
    /// Weight-normalize the augmented means instead of dividing by `n`.
    pub hajek: bool,
}

/// Augmented curves for both arms on the surrogate grid.
#[derive(Debug, Clone)]
pub struct DrCurves {
    pub grid: crate::kernel::Grid,
    /// Augmented densities; may dip below zero where data are sparse.
    pub f: [Vec<f64>; 2],
    /// Augmented numerators of the conditional means.
    pub numerator: [Vec<f64>; 2],
    pub m: [Vec<f64>; 2],
    /// Arm probabilities from the densities clipped at zero.
    pub p: [Vec<f64>; 2],
    pub flagged: [Vec<bool>; 2],
}

impl DrCurves {
    pub fn as_components(&self) -> ComponentCurves {
        ComponentCurves {
            grid: self.grid.clone(),
            m: self.m.clone(),
            f: self.f.clone(),
            p: self.p.clone(),
            flagged: self.flagged.clone(),
            flavor: Flavor::Dr,
        }
    }

    /// Number of grid points where an augmented density is negative.
    pub fn negative_density_points(&self) -> usize {
        self.f.iter().flatten().filter(|&&v| v < 0.0).count()
    }
}

/// Index-kernel weights and regression coefficients of one arm arranged for
/// batch evaluation over all records.
pub(crate) struct ArmBatch {
    /// `n x n_a`: row `i` holds the normalized index weights at `X_i`.
    w: Array2<f64>,
    /// `n_a x grid`: surrogate kernel rows of the arm's records.
    kmat: Array2<f64>,
    /// Kernel rows rescaled to unit quadrature mass, so the conditional
    /// density integrates to one over the grid.
    kint: Array2<f64>,
    /// `grid x (q + 1)`
    beta: Array2<f64>,
    link: Link,
    /// Logit link only: `psi_f` and `psi_m` at every record and grid point.
    dense: Option<(Array2<f64>, Array2<f64>)>,
}

impl ArmBatch {
    pub fn new(
        model: &ArmOutcomeModel,
        design: &OutcomeDesign,
        smoother: &SurrogateSmoother,
        members: &[usize],
    ) -> Self {
        let n = design.index_rows.len();
        let na = members.len();
        let dens = &model.density;
        let mut w = Array2::zeros((n, na));
        for (i, row) in design.index_rows.iter().enumerate() {
            let out = w.row_mut(i).into_slice().expect("standard layout");
            dens.index_weights_into(dens.index.index(row), out);
        }
        let kmat = smoother.kmat.select(Axis(0), members);
        let tw = Array1::from(smoother.grid.trapezoid_weights());
        let mass = kmat.dot(&tw);
        let mut kint = kmat.clone();
        for (mut row, &m) in kint.outer_iter_mut().zip(&mass) {
            if m > 0.0 {
                row /= m;
            }
        }
        let coef = &model.coefficients;
        let q = coef.beta[0].len();
        let beta = Array2::from_shape_fn((coef.beta.len(), q), |(k, l)| coef.beta[k][l]);
        let dense = match coef.link {
            Link::Identity => None,
            Link::Logit => {
                let psi_f = w.dot(&kmat);
                let eta = design.regression.dot(&beta.t());
                Some((psi_f, eta.mapv(expit)))
            }
        };
        ArmBatch {
            w,
            kmat,
            kint,
            beta,
            link: coef.link,
            dense,
        }
    }

    /// `(sum_i c_i psi_f(s_k, X_i), sum_i c_i psi_m(s_k, X_i) psi_f(s_k, X_i))`.
    fn augmentation(&self, c: &Array1<f64>, reg: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
        match (&self.link, &self.dense) {
            (Link::Identity, _) => {
                // column 0 carries c, the rest c * R
                let q = reg.ncols();
                let mut rc = Array2::zeros((c.len(), q + 1));
                for (i, mut row) in rc.outer_iter_mut().enumerate() {
                    row[0] = c[i];
                    for l in 0..q {
                        row[l + 1] = c[i] * reg[[i, l]];
                    }
                }
                let e = rc.t().dot(&self.w).dot(&self.kmat);
                let f_aug = e.row(0).to_vec();
                let m_aug = (0..self.beta.nrows())
                    .map(|k| (0..q).map(|l| self.beta[[k, l]] * e[[l + 1, k]]).sum())
                    .collect();
                (f_aug, m_aug)
            }
            (Link::Logit, Some((pf, pm))) => {
                let f_aug = pf.t().dot(c).to_vec();
                let prod = pf * pm;
                (f_aug, prod.t().dot(c).to_vec())
            }
            (Link::Logit, None) => unreachable!("logit batches carry dense evaluators"),
        }
    }

    /// `zeta_a(X_i)` for every record.
    fn zeta_m(&self, reg: &Array2<f64>, tw: &Array1<f64>) -> Vec<f64> {
        match (&self.link, &self.dense) {
            (Link::Identity, _) => {
                let bint = self
                    .kint
                    .dot(&(&self.beta * &tw.view().insert_axis(Axis(1))));
                let wb = self.w.dot(&bint);
                (&wb * reg).sum_axis(Axis(1)).to_vec()
            }
            (Link::Logit, Some((_, pm))) => (self.w.dot(&self.kint) * pm).dot(tw).to_vec(),
            (Link::Logit, None) => unreachable!("logit batches carry dense evaluators"),
        }
    }

    /// `zeta_{a,g}(X_i)` for every record.
    fn zeta_g(&self, g: &[f64], tw: &Array1<f64>) -> Vec<f64> {
        let gw = Array1::from(g.to_vec()) * tw;
        let gint = self.kint.dot(&gw);
        self.w.dot(&gint).to_vec()
    }
}

/// Everything needed to assemble the estimator on one weighted sample.
pub(crate) struct DrAssembly<'a> {
    y: &'a [f64],
    s: &'a [f64],
    smoother: &'a SurrogateSmoother,
    regression: &'a Array2<f64>,
    batches: [ArmBatch; 2],
    /// Unscaled inverse probability weights per arm.
    omega: [&'a [f64]; 2],
    v: &'a [f64],
    zeta_m: [Vec<f64>; 2],
}

impl<'a> DrAssembly<'a> {
    pub fn new(
        data: &'a Dataset,
        smoother: &'a SurrogateSmoother,
        design: &'a OutcomeDesign,
        fit: &OutcomeRegressionFit,
        omega: [&'a [f64]; 2],
        v: &'a [f64],
    ) -> Result<Self> {
        let n = data.len();
        for o in omega.iter() {
            if o.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: o.len(),
                });
            }
        }
        if v.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: v.len(),
            });
        }
        let batches = [0u8, 1].map(|arm| {
            let members = data.arm_indices(arm);
            ArmBatch::new(&fit.arms[arm as usize], design, smoother, &members)
        });
        let tw = Array1::from(smoother.grid.trapezoid_weights());
        let zeta_m = [
            batches[0].zeta_m(&design.regression, &tw),
            batches[1].zeta_m(&design.regression, &tw),
        ];
        Ok(DrAssembly {
            y: data.y(),
            s: data.s(),
            smoother,
            regression: &design.regression,
            batches,
            omega,
            v,
            zeta_m,
        })
    }

    pub fn curves(&self) -> Result<DrCurves> {
        let n = self.y.len();
        let g = self.smoother.grid.len();
        let inv_n = 1.0 / n as f64;
        let mut f: [Vec<f64>; 2] = [vec![0.0; g], vec![0.0; g]];
        let mut num: [Vec<f64>; 2] = [vec![0.0; g], vec![0.0; g]];
        let mut m: [Vec<f64>; 2] = [vec![0.0; g], vec![0.0; g]];
        let mut flagged: [Vec<bool>; 2] = [vec![false; g], vec![false; g]];
        // columns: v w_0, v w_0 y, v w_1, v w_1 y
        let mut stats = Array2::zeros((n, 4));
        for (i, mut row) in stats.outer_iter_mut().enumerate() {
            for arm in 0..2 {
                let wv = self.v[i] * self.omega[arm][i];
                row[2 * arm] = wv;
                row[2 * arm + 1] = wv * self.y[i];
            }
        }
        let sums = self.smoother.kmat.t().dot(&stats);
        for arm in 0..2 {
            let om = self.omega[arm];
            let c = Array1::from_shape_fn(n, |i| self.v[i] * (om[i] - 1.0));
            let (f_aug, m_aug) = self.batches[arm].augmentation(&c, self.regression);
            for k in 0..g {
                f[arm][k] = (sums[[k, 2 * arm]] - f_aug[k]) * inv_n;
                num[arm][k] = (sums[[k, 2 * arm + 1]] - m_aug[k]) * inv_n;
                if f[arm][k].abs() > DEGENERATE_DENOMINATOR {
                    m[arm][k] = num[arm][k] / f[arm][k];
                } else {
                    flagged[arm][k] = true;
                }
            }
            fill_nearest(&mut m[arm], &flagged[arm])?;
        }
        let clipped: [Vec<f64>; 2] = [0, 1].map(|a| f[a].iter().map(|v| v.max(0.0)).collect());
        let p = arm_probabilities(&clipped[0], &clipped[1]);
        Ok(DrCurves {
            grid: self.smoother.grid.clone(),
            f,
            numerator: num,
            m,
            p,
            flagged,
        })
    }

    /// Augmented means `(mu_a, mu_{a,g})` for both arms.
    pub fn effects(
        &self,
        transform: &SurrogateTransform,
        options: DrOptions,
    ) -> Result<EffectEstimates> {
        let n = self.y.len();
        let tw = Array1::from(self.smoother.grid.trapezoid_weights());
        let gs: Vec<f64> = self.s.iter().map(|&s| transform.eval(s)).collect();
        let mut mu = [0.0; 2];
        let mut mu_g = [0.0; 2];
        for arm in 0..2 {
            let on_grid: Vec<f64> = self
                .smoother
                .grid
                .points()
                .iter()
                .map(|&s| transform.eval(s))
                .collect();
            let zeta_g = self.batches[arm].zeta_g(&on_grid, &tw);
            let zeta_m = &self.zeta_m[arm];
            let om = self.omega[arm];
            mu[arm] = augmented_mean(self.y, zeta_m, om, self.v, n, options);
            mu_g[arm] = augmented_mean(&gs, &zeta_g, om, self.v, n, options);
            if !(mu[arm].is_finite() && mu_g[arm].is_finite()) {
                return Err(Error::DegenerateArm(arm as u8));
            }
        }
        EffectEstimates::from_deltas(mu[1] - mu[0], mu_g[1] - mu_g[0])
    }
}

fn augmented_mean(
    u: &[f64],
    zeta: &[f64],
    omega: &[f64],
    v: &[f64],
    n: usize,
    options: DrOptions,
) -> f64 {
    if options.hajek {
        let mut base = 0.0;
        let mut top = 0.0;
        let mut tot = 0.0;
        for i in 0..n {
            base += v[i] * zeta[i];
            let w = v[i] * omega[i];
            top += w * (u[i] - zeta[i]);
            tot += w;
        }
        base / n as f64 + top / tot
    } else {
        let mut acc = 0.0;
        for i in 0..n {
            acc += v[i] * (u[i] * omega[i] - (omega[i] - 1.0) * zeta[i]);
        }
        acc / n as f64
    }
}

/// Augmented curves with unit case weights.
pub fn dr_curves(
    data: &Dataset,
    w0: &WeightVector,
    w1: &WeightVector,
    or_fit: &OutcomeRegressionFit,
    k: &KernelConfig,
) -> Result<DrCurves> {
    let smoother = SurrogateSmoother::new(data.s(), k)?;
    let design = OutcomeDesign::new(data, &or_fit.spec)?;
    let ones = vec![1.0; data.len()];
    DrAssembly::new(
        data,
        &smoother,
        &design,
        or_fit,
        [&w0.omega, &w1.omega],
        &ones,
    )?
    .curves()
}

/// `g_DR = m_DR + lambda_DR P_0,DR`, with the raw augmented control density
/// in the quadrature for `lambda_DR`.
pub fn dr_transform(c: &DrCurves) -> Result<SurrogateTransform> {
    let lambda = lambda_from_parts(&c.grid, &c.m, &c.f[0], &c.p, &c.flagged)?;
    Ok(transform_from_parts(&c.grid, &c.m, &c.p, lambda))
}

/// Augmented effect estimates with unit case weights and `1/n` means.
pub fn dr_effects(
    data: &Dataset,
    w0: &WeightVector,
    w1: &WeightVector,
    or_fit: &OutcomeRegressionFit,
    g: &SurrogateTransform,
) -> Result<EffectEstimates> {
    let k = or_fit.kernel;
    let smoother = SurrogateSmoother::on_grid(data.s(), g.grid.clone(), k.bandwidth_h)?;
    let design = OutcomeDesign::new(data, &or_fit.spec)?;
    let ones = vec![1.0; data.len()];
    DrAssembly::new(
        data,
        &smoother,
        &design,
        or_fit,
        [&w0.omega, &w1.omega],
        &ones,
    )?
    .effects(g, DrOptions::default())
}

/// Full doubly robust estimate on one dataset.
#[derive(Debug, Clone)]
pub struct DrEstimate {
    pub curves: DrCurves,
    pub transform: SurrogateTransform,
    pub effects: EffectEstimates,
}

pub(crate) fn estimate_dr_with(
    assembly: &DrAssembly<'_>,
    options: DrOptions,
) -> Result<DrEstimate> {
    let curves = assembly.curves()?;
    let transform = dr_transform(&curves)?;
    let effects = assembly.effects(&transform, options)?;
    Ok(DrEstimate {
        curves,
        transform,
        effects,
    })
}

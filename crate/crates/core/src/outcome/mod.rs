//! Outcome-regression nuisance models used by the doubly robust estimator:
//! a single-index model for `S | X` with a kernel conditional density, and a
//! varying-coefficient model for `Y | S, X`.

mod density;
mod mrc;
mod vglm;

pub use density::{conditional_density, ConditionalDensity};
pub use mrc::{fit_mrc, rank_objective, IndexCoefficients, MIN_ARM_RECORDS};
pub use vglm::{psi_m, Link, VaryingCoefficients};

pub(crate) use mrc::{fit_rank_problem, refit_rank_problem, RankProblem};
pub(crate) use vglm::fit_vglm_kernel;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ipw::SurrogateTransform;
use crate::kernel::{default_index_bandwidth, trapz, KernelConfig, SurrogateSmoother};

/// Covariate sets and link for the two nuisance models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModelSpec {
    /// Covariates entering the single index for `S | X` (no intercept).
    pub index_basis: BasisSpec,
    /// Covariates of the varying-coefficient model; an intercept is always
    /// added.
    pub regression_basis: BasisSpec,
    pub link: Link,
    /// Overrides the default index-kernel bandwidth rule.
    pub index_bandwidth: Option<f64>,
}

impl OutcomeModelSpec {
    pub fn new(index_basis: BasisSpec, regression_basis: BasisSpec, link: Link) -> Self {
        OutcomeModelSpec {
            index_basis: BasisSpec {
                intercept: false,
                ..index_basis
            },
            regression_basis: BasisSpec {
                intercept: true,
                ..regression_basis
            },
            link,
            index_bandwidth: None,
        }
    }

    /// Same covariate columns, untransformed, for both models.
    pub fn linear<S: AsRef<str>>(columns: &[S], link: Link) -> Self {
        Self::new(
            BasisSpec::linear(columns, false),
            BasisSpec::linear(columns, true),
            link,
        )
    }
}

/// Basis-expanded covariates of every record for both nuisance models.
#[derive(Debug, Clone)]
pub struct OutcomeDesign {
    pub index_rows: Vec<Vec<f64>>,
    /// Regression design with the intercept column first.
    pub regression: Array2<f64>,
}

impl OutcomeDesign {
    pub fn new(data: &Dataset, spec: &OutcomeModelSpec) -> Result<Self> {
        let spec = OutcomeModelSpec::new(
            spec.index_basis.clone(),
            spec.regression_basis.clone(),
            spec.link,
        );
        let index = spec.index_basis.design(data)?;
        if index.ncols() == 0 {
            return Err(Error::NoCovariates);
        }
        let regression = spec.regression_basis.design(data)?;
        Ok(OutcomeDesign {
            index_rows: index.outer_iter().map(|r| r.to_vec()).collect(),
            regression,
        })
    }

    /// Regression covariates of record `i`, without the intercept.
    pub fn regression_row(&self, i: usize) -> Vec<f64> {
        self.regression.row(i).iter().skip(1).copied().collect()
    }
}

/// Fitted nuisance models for one arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmOutcomeModel {
    pub arm: u8,
    pub density: ConditionalDensity,
    pub coefficients: VaryingCoefficients,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeRegressionFit {
    pub spec: OutcomeModelSpec,
    pub kernel: KernelConfig,
    pub arms: [ArmOutcomeModel; 2],
}

impl OutcomeRegressionFit {
    /// `psi_m(s, x)` with `x` the regression covariates (no intercept).
    pub fn psi_m(&self, arm: u8, s: f64, x: &[f64]) -> f64 {
        psi_m(&self.arms[arm as usize].coefficients, s, x)
    }

    /// `psi_f(s; x)` with `x` the index covariates.
    pub fn psi_f(&self, arm: u8, s: f64, x: &[f64]) -> f64 {
        self.arms[arm as usize].density.density(s, x)
    }

    /// `(zeta_{a,g}(x), zeta_a(x))` by trapezoid quadrature on the grid of
    /// `g`.
    pub fn zeta_integrals(
        &self,
        arm: u8,
        g: &SurrogateTransform,
        x_index: &[f64],
        x_regression: &[f64],
    ) -> (f64, f64) {
        let model = &self.arms[arm as usize];
        let u0 = model.density.index.index(x_index);
        let (w, _) = model.density.index_weights(u0);
        let pts = g.grid.points();
        let mut fg = Vec::with_capacity(pts.len());
        let mut fm = Vec::with_capacity(pts.len());
        for (k, &s) in pts.iter().enumerate() {
            let f: f64 = w
                .iter()
                .zip(&model.density.s)
                .map(|(wi, si)| wi * crate::kernel::kh(si - s, model.density.h))
                .sum();
            fg.push(g.g[k] * f);
            fm.push(psi_m(&model.coefficients, s, x_regression) * f);
        }
        (trapz(&g.grid, &fg), trapz(&g.grid, &fm))
    }
}

/// Fit both arms' nuisance models with optional case weights.
pub fn fit_outcome_regression(
    data: &Dataset,
    spec: &OutcomeModelSpec,
    k: &KernelConfig,
    case_weights: Option<&[f64]>,
) -> Result<OutcomeRegressionFit> {
    let design = OutcomeDesign::new(data, spec)?;
    let smoother = SurrogateSmoother::new(data.s(), k)?;
    let ones = vec![1.0; data.len()];
    let v = case_weights.unwrap_or(&ones);
    fit_outcome_with(data, spec, k, &design, &smoother, v, None)
}

/// Shared fitting path. With `warm` the index directions are polished from
/// the previous fit and its index bandwidths are reused.
pub(crate) fn fit_outcome_with(
    data: &Dataset,
    spec: &OutcomeModelSpec,
    k: &KernelConfig,
    design: &OutcomeDesign,
    smoother: &SurrogateSmoother,
    v: &[f64],
    warm: Option<&OutcomeRegressionFit>,
) -> Result<OutcomeRegressionFit> {
    let n = data.len();
    if v.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: v.len(),
        });
    }
    let fit_arm = |arm: u8| -> Result<ArmOutcomeModel> {
        let idx = data.arm_indices(arm);
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| design.index_rows[i].clone()).collect();
        let s: Vec<f64> = idx.iter().map(|&i| data.s()[i]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| data.y()[i]).collect();
        let va: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
        let problem = RankProblem::new(&rows, &s, &va, arm)?;
        let prev = warm.map(|w| &w.arms[arm as usize]);
        let index = match prev {
            Some(p) => refit_rank_problem(&problem, &p.density.index),
            None => fit_rank_problem(&problem),
        };
        let zeta = match (prev, spec.index_bandwidth) {
            (Some(p), _) => p.density.zeta,
            (None, Some(z)) => z,
            (None, None) => {
                let u: Vec<f64> = rows.iter().map(|r| index.index(r)).collect();
                default_index_bandwidth(&u, n, k.undersmooth_c0)?
            }
        };
        let density = ConditionalDensity::new(index, &rows, &s, &va, zeta, smoother.h);
        let reg = design.regression.select(Axis(0), &idx);
        let kmat = smoother.kmat.select(Axis(0), &idx);
        let coefficients =
            fit_vglm_kernel(&reg, &y, &va, &kmat, &smoother.grid, smoother.h, spec.link)?;
        Ok(ArmOutcomeModel {
            arm,
            density,
            coefficients,
        })
    };
    let arm0 = fit_arm(0)?;
    let arm1 = fit_arm(1)?;
    Ok(OutcomeRegressionFit {
        spec: spec.clone(),
        kernel: k.with_index_bandwidth(arm0.density.zeta).unwrap_or(*k),
        arms: [arm0, arm1],
    })
}

/// Varying-coefficient fit for one arm.
pub fn fit_vglm(
    data: &Dataset,
    regression_basis: &BasisSpec,
    arm: u8,
    k: &KernelConfig,
    link: Link,
    case_weights: Option<&[f64]>,
) -> Result<VaryingCoefficients> {
    let basis = BasisSpec {
        intercept: true,
        ..regression_basis.clone()
    };
    let design = basis.design(data)?;
    let smoother = SurrogateSmoother::new(data.s(), k)?;
    let idx = data.arm_indices(arm);
    let ones = vec![1.0; data.len()];
    let v = case_weights.unwrap_or(&ones);
    let y: Vec<f64> = idx.iter().map(|&i| data.y()[i]).collect();
    let va: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
    fit_vglm_kernel(
        &design.select(Axis(0), &idx),
        &y,
        &va,
        &smoother.kmat.select(Axis(0), &idx),
        &smoother.grid,
        smoother.h,
        link,
    )
}

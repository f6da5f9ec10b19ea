//! End-to-end estimation on one dataset under optional case weights.
//!
//! Everything that does not depend on the case weights (design matrices,
//! bandwidths, the surrogate grid and its kernel matrix) is prepared once and
//! shared by the base fit and every perturbation replicate.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::data::Dataset;
use crate::dr::{estimate_dr_with, DrAssembly, DrOptions};
use crate::error::{Error, Result};
use crate::ipw::{
    effects_from_values, g_hat, ipw_curves_with, lambda_hat, ComponentCurves, EffectEstimates,
    SurrogateTransform,
};
use crate::kernel::{
    KernelConfig, SurrogateSmoother, DEFAULT_C0, DEFAULT_GRID_PADDING, DEFAULT_GRID_SIZE,
};
use crate::outcome::{fit_outcome_with, OutcomeDesign, OutcomeModelSpec, OutcomeRegressionFit};
use crate::propensity::{fit_logistic_design, weights_from_pi, PropensityFit, DEFAULT_CLIP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ipw,
    Dr,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ipw => "ipw",
            EstimatorKind::Dr => "dr",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ipw" => Ok(EstimatorKind::Ipw),
            "dr" => Ok(EstimatorKind::Dr),
            other => Err(Error::InvalidConfig(format!("unknown estimator '{other}'"))),
        }
    }
}

/// How the propensity score is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PropensityModel {
    Logistic(BasisSpec),
    /// Fixed at the observed treated fraction, as under randomization.
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub propensity: PropensityModel,
    /// Required for the doubly robust estimator.
    pub outcome: Option<OutcomeModelSpec>,
    pub c0: f64,
    /// Overrides the default surrogate bandwidth rule.
    pub bandwidth: Option<f64>,
    pub grid_size: usize,
    pub grid_padding: f64,
    pub clip: f64,
    pub dr: DrOptions,
}

impl EstimatorConfig {
    pub fn new(propensity: PropensityModel, outcome: Option<OutcomeModelSpec>) -> Self {
        EstimatorConfig {
            propensity,
            outcome,
            c0: DEFAULT_C0,
            bandwidth: None,
            grid_size: DEFAULT_GRID_SIZE,
            grid_padding: DEFAULT_GRID_PADDING,
            clip: DEFAULT_CLIP,
            dr: DrOptions::default(),
        }
    }

    pub fn kernel_config(&self, n: usize) -> Result<KernelConfig> {
        let mut k = KernelConfig::for_sample(n, self.c0)?;
        if let Some(h) = self.bandwidth {
            k.bandwidth_h = h;
            k.index_bandwidth_zeta = h;
        }
        k.grid_size = self.grid_size;
        k.grid_padding = self.grid_padding;
        k.validate()?;
        Ok(k)
    }
}

/// One estimator's output on one (possibly reweighted) sample.
#[derive(Debug, Clone)]
pub struct PointEstimate {
    pub kind: EstimatorKind,
    pub effects: EffectEstimates,
    pub transform: SurrogateTransform,
    pub curves: ComponentCurves,
    pub propensity: PropensityFit,
    pub outcome: Option<OutcomeRegressionFit>,
}

/// Weight-independent state for repeated estimation on one dataset.
pub struct Prepared<'a> {
    pub data: &'a Dataset,
    pub config: EstimatorConfig,
    pub kernel: KernelConfig,
    pub smoother: SurrogateSmoother,
    ps_design: Option<Array2<f64>>,
    ps_basis: Option<BasisSpec>,
    outcome_design: Option<OutcomeDesign>,
}

impl<'a> Prepared<'a> {
    pub fn new(data: &'a Dataset, config: &EstimatorConfig) -> Result<Self> {
        data.require_estimable()?;
        let kernel = config.kernel_config(data.len())?;
        let smoother = SurrogateSmoother::new(data.s(), &kernel)?;
        let (ps_design, ps_basis) = match &config.propensity {
            PropensityModel::Logistic(b) => (Some(b.design(data)?), Some(b.clone())),
            PropensityModel::Randomized => (None, None),
        };
        let outcome_design = match &config.outcome {
            Some(spec) => Some(OutcomeDesign::new(data, spec)?),
            None => None,
        };
        Ok(Prepared {
            data,
            config: config.clone(),
            kernel,
            smoother,
            ps_design,
            ps_basis,
            outcome_design,
        })
    }

    pub fn propensity(&self, v: &[f64]) -> Result<PropensityFit> {
        match (&self.ps_design, &self.ps_basis) {
            (Some(design), Some(basis)) => fit_logistic_design(
                design,
                self.data.a(),
                Some(v),
                basis.clone(),
                self.config.clip,
            ),
            _ => {
                // weighted treated fraction
                let tot: f64 = v.iter().sum();
                let treated: f64 = v
                    .iter()
                    .zip(self.data.a())
                    .filter(|(_, &a)| a == 1)
                    .map(|(w, _)| w)
                    .sum();
                Ok(PropensityFit::constant(
                    self.data.len(),
                    treated / tot,
                    self.config.clip,
                ))
            }
        }
    }

    /// Estimate with case weights `v`. `warm` supplies the base fit whose
    /// index directions seed the replicate's rank-correlation polish.
    pub fn estimate(
        &self,
        kind: EstimatorKind,
        v: &[f64],
        warm: Option<&PointEstimate>,
    ) -> Result<PointEstimate> {
        let n = self.data.len();
        if v.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: v.len(),
            });
        }
        let ps = self.propensity(v)?;
        let a = self.data.a();
        let omega = [0u8, 1].map(|arm| weights_from_pi(&ps.fitted_pi1, a, arm, ps.clip));
        match kind {
            EstimatorKind::Ipw => {
                let w0 = omega[0].scaled(v);
                let w1 = omega[1].scaled(v);
                let curves = ipw_curves_with(self.data.y(), &self.smoother, &w0, &w1)?;
                let lambda = lambda_hat(&curves)?;
                let transform = g_hat(&curves, lambda);
                let gs: Vec<f64> = self.data.s().iter().map(|&s| transform.eval(s)).collect();
                let effects = effects_from_values(self.data.y(), &gs, &w0, &w1)?;
                Ok(PointEstimate {
                    kind,
                    effects,
                    transform,
                    curves,
                    propensity: ps,
                    outcome: None,
                })
            }
            EstimatorKind::Dr => {
                let (spec, design) = match (&self.config.outcome, &self.outcome_design) {
                    (Some(s), Some(d)) => (s, d),
                    _ => {
                        return Err(Error::InvalidConfig(
                            "doubly robust estimation needs an outcome model".into(),
                        ))
                    }
                };
                let warm_fit = warm.and_then(|w| w.outcome.as_ref());
                let fit = fit_outcome_with(
                    self.data,
                    spec,
                    &self.kernel,
                    design,
                    &self.smoother,
                    v,
                    warm_fit,
                )?;
                let assembly = DrAssembly::new(
                    self.data,
                    &self.smoother,
                    design,
                    &fit,
                    [&omega[0].omega, &omega[1].omega],
                    v,
                )?;
                let est = estimate_dr_with(&assembly, self.config.dr)?;
                Ok(PointEstimate {
                    kind,
                    effects: est.effects,
                    transform: est.transform,
                    curves: est.curves.as_components(),
                    propensity: ps,
                    outcome: Some(fit),
                })
            }
        }
    }

    /// Unweighted base estimate.
    pub fn base(&self, kind: EstimatorKind) -> Result<PointEstimate> {
        let ones = vec![1.0; self.data.len()];
        self.estimate(kind, &ones, None)
    }
}

/// Base estimate without resampling.
pub fn estimate(
    data: &Dataset,
    config: &EstimatorConfig,
    kind: EstimatorKind,
) -> Result<PointEstimate> {
    Prepared::new(data, config)?.base(kind)
}

//! Reference PTE estimators: the two-regression construction of Freedman and
//! the smoothed estimator that assumes randomized treatment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::std_dev;
use crate::linalg::weighted_least_squares;
use crate::pipeline::{estimate, EstimatorConfig, EstimatorKind, PropensityModel};
use crate::propensity::{fit_logistic, DEFAULT_CLIP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComparatorKind {
    FreedmanNaive,
    FreedmanX,
    FreedmanIpw,
    WangRct,
}

impl ComparatorKind {
    pub fn name(self) -> &'static str {
        match self {
            ComparatorKind::FreedmanNaive => "F_naive",
            ComparatorKind::FreedmanX => "F_X",
            ComparatorKind::FreedmanIpw => "F_IPW",
            ComparatorKind::WangRct => "W_RCT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreedmanVariant {
    Naive,
    WithX,
    Ipw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorResult {
    pub name: ComparatorKind,
    /// NaN when `undefined`.
    pub pte: f64,
    pub undefined: bool,
    pub components: BTreeMap<String, f64>,
}

/// Treatment coefficients this close to zero, relative to sd(Y), leave the
/// ratio undefined.
const UNDEFINED_RATIO: f64 = 1e-8;

/// `1 - beta_A(adjusted for S) / beta_A(unadjusted)`. `WithX` adds the
/// covariate main effects to both regressions. `Ipw` fits both by weighted
/// least squares with inverse propensity weights from `ps_basis`.
pub fn freedman(
    data: &Dataset,
    variant: FreedmanVariant,
    ps_basis: Option<&BasisSpec>,
) -> Result<ComparatorResult> {
    data.require_estimable()?;
    let n = data.len();
    let (a, s, y, x) = (data.a(), data.s(), data.y(), data.x());
    let weights = match variant {
        FreedmanVariant::Ipw => {
            let basis = ps_basis.ok_or_else(|| {
                Error::InvalidConfig("the weighted variant needs a propensity basis".into())
            })?;
            let fit = fit_logistic(data, basis, None)?;
            fit.fitted_pi1
                .iter()
                .zip(a)
                .map(|(&p, &ai)| {
                    let p = p.clamp(DEFAULT_CLIP, 1.0 - DEFAULT_CLIP);
                    if ai == 1 {
                        1.0 / p
                    } else {
                        1.0 / (1.0 - p)
                    }
                })
                .collect()
        }
        _ => vec![1.0; n],
    };
    let with_x = variant == FreedmanVariant::WithX;
    let row = |i: usize, adjusted: bool| {
        let mut r = vec![1.0, a[i] as f64];
        if adjusted {
            r.push(s[i]);
        }
        if with_x {
            r.extend(x.row(i).iter());
        }
        r
    };
    let unadj_rows: Vec<Vec<f64>> = (0..n).map(|i| row(i, false)).collect();
    let adj_rows: Vec<Vec<f64>> = (0..n).map(|i| row(i, true)).collect();
    let b_unadj =
        weighted_least_squares(&unadj_rows, y, &weights, 0.0).ok_or(Error::SingularDesign)?;
    let b_adj = weighted_least_squares(&adj_rows, y, &weights, 0.0).ok_or(Error::SingularDesign)?;

    let name = match variant {
        FreedmanVariant::Naive => ComparatorKind::FreedmanNaive,
        FreedmanVariant::WithX => ComparatorKind::FreedmanX,
        FreedmanVariant::Ipw => ComparatorKind::FreedmanIpw,
    };
    let mut components = BTreeMap::new();
    components.insert("beta_a_unadjusted".to_string(), b_unadj[1]);
    components.insert("beta_a_adjusted".to_string(), b_adj[1]);
    components.insert("beta_s".to_string(), b_adj[2]);
    let scale = std_dev(y).max(f64::MIN_POSITIVE);
    let undefined = b_unadj[1].abs() <= UNDEFINED_RATIO * scale;
    let pte = if undefined {
        f64::NAN
    } else {
        1.0 - b_adj[1] / b_unadj[1]
    };
    Ok(ComparatorResult {
        name,
        pte,
        undefined,
        components,
    })
}

/// Smoothed IPW pipeline with the propensity fixed at the observed treated
/// fraction. The propensity model in `config` is ignored.
pub fn wang_rct(data: &Dataset, config: &EstimatorConfig) -> Result<ComparatorResult> {
    let mut cfg = config.clone();
    cfg.propensity = PropensityModel::Randomized;
    let est = estimate(data, &cfg, EstimatorKind::Ipw)?;
    let mut components = BTreeMap::new();
    components.insert("delta".to_string(), est.effects.delta);
    components.insert("delta_g".to_string(), est.effects.delta_g);
    components.insert("lambda".to_string(), est.transform.lambda);
    components.insert("pi1".to_string(), est.propensity.fitted_pi1[0]);
    Ok(ComparatorResult {
        name: ComparatorKind::WangRct,
        pte: est.effects.pte,
        undefined: false,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dataset(n: usize, seed: u64, y_of: impl Fn(f64, f64, f64) -> f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Vec::new();
        let mut s = Vec::new();
        let mut y = Vec::new();
        let mut x = Array2::zeros((n, 1));
        for i in 0..n {
            let xi: f64 = rng.sample(StandardNormal);
            let ai = u8::from(rng.random::<f64>() < 0.5);
            let si = ai as f64 + 0.5 * xi + rng.sample::<f64, _>(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            x[[i, 0]] = xi;
            a.push(ai);
            s.push(si);
            y.push(y_of(ai as f64, si, e));
        }
        Dataset::new(y, s, a, x, vec!["x1".into()]).unwrap()
    }

    #[test]
    fn perfect_surrogate_explains_everything() {
        let d = dataset(300, 1, |_, s, _| s);
        for v in [FreedmanVariant::Naive, FreedmanVariant::WithX] {
            let r = freedman(&d, v, None).unwrap();
            assert!((r.pte - 1.0).abs() < 1e-10, "{}", r.pte);
        }
    }

    #[test]
    fn null_surrogate_explains_nothing() {
        let d = dataset(2000, 2, |a, _, e| 2.0 * a + e);
        let r = freedman(&d, FreedmanVariant::Naive, None).unwrap();
        assert!(r.pte.abs() < 0.1, "{}", r.pte);
    }

    #[test]
    fn affine_invariance() {
        let d = dataset(400, 3, |a, s, e| a + 0.7 * s + e);
        let y2: Vec<f64> = d.y().iter().map(|y| 3.0 * y - 11.0).collect();
        let d2 = d.with_outcome(y2).unwrap();
        let r1 = freedman(&d, FreedmanVariant::Naive, None).unwrap();
        let r2 = freedman(&d2, FreedmanVariant::Naive, None).unwrap();
        assert!((r1.pte - r2.pte).abs() < 1e-10);
    }

    #[test]
    fn no_effect_is_undefined() {
        // outcome identical across arms by construction
        let n = 100;
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y: Vec<f64> = (0..n).map(|i| (i / 2) as f64).collect();
        let s: Vec<f64> = (0..n).map(|i| ((i * 7) % 13) as f64).collect();
        let x = Array2::from_shape_fn((n, 1), |(i, _)| (i % 5) as f64);
        let d = Dataset::new(y, s, a, x, vec!["x1".into()]).unwrap();
        let r = freedman(&d, FreedmanVariant::Naive, None).unwrap();
        assert!(r.undefined && r.pte.is_nan());
    }

    #[test]
    fn ipw_variant_needs_basis() {
        let d = dataset(100, 4, |a, s, e| a + s + e);
        assert!(freedman(&d, FreedmanVariant::Ipw, None).is_err());
        let b = BasisSpec::linear(&["x1"], true);
        let r = freedman(&d, FreedmanVariant::Ipw, Some(&b)).unwrap();
        assert!(r.pte.is_finite());
    }
}

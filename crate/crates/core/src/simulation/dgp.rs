//! Data-generating processes for the two simulation settings.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::data::{Dataset, PotentialOutcomes};
use crate::error::{Error, Result};
use crate::outcome::{Link, OutcomeModelSpec};
use crate::propensity::expit;

/// Shift inside the logarithmic propensity term of setting 1, whose third
/// covariate takes negative values.
pub const DEFAULT_LOG_SHIFT: f64 = 1.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    One,
    Two,
}

impl Setting {
    pub fn number(self) -> u8 {
        match self {
            Setting::One => 1,
            Setting::Two => 2,
        }
    }
}

impl TryFrom<u8> for Setting {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Setting::One),
            2 => Ok(Setting::Two),
            other => Err(Error::InvalidConfig(format!("unknown setting {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpOptions {
    /// Draw the surrogate and outcome noise. Off gives the noiseless means.
    pub noise: bool,
    pub log_shift: f64,
    /// Replace each potential outcome by its potential surrogate.
    pub perfect_surrogate: bool,
}

impl Default for DgpOptions {
    fn default() -> Self {
        DgpOptions {
            noise: true,
            log_shift: DEFAULT_LOG_SHIFT,
            perfect_surrogate: false,
        }
    }
}

pub const COVARIATE_NAMES: [&str; 3] = ["x1", "x2", "x3"];

/// One simulated unit before treatment is revealed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub x: [f64; 3],
    pub po: PotentialOutcomes,
    pub pi1: f64,
    pub a: u8,
}

/// Potential surrogates and outcomes of covariates `x` under shared noise
/// `eps` (surrogate) and `e` (outcome).
pub fn potential_outcomes(
    setting: Setting,
    x: [f64; 3],
    eps: f64,
    e: f64,
    opts: &DgpOptions,
) -> PotentialOutcomes {
    let [x1, x2, x3] = x;
    let (s0, s1, y0, y1) = match setting {
        Setting::One => {
            let s0 = 0.5 * x1 + x2 - 0.5 * x3 + eps;
            let s1 = x1 + 0.5 * x2 + 2.0 * x3 + eps;
            let inter = x1 * x2 + x2 * x3;
            let y0 = 0.5 * s0 + 0.2 * x1 - 0.3 * x2 - 0.5 * x3 + inter + e;
            let y1 = 0.3 * s1 + x1 - 0.5 * x2 + 0.2 * x3 + inter + e;
            (s0, s1, y0, y1)
        }
        Setting::Two => {
            let s0 = 100.0 + x1 + 5.0 * x2 + eps;
            let s1 = 100.0 + 2.0 * x1 + 4.0 * x2 + eps;
            assert!(
                s0 > 0.0 && s1 > 0.0,
                "non-positive surrogate ({s0}, {s1}) under a logarithmic outcome model"
            );
            let y0 = 100.0 + s0 * x1 - 2.0 * s0.ln() * x2 + 25.0 * x3 + e;
            let y1 = 50.0 + s1 * x1 - 3.0 * s1.ln() * x2 - 14.0 * x3 + e;
            (s0, s1, y0, y1)
        }
    };
    if opts.perfect_surrogate {
        PotentialOutcomes {
            y0: s0,
            y1: s1,
            s0,
            s1,
        }
    } else {
        PotentialOutcomes { y0, y1, s0, s1 }
    }
}

/// True `P(A = 1 | X = x)`.
pub fn propensity(setting: Setting, x: [f64; 3], opts: &DgpOptions) -> f64 {
    let [x1, x2, x3] = x;
    let log_term = match setting {
        Setting::One => (x3 + opts.log_shift).ln(),
        Setting::Two => x3.ln(),
    };
    expit(-0.8 * x1 + 0.7 * x2 - log_term + 0.6 * x1 * x3)
}

struct Draws {
    x1: Normal<f64>,
    x2: Gamma<f64>,
    x3: Uniform<f64>,
    eps: Normal<f64>,
    e: Normal<f64>,
}

impl Draws {
    fn new(setting: Setting) -> Self {
        let (x1_sd, x3_lo, eps_sd, e_sd) = match setting {
            Setting::One => (0.2, -1.0, 1.0, 0.2),
            Setting::Two => (1.0, 0.0, 2.0, 1.0),
        };
        let x3_hi = match setting {
            Setting::One => 1.0,
            Setting::Two => 5.0,
        };
        Draws {
            x1: Normal::new(0.0, x1_sd).unwrap(),
            x2: Gamma::new(2.0, 0.5).unwrap(),
            x3: Uniform::new(x3_lo, x3_hi).unwrap(),
            eps: Normal::new(0.0, eps_sd).unwrap(),
            e: Normal::new(0.0, e_sd).unwrap(),
        }
    }
}

/// `n` units drawn from `rng`.
pub fn draw_units<R: Rng + ?Sized>(
    setting: Setting,
    n: usize,
    rng: &mut R,
    opts: &DgpOptions,
) -> Vec<Unit> {
    let d = Draws::new(setting);
    (0..n)
        .map(|_| {
            let x = [d.x1.sample(rng), d.x2.sample(rng), d.x3.sample(rng)];
            let eps = d.eps.sample(rng);
            let e = d.e.sample(rng);
            let u: f64 = rng.random();
            let (eps, e) = if opts.noise { (eps, e) } else { (0.0, 0.0) };
            let po = potential_outcomes(setting, x, eps, e, opts);
            let pi1 = propensity(setting, x, opts);
            Unit {
                x,
                po,
                pi1,
                a: u8::from(u < pi1),
            }
        })
        .collect()
}

/// Observed data by consistency, with the potential outcomes retained.
pub fn dataset_from_units(units: &[Unit]) -> Result<Dataset> {
    let n = units.len();
    let mut x = Array2::zeros((n, 3));
    let mut y = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for (i, u) in units.iter().enumerate() {
        for j in 0..3 {
            x[[i, j]] = u.x[j];
        }
        let (yi, si) = if u.a == 1 {
            (u.po.y1, u.po.s1)
        } else {
            (u.po.y0, u.po.s0)
        };
        y.push(yi);
        s.push(si);
        a.push(u.a);
    }
    let names = COVARIATE_NAMES.iter().map(|c| c.to_string()).collect();
    Dataset::new(y, s, a, x, names)?.with_truth(units.iter().map(|u| u.po).collect())
}

pub fn generate(setting: Setting, n: usize, seed: u64, opts: &DgpOptions) -> Result<Dataset> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    dataset_from_units(&draw_units(setting, n, &mut rng, opts))
}

pub fn generate_setting1(n: usize, seed: u64) -> Result<Dataset> {
    generate(Setting::One, n, seed, &DgpOptions::default())
}

pub fn generate_setting2(n: usize, seed: u64) -> Result<Dataset> {
    generate(Setting::Two, n, seed, &DgpOptions::default())
}

/// Whether a nuisance model is specified as in the generating process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Specification {
    Correct,
    Misspecified,
}

/// Propensity basis. The correct one reproduces the true logit terms; the
/// misspecified one drops the interaction and the logarithm (setting 1) or
/// the logarithm (setting 2).
pub fn propensity_basis(setting: Setting, spec: Specification, log_shift: f64) -> BasisSpec {
    let text = match (setting, spec) {
        (Setting::One, Specification::Correct) => {
            format!("x1, x2, log(x3+{log_shift}), x1*x3")
        }
        (Setting::One, Specification::Misspecified) => "x1, x2, x3".to_string(),
        (Setting::Two, Specification::Correct) => "x1, x2, log(x3), x1*x3".to_string(),
        (Setting::Two, Specification::Misspecified) => "x1, x2, x1*x3".to_string(),
    };
    BasisSpec::parse(&text, true).expect("built-in basis")
}

/// Outcome model. The misspecified one omits `x2` and every term involving it.
pub fn outcome_spec(setting: Setting, spec: Specification) -> OutcomeModelSpec {
    let (index, regression) = match (setting, spec) {
        (Setting::One, Specification::Correct) => ("x1, x2, x3", "x1, x2, x3, x1*x2, x2*x3"),
        (Setting::Two, Specification::Correct) => ("x1, x2, x3", "x1, x2, x3"),
        (_, Specification::Misspecified) => ("x1, x3", "x1, x3"),
    };
    OutcomeModelSpec::new(
        BasisSpec::parse(index, false).expect("built-in basis"),
        BasisSpec::parse(regression, true).expect("built-in basis"),
        Link::Identity,
    )
}

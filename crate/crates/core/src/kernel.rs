//! Gaussian kernel smoothing, bandwidth rules and grid quadrature shared by
//! every estimator in the crate.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Undersmoothing exponent used when none is supplied.
pub const DEFAULT_C0: f64 = 0.11;
pub const DEFAULT_GRID_SIZE: usize = 201;
pub const DEFAULT_GRID_PADDING: f64 = 0.05;

/// Bandwidths and grid resolution for one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Bandwidth for smoothing in the surrogate, in units of S.
    pub bandwidth_h: f64,
    /// Bandwidth for smoothing along the single index.
    pub index_bandwidth_zeta: f64,
    pub undersmooth_c0: f64,
    pub grid_size: usize,
    /// Fraction of the surrogate range added at each end of the grid.
    pub grid_padding: f64,
}

impl KernelConfig {
    /// Default configuration for a sample of size `n`. The index bandwidth is
    /// provisionally set equal to `bandwidth_h`; it is replaced by
    /// [`default_index_bandwidth`] once an index has been estimated.
    pub fn for_sample(n: usize, c0: f64) -> Result<Self> {
        let h = default_bandwidth(n, c0)?;
        let cfg = KernelConfig {
            bandwidth_h: h,
            index_bandwidth_zeta: h,
            undersmooth_c0: c0,
            grid_size: DEFAULT_GRID_SIZE,
            grid_padding: DEFAULT_GRID_PADDING,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_h.is_finite() && self.bandwidth_h > 0.0) {
            return Err(Error::InvalidBandwidth(self.bandwidth_h));
        }
        if !(self.index_bandwidth_zeta.is_finite() && self.index_bandwidth_zeta > 0.0) {
            return Err(Error::InvalidBandwidth(self.index_bandwidth_zeta));
        }
        if !(self.undersmooth_c0 >= 0.0 && self.undersmooth_c0 < 0.3) {
            return Err(Error::InvalidConfig(format!(
                "undersmoothing exponent {} outside [0, 0.3)",
                self.undersmooth_c0
            )));
        }
        if self.grid_size < 51 || self.grid_size % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid size {} must be odd and at least 51",
                self.grid_size
            )));
        }
        if !(self.grid_padding >= 0.0 && self.grid_padding.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid padding {} must be nonnegative",
                self.grid_padding
            )));
        }
        Ok(())
    }

    pub fn with_index_bandwidth(mut self, zeta: f64) -> Result<Self> {
        self.index_bandwidth_zeta = zeta;
        self.validate()?;
        Ok(self)
    }
}

/// `h^-1 phi(u / h)` with `phi` the standard normal density.
pub fn gaussian_kernel(u: f64, h: f64) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidBandwidth(h));
    }
    Ok(kh(u, h))
}

/// Unchecked kernel; callers guarantee `h > 0`.
#[inline]
pub(crate) fn kh(u: f64, h: f64) -> f64 {
    let z = u / h;
    INV_SQRT_2PI * (-0.5 * z * z).exp() / h
}

/// Undersmoothed normal-reference bandwidth `1.06 n^(-1/5) n^(-c0)`.
pub fn default_bandwidth(n: usize, c0: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::SampleTooSmall {
            required: 2,
            actual: n,
        });
    }
    let n = n as f64;
    Ok(1.06 * n.powf(-0.2) * n.powf(-c0))
}

/// Bandwidth for the index kernel: the same undersmoothed rule scaled by the
/// standard deviation of the fitted index values.
pub fn default_index_bandwidth(index: &[f64], n: usize, c0: f64) -> Result<f64> {
    let base = default_bandwidth(n, c0)?;
    let sd = std_dev(index);
    let zeta = base * sd;
    if zeta > 0.0 && zeta.is_finite() {
        Ok(zeta)
    } else {
        // constant index: any bandwidth gives uniform weights
        Ok(base)
    }
}

pub(crate) fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (ss / (n - 1.0)).sqrt()
}

/// Equally spaced evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    spacing: f64,
}

impl Grid {
    /// `size` equally spaced points from `lo` to `hi` inclusive.
    pub fn new(lo: f64, hi: f64, size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidConfig(
                "grid needs at least two points".into(),
            ));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidConfig(format!(
                "grid bounds [{lo}, {hi}] are not increasing"
            )));
        }
        let spacing = (hi - lo) / (size - 1) as f64;
        let points = (0..size)
            .map(|k| {
                if k + 1 == size {
                    hi
                } else {
                    lo + spacing * k as f64
                }
            })
            .collect();
        Ok(Grid { points, spacing })
    }

    /// Grid over the observed range of `values`, padded by `padding` times the
    /// range at each end. A zero-width range is widened to unit width.
    pub fn covering(values: &[f64], size: usize, padding: f64) -> Result<Self> {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidConfig(
                "cannot build grid over empty values".into(),
            ));
        }
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        };
        let pad = padding * (hi - lo);
        Grid::new(lo - pad, hi + pad, size)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Left neighbour index and interpolation fraction for `s`, clamped to
    /// the grid ends.
    pub fn bracket(&self, s: f64) -> (usize, f64) {
        let last = self.points.len() - 1;
        if s <= self.points[0] {
            return (0, 0.0);
        }
        if s >= self.points[last] {
            return (last - 1, 1.0);
        }
        let pos = (s - self.points[0]) / self.spacing;
        let k = (pos.floor() as usize).min(last - 1);
        let t = (s - self.points[k]) / self.spacing;
        (k, t.clamp(0.0, 1.0))
    }

    /// Linear interpolation of grid values at `s`, constant beyond the ends.
    pub fn interpolate(&self, values: &[f64], s: f64) -> f64 {
        debug_assert_eq!(values.len(), self.points.len());
        let last = self.points.len() - 1;
        if s <= self.points[0] {
            return values[0];
        }
        if s >= self.points[last] {
            return values[last];
        }
        let (k, t) = self.bracket(s);
        values[k] * (1.0 - t) + values[k + 1] * t
    }

    /// Trapezoid weights, so that `sum_k w_k v_k` is the trapezoid integral.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.points.len();
        (0..n)
            .map(|k| {
                if k == 0 || k + 1 == n {
                    0.5 * self.spacing
                } else {
                    self.spacing
                }
            })
            .collect()
    }
}

/// Trapezoid rule on the grid.
pub fn trapezoid(grid: &Grid, values: &[f64]) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::Dimension {
            expected: grid.len(),
            actual: values.len(),
        });
    }
    Ok(trapz(grid, values))
}

#[inline]
pub(crate) fn trapz(grid: &Grid, values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    grid.spacing * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Matrix of `K_h(s_i - t_k)` for sample points `s_i` (rows) and grid points
/// `t_k` (columns).
pub fn kernel_matrix(s: &[f64], grid: &Grid, h: f64) -> Result<Array2<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidBandwidth(h));
    }
    let g = grid.points();
    Ok(Array2::from_shape_fn((s.len(), g.len()), |(i, k)| {
        kh(s[i] - g[k], h)
    }))
}

/// Surrogate grid together with the kernel matrix `K_h(S_i - s_k)` of a
/// sample. Built once per dataset and shared by every fit on it, including
/// perturbation replicates (the bandwidth is held fixed).
#[derive(Debug, Clone)]
pub struct SurrogateSmoother {
    pub grid: Grid,
    pub h: f64,
    /// `n x grid_size`
    pub kmat: Array2<f64>,
}

impl SurrogateSmoother {
    pub fn new(s: &[f64], config: &KernelConfig) -> Result<Self> {
        config.validate()?;
        let grid = Grid::covering(s, config.grid_size, config.grid_padding)?;
        Self::on_grid(s, grid, config.bandwidth_h)
    }

    pub fn on_grid(s: &[f64], grid: Grid, h: f64) -> Result<Self> {
        let kmat = kernel_matrix(s, &grid, h)?;
        Ok(SurrogateSmoother { grid, h, kmat })
    }
}

/// Standard normal density, exposed for oracle tests.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

//! Small dense symmetric solves used by the regression fits.

/// Symmetric positive definite matrix stored row-major.
#[derive(Debug, Clone)]
pub(crate) struct SymMatrix {
    pub k: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(k: usize) -> Self {
        SymMatrix {
            k,
            data: vec![0.0; k * k],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    /// Adds `w * v v^T`, upper triangle only; call [`SymMatrix::mirror`] after.
    #[inline]
    pub fn add_outer_upper(&mut self, v: &[f64], w: f64) {
        let k = self.k;
        for i in 0..k {
            let wi = w * v[i];
            let row = &mut self.data[i * k..(i + 1) * k];
            for j in i..k {
                row[j] += wi * v[j];
            }
        }
    }

    pub fn mirror(&mut self) {
        let k = self.k;
        for i in 0..k {
            for j in 0..i {
                self.data[i * k + j] = self.data[j * k + i];
            }
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn add_diagonal(&mut self, r: f64) {
        for i in 0..self.k {
            self.data[i * self.k + i] += r;
        }
    }

    /// Cholesky factor `L` (lower, row-major), or `None` when a pivot falls
    /// below `tol` times the largest diagonal entry.
    pub fn cholesky(&self, tol: f64) -> Option<Vec<f64>> {
        let k = self.k;
        let scale = (0..k).map(|i| self.get(i, i).abs()).fold(0.0, f64::max);
        if scale == 0.0 || !scale.is_finite() {
            return None;
        }
        let mut l = vec![0.0; k * k];
        for j in 0..k {
            let mut d = self.get(j, j);
            for m in 0..j {
                d -= l[j * k + m] * l[j * k + m];
            }
            if !(d > tol * scale) {
                return None;
            }
            let d = d.sqrt();
            l[j * k + j] = d;
            for i in j + 1..k {
                let mut v = self.get(i, j);
                for m in 0..j {
                    v -= l[i * k + m] * l[j * k + m];
                }
                l[i * k + j] = v / d;
            }
        }
        Some(l)
    }

    pub fn solve(&self, b: &[f64], tol: f64) -> Option<Vec<f64>> {
        let l = self.cholesky(tol)?;
        Some(cholesky_solve(&l, self.k, b))
    }
}

pub(crate) fn cholesky_solve(l: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for i in 0..k {
        let mut v = z[i];
        for m in 0..i {
            v -= l[i * k + m] * z[m];
        }
        z[i] = v / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut v = z[i];
        for m in i + 1..k {
            v -= l[m * k + i] * z[m];
        }
        z[i] = v / l[i * k + i];
    }
    z
}

/// Weighted least squares `argmin sum w_i (y_i - x_i^T b)^2` with an optional
/// ridge of `ridge * trace / k` on the normal equations.
pub(crate) fn weighted_least_squares(
    rows: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    ridge: f64,
) -> Option<Vec<f64>> {
    let k = rows.first()?.len();
    let mut xtx = SymMatrix::zeros(k);
    let mut xty = vec![0.0; k];
    for ((r, &yi), &wi) in rows.iter().zip(y).zip(w) {
        if wi == 0.0 {
            continue;
        }
        xtx.add_outer_upper(r, wi);
        for j in 0..k {
            xty[j] += wi * r[j] * yi;
        }
    }
    xtx.mirror();
    if ridge > 0.0 {
        let t = xtx.trace();
        xtx.add_diagonal(ridge * t / k as f64);
    }
    xtx.solve(&xty, 1e-13)
}

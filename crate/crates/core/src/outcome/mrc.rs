//! Maximum rank correlation estimation of a single-index direction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::std_dev;

pub const MIN_ARM_RECORDS: usize = 10;
const RESTARTS: usize = 20;
const RESTART_SEED: u64 = 0x6d72_635f_7374_6172;
const NM_MAX_EVALS: usize = 160;
const POLISH_STEPS: [f64; 7] = [0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001];
const POLISH_MAX_MOVES: usize = 400;

/// Unit-norm index direction in the original covariate coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexCoefficients {
    pub gamma: Vec<f64>,
    /// Direction in the standardized coordinates the optimizer works in.
    #[serde(skip)]
    pub(crate) direction: Vec<f64>,
}

impl IndexCoefficients {
    pub fn index(&self, x: &[f64]) -> f64 {
        self.gamma.iter().zip(x).map(|(g, v)| g * v).sum()
    }
}

/// Arm data prepared for the rank objectives: standardized covariates and
/// surrogate values sorted in decreasing order.
#[derive(Debug, Clone)]
pub(crate) struct RankProblem {
    p: usize,
    /// Columns with positive spread.
    active: Vec<usize>,
    sd: Vec<f64>,
    /// Sorted rows, `q = active.len()` values each.
    z: Vec<f64>,
    q: usize,
    v: Vec<f64>,
    s: Vec<f64>,
    /// Ascending dense rank of S for each sorted row.
    rank: Vec<usize>,
    n_ranks: usize,
    /// First sorted position with strictly smaller S.
    lower_start: Vec<usize>,
}

impl RankProblem {
    /// `rows` are the arm's index-design rows; `v` the case weights.
    pub fn new(rows: &[Vec<f64>], s: &[f64], v: &[f64], arm: u8) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if p == 0 {
            return Err(Error::NoCovariates);
        }
        if n < MIN_ARM_RECORDS {
            return Err(Error::TooFewRecords {
                arm,
                required: MIN_ARM_RECORDS,
                actual: n,
            });
        }
        if s.iter().all(|&x| x == s[0]) {
            return Err(Error::DegenerateRanks);
        }
        let mut mean = vec![0.0; p];
        let mut sd = vec![0.0; p];
        let mut active = Vec::new();
        for k in 0..p {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            mean[k] = col.iter().sum::<f64>() / n as f64;
            sd[k] = std_dev(&col);
            if sd[k] > 0.0 {
                active.push(k);
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
        let q = active.len();
        let mut z = Vec::with_capacity(n * q);
        for &i in &order {
            for &k in &active {
                z.push((rows[i][k] - mean[k]) / sd[k]);
            }
        }
        let s_sorted: Vec<f64> = order.iter().map(|&i| s[i]).collect();
        let v_sorted: Vec<f64> = order.iter().map(|&i| v[i]).collect();
        let mut rank = vec![0; n];
        let mut lower_start = vec![n; n];
        let mut distinct = 0;
        let mut start = 0;
        while start < n {
            let mut end = start;
            while end < n && s_sorted[end] == s_sorted[start] {
                end += 1;
            }
            for pos in start..end {
                lower_start[pos] = end;
            }
            distinct += 1;
            start = end;
        }
        let mut r = distinct;
        let mut pos = 0;
        while pos < n {
            r -= 1;
            let here = s_sorted[pos];
            while pos < n && s_sorted[pos] == here {
                rank[pos] = r;
                pos += 1;
            }
        }
        Ok(RankProblem {
            p,
            active,
            sd,
            z,
            q,
            v: v_sorted,
            s: s_sorted,
            rank,
            n_ranks: distinct,
            lower_start,
        })
    }

    fn len(&self) -> usize {
        self.s.len()
    }

    fn project(&self, d: &[f64]) -> Vec<f64> {
        self.z
            .chunks_exact(self.q)
            .map(|row| row.iter().zip(d).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `sum v_i v_j I(u_i > u_j) I(S_i > S_j)` in `O(n log n)`.
    pub fn exact(&self, d: &[f64]) -> f64 {
        let u = self.project(d);
        let n = self.len();
        let mut keyed: Vec<(f64, u32)> =
            u.iter().enumerate().map(|(i, &x)| (x, i as u32)).collect();
        keyed.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let order: Vec<usize> = keyed.iter().map(|&(_, i)| i as usize).collect();
        let mut tree = Fenwick::new(self.n_ranks);
        let mut total = 0.0;
        let mut start = 0;
        while start < n {
            let mut end = start;
            while end < n && u[order[end]] == u[order[start]] {
                end += 1;
            }
            for &i in &order[start..end] {
                if self.v[i] != 0.0 {
                    total += self.v[i] * tree.prefix(self.rank[i]);
                }
            }
            for &i in &order[start..end] {
                if self.v[i] != 0.0 {
                    tree.add(self.rank[i], self.v[i]);
                }
            }
            start = end;
        }
        total
    }

    /// Objective with the indicator in `u` replaced by `expit(t / tau)`,
    /// `tau = 0.1 sd(u)`.
    fn smoothed(&self, d: &[f64]) -> f64 {
        let u = self.project(d);
        let tau = 0.1 * std_dev(&u);
        let n = self.len();
        if !(tau > 0.0) {
            return 0.0;
        }
        let mean = u.iter().sum::<f64>() / n as f64;
        let e: Vec<f64> = u
            .iter()
            .map(|&x| ((x - mean) / tau).clamp(-700.0, 700.0).exp())
            .collect();
        let mut total = 0.0;
        for i in 0..n {
            let vi = self.v[i];
            if vi == 0.0 {
                continue;
            }
            let ei = e[i];
            let lo = self.lower_start[i];
            let acc: f64 = self.v[lo..]
                .iter()
                .zip(&e[lo..])
                .map(|(vj, ej)| vj / (ei + ej))
                .sum();
            total += vi * ei * acc;
        }
        total
    }

    fn least_squares_direction(&self) -> Vec<f64> {
        let q = self.q;
        let mut rows = Vec::with_capacity(self.len());
        for row in self.z.chunks_exact(q) {
            let mut r = Vec::with_capacity(q + 1);
            r.push(1.0);
            r.extend_from_slice(row);
            rows.push(r);
        }
        match crate::linalg::weighted_least_squares(&rows, &self.s, &self.v, 1e-8) {
            Some(b) if b[1..].iter().any(|x| *x != 0.0) => normalize(b[1..].to_vec()),
            _ => {
                let mut d = vec![0.0; q];
                d[0] = 1.0;
                d
            }
        }
    }

    /// Direction in original coordinates, unit norm.
    fn to_original(&self, d: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.p];
        for (t, &k) in self.active.iter().enumerate() {
            g[k] = d[t] / self.sd[k];
        }
        normalize(g)
    }

    fn coefficients(&self, mut d: Vec<f64>) -> IndexCoefficients {
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let here = self.exact(&d);
        let there = self.exact(&neg);
        if (here - there).abs() <= 1e-12 * here.abs().max(1.0) {
            let g = self.to_original(&d);
            if g.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0) {
                d = neg;
            }
        }
        IndexCoefficients {
            gamma: self.to_original(&d),
            direction: d,
        }
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Hyperspherical coordinates to a unit vector of length `angles.len() + 1`.
fn from_angles(angles: &[f64]) -> Vec<f64> {
    let q = angles.len() + 1;
    let mut d = vec![0.0; q];
    let mut prod = 1.0;
    for (k, &t) in angles.iter().enumerate() {
        d[k] = prod * t.cos();
        prod *= t.sin();
    }
    d[q - 1] = prod;
    d
}

fn to_angles(d: &[f64]) -> Vec<f64> {
    let q = d.len();
    let mut angles = vec![0.0; q - 1];
    for k in 0..q - 1 {
        let tail = d[k + 1..].iter().map(|x| x * x).sum::<f64>().sqrt();
        angles[k] = tail.atan2(d[k]);
    }
    if q >= 2 && d[q - 1] < 0.0 {
        angles[q - 2] = -angles[q - 2];
    }
    angles
}

struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![0.0; n + 1],
        }
    }

    fn add(&mut self, idx: usize, w: f64) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += w;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over ranks strictly below `idx`.
    fn prefix(&self, idx: usize) -> f64 {
        let mut i = idx;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Derivative-free simplex minimization.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..dim {
        let mut x = x0.to_vec();
        x[k] += step;
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut evals = dim + 1;
    while evals < max_evals {
        let mut idx: Vec<usize> = (0..=dim).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        values = idx.iter().map(|&i| values[i]).collect();
        let spread = values[dim] - values[0];
        let size = simplex[1..]
            .iter()
            .map(|x| {
                x.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= 1e-10 * values[0].abs().max(1e-300) && size < 1e-4 {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|k| simplex[..dim].iter().map(|x| x[k]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[dim] = xe;
                values[dim] = fe;
            } else {
                simplex[dim] = xr;
                values[dim] = fr;
            }
        } else if fr < values[dim - 1] {
            simplex[dim] = xr;
            values[dim] = fr;
        } else {
            let (xc, fc) = if fr < values[dim] {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < values[dim].min(fr) {
                simplex[dim] = xc;
                values[dim] = fc;
            } else {
                for i in 1..=dim {
                    let x: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, w)| b + 0.5 * (w - b))
                        .collect();
                    values[i] = f(&x);
                    simplex[i] = x;
                }
                evals += dim;
            }
        }
    }
    let best = (0..=dim)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    (simplex[best].clone(), values[best])
}

/// Exact maximizer over the circle for two active columns. The ranking of
/// the index changes only where two rows tie, so sweeping those critical
/// angles visits every value the objective takes.
fn sweep_circle(problem: &RankProblem) -> Vec<f64> {
    let n = problem.len();
    let z = &problem.z;
    let two_pi = std::f64::consts::TAU;
    let mut events: Vec<(f64, f64)> = Vec::new();
    for i in 0..n {
        for j in problem.lower_start[i]..n {
            let c = problem.v[i] * problem.v[j];
            if c == 0.0 {
                continue;
            }
            let w1 = z[2 * i] - z[2 * j];
            let w2 = z[2 * i + 1] - z[2 * j + 1];
            if w1 == 0.0 && w2 == 0.0 {
                continue;
            }
            // S_i > S_j: the pair counts exactly when u_i > u_j
            let a = (-w1).atan2(w2).rem_euclid(two_pi);
            events.push((a, c));
            events.push(((a + std::f64::consts::PI).rem_euclid(two_pi), -c));
        }
    }
    if events.is_empty() {
        return vec![1.0, 0.0];
    }
    events.sort_by(|x, y| x.0.total_cmp(&y.0));
    let first = events[0].0;
    let last = events[events.len() - 1].0;
    let start = 0.5 * (last - two_pi + first);
    let dir = |t: f64| vec![t.cos(), t.sin()];
    let mut value = problem.exact(&dir(start));
    let mut best_value = value;
    let mut best_angle = start;
    let mut k = 0;
    while k < events.len() {
        let here = events[k].0;
        while k < events.len() && events[k].0 == here {
            value += events[k].1;
            k += 1;
        }
        let next = if k < events.len() {
            events[k].0
        } else {
            first + two_pi
        };
        if next - here > 1e-10 && value > best_value + 1e-12 * best_value.abs() {
            best_value = value;
            best_angle = 0.5 * (here + next);
        }
    }
    dir(best_angle)
}

/// Compass search on the exact objective over coarse-to-fine steps, repeated
/// until a full sweep moves nothing so that the result is a fixed point.
fn polish(problem: &RankProblem, start: &[f64]) -> Vec<f64> {
    let q = problem.q;
    let mut d = start.to_vec();
    let mut best = problem.exact(&d);
    if q < 2 {
        return d;
    }
    let mut moves = 0;
    loop {
        let mut moved = false;
        for &step in &POLISH_STEPS {
            loop {
                let mut improved = false;
                'dirs: for k in 0..q {
                    for sign in [1.0, -1.0] {
                        let mut cand = d.clone();
                        cand[k] += sign * step;
                        let cand = normalize(cand);
                        let val = problem.exact(&cand);
                        if val > best + 1e-12 * best.abs().max(1.0) {
                            d = cand;
                            best = val;
                            improved = true;
                            break 'dirs;
                        }
                    }
                }
                if !improved {
                    break;
                }
                moved = true;
                moves += 1;
                if moves >= POLISH_MAX_MOVES {
                    return d;
                }
            }
        }
        if !moved {
            return d;
        }
    }
}

/// Full optimization: smoothed simplex search from several starts, then
/// exact polishing.
pub(crate) fn fit_rank_problem(problem: &RankProblem) -> IndexCoefficients {
    let q = problem.q;
    if q == 0 {
        let mut g = vec![0.0; problem.p];
        g[0] = 1.0;
        return IndexCoefficients {
            gamma: g,
            direction: Vec::new(),
        };
    }
    if problem.p == 1 || q == 1 {
        return IndexCoefficients {
            gamma: problem.to_original(&[1.0]),
            direction: vec![1.0],
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in 0..RESTARTS {
        let start = if r == 0 {
            to_angles(&problem.least_squares_direction())
        } else {
            (0..q - 1)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect()
        };
        let (angles, val) = nelder_mead(
            |t| -problem.smoothed(&from_angles(t)),
            &start,
            0.3,
            NM_MAX_EVALS,
        );
        if best.as_ref().is_none_or(|b| val < b.1) {
            best = Some((angles, val));
        }
    }
    let smoothed_best = from_angles(&best.expect("at least one restart").0);
    let d = if q == 2 {
        let swept = sweep_circle(problem);
        if problem.exact(&swept) >= problem.exact(&smoothed_best) {
            swept
        } else {
            smoothed_best
        }
    } else {
        smoothed_best
    };
    let d = polish(problem, &d);
    problem.coefficients(d)
}

/// Exact-objective polish started at a previous fit, used for perturbation
/// replicates.
pub(crate) fn refit_rank_problem(
    problem: &RankProblem,
    start: &IndexCoefficients,
) -> IndexCoefficients {
    if problem.q < 2 || start.direction.len() != problem.q {
        return fit_rank_problem(problem);
    }
    let d = polish(problem, &start.direction);
    if d == start.direction {
        return start.clone();
    }
    problem.coefficients(d)
}

/// Rank-correlation fit of one arm's index direction. `rows` holds the
/// index-design rows of the arm's records.
pub fn fit_mrc(
    rows: &[Vec<f64>],
    s: &[f64],
    case_weights: &[f64],
    arm: u8,
) -> Result<IndexCoefficients> {
    let problem = RankProblem::new(rows, s, case_weights, arm)?;
    Ok(fit_rank_problem(&problem))
}

/// Exact rank-correlation objective of a direction given in original
/// coordinates.
pub fn rank_objective(rows: &[Vec<f64>], s: &[f64], case_weights: &[f64], gamma: &[f64]) -> f64 {
    let mut total = 0.0;
    let u: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(gamma).map(|(a, b)| a * b).sum())
        .collect();
    for i in 0..rows.len() {
        for j in 0..rows.len() {
            if u[i] > u[j] && s[i] > s[j] {
                total += case_weights[i] * case_weights[j];
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn draw(n: usize, seed: u64, f: impl Fn(f64, f64, f64) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut s = Vec::new();
        for _ in 0..n {
            let x1: f64 = StandardNormal.sample(&mut rng);
            let x2: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![x1, x2]);
            s.push(f(x1, x2, e));
        }
        (rows, s)
    }

    #[test]
    fn single_covariate_is_positive_unit() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let s: Vec<f64> = (0..20).map(|i| -(i as f64)).collect();
        let fit = fit_mrc(&rows, &s, &[1.0; 20], 0).unwrap();
        assert_eq!(fit.gamma, vec![1.0]);
    }

    #[test]
    fn recovers_monotone_index() {
        let (rows, s) = draw(200, 3, |x1, _, e| x1 + 1e-6 * e);
        let fit = fit_mrc(&rows, &s, &[1.0; 200], 1).unwrap();
        let angle = fit.gamma[1].atan2(fit.gamma[0]).abs().to_degrees();
        assert!(angle < 5.0, "angle {angle}");
    }

    #[test]
    fn errors() {
        let rows: Vec<Vec<f64>> = (0..20).map(|_| vec![]).collect();
        assert!(matches!(
            fit_mrc(&rows, &[0.0; 20], &[1.0; 20], 0),
            Err(Error::NoCovariates)
        ));
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        assert!(matches!(
            fit_mrc(&rows, &[2.0; 20], &[1.0; 20], 0),
            Err(Error::DegenerateRanks)
        ));
        assert!(matches!(
            fit_mrc(&rows[..5], &[0.0, 1.0, 2.0, 3.0, 4.0], &[1.0; 5], 0),
            Err(Error::TooFewRecords { .. })
        ));
    }

    #[test]
    fn fast_objective_matches_pairwise() {
        let (mut rows, mut s) = draw(60, 9, |x1, x2, e| x1 - 0.5 * x2 + e);
        rows[3] = rows[7].clone();
        s[5] = s[11];
        let v: Vec<f64> = (0..60).map(|i| 0.5 + (i % 4) as f64 * 0.3).collect();
        let problem = RankProblem::new(&rows, &s, &v, 0).unwrap();
        for t in 0..12 {
            let a = t as f64 * 0.5;
            let g = vec![a.cos(), a.sin()];
            let d = vec![g[0] * problem.sd[0], g[1] * problem.sd[1]];
            let fast = problem.exact(&d);
            let slow = rank_objective(&rows, &s, &v, &g);
            assert!(
                (fast - slow).abs() < 1e-9 * slow.max(1.0),
                "{fast} vs {slow}"
            );
        }
    }

    #[test]
    fn refit_with_same_weights_is_fixed_point() {
        let (rows, s) = draw(80, 4, |x1, x2, e| 0.3 * x1 + x2 + 0.5 * e);
        let rows3: Vec<Vec<f64>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| vec![r[0], r[1], (i as f64 * 0.7).sin()])
            .collect();
        let problem = RankProblem::new(&rows3, &s, &[1.0; 80], 0).unwrap();
        let base = fit_rank_problem(&problem);
        let again = refit_rank_problem(&problem, &base);
        assert_eq!(base, again);
        assert_eq!(base.direction, again.direction);
    }

    #[test]
    fn angle_round_trip() {
        let d = normalize(vec![0.3, -0.4, 0.5, -0.2]);
        let back = from_angles(&to_angles(&d));
        for (a, b) in d.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

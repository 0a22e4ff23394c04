//! Minimum-distance estimators: project the observed distribution onto a
//! well-behaved set (any member within the budget will do), then read the
//! parameter off the projection.

use crate::directions::default_directions;
use crate::empirical::{dot, norm2, weighted_mean, weighted_second_moment, EmpiricalDist};
use crate::error::{Error, Result};
use crate::linalg::solve_psd_min_norm;
use crate::orlicz::OrliczFunction;
use crate::rng::{random_unit_vector, RngSeed};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// No estimator removes more than this much mass.
pub const MASS_CAP: f64 = 0.45;

/// Right-hand side of the one-dimensional Orlicz constraint
/// E psi(|X - mu| / 2 sigma) <= ORLICZ_BOUND.
pub const ORLICZ_BOUND: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Assumed corruption level.
    pub eps: f64,
    /// Tail assumption on the clean distribution, at scale `sigma`.
    pub psi: OrliczFunction,
    pub sigma: f64,
    /// Moment order for the k-th moment filter and the W1 projection.
    pub k: f64,
    /// Random directions added to the axes and top eigenvectors.
    pub directions: usize,
    /// Outer rounds for the W1 projection and the regression filter.
    pub max_iter: usize,
    pub tol: f64,
    /// Parameter-norm cap for regression.
    pub radius: f64,
    /// c in the covariance threshold sigma^2 (1 + c eps).
    pub cov_const: f64,
    /// c1, c2 in the isotropic threshold 1 + c1 eps^{1-2/k} + c2 sqrt(d ln d / n).
    pub kth_c1: f64,
    pub kth_c2: f64,
    /// Subgradient restarts for the min-max aggregation.
    pub restarts: usize,
    pub seed: RngSeed,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            psi: OrliczFunction::Power { k: 2.0 },
            sigma: 1.0,
            k: 4.0,
            directions: crate::directions::DEFAULT_RANDOM_DIRECTIONS,
            max_iter: 200,
            tol: 1e-6,
            radius: 1e6,
            cov_const: 2.0,
            kth_c1: 1.0,
            kth_c2: 1.0,
            restarts: 20,
            seed: RngSeed(0),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MASS_CAP).contains(&self.eps) {
            return Err(Error::BadEps(self.eps));
        }
        let positive = [
            ("tol", self.tol),
            ("sigma", self.sigma),
            ("radius", self.radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.cov_const >= 0.0 && self.kth_c1 >= 0.0 && self.kth_c2 >= 0.0) {
            return Err(Error::InvalidArgument("threshold constants must be >= 0".into()));
        }
        Ok(())
    }

    fn check_k(&self) -> Result<()> {
        if !(self.k >= 2.0) || !self.k.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "moment order must be >= 2, got {}",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Estimate {
    Vector(Vec<f64>),
    /// Row-major rows of a symmetric matrix.
    Matrix(Vec<Vec<f64>>),
    Coefficients(Vec<f64>),
}

impl Estimate {
    /// The vector or coefficient estimate; `None` for matrices.
    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Estimate::Vector(v) | Estimate::Coefficients(v) => Some(v),
            Estimate::Matrix(_) => None,
        }
    }

    pub fn as_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            Estimate::Matrix(rows) => {
                let d = rows.len();
                Some(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: Estimate,
    /// TV projections: mass deleted from the input.
    pub mass_removed: f64,
    /// W1 projections: total weighted movement.
    pub transport_spent: f64,
    pub iterations: usize,
    pub witness_direction: Option<Vec<f64>>,
    /// Distance from the projected distribution to the input.
    pub achieved_distance: f64,
    pub converged: bool,
    /// Final value of the defining constraint or min-max objective.
    pub objective: f64,
    /// Excess predictive loss on a clean reference set, when one is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excess_loss: Option<f64>,
}

impl EstimateReport {
    fn new(estimate: Estimate) -> Self {
        Self {
            estimate,
            mass_removed: 0.0,
            transport_spent: 0.0,
            iterations: 0,
            witness_direction: None,
            achieved_distance: 0.0,
            converged: true,
            objective: 0.0,
            excess_loss: None,
        }
    }
}

// ---------------------------------------------------------------------------
// One-dimensional Orlicz projection

/// Sorted 1-d sample with cumulative weights, for symmetric fractional trims.
struct Sorted1d {
    x: Vec<f64>,
    /// cum[i] = w[0] + ... + w[i-1].
    cum: Vec<f64>,
}

impl Sorted1d {
    fn new(vals: &[f64], weights: &[f64]) -> Self {
        let mut idx: Vec<usize> = (0..vals.len()).filter(|&i| weights[i] > 0.0).collect();
        idx.sort_by(|&a, &b| {
            vals[a]
                .total_cmp(&vals[b])
                .then(weights[a].total_cmp(&weights[b]))
        });
        let x: Vec<f64> = idx.iter().map(|&i| vals[i]).collect();
        let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
        let mut cum = Vec::with_capacity(w.len() + 1);
        cum.push(0.0);
        for wi in &w {
            cum.push(cum.last().unwrap() + wi);
        }
        Self { x, cum }
    }

    fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Kept weight of each atom after deleting `m / 2` from each tail.
    fn for_each_kept(&self, m: f64, mut f: impl FnMut(f64, f64)) {
        let lo = m / 2.0 * self.total();
        let hi = self.total() - lo;
        let start = self.cum.partition_point(|&c| c <= lo).saturating_sub(1);
        for i in start..self.x.len() {
            if self.cum[i] >= hi {
                break;
            }
            let kept = self.cum[i + 1].min(hi) - self.cum[i].max(lo);
            if kept > 0.0 {
                f(self.x[i], kept);
            }
        }
    }

    /// (trimmed mean, E psi(|X - mean| / 2 sigma)) after a symmetric trim of m.
    fn trimmed(&self, m: f64, psi: OrliczFunction, sigma: f64) -> (f64, f64) {
        let (mut s, mut k) = (0.0, 0.0);
        self.for_each_kept(m, |x, w| {
            s += w * x;
            k += w;
        });
        let mu = s / k;
        let mut c = 0.0;
        self.for_each_kept(m, |x, w| c += w * psi.eval((x - mu).abs() / (2.0 * sigma)));
        (mu, c / k)
    }
}

struct Trim1d {
    mean: f64,
    mass: f64,
    constraint: f64,
    iterations: usize,
}

/// Smallest symmetric trim (by bisection) whose remainder satisfies the
/// Orlicz constraint.
fn project_1d(vals: &[f64], weights: &[f64], cfg: &EstimatorConfig) -> Result<Trim1d> {
    let s = Sorted1d::new(vals, weights);
    let feasible = |m: f64| {
        let (mu, c) = s.trimmed(m, cfg.psi, cfg.sigma);
        (c <= ORLICZ_BOUND, mu, c)
    };
    let (ok, mu, c) = feasible(0.0);
    if ok {
        return Ok(Trim1d {
            mean: mu,
            mass: 0.0,
            constraint: c,
            iterations: 0,
        });
    }
    let (ok, _, _) = feasible(MASS_CAP);
    if !ok {
        // Report how much a symmetric trim would actually need.
        let (mut lo, mut hi) = (MASS_CAP, 1.0 - 1e-12);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid).0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return Err(Error::BudgetExceeded {
            needed: hi,
            cap: MASS_CAP,
        });
    }
    let (mut lo, mut hi) = (0.0, MASS_CAP);
    let mut iterations = 0;
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid).0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    let (_, mu, c) = feasible(hi);
    Ok(Trim1d {
        mean: mu,
        mass: hi,
        constraint: c,
        iterations,
    })
}

/// Projects a 1-d sample onto {E psi(|X - mu| / 2 sigma) <= 4} by deleting
/// equal mass from both tails; the estimate is the trimmed mean.
pub fn robust_mean_1d(p: &EmpiricalDist, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    cfg.validate()?;
    if p.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: p.dim(),
        });
    }
    let t = project_1d(p.flat_points(), p.weights(), cfg)?;
    let mut r = EstimateReport::new(Estimate::Vector(vec![t.mean]));
    r.mass_removed = t.mass;
    r.achieved_distance = t.mass;
    r.iterations = t.iterations;
    r.objective = t.constraint;
    r.witness_direction = Some(vec![1.0]);
    Ok(r)
}

// ---------------------------------------------------------------------------
// High-dimensional mean through one-dimensional projections

const SUBGRADIENT_STEPS: usize = 3000;

fn minimax_value(dirs: &[Vec<f64>], targets: &[f64], mu: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (j, (v, b)) in dirs.iter().zip(targets).enumerate() {
        let r = (dot(v, mu) - b).abs();
        if r > best.0 {
            best = (r, j);
        }
    }
    best
}

/// Subgradient descent on max_j |v_j^T mu - b_j| from `start` with steps
/// scale / sqrt(t). Returns the best iterate seen.
fn subgradient(dirs: &[Vec<f64>], targets: &[f64], start: Vec<f64>, scale: f64) -> (Vec<f64>, f64) {
    let mut mu = start;
    let (mut best_val, _) = minimax_value(dirs, targets, &mu);
    let mut best = mu.clone();
    for t in 1..=SUBGRADIENT_STEPS {
        let (_, j) = minimax_value(dirs, targets, &mu);
        let s = (dot(&dirs[j], &mu) - targets[j]).signum();
        let step = scale / (t as f64).sqrt();
        for (m, v) in mu.iter_mut().zip(&dirs[j]) {
            *m -= step * s * v;
        }
        let (val, _) = minimax_value(dirs, targets, &mu);
        if val < best_val {
            best_val = val;
            best.clone_from(&mu);
        }
    }
    (best, best_val)
}

/// Mean estimate from 1-d projections: mu_v = robust_mean_1d(v^T X) on each
/// direction, then argmin_mu max_v |v^T mu - mu_v| by restarted subgradient
/// descent.
pub fn robust_mean_highd(p: &EmpiricalDist, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    cfg.validate()?;
    if p.dim() == 1 {
        return robust_mean_1d(p, cfg);
    }
    let (p, _) = p.canonicalized();
    let d = p.dim();
    let dirs: Vec<Vec<f64>> = default_directions(&p, cfg.directions, cfg.seed)
        .into_iter()
        .map(|v| v.into_vec())
        .collect();
    let mut targets = Vec::with_capacity(dirs.len());
    let mut mass: f64 = 0.0;
    for v in &dirs {
        let t = project_1d(&p.project_values(v), p.weights(), cfg)?;
        targets.push(t.mean);
        mass = mass.max(t.mass);
    }
    // Least-squares anchor; the search runs on the offset from it so the
    // result moves exactly with translations of the data.
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for (v, t) in dirs.iter().zip(&targets) {
        let dv = DVector::from_column_slice(v);
        a += &dv * dv.transpose();
        b += dv * *t;
    }
    let anchor = solve_psd_min_norm(&a, &b, 1e-12)?;
    let offsets: Vec<f64> = dirs
        .iter()
        .zip(&targets)
        .map(|(v, t)| t - dot(v, anchor.as_slice()))
        .collect();
    let zero = vec![0.0; d];
    let (f0, _) = minimax_value(&dirs, &offsets, &zero);
    let mut rng = cfg.seed.derive(1).rng();
    let mut finals = Vec::with_capacity(cfg.restarts.max(1));
    let mut best = (zero.clone(), f0);
    if f0 > 0.0 {
        for r in 0..cfg.restarts.max(1) {
            let start = if r == 0 {
                zero.clone()
            } else {
                random_unit_vector(&mut rng, d)
                    .into_iter()
                    .map(|x| x * f0)
                    .collect()
            };
            let (mu, val) = subgradient(&dirs, &offsets, start, f0);
            finals.push(val);
            if val < best.1 {
                best = (mu, val);
            }
        }
    }
    // Certificate: the restarts agree on the optimum value.
    finals.sort_by(f64::total_cmp);
    let spread = if finals.len() > 1 {
        finals[1] - finals[0]
    } else {
        0.0
    };
    let mu: Vec<f64> = anchor.iter().zip(&best.0).map(|(a, o)| a + o).collect();
    let (val, j) = minimax_value(&dirs, &targets, &mu);
    let mut r = EstimateReport::new(Estimate::Vector(mu));
    r.mass_removed = mass;
    r.achieved_distance = mass;
    r.iterations = SUBGRADIENT_STEPS * cfg.restarts.max(1);
    r.witness_direction = Some(dirs[j].clone());
    r.objective = val;
    r.converged = spread <= 1e-4 * cfg.sigma;
    Ok(r)
}

// ---------------------------------------------------------------------------
// Spectral filtering

/// One filter iteration, for monitoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterStep {
    /// Total weight still kept.
    pub kept: f64,
    /// Top eigenvalue of sum_i c_i (x_i - mu_c)(x_i - mu_c)^T with the
    /// unnormalized weights c; never increases.
    pub scatter_top: f64,
    /// Top eigenvalue of the normalized covariance.
    pub cov_top: f64,
}

/// Covariance threshold for the isotropic k-th moment filter.
pub fn kth_threshold(eps: f64, k: f64, d: usize, n: usize, c1: f64, c2: f64) -> f64 {
    let d = d as f64;
    1.0 + c1 * eps.powf(1.0 - 2.0 / k) + c2 * (d * d.ln() / n as f64).sqrt()
}

fn top_eigen(m: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let (j, lam) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (j, &l)| if l > b.1 { (j, l) } else { b });
    (lam, eig.eigenvectors.column(j).iter().copied().collect())
}

struct Weighted {
    mean: Vec<f64>,
    scatter: DMatrix<f64>,
    kept: f64,
}

fn weighted_stats(p: &EmpiricalDist, c: &[f64]) -> Weighted {
    let d = p.dim();
    let kept: f64 = c.iter().sum();
    let mut mean = vec![0.0; d];
    for (x, &ci) in p.rows().zip(c) {
        if ci > 0.0 {
            mean.iter_mut().zip(x).for_each(|(m, xj)| *m += ci * xj);
        }
    }
    mean.iter_mut().for_each(|m| *m /= kept);
    let live: Vec<usize> = (0..p.len()).filter(|&i| c[i] > 0.0).collect();
    let centered = DMatrix::from_fn(live.len(), d, |r, j| {
        let i = live[r];
        c[i].sqrt() * (p.point(i)[j] - mean[j])
    });
    let scatter = centered.transpose() * &centered;
    Weighted {
        mean,
        scatter,
        kept,
    }
}

fn filter_loop(
    p: &EmpiricalDist,
    threshold: f64,
) -> Result<(EstimateReport, Vec<FilterStep>)> {
    let (p, _) = p.canonicalized();
    let mut c = p.weights().to_vec();
    let total: f64 = c.iter().sum();
    let mut trace = Vec::new();
    loop {
        let st = weighted_stats(&p, &c);
        let (scatter_top, v) = top_eigen(&st.scatter);
        let cov_top = scatter_top / st.kept;
        let removed = total - st.kept;
        debug_assert!(trace
            .last()
            .is_none_or(|s: &FilterStep| scatter_top <= s.scatter_top * (1.0 + 1e-9) + 1e-12));
        trace.push(FilterStep {
            kept: st.kept,
            scatter_top,
            cov_top,
        });
        if removed > MASS_CAP {
            return Err(Error::BudgetExceeded {
                needed: removed,
                cap: MASS_CAP,
            });
        }
        if cov_top <= threshold {
            let tv: f64 = p
                .weights()
                .iter()
                .zip(&c)
                .map(|(w, ci)| (w - ci / st.kept).max(0.0))
                .sum();
            let mut r = EstimateReport::new(Estimate::Vector(st.mean));
            r.mass_removed = removed;
            r.achieved_distance = tv;
            r.iterations = trace.len() - 1;
            r.witness_direction = Some(v);
            r.objective = cov_top;
            return Ok((r, trace));
        }
        let scores: Vec<f64> = p
            .rows()
            .map(|x| {
                let s: f64 = x.iter().zip(&st.mean).zip(&v).map(|((a, m), b)| (a - m) * b).sum();
                s * s
            })
            .collect();
        let tmax = scores
            .iter()
            .zip(&c)
            .filter(|(_, &ci)| ci > 0.0)
            .map(|(s, _)| *s)
            .fold(0.0_f64, f64::max);
        if tmax == 0.0 {
            // Positive variance needs a positive score somewhere.
            return Err(Error::NoConvergence(trace.len()));
        }
        for (ci, s) in c.iter_mut().zip(&scores) {
            *ci *= 1.0 - s / tmax;
            if *ci < crate::empirical::WEIGHT_FLOOR {
                *ci = 0.0;
            }
        }
    }
}

/// Spectral filter onto {cov <= sigma^2 (1 + c eps)}: while the top
/// eigenvalue is too large, downweight c_i <- c_i (1 - tau_i / tau_max) with
/// tau_i the squared projection on the top eigenvector.
pub fn filter_mean(p: &EmpiricalDist, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    filter_mean_traced(p, cfg).map(|(r, _)| r)
}

pub fn filter_mean_traced(
    p: &EmpiricalDist,
    cfg: &EstimatorConfig,
) -> Result<(EstimateReport, Vec<FilterStep>)> {
    cfg.validate()?;
    filter_loop(p, cfg.sigma * cfg.sigma * (1.0 + cfg.cov_const * cfg.eps))
}

/// The same filter for identity-covariance data with bounded k-th moments.
pub fn filter_mean_isotropic_kth(
    p: &EmpiricalDist,
    cfg: &EstimatorConfig,
) -> Result<EstimateReport> {
    cfg.validate()?;
    if !(cfg.k > 2.0) {
        return Err(Error::InvalidArgument(format!(
            "isotropic filter needs k > 2, got {}",
            cfg.k
        )));
    }
    let n = p.weights().iter().filter(|&&w| w > 0.0).count();
    let t = kth_threshold(cfg.eps, cfg.k, p.dim(), n, cfg.kth_c1, cfg.kth_c2);
    filter_loop(p, t).map(|(r, _)| r)
}

// ---------------------------------------------------------------------------
// W1 projection onto bounded directional moments

const ASCENT_STEPS: usize = 100;

fn moment_along(y: &[f64], w: &[f64], d: usize, v: &[f64], k: f64) -> f64 {
    y.chunks(d)
        .zip(w)
        .map(|(x, wi)| wi * dot(x, v).abs().powf(k))
        .sum()
}

/// Fixed-point ascent v <- grad / |grad| of E|v^T Y|^k on the sphere.
fn ascend(y: &[f64], w: &[f64], d: usize, mut v: Vec<f64>, k: f64) -> (Vec<f64>, f64) {
    let mut val = moment_along(y, w, d, &v, k);
    for _ in 0..ASCENT_STEPS {
        let mut g = vec![0.0; d];
        for (x, wi) in y.chunks(d).zip(w) {
            let z = dot(x, &v);
            let s = wi * z.abs().powf(k - 2.0) * z;
            g.iter_mut().zip(x).for_each(|(gj, xj)| *gj += s * xj);
        }
        let n = norm2(&g);
        if n == 0.0 {
            break;
        }
        let next: Vec<f64> = g.into_iter().map(|x| x / n).collect();
        let next_val = moment_along(y, w, d, &next, k);
        if next_val <= val * (1.0 + 1e-12) {
            if next_val > val {
                v = next;
                val = next_val;
            }
            break;
        }
        v = next;
        val = next_val;
    }
    (v, val)
}

/// Largest tau with sum_i w_i min(|z_i|, tau)^k = target, or None when the
/// unclipped moment is already within target.
pub(crate) fn clip_level(z: &[f64], w: &[f64], k: f64, target: f64) -> Option<f64> {
    let mut idx: Vec<usize> = (0..z.len()).filter(|&i| w[i] > 0.0).collect();
    idx.sort_by(|&a, &b| z[a].abs().total_cmp(&z[b].abs()));
    let total: f64 = idx.iter().map(|&i| w[i] * z[i].abs().powf(k)).sum();
    if total <= target {
        return None;
    }
    // Walk up: below = moment of atoms under the candidate level, above =
    // weight of atoms at or over it.
    let mut below = 0.0;
    let mut above: f64 = idx.iter().map(|&i| w[i]).sum();
    for &i in &idx {
        let a = z[i].abs();
        // Level with every remaining atom clipped at a.
        if below + above * a.powf(k) >= target {
            return Some(((target - below) / above).max(0.0).powf(1.0 / k));
        }
        below += w[i] * a.powf(k);
        above -= w[i];
    }
    unreachable!("total exceeds target, so some level reaches it")
}

/// Heuristic W1 projection onto {sup_v E|v^T Y|^k <= 2 sigma^k}: find the
/// worst direction by ascent, clip the 1-d coordinates along it at the level
/// restoring the constraint, repeat.
pub fn w1_project_moment(
    p: &EmpiricalDist,
    cfg: &EstimatorConfig,
) -> Result<(EmpiricalDist, EstimateReport)> {
    cfg.validate()?;
    cfg.check_k()?;
    let (p, _) = p.canonicalized();
    let d = p.dim();
    let k = cfg.k;
    let bound = 2.0 * cfg.sigma.powf(k);
    let slack = cfg.tol * bound.max(1.0);
    let w = p.weights();
    let mut probes: Vec<Vec<f64>> = if d == 1 {
        vec![vec![1.0]]
    } else {
        default_directions(&p, cfg.directions, cfg.seed)
            .into_iter()
            .map(|v| v.into_vec())
            .collect()
    };
    let mut y = p.flat_points().to_vec();
    let mut witness = probes[0].clone();
    let mut rounds = 0;
    let worst = loop {
        // Worst probe, then ascent from it and from the previous witness.
        let (mut v, mut val) = (probes[0].clone(), f64::NEG_INFINITY);
        for pr in &probes {
            let m = moment_along(&y, w, d, pr, k);
            if m > val {
                val = m;
                v = pr.clone();
            }
        }
        for start in [v, witness.clone()] {
            let (u, m) = ascend(&y, w, d, start, k);
            if m > val {
                val = m;
                witness = u;
            } else if val == m {
                witness = u;
            }
        }
        if val <= bound + slack {
            break val;
        }
        if rounds == cfg.max_iter {
            return Err(Error::NoConvergence(rounds));
        }
        rounds += 1;
        let z: Vec<f64> = y.chunks(d).map(|x| dot(x, &witness)).collect();
        if let Some(tau) = clip_level(&z, w, k, bound) {
            for (x, zi) in y.chunks_mut(d).zip(&z) {
                let moved = zi.signum() * zi.abs().min(tau) - zi;
                if moved != 0.0 {
                    x.iter_mut().zip(&witness).for_each(|(a, b)| *a += moved * b);
                }
            }
        }
        probes.push(witness.clone());
    };
    let q = p.with_points(d, y)?;
    let spent = crate::adversaries::transport_cost(&p, &q);
    let m = weighted_second_moment(&q);
    let rows = (0..d).map(|i| (0..d).map(|j| m[(i, j)]).collect()).collect();
    let mut r = EstimateReport::new(Estimate::Matrix(rows));
    r.transport_spent = spent;
    r.achieved_distance = spent;
    r.iterations = rounds;
    r.witness_direction = Some(witness);
    r.objective = worst;
    Ok((q, r))
}

// ---------------------------------------------------------------------------
// Regression

/// Splits a joint [x, y] point into covariates and response.
fn split(point: &[f64]) -> (&[f64], f64) {
    let (x, y) = point.split_at(point.len() - 1);
    (x, y[0])
}

/// Weighted least squares over joint [x, y] points (minimum-norm when the
/// weighted design is rank deficient).
fn weighted_ls(p: &EmpiricalDist, c: &[f64]) -> Result<Vec<f64>> {
    let d = p.dim() - 1;
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for (pt, &ci) in p.rows().zip(c) {
        if ci == 0.0 {
            continue;
        }
        let (x, y) = split(pt);
        for i in 0..d {
            b[i] += ci * x[i] * y;
            for j in i..d {
                a[(i, j)] += ci * x[i] * x[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    Ok(solve_psd_min_norm(&a, &b, 1e-12)?.iter().copied().collect())
}

fn clip_norm(mut theta: Vec<f64>, radius: f64) -> Vec<f64> {
    let n = norm2(&theta);
    if n > radius {
        theta.iter_mut().for_each(|t| *t *= radius / n);
    }
    theta
}

fn check_regression(data: &EmpiricalDist) -> Result<()> {
    if data.dim() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: data.dim(),
        });
    }
    Ok(())
}

/// Ordinary least squares on joint [x, y] data, norm-capped at `radius`.
pub fn ols(data: &EmpiricalDist, radius: f64) -> Result<Vec<f64>> {
    check_regression(data)?;
    Ok(clip_norm(weighted_ls(data, data.weights())?, radius))
}

/// Mean squared residual of `theta` on joint [x, y] data.
pub fn squared_loss(data: &EmpiricalDist, theta: &[f64]) -> f64 {
    data.rows()
        .zip(data.weights())
        .map(|(pt, w)| {
            let (x, y) = split(pt);
            let r = y - dot(x, theta);
            w * r * r
        })
        .sum()
}

/// Loss of `theta` on a clean reference set minus the best achievable loss there.
pub fn excess_loss(reference: &EmpiricalDist, theta: &[f64]) -> Result<f64> {
    check_regression(reference)?;
    if theta.len() != reference.dim() - 1 {
        return Err(Error::DimensionMismatch {
            expected: reference.dim() - 1,
            got: theta.len(),
        });
    }
    let best = weighted_ls(reference, reference.weights())?;
    Ok((squared_loss(reference, theta) - squared_loss(reference, &best)).max(0.0))
}

/// A filter removes at most about as much clean mass as corrupted mass, so
/// clearing eps of outliers may cost up to 2 eps.
const REMOVAL_FACTOR: f64 = 2.0;

/// Iteratively reweighted least squares with gradient-norm filtering: score
/// each point by |x_i z_i|^2 (z_i the residual), downweight
/// c_i <- c_i (1 - tau_i / tau_max) and refit until at least 2 eps mass is
/// gone.
pub fn robust_linreg_tv(data: &EmpiricalDist, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    cfg.validate()?;
    check_regression(data)?;
    let (p, _) = data.canonicalized();
    let d = p.dim() - 1;
    let live = p.weights().iter().filter(|&&w| w > 0.0).count();
    if live <= d {
        return Err(Error::PreconditionViolated(format!(
            "need more than {d} atoms, got {live}"
        )));
    }
    let mut c = p.weights().to_vec();
    let total: f64 = c.iter().sum();
    let mut theta = weighted_ls(&p, &c)?;
    let mut iterations = 0;
    let mut converged = true;
    loop {
        let kept: f64 = c.iter().sum();
        let budget = REMOVAL_FACTOR * cfg.eps - (total - kept);
        if budget <= 1e-15 {
            break;
        }
        if iterations == cfg.max_iter {
            converged = false;
            break;
        }
        let scores: Vec<f64> = p
            .rows()
            .map(|pt| {
                let (x, y) = split(pt);
                let z = y - dot(x, &theta);
                dot(x, x) * z * z
            })
            .collect();
        let tmax = scores
            .iter()
            .zip(&c)
            .filter(|(_, &ci)| ci > 0.0)
            .map(|(s, _)| *s)
            .fold(0.0_f64, f64::max);
        if tmax == 0.0 {
            break;
        }
        // Residuals at rounding level: nothing left to filter.
        let scale = p
            .rows()
            .map(|pt| {
                let (x, y) = split(pt);
                dot(x, x) * y * y
            })
            .fold(0.0_f64, f64::max);
        if tmax <= 1e-24 * scale {
            break;
        }
        for (ci, s) in c.iter_mut().zip(&scores) {
            *ci *= 1.0 - s / tmax;
            if *ci < crate::empirical::WEIGHT_FLOOR {
                *ci = 0.0;
            }
        }
        if total - c.iter().sum::<f64>() > MASS_CAP {
            return Err(Error::BudgetExceeded {
                needed: total - c.iter().sum::<f64>(),
                cap: MASS_CAP,
            });
        }
        theta = weighted_ls(&p, &c)?;
        iterations += 1;
    }
    let kept: f64 = c.iter().sum();
    let tv: f64 = p
        .weights()
        .iter()
        .zip(&c)
        .map(|(w, ci)| (w - ci / kept).max(0.0))
        .sum();
    let mut r = EstimateReport::new(Estimate::Coefficients(clip_norm(theta, cfg.radius)));
    r.mass_removed = total - kept;
    r.achieved_distance = tv;
    r.iterations = iterations;
    r.converged = converged;
    r.objective = {
        let q = p.with_weights(c)?;
        let th = r.estimate.as_vector().unwrap().to_vec();
        squared_loss(&q, &th)
    };
    Ok(r)
}

/// W1 regression: project the joint [x, y] points onto bounded k-th
/// moments at scale sigma (1 + R), fit least squares on the projection,
/// cap the norm at R.
pub fn robust_linreg_w1(data: &EmpiricalDist, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    cfg.validate()?;
    check_regression(data)?;
    let joint = EstimatorConfig {
        sigma: cfg.sigma * (1.0 + cfg.radius),
        ..cfg.clone()
    };
    let (q, proj) = w1_project_moment(data, &joint)?;
    let theta = clip_norm(weighted_ls(&q, q.weights())?, cfg.radius);
    let mut r = EstimateReport::new(Estimate::Coefficients(theta));
    r.transport_spent = proj.transport_spent;
    r.achieved_distance = proj.achieved_distance;
    r.iterations = proj.iterations;
    r.witness_direction = proj.witness_direction;
    r.objective = proj.objective;
    r.converged = proj.converged;
    Ok(r)
}

/// Plain weighted mean, the non-robust baseline.
pub fn plain_mean(p: &EmpiricalDist) -> EstimateReport {
    EstimateReport::new(Estimate::Vector(weighted_mean(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversaries::transport_cost;
    use crate::rng::standard_normal;
    use proptest::prelude::*;

    fn gaussian(n: usize, d: usize, seed: u64) -> EmpiricalDist {
        let mut rng = RngSeed(seed).rng();
        EmpiricalDist::uniform_flat(d, (0..n * d).map(|_| standard_normal(&mut rng)).collect())
            .unwrap()
    }

    fn cfg(eps: f64) -> EstimatorConfig {
        EstimatorConfig {
            eps,
            ..Default::default()
        }
    }

    fn vec_of(r: &EstimateReport) -> Vec<f64> {
        r.estimate.as_vector().unwrap().to_vec()
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        norm2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
    }

    #[test]
    fn mean_1d_clean_data_is_untouched() {
        let p = EmpiricalDist::uniform_1d(&[0.5, -0.2, 1.0, 0.3]).unwrap();
        let r = robust_mean_1d(&p, &cfg(0.1)).unwrap();
        assert_eq!(r.mass_removed, 0.0);
        assert!((vec_of(&r)[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn mean_1d_four_atoms() {
        // Trimming b from each side of {0 (3/4), 10 (1/4)} leaves a two-atom
        // law with top share a = (1/4 - b)/(1 - 2b); the constraint
        // 100 a (1 - a) / 4 <= 4 binds at a = 1/5, so b = 1/12, mean 2.
        let p = EmpiricalDist::uniform_1d(&[0.0, 0.0, 0.0, 10.0]).unwrap();
        let r = robust_mean_1d(&p, &cfg(0.1)).unwrap();
        assert!((r.mass_removed - 1.0 / 6.0).abs() < 2e-6, "{}", r.mass_removed);
        assert!((vec_of(&r)[0] - 2.0).abs() < 1e-4);
        assert!(r.objective <= ORLICZ_BOUND);
    }

    #[test]
    fn mean_1d_symmetric_outliers() {
        let mut v: Vec<f64> = (0..40).map(|i| (i as f64 - 19.5) / 20.0).collect();
        v.extend([-1e4, 1e4]);
        let r = robust_mean_1d(&EmpiricalDist::uniform_1d(&v).unwrap(), &cfg(0.1)).unwrap();
        assert!(vec_of(&r)[0].abs() < 1e-9);
        assert!(r.mass_removed > 0.0);
    }

    #[test]
    fn mean_1d_budget() {
        let p = EmpiricalDist::uniform_1d(&[-1e6, 1e6]).unwrap();
        assert!(matches!(
            robust_mean_1d(&p, &cfg(0.1)),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn highd_recovers_center_of_symmetric_data() {
        // Point-symmetric data about c: every projection is symmetric about
        // v^T c, so each symmetric trim returns v^T c and the min-max optimum
        // is c with value zero.
        let c = [1.5, -2.0];
        let base = gaussian(30, 2, 4);
        let mut flat = Vec::new();
        for x in base.rows() {
            flat.extend([c[0] + x[0], c[1] + x[1], c[0] - x[0], c[1] - x[1]]);
        }
        flat.extend([c[0] + 40.0, c[1], c[0] - 40.0, c[1]]);
        let p = EmpiricalDist::uniform_flat(2, flat).unwrap();
        let r = robust_mean_highd(&p, &cfg(0.1)).unwrap();
        assert!(dist(&vec_of(&r), &c) < 1e-6, "{:?}", r.estimate);
        assert!(r.objective < 1e-6);
        assert!(r.converged);
    }

    #[test]
    fn highd_clean_gaussian_close_to_sample_mean() {
        let (n, d) = (2000, 4);
        let p = gaussian(n, d, 5);
        let c = EstimatorConfig {
            psi: OrliczFunction::SubGaussian,
            sigma: (8.0f64 / 3.0).sqrt(),
            directions: 64,
            ..cfg(0.1)
        };
        let r = robust_mean_highd(&p, &c).unwrap();
        let noise = (d as f64 / n as f64).sqrt();
        assert!(dist(&vec_of(&r), &weighted_mean(&p)) <= 3.0 * noise);
    }

    #[test]
    fn filter_clean_data() {
        let p = gaussian(4000, 4, 6);
        let c = EstimatorConfig {
            sigma: 1.1,
            ..cfg(0.1)
        };
        let r = filter_mean(&p, &c).unwrap();
        assert!(r.iterations <= 1);
        assert!(dist(&vec_of(&r), &weighted_mean(&p)) < 0.05);
    }

    #[test]
    fn filter_removes_far_cluster() {
        let (n, d) = (2000, 4);
        let clean = gaussian(n, d, 7);
        let mut flat = clean.flat_points().to_vec();
        let far = 10.0 * (d as f64).sqrt();
        for i in 0..n / 10 {
            flat[i * d..(i + 1) * d].copy_from_slice(&[far, 0.0, 0.0, 0.0]);
        }
        let p = EmpiricalDist::uniform_flat(d, flat).unwrap();
        let (r, trace) = filter_mean_traced(&p, &cfg(0.1)).unwrap();
        assert!(dist(&vec_of(&r), &[0.0; 4]) < 3.0 * 0.1f64.sqrt());
        assert!(r.mass_removed <= MASS_CAP);
        for w in trace.windows(2) {
            assert!(w[1].kept <= w[0].kept);
            assert!(w[1].scatter_top <= w[0].scatter_top * (1.0 + 1e-9));
        }
        assert!(r.objective <= 1.2 + 1e-12);
    }

    #[test]
    fn filter_all_outliers_exceeds_budget() {
        let mut v = vec![vec![-50.0, 0.0]; 50];
        v.extend(vec![vec![50.0, 0.0]; 50]);
        let p = EmpiricalDist::uniform_rows(&v).unwrap();
        assert!(matches!(
            filter_mean(&p, &cfg(0.1)),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn kth_threshold_formula() {
        assert_eq!(kth_threshold(0.0, 4.0, 8, 1000, 1.0, 1.0), 1.0 + (8.0 * 8f64.ln() / 1000.0).sqrt());
        assert!((kth_threshold(0.04, 4.0, 1, 10, 2.0, 1.0) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn isotropic_filter_clean() {
        let p = gaussian(4000, 4, 8);
        let r = filter_mean_isotropic_kth(&p, &cfg(0.05)).unwrap();
        assert!(dist(&vec_of(&r), &weighted_mean(&p)) < 0.05);
    }

    #[test]
    fn w1_feasible_data_does_not_move() {
        let p = gaussian(500, 3, 9);
        let c = EstimatorConfig {
            sigma: 3f64.powf(0.25),
            directions: 32,
            ..cfg(0.1)
        };
        let (q, r) = w1_project_moment(&p, &c).unwrap();
        assert_eq!(q, p.canonicalized().0);
        assert_eq!(r.transport_spent, 0.0);
    }

    #[test]
    fn w1_clips_single_outlier() {
        // (1/n)((n - 1) + tau^4) = 2 gives tau = (n + 1)^{1/4}.
        let n = 20;
        let big = 50.0;
        let mut v: Vec<f64> = (0..n - 1).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        v.push(big);
        let p = EmpiricalDist::uniform_1d(&v).unwrap();
        let (q, r) = w1_project_moment(&p, &cfg(0.1)).unwrap();
        let tau = ((n + 1) as f64).powf(0.25);
        assert!((r.transport_spent - (big - tau) / n as f64).abs() < 1e-12);
        let m4: f64 = q.flat_points().iter().map(|x| x.powi(4)).sum::<f64>() / n as f64;
        assert!((m4 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn w1_projection_meets_constraint_and_accounts_exactly() {
        let clean = gaussian(1000, 3, 10);
        let mut flat = clean.flat_points().to_vec();
        for i in 0..10 {
            flat[3 * i] += 25.0;
            flat[3 * i + 2] -= 10.0;
        }
        let p = EmpiricalDist::uniform_flat(3, flat).unwrap();
        let c = EstimatorConfig {
            sigma: 3f64.powf(0.25),
            directions: 64,
            ..cfg(0.1)
        };
        let (q, r) = w1_project_moment(&p, &c).unwrap();
        assert!(r.transport_spent > 0.0);
        let pc = p.canonicalized().0;
        assert!((transport_cost(&pc, &q) - r.transport_spent).abs() <= 1e-12);
        let bound = 2.0 * 3.0;
        let mut rng = RngSeed(77).rng();
        for _ in 0..500 {
            let v = random_unit_vector(&mut rng, 3);
            let m = moment_along(q.flat_points(), q.weights(), 3, &v, 4.0);
            assert!(m <= bound * (1.0 + 1e-3), "{m}");
        }
    }

    fn regression(n: usize, theta: &[f64], noise: f64, seed: u64) -> EmpiricalDist {
        let d = theta.len();
        let mut rng = RngSeed(seed).rng();
        let mut flat = Vec::with_capacity(n * (d + 1));
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
            let y = dot(&x, theta) + noise * standard_normal(&mut rng);
            flat.extend(x);
            flat.push(y);
        }
        EmpiricalDist::uniform_flat(d + 1, flat).unwrap()
    }

    #[test]
    fn linreg_tv_noiseless_is_exact() {
        let theta = [1.0, -2.0, 0.5];
        let p = regression(300, &theta, 0.0, 11);
        let r = robust_linreg_tv(&p, &cfg(0.05)).unwrap();
        assert!(dist(&vec_of(&r), &theta) < 1e-9);
        assert_eq!(r.mass_removed, 0.0);
    }

    #[test]
    fn linreg_tv_resists_leverage_cluster() {
        let theta = [1.0, 0.5];
        let clean = regression(2000, &theta, 1.0, 12);
        let mut flat = clean.flat_points().to_vec();
        for i in 0..100 {
            flat[3 * i..3 * i + 3].copy_from_slice(&[15.0, 0.0, -15.0]);
        }
        let p = EmpiricalDist::uniform_flat(3, flat).unwrap();
        let r = robust_linreg_tv(&p, &cfg(0.05)).unwrap();
        let plain = ols(&p, 1e6).unwrap();
        assert!(dist(&vec_of(&r), &theta) < 0.15);
        assert!(dist(&plain, &theta) > 1.0);
        assert!(r.mass_removed >= 0.1 && r.mass_removed < 0.2);
    }

    #[test]
    fn linreg_norm_cap() {
        let p = regression(200, &[3.0, 4.0], 0.0, 13);
        let c = EstimatorConfig {
            radius: 1.0,
            ..cfg(0.0)
        };
        let r = robust_linreg_tv(&p, &c).unwrap();
        assert!((norm2(&vec_of(&r)) - 1.0).abs() < 1e-12);
        let r = robust_linreg_w1(&p, &c).unwrap();
        assert!(norm2(&vec_of(&r)) <= 1.0 + 1e-12);
    }

    #[test]
    fn linreg_w1_clean_is_ols() {
        let p = regression(400, &[1.0, -1.0], 0.5, 14);
        let c = EstimatorConfig {
            sigma: 3f64.powf(0.25),
            radius: 5.0,
            directions: 32,
            ..cfg(0.1)
        };
        let r = robust_linreg_w1(&p, &c).unwrap();
        assert_eq!(r.transport_spent, 0.0);
        assert!(dist(&vec_of(&r), &ols(&p, 5.0).unwrap()) < 1e-12);
    }

    #[test]
    fn excess_loss_is_zero_at_the_optimum() {
        let p = regression(500, &[2.0, 1.0], 1.0, 15);
        let best = ols(&p, 1e6).unwrap();
        assert!(excess_loss(&p, &best).unwrap() < 1e-12);
        assert!(excess_loss(&p, &[0.0, 0.0]).unwrap() > 1.0);
    }

    fn small_cloud(d: usize) -> impl Strategy<Value = EmpiricalDist> {
        prop::collection::vec(-3.0f64..3.0, (20 * d)..(40 * d)).prop_map(move |mut v| {
            v.truncate(v.len() / d * d);
            EmpiricalDist::uniform_flat(d, v).unwrap()
        })
    }

    fn reversed(p: &EmpiricalDist) -> EmpiricalDist {
        let idx: Vec<usize> = (0..p.len()).rev().collect();
        p.select(&idx).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn translation_equivariance(p in small_cloud(2), cx in -50.0f64..50.0, cy in -50.0f64..50.0) {
            let c = EstimatorConfig { sigma: 2.0, directions: 16, restarts: 4, ..cfg(0.1) };
            let shift = [cx, cy];
            let moved = p.translate(&shift).unwrap();
            for f in [robust_mean_highd, filter_mean] {
                let a = vec_of(&f(&p, &c).unwrap());
                let b = vec_of(&f(&moved, &c).unwrap());
                for j in 0..2 {
                    prop_assert!((b[j] - a[j] - shift[j]).abs() < 1e-9);
                }
            }
            let p1 = p.project(&[1.0, 0.0]).unwrap();
            let a = vec_of(&robust_mean_1d(&p1, &c).unwrap())[0];
            let b = vec_of(&robust_mean_1d(&p1.translate(&[cx]).unwrap(), &c).unwrap())[0];
            prop_assert!((b - a - cx).abs() < 1e-9);
        }

        #[test]
        fn scale_equivariance(p in small_cloud(2), s in 0.1f64..20.0) {
            let c = EstimatorConfig { sigma: 2.0, directions: 16, restarts: 4, ..cfg(0.1) };
            let cs = EstimatorConfig { sigma: 2.0 * s, ..c.clone() };
            let scaled = p.scale(s).unwrap();
            for f in [robust_mean_highd, filter_mean] {
                let a = vec_of(&f(&p, &c).unwrap());
                let b = vec_of(&f(&scaled, &cs).unwrap());
                for j in 0..2 {
                    prop_assert!((b[j] - s * a[j]).abs() <= 1e-9 * (1.0 + (s * a[j]).abs()));
                }
            }
        }

        #[test]
        fn permutation_invariance(p in small_cloud(3)) {
            let c = EstimatorConfig { sigma: 2.0, directions: 16, restarts: 4, ..cfg(0.1) };
            let r = reversed(&p);
            prop_assert_eq!(robust_mean_highd(&p, &c).unwrap(), robust_mean_highd(&r, &c).unwrap());
            prop_assert_eq!(filter_mean(&p, &c).unwrap(), filter_mean(&r, &c).unwrap());
            let kc = EstimatorConfig { sigma: 2.0, ..c.clone() };
            prop_assert_eq!(w1_project_moment(&p, &kc).unwrap(), w1_project_moment(&r, &kc).unwrap());
            prop_assert_eq!(robust_linreg_tv(&p, &c).unwrap(), robust_linreg_tv(&r, &c).unwrap());
        }

        #[test]
        fn filter_is_monotone(p in small_cloud(3), eps in 0.0f64..0.3) {
            let c = EstimatorConfig { sigma: 1.5, ..cfg(eps) };
            if let Ok((r, trace)) = filter_mean_traced(&p, &c) {
                for w in trace.windows(2) {
                    prop_assert!(w[1].kept <= w[0].kept);
                    prop_assert!(w[1].scatter_top <= w[0].scatter_top * (1.0 + 1e-9) + 1e-12);
                }
                prop_assert!(r.objective <= 2.25 * (1.0 + 2.0 * eps) + 1e-12);
                prop_assert!(r.mass_removed <= MASS_CAP);
            }
        }

        #[test]
        fn w1_transport_accounting(p in small_cloud(2), sigma in 0.3f64..1.5) {
            let c = EstimatorConfig { sigma, directions: 16, ..cfg(0.1) };
            let (q, r) = w1_project_moment(&p, &c).unwrap();
            let pc = p.canonicalized().0;
            prop_assert!((transport_cost(&pc, &q) - r.transport_spent).abs() <= 1e-12);
            let bound = 2.0 * sigma.powi(4);
            for v in [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]] {
                prop_assert!(moment_along(q.flat_points(), q.weights(), 2, &v, 4.0) <= bound * (1.0 + 1e-6) + 1e-6);
            }
        }
    }
}

//! Weighted finite point sets and unit directions.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::cmp::Ordering;

/// Weights smaller than this after a reweighting are treated as deleted.
pub const WEIGHT_FLOOR: f64 = 1e-15;

/// A probability distribution supported on finitely many points of R^d.
///
/// Points are stored row-major. Weights are nonnegative and sum to one
/// (to 1e-12); atoms with zero weight are kept so that index-based
/// witnesses (deletions, couplings) stay aligned with the source sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDist {
    n: usize,
    d: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalDist {
    /// Build from row-major coordinates and weights; weights are renormalized.
    pub fn from_flat(d: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDistribution("dimension must be >= 1".into()));
        }
        if points.len() % d != 0 {
            return Err(Error::InvalidDistribution(format!(
                "{} coordinates do not split into rows of {}",
                points.len(),
                d
            )));
        }
        let n = points.len() / d;
        if n == 0 {
            return Err(Error::InvalidDistribution("no points".into()));
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: weights.len(),
            });
        }
        if let Some(x) = points.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate {x}")));
        }
        let weights = normalize_weights(weights)?;
        Ok(Self {
            n,
            d,
            points,
            weights,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        Self::from_flat(d, flat, weights)
    }

    pub fn uniform_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        Self::from_rows(rows, vec![1.0; n])
    }

    pub fn uniform_flat(d: usize, points: Vec<f64>) -> Result<Self> {
        let n = if d == 0 { 0 } else { points.len() / d };
        Self::from_flat(d, points, vec![1.0; n])
    }

    /// One-dimensional distribution with uniform weights.
    pub fn uniform_1d(values: &[f64]) -> Result<Self> {
        Self::from_flat(1, values.to_vec(), vec![1.0; values.len()])
    }

    pub fn weighted_1d(values: &[f64], weights: &[f64]) -> Result<Self> {
        Self::from_flat(1, values.to_vec(), weights.to_vec())
    }

    pub fn point_mass(c: &[f64]) -> Result<Self> {
        Self::from_flat(c.len(), c.to_vec(), vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn flat_points(&self) -> &[f64] {
        &self.points
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.d)
    }

    /// Coordinates of a 1-d distribution (or the first column otherwise).
    pub fn values_1d(&self) -> Vec<f64> {
        self.rows().map(|r| r[0]).collect()
    }

    /// Same support, new weights (renormalized, tiny weights zeroed).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: weights.len(),
            });
        }
        let weights = normalize_weights(weights)?;
        Ok(Self {
            n: self.n,
            d: self.d,
            points: self.points.clone(),
            weights,
        })
    }

    /// Same weights, new points (row-major, same count and dimension `d`).
    pub fn with_points(&self, d: usize, points: Vec<f64>) -> Result<Self> {
        if points.len() != self.n * d {
            return Err(Error::DimensionMismatch {
                expected: self.n * d,
                got: points.len(),
            });
        }
        self.reuse_weights(d, points)
    }

    /// New points carrying this distribution's (already valid) weights unchanged.
    fn reuse_weights(&self, d: usize, points: Vec<f64>) -> Result<Self> {
        if let Some(x) = points.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate {x}")));
        }
        Ok(Self {
            n: self.n,
            d,
            points,
            weights: self.weights.clone(),
        })
    }

    /// Values of `v^T x` for every support point.
    pub fn project_values(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.d);
        self.rows().map(|r| dot(r, v)).collect()
    }

    /// The pushforward of this distribution under `x -> v^T x`.
    pub fn project(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: v.len(),
            });
        }
        Ok(Self {
            n: self.n,
            d: 1,
            points: self.project_values(v),
            weights: self.weights.clone(),
        })
    }

    /// Pushforward under an arbitrary scalar function.
    pub fn map_1d<F: Fn(&[f64]) -> f64>(&self, f: F) -> Result<Self> {
        let vals: Vec<f64> = self.rows().map(f).collect();
        self.reuse_weights(1, vals)
    }

    /// Add `c` to every point.
    pub fn translate(&self, c: &[f64]) -> Result<Self> {
        if c.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: c.len(),
            });
        }
        let pts = self
            .points
            .iter()
            .enumerate()
            .map(|(k, x)| x + c[k % self.d])
            .collect();
        self.reuse_weights(self.d, pts)
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        self.reuse_weights(self.d, self.points.iter().map(|x| x * s).collect())
    }

    /// Keep only the given rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let mut pts = Vec::with_capacity(idx.len() * self.d);
        let mut w = Vec::with_capacity(idx.len());
        for &i in idx {
            pts.extend_from_slice(self.point(i));
            w.push(self.weights[i]);
        }
        Self::from_flat(self.d, pts, w)
    }

    /// Row permutation sorting points lexicographically, ties broken by weight.
    /// Estimators work in this order so results do not depend on input order.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.sort_by(|&a, &b| {
            lex_cmp(self.point(a), self.point(b))
                .then_with(|| self.weights[a].total_cmp(&self.weights[b]))
        });
        idx
    }

    pub fn canonicalized(&self) -> (Self, Vec<usize>) {
        let order = self.canonical_order();
        let c = self
            .select(&order)
            .expect("reordering keeps a valid distribution");
        (c, order)
    }

    /// Coordinate-wise weighted median (lower median).
    pub fn coordinate_median(&self) -> Vec<f64> {
        (0..self.d)
            .map(|j| {
                let col: Vec<f64> = self.rows().map(|r| r[j]).collect();
                weighted_quantile(&col, &self.weights, 0.5)
            })
            .collect()
    }

    /// Largest absolute coordinate; a scale for relative tolerances.
    pub fn max_abs(&self) -> f64 {
        self.points.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

fn normalize_weights(mut weights: Vec<f64>) -> Result<Vec<f64>> {
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidDistribution(format!("bad weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidDistribution("weights sum to zero".into()));
    }
    // Already-normalized weights pass through untouched, so reselecting or
    // reordering rows never perturbs them.
    let needs_scaling = |t: f64| (t - 1.0).abs() > 1e-12;
    let scale = if needs_scaling(total) { total } else { 1.0 };
    for w in weights.iter_mut() {
        *w /= scale;
        if *w < WEIGHT_FLOOR {
            *w = 0.0;
        }
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidDistribution("all weights below floor".into()));
    }
    if needs_scaling(total) {
        for w in weights.iter_mut() {
            *w /= total;
        }
    }
    Ok(weights)
}

pub fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Smallest value whose cumulative weight reaches `q` (weights need not be sorted).
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= q * total - 1e-15 {
            return values[i];
        }
    }
    values[*idx.last().expect("nonempty")]
}

/// A unit vector in R^d.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct Direction(Vec<f64>);

impl Direction {
    /// Normalizes `v`; fails on a (near) zero vector.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        let n = norm2(&v);
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidArgument(
                "direction must be a nonzero finite vector".into(),
            ));
        }
        Ok(Direction(v.into_iter().map(|x| x / n).collect()))
    }

    pub fn axis(d: usize, j: usize) -> Self {
        let mut v = vec![0.0; d];
        v[j] = 1.0;
        Direction(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn negated(&self) -> Self {
        Direction(self.0.iter().map(|x| -x).collect())
    }
}

/// E_p[X].
pub fn weighted_mean(p: &EmpiricalDist) -> Vec<f64> {
    let mut m = vec![0.0; p.dim()];
    for (r, &w) in p.rows().zip(p.weights()) {
        if w == 0.0 {
            continue;
        }
        for (mj, xj) in m.iter_mut().zip(r) {
            *mj += w * xj;
        }
    }
    m
}

/// E_p[X X^T].
pub fn weighted_second_moment(p: &EmpiricalDist) -> DMatrix<f64> {
    weighted_scatter(p, None)
}

/// E_p[(X - mu)(X - mu)^T].
pub fn weighted_covariance(p: &EmpiricalDist) -> DMatrix<f64> {
    let mu = weighted_mean(p);
    weighted_scatter(p, Some(&mu))
}

fn weighted_scatter(p: &EmpiricalDist, center: Option<&[f64]>) -> DMatrix<f64> {
    let d = p.dim();
    let mut m = DMatrix::<f64>::zeros(d, d);
    let mut buf = vec![0.0; d];
    for (r, &w) in p.rows().zip(p.weights()) {
        if w == 0.0 {
            continue;
        }
        for j in 0..d {
            buf[j] = r[j] - center.map_or(0.0, |c| c[j]);
        }
        for a in 0..d {
            let wa = w * buf[a];
            for b in a..d {
                m[(a, b)] += wa * buf[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
    m
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn weights_are_normalized() {
        let p = EmpiricalDist::weighted_1d(&[0.0, 1.0, 2.0], &[1.0, 1.0, 2.0]).unwrap();
        let s: f64 = p.weights().iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);
        assert_eq!(p.weight(2), 0.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(EmpiricalDist::uniform_1d(&[]).is_err());
        assert!(EmpiricalDist::uniform_1d(&[f64::NAN]).is_err());
        assert!(EmpiricalDist::weighted_1d(&[0.0], &[-1.0]).is_err());
        assert!(EmpiricalDist::weighted_1d(&[0.0, 1.0], &[0.0, 0.0]).is_err());
        assert!(EmpiricalDist::from_flat(0, vec![], vec![]).is_err());
        assert!(Direction::new(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn tiny_weights_are_zeroed() {
        let p = EmpiricalDist::weighted_1d(&[0.0, 1.0], &[1.0, 1e-17]).unwrap();
        assert_eq!(p.weight(1), 0.0);
        assert_eq!(p.weight(0), 1.0);
    }

    #[test]
    fn mean_examples() {
        let p = EmpiricalDist::uniform_1d(&[0.0, 10.0]).unwrap();
        assert_eq!(weighted_mean(&p), vec![5.0]);
        let c = EmpiricalDist::point_mass(&[1.5, -2.0]).unwrap();
        assert_eq!(weighted_mean(&c), vec![1.5, -2.0]);
        let q = EmpiricalDist::weighted_1d(&[0.0, 1.0], &[0.3, 0.7]).unwrap();
        assert!(close(weighted_mean(&q)[0], 0.7, 1e-15));
    }

    #[test]
    fn second_moment_examples() {
        let p = EmpiricalDist::uniform_1d(&[-1.0, 1.0]).unwrap();
        assert_eq!(weighted_second_moment(&p)[(0, 0)], 1.0);
        let z = EmpiricalDist::point_mass(&[0.0]).unwrap();
        assert_eq!(weighted_second_moment(&z)[(0, 0)], 0.0);
        let e = EmpiricalDist::uniform_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = weighted_second_moment(&e);
        assert_eq!(m[(0, 0)], 0.5);
        assert_eq!(m[(1, 1)], 0.5);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 0)], 0.0);
    }

    #[test]
    fn covariance_of_symmetric_pair() {
        let p = EmpiricalDist::uniform_rows(&[vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        let c = weighted_covariance(&p);
        assert_eq!(c[(0, 1)], 1.0);
    }

    #[test]
    fn canonical_order_is_permutation_invariant() {
        let a =
            EmpiricalDist::uniform_rows(&[vec![2.0, 0.0], vec![1.0, 5.0], vec![1.0, 3.0]]).unwrap();
        let b = a.select(&[2, 0, 1]).unwrap();
        assert_eq!(a.canonicalized().0, b.canonicalized().0);
    }

    #[test]
    fn weighted_quantile_picks_lower_median() {
        assert_eq!(
            weighted_quantile(&[3.0, 1.0, 2.0, 4.0], &[1.0; 4], 0.5),
            2.0
        );
        assert_eq!(weighted_quantile(&[3.0, 1.0], &[0.2, 0.8], 0.5), 1.0);
    }
}

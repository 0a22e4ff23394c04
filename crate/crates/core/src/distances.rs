//! Exact and weakened distances between empirical distributions.

use crate::empirical::{dot, lex_cmp, Direction, EmpiricalDist};
use crate::error::{Error, Result};
use crate::rng::{random_unit_vector, RngSeed};
use serde::{Deserialize, Serialize};

/// Coordinates closer than this are treated as the same atom.
pub const MERGE_TOL: f64 = 1e-12;
pub const DEFAULT_REFINE_STEPS: usize = 100;

/// A scalar feature x -> h(x) whose upper level sets define a T̃V test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projection {
    Linear {
        v: Direction,
    },
    /// (v1'x)^2 - (v2'x)^2, each of v1, v2 unit or zero.
    QuadDiff {
        v1: Vec<f64>,
        v2: Vec<f64>,
    },
}

impl Projection {
    pub fn dim(&self) -> usize {
        match self {
            Projection::Linear { v } => v.dim(),
            Projection::QuadDiff { v1, .. } => v1.len(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Projection::Linear { v } => dot(v.as_slice(), x),
            Projection::QuadDiff { v1, v2 } => {
                let a = dot(v1, x);
                let b = dot(v2, x);
                a * a - b * b
            }
        }
    }

    pub fn values(&self, p: &EmpiricalDist) -> Vec<f64> {
        match self {
            Projection::Linear { v } => p.project_values(v.as_slice()),
            _ => p.rows().map(|x| self.eval(x)).collect(),
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            Projection::Linear { v } => v.as_slice().to_vec(),
            Projection::QuadDiff { v1, v2 } => v1.iter().chain(v2).copied().collect(),
        }
    }

    /// Rebuilds a projection of the same kind from perturbed parameters.
    fn from_params(&self, theta: &[f64]) -> Option<Projection> {
        match self {
            Projection::Linear { .. } => Direction::new(theta.to_vec())
                .ok()
                .map(|v| Projection::Linear { v }),
            Projection::QuadDiff { v1, .. } => {
                let d = v1.len();
                let (a, b) = theta.split_at(d);
                Some(Projection::QuadDiff {
                    v1: unit_or_zero(a),
                    v2: unit_or_zero(b),
                })
            }
        }
    }
}

fn unit_or_zero(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Linear,
    QuadDiff,
}

/// Finite stand-in for the feature class of T̃V.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionFamily {
    kind: FamilyKind,
    members: Vec<Projection>,
    refine_steps: usize,
}

impl ProjectionFamily {
    pub fn linear(dirs: Vec<Direction>) -> Result<Self> {
        let members: Vec<Projection> = dirs.into_iter().map(|v| Projection::Linear { v }).collect();
        Self::build(FamilyKind::Linear, members)
    }

    /// QuadDiff members from explicit pairs; each side must be unit or zero.
    pub fn quad_diff(pairs: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let mut members = Vec::with_capacity(pairs.len());
        for (v1, v2) in pairs {
            for v in [&v1, &v2] {
                let n = dot(v, v).sqrt();
                if n != 0.0 && (n - 1.0).abs() > 1e-10 {
                    return Err(Error::InvalidArgument(
                        "QuadDiff sides must be unit or zero".into(),
                    ));
                }
            }
            if v1.len() != v2.len() {
                return Err(Error::DimensionMismatch {
                    expected: v1.len(),
                    got: v2.len(),
                });
            }
            members.push(Projection::QuadDiff { v1, v2 });
        }
        Self::build(FamilyKind::QuadDiff, members)
    }

    pub fn random_linear(d: usize, k: usize, seed: RngSeed) -> Result<Self> {
        let mut rng = seed.rng();
        let dirs = (0..k)
            .map(|_| Direction::new(random_unit_vector(&mut rng, d)))
            .collect::<Result<Vec<_>>>()?;
        Self::linear(dirs)
    }

    /// `k` random pairs plus (v, 0) and (0, v) for each first member v.
    pub fn random_quad_diff(d: usize, k: usize, seed: RngSeed) -> Result<Self> {
        let mut rng = seed.rng();
        let zero = vec![0.0; d];
        let mut pairs = Vec::with_capacity(3 * k);
        for _ in 0..k {
            let v1 = random_unit_vector(&mut rng, d);
            let v2 = random_unit_vector(&mut rng, d);
            pairs.push((v1.clone(), zero.clone()));
            pairs.push((zero.clone(), v1.clone()));
            pairs.push((v1, v2));
        }
        Self::quad_diff(pairs)
    }

    fn build(kind: FamilyKind, members: Vec<Projection>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::InvalidArgument("empty projection family".into()));
        };
        let d = first.dim();
        if let Some(m) = members.iter().find(|m| m.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: m.dim(),
            });
        }
        Ok(Self {
            kind,
            members,
            refine_steps: 0,
        })
    }

    /// Enables hill-climbing refinement of the best member. Refined values are
    /// still lower bounds but no longer a fixed-family pseudometric.
    pub fn with_refinement(mut self, steps: usize) -> Self {
        self.refine_steps = steps;
        self
    }

    pub fn extend(&mut self, other: ProjectionFamily) -> Result<()> {
        if other.kind != self.kind {
            return Err(Error::InvalidArgument("cannot mix family kinds".into()));
        }
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        self.members.extend(other.members);
        Ok(())
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn members(&self) -> &[Projection] {
        &self.members
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn refine_steps(&self) -> usize {
        self.refine_steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// |P_p(h(X) >= t) - P_q(h(X) >= t)|.
    Threshold { projection: Projection, t: f64 },
    /// |v'(mu_p - mu_q)|.
    Linear { direction: Direction },
    /// |E_p (v'X - a)_+ - E_q (v'X - a)_+|.
    Relu { direction: Direction, a: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub value: f64,
    pub witness: Witness,
}

fn check_dims(p: &EmpiricalDist, q: &EmpiricalDist) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

fn check_1d(p: &EmpiricalDist, q: &EmpiricalDist) -> Result<()> {
    for r in [p, q] {
        if r.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: r.dim(),
            });
        }
    }
    Ok(())
}

/// Atoms of p and q merged under [`MERGE_TOL`]: (point, p-mass, q-mass),
/// in lexicographic order.
pub(crate) fn merge_atoms(p: &EmpiricalDist, q: &EmpiricalDist) -> Vec<(Vec<f64>, f64, f64)> {
    let mut atoms: Vec<(&[f64], f64, bool)> = p
        .rows()
        .zip(p.weights())
        .map(|(x, &w)| (x, w, true))
        .chain(q.rows().zip(q.weights()).map(|(x, &w)| (x, w, false)))
        .collect();
    atoms.sort_by(|a, b| lex_cmp(a.0, b.0));
    let mut out = Vec::new();
    let mut i = 0;
    while i < atoms.len() {
        let rep = atoms[i].0;
        let (mut wp, mut wq) = (0.0, 0.0);
        let mut j = i;
        while j < atoms.len()
            && atoms[j]
                .0
                .iter()
                .zip(rep)
                .all(|(a, b)| (a - b).abs() <= MERGE_TOL)
        {
            if atoms[j].2 {
                wp += atoms[j].1;
            } else {
                wq += atoms[j].1;
            }
            j += 1;
        }
        out.push((rep.to_vec(), wp, wq));
        i = j;
    }
    out
}

/// Half the L1 distance between the merged atom masses.
pub fn tv_discrete(p: &EmpiricalDist, q: &EmpiricalDist) -> Result<f64> {
    check_dims(p, q)?;
    let total: f64 = merge_atoms(p, q)
        .iter()
        .map(|(_, a, b)| (a - b).abs())
        .sum();
    Ok((0.5 * total).min(1.0))
}

/// Merged atoms sorted by value, descending, with signed mass p - q.
fn merged_desc(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> Vec<(f64, f64)> {
    let mut m: Vec<(f64, f64)> = a
        .iter()
        .zip(wa)
        .map(|(&x, &w)| (x, w))
        .chain(b.iter().zip(wb).map(|(&x, &w)| (x, -w)))
        .collect();
    m.sort_by(|x, y| y.0.total_cmp(&x.0));
    m
}

/// sup_t |P_a(X >= t) - P_b(X >= t)| and the first (largest) maximizing t.
pub(crate) fn ks_values(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> (f64, f64) {
    let m = merged_desc(a, wa, b, wb);
    let mut best = (0.0, m.first().map_or(0.0, |x| x.0));
    let mut cum = 0.0;
    let mut i = 0;
    while i < m.len() {
        let t = m[i].0;
        while i < m.len() && m[i].0 == t {
            cum += m[i].1;
            i += 1;
        }
        if cum.abs() > best.0 {
            best = (cum.abs(), t);
        }
    }
    (best.0.min(1.0), best.1)
}

pub fn ks_1d(p: &EmpiricalDist, q: &EmpiricalDist) -> Result<DistanceReport> {
    check_1d(p, q)?;
    let (value, t) = ks_values(p.flat_points(), p.weights(), q.flat_points(), q.weights());
    Ok(DistanceReport {
        value,
        witness: Witness::Threshold {
            projection: Projection::Linear {
                v: Direction::axis(1, 0),
            },
            t,
        },
    })
}

fn ks_projection(p: &EmpiricalDist, q: &EmpiricalDist, h: &Projection) -> (f64, f64) {
    ks_values(&h.values(p), p.weights(), &h.values(q), q.weights())
}

/// Coordinate hill climbing on the sphere: try +/- step on each coordinate,
/// halving the step after a full sweep without improvement. Each tried
/// coordinate counts as one step.
fn hill_climb<T, F>(start: &Projection, start_val: T, steps: usize, score: F) -> (Projection, T)
where
    T: Copy + Into<f64>,
    F: Fn(&Projection) -> T,
{
    let mut best = start.clone();
    let mut best_val = start_val;
    let mut theta = best.params();
    let dim = theta.len();
    let mut delta = 0.25;
    let mut improved_in_sweep = false;
    for s in 0..steps {
        let j = s % dim;
        if j == 0 && s > 0 {
            if !improved_in_sweep {
                delta *= 0.5;
            }
            improved_in_sweep = false;
        }
        for sign in [1.0, -1.0] {
            let mut cand = theta.clone();
            cand[j] += sign * delta;
            let Some(proj) = best.from_params(&cand) else {
                continue;
            };
            let val = score(&proj);
            if val.into() > best_val.into() {
                theta = proj.params();
                best = proj;
                best_val = val;
                improved_in_sweep = true;
                break;
            }
        }
    }
    (best, best_val)
}

/// Generalized KS distance over the family, optionally refined locally.
pub fn tvtilde(
    p: &EmpiricalDist,
    q: &EmpiricalDist,
    fam: &ProjectionFamily,
) -> Result<DistanceReport> {
    check_dims(p, q)?;
    if fam.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: fam.dim(),
        });
    }
    let mut best_idx = 0;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for (i, h) in fam.members.iter().enumerate() {
        let r = ks_projection(p, q, h);
        if r.0 > best.0 {
            best = r;
            best_idx = i;
        }
    }
    let mut proj = fam.members[best_idx].clone();
    if fam.refine_steps > 0 && best.0 < 1.0 {
        let (refined, _) = hill_climb(&proj, best.0, fam.refine_steps, |h| {
            ks_projection(p, q, h).0
        });
        if refined != proj {
            proj = refined;
            best = ks_projection(p, q, &proj);
        }
    }
    Ok(DistanceReport {
        value: best.0,
        witness: Witness::Threshold {
            projection: proj,
            t: best.1,
        },
    })
}

/// Exact 1-d W1 as the integral of |F_p - F_q|.
pub fn w1_1d(p: &EmpiricalDist, q: &EmpiricalDist) -> Result<f64> {
    check_1d(p, q)?;
    Ok(w1_values(
        p.flat_points(),
        p.weights(),
        q.flat_points(),
        q.weights(),
    ))
}

pub(crate) fn w1_values(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> f64 {
    let mut m = merged_desc(a, wa, b, wb);
    m.reverse();
    let mut cdf = 0.0;
    let mut total = 0.0;
    for k in 0..m.len() {
        cdf += m[k].1;
        if k + 1 < m.len() {
            total += cdf.abs() * (m[k + 1].0 - m[k].0);
        }
    }
    total
}

/// Linear and best ReLU witness values along one projected pair.
/// Returns (linear, relu, argmax a).
pub(crate) fn w1tilde_values(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> (f64, f64, f64) {
    let m = merged_desc(a, wa, b, wb);
    // g(t) = E_a (X - t)_+ - E_b (X - t)_+ is piecewise linear with slope
    // -(mass difference above t); walk the breakpoints from the top.
    let mut g = 0.0;
    let mut above = 0.0;
    let mut prev = m.first().map_or(0.0, |x| x.0);
    let mut best = (0.0, prev);
    let mut i = 0;
    while i < m.len() {
        let t = m[i].0;
        g += above * (prev - t);
        if g.abs() > best.0 {
            best = (g.abs(), t);
        }
        while i < m.len() && m[i].0 == t {
            above += m[i].1;
            i += 1;
        }
        prev = t;
    }
    let linear = (dot(a, wa) - dot(b, wb)).abs();
    (linear, best.0, best.1)
}

fn w1tilde_direction(p: &EmpiricalDist, q: &EmpiricalDist, v: &Direction) -> (f64, Witness) {
    let a = p.project_values(v.as_slice());
    let b = q.project_values(v.as_slice());
    let (lin, relu, t) = w1tilde_values(&a, p.weights(), &b, q.weights());
    if lin >= relu {
        (
            lin,
            Witness::Linear {
                direction: v.clone(),
            },
        )
    } else {
        (
            relu,
            Witness::Relu {
                direction: v.clone(),
                a: t,
            },
        )
    }
}

/// Weakened W1 over linear and ReLU witnesses along exactly `dirs`.
pub fn w1tilde(p: &EmpiricalDist, q: &EmpiricalDist, dirs: &[Direction]) -> Result<DistanceReport> {
    check_dims(p, q)?;
    let Some(first) = dirs.first() else {
        return Err(Error::InvalidArgument("empty direction list".into()));
    };
    if let Some(v) = dirs.iter().find(|v| v.dim() != p.dim()) {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: v.dim(),
        });
    }
    let mut best = w1tilde_direction(p, q, first);
    for v in &dirs[1..] {
        let r = w1tilde_direction(p, q, v);
        if r.0 > best.0 {
            best = r;
        }
    }
    Ok(DistanceReport {
        value: best.0,
        witness: best.1,
    })
}

/// [`w1tilde`] followed by hill-climbing refinement of the best direction.
pub fn w1tilde_refined(
    p: &EmpiricalDist,
    q: &EmpiricalDist,
    dirs: &[Direction],
    steps: usize,
) -> Result<DistanceReport> {
    let base = w1tilde(p, q, dirs)?;
    if steps == 0 || p.dim() == 1 {
        return Ok(base);
    }
    let start = match &base.witness {
        Witness::Linear { direction } | Witness::Relu { direction, .. } => direction.clone(),
        Witness::Threshold { .. } => unreachable!("w1tilde emits linear or relu witnesses"),
    };
    let start = Projection::Linear { v: start };
    let (refined, val) = hill_climb(&start, base.value, steps, |h| match h {
        Projection::Linear { v } => w1tilde_direction(p, q, v).0,
        _ => 0.0,
    });
    match refined {
        Projection::Linear { v } if val > base.value => {
            let (value, witness) = w1tilde_direction(p, q, &v);
            Ok(DistanceReport { value, witness })
        }
        _ => Ok(base),
    }
}

/// Re-evaluates a witness on (p, q) directly from its definition.
pub fn evaluate_witness(p: &EmpiricalDist, q: &EmpiricalDist, w: &Witness) -> Result<f64> {
    check_dims(p, q)?;
    let mean_of = |r: &EmpiricalDist, f: &dyn Fn(&[f64]) -> f64| -> f64 {
        r.rows().zip(r.weights()).map(|(x, w)| w * f(x)).sum()
    };
    Ok(match w {
        Witness::Threshold { projection, t } => {
            let ind = |x: &[f64]| if projection.eval(x) >= *t { 1.0 } else { 0.0 };
            (mean_of(p, &ind) - mean_of(q, &ind)).abs()
        }
        Witness::Linear { direction } => {
            let f = |x: &[f64]| dot(direction.as_slice(), x);
            (mean_of(p, &f) - mean_of(q, &f)).abs()
        }
        Witness::Relu { direction, a } => {
            let f = |x: &[f64]| (dot(direction.as_slice(), x) - a).max(0.0);
            (mean_of(p, &f) - mean_of(q, &f)).abs()
        }
    })
}

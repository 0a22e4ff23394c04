//! Deletion oracles, resilience profiles and mean-cross witnesses.

use crate::distances::{ks_1d, merge_atoms, tv_discrete, w1tilde};
use crate::empirical::{Direction, EmpiricalDist};
use crate::error::{Error, Result};
use crate::oracle::convex_order_check;
use crate::orlicz::OrliczFunction;
use crate::rng::RngSeed;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimSide {
    Upper,
    Lower,
}

/// Kept weights `r` over the support of the source distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DeletionWitness {
    pub weights: Vec<f64>,
    pub deleted: f64,
    pub side: Option<TrimSide>,
}

impl DeletionWitness {
    pub fn identity(p: &EmpiricalDist) -> Self {
        Self {
            weights: p.weights().to_vec(),
            deleted: 0.0,
            side: None,
        }
    }

    pub fn apply(&self, p: &EmpiricalDist) -> Result<EmpiricalDist> {
        p.with_weights(self.weights.clone())
    }

    /// Checks r_i <= w_i / (1 - eta) for every atom, with relative slack `tol`.
    pub fn respects(&self, p: &EmpiricalDist, eta: f64, tol: f64) -> bool {
        self.weights
            .iter()
            .zip(p.weights())
            .all(|(r, w)| *r >= 0.0 && *r <= w / (1.0 - eta) * (1.0 + tol) + tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileWitness {
    pub direction: Direction,
    pub side: Option<TrimSide>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceProfile {
    pub etas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub witnesses: Vec<ProfileWitness>,
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::BadEta(eta));
    }
    Ok(())
}

/// Sorted (value - mean, weight) pairs and the mean.
struct Centered {
    vals: Vec<f64>,
    weights: Vec<f64>,
    order: Vec<usize>,
}

impl Centered {
    fn new(vals: &[f64], weights: &[f64]) -> Self {
        let mu: f64 = vals.iter().zip(weights).map(|(x, w)| x * w).sum();
        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        Self {
            vals: order.iter().map(|&i| vals[i] - mu).collect(),
            weights: order.iter().map(|&i| weights[i]).collect(),
            order,
        }
    }

    /// Mean shift from deleting `eta` mass from one tail; the boundary atom
    /// is split fractionally. Returns (|shift|, per-sorted-atom deleted mass).
    fn trim(&self, eta: f64, side: TrimSide, want_deleted: bool) -> (f64, Vec<(usize, f64)>) {
        let n = self.vals.len();
        let mut remaining = eta;
        let mut moment = 0.0;
        let mut deleted = Vec::new();
        for k in 0..n {
            if remaining <= 0.0 {
                break;
            }
            let i = match side {
                TrimSide::Upper => n - 1 - k,
                TrimSide::Lower => k,
            };
            let d = self.weights[i].min(remaining);
            if d <= 0.0 {
                continue;
            }
            remaining -= d;
            moment += d * self.vals[i];
            if want_deleted {
                deleted.push((i, d));
            }
        }
        ((moment / (1.0 - eta)).abs(), deleted)
    }

    fn worst(&self, eta: f64) -> (f64, TrimSide) {
        let up = self.trim(eta, TrimSide::Upper, false).0;
        let lo = self.trim(eta, TrimSide::Lower, false).0;
        if lo > up {
            (lo, TrimSide::Lower)
        } else {
            (up, TrimSide::Upper)
        }
    }
}

/// Worst mean shift of a 1-d distribution under deletion of exactly `eta` mass.
pub fn worst_deletion_1d(p: &EmpiricalDist, eta: f64) -> Result<(f64, DeletionWitness)> {
    if p.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: p.dim(),
        });
    }
    check_eta(eta)?;
    if eta == 0.0 {
        return Ok((0.0, DeletionWitness::identity(p)));
    }
    let c = Centered::new(p.flat_points(), p.weights());
    let (_, side) = c.worst(eta);
    let (rho, deleted) = c.trim(eta, side, true);
    let mut kept = p.weights().to_vec();
    for (i, d) in deleted {
        let orig = c.order[i];
        kept[orig] = (kept[orig] - d).max(0.0);
    }
    let total: f64 = kept.iter().sum();
    for w in kept.iter_mut() {
        *w /= total;
    }
    Ok((
        rho,
        DeletionWitness {
            weights: kept,
            deleted: eta,
            side: Some(side),
        },
    ))
}

/// rho(eta) = max over `fam` of the worst 1-d deletion shift of the projection.
pub fn resilience_profile(
    p: &EmpiricalDist,
    etas: &[f64],
    fam: &[Direction],
) -> Result<ResilienceProfile> {
    for &e in etas {
        check_eta(e)?;
    }
    if fam.is_empty() {
        return Err(Error::InvalidArgument("empty direction family".into()));
    }
    if let Some(v) = fam.iter().find(|v| v.dim() != p.dim()) {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: v.dim(),
        });
    }
    let mut rhos = vec![0.0; etas.len()];
    let mut witnesses: Vec<ProfileWitness> = etas
        .iter()
        .map(|_| ProfileWitness {
            direction: fam[0].clone(),
            side: None,
        })
        .collect();
    for v in fam {
        let c = Centered::new(&p.project_values(v.as_slice()), p.weights());
        for (k, &eta) in etas.iter().enumerate() {
            if eta == 0.0 {
                continue;
            }
            let (rho, side) = c.worst(eta);
            if rho > rhos[k] {
                rhos[k] = rho;
                witnesses[k] = ProfileWitness {
                    direction: v.clone(),
                    side: Some(side),
                };
            }
        }
    }
    Ok(ResilienceProfile {
        etas: etas.to_vec(),
        rhos,
        witnesses,
    })
}

/// min(sigma eta psi^{-1}(1/eta) / (1 - eta), sigma psi^{-1}(1/(1 - eta))).
pub fn orlicz_resilience_bound(sigma: f64, psi: OrliczFunction, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::BadEta(eta));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let a = sigma * eta * psi.inverse(1.0 / eta) / (1.0 - eta);
    let b = sigma * psi.inverse(1.0 / (1.0 - eta));
    Ok(a.min(b))
}

/// Both one-sided tails of f(X) - E f beyond (1 - eta) rho / eta carry at most
/// `eta` mass. Deviations exactly at the threshold are not counted.
pub fn tail_bound_check<F>(p: &EmpiricalDist, f: F, rho: f64, eta: f64) -> bool
where
    F: Fn(&[f64]) -> f64,
{
    if eta >= 1.0 {
        return true;
    }
    let vals: Vec<f64> = p.rows().map(&f).collect();
    let mu: f64 = vals.iter().zip(p.weights()).map(|(x, w)| x * w).sum();
    let thr = if eta <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 - eta) * rho / eta
    };
    let scale = vals.iter().fold(mu.abs(), |m, x| m.max(x.abs())).max(1.0);
    let slack = 1e-12 * scale;
    let mut up = 0.0;
    let mut down = 0.0;
    for (x, w) in vals.iter().zip(p.weights()) {
        if x - mu > thr + slack {
            up += w;
        }
        if mu - x > thr + slack {
            down += w;
        }
    }
    up <= eta + 1e-12 && down <= eta + 1e-12
}

/// min(p, q) / (1 - TV(p, q)) on the merged support.
pub fn tv_midpoint(p: &EmpiricalDist, q: &EmpiricalDist) -> Result<EmpiricalDist> {
    let tv = tv_discrete(p, q)?;
    let atoms = merge_atoms(p, q);
    let common: f64 = atoms.iter().map(|(_, a, b)| a.min(*b)).sum();
    if tv >= 1.0 || common <= 1e-15 {
        return Err(Error::DisjointSupports);
    }
    let mut flat = Vec::with_capacity(atoms.len() * p.dim());
    let mut w = Vec::with_capacity(atoms.len());
    for (x, a, b) in &atoms {
        if a.min(*b) > 0.0 {
            flat.extend_from_slice(x);
            w.push(a.min(*b) / common);
        }
    }
    EmpiricalDist::from_flat(p.dim(), flat, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossKind {
    Tv,
    W1,
}

/// Scalar applied to the 1-d samples before the W1 construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossFunction {
    Identity,
    Abs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanCrossWitness {
    pub kind: CrossKind,
    /// Modified p, on p's atoms (TV: reweighted; W1: moved points).
    pub r_p: EmpiricalDist,
    pub r_q: EmpiricalDist,
    /// Deleted mass (TV) or transport cost (W1) of each side.
    pub cost_p: f64,
    pub cost_q: f64,
    /// TV: E r_p <= E r_q. W1: means agree.
    pub mean_check: bool,
    /// TV: breakpoint stochastic dominance. W1: convex order.
    pub order_check: bool,
    pub certified: bool,
}

fn mean_1d(p: &EmpiricalDist) -> f64 {
    p.flat_points()
        .iter()
        .zip(p.weights())
        .map(|(x, w)| x * w)
        .sum()
}

fn trim_to(p: &EmpiricalDist, eps: f64, side: TrimSide) -> Result<EmpiricalDist> {
    if eps == 0.0 {
        return Ok(p.clone());
    }
    let c = Centered::new(p.flat_points(), p.weights());
    let (_, deleted) = c.trim(eps, side, true);
    let mut kept = p.weights().to_vec();
    for (i, d) in deleted {
        let orig = c.order[i];
        kept[orig] = (kept[orig] - d).max(0.0);
    }
    p.with_weights(kept)
}

/// CDF dominance F_a(t) >= F_b(t) at every merged breakpoint.
pub(crate) fn cdf_dominates(a: &EmpiricalDist, b: &EmpiricalDist, tol: f64) -> bool {
    let atoms = merge_atoms(a, b);
    let (mut fa, mut fb) = (0.0, 0.0);
    for (_, wa, wb) in atoms {
        fa += wa;
        fb += wb;
        if fa < fb - tol {
            return false;
        }
    }
    true
}

/// r_p trims the top `eps` of p, r_q trims the bottom `eps` of q; certified when
/// r_p is stochastically below r_q.
pub fn mean_cross_tv(p: &EmpiricalDist, q: &EmpiricalDist, eps: f64) -> Result<MeanCrossWitness> {
    let ks = ks_1d(p, q)?.value;
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::BadEps(eps));
    }
    if ks > eps + 1e-12 {
        return Err(Error::PreconditionViolated(format!(
            "KS distance {ks} exceeds eps {eps}"
        )));
    }
    let r_p = trim_to(p, eps, TrimSide::Upper)?;
    let r_q = trim_to(q, eps, TrimSide::Lower)?;
    let (mp, mq) = (mean_1d(&r_p), mean_1d(&r_q));
    let scale = p.max_abs().max(q.max_abs()).max(1.0);
    let mean_check = mp <= mq + 1e-12 * scale;
    let order_check = cdf_dominates(&r_p, &r_q, 1e-12);
    Ok(MeanCrossWitness {
        kind: CrossKind::Tv,
        r_p,
        r_q,
        cost_p: eps,
        cost_q: eps,
        mean_check,
        order_check,
        certified: mean_check && order_check,
    })
}

/// Level tau with E (X - tau)_+ = gamma, solved exactly on the piecewise-linear
/// tail integral. `vals` need not be sorted.
pub(crate) fn upper_clamp_level(vals: &[f64], weights: &[f64], gamma: f64) -> f64 {
    let mut pairs: Vec<(f64, f64)> = vals.iter().copied().zip(weights.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let Some(&(top, _)) = pairs.first() else {
        return 0.0;
    };
    if gamma <= 0.0 {
        return top;
    }
    let mut above = 0.0;
    let mut h = 0.0;
    let mut prev = top;
    let mut i = 0;
    while i < pairs.len() {
        let t = pairs[i].0;
        let h_t = h + above * (prev - t);
        if h_t >= gamma && above > 0.0 {
            return prev - (gamma - h) / above;
        }
        h = h_t;
        prev = t;
        while i < pairs.len() && pairs[i].0 == t {
            above += pairs[i].1;
            i += 1;
        }
    }
    prev - (gamma - h) / above
}

fn transport_cost(from: &[f64], to: &[f64], w: &[f64]) -> f64 {
    from.iter()
        .zip(to)
        .zip(w)
        .map(|((a, b), w)| w * (a - b).abs())
        .sum()
}

/// Convex-order witness for a W̃₁-close pair: q's extreme tail is clamped to
/// match p's mean, then p is squeezed into [tau2, tau1] (or collapsed to its
/// mean) so that r_p is below r_q in the convex order.
pub fn mean_cross_w1(
    p: &EmpiricalDist,
    q: &EmpiricalDist,
    eps: f64,
    g: CrossFunction,
) -> Result<MeanCrossWitness> {
    for r in [p, q] {
        if r.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: r.dim(),
            });
        }
    }
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::BadEps(eps));
    }
    let (p, q) = match g {
        CrossFunction::Identity => (p.clone(), q.clone()),
        CrossFunction::Abs => (p.map_1d(|x| x[0].abs())?, q.map_1d(|x| x[0].abs())?),
    };
    let pm = [Direction::axis(1, 0), Direction::axis(1, 0).negated()];
    let dist = w1tilde(&p, &q, &pm)?.value;
    let scale = p.max_abs().max(q.max_abs()).max(1.0);
    if dist > eps + 1e-12 * scale {
        return Err(Error::PreconditionViolated(format!(
            "W1-tilde distance {dist} exceeds eps {eps}"
        )));
    }
    let xs = p.flat_points();
    let ys = q.flat_points();
    let (mu_p, mu_q) = (mean_1d(&p), mean_1d(&q));

    // q: clamp the tail on the side that moves its mean onto mu_p
    let delta = mu_p - mu_q;
    let ys_new: Vec<f64> = if delta > 0.0 {
        let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
        let s = -upper_clamp_level(&neg, q.weights(), delta);
        ys.iter().map(|&y| y.max(s)).collect()
    } else if delta < 0.0 {
        let s = upper_clamp_level(ys, q.weights(), -delta);
        ys.iter().map(|&y| y.min(s)).collect()
    } else {
        ys.to_vec()
    };
    let r_q = q.with_points(1, ys_new.clone())?;
    let gamma = w1tilde(&p, &r_q, &pm)?.value;

    let upper_excess: f64 = xs
        .iter()
        .zip(p.weights())
        .map(|(x, w)| w * (x - mu_p).max(0.0))
        .sum();
    let xs_new: Vec<f64> = if upper_excess <= gamma {
        vec![mu_p; xs.len()]
    } else {
        let tau1 = upper_clamp_level(xs, p.weights(), gamma);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        let tau2 = -upper_clamp_level(&neg, p.weights(), gamma);
        xs.iter().map(|&x| x.clamp(tau2, tau1.max(tau2))).collect()
    };
    let r_p = p.with_points(1, xs_new.clone())?;
    let cost_p = transport_cost(xs, &xs_new, p.weights());
    let cost_q = transport_cost(ys, &ys_new, q.weights());
    let mean_check = (mean_1d(&r_p) - mean_1d(&r_q)).abs() <= 1e-9 * scale;
    let order_check = convex_order_check(&r_p, &r_q);
    let budget = 7.0 * eps + 1e-9;
    Ok(MeanCrossWitness {
        kind: CrossKind::W1,
        r_p,
        r_q,
        cost_p,
        cost_q,
        mean_check,
        order_check,
        certified: mean_check && order_check && cost_p <= budget && cost_q <= budget,
    })
}

/// Random r <= p/(1-eta) has rho_r(eta) <= 2 rho_p(eta (2 - eta)), checked on
/// 20 random deletions.
pub fn deletion_closure_check(
    p: &EmpiricalDist,
    eta: f64,
    fam: &[Direction],
    seed: RngSeed,
) -> Result<bool> {
    check_eta(eta)?;
    if eta == 0.0 {
        return Ok(true);
    }
    let outer = eta * (2.0 - eta);
    let rho_p = resilience_profile(p, &[outer], fam)?.rhos[0];
    let mut rng = seed.rng();
    let mut order: Vec<usize> = (0..p.len()).collect();
    for _ in 0..20 {
        let r = random_deletion(p, eta, &mut rng, &mut order)?;
        let rho_r = resilience_profile(&r, &[eta], fam)?.rhos[0];
        if rho_r > 2.0 * rho_p + 1e-9 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Deletes a random amount of mass, at most `eta`, spread over random atoms.
pub(crate) fn random_deletion<R: Rng + ?Sized>(
    p: &EmpiricalDist,
    eta: f64,
    rng: &mut R,
    order: &mut [usize],
) -> Result<EmpiricalDist> {
    order.shuffle(rng);
    let mut remaining = eta * rng.random::<f64>();
    let mut w = p.weights().to_vec();
    for &i in order.iter() {
        if remaining <= 0.0 {
            break;
        }
        let d = w[i].min(remaining) * rng.random::<f64>();
        w[i] -= d;
        remaining -= d;
    }
    p.with_weights(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directions::default_directions;
    use crate::distances::ks_1d;
    use crate::orlicz::orlicz_norm;
    use proptest::prelude::*;

    fn d1(v: &[f64]) -> EmpiricalDist {
        EmpiricalDist::uniform_1d(v).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn worst_deletion_examples() {
        let p = d1(&[0.0, 0.0, 0.0, 10.0]);
        let (rho, w) = worst_deletion_1d(&p, 0.25).unwrap();
        assert!(close(rho, 2.5));
        assert_eq!(w.side, Some(TrimSide::Upper));
        assert!(close(w.weights[3], 0.0));
        assert!(w.respects(&p, 0.25, 1e-12));
        assert_eq!(worst_deletion_1d(&p, 0.0).unwrap().0, 0.0);
        let q = d1(&[1.0, 2.0, 3.0, 4.0]);
        let (rho, w) = worst_deletion_1d(&q, 0.25).unwrap();
        assert!(close(rho, 0.5));
        let r = w.apply(&q).unwrap();
        let m = mean_1d(&r);
        assert!(close(m, 2.0) || close(m, 3.0));
        assert!(matches!(worst_deletion_1d(&q, 1.0), Err(Error::BadEta(_))));
    }

    #[test]
    fn witness_reproduces_rho_with_fractional_boundary() {
        let p = EmpiricalDist::weighted_1d(&[-1.0, 0.5, 2.0, 7.0], &[0.1, 0.4, 0.3, 0.2]).unwrap();
        for eta in [0.05, 0.2, 0.35, 0.6] {
            let (rho, w) = worst_deletion_1d(&p, eta).unwrap();
            let r = w.apply(&p).unwrap();
            assert!(((mean_1d(&r) - mean_1d(&p)).abs() - rho).abs() < 1e-12);
            assert!(w.respects(&p, eta, 1e-12));
        }
    }

    #[test]
    fn profile_examples() {
        let e = [Direction::axis(1, 0)];
        let pc = EmpiricalDist::point_mass(&[3.0, -1.0]).unwrap();
        let dirs = default_directions(&pc, 16, RngSeed(0));
        let prof = resilience_profile(&pc, &[0.1, 0.3], &dirs).unwrap();
        assert!(prof.rhos.iter().all(|&r| r == 0.0));
        let prof = resilience_profile(&d1(&[0.0, 0.0, 0.0, 10.0]), &[0.0, 0.25], &e).unwrap();
        assert_eq!(prof.rhos[0], 0.0);
        assert!(close(prof.rhos[1], 2.5));
        let prof = resilience_profile(&d1(&[-1.0, 1.0]), &[0.5], &e).unwrap();
        assert!(close(prof.rhos[0], 1.0));
    }

    #[test]
    fn orlicz_bound_examples() {
        let psi2 = OrliczFunction::Power { k: 2.0 };
        assert!(close(
            orlicz_resilience_bound(1.0, psi2, 0.25).unwrap(),
            2.0 / 3.0
        ));
        let small = orlicz_resilience_bound(1.0, psi2, 1e-8).unwrap();
        assert!((small - 1e-4).abs() < 1e-8);
        let e = orlicz_resilience_bound(1.0, OrliczFunction::Exponential, 0.5).unwrap();
        assert!(close(e, 3f64.ln()));
        assert!(orlicz_resilience_bound(1.0, psi2, 0.0).is_err());
    }

    #[test]
    fn tail_examples() {
        let z = EmpiricalDist::point_mass(&[0.0]).unwrap();
        assert!(tail_bound_check(&z, |x| x[0], 0.0, 0.1));
        let p = d1(&[0.0, 0.0, 0.0, 10.0]);
        assert!(tail_bound_check(&p, |x| x[0], 2.5, 0.25));
        assert!(!tail_bound_check(&p, |x| x[0], 0.1, 0.25));
        // an atom sitting exactly on the threshold is not a violation
        let b = d1(&[0.0, 1.0]);
        let (rho, _) = worst_deletion_1d(&b, 0.25).unwrap();
        assert!(tail_bound_check(&b, |x| x[0], rho, 0.25));
    }

    #[test]
    fn midpoint_examples() {
        let r = tv_midpoint(&d1(&[0.0, 1.0]), &d1(&[1.0, 2.0])).unwrap();
        assert_eq!(r.flat_points(), &[1.0]);
        let p = d1(&[2.0, 5.0]);
        let r = tv_midpoint(&p, &p).unwrap();
        assert_eq!(r, p);
        let p = EmpiricalDist::weighted_1d(&[0.0, 1.0], &[0.3, 0.7]).unwrap();
        let q = EmpiricalDist::weighted_1d(&[0.0, 1.0], &[0.6, 0.4]).unwrap();
        let r = tv_midpoint(&p, &q).unwrap();
        assert!(close(r.weight(0), 0.3 / 0.7) && close(r.weight(1), 0.4 / 0.7));
        assert!(matches!(
            tv_midpoint(&d1(&[0.0]), &d1(&[1.0])),
            Err(Error::DisjointSupports)
        ));
    }

    #[test]
    fn mean_cross_tv_examples() {
        let p = d1(&[1.0, 2.0, 3.0, 4.0]);
        let q = d1(&[0.0, 1.0, 2.0, 3.0]);
        let w = mean_cross_tv(&p, &q, 0.25).unwrap();
        assert!(w.certified);
        assert!(close(mean_1d(&w.r_p), 2.0) && close(mean_1d(&w.r_q), 2.0));
        let w = mean_cross_tv(&p, &p, 0.0).unwrap();
        assert!(w.certified && w.r_p == p && w.r_q == p);
        let shifted = p.translate(&[0.1]).unwrap();
        let kappa = ks_1d(&shifted, &p).unwrap().value;
        for eps in [kappa, kappa + 0.1] {
            assert!(mean_cross_tv(&shifted, &p, eps).unwrap().certified);
        }
        assert!(matches!(
            mean_cross_tv(&p, &q, 0.1),
            Err(Error::PreconditionViolated(_))
        ));
    }

    #[test]
    fn mean_cross_w1_examples() {
        let p = d1(&[-1.0, 2.0, 0.5]);
        let w = mean_cross_w1(&p, &p, 0.0, CrossFunction::Identity).unwrap();
        assert!(w.certified);
        let pm = [Direction::axis(1, 0), Direction::axis(1, 0).negated()];
        let s = d1(&[-1.0, 1.0, -1.0, 1.0, -1.0, 1.0]);
        let z = d1(&[0.0]);
        let eps = w1tilde(&s, &z, &pm).unwrap().value;
        let w = mean_cross_w1(&s, &z, eps, CrossFunction::Identity).unwrap();
        assert!(w.certified, "{w:?}");
        // equal means, q has a heavy lower tail: squeeze branch
        let p = d1(&[-1.0, 0.0, 1.0]);
        let q = d1(&[-1.2, 0.0, 1.2]);
        let eps = w1tilde(&p, &q, &pm).unwrap().value;
        let w = mean_cross_w1(&p, &q, eps, CrossFunction::Identity).unwrap();
        assert!(w.certified, "{w:?}");
        assert!(w.r_p.flat_points().iter().any(|&x| x != 0.0));
        let (pa, qa) = (
            p.map_1d(|x| x[0].abs()).unwrap(),
            q.map_1d(|x| x[0].abs()).unwrap(),
        );
        let eps_abs = w1tilde(&pa, &qa, &pm).unwrap().value;
        let w = mean_cross_w1(&p, &q, eps_abs, CrossFunction::Abs).unwrap();
        assert!(w.certified);
        assert!(mean_cross_w1(&d1(&[0.0]), &d1(&[1.0]), 0.5, CrossFunction::Identity).is_err());
    }

    #[test]
    fn upper_clamp_level_solves_tail_integral() {
        let v = [0.0, 1.0, 3.0, 3.0, 10.0];
        let w = [0.2; 5];
        for gamma in [0.0, 0.1, 1.4, 1.6, 2.0, 3.0] {
            let t = upper_clamp_level(&v, &w, gamma);
            let h: f64 = v.iter().zip(&w).map(|(x, w)| w * (x - t).max(0.0)).sum();
            assert!((h - gamma).abs() < 1e-12, "gamma={gamma} t={t} h={h}");
        }
    }

    #[test]
    fn closure_examples() {
        let c = EmpiricalDist::point_mass(&[2.0]).unwrap();
        let e = [Direction::axis(1, 0)];
        assert!(deletion_closure_check(&c, 0.3, &e, RngSeed(0)).unwrap());
        let vals: Vec<f64> = (0..12).map(|i| (i as f64 * 1.7).sin() * 3.0).collect();
        let p = d1(&vals);
        assert!(deletion_closure_check(&p, 0.2, &e, RngSeed(1)).unwrap());
        assert!(deletion_closure_check(&p, 0.0, &e, RngSeed(1)).unwrap());
    }

    fn arb_1d(max: usize) -> impl Strategy<Value = EmpiricalDist> {
        (
            prop::collection::vec(-4.0f64..4.0, 1..max),
            prop::collection::vec(0.01f64..1.0, max),
        )
            .prop_map(|(v, w)| {
                let v: Vec<f64> = v.iter().map(|x| (x * 4.0).round() / 4.0).collect();
                EmpiricalDist::weighted_1d(&v, &w[..v.len()]).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn orlicz_bound_is_honored(p in arb_1d(10), which in 0usize..2, ei in 0usize..3) {
            let psi = [OrliczFunction::Power { k: 2.0 }, OrliczFunction::Power { k: 4.0 }][which];
            let eta = [0.05, 0.1, 0.25][ei];
            let mu = mean_1d(&p);
            let sigma = orlicz_norm(&p, |x| x[0] - mu, psi).unwrap();
            let (rho, _) = worst_deletion_1d(&p, eta).unwrap();
            prop_assert!(rho <= orlicz_resilience_bound(sigma, psi, eta).unwrap() + 1e-8);
        }

        #[test]
        fn midpoint_contract(p in arb_1d(8), q in arb_1d(8)) {
            let tv = tv_discrete(&p, &q).unwrap();
            prop_assume!(tv < 1.0 - 1e-9);
            let r = tv_midpoint(&p, &q).unwrap();
            for (x, rw) in r.rows().zip(r.weights()) {
                let mp: f64 = p.rows().zip(p.weights()).filter(|(y, _)| y[0] == x[0]).map(|(_, w)| w).sum();
                let mq: f64 = q.rows().zip(q.weights()).filter(|(y, _)| y[0] == x[0]).map(|(_, w)| w).sum();
                prop_assert!(*rw <= mp.min(mq) / (1.0 - tv) + 1e-12);
            }
        }

        #[test]
        fn profile_is_monotone_in_eta(p in arb_1d(10)) {
            let etas = [0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8];
            let prof = resilience_profile(&p, &etas, &[Direction::axis(1, 0)]).unwrap();
            for k in 1..etas.len() {
                prop_assert!(prof.rhos[k] >= prof.rhos[k - 1] - 1e-12);
            }
        }

        #[test]
        fn tail_bound_holds_for_certified_rho(p in arb_1d(10), ei in 0usize..4) {
            let eta = [0.05, 0.1, 0.25, 0.4][ei];
            let (rho, _) = worst_deletion_1d(&p, eta).unwrap();
            prop_assert!(tail_bound_check(&p, |x| x[0], rho, eta));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn mean_cross_tv_always_certifies(p in arb_1d(8), q in arb_1d(8), extra in 0.0f64..0.2) {
            let ks = ks_1d(&p, &q).unwrap().value;
            let eps = ks + extra;
            prop_assume!(eps < 1.0);
            prop_assert!(mean_cross_tv(&p, &q, eps).unwrap().certified);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn mean_cross_w1_always_certifies(p in arb_1d(8), q in arb_1d(8), extra in 0.0f64..0.5, abs in any::<bool>()) {
            let g = if abs { CrossFunction::Abs } else { CrossFunction::Identity };
            let (pg, qg) = match g {
                CrossFunction::Abs => (p.map_1d(|x| x[0].abs()).unwrap(), q.map_1d(|x| x[0].abs()).unwrap()),
                CrossFunction::Identity => (p.clone(), q.clone()),
            };
            let pm = [Direction::axis(1, 0), Direction::axis(1, 0).negated()];
            let eps = w1tilde(&pg, &qg, &pm).unwrap().value + extra;
            let w = mean_cross_w1(&p, &q, eps, g).unwrap();
            prop_assert!(w.certified, "{:?}", w);
        }
    }
}

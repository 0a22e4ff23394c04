//! Brute-force oracles for small instances and the lemma test suites behind
//! `verify-lemmas`.

use crate::directions::axes;
use crate::distances::{ks_1d, tv_discrete, w1tilde};
use crate::empirical::{norm2, Direction, EmpiricalDist};
use crate::error::{Error, Result};
use crate::io::{write_dataset, Dataset};
use crate::orlicz::{orlicz_norm, OrliczFunction};
use crate::resilience::{
    deletion_closure_check, mean_cross_tv, mean_cross_w1, orlicz_resilience_bound, random_deletion,
    tail_bound_check, tv_midpoint, worst_deletion_1d, CrossFunction,
};
use crate::rng::{DetRng, RngSeed};
use rand::Rng;
use serde::Serialize;
use std::fmt;
use std::str::FromStr;

pub const MAX_ATOMS: usize = 15;
pub const MAX_DIM: usize = 3;

fn check_small(p: &EmpiricalDist) -> Result<()> {
    if p.len() > MAX_ATOMS || p.dim() > MAX_DIM {
        return Err(Error::TooLarge(format!(
            "{} atoms in dimension {} (caps: {MAX_ATOMS} atoms, dimension {MAX_DIM})",
            p.len(),
            p.dim()
        )));
    }
    Ok(())
}

/// max ||mu_r - mu_p|| over all r <= p/(1 - eta), by enumerating the vertices
/// of that polytope: every atom at 0 or at its cap except one fractional atom.
pub fn exhaustive_worst_deletion(p: &EmpiricalDist, eta: f64) -> Result<(f64, Vec<f64>)> {
    check_small(p)?;
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::BadEta(eta));
    }
    let n = p.len();
    let d = p.dim();
    let caps: Vec<f64> = p.weights().iter().map(|w| w / (1.0 - eta)).collect();
    let mu: Vec<f64> = (0..d)
        .map(|j| p.rows().zip(p.weights()).map(|(x, w)| w * x[j]).sum())
        .collect();
    let centered: Vec<Vec<f64>> = p
        .rows()
        .map(|x| x.iter().zip(&mu).map(|(a, b)| a - b).collect())
        .collect();
    let mut best = (0.0, p.weights().to_vec());
    let mut shift = vec![0.0; d];
    for mask in 0u32..(1u32 << n) {
        let full: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| caps[i]).sum();
        let rest = 1.0 - full;
        if rest < -1e-12 {
            continue;
        }
        for j in 0..n {
            if mask >> j & 1 == 1 {
                continue;
            }
            let frac = rest.max(0.0);
            if frac > caps[j] + 1e-12 {
                continue;
            }
            shift.iter_mut().for_each(|s| *s = 0.0);
            for i in (0..n).filter(|i| mask >> i & 1 == 1) {
                for k in 0..d {
                    shift[k] += caps[i] * centered[i][k];
                }
            }
            for k in 0..d {
                shift[k] += frac * centered[j][k];
            }
            let val = norm2(&shift);
            if val > best.0 + 1e-15 {
                let mut r = vec![0.0; n];
                for i in (0..n).filter(|i| mask >> i & 1 == 1) {
                    r[i] = caps[i];
                }
                r[j] = frac;
                best = (val, r);
            }
        }
    }
    Ok(best)
}

/// Whether rp is below rq in the convex order: equal means and
/// E(z - X_rp)_+ <= E(z - X_rq)_+ at every merged breakpoint z, confirmed on
/// 50 random piecewise-linear convex test functions.
pub fn convex_order_check(rp: &EmpiricalDist, rq: &EmpiricalDist) -> bool {
    if rp.dim() != 1 || rq.dim() != 1 {
        return false;
    }
    let scale = rp.max_abs().max(rq.max_abs()).max(1.0);
    let tol = 1e-9 * scale;
    let mean = |r: &EmpiricalDist| -> f64 {
        r.flat_points()
            .iter()
            .zip(r.weights())
            .map(|(x, w)| x * w)
            .sum()
    };
    if (mean(rp) - mean(rq)).abs() > tol {
        return false;
    }
    let mut atoms: Vec<(f64, f64)> = rp
        .flat_points()
        .iter()
        .zip(rp.weights())
        .map(|(&x, &w)| (x, w))
        .chain(
            rq.flat_points()
                .iter()
                .zip(rq.weights())
                .map(|(&x, &w)| (x, -w)),
        )
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    // running difference of the integrated CDFs
    let mut cdf = 0.0;
    let mut integral = 0.0;
    let mut prev = atoms[0].0;
    let mut i = 0;
    while i < atoms.len() {
        let z = atoms[i].0;
        integral += cdf * (z - prev);
        if integral > tol {
            return false;
        }
        while i < atoms.len() && atoms[i].0 == z {
            cdf += atoms[i].1;
            i += 1;
        }
        prev = z;
    }
    let lo = atoms[0].0;
    let hi = atoms[atoms.len() - 1].0;
    let mut rng = RngSeed(0xC0_4E_C5).rng();
    for _ in 0..50 {
        let slope = rng.random_range(-1.0..1.0);
        let knots: Vec<(f64, f64)> = (0..3)
            .map(|_| (lo + (hi - lo) * rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let f = |x: f64| slope * x + knots.iter().map(|(k, a)| a * (x - k).max(0.0)).sum::<f64>();
        let ef = |r: &EmpiricalDist| -> f64 {
            r.flat_points()
                .iter()
                .zip(r.weights())
                .map(|(x, w)| w * f(*x))
                .sum()
        };
        if ef(rp) > ef(rq) + 4.0 * tol {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModulusConstraint {
    /// rho-hat(eta) <= rho, certified by exhaustive deletion search.
    Resilience { rho: f64, eta: f64 },
    /// E|X - mu|^k <= sigma^k.
    Moment { k: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedPair {
    pub p1: EmpiricalDist,
    pub p2: EmpiricalDist,
    pub tv: f64,
    pub mean_gap: f64,
    /// Upper bound on the mean gap implied by the constraint.
    pub bound: f64,
}

/// Random pairs on a shared small 1-d support with TV <= 2 eps, each member
/// certified to satisfy the constraint.
pub struct ModulusGenerator {
    constraint: ModulusConstraint,
    eps: f64,
    rng: DetRng,
    proposals: u64,
    accepted: u64,
}

const STARVATION_PROPOSALS: u64 = 1_000_000;

impl ModulusGenerator {
    pub fn new(constraint: ModulusConstraint, eps: f64, seed: RngSeed) -> Result<Self> {
        if !(0.0..0.5).contains(&eps) {
            return Err(Error::BadEps(eps));
        }
        match constraint {
            ModulusConstraint::Resilience { rho, eta } => {
                if !(0.0..1.0).contains(&eta) || !(rho >= 0.0) {
                    return Err(Error::InvalidArgument(
                        "resilience constraint needs rho >= 0, eta in [0,1)".into(),
                    ));
                }
            }
            ModulusConstraint::Moment { k, sigma } => {
                if !(k >= 1.0) || !(sigma >= 0.0) {
                    return Err(Error::InvalidArgument(
                        "moment constraint needs k >= 1, sigma >= 0".into(),
                    ));
                }
            }
        }
        Ok(Self {
            constraint,
            eps,
            rng: seed.rng(),
            proposals: 0,
            accepted: 0,
        })
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            return 1.0;
        }
        self.accepted as f64 / self.proposals as f64
    }

    pub fn proposals(&self) -> u64 {
        self.proposals
    }

    /// The bound on |mu1 - mu2| implied by the constraint at TV <= 2 eps.
    pub fn bound(&self) -> f64 {
        match self.constraint {
            ModulusConstraint::Resilience { rho, .. } => 2.0 * rho,
            ModulusConstraint::Moment { k, sigma } => {
                if self.eps == 0.0 {
                    0.0
                } else {
                    2.0 * orlicz_resilience_bound(
                        sigma,
                        OrliczFunction::Power { k },
                        2.0 * self.eps,
                    )
                    .expect("valid eta")
                }
            }
        }
    }

    /// How far above the constraint a distribution sits, as a ratio (<= 1 passes).
    fn excess(&self, p: &EmpiricalDist) -> Result<f64> {
        match self.constraint {
            ModulusConstraint::Resilience { rho, eta } => {
                let (r, _) = exhaustive_worst_deletion(p, eta)?;
                Ok(if rho == 0.0 {
                    if r > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                } else {
                    r / rho
                })
            }
            ModulusConstraint::Moment { k, sigma } => {
                let mu: f64 = p
                    .flat_points()
                    .iter()
                    .zip(p.weights())
                    .map(|(x, w)| x * w)
                    .sum();
                let m: f64 = p
                    .flat_points()
                    .iter()
                    .zip(p.weights())
                    .map(|(x, w)| w * (x - mu).abs().powf(k))
                    .sum();
                let s = m.powf(1.0 / k);
                Ok(if sigma == 0.0 {
                    if s > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                } else {
                    s / sigma
                })
            }
        }
    }

    fn propose(&mut self) -> Result<(EmpiricalDist, EmpiricalDist)> {
        let rng = &mut self.rng;
        let m = rng.random_range(2..=8usize);
        let support: Vec<f64> = (0..m).map(|_| rng.random_range(-4.0..4.0)).collect();
        let w1: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
        let p1 = EmpiricalDist::weighted_1d(&support, &w1)?;
        // move at most 2 eps of mass between atoms
        let budget = 2.0 * self.eps * rng.random::<f64>();
        let mut w2 = p1.weights().to_vec();
        let mut moved = 0.0;
        for _ in 0..m {
            let from = rng.random_range(0..m);
            let to = rng.random_range(0..m);
            let amt = (budget - moved).min(w2[from]) * rng.random::<f64>();
            w2[from] -= amt;
            w2[to] += amt;
            moved += amt;
        }
        let p2 = if moved > 0.0 {
            p1.with_weights(w2)?
        } else {
            p1.clone()
        };
        Ok((p1, p2))
    }

    /// Next certified pair. Proposals that violate the constraint are first
    /// shrunk toward their common mean (the constraint scales linearly), then
    /// re-certified from scratch.
    pub fn next_pair(&mut self) -> Result<CertifiedPair> {
        loop {
            self.proposals += 1;
            if self.proposals >= STARVATION_PROPOSALS && self.acceptance_rate() < 1e-3 {
                return Err(Error::GenerationStarved {
                    rate: self.acceptance_rate(),
                    proposals: self.proposals,
                });
            }
            let (mut p1, mut p2) = self.propose()?;
            let worst = self.excess(&p1)?.max(self.excess(&p2)?);
            if worst > 1.0 && worst.is_finite() {
                let c = p1
                    .flat_points()
                    .iter()
                    .zip(p1.weights())
                    .map(|(x, w)| x * w)
                    .sum::<f64>();
                let s = (1.0 - 1e-9) / worst;
                let shrink = |p: &EmpiricalDist| p.map_1d(|x| c + s * (x[0] - c));
                p1 = shrink(&p1)?;
                p2 = shrink(&p2)?;
            }
            if self.excess(&p1)? > 1.0 || self.excess(&p2)? > 1.0 {
                continue;
            }
            let tv = tv_discrete(&p1, &p2)?;
            if tv > 2.0 * self.eps + 1e-12 {
                continue;
            }
            self.accepted += 1;
            let mean = |r: &EmpiricalDist| -> f64 {
                r.flat_points()
                    .iter()
                    .zip(r.weights())
                    .map(|(x, w)| x * w)
                    .sum()
            };
            let mean_gap = (mean(&p1) - mean(&p2)).abs();
            return Ok(CertifiedPair {
                p1,
                p2,
                tv,
                mean_gap,
                bound: self.bound(),
            });
        }
    }
}

/// Two-point construction showing the Orlicz modulus bound is tight up to
/// constants: p1 puts mass eps at t = sigma psi^{-1}((1-eps)/eps)/5, the rest
/// at 0; p2 = delta_0.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundWitness {
    pub p1: EmpiricalDist,
    pub p2: EmpiricalDist,
    pub tv: f64,
    pub gap: f64,
    /// sigma eps psi^{-1}(1/eps) / 10.
    pub target: f64,
    /// Both members have centered Orlicz norm <= sigma.
    pub certified: bool,
}

pub fn orlicz_lower_bound_witness(
    sigma: f64,
    psi: OrliczFunction,
    eps: f64,
) -> Result<LowerBoundWitness> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::BadEps(eps));
    }
    let t = sigma * psi.inverse((1.0 - eps) / eps) / 5.0;
    let p1 = EmpiricalDist::weighted_1d(&[0.0, t], &[1.0 - eps, eps])?;
    let p2 = EmpiricalDist::point_mass(&[0.0])?;
    let mu = eps * t;
    let norm1 = orlicz_norm(&p1, |x| x[0] - mu, psi)?;
    Ok(LowerBoundWitness {
        tv: tv_discrete(&p1, &p2)?,
        gap: mu,
        target: sigma * eps * psi.inverse(1.0 / eps) / 10.0,
        certified: norm1 <= sigma * (1.0 + 1e-9),
        p1,
        p2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FriendlyCheck {
    pub ok: bool,
    pub cost: f64,
    /// Index of the first atom whose move is not toward E_r f(Y).
    pub first_violation: Option<usize>,
}

/// Checks a coupling moving atom i of `p` to `targets[i]` (mass preserved):
/// cost <= eta and f(y_i) lies between f(x_i) and E_r f(Y).
pub fn friendly_perturbation_check(
    p: &EmpiricalDist,
    targets: &[f64],
    f: CrossFunction,
    eta: f64,
) -> Result<FriendlyCheck> {
    if p.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: p.dim(),
        });
    }
    if targets.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: targets.len(),
        });
    }
    let fx = |x: f64| match f {
        CrossFunction::Identity => x,
        CrossFunction::Abs => x.abs(),
    };
    let xs = p.flat_points();
    let cost: f64 = xs
        .iter()
        .zip(targets)
        .zip(p.weights())
        .map(|((x, y), w)| w * (x - y).abs())
        .sum();
    let center: f64 = targets
        .iter()
        .zip(p.weights())
        .map(|(y, w)| w * fx(*y))
        .sum();
    let scale = p
        .max_abs()
        .max(targets.iter().fold(0.0_f64, |m, y| m.max(y.abs())))
        .max(1.0);
    let tol = 1e-12 * scale;
    let first_violation = xs.iter().zip(targets).position(|(&x, &y)| {
        let (a, b, v) = (fx(x), center, fx(y));
        v < a.min(b) - tol || v > a.max(b) + tol
    });
    let ok = cost <= eta + 1e-12 && first_violation.is_none();
    Ok(FriendlyCheck {
        ok,
        cost,
        first_violation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Midpoint,
    Deletion,
    MeancrossTv,
    MeancrossW1,
    Modulus,
    Orlicz,
    Tail,
    Closure,
    Friendly,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Midpoint,
        Suite::Deletion,
        Suite::MeancrossTv,
        Suite::MeancrossW1,
        Suite::Modulus,
        Suite::Orlicz,
        Suite::Tail,
        Suite::Closure,
        Suite::Friendly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Midpoint => "midpoint",
            Suite::Deletion => "deletion",
            Suite::MeancrossTv => "meancross-tv",
            Suite::MeancrossW1 => "meancross-w1",
            Suite::Modulus => "modulus",
            Suite::Orlicz => "orlicz",
            Suite::Tail => "tail",
            Suite::Closure => "closure",
            Suite::Friendly => "friendly",
        }
    }
}

impl Suite {
    /// Instance counts used by `verify-lemmas` when no count is given.
    pub fn default_trials(self) -> usize {
        match self {
            Suite::Midpoint | Suite::MeancrossTv | Suite::Modulus => 1000,
            Suite::MeancrossW1 | Suite::Orlicz | Suite::Tail | Suite::Deletion => 500,
            Suite::Closure => 200,
            Suite::Friendly => 200,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteFailure {
    pub trial: usize,
    pub message: String,
    /// Offending instances, each as dataset CSV.
    pub instances: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: usize,
    pub checks: usize,
    pub failures: Vec<SuiteFailure>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn to_csv(p: &EmpiricalDist) -> String {
    let mut buf = Vec::new();
    write_dataset(
        &mut buf,
        &Dataset {
            dist: p.clone(),
            has_response: false,
        },
    )
    .expect("in-memory write");
    String::from_utf8(buf).expect("utf-8 csv")
}

/// Random 1-d distribution with up to `max_n` atoms on a quarter-integer grid
/// (so ties and shared atoms are common).
pub fn random_small_1d<R: Rng + ?Sized>(rng: &mut R, max_n: usize) -> EmpiricalDist {
    let n = rng.random_range(1..=max_n);
    let v: Vec<f64> = (0..n)
        .map(|_| (rng.random_range(-4.0..4.0f64) * 4.0).round() / 4.0)
        .collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    EmpiricalDist::weighted_1d(&v, &w).expect("valid random distribution")
}

/// Cap on draws per requested instance for suites that skip degenerate draws.
const MAX_REDRAWS: usize = 20;

const ETA_GRID: [f64; 6] = [0.05, 0.1, 0.2, 0.25, 0.4, 0.6];

/// Runs one lemma suite for `trials` random instances.
pub fn run_suite(suite: Suite, trials: usize, seed: RngSeed) -> Result<SuiteReport> {
    let mut rng = seed.derive(suite as u64).rng();
    let mut failures = Vec::new();
    let mut checks = 0;
    let mut fail = |trial: usize, message: String, inst: &[&EmpiricalDist]| {
        failures.push(SuiteFailure {
            trial,
            message,
            instances: inst.iter().map(|p| to_csv(p)).collect(),
        });
    };
    let e1 = [Direction::axis(1, 0)];
    let pm = [Direction::axis(1, 0), Direction::axis(1, 0).negated()];
    match suite {
        Suite::Midpoint => {
            // disjoint draws are redrawn so that `trials` pairs are checked
            for t in 0..MAX_REDRAWS * trials {
                if checks == trials {
                    break;
                }
                let p = random_small_1d(&mut rng, 8);
                let q = random_small_1d(&mut rng, 8);
                let tv = tv_discrete(&p, &q)?;
                let r = match tv_midpoint(&p, &q) {
                    Err(Error::DisjointSupports) => continue,
                    r => r?,
                };
                checks += 1;
                let mass = |d: &EmpiricalDist, x: f64| -> f64 {
                    d.flat_points()
                        .iter()
                        .zip(d.weights())
                        .filter(|(y, _)| **y == x)
                        .map(|(_, w)| w)
                        .sum()
                };
                let ok = r.flat_points().iter().zip(r.weights()).all(|(&x, &rw)| {
                    rw <= mass(&p, x).min(mass(&q, x)) / (1.0 - tv) * (1.0 + 1e-12)
                });
                if !ok || tv_discrete(&r, &p)? > tv + 1e-12 || tv_discrete(&r, &q)? > tv + 1e-12 {
                    fail(t, format!("midpoint contract fails at TV {tv}"), &[&p, &q]);
                }
            }
        }
        Suite::Deletion => {
            for t in 0..trials {
                let p = random_small_1d(&mut rng, 12);
                let eta = ETA_GRID[rng.random_range(0..ETA_GRID.len())];
                let (fast, _) = worst_deletion_1d(&p, eta)?;
                let (exact, _) = exhaustive_worst_deletion(&p, eta)?;
                checks += 1;
                if (fast - exact).abs() > 1e-9 {
                    fail(
                        t,
                        format!("eta={eta}: tail trim {fast} vs exhaustive {exact}"),
                        &[&p],
                    );
                }
                if rng.random_bool(0.25) {
                    let d = rng.random_range(2..=MAX_DIM);
                    let n = rng.random_range(1..=8usize);
                    let pts: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
                    let q = EmpiricalDist::from_flat(d, pts, w)?;
                    let (exact, r) = exhaustive_worst_deletion(&q, eta)?;
                    let ok = r
                        .iter()
                        .zip(q.weights())
                        .all(|(r, w)| *r <= w / (1.0 - eta) + 1e-12)
                        && ((r.iter().sum::<f64>()) - 1.0).abs() < 1e-9;
                    let dirs = crate::resilience::resilience_profile(&q, &[eta], &axes(d))?;
                    checks += 1;
                    if !ok || dirs.rhos[0] > exact + 1e-9 {
                        fail(t, format!("eta={eta}: bad {d}-d exhaustive witness"), &[&q]);
                    }
                }
            }
        }
        Suite::MeancrossTv => {
            for t in 0..MAX_REDRAWS * trials {
                if checks == trials {
                    break;
                }
                let p = random_small_1d(&mut rng, 8);
                let q = random_small_1d(&mut rng, 8);
                let eps = ks_1d(&p, &q)?.value + 0.1 * rng.random::<f64>();
                if eps >= 1.0 {
                    continue;
                }
                checks += 1;
                let w = mean_cross_tv(&p, &q, eps)?;
                if !w.certified {
                    fail(
                        t,
                        format!("eps={eps}: uncertified TV mean-cross witness"),
                        &[&p, &q],
                    );
                }
            }
        }
        Suite::MeancrossW1 => {
            for t in 0..trials {
                let p = random_small_1d(&mut rng, 8);
                let q = random_small_1d(&mut rng, 8);
                let g = if rng.random_bool(0.5) {
                    CrossFunction::Identity
                } else {
                    CrossFunction::Abs
                };
                let (pg, qg) = match g {
                    CrossFunction::Identity => (p.clone(), q.clone()),
                    CrossFunction::Abs => (p.map_1d(|x| x[0].abs())?, q.map_1d(|x| x[0].abs())?),
                };
                let eps = w1tilde(&pg, &qg, &pm)?.value + 0.2 * rng.random::<f64>();
                checks += 1;
                let w = mean_cross_w1(&p, &q, eps, g)?;
                if !w.certified || !convex_order_check(&w.r_p, &w.r_q) {
                    fail(
                        t,
                        format!("eps={eps} {g:?}: uncertified W1 mean-cross witness"),
                        &[&p, &q],
                    );
                }
            }
        }
        Suite::Modulus => {
            let classes = [
                ModulusConstraint::Resilience { rho: 1.0, eta: 0.2 },
                ModulusConstraint::Moment { k: 2.0, sigma: 1.0 },
                ModulusConstraint::Moment { k: 4.0, sigma: 1.0 },
            ];
            for (ci, &c) in classes.iter().enumerate() {
                let eps = match c {
                    ModulusConstraint::Resilience { eta, .. } => eta / 2.0,
                    _ => 0.1,
                };
                let mut gen = ModulusGenerator::new(c, eps, RngSeed(rng.random()))?;
                for t in 0..trials {
                    let pair = gen.next_pair()?;
                    checks += 1;
                    if pair.mean_gap > pair.bound + 1e-9 {
                        fail(
                            t,
                            format!(
                                "class {ci}: gap {} exceeds bound {}",
                                pair.mean_gap, pair.bound
                            ),
                            &[&pair.p1, &pair.p2],
                        );
                    }
                    // the midpoint distribution is what the bound is built on
                    if let Ok(r) = tv_midpoint(&pair.p1, &pair.p2) {
                        checks += 1;
                        if tv_discrete(&r, &pair.p1)? > pair.tv + 1e-12 {
                            fail(t, "midpoint farther than TV".into(), &[&pair.p1, &pair.p2]);
                        }
                    }
                }
            }
            for psi in [
                OrliczFunction::Power { k: 2.0 },
                OrliczFunction::Power { k: 4.0 },
                OrliczFunction::Exponential,
            ] {
                for eps in [0.01, 0.05, 0.1, 0.2] {
                    let w = orlicz_lower_bound_witness(1.0, psi, eps)?;
                    let upper = 2.0 * orlicz_resilience_bound(1.0, psi, eps)?;
                    checks += 1;
                    if !w.certified || w.gap < w.target || w.gap < (1.0 - eps) / 20.0 * upper {
                        fail(
                            0,
                            format!(
                                "{psi} eps={eps}: lower-bound witness gap {} too small",
                                w.gap
                            ),
                            &[&w.p1],
                        );
                    }
                }
            }
        }
        Suite::Orlicz => {
            let kinds = [
                OrliczFunction::Power { k: 2.0 },
                OrliczFunction::Power { k: 4.0 },
            ];
            for t in 0..trials {
                let p = random_small_1d(&mut rng, 10);
                let psi = kinds[rng.random_range(0..2)];
                let mu: f64 = p
                    .flat_points()
                    .iter()
                    .zip(p.weights())
                    .map(|(x, w)| x * w)
                    .sum();
                let sigma = orlicz_norm(&p, |x| x[0] - mu, psi)?;
                for eta in [0.05, 0.1, 0.25] {
                    let (rho, _) = worst_deletion_1d(&p, eta)?;
                    let bound = orlicz_resilience_bound(sigma, psi, eta)?;
                    checks += 1;
                    if rho > bound + 1e-8 {
                        fail(
                            t,
                            format!("{psi} eta={eta}: rho {rho} above bound {bound}"),
                            &[&p],
                        );
                    }
                }
            }
        }
        Suite::Tail => {
            for t in 0..trials {
                let p = random_small_1d(&mut rng, 10);
                let eta = ETA_GRID[rng.random_range(0..ETA_GRID.len())];
                let (rho, _) = worst_deletion_1d(&p, eta)?;
                checks += 1;
                if !tail_bound_check(&p, |x| x[0], rho, eta) {
                    fail(
                        t,
                        format!("eta={eta}: tail bound fails at certified rho {rho}"),
                        &[&p],
                    );
                }
            }
        }
        Suite::Closure => {
            for t in 0..trials {
                let p = random_small_1d(&mut rng, 12);
                let eta = [0.05, 0.1, 0.2, 0.3][rng.random_range(0..4)];
                checks += 1;
                if !deletion_closure_check(&p, eta, &e1, RngSeed(rng.random()))? {
                    fail(t, format!("eta={eta}: closure inequality violated"), &[&p]);
                }
                // exhaustive check of the same inequality on one random deletion
                let mut order: Vec<usize> = (0..p.len()).collect();
                let r = random_deletion(&p, eta, &mut rng, &mut order)?;
                let (rr, _) = exhaustive_worst_deletion(&r, eta)?;
                let (rp, _) = exhaustive_worst_deletion(&p, eta * (2.0 - eta))?;
                checks += 1;
                if rr > 2.0 * rp + 1e-9 {
                    fail(
                        t,
                        format!("eta={eta}: exhaustive closure {rr} > 2 x {rp}"),
                        &[&p, &r],
                    );
                }
            }
        }
        Suite::Friendly => {
            for t in 0..trials {
                let p = random_small_1d(&mut rng, 10);
                let g = if rng.random_bool(0.5) {
                    CrossFunction::Identity
                } else {
                    CrossFunction::Abs
                };
                let p = match g {
                    CrossFunction::Identity => p,
                    CrossFunction::Abs => p.map_1d(|x| x[0].abs())?,
                };
                let xs = p.flat_points().to_vec();
                let mu: f64 = xs.iter().zip(p.weights()).map(|(x, w)| x * w).sum();
                let lam = rng.random::<f64>();
                let ys: Vec<f64> = xs.iter().map(|x| mu + lam * (x - mu)).collect();
                let cost: f64 = xs
                    .iter()
                    .zip(&ys)
                    .zip(p.weights())
                    .map(|((x, y), w)| w * (x - y).abs())
                    .sum();
                checks += 1;
                let ok = friendly_perturbation_check(&p, &ys, g, cost + 1e-12)?;
                if !ok.ok {
                    fail(
                        t,
                        format!("contraction toward the mean rejected: {ok:?}"),
                        &[&p],
                    );
                }
                // a point pushed past the mean must be rejected
                if let Some(i) = xs.iter().position(|&x| (x - mu).abs() > 1e-6) {
                    // overshoot far enough that the new mean cannot catch up
                    let w = p.weight(i);
                    let mut bad = xs.clone();
                    bad[i] = mu - (w / (1.0 - w) + 1.0) * (xs[i] - mu);
                    let chk = friendly_perturbation_check(
                        &p,
                        &bad,
                        CrossFunction::Identity,
                        f64::INFINITY,
                    )?;
                    checks += 1;
                    if chk.ok {
                        fail(t, "overshooting move accepted".into(), &[&p]);
                    }
                }
            }
        }
    }
    Ok(SuiteReport {
        suite,
        trials,
        checks,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d1(v: &[f64]) -> EmpiricalDist {
        EmpiricalDist::uniform_1d(v).unwrap()
    }

    #[test]
    fn exhaustive_examples() {
        let (r, w) = exhaustive_worst_deletion(&d1(&[0.0, 0.0, 0.0, 10.0]), 0.25).unwrap();
        assert!((r - 2.5).abs() < 1e-12);
        assert!(w[3].abs() < 1e-12);
        let c = EmpiricalDist::point_mass(&[1.0, 2.0]).unwrap();
        assert_eq!(exhaustive_worst_deletion(&c, 0.3).unwrap().0, 0.0);
        let (r, _) = exhaustive_worst_deletion(&d1(&[-1.0, 1.0]), 0.5).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let big = d1(&[0.0; 16]);
        assert!(matches!(
            exhaustive_worst_deletion(&big, 0.1),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn exhaustive_in_two_dimensions_beats_any_axis() {
        let p = EmpiricalDist::uniform_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ])
        .unwrap();
        let (r, _) = exhaustive_worst_deletion(&p, 0.25).unwrap();
        // deleting the (1,1) atom moves the mean by (0.25, 0.25)
        assert!((r - 0.25 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn convex_order_examples() {
        let p = d1(&[0.0, 3.0]);
        assert!(convex_order_check(&p, &p));
        assert!(convex_order_check(&d1(&[0.0]), &d1(&[-1.0, 1.0])));
        assert!(!convex_order_check(&d1(&[-1.0, 1.0]), &d1(&[0.0])));
        assert!(!convex_order_check(&d1(&[0.0]), &d1(&[1.0])));
    }

    #[test]
    fn generator_zero_eps_gives_identical_pairs() {
        let mut g = ModulusGenerator::new(
            ModulusConstraint::Moment { k: 2.0, sigma: 1.0 },
            0.0,
            RngSeed(4),
        )
        .unwrap();
        for _ in 0..20 {
            let pair = g.next_pair().unwrap();
            assert_eq!(pair.p1, pair.p2);
            assert_eq!(pair.mean_gap, 0.0);
        }
    }

    #[test]
    fn generator_pairs_respect_modulus() {
        let c = ModulusConstraint::Resilience { rho: 0.5, eta: 0.2 };
        let mut g = ModulusGenerator::new(c, 0.1, RngSeed(8)).unwrap();
        for _ in 0..200 {
            let pair = g.next_pair().unwrap();
            assert!(pair.tv <= 0.2 + 1e-12);
            assert!(pair.mean_gap <= 1.0 + 1e-9);
            assert!(exhaustive_worst_deletion(&pair.p1, 0.2).unwrap().0 <= 0.5 + 1e-12);
        }
        assert!(g.acceptance_rate() > 0.5);
    }

    #[test]
    fn lower_bound_witness_gap() {
        let psi = OrliczFunction::Power { k: 2.0 };
        let w = orlicz_lower_bound_witness(1.0, psi, 0.1).unwrap();
        assert!(w.certified);
        assert!((w.tv - 0.1).abs() < 1e-12);
        assert!(w.gap >= w.target);
        let upper = 2.0 * orlicz_resilience_bound(1.0, psi, 0.1).unwrap();
        assert!(w.gap / upper >= 0.9 / 20.0);
    }

    #[test]
    fn friendly_examples() {
        let p = d1(&[-1.0, 0.5, 2.0]);
        let xs = p.flat_points().to_vec();
        assert!(
            friendly_perturbation_check(&p, &xs, CrossFunction::Identity, 0.0)
                .unwrap()
                .ok
        );
        let mu = 0.5;
        let all = vec![mu; 3];
        let cost = (1.5 + 0.0 + 1.5) / 3.0;
        assert!(
            friendly_perturbation_check(&p, &all, CrossFunction::Identity, cost + 1e-12)
                .unwrap()
                .ok
        );
        let past = vec![3.0, 0.5, 2.0];
        let chk = friendly_perturbation_check(&p, &past, CrossFunction::Identity, 10.0).unwrap();
        assert!(!chk.ok);
        assert_eq!(chk.first_violation, Some(0));
    }

    #[test]
    fn all_suites_pass_briefly() {
        for s in Suite::ALL {
            let r = run_suite(s, 30, RngSeed(11)).unwrap();
            assert!(r.passed(), "{s}: {:?}", r.failures.first());
            assert!(r.checks > 0);
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
    }
}

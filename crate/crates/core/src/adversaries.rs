//! Corruption generators for the TV and W1 threat models.

use crate::distances::tv_discrete;
use crate::empirical::{dot, norm2, weighted_mean, weighted_quantile, Direction, EmpiricalDist};
use crate::error::{Error, Result};
use crate::rng::{DetRng, RngSeed};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Confidence level used for the oblivious-corruption budget slack.
pub const OBLIVIOUS_DELTA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Tv,
    W1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Oblivious,
    Adaptive,
}

/// Adversary strategies. Directions default to the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Strategy {
    /// Replace the lowest-projection points with a cluster at mean + m v,
    /// where m = magnitude, or magnitude / sqrt(eps) when `inv_sqrt_eps`.
    ShiftCluster {
        #[serde(default)]
        direction: Option<Vec<f64>>,
        magnitude: f64,
        #[serde(default)]
        inv_sqrt_eps: bool,
    },
    /// Replace the points farthest on the wrong side and place them at one
    /// location so the plain mean lands on `target`.
    MeanPull { target: Vec<f64> },
    /// Replace the lowest-projection points with a cluster at the clean
    /// (1 - eps) norm quantile along v.
    TailMimic {
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    /// Move every point by eps v.
    UniformShift {
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    /// Scale all points away from the mean so the transport is eps.
    RadialInflate,
    /// Move the k points with largest |v'x| outward along v; k defaults to
    /// ceil(n eps^{4/3}), the worst case against a fourth-moment constraint.
    TopK {
        #[serde(default)]
        direction: Option<Vec<f64>>,
        #[serde(default)]
        k: Option<usize>,
    },
}

impl Strategy {
    pub fn metric(&self) -> Metric {
        match self {
            Strategy::ShiftCluster { .. }
            | Strategy::MeanPull { .. }
            | Strategy::TailMimic { .. } => Metric::Tv,
            Strategy::UniformShift { .. } | Strategy::RadialInflate | Strategy::TopK { .. } => {
                Metric::W1
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::ShiftCluster { .. } => "shift-cluster",
            Strategy::MeanPull { .. } => "mean-pull",
            Strategy::TailMimic { .. } => "tail-mimic",
            Strategy::UniformShift { .. } => "uniform-shift",
            Strategy::RadialInflate => "radial-inflate",
            Strategy::TopK { .. } => "top-k",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn parse_vec(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::UnknownStrategy(format!("bad number {x:?}")))
        })
        .collect()
}

impl FromStr for Strategy {
    type Err = Error;

    /// `shift-cluster:M`, `shift-cluster-scaled:M`, `mean-pull:T1,T2,...`,
    /// `tail-mimic`, `uniform-shift`, `radial-inflate`, `top-k[:K]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let need =
            || arg.ok_or_else(|| Error::UnknownStrategy(format!("{name} needs a parameter")));
        let scalar = |a: &str| {
            a.parse::<f64>()
                .map_err(|_| Error::UnknownStrategy(format!("bad parameter {a:?}")))
        };
        Ok(match name {
            "shift-cluster" => Strategy::ShiftCluster {
                direction: None,
                magnitude: scalar(need()?)?,
                inv_sqrt_eps: false,
            },
            "shift-cluster-scaled" => Strategy::ShiftCluster {
                direction: None,
                magnitude: scalar(need()?)?,
                inv_sqrt_eps: true,
            },
            "mean-pull" => Strategy::MeanPull {
                target: parse_vec(need()?)?,
            },
            "tail-mimic" => Strategy::TailMimic { direction: None },
            "uniform-shift" => Strategy::UniformShift { direction: None },
            "radial-inflate" => Strategy::RadialInflate,
            "top-k" => Strategy::TopK {
                direction: None,
                k: arg
                    .map(|a| {
                        a.parse::<usize>()
                            .map_err(|_| Error::UnknownStrategy(format!("bad k {a:?}")))
                    })
                    .transpose()?,
            },
            _ => return Err(Error::UnknownStrategy(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionPlan {
    pub metric: Metric,
    pub model: Model,
    pub eps: f64,
    pub strategy: Strategy,
    pub seed: RngSeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReceipt {
    pub metric: Metric,
    pub eps: f64,
    /// TV distance or total weighted transport between clean and corrupted.
    pub achieved: f64,
    /// Allowed excess of `achieved` over `eps`.
    pub slack: f64,
    /// Indices of replaced or moved points.
    pub affected: Vec<usize>,
    pub affected_mass: f64,
    pub strategy: String,
}

impl CorruptionReceipt {
    pub fn within_budget(&self) -> bool {
        self.achieved <= self.eps + self.slack + 1e-12
    }
}

fn check_tv_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::BadEps(eps));
    }
    Ok(())
}

fn check_w1_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::BadEps(eps));
    }
    Ok(())
}

fn direction_or_axis(dir: &Option<Vec<f64>>, d: usize) -> Result<Vec<f64>> {
    match dir {
        Some(v) => {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
            Ok(Direction::new(v.clone())?.into_vec())
        }
        None => Ok(Direction::axis(d, 0).into_vec()),
    }
}

/// Slack (sqrt(eps) + sqrt(log(1/delta)/2n))^2 - eps on the realized TV of an
/// oblivious corruption.
pub fn oblivious_slack(eps: f64, n: usize, delta: f64) -> f64 {
    let a = eps.sqrt() + ((1.0 / delta).ln() / (2.0 * n as f64)).sqrt();
    a * a - eps
}

/// Source of contaminating points for the oblivious model.
#[derive(Debug, Clone, PartialEq)]
pub enum Contaminant {
    PointMass(Vec<f64>),
    Dist(EmpiricalDist),
}

impl Contaminant {
    fn dim(&self) -> usize {
        match self {
            Contaminant::PointMass(c) => c.len(),
            Contaminant::Dist(q) => q.dim(),
        }
    }

    fn draw(&self, rng: &mut DetRng) -> Vec<f64> {
        match self {
            Contaminant::PointMass(c) => c.clone(),
            Contaminant::Dist(q) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, w) in q.weights().iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return q.point(i).to_vec();
                    }
                }
                q.point(q.len() - 1).to_vec()
            }
        }
    }
}

/// n draws from (1 - eps) p* + eps Q. Returns the corrupted sample, the
/// coupled clean sample (what each slot would have held), and the receipt.
pub fn corrupt_tv_oblivious<F>(
    mut clean_sampler: F,
    contaminant: &Contaminant,
    eps: f64,
    n: usize,
    seed: RngSeed,
) -> Result<(EmpiricalDist, EmpiricalDist, CorruptionReceipt)>
where
    F: FnMut(&mut DetRng) -> Vec<f64>,
{
    check_tv_eps(eps)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let d = contaminant.dim();
    let mut clean_rng = seed.derive(0).rng();
    let mut coin_rng = seed.derive(1).rng();
    let mut clean = Vec::with_capacity(n * d);
    let mut bad = Vec::with_capacity(n * d);
    let mut affected = Vec::new();
    for i in 0..n {
        let x = clean_sampler(&mut clean_rng);
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if coin_rng.random::<f64>() < eps {
            bad.extend(contaminant.draw(&mut coin_rng));
            affected.push(i);
        } else {
            bad.extend_from_slice(&x);
        }
        clean.extend(x);
    }
    let clean = EmpiricalDist::uniform_flat(d, clean)?;
    let corrupted = EmpiricalDist::uniform_flat(d, bad)?;
    let achieved = tv_discrete(&clean, &corrupted)?;
    let receipt = CorruptionReceipt {
        metric: Metric::Tv,
        eps,
        achieved,
        slack: oblivious_slack(eps, n, OBLIVIOUS_DELTA),
        affected_mass: affected.len() as f64 / n as f64,
        affected,
        strategy: "oblivious-mixture".into(),
    };
    Ok((corrupted, clean, receipt))
}

/// Indices sorted by `key` ascending, taken while their mass fits in `eps`.
fn take_lowest(p: &EmpiricalDist, eps: f64, key: impl Fn(&[f64]) -> f64) -> Vec<usize> {
    let keys: Vec<f64> = p.rows().map(key).collect();
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    let mut out = Vec::new();
    let mut mass = 0.0;
    for i in idx {
        let w = p.weight(i);
        if w == 0.0 {
            continue;
        }
        if mass + w > eps + 1e-12 {
            break;
        }
        mass += w;
        out.push(i);
    }
    out
}

/// Replaces at most eps mass of the observed sample after inspecting it.
pub fn corrupt_tv_adaptive(
    clean: &EmpiricalDist,
    eps: f64,
    strategy: &Strategy,
    _seed: RngSeed,
) -> Result<(EmpiricalDist, CorruptionReceipt)> {
    check_tv_eps(eps)?;
    if strategy.metric() != Metric::Tv {
        return Err(Error::UnknownStrategy(format!(
            "{strategy} is not a TV strategy"
        )));
    }
    let d = clean.dim();
    let mu = weighted_mean(clean);
    let (idx, location) = match strategy {
        Strategy::ShiftCluster {
            direction,
            magnitude,
            inv_sqrt_eps,
        } => {
            let v = direction_or_axis(direction, d)?;
            let m = if *inv_sqrt_eps && eps > 0.0 {
                magnitude / eps.sqrt()
            } else {
                *magnitude
            };
            let idx = take_lowest(clean, eps, |x| dot(&v, x));
            (
                idx,
                mu.iter()
                    .zip(&v)
                    .map(|(a, b)| a + m * b)
                    .collect::<Vec<f64>>(),
            )
        }
        Strategy::MeanPull { target } => {
            if target.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: target.len(),
                });
            }
            let gap: Vec<f64> = target.iter().zip(&mu).map(|(t, m)| t - m).collect();
            let u = if norm2(&gap) > 0.0 {
                Direction::new(gap)?.into_vec()
            } else {
                Direction::axis(d, 0).into_vec()
            };
            let idx = take_lowest(clean, eps, |x| dot(&u, x));
            let removed: f64 = idx.iter().map(|&i| clean.weight(i)).sum();
            let loc = if removed > 0.0 {
                // sum_keep + removed * loc = target
                (0..d)
                    .map(|j| {
                        let keep: f64 = clean
                            .rows()
                            .zip(clean.weights())
                            .map(|(x, w)| w * x[j])
                            .sum::<f64>()
                            - idx
                                .iter()
                                .map(|&i| clean.weight(i) * clean.point(i)[j])
                                .sum::<f64>();
                        (target[j] - keep) / removed
                    })
                    .collect()
            } else {
                target.clone()
            };
            (idx, loc)
        }
        Strategy::TailMimic { direction } => {
            let v = direction_or_axis(direction, d)?;
            let norms: Vec<f64> = clean
                .rows()
                .map(|x| norm2(&x.iter().zip(&mu).map(|(a, b)| a - b).collect::<Vec<_>>()))
                .collect();
            let r = weighted_quantile(&norms, clean.weights(), 1.0 - eps);
            let idx = take_lowest(clean, eps, |x| dot(&v, x));
            (idx, mu.iter().zip(&v).map(|(a, b)| a + r * b).collect())
        }
        _ => unreachable!("checked metric"),
    };
    let mut pts = clean.flat_points().to_vec();
    for &i in &idx {
        pts[i * d..(i + 1) * d].copy_from_slice(&location);
    }
    let corrupted = clean.with_points(d, pts)?;
    let achieved = tv_discrete(clean, &corrupted)?;
    let affected_mass = idx.iter().map(|&i| clean.weight(i)).sum();
    Ok((
        corrupted,
        CorruptionReceipt {
            metric: Metric::Tv,
            eps,
            achieved,
            slack: 1e-12,
            affected: idx,
            affected_mass,
            strategy: strategy.name().into(),
        },
    ))
}

/// Exact weighted transport between two aligned point sets.
pub fn transport_cost(a: &EmpiricalDist, b: &EmpiricalDist) -> f64 {
    a.rows()
        .zip(b.rows())
        .zip(a.weights())
        .map(|((x, y), w)| w * norm2(&x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>()))
        .sum()
}

/// Moves the observed points with total weighted transport exactly eps.
pub fn corrupt_w1(
    clean: &EmpiricalDist,
    eps: f64,
    strategy: &Strategy,
    _seed: RngSeed,
) -> Result<(EmpiricalDist, CorruptionReceipt)> {
    check_w1_eps(eps)?;
    if strategy.metric() != Metric::W1 {
        return Err(Error::UnknownStrategy(format!(
            "{strategy} is not a W1 strategy"
        )));
    }
    let d = clean.dim();
    let mut pts = clean.flat_points().to_vec();
    let mut affected = Vec::new();
    if eps > 0.0 {
        match strategy {
            Strategy::UniformShift { direction } => {
                let v = direction_or_axis(direction, d)?;
                for (i, x) in pts.chunks_mut(d).enumerate() {
                    x.iter_mut().zip(&v).for_each(|(a, b)| *a += eps * b);
                    affected.push(i);
                }
            }
            Strategy::RadialInflate => {
                let mu = weighted_mean(clean);
                let spread: f64 = clean
                    .rows()
                    .zip(clean.weights())
                    .map(|(x, w)| {
                        w * norm2(&x.iter().zip(&mu).map(|(a, b)| a - b).collect::<Vec<_>>())
                    })
                    .sum();
                if spread == 0.0 {
                    return Err(Error::PreconditionViolated(
                        "radial inflation of a point mass".into(),
                    ));
                }
                let alpha = eps / spread;
                for (i, x) in pts.chunks_mut(d).enumerate() {
                    x.iter_mut()
                        .zip(&mu)
                        .for_each(|(a, m)| *a += alpha * (*a - m));
                    affected.push(i);
                }
            }
            Strategy::TopK { direction, k } => {
                let v = direction_or_axis(direction, d)?;
                let n = clean.len();
                let k = k
                    .unwrap_or_else(|| (n as f64 * eps.powf(4.0 / 3.0)).ceil() as usize)
                    .clamp(1, n);
                let proj: Vec<f64> = clean.project_values(&v);
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| proj[b].abs().total_cmp(&proj[a].abs()).then(a.cmp(&b)));
                let chosen: Vec<usize> = idx
                    .into_iter()
                    .filter(|&i| clean.weight(i) > 0.0)
                    .take(k)
                    .collect();
                let mass: f64 = chosen.iter().map(|&i| clean.weight(i)).sum();
                let step = eps / mass;
                for &i in &chosen {
                    let s = if proj[i] < 0.0 { -1.0 } else { 1.0 };
                    pts[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(&v)
                        .for_each(|(a, b)| *a += s * step * b);
                }
                affected = chosen;
            }
            _ => unreachable!("checked metric"),
        }
    }
    affected.sort_unstable();
    let corrupted = clean.with_points(d, pts)?;
    let achieved = transport_cost(clean, &corrupted);
    let affected_mass = affected.iter().map(|&i| clean.weight(i)).sum();
    Ok((
        corrupted,
        CorruptionReceipt {
            metric: Metric::W1,
            eps,
            achieved,
            slack: 1e-12,
            affected,
            affected_mass,
            strategy: strategy.name().into(),
        },
    ))
}

/// Applies a plan to an observed sample (adaptive TV or W1 transport).
pub fn apply_plan(
    clean: &EmpiricalDist,
    plan: &CorruptionPlan,
) -> Result<(EmpiricalDist, CorruptionReceipt)> {
    if plan.strategy.metric() != plan.metric {
        return Err(Error::UnknownStrategy(format!(
            "{} does not match metric {:?}",
            plan.strategy, plan.metric
        )));
    }
    match plan.metric {
        Metric::Tv => corrupt_tv_adaptive(clean, plan.eps, &plan.strategy, plan.seed),
        Metric::W1 => corrupt_w1(clean, plan.eps, &plan.strategy, plan.seed),
    }
}

/// Zeroes covariates and response on every atom with a nonzero first
/// covariate; on the two-atom regression construction this erases the only
/// information about the slope. `t` is the construction's scale, recorded only.
pub fn adversary_dimension_delete(
    data: &EmpiricalDist,
    eps: f64,
    t: f64,
) -> Result<(EmpiricalDist, CorruptionReceipt)> {
    check_tv_eps(eps)?;
    if data.dim() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: data.dim(),
        });
    }
    let d = data.dim();
    let informative: Vec<usize> = (0..data.len())
        .filter(|&i| data.weight(i) > 0.0 && data.point(i)[..d - 1].iter().any(|&x| x != 0.0))
        .collect();
    let mass: f64 = informative.iter().map(|&i| data.weight(i)).sum();
    if mass > eps + 1e-9 {
        return Err(Error::PreconditionViolated(format!(
            "informative mass {mass} exceeds eps {eps}; data is not the two-atom construction"
        )));
    }
    let mut pts = data.flat_points().to_vec();
    for &i in &informative {
        pts[i * d..(i + 1) * d].iter_mut().for_each(|x| *x = 0.0);
    }
    let corrupted = data.with_points(d, pts)?;
    let achieved = tv_discrete(data, &corrupted)?;
    Ok((
        corrupted,
        CorruptionReceipt {
            metric: Metric::Tv,
            eps,
            achieved,
            slack: 1e-9,
            affected: informative,
            affected_mass: mass,
            strategy: format!("dimension-delete(t={t})"),
        },
    ))
}

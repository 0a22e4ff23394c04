//! Experiment driver: synthetic clean data, corruption x estimator sweeps,
//! CSV output and log-log slope fits.

use crate::adversaries::{
    adversary_dimension_delete, apply_plan, corrupt_tv_oblivious, Contaminant, CorruptionPlan,
    Metric, Model, Strategy,
};
use crate::empirical::{dot, norm2, weighted_mean, weighted_second_moment, EmpiricalDist};
use crate::error::{Error, Result};
use crate::estimators::{
    filter_mean, filter_mean_isotropic_kth, ols, plain_mean, robust_linreg_tv, robust_linreg_w1,
    robust_mean_1d, robust_mean_highd, squared_loss, w1_project_moment, EstimateReport,
    EstimatorConfig,
};
use crate::orlicz::OrliczFunction;
use crate::rng::{standard_normal, DetRng, RngSeed};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Pareto};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

pub const DEFAULT_HOLDOUT: usize = 100_000;

/// Named clean distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// N(mean, cov); identity covariance and zero mean by default.
    Gaussian {
        #[serde(default)]
        mean: Option<Vec<f64>>,
        #[serde(default)]
        cov: Option<Vec<Vec<f64>>>,
    },
    /// Multivariate t: Z sqrt(df / chi2_df), rescaled to identity
    /// covariance when `whiten`.
    StudentT {
        df: f64,
        #[serde(default)]
        whiten: bool,
    },
    /// Gaussian scale mixture Z S with S ~ Pareto(1, alpha).
    Pareto { alpha: f64 },
    /// Regression data [x, y]: x ~ N(x_mean 1, I), y = theta^T x + noise Z.
    LinearModel {
        theta: Vec<f64>,
        noise: f64,
        #[serde(default)]
        x_mean: f64,
    },
    /// Two atoms: [0, 0] with mass 1 - eps and [b e1, t] with mass eps, so
    /// Y = (t / b) X.
    ProofConstruction {
        eps: f64,
        t: f64,
        #[serde(default = "one")]
        b: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// E|Z|^k for a standard normal Z.
fn normal_abs_moment(k: f64) -> f64 {
    (k / 2.0 * 2f64.ln() + ln_gamma((k + 1.0) / 2.0)).exp() / std::f64::consts::PI.sqrt()
}

/// E|T|^k for a Student t with `df` degrees of freedom, k < df.
fn student_abs_moment(k: f64, df: f64) -> f64 {
    (k / 2.0 * df.ln() + ln_gamma((k + 1.0) / 2.0) + ln_gamma((df - k) / 2.0)
        - ln_gamma(df / 2.0))
    .exp()
        / std::f64::consts::PI.sqrt()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Orlicz norm of a standard normal under psi.
fn normal_orlicz(psi: OrliczFunction) -> f64 {
    match psi {
        OrliczFunction::Power { k } => normal_abs_moment(k).powf(1.0 / k),
        OrliczFunction::SubGaussian => (8.0f64 / 3.0).sqrt(),
        OrliczFunction::Exponential => {
            // E e^{|Z|/t} = 2 e^{1/2t^2} Phi(1/t), decreasing in t.
            let excess = |t: f64| 2.0 * (0.5 / (t * t)).exp() * normal_cdf(1.0 / t) - 2.0;
            let (mut lo, mut hi) = (0.1, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if excess(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        }
    }
}

fn cholesky(cov: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if cov.len() != d || cov.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cov.len(),
        });
    }
    let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    m.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))
}

/// A generator bound to a covariate dimension, ready to draw points.
pub struct Sampler {
    generator: Generator,
    d: usize,
    chol: Option<DMatrix<f64>>,
    chi2: Option<ChiSquared<f64>>,
    pareto: Option<Pareto<f64>>,
}

impl Sampler {
    pub fn new(generator: &Generator, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        let mut s = Sampler {
            generator: generator.clone(),
            d,
            chol: None,
            chi2: None,
            pareto: None,
        };
        match generator {
            Generator::Gaussian { mean, cov } => {
                if mean.as_ref().is_some_and(|m| m.len() != d) {
                    return bad("gaussian mean has the wrong length");
                }
                if let Some(c) = cov {
                    s.chol = Some(cholesky(c, d)?);
                }
            }
            Generator::StudentT { df, whiten } => {
                if !(*df > 0.0) || (*whiten && !(*df > 2.0)) {
                    return bad("student-t needs df > 0 (df > 2 to whiten)");
                }
                s.chi2 = Some(ChiSquared::new(*df).map_err(|e| Error::InvalidArgument(e.to_string()))?);
            }
            Generator::Pareto { alpha } => {
                s.pareto =
                    Some(Pareto::new(1.0, *alpha).map_err(|e| Error::InvalidArgument(e.to_string()))?);
            }
            Generator::LinearModel { theta, noise, .. } => {
                if theta.len() != d {
                    return bad("theta length must equal d");
                }
                if !(*noise >= 0.0) {
                    return bad("noise must be >= 0");
                }
            }
            Generator::ProofConstruction { eps, b, .. } => {
                if !(*eps > 0.0 && *eps < 1.0) || *b == 0.0 {
                    return bad("proof construction needs eps in (0, 1) and b != 0");
                }
            }
        }
        Ok(s)
    }

    /// Dimension of the emitted points ([x, y] for regression generators).
    pub fn output_dim(&self) -> usize {
        self.d + usize::from(self.is_regression())
    }

    pub fn is_regression(&self) -> bool {
        matches!(
            self.generator,
            Generator::LinearModel { .. } | Generator::ProofConstruction { .. }
        )
    }

    fn normals(&self, rng: &mut DetRng) -> Vec<f64> {
        (0..self.d).map(|_| standard_normal(rng)).collect()
    }

    pub fn sample_point(&self, rng: &mut DetRng) -> Vec<f64> {
        match &self.generator {
            Generator::Gaussian { mean, .. } => {
                let z = self.normals(rng);
                let mut x = match &self.chol {
                    Some(l) => (l * nalgebra::DVector::from_vec(z)).iter().copied().collect(),
                    None => z,
                };
                if let Some(m) = mean {
                    x.iter_mut().zip(m).for_each(|(a, b)| *a += b);
                }
                x
            }
            Generator::StudentT { df, whiten } => {
                let z = self.normals(rng);
                let g: f64 = self.chi2.as_ref().expect("built in new").sample(rng);
                let mut s = (df / g).sqrt();
                if *whiten {
                    s *= ((df - 2.0) / df).sqrt();
                }
                z.into_iter().map(|x| x * s).collect()
            }
            Generator::Pareto { .. } => {
                let z = self.normals(rng);
                let s: f64 = self.pareto.as_ref().expect("built in new").sample(rng);
                z.into_iter().map(|x| x * s).collect()
            }
            Generator::LinearModel {
                theta,
                noise,
                x_mean,
            } => {
                let mut x: Vec<f64> = self.normals(rng).into_iter().map(|z| z + x_mean).collect();
                let y = dot(&x, theta) + noise * standard_normal(rng);
                x.push(y);
                x
            }
            Generator::ProofConstruction { eps, t, b } => {
                let mut x = vec![0.0; self.d + 1];
                if rng.random::<f64>() < *eps {
                    x[0] = *b;
                    x[self.d] = *t;
                }
                x
            }
        }
    }

    /// n clean points, deterministic per seed. The proof construction is
    /// returned as its exact two-atom law.
    pub fn generate(&self, n: usize, seed: RngSeed) -> Result<EmpiricalDist> {
        if let Generator::ProofConstruction { eps, t, b } = self.generator {
            let mut hi = vec![0.0; self.d + 1];
            hi[0] = b;
            hi[self.d] = t;
            return EmpiricalDist::from_rows(&[vec![0.0; self.d + 1], hi], vec![1.0 - eps, eps]);
        }
        if n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        let mut rng = seed.rng();
        let mut flat = Vec::with_capacity(n * self.output_dim());
        for _ in 0..n {
            flat.extend(self.sample_point(&mut rng));
        }
        EmpiricalDist::uniform_flat(self.output_dim(), flat)
    }

    /// Population mean of the emitted points.
    pub fn true_mean(&self) -> Vec<f64> {
        match &self.generator {
            Generator::Gaussian { mean, .. } => mean.clone().unwrap_or(vec![0.0; self.d]),
            Generator::StudentT { .. } | Generator::Pareto { .. } => vec![0.0; self.d],
            Generator::LinearModel { theta, x_mean, .. } => {
                let mut m = vec![*x_mean; self.d];
                m.push(x_mean * theta.iter().sum::<f64>());
                m
            }
            Generator::ProofConstruction { eps, t, b } => {
                let mut m = vec![0.0; self.d + 1];
                m[0] = eps * b;
                m[self.d] = eps * t;
                m
            }
        }
    }

    fn covariance(&self) -> Result<DMatrix<f64>> {
        let d = self.d;
        match &self.generator {
            Generator::Gaussian { cov, .. } => Ok(match cov {
                Some(c) => DMatrix::from_fn(d, d, |i, j| c[i][j]),
                None => DMatrix::identity(d, d),
            }),
            Generator::StudentT { df, whiten } => {
                if *whiten {
                    Ok(DMatrix::identity(d, d))
                } else if *df > 2.0 {
                    Ok(DMatrix::identity(d, d) * (df / (df - 2.0)))
                } else {
                    Err(Error::InvalidArgument("student-t variance is infinite".into()))
                }
            }
            Generator::Pareto { alpha } => {
                if *alpha > 2.0 {
                    Ok(DMatrix::identity(d, d) * (alpha / (alpha - 2.0)))
                } else {
                    Err(Error::InvalidArgument("pareto variance is infinite".into()))
                }
            }
            _ => Err(Error::InvalidArgument(
                "second moment is defined for mean-estimation generators only".into(),
            )),
        }
    }

    /// Population second moment E[X X^T].
    pub fn true_second_moment(&self) -> Result<DMatrix<f64>> {
        let mut m = self.covariance()?;
        let mu = self.true_mean();
        for i in 0..self.d {
            for j in 0..self.d {
                m[(i, j)] += mu[i] * mu[j];
            }
        }
        Ok(m)
    }

    /// sup over unit v of the psi-Orlicz norm of v^T (X - E X), for the
    /// covariates.
    pub fn true_sigma(&self, psi: OrliczFunction) -> Result<f64> {
        let infinite = || {
            Err(Error::InvalidArgument(format!(
                "{psi} norm is infinite for this generator; set sigma explicitly"
            )))
        };
        match (&self.generator, psi) {
            (Generator::Gaussian { cov, .. }, _) => {
                let top = match cov {
                    Some(_) => {
                        let eig = SymmetricEigen::new(self.covariance()?);
                        eig.eigenvalues.iter().fold(0.0_f64, |m, x| m.max(*x))
                    }
                    None => 1.0,
                };
                Ok(top.sqrt() * normal_orlicz(psi))
            }
            (Generator::LinearModel { .. }, _) => Ok(normal_orlicz(psi)),
            (Generator::StudentT { df, whiten }, OrliczFunction::Power { k }) if k < *df => {
                let c = if *whiten { ((df - 2.0) / df).sqrt() } else { 1.0 };
                Ok(c * student_abs_moment(k, *df).powf(1.0 / k))
            }
            (Generator::Pareto { alpha }, OrliczFunction::Power { k }) if k < *alpha => {
                Ok((normal_abs_moment(k) * alpha / (alpha - k)).powf(1.0 / k))
            }
            _ => infinite(),
        }
    }
}

/// How each cell's clean sample is corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    None,
    /// Every strategy is run on the same clean sample and the cell keeps the
    /// worst resulting error.
    Plan {
        metric: Metric,
        model: Model,
        strategies: Vec<Strategy>,
    },
    /// Erase the informative atoms of the two-atom regression construction.
    DimensionDelete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    PlainMean,
    Mean1d,
    MeanHighd,
    Filter,
    FilterKth,
    SecondMoment,
    PlainSecondMoment,
    LinregTv,
    LinregW1,
    Ols,
}

impl EstimatorKind {
    fn is_regression(self) -> bool {
        matches!(
            self,
            EstimatorKind::LinregTv | EstimatorKind::LinregW1 | EstimatorKind::Ols
        )
    }

    fn is_second_moment(self) -> bool {
        matches!(
            self,
            EstimatorKind::SecondMoment | EstimatorKind::PlainSecondMoment
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub generator: Generator,
    /// Covariate dimension.
    pub d: usize,
    pub n: usize,
    pub eps_grid: Vec<f64>,
    pub trials: usize,
    pub corruption: Corruption,
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub config: EstimatorConfig,
    /// Overrides the generator's analytic scale under `config.psi`.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_holdout")]
    pub holdout: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Wall-clock times make the CSV irreproducible, so they are opt-in.
    #[serde(default)]
    pub record_runtime: bool,
    #[serde(default)]
    pub seed: RngSeed,
}

fn default_holdout() -> usize {
    DEFAULT_HOLDOUT
}

impl SweepSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| {
            let msg = e.to_string();
            if msg.contains("unknown variant") && msg.contains("proof_construction") {
                Error::UnknownGenerator(msg)
            } else {
                Error::Json(e)
            }
        })
    }

    fn metric(&self) -> Metric {
        match &self.corruption {
            Corruption::Plan { metric, .. } => *metric,
            _ => Metric::Tv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.eps_grid.is_empty() {
            return Err(Error::InvalidArgument("eps grid is empty".into()));
        }
        if self.eps_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("eps grid must be strictly increasing".into()));
        }
        let tv = self.metric() == Metric::Tv;
        for &e in &self.eps_grid {
            let ok = e >= 0.0 && e.is_finite() && (!tv || e < 0.45);
            if !ok {
                return Err(Error::BadEps(e));
            }
        }
        if let Corruption::Plan { strategies, .. } = &self.corruption {
            if strategies.is_empty() {
                return Err(Error::InvalidArgument("no corruption strategies".into()));
            }
        }
        let sampler = Sampler::new(&self.generator, self.d)?;
        if sampler.is_regression() != self.estimator.is_regression() {
            return Err(Error::InvalidArgument(
                "regression estimators need a regression generator and vice versa".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub eps: f64,
    pub trial: usize,
    pub error: f64,
    pub mass_removed: f64,
    pub runtime_ms: u64,
    pub flag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub eps: f64,
    /// Failed trials count as infinite error.
    pub median_error: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<Record>,
    pub cells: Vec<CellSummary>,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// What the error of an estimate is measured against.
enum Truth {
    Mean(Vec<f64>),
    SecondMoment(DMatrix<f64>),
    /// Clean reference sample and its optimal loss.
    Regression(EmpiricalDist, f64),
}

fn spectral_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a - b);
    eig.eigenvalues.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn estimate(
    kind: EstimatorKind,
    p: &EmpiricalDist,
    cfg: &EstimatorConfig,
) -> Result<EstimateReport> {
    match kind {
        EstimatorKind::PlainMean => Ok(plain_mean(p)),
        EstimatorKind::Mean1d => robust_mean_1d(p, cfg),
        EstimatorKind::MeanHighd => robust_mean_highd(p, cfg),
        EstimatorKind::Filter => filter_mean(p, cfg),
        EstimatorKind::FilterKth => filter_mean_isotropic_kth(p, cfg),
        EstimatorKind::SecondMoment => w1_project_moment(p, cfg).map(|(_, r)| r),
        EstimatorKind::PlainSecondMoment => {
            let m = weighted_second_moment(p);
            let d = p.dim();
            let rows = (0..d).map(|i| (0..d).map(|j| m[(i, j)]).collect()).collect();
            let mut r = plain_mean(p);
            r.estimate = crate::estimators::Estimate::Matrix(rows);
            Ok(r)
        }
        EstimatorKind::LinregTv => robust_linreg_tv(p, cfg),
        EstimatorKind::LinregW1 => robust_linreg_w1(p, cfg),
        EstimatorKind::Ols => {
            let theta = ols(p, cfg.radius)?;
            let mut r = plain_mean(p);
            r.estimate = crate::estimators::Estimate::Coefficients(theta);
            Ok(r)
        }
    }
}

fn score(report: &EstimateReport, truth: &Truth) -> f64 {
    match truth {
        Truth::Mean(mu) => {
            let v = report.estimate.as_vector().expect("mean estimate");
            norm2(&v.iter().zip(mu).map(|(a, b)| a - b).collect::<Vec<_>>())
        }
        Truth::SecondMoment(m) => {
            spectral_gap(&report.estimate.as_matrix().expect("matrix estimate"), m)
        }
        Truth::Regression(reference, best) => {
            let theta = report.estimate.as_vector().expect("coefficients");
            (squared_loss(reference, theta) - best).max(0.0)
        }
    }
}

fn flag_of(e: &Error) -> &'static str {
    match e {
        Error::BudgetExceeded { .. } => "budget_exceeded",
        Error::NoConvergence(_) => "no_convergence",
        Error::Singular(_) => "singular",
        Error::PreconditionViolated(_) => "precondition",
        _ => "error",
    }
}

/// Corrupted samples for one cell, one per strategy.
fn corrupt_cell(
    spec: &SweepSpec,
    sampler: &Sampler,
    clean: &EmpiricalDist,
    eps: f64,
    seed: RngSeed,
) -> Result<Vec<EmpiricalDist>> {
    match &spec.corruption {
        Corruption::None => Ok(vec![clean.clone()]),
        Corruption::DimensionDelete => {
            let t = match spec.generator {
                Generator::ProofConstruction { t, .. } => t,
                _ => 0.0,
            };
            Ok(vec![adversary_dimension_delete(clean, eps, t)?.0])
        }
        Corruption::Plan {
            metric,
            model,
            strategies,
        } => strategies
            .iter()
            .map(|s| {
                let plan = CorruptionPlan {
                    metric: *metric,
                    model: *model,
                    eps,
                    strategy: s.clone(),
                    seed,
                };
                if *metric == Metric::Tv && *model == Model::Oblivious {
                    let c = oblivious_contaminant(&sampler.true_mean(), s, eps)?;
                    let (bad, _, _) = corrupt_tv_oblivious(
                        |rng| sampler.sample_point(rng),
                        &c,
                        eps,
                        spec.n,
                        seed,
                    )?;
                    Ok(bad)
                } else {
                    apply_plan(clean, &plan).map(|(bad, _)| bad)
                }
            })
            .collect(),
    }
}

/// The oblivious adversary cannot see the sample, so it aims at the
/// population mean.
pub fn oblivious_contaminant(mu: &[f64], s: &Strategy, eps: f64) -> Result<Contaminant> {
    let d = mu.len();
    match s {
        Strategy::ShiftCluster {
            direction,
            magnitude,
            inv_sqrt_eps,
        } => {
            let v = match direction {
                Some(v) => crate::empirical::Direction::new(v.clone())?.into_vec(),
                None => crate::empirical::Direction::axis(d, 0).into_vec(),
            };
            let m = if *inv_sqrt_eps && eps > 0.0 {
                magnitude / eps.sqrt()
            } else {
                *magnitude
            };
            Ok(Contaminant::PointMass(
                mu.iter().zip(&v).map(|(a, b)| a + m * b).collect(),
            ))
        }
        Strategy::MeanPull { target } if eps > 0.0 => Ok(Contaminant::PointMass(
            mu.iter()
                .zip(target)
                .map(|(m, t)| m + (t - m) / eps)
                .collect(),
        )),
        _ => Err(Error::UnknownStrategy(format!(
            "{s} has no oblivious form"
        ))),
    }
}

fn median_with_failures(mut v: Vec<f64>) -> f64 {
    v.iter_mut().for_each(|x| {
        if x.is_nan() {
            *x = f64::INFINITY;
        }
    });
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs every (eps, trial) cell in grid order. Clean samples depend on the
/// trial only, so every eps sees the same clean data; corruption seeds depend
/// on both indices.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let sampler = Sampler::new(&spec.generator, spec.d)?;
    let mut cfg = spec.config.clone();
    cfg.sigma = match spec.sigma {
        Some(s) => s,
        None => sampler.true_sigma(cfg.psi)?,
    };
    let truth = if spec.estimator.is_regression() {
        let reference = match spec.generator {
            Generator::ProofConstruction { .. } => sampler.generate(1, spec.seed)?,
            _ => sampler.generate(spec.holdout, spec.seed.derive(u64::MAX))?,
        };
        let best = squared_loss(&reference, &ols(&reference, f64::INFINITY)?);
        Truth::Regression(reference, best)
    } else if spec.estimator.is_second_moment() {
        Truth::SecondMoment(sampler.true_second_moment()?)
    } else {
        Truth::Mean(sampler.true_mean())
    };
    let tv = spec.metric() == Metric::Tv;
    let mut records = Vec::with_capacity(spec.eps_grid.len() * spec.trials);
    let mut cells = Vec::with_capacity(spec.eps_grid.len());
    for (ei, &eps) in spec.eps_grid.iter().enumerate() {
        let mut cell_cfg = cfg.clone();
        if tv {
            cell_cfg.eps = eps;
        }
        let mut errors = Vec::with_capacity(spec.trials);
        for trial in 0..spec.trials {
            let start = Instant::now();
            let clean = sampler.generate(spec.n, spec.seed.derive2(u64::MAX - 1, trial as u64))?;
            let outcome = corrupt_cell(
                spec,
                &sampler,
                &clean,
                eps,
                spec.seed.derive2(ei as u64, trial as u64),
            )
            .and_then(|samples| {
                let mut worst: Option<(f64, f64)> = None;
                for bad in &samples {
                    let r = estimate(spec.estimator, bad, &cell_cfg)?;
                    let e = score(&r, &truth);
                    let mass = r.mass_removed.max(r.transport_spent);
                    if worst.is_none_or(|(w, _)| e > w) {
                        worst = Some((e, mass));
                    }
                }
                Ok(worst.expect("at least one corrupted sample"))
            });
            let runtime_ms = if spec.record_runtime {
                start.elapsed().as_millis() as u64
            } else {
                0
            };
            let (error, mass_removed, flag) = match outcome {
                Ok((e, m)) => (e, m, String::new()),
                Err(e) => (f64::NAN, f64::NAN, flag_of(&e).to_string()),
            };
            errors.push(error);
            records.push(Record {
                eps,
                trial,
                error,
                mass_removed,
                runtime_ms,
                flag,
            });
        }
        let failures = errors.iter().filter(|e| e.is_nan()).count();
        cells.push(CellSummary {
            eps,
            median_error: median_with_failures(errors),
            failures,
        });
    }
    Ok(SweepResult { records, cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
}

/// Least-squares slope of log median error against log eps, over cells with
/// eps > 0 and a finite positive median.
pub fn fit_slope(result: &SweepResult) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = result
        .cells
        .iter()
        .filter(|c| c.eps > 0.0 && c.median_error > 0.0 && c.median_error.is_finite())
        .map(|c| (c.eps.ln(), c.median_error.ln()))
        .collect();
    fit_loglog(&pts)
}

fn fit_loglog(pts: &[(f64, f64)]) -> Result<SlopeFit> {
    if pts.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need >= 3 usable grid points, got {}",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all eps equal".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let sse: f64 = pts
        .iter()
        .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum();
    let stderr = if pts.len() > 2 {
        (sse / (m - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SlopeFit { slope, stderr })
}

/// Median error per cell of a single-trial-per-cell table, for callers that
/// assemble results themselves.
pub fn summarize(records: &[Record]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let eps = records[i].eps;
        let errs: Vec<f64> = records[i..]
            .iter()
            .take_while(|r| r.eps == eps)
            .map(|r| r.error)
            .collect();
        i += errs.len();
        out.push(CellSummary {
            eps,
            failures: errs.iter().filter(|e| e.is_nan()).count(),
            median_error: median_with_failures(errs),
        });
    }
    out
}

/// Plain sample mean of the clean generator, the baseline for eps = 0 checks.
pub fn plain_error(sampler: &Sampler, n: usize, seed: RngSeed) -> Result<f64> {
    let p = sampler.generate(n, seed)?;
    let mu = sampler.true_mean();
    Ok(norm2(
        &weighted_mean(&p)
            .iter()
            .zip(&mu)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_spec(grid: Vec<f64>, trials: usize) -> SweepSpec {
        SweepSpec {
            generator: Generator::Gaussian {
                mean: None,
                cov: None,
            },
            d: 2,
            n: 200,
            eps_grid: grid,
            trials,
            corruption: Corruption::Plan {
                metric: Metric::Tv,
                model: Model::Adaptive,
                strategies: vec![Strategy::ShiftCluster {
                    direction: None,
                    magnitude: 5.0,
                    inv_sqrt_eps: false,
                }],
            },
            estimator: EstimatorKind::Filter,
            config: EstimatorConfig::default(),
            sigma: None,
            holdout: 1000,
            output: None,
            record_runtime: false,
            seed: RngSeed(3),
        }
    }

    #[test]
    fn gaussian_draws_are_reproducible() {
        let s = Sampler::new(
            &Generator::Gaussian {
                mean: None,
                cov: None,
            },
            3,
        )
        .unwrap();
        let a = s.generate(4, RngSeed(9)).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, s.generate(4, RngSeed(9)).unwrap());
        assert_ne!(a, s.generate(4, RngSeed(10)).unwrap());
    }

    #[test]
    fn student_t_variance_is_finite() {
        let s = Sampler::new(
            &Generator::StudentT {
                df: 3.0,
                whiten: false,
            },
            4,
        )
        .unwrap();
        for seed in 0..5 {
            let p = s.generate(100_000, RngSeed(seed)).unwrap();
            let m = weighted_second_moment(&p);
            assert!(m.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn analytic_scales() {
        // E|Z|^2 = 1, E|Z|^4 = 3; t_5: E T^2 = 5/3; whitened t has unit variance.
        assert!((normal_abs_moment(2.0) - 1.0).abs() < 1e-12);
        assert!((normal_abs_moment(4.0) - 3.0).abs() < 1e-12);
        assert!((student_abs_moment(2.0, 5.0) - 5.0 / 3.0).abs() < 1e-12);
        let g = |gen| Sampler::new(&gen, 2).unwrap();
        let t = g(Generator::StudentT {
            df: 6.0,
            whiten: true,
        });
        assert!((t.true_sigma(OrliczFunction::Power { k: 2.0 }).unwrap() - 1.0).abs() < 1e-12);
        // E e^{Z^2/t^2} = (1 - 2/t^2)^{-1/2} = 2 at t^2 = 8/3.
        let n = g(Generator::Gaussian {
            mean: None,
            cov: None,
        });
        let s = n.true_sigma(OrliczFunction::SubGaussian).unwrap();
        assert!(((1.0 - 2.0 / (s * s)).powf(-0.5) - 2.0).abs() < 1e-12);
        // Exponential: check E e^{|Z|/t} = 2 by quadrature of the density.
        let t = n.true_sigma(OrliczFunction::Exponential).unwrap();
        let h = 1e-4;
        let integral: f64 = (0..200_000)
            .map(|i| {
                let z = (i as f64 + 0.5) * h;
                2.0 * (z / t - z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() * h
            })
            .sum();
        assert!((integral - 2.0).abs() < 1e-6, "{integral}");
        assert!(g(Generator::Pareto { alpha: 3.0 })
            .true_sigma(OrliczFunction::Power { k: 4.0 })
            .is_err());
    }

    #[test]
    fn proof_construction_atoms() {
        let s = Sampler::new(
            &Generator::ProofConstruction {
                eps: 0.1,
                t: 10.0,
                b: 2.0,
            },
            1,
        )
        .unwrap();
        let p = s.generate(50, RngSeed(0)).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.point(1), &[2.0, 10.0]);
        assert!((p.weight(1) - 0.1).abs() < 1e-15);
        // Y = (t / b) X on both atoms.
        for x in p.rows() {
            assert_eq!(x[1], 5.0 * x[0]);
        }
    }

    #[test]
    fn single_cell_sweep() {
        let r = run_sweep(&gaussian_spec(vec![0.1], 1)).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.cells.len(), 1);
        let csv = r.to_csv_string().unwrap();
        assert!(csv.starts_with("eps,trial,error,mass_removed,runtime_ms,flag\n"));
    }

    #[test]
    fn sweeps_are_reproducible() {
        let spec = gaussian_spec(vec![0.0, 0.05, 0.1], 3);
        let a = run_sweep(&spec).unwrap().to_csv_string().unwrap();
        let b = run_sweep(&spec).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 1 + 9);
    }

    #[test]
    fn zero_eps_matches_clean_error() {
        let mut spec = gaussian_spec(vec![0.0], 1);
        spec.estimator = EstimatorKind::PlainMean;
        let r = run_sweep(&spec).unwrap();
        let sampler = Sampler::new(&spec.generator, spec.d).unwrap();
        let base = plain_error(&sampler, spec.n, spec.seed.derive2(u64::MAX - 1, 0)).unwrap();
        assert_eq!(r.records[0].error, base);
    }

    #[test]
    fn budget_failures_are_flagged() {
        let mut spec = gaussian_spec(vec![0.1], 2);
        spec.sigma = Some(0.01);
        let r = run_sweep(&spec).unwrap();
        assert!(r.records.iter().all(|x| x.error.is_nan() && x.flag == "budget_exceeded"));
        assert_eq!(r.cells[0].failures, 2);
        assert!(r.cells[0].median_error.is_infinite());
    }

    #[test]
    fn exact_power_laws() {
        for a in [0.5, 0.75] {
            let cells: Vec<CellSummary> = [0.02, 0.05, 0.1, 0.2]
                .iter()
                .map(|&e: &f64| CellSummary {
                    eps: e,
                    median_error: 3.0 * e.powf(a),
                    failures: 0,
                })
                .collect();
            let fit = fit_slope(&SweepResult {
                records: vec![],
                cells,
            })
            .unwrap();
            assert!((fit.slope - a).abs() < 1e-12);
            assert!(fit.stderr < 1e-12);
        }
    }

    #[test]
    fn degenerate_fit() {
        let r = SweepResult {
            records: vec![],
            cells: vec![
                CellSummary {
                    eps: 0.0,
                    median_error: 1.0,
                    failures: 0,
                },
                CellSummary {
                    eps: 0.1,
                    median_error: 1.0,
                    failures: 0,
                },
            ],
        };
        assert!(matches!(fit_slope(&r), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn spec_validation() {
        let mut s = gaussian_spec(vec![0.1, 0.05], 1);
        assert!(s.validate().is_err());
        s.eps_grid = vec![0.1, 0.5];
        assert!(matches!(s.validate(), Err(Error::BadEps(_))));
        s.eps_grid = vec![0.1];
        s.trials = 0;
        assert!(s.validate().is_err());
        let bad = r#"{"generator":{"kind":"cauchy"},"d":1,"n":1,"eps_grid":[0.1],"trials":1,
            "corruption":{"kind":"none"},"estimator":"plain_mean"}"#;
        assert!(matches!(SweepSpec::from_json(bad), Err(Error::UnknownGenerator(_))));
    }

    #[test]
    fn spec_json_roundtrip() {
        let s = gaussian_spec(vec![0.05, 0.1], 2);
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(SweepSpec::from_json(&j).unwrap(), s);
    }
}

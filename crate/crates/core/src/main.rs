use clap::{Args, Parser, Subcommand, ValueEnum};
use mdrobust::adversaries::{apply_plan, corrupt_tv_oblivious, CorruptionPlan, Metric, Model, Strategy};
use mdrobust::directions::{default_directions, DEFAULT_RANDOM_DIRECTIONS};
use mdrobust::distances::{
    ks_1d, tv_discrete, tvtilde, w1_1d, w1tilde_refined, ProjectionFamily, DEFAULT_REFINE_STEPS,
};
use mdrobust::empirical::weighted_mean;
use mdrobust::estimators::{
    excess_loss, filter_mean, filter_mean_isotropic_kth, robust_linreg_tv, robust_linreg_w1,
    robust_mean_1d, robust_mean_highd, w1_project_moment, EstimatorConfig,
};
use mdrobust::harness::{fit_slope, oblivious_contaminant, run_sweep, SweepSpec};
use mdrobust::io::{read_dataset_path, write_dataset_path, Dataset};
use mdrobust::oracle::{run_suite, Suite};
use mdrobust::resilience::resilience_profile;
use mdrobust::{EmpiricalDist, Error, OrliczFunction, Result, RngSeed};
use rand::distr::{weighted::WeightedIndex, Distribution};
use serde_json::json;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mdrobust", version, about = "Robust estimation by minimum-distance projection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Distance between two CSV distributions, as JSON {value, witness}.
    Distance(DistanceArgs),
    /// Resilience profile rho(eta) as CSV.
    Resilience(ResilienceArgs),
    /// Corrupt a dataset; the receipt is printed as JSON.
    Corrupt(CorruptArgs),
    /// Run an estimator; prints the report as JSON.
    Estimate(EstimateArgs),
    /// Randomized lemma checks. Exit code 1 on any violation.
    VerifyLemmas(VerifyArgs),
    /// Run a sweep spec and write the long-format CSV.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DistMetric {
    Tv,
    Ks,
    Tvtilde,
    W1,
    W1tilde,
}

#[derive(Args)]
struct DistanceArgs {
    #[arg(long, value_enum)]
    metric: DistMetric,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Random directions for the projected metrics.
    #[arg(long, default_value_t = DEFAULT_RANDOM_DIRECTIONS)]
    dirs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ResilienceArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    etas: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_RANDOM_DIRECTIONS)]
    dirs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMetric {
    Tv,
    W1,
}

impl From<CliMetric> for Metric {
    fn from(m: CliMetric) -> Self {
        match m {
            CliMetric::Tv => Metric::Tv,
            CliMetric::W1 => Metric::W1,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliModel {
    Oblivious,
    Adaptive,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    metric: CliMetric,
    #[arg(long, value_enum, default_value = "adaptive")]
    model: CliModel,
    #[arg(long)]
    eps: f64,
    /// NAME[:params], e.g. shift-cluster:10 or top-k:5.
    #[arg(long)]
    strategy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Mean,
    Mean1d,
    Secmoment,
    Linreg,
}

/// Mean estimator used by `--task mean` under TV.
#[derive(Clone, Copy, ValueEnum)]
enum MeanMethod {
    /// 1-d projections aggregated by min-max.
    Minmax,
    /// Spectral filter to a bounded-covariance set.
    Filter,
    /// Spectral filter with the identity-covariance k-th moment threshold.
    FilterKth,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, value_enum)]
    task: Task,
    #[arg(long, value_enum, default_value = "tv")]
    metric: CliMetric,
    #[arg(long)]
    data: PathBuf,
    /// Clean reference sample; regression reports its excess loss on it.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value = "power:2")]
    psi: OrliczFunction,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long = "R")]
    radius: Option<f64>,
    #[arg(long, value_enum, default_value = "minmax")]
    method: MeanMethod,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    suite: Option<Suite>,
    #[arg(long)]
    all: bool,
    /// Instances per suite; each suite has its own default.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Defaults to the spec's output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the log-log slope fit as a JSON line.
    #[arg(long)]
    fit: bool,
}

fn load(path: &PathBuf) -> Result<Dataset> {
    read_dataset_path(path)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn distance(a: DistanceArgs) -> Result<()> {
    let p = load(&a.a)?.dist;
    let q = load(&a.b)?.dist;
    let seed = RngSeed(a.seed);
    let out = match a.metric {
        DistMetric::Tv => json!({"value": tv_discrete(&p, &q)?, "witness": null}),
        DistMetric::W1 => json!({"value": w1_1d(&p, &q)?, "witness": null}),
        DistMetric::Ks => serde_json::to_value(ks_1d(&p, &q)?)?,
        DistMetric::Tvtilde => {
            let dirs = default_directions(&p, a.dirs, seed);
            let fam = ProjectionFamily::linear(dirs)?.with_refinement(DEFAULT_REFINE_STEPS);
            serde_json::to_value(tvtilde(&p, &q, &fam)?)?
        }
        DistMetric::W1tilde => {
            let dirs = default_directions(&p, a.dirs, seed);
            serde_json::to_value(w1tilde_refined(&p, &q, &dirs, DEFAULT_REFINE_STEPS)?)?
        }
    };
    print_json(&out)
}

fn resilience(a: ResilienceArgs) -> Result<()> {
    let p = load(&a.data)?.dist;
    let dirs = default_directions(&p, a.dirs, RngSeed(a.seed));
    let prof = resilience_profile(&p, &a.etas, &dirs)?;
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    let mut header = vec!["eta".to_string(), "rho".to_string()];
    header.extend((1..=p.dim()).map(|j| format!("witness_dir{j}")));
    w.write_record(&header)?;
    for ((eta, rho), wit) in prof.etas.iter().zip(&prof.rhos).zip(&prof.witnesses) {
        let mut row = vec![eta.to_string(), rho.to_string()];
        row.extend(wit.direction.as_slice().iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn corrupt(a: CorruptArgs) -> Result<()> {
    let data = load(&a.input)?;
    let strategy: Strategy = a.strategy.parse()?;
    let seed = RngSeed(a.seed);
    let (bad, receipt) = match (a.model, a.metric) {
        (CliModel::Oblivious, CliMetric::Tv) => {
            // The adversary fixes its contaminant before seeing the sample, so
            // the sample is redrawn from the input as the clean law.
            let p = &data.dist;
            let c = oblivious_contaminant(&weighted_mean(p), &strategy, a.eps)?;
            let idx = WeightedIndex::new(p.weights())
                .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            let (bad, _, r) = corrupt_tv_oblivious(
                |rng| p.point(idx.sample(rng)).to_vec(),
                &c,
                a.eps,
                p.len(),
                seed,
            )?;
            (bad, r)
        }
        (model, metric) => apply_plan(
            &data.dist,
            &CorruptionPlan {
                metric: metric.into(),
                model: match model {
                    CliModel::Oblivious => Model::Oblivious,
                    CliModel::Adaptive => Model::Adaptive,
                },
                eps: a.eps,
                strategy,
                seed,
            },
        )?,
    };
    write_dataset_path(
        &a.out,
        &Dataset {
            dist: bad,
            has_response: data.has_response,
        },
    )?;
    print_json(&receipt)
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let data = load(&a.data)?;
    let mut cfg = EstimatorConfig {
        eps: a.eps,
        psi: a.psi,
        sigma: a.sigma,
        seed: RngSeed(a.seed),
        ..EstimatorConfig::default()
    };
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(r) = a.radius {
        cfg.radius = r;
    }
    let p: &EmpiricalDist = &data.dist;
    let unsupported = |what: &str| Err(Error::InvalidArgument(what.to_string()));
    let mut report = match (a.task, a.metric) {
        (Task::Mean1d, CliMetric::Tv) => robust_mean_1d(p, &cfg)?,
        (Task::Mean, CliMetric::Tv) => match a.method {
            MeanMethod::Minmax => robust_mean_highd(p, &cfg)?,
            MeanMethod::Filter => filter_mean(p, &cfg)?,
            MeanMethod::FilterKth => filter_mean_isotropic_kth(p, &cfg)?,
        },
        (Task::Secmoment, CliMetric::W1) => w1_project_moment(p, &cfg)?.1,
        (Task::Linreg, metric) => {
            if !data.has_response {
                return unsupported("linreg needs a y column");
            }
            match metric {
                CliMetric::Tv => robust_linreg_tv(p, &cfg)?,
                CliMetric::W1 => robust_linreg_w1(p, &cfg)?,
            }
        }
        (Task::Mean | Task::Mean1d, CliMetric::W1) => {
            return unsupported("mean estimation is provided under --metric tv")
        }
        (Task::Secmoment, CliMetric::Tv) => {
            return unsupported("second-moment estimation is provided under --metric w1")
        }
    };
    if let (Some(path), Task::Linreg) = (&a.reference, a.task) {
        let reference = load(path)?;
        let theta = report.estimate.as_vector().expect("coefficients");
        report.excess_loss = Some(excess_loss(&reference.dist, theta)?);
    }
    print_json(&report)
}

fn verify(a: VerifyArgs) -> Result<bool> {
    let suites: Vec<Suite> = match a.suite {
        Some(s) => vec![s],
        None => Suite::ALL.to_vec(),
    };
    let mut ok = true;
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    w.write_record(["suite", "trial", "message", "instance"])?;
    for s in suites {
        let trials = a.trials.unwrap_or(s.default_trials());
        let r = run_suite(s, trials, RngSeed(a.seed))?;
        eprintln!(
            "{}: {} checks, {} failures",
            s,
            r.checks,
            r.failures.len()
        );
        ok &= r.passed();
        for f in &r.failures {
            w.write_record([
                s.name(),
                &f.trial.to_string(),
                &f.message,
                &f.instances.join("\n"),
            ])?;
        }
    }
    w.flush()?;
    Ok(ok)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let spec = SweepSpec::from_json(&std::fs::read_to_string(&a.spec)?)?;
    let out = a
        .out
        .or_else(|| spec.output.clone())
        .ok_or_else(|| Error::InvalidArgument("no output path (--out or spec.output)".into()))?;
    let result = run_sweep(&spec)?;
    result.write_csv(BufWriter::new(File::create(&out)?))?;
    if a.fit {
        print_json(&fit_slope(&result)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Distance(a) => distance(a).map(|_| true),
        Cmd::Resilience(a) => resilience(a).map(|_| true),
        Cmd::Corrupt(a) => corrupt(a).map(|_| true),
        Cmd::Estimate(a) => estimate(a).map(|_| true),
        Cmd::VerifyLemmas(a) => verify(a),
        Cmd::Sweep(a) => sweep(a).map(|_| true),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

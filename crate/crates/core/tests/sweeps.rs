use mdrobust::adversaries::{Metric, Model, Strategy};
use mdrobust::estimators::EstimatorConfig;
use mdrobust::harness::{run_sweep, Corruption, EstimatorKind, Generator, SweepSpec};
use mdrobust::RngSeed;

fn spec(estimator: EstimatorKind, grid: Vec<f64>) -> SweepSpec {
    SweepSpec {
        generator: Generator::Gaussian {
            mean: None,
            cov: None,
        },
        d: 4,
        n: 2000,
        eps_grid: grid,
        trials: 5,
        corruption: Corruption::Plan {
            metric: Metric::Tv,
            model: Model::Adaptive,
            strategies: vec![
                Strategy::ShiftCluster {
                    direction: None,
                    magnitude: 0.5,
                    inv_sqrt_eps: true,
                },
                Strategy::TailMimic { direction: None },
            ],
        },
        estimator,
        config: EstimatorConfig {
            directions: 32,
            ..EstimatorConfig::default()
        },
        sigma: None,
        holdout: 1000,
        output: None,
        record_runtime: false,
        seed: RngSeed(5),
    }
}

#[test]
fn identical_specs_give_identical_bytes() {
    let s = spec(EstimatorKind::Filter, vec![0.05, 0.1]);
    let a = run_sweep(&s).unwrap().to_csv_string().unwrap();
    let b = run_sweep(&s).unwrap().to_csv_string().unwrap();
    assert_eq!(a, b);
}

#[test]
fn errors_grow_with_eps() {
    for est in [EstimatorKind::Filter, EstimatorKind::Mean1d, EstimatorKind::PlainMean] {
        let mut s = spec(est, vec![0.02, 0.05, 0.1, 0.2]);
        if est == EstimatorKind::Mean1d {
            s.d = 1;
        }
        let m: Vec<f64> = run_sweep(&s)
            .unwrap()
            .cells
            .iter()
            .map(|c| c.median_error)
            .collect();
        let inversions = m.windows(2).filter(|w| w[1] < w[0]).count();
        let worst = m
            .windows(2)
            .map(|w| (w[0] - w[1]) / w[0])
            .fold(0.0_f64, f64::max);
        assert!(inversions <= 1 && worst <= 0.1, "{est:?}: {m:?}");
    }
}

#[test]
fn robust_estimators_cost_little_on_clean_data() {
    let plain = run_sweep(&spec(EstimatorKind::PlainMean, vec![0.0]))
        .unwrap()
        .cells[0]
        .median_error;
    for est in [
        EstimatorKind::Filter,
        EstimatorKind::FilterKth,
        EstimatorKind::MeanHighd,
    ] {
        let mut s = spec(est, vec![0.0]);
        s.config.k = 4.0;
        let e = run_sweep(&s).unwrap().cells[0].median_error;
        assert!(e <= 3.0 * plain, "{est:?}: {e} vs plain {plain}");
    }
}

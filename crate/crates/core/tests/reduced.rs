mod common;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use slowfast::dynamics::{euler_maruyama_step, SlowState};
use slowfast::harness::{calibrate, simulate_full, ExperimentConfig, FullRunOptions};
use slowfast::reduced::{simulate_reduced, ReducedModel, SimulationOptions};
use slowfast::{Integrator, ModelKind};

fn variance(data: &Array2<f64>) -> f64 {
    let n = data.len() as f64;
    let m = data.sum() / n;
    data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

#[test]
fn euler_maruyama_follows_the_variance_law() {
    let (paths, steps, dt) = (10_000, 10, 0.1);
    let sigma = Array2::from_diag(&ndarray::arr1(&[0.5, 2.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sums = [0.0f64; 2];
    for _ in 0..paths {
        let mut x = vec![0.0, 0.0];
        for _ in 0..steps {
            let z: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            x = euler_maruyama_step(|s: &[f64]| vec![0.0; s.len()], &sigma, &x, dt, &z).unwrap();
        }
        sums[0] += x[0] * x[0];
        sums[1] += x[1] * x[1];
    }
    let t = steps as f64 * dt;
    for (k, s) in [0.5f64, 2.0].iter().enumerate() {
        let var = sums[k] / paths as f64;
        let want = s * s * t;
        assert!((var - want).abs() < 0.05 * want, "{var} vs {want}");
    }
}

#[test]
fn vanishing_noise_converges_to_deterministic() {
    let p = common::params(0.3, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = Array2::from_shape_fn((80, 80), |_| 0.01 * rng.sample::<f64, _>(StandardNormal));
    let a = common::artifact(p, vec![0.0; 20], vec![0.1; 80], r, Array2::eye(20));
    let x0 = SlowState((0..20).map(|i| 0.3 * (i as f64).cos()).collect());
    let opts = SimulationOptions { t_total: 2.0, spinup: 0.0, dt: 0.005, stride: 10, seed: 1, integrator: Some(Integrator::EulerMaruyama) };
    let det = simulate_reduced(&ReducedModel::new(ModelKind::Deterministic, &a).unwrap(), &x0, &opts).unwrap();
    let mut last = f64::INFINITY;
    for alpha in [1e-1, 1e-3, 1e-5] {
        let mut m = ReducedModel::new(ModelKind::Stochastic, &a).unwrap();
        m.diffusion *= alpha;
        let s = simulate_reduced(&m, &x0, &opts).unwrap();
        let gap = (&s.data - &det.data).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        assert!(gap < last * 0.1, "alpha {alpha}: gap {gap} after {last}");
        last = gap;
    }
}

#[test]
fn noise_raises_variance_in_the_weakly_mixing_regime() {
    let mut cfg = ExperimentConfig::default().with_regime(0.35, 0.1);
    cfg.climatology.slow = Some(common::SLOW);
    cfg.climatology.fast = Some(common::FAST);
    let p = common::params(0.35, 0.1);
    let full = simulate_full(&p, &FullRunOptions { t_avg: 2000.0, spinup: 100.0, dt: 0.005, sample_every: 10, seed: 1 }).unwrap();
    let x_star = SlowState(full.component_means());
    let a = calibrate(&cfg, &p, &x_star, "test").unwrap();
    let opts = SimulationOptions { t_total: 10_100.0, spinup: 100.0, dt: 0.005, stride: 10, seed: 2, integrator: None };
    let var = |kind| variance(&simulate_reduced(&ReducedModel::new(kind, &a).unwrap(), &x_star, &opts).unwrap().data);
    let (s, d) = (var(ModelKind::Stochastic), var(ModelKind::Deterministic));
    assert!(s > d, "stochastic {s} vs deterministic {d}");
}

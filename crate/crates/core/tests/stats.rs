use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use slowfast::stats::{autocorrelation, cross_correlation, density, energy_autocorrelation, relative_error, CorrelationCurve};
use slowfast::TimeSeries;

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn uniform_samples_give_flat_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>()).collect();
    let d = density(&samples, 20).unwrap();
    for p in &d.pdf {
        assert!((p - 1.0).abs() < 0.05, "pdf {p}");
    }
}

#[test]
fn white_noise_autocorrelation_is_within_noise_band() {
    let (t, d) = (25_000, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = TimeSeries::new(Array2::from_shape_vec((t, d), normals(&mut rng, t * d)).unwrap(), 0.1);
    let c = autocorrelation(&s, 10.0).unwrap();
    let band = 3.0 / (t as f64).sqrt();
    for (lag, v) in c.lags.iter().zip(&c.values).skip(1) {
        assert!(v.abs() < band, "lag {lag}: {v}");
    }
}

#[test]
fn sine_autocorrelation_is_cosine() {
    let (n, d, dt) = (100_000, 8, 0.01);
    let data = Array2::from_shape_fn((n, d), |(k, i)| (k as f64 * dt + i as f64 * 0.7).sin());
    let c = autocorrelation(&TimeSeries::new(data, dt), 10.0).unwrap();
    for (s, v) in c.lags.iter().zip(&c.values) {
        assert!((v - s.cos()).abs() < 1e-2, "lag {s}: {v} vs {}", s.cos());
    }
}

#[test]
fn cross_correlation_of_identical_components_equals_autocorrelation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let col = normals(&mut rng, 2000);
    let data = Array2::from_shape_fn((2000, 5), |(k, _)| col[k]);
    let s = TimeSeries::new(data, 0.05);
    assert_eq!(cross_correlation(&s, 5.0).unwrap(), autocorrelation(&s, 5.0).unwrap());
}

#[test]
fn gaussian_process_energy_correlation_is_one() {
    let (n, d, phi) = (200_000, 4, 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scale = (1.0f64 - phi * phi).sqrt();
    let mut data = Array2::zeros((n, d));
    for i in 0..d {
        let mut x: f64 = rng.sample(StandardNormal);
        for k in 0..n {
            data[[k, i]] = x;
            x = phi * x + scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let k = energy_autocorrelation(&TimeSeries::new(data, 0.1), 5.0).unwrap();
    for (s, v) in k.lags.iter().zip(&k.values) {
        assert!((v - 1.0).abs() < 0.05, "lag {s}: {v}");
    }
}

#[test]
fn shifted_cosine_error_matches_closed_form() {
    let n = 100_001;
    let lags: Vec<f64> = (0..n).map(|k| 10.0 * k as f64 / (n - 1) as f64).collect();
    let r = CorrelationCurve { lags: lags.clone(), values: lags.iter().map(|s| s.cos()).collect() };
    let t = CorrelationCurve { lags: lags.clone(), values: lags.iter().map(|s| s.cos() + 0.1).collect() };
    let norm_cos = (5.0 + 20.0f64.sin() / 4.0).sqrt();
    let want = 0.1 * 10.0f64.sqrt() / norm_cos;
    let got: f64 = relative_error(&t, &r).unwrap();
    assert!((got - want).abs() < 1e-8, "{got} vs {want}");
}

#[test]
fn doubled_curve_has_unit_error() {
    let lags: Vec<f64> = (0..201).map(|k| 0.05 * k as f64).collect();
    let r = CorrelationCurve { lags: lags.clone(), values: lags.iter().map(|s| (-s).exp()).collect() };
    let t = CorrelationCurve { lags, values: r.values.iter().map(|v| 2.0 * v).collect() };
    assert_eq!(relative_error(&t, &r).unwrap(), 1.0);
}

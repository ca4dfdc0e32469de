//! Constants of the reduced models.
//!
//! Pipeline: run the limiting fast system at a fixed slow state `x*`, estimate
//! its mean `<z>` and lagged covariances `C(tau)`, integrate them to `Cbar`,
//! and form
//!
//! ```text
//! R     = Cbar C(0)^{-1}
//! S     = L_y (Cbar + Cbar^T) L_y^T
//! sigma = X Λ^{1/2} X^T   where S = X Λ X^T
//! ```
//!
//! Everything is expressed in the time units of the limiting fast system
//! without the `1/eps` factor. A reduced model of the full system at time-scale
//! separation `eps` uses `R` as is (the `1/eps` of `L_x` cancels the `eps` of the
//! fast correlation time) and noise amplitude `sqrt(eps) sigma`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{limiting_fast_rhs_into, unrescaled_l96_rhs_into, CouplingOperators, LorenzParams, Rk4, SlowState};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, psd_sqrt, symmetric_condition, Lu};
use crate::scalar::Real;
use crate::series::TimeSeries;

/// Relative eigenvalue tolerance below which `S` is treated as indefinite.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Pooled (mean, standard deviation) of an uncoupled, unrescaled Lorenz 96 model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Climatology<T> {
    pub mean: T,
    pub std: T,
}

pub(crate) fn step_count<T: Real>(span: T, dt: T, what: &str) -> Result<usize> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
    }
    if !(span >= T::zero()) || !span.is_finite() {
        return Err(Error::InvalidParameter(format!("{what} = {span} must be non-negative")));
    }
    let n = (span / dt).round();
    n.to_usize().ok_or_else(|| Error::InvalidParameter(format!("{what} / dt is too large")))
}

/// Long-run pooled mean and standard deviation of `ds/dt = s[i-1](s[i+1]-s[i-2]) - s[i] + F`.
///
/// Starts from `F` plus a small seeded perturbation, discards `spinup` time
/// units, then averages over all components and every step of `t_avg`.
pub fn calibrate_climatology<T: Real>(forcing: T, n: usize, t_avg: T, dt: T, spinup: T, seed: u64) -> Result<Climatology<T>> {
    let spin_steps = step_count(spinup, dt, "spinup")?;
    let avg_steps = step_count(t_avg, dt, "t_avg")?;
    if avg_steps == 0 {
        return Err(Error::InvalidParameter("t_avg must cover at least one step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state: Vec<T> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            forcing + T::lit(0.01 * z)
        })
        .collect();
    let mut rhs = |s: &[T], out: &mut [T]| unrescaled_l96_rhs_into(s, forcing, out);
    let mut rk = Rk4::new(n);
    for _ in 0..spin_steps {
        rk.step(&mut rhs, &mut state, dt)?;
    }
    // Chan's pairwise update: merge one step's components at a time.
    let nb = T::from_count(n);
    let (mut count, mut mean, mut m2) = (T::zero(), T::zero(), T::zero());
    for _ in 0..avg_steps {
        rk.step(&mut rhs, &mut state, dt)?;
        let bmean = state.iter().fold(T::zero(), |a, &v| a + v) / nb;
        let bm2 = state.iter().fold(T::zero(), |a, &v| a + (v - bmean) * (v - bmean));
        let total = count + nb;
        let delta = bmean - mean;
        mean += delta * nb / total;
        m2 += bm2 + delta * delta * count * nb / total;
        count = total;
    }
    let std = (m2 / count).sqrt();
    if !(std > T::lit(1e-8) * (T::one() + mean.abs())) {
        return Err(Error::DegenerateClimatology { mean: mean.as_f64(), std: std.as_f64() });
    }
    Ok(Climatology { mean, std })
}

/// Integration settings for a limiting fast system run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FastRunOptions<T> {
    /// Total integrated time, spinup included.
    pub t_total: T,
    pub spinup: T,
    pub dt: T,
    /// Keep every `stride`-th step.
    pub stride: usize,
    pub seed: u64,
    /// The vector field is multiplied by this factor (1 = no rescaling).
    pub time_scale: T,
}

/// Trajectory of the limiting fast system with the slow state frozen at `x_param`.
///
/// Returns `floor((t_total - spinup) / (dt stride)) + 1` samples spaced `dt * stride`.
pub fn run_limiting_fast<T: Real>(x_param: &SlowState<T>, p: &LorenzParams<T>, opts: &FastRunOptions<T>) -> Result<TimeSeries<T>> {
    p.validate()?;
    if opts.stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    if !(opts.time_scale > T::zero()) {
        return Err(Error::InvalidParameter("time_scale must be positive".into()));
    }
    let total = step_count(opts.t_total, opts.dt, "t_total")?;
    let spin = step_count(opts.spinup, opts.dt, "spinup")?;
    if total < spin {
        return Err(Error::InvalidParameter("t_total must exceed spinup".into()));
    }
    let n_samples = (total - spin) / opts.stride + 1;
    let ny = p.n_y();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut z: Vec<T> = (0..ny)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::lit(v)
        })
        .collect();
    let x = x_param.as_slice();
    let kappa = opts.time_scale;
    let mut rhs = |s: &[T], out: &mut [T]| {
        limiting_fast_rhs_into(s, x, p, out)?;
        if kappa != T::one() {
            out.iter_mut().for_each(|v| *v *= kappa);
        }
        Ok(())
    };
    let mut rk = Rk4::new(ny);
    for _ in 0..spin {
        rk.step(&mut rhs, &mut z, opts.dt)?;
    }
    let mut data = Array2::<T>::zeros((n_samples, ny));
    data.row_mut(0).iter_mut().zip(&z).for_each(|(d, &v)| *d = v);
    for row in 1..n_samples {
        for _ in 0..opts.stride {
            rk.step(&mut rhs, &mut z, opts.dt)?;
        }
        data.row_mut(row).iter_mut().zip(&z).for_each(|(d, &v)| *d = v);
    }
    Ok(TimeSeries::new(data, opts.dt * T::from_count(opts.stride)))
}

/// Lagged covariances `C(m dt_lag)` of a stationary vector series.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCovariance<T> {
    pub dt_lag: T,
    /// Entry `m` is `C(m dt_lag) = <(z(t+tau) - <z>)(z(t) - <z>)^T>_t`.
    pub matrices: Vec<Array2<T>>,
    /// Time mean `<z>`.
    pub mean: Array1<T>,
    pub n_samples: usize,
}

impl<T: Real> LagCovariance<T> {
    pub fn c0(&self) -> &Array2<T> {
        &self.matrices[0]
    }

    pub fn max_lag_index(&self) -> usize {
        self.matrices.len() - 1
    }
}

/// Estimates `C(tau)` on the grid `{0, dt_sample, 2 dt_sample, ...}` up to `max_lag`.
///
/// Each lag averages over all `N - k` available pairs. `C(0)` is the direct
/// sample covariance (normalized by `N`); positive lags use blocked FFT
/// cross-correlation.
pub fn lagged_covariance<T: Real>(series: ArrayView2<'_, T>, dt_sample: T, max_lag: T) -> Result<LagCovariance<T>> {
    if !(dt_sample > T::zero()) || !(max_lag >= T::zero()) {
        return Err(Error::InvalidParameter("dt_sample must be positive and max_lag non-negative".into()));
    }
    let k_max = (max_lag / dt_sample + T::lit(1e-9)).floor().to_usize().unwrap_or(usize::MAX);
    let (n, d) = series.dim();
    if n < 2 || n < 2 * k_max || d == 0 {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot resolve {k_max} lags (need at least {})",
            (2 * k_max).max(2)
        )));
    }
    let nt = T::from_count(n);
    let mean = series.sum_axis(Axis(0)) / nt;
    let centered = &series - &mean.view().insert_axis(Axis(0));
    let c0 = centered.t().dot(&centered) / nt;
    let mut matrices = Vec::with_capacity(k_max + 1);
    matrices.push(c0);
    if k_max > 0 {
        let sums = lagged_product_sums(centered.view(), k_max);
        for (k, m) in sums.into_iter().enumerate() {
            let lag = k + 1;
            matrices.push(m / T::from_count(n - lag));
        }
    }
    Ok(LagCovariance { dt_lag: dt_sample, matrices, mean, n_samples: n })
}

/// `sum_t z_a(t+k) z_b(t)` for `k = 1..=k_max`, accumulated block by block with
/// zero-padded FFTs long enough that no circular wrap-around reaches lags `<= k_max`.
fn lagged_product_sums<T: Real>(z: ArrayView2<'_, T>, k_max: usize) -> Vec<Array2<T>> {
    let (n, d) = z.dim();
    let fft_len = (4 * (k_max + 1)).next_power_of_two().max(256);
    let block = fft_len - k_max;
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);
    let zero = Complex::new(T::zero(), T::zero());

    let cols: Vec<Vec<T>> = (0..d).map(|a| z.column(a).to_vec()).collect();
    let mut acc = vec![T::zero(); k_max * d * d];
    let mut ext = vec![zero; d * fft_len];
    let mut blk = vec![zero; d * fft_len];
    let mut buf = vec![zero; fft_len];

    let mut start = 0;
    while start < n {
        let blk_end = (start + block).min(n);
        let ext_end = (start + block + k_max).min(n);
        for a in 0..d {
            let e = &mut ext[a * fft_len..(a + 1) * fft_len];
            let b = &mut blk[a * fft_len..(a + 1) * fft_len];
            e.fill(zero);
            b.fill(zero);
            for (t, &v) in cols[a][start..ext_end].iter().enumerate() {
                e[t] = Complex::new(v, T::zero());
            }
            for (t, &v) in cols[a][start..blk_end].iter().enumerate() {
                b[t] = Complex::new(v, T::zero());
            }
            fwd.process(e);
            fwd.process(b);
        }
        for a in 0..d {
            let ea = &ext[a * fft_len..(a + 1) * fft_len];
            let mut b = 0;
            while b < d {
                let b1 = &blk[b * fft_len..(b + 1) * fft_len];
                if b + 1 < d {
                    // Two real correlations in one inverse transform: r1 + i r2.
                    let b2 = &blk[(b + 1) * fft_len..(b + 2) * fft_len];
                    for i in 0..fft_len {
                        let p1 = ea[i] * b1[i].conj();
                        let p2 = ea[i] * b2[i].conj();
                        buf[i] = Complex::new(p1.re - p2.im, p1.im + p2.re);
                    }
                } else {
                    for i in 0..fft_len {
                        buf[i] = ea[i] * b1[i].conj();
                    }
                }
                inv.process(&mut buf);
                for k in 1..=k_max {
                    let base = ((k - 1) * d + a) * d;
                    acc[base + b] += buf[k].re;
                    if b + 1 < d {
                        acc[base + b + 1] += buf[k].im;
                    }
                }
                b += 2;
            }
        }
        start += block;
    }
    let scale = T::one() / T::from_count(fft_len);
    acc.chunks_exact(d * d)
        .map(|c| Array2::from_shape_vec((d, d), c.iter().map(|&v| v * scale).collect()).expect("d x d"))
        .collect()
}

/// Where to stop integrating `C(tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationRule<T> {
    /// `||C(tau)||_F` must stay below `tol_decay ||C(0)||_F` ...
    pub tol_decay: T,
    /// ... for this long (time units) before the integral is cut.
    pub sustain: T,
}

impl<T: Real> Default for TruncationRule<T> {
    fn default() -> Self {
        Self { tol_decay: T::lit(1e-3), sustain: T::one() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedCovariance<T> {
    pub cbar: Array2<T>,
    pub tau_trunc: T,
    /// False if the decay criterion never held and the whole grid was used.
    pub converged: bool,
}

/// Trapezoidal `Cbar = int_0^tau_trunc C(tau) dtau`.
///
/// `tau_trunc` is the first lag from which `||C||_F < tol_decay ||C(0)||_F`
/// holds for `sustain` time units; if that never happens within the grid the
/// full grid is used and a warning is logged.
pub fn integrate_covariance<T: Real>(lc: &LagCovariance<T>, rule: &TruncationRule<T>) -> Result<IntegratedCovariance<T>> {
    let mats = &lc.matrices;
    if mats.is_empty() {
        return Err(Error::InsufficientData("empty lag covariance".into()));
    }
    let norms: Vec<T> = mats.iter().map(|m| frobenius_norm(m.view())).collect();
    let threshold = rule.tol_decay * norms[0];
    let window = (rule.sustain / lc.dt_lag - T::lit(1e-9)).ceil().to_usize().unwrap_or(usize::MAX);
    let last = mats.len() - 1;

    let mut cut = None;
    let mut run_start = 0;
    let mut run_len = 0;
    for (k, &nk) in norms.iter().enumerate() {
        if nk < threshold {
            if run_len == 0 {
                run_start = k;
            }
            run_len += 1;
            if run_len > window {
                cut = Some(run_start);
                break;
            }
        } else {
            run_len = 0;
        }
    }
    let converged = cut.is_some();
    let end = cut.unwrap_or(last);
    if !converged && norms[0] > T::zero() {
        log::warn!(
            "lag covariance did not decay below {:e} of C(0) within {} time units; integrating over the full grid",
            rule.tol_decay.as_f64(),
            (lc.dt_lag * T::from_count(last)).as_f64()
        );
    }

    let half = T::lit(0.5);
    let mut cbar = Array2::<T>::zeros(mats[0].raw_dim());
    if end > 0 {
        cbar.scaled_add(half, &mats[0]);
        for m in &mats[1..end] {
            cbar += m;
        }
        cbar.scaled_add(half, &mats[end]);
        cbar *= lc.dt_lag;
    }
    Ok(IntegratedCovariance { cbar, tau_trunc: lc.dt_lag * T::from_count(end), converged })
}

/// Linear response matrix and the condition estimate of `C(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Response<T> {
    pub r: Array2<T>,
    pub condition: T,
}

/// `R = Cbar C(0)^{-1}` through an LU solve of `C(0)^T R^T = Cbar^T`.
pub fn response_matrix<T: Real>(cbar: &Array2<T>, c0: &Array2<T>) -> Result<Response<T>> {
    let n = c0.nrows();
    if c0.dim() != (n, n) || cbar.dim() != (n, n) {
        return Err(Error::InvalidDimension(format!("cbar {:?} and c0 {:?} must be equal square", cbar.dim(), c0.dim())));
    }
    let condition = symmetric_condition(c0.view())?;
    let limit = T::one() / (T::lit(100.0) * T::epsilon());
    if !(condition < limit) {
        return Err(Error::SingularCovariance { condition: condition.as_f64() });
    }
    let lu = Lu::factor(c0.t())?;
    let rt = lu.solve(cbar.t())?;
    Ok(Response { r: rt.reversed_axes(), condition })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diffusion<T> {
    pub s: Array2<T>,
    pub sigma: Array2<T>,
    pub clamped: usize,
}

/// `sigma` as the symmetric PSD square root of a given `S`.
pub fn diffusion_from_s<T: Real>(s: &Array2<T>) -> Result<Diffusion<T>> {
    let root = psd_sqrt(s.view(), T::lit(PSD_TOLERANCE))?;
    Ok(Diffusion { s: s.clone(), sigma: root.root, clamped: root.clamped })
}

/// `S = L_y (Cbar + Cbar^T) L_y^T` and its square root `sigma`.
pub fn diffusion_matrices<T: Real>(cbar: &Array2<T>, ops: &CouplingOperators<T>) -> Result<Diffusion<T>> {
    let sym = cbar + &cbar.t();
    let s = ops.ly_m_lyt(&sym)?;
    let s = (&s + &s.t()) * T::lit(0.5);
    diffusion_from_s(&s)
}

/// Settings for [`build_artifact`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions<T> {
    pub t_total: T,
    pub spinup: T,
    pub dt: T,
    pub stride: usize,
    pub seed: u64,
    /// Longest lag, in time units of the unscaled limiting system.
    pub max_lag: T,
    pub truncation: TruncationRule<T>,
    /// Speed-up applied to the limiting system; results are mapped back to unscaled time.
    pub time_scale: T,
}

impl<T: Real> Default for CalibrationOptions<T> {
    fn default() -> Self {
        Self {
            t_total: T::lit(10_000.0),
            spinup: T::lit(100.0),
            dt: T::lit(0.001),
            stride: 50,
            seed: 0,
            max_lag: T::lit(20.0),
            truncation: TruncationRule::default(),
            time_scale: T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata<T> {
    pub params: LorenzParams<T>,
    pub options: CalibrationOptions<T>,
    pub n_samples: usize,
    pub dt_sample: T,
    /// Truncation lag of the covariance integral, unscaled time units.
    pub tau_trunc: T,
    pub truncation_converged: bool,
    pub clamped_eigenvalues: usize,
    pub condition_c0: T,
    /// How `x_star` was obtained.
    pub x_star_source: String,
}

/// Everything needed to assemble any of the reduced models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct CalibrationArtifact<T> {
    pub x_star: Vec<T>,
    pub z_mean: Vec<T>,
    #[serde(with = "crate::serde_matrix")]
    pub c0: Array2<T>,
    #[serde(with = "crate::serde_matrix")]
    pub cbar: Array2<T>,
    #[serde(with = "crate::serde_matrix")]
    pub r_mat: Array2<T>,
    #[serde(with = "crate::serde_matrix")]
    pub s_mat: Array2<T>,
    #[serde(with = "crate::serde_matrix")]
    pub sigma: Array2<T>,
    pub metadata: ArtifactMetadata<T>,
}

/// Runs the limiting fast system at `x_star` and derives every reduced-model constant.
pub fn build_artifact<T: Real>(p: &LorenzParams<T>, x_star: &SlowState<T>, opts: &CalibrationOptions<T>) -> Result<CalibrationArtifact<T>> {
    p.validate()?;
    if x_star.0.len() != p.n_x {
        return Err(Error::InvalidDimension(format!("x_star has length {}, expected {}", x_star.0.len(), p.n_x)));
    }
    let kappa = opts.time_scale;
    let run = FastRunOptions {
        t_total: opts.t_total / kappa,
        spinup: opts.spinup / kappa,
        dt: opts.dt / kappa,
        stride: opts.stride,
        seed: opts.seed,
        time_scale: kappa,
    };
    let series = run_limiting_fast(x_star, p, &run)?;
    let lc = lagged_covariance(series.view(), series.dt, opts.max_lag / kappa)?;
    drop(series);
    let rule = TruncationRule { tol_decay: opts.truncation.tol_decay, sustain: opts.truncation.sustain / kappa };
    let integrated = integrate_covariance(&lc, &rule)?;
    let cbar = integrated.cbar * kappa;
    let c0 = lc.c0().clone();
    let response = response_matrix(&cbar, &c0)?;
    let diffusion = diffusion_matrices(&cbar, &p.coupling())?;
    Ok(CalibrationArtifact {
        x_star: x_star.0.clone(),
        z_mean: lc.mean.to_vec(),
        c0,
        cbar,
        r_mat: response.r,
        s_mat: diffusion.s,
        sigma: diffusion.sigma,
        metadata: ArtifactMetadata {
            params: *p,
            options: *opts,
            n_samples: lc.n_samples,
            dt_sample: lc.dt_lag * kappa,
            tau_trunc: integrated.tau_trunc * kappa,
            truncation_converged: integrated.converged,
            clamped_eigenvalues: diffusion.clamped,
            condition_c0: response.condition,
            x_star_source: "user".into(),
        },
    })
}

impl<T: Real> CalibrationArtifact<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        a.check_shapes()?;
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn params(&self) -> &LorenzParams<T> {
        &self.metadata.params
    }

    pub fn check_shapes(&self) -> Result<()> {
        let p = &self.metadata.params;
        let (nx, ny) = (p.n_x, p.n_y());
        let checks = [
            ("x_star", (self.x_star.len(), 1), (nx, 1)),
            ("z_mean", (self.z_mean.len(), 1), (ny, 1)),
            ("c0", self.c0.dim(), (ny, ny)),
            ("cbar", self.cbar.dim(), (ny, ny)),
            ("r_mat", self.r_mat.dim(), (ny, ny)),
            ("s_mat", self.s_mat.dim(), (nx, nx)),
            ("sigma", self.sigma.dim(), (nx, nx)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::InvalidDimension(format!("artifact field {name} has shape {got:?}, expected {want:?}")));
            }
        }
        Ok(())
    }

    /// `||sigma sigma^T - S||_F / (1 + ||S||_F)`.
    pub fn sigma_residual(&self) -> T {
        let rec = self.sigma.dot(&self.sigma.t());
        frobenius_norm((&rec - &self.s_mat).view()) / (T::one() + frobenius_norm(self.s_mat.view()))
    }

    /// `L_y R L_x`, the linear correction of the deterministic reduced drift.
    pub fn correction_matrix(&self) -> Result<Array2<T>> {
        self.metadata.params.coupling().ly_m_lx(&self.r_mat)
    }

    /// `L_y <z>`.
    pub fn mean_forcing(&self) -> Result<Vec<T>> {
        self.metadata.params.coupling().apply_ly(&self.z_mean)
    }
}

//! Zero-order, deterministic and stochastic reduced models for the slow variables.
//!
//! All three share the drift `f(x) + L_y <z>`; the deterministic and
//! stochastic models add the linear response correction `L_y R L_x (x - x*)`,
//! and the stochastic model adds the additive noise `sqrt(eps) sigma dW`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calibration::{step_count, CalibrationArtifact};
use crate::dynamics::{rescaled_slow_into, EulerMaruyama, LorenzParams, Rk4, SlowState};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Stochastic,
    Deterministic,
    ZeroOrder,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Stochastic, ModelKind::Deterministic, ModelKind::ZeroOrder];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Stochastic => "stochastic",
            ModelKind::Deterministic => "deterministic",
            ModelKind::ZeroOrder => "zero_order",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

/// An assembled reduced model; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel<T> {
    pub kind: ModelKind,
    pub params: LorenzParams<T>,
    pub x_star: Vec<T>,
    /// `L_y <z>`.
    pub mean_forcing: Vec<T>,
    /// Dense `L_y R L_x`; absent for the zero-order model.
    pub correction: Option<Array2<T>>,
    /// Noise matrix applied to `dW`: `sqrt(eps) sigma` for the stochastic model, zero otherwise.
    pub diffusion: Array2<T>,
}

impl<T: Real> ReducedModel<T> {
    /// Builds a model using the parameters stored in the artifact.
    pub fn new(kind: ModelKind, artifact: &CalibrationArtifact<T>) -> Result<Self> {
        Self::with_params(kind, artifact, artifact.params())
    }

    /// Builds a model from an artifact and explicit parameters (which must match its dimensions).
    pub fn with_params(kind: ModelKind, artifact: &CalibrationArtifact<T>, params: &LorenzParams<T>) -> Result<Self> {
        params.validate()?;
        artifact.check_shapes()?;
        let ap = artifact.params();
        if ap.n_x != params.n_x || ap.j_per != params.j_per {
            return Err(Error::InvalidDimension(format!(
                "artifact is for n_x={} J={}, model requested n_x={} J={}",
                ap.n_x, ap.j_per, params.n_x, params.j_per
            )));
        }
        let ops = params.coupling();
        let mean_forcing = ops.apply_ly(&artifact.z_mean)?;
        let correction = match kind {
            ModelKind::ZeroOrder => None,
            _ => Some(ops.ly_m_lx(&artifact.r_mat)?),
        };
        let n = params.n_x;
        let diffusion = match kind {
            ModelKind::Stochastic => &artifact.sigma * params.eps.sqrt(),
            _ => Array2::zeros((n, n)),
        };
        Ok(Self { kind, params: *params, x_star: artifact.x_star.clone(), mean_forcing, correction, diffusion })
    }

    pub fn dim(&self) -> usize {
        self.params.n_x
    }

    /// Writes the drift at `x` into `out`.
    pub fn drift_into(&self, x: &[T], out: &mut [T]) -> Result<()> {
        let n = self.dim();
        if x.len() != n || out.len() != n {
            return Err(Error::InvalidDimension(format!("reduced model has {n} variables, got {}", x.len())));
        }
        rescaled_slow_into(x, &self.params, out);
        for (o, &c) in out.iter_mut().zip(&self.mean_forcing) {
            *o += c;
        }
        if let Some(m) = &self.correction {
            for (o, row) in out.iter_mut().zip(m.rows()) {
                let mut acc = T::zero();
                for ((&mij, &xj), &sj) in row.iter().zip(x).zip(&self.x_star) {
                    acc += mij * (xj - sj);
                }
                *o += acc;
            }
        }
        Ok(())
    }
}

/// Drift `f(x) + L_y <z> [+ L_y R L_x (x - x*)]` of a reduced model.
pub fn reduced_drift<T: Real>(x: &SlowState<T>, model: &ReducedModel<T>) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); model.dim()];
    model.drift_into(x.as_slice(), &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Rk4,
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions<T> {
    /// Total integrated time, spinup included.
    pub t_total: T,
    pub spinup: T,
    pub dt: T,
    /// Keep every `stride`-th step after spinup.
    pub stride: usize,
    /// Seed of the noise stream; unused by deterministic integrations.
    pub seed: u64,
    /// Overrides the default (RK4 for deterministic kinds, Euler-Maruyama for stochastic).
    pub integrator: Option<Integrator>,
}

/// Integrates a reduced model from `x0` and returns the post-spinup samples.
///
/// The stochastic model draws one standard-normal `n_x` vector per step from
/// a ChaCha8 stream seeded with `opts.seed`, so equal seeds give bitwise equal
/// trajectories.
pub fn simulate_reduced<T: Real>(model: &ReducedModel<T>, x0: &SlowState<T>, opts: &SimulationOptions<T>) -> Result<TimeSeries<T>> {
    let n = model.dim();
    if x0.0.len() != n {
        return Err(Error::InvalidDimension(format!("initial state has length {}, expected {n}", x0.0.len())));
    }
    if opts.stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    let total = step_count(opts.t_total, opts.dt, "t_total")?;
    let spin = step_count(opts.spinup, opts.dt, "spinup")?;
    if total < spin {
        return Err(Error::InvalidParameter("t_total must exceed spinup".into()));
    }
    let integrator = opts.integrator.unwrap_or(match model.kind {
        ModelKind::Stochastic => Integrator::EulerMaruyama,
        _ => Integrator::Rk4,
    });
    let n_samples = (total - spin) / opts.stride + 1;
    let mut data = Array2::<T>::zeros((n_samples, n));
    let mut x = x0.0.clone();
    let mut drift = |s: &[T], out: &mut [T]| model.drift_into(s, out);

    let mut record = |row: usize, x: &[T]| data.row_mut(row).iter_mut().zip(x).for_each(|(d, &v)| *d = v);
    let sample_due = |step: usize| step >= spin && (step - spin).is_multiple_of(opts.stride);

    match integrator {
        Integrator::Rk4 => {
            let mut rk = Rk4::new(n);
            if sample_due(0) {
                record(0, &x);
            }
            for step in 1..=total {
                rk.step(&mut drift, &mut x, opts.dt)?;
                if sample_due(step) {
                    record((step - spin) / opts.stride, &x);
                }
            }
        }
        Integrator::EulerMaruyama => {
            let mut em = EulerMaruyama::new(n);
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut normals = vec![T::zero(); n];
            if sample_due(0) {
                record(0, &x);
            }
            for step in 1..=total {
                for z in normals.iter_mut() {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    *z = T::lit(v);
                }
                em.step(&mut drift, &model.diffusion, &mut x, opts.dt, &normals)?;
                if sample_due(step) {
                    record((step - spin) / opts.stride, &x);
                }
            }
        }
    }
    Ok(TimeSeries::new(data, opts.dt * T::from_count(opts.stride)))
}

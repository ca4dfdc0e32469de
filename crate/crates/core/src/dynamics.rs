//! Right-hand sides of the rescaled two-scale Lorenz 96 system, its uncoupled
//! pieces and the limiting fast system, plus the fixed-step integrators.
//!
//! Fast variables `y[i][j]` are stored flattened with `j` fastest. The two
//! periodic boundary rules (`y[i][j+J] = y[i+1][j]`, `y[i+N][j] = y[i][j]`)
//! make the fast variables a single ring of length `N * J`, which is how the
//! fast stencil indexes them.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Real};

/// Parameters of the rescaled two-scale model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams<T> {
    /// Number of slow variables.
    pub n_x: usize,
    /// Fast variables per slow variable.
    pub j_per: usize,
    /// Time-scale separation.
    pub eps: T,
    pub f_x: T,
    pub f_y: T,
    pub lambda_x: T,
    pub lambda_y: T,
    /// Climatological mean of the uncoupled, unrescaled slow model.
    pub mu_x: T,
    /// Climatological standard deviation of the uncoupled, unrescaled slow model.
    pub sd_x: T,
    pub mu_y: T,
    pub sd_y: T,
}

impl<T: Real> LorenzParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_x < 4 {
            return Err(Error::InvalidParameter(format!("n_x = {} must be at least 4", self.n_x)));
        }
        if self.j_per < 4 {
            return Err(Error::InvalidParameter(format!("j_per = {} must be at least 4", self.j_per)));
        }
        let positive = [("eps", self.eps), ("sd_x", self.sd_x), ("sd_y", self.sd_y)];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        let finite = [
            ("f_x", self.f_x),
            ("f_y", self.f_y),
            ("lambda_x", self.lambda_x),
            ("lambda_y", self.lambda_y),
            ("mu_x", self.mu_x),
            ("mu_y", self.mu_y),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} is not finite")));
            }
        }
        Ok(())
    }

    /// Total number of fast variables.
    pub fn n_y(&self) -> usize {
        self.n_x * self.j_per
    }

    pub fn coupling(&self) -> CouplingOperators<T> {
        CouplingOperators {
            lambda_x: self.lambda_x,
            lambda_y: self.lambda_y,
            n_x: self.n_x,
            j_per: self.j_per,
        }
    }

    fn check_slow(&self, len: usize) -> Result<()> {
        if self.n_x < 4 || self.j_per < 4 {
            return Err(Error::InvalidDimension(format!(
                "stencils need n_x >= 4 and j_per >= 4, got {} and {}",
                self.n_x, self.j_per
            )));
        }
        if len != self.n_x {
            return Err(Error::InvalidDimension(format!("slow state has length {len}, expected {}", self.n_x)));
        }
        Ok(())
    }

    fn check_fast(&self, len: usize) -> Result<()> {
        if len != self.n_y() {
            return Err(Error::InvalidDimension(format!("fast state has length {len}, expected {}", self.n_y())));
        }
        Ok(())
    }
}

/// Slow variables `x_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowState<T>(pub Vec<T>);

/// Fast variables `y_{i,j}` flattened with `j` fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastState<T>(pub Vec<T>);

impl<T> SlowState<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

impl<T> FastState<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

/// The linear coupling maps, applied through their block structure.
///
/// `L_y` (slow <- fast) has entry `-lambda_y / J` on block `(i, (i, .))`;
/// `L_x` (fast <- slow) has entry `lambda_x` on rows `(i, .)`, without the
/// `1/eps` factor of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingOperators<T> {
    pub lambda_x: T,
    pub lambda_y: T,
    pub n_x: usize,
    pub j_per: usize,
}

impl<T: Real> CouplingOperators<T> {
    pub fn n_y(&self) -> usize {
        self.n_x * self.j_per
    }

    /// `L_y y`.
    pub fn apply_ly(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.n_y() {
            return Err(Error::InvalidDimension(format!("L_y expects length {}, got {}", self.n_y(), y.len())));
        }
        let scale = -self.lambda_y / T::from_count(self.j_per);
        Ok(y.chunks_exact(self.j_per)
            .map(|block| scale * block.iter().fold(T::zero(), |acc, &v| acc + v))
            .collect())
    }

    /// `L_x x`.
    pub fn apply_lx(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.n_x {
            return Err(Error::InvalidDimension(format!("L_x expects length {}, got {}", self.n_x, x.len())));
        }
        Ok(x.iter()
            .flat_map(|&xi| std::iter::repeat_n(self.lambda_x * xi, self.j_per))
            .collect())
    }

    /// Sums an `N_y x N_y` matrix over its `J x J` blocks.
    fn block_sums(&self, m: &Array2<T>) -> Result<Array2<T>> {
        let ny = self.n_y();
        if m.dim() != (ny, ny) {
            return Err(Error::InvalidDimension(format!("expected {ny}x{ny} matrix, got {:?}", m.dim())));
        }
        let j = self.j_per;
        let mut out = Array2::zeros((self.n_x, self.n_x));
        for ((r, c), &v) in m.indexed_iter() {
            out[[r / j, c / j]] += v;
        }
        Ok(out)
    }

    /// `L_y M L_y^T` as an `n_x x n_x` matrix.
    pub fn ly_m_lyt(&self, m: &Array2<T>) -> Result<Array2<T>> {
        let s = self.lambda_y / T::from_count(self.j_per);
        Ok(self.block_sums(m)? * (s * s))
    }

    /// `L_y M L_x` as an `n_x x n_x` matrix.
    pub fn ly_m_lx(&self, m: &Array2<T>) -> Result<Array2<T>> {
        let s = -self.lambda_y * self.lambda_x / T::from_count(self.j_per);
        Ok(self.block_sums(m)? * s)
    }
}

#[inline]
fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Classic Lorenz 96 tendency `s[i-1](s[i+1] - s[i-2]) - s[i] + F` written into `out`.
pub fn unrescaled_l96_rhs_into<T: Real>(state: &[T], forcing: T, out: &mut [T]) -> Result<()> {
    let n = state.len();
    if n < 4 {
        return Err(Error::InvalidDimension(format!("Lorenz 96 needs at least 4 variables, got {n}")));
    }
    if out.len() != n {
        return Err(Error::InvalidDimension("output length mismatch".into()));
    }
    let s = state;
    let edge = |i: usize| {
        let ii = i as isize;
        let (m2, m1, p1) = (wrap(ii - 2, n), wrap(ii - 1, n), wrap(ii + 1, n));
        s[m1] * (s[p1] - s[m2]) - s[i] + forcing
    };
    out[0] = edge(0);
    out[1] = edge(1);
    for i in 2..n - 1 {
        out[i] = s[i - 1] * (s[i + 1] - s[i - 2]) - s[i] + forcing;
    }
    out[n - 1] = edge(n - 1);
    Ok(())
}

/// Classic Lorenz 96 tendency with periodic indices.
pub fn unrescaled_l96_rhs<T: Real>(state: &[T], forcing: T) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); state.len()];
    unrescaled_l96_rhs_into(state, forcing, &mut out)?;
    Ok(out)
}

/// Rescaled uncoupled slow tendency
/// `x[i-1](x[i+1]-x[i-2]) + (mu (x[i+1]-x[i-2]) - x[i]) / sd + (F - mu) / sd^2`.
pub(crate) fn rescaled_slow_into<T: Real>(x: &[T], p: &LorenzParams<T>, out: &mut [T]) {
    let n = x.len();
    let inv = T::one() / p.sd_x;
    let mu = p.mu_x;
    let c = (p.f_x - p.mu_x) * inv * inv;
    let term = |m2: T, m1: T, xi: T, p1: T| {
        let d = p1 - m2;
        m1 * d + inv * (mu * d - xi) + c
    };
    let edge = |i: usize| {
        let ii = i as isize;
        term(x[wrap(ii - 2, n)], x[wrap(ii - 1, n)], x[i], x[wrap(ii + 1, n)])
    };
    out[0] = edge(0);
    out[1] = edge(1);
    for i in 2..n - 1 {
        out[i] = term(x[i - 2], x[i - 1], x[i], x[i + 1]);
    }
    out[n - 1] = edge(n - 1);
}

/// Rescaled uncoupled fast bracket with the reversed stencil
/// `y[g+1](y[g-1]-y[g+2]) + (mu (y[g-1]-y[g+2]) - y[g]) / sd + (F - mu) / sd^2`
/// on the global ring index `g`.
fn rescaled_fast_bracket_into<T: Real>(y: &[T], p: &LorenzParams<T>, out: &mut [T]) {
    let m = y.len();
    let inv = T::one() / p.sd_y;
    let mu = p.mu_y;
    let c = (p.f_y - p.mu_y) * inv * inv;
    let term = |m1: T, yg: T, p1: T, p2: T| {
        let d = m1 - p2;
        p1 * d + inv * (mu * d - yg) + c
    };
    let edge = |g: usize| {
        let gg = g as isize;
        term(y[wrap(gg - 1, m)], y[g], y[wrap(gg + 1, m)], y[wrap(gg + 2, m)])
    };
    out[0] = edge(0);
    for g in 1..m - 2 {
        out[g] = term(y[g - 1], y[g], y[g + 1], y[g + 2]);
    }
    out[m - 2] = edge(m - 2);
    out[m - 1] = edge(m - 1);
}

/// Tendencies of the full rescaled two-scale model, written into the output slices.
pub fn two_scale_rhs_into<T: Real>(
    slow: &[T],
    fast: &[T],
    p: &LorenzParams<T>,
    dslow: &mut [T],
    dfast: &mut [T],
) -> Result<()> {
    p.check_slow(slow.len())?;
    p.check_fast(fast.len())?;
    p.check_slow(dslow.len())?;
    p.check_fast(dfast.len())?;
    rescaled_slow_into(slow, p, dslow);
    let j = p.j_per;
    let cy = p.lambda_y / T::from_count(j);
    for (d, block) in dslow.iter_mut().zip(fast.chunks_exact(j)) {
        *d -= cy * block.iter().fold(T::zero(), |acc, &v| acc + v);
    }
    rescaled_fast_bracket_into(fast, p, dfast);
    let inv_eps = T::one() / p.eps;
    let cx = p.lambda_x / p.eps;
    for (block, &xi) in dfast.chunks_exact_mut(j).zip(slow) {
        let forcing = cx * xi;
        for v in block {
            *v = inv_eps * *v + forcing;
        }
    }
    Ok(())
}

/// Tendencies `(dx/dt, dy/dt)` of the full rescaled two-scale model.
pub fn two_scale_rhs<T: Real>(
    slow: &SlowState<T>,
    fast: &FastState<T>,
    p: &LorenzParams<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let mut dx = vec![T::zero(); slow.0.len()];
    let mut dy = vec![T::zero(); fast.0.len()];
    two_scale_rhs_into(&slow.0, &fast.0, p, &mut dx, &mut dy)?;
    Ok((dx, dy))
}

/// Limiting fast system with the slow state frozen: the fast bracket plus
/// `lambda_x x_i`, with no `1/eps` factor.
pub fn limiting_fast_rhs_into<T: Real>(
    fast: &[T],
    x_param: &[T],
    p: &LorenzParams<T>,
    out: &mut [T],
) -> Result<()> {
    p.check_slow(x_param.len())?;
    p.check_fast(fast.len())?;
    p.check_fast(out.len())?;
    rescaled_fast_bracket_into(fast, p, out);
    for (block, &xi) in out.chunks_exact_mut(p.j_per).zip(x_param) {
        let forcing = p.lambda_x * xi;
        for v in block {
            *v += forcing;
        }
    }
    Ok(())
}

pub fn limiting_fast_rhs<T: Real>(
    fast: &FastState<T>,
    x_param: &SlowState<T>,
    p: &LorenzParams<T>,
) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); fast.0.len()];
    limiting_fast_rhs_into(&fast.0, &x_param.0, p, &mut out)?;
    Ok(out)
}

/// Only the coupling terms of [`two_scale_rhs`]:
/// `-(lambda_y/J) sum_j y_ij` and `(lambda_x/eps) x_i`.
pub fn coupling_tendency<T: Real>(
    slow: &SlowState<T>,
    fast: &FastState<T>,
    p: &LorenzParams<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    p.check_slow(slow.0.len())?;
    p.check_fast(fast.0.len())?;
    let ops = p.coupling();
    let dx = ops.apply_ly(&fast.0)?;
    let inv_eps = T::one() / p.eps;
    let dy = ops.apply_lx(&slow.0)?.into_iter().map(|v| v * inv_eps).collect();
    Ok((dx, dy))
}

/// Energy `(lambda_x/2) sum x_i^2 + (eps lambda_y / 2J) sum y_ij^2` preserved by the coupling.
pub fn coupling_energy<T: Real>(slow: &SlowState<T>, fast: &FastState<T>, p: &LorenzParams<T>) -> Result<T> {
    p.check_slow(slow.0.len())?;
    p.check_fast(fast.0.len())?;
    let half = T::lit(0.5);
    let sx = slow.0.iter().fold(T::zero(), |a, &v| a + v * v);
    let sy = fast.0.iter().fold(T::zero(), |a, &v| a + v * v);
    Ok(half * p.lambda_x * sx + half * p.eps * p.lambda_y / T::from_count(p.j_per) * sy)
}

/// Rate of change of [`coupling_energy`] along the tendency `(dslow, dfast)`.
pub fn energy_rate<T: Real>(
    slow: &SlowState<T>,
    fast: &FastState<T>,
    dslow: &[T],
    dfast: &[T],
    p: &LorenzParams<T>,
) -> Result<T> {
    p.check_slow(dslow.len())?;
    p.check_fast(dfast.len())?;
    let gx = slow.0.iter().zip(dslow).fold(T::zero(), |a, (&x, &d)| a + x * d);
    let gy = fast.0.iter().zip(dfast).fold(T::zero(), |a, (&y, &d)| a + y * d);
    Ok(p.lambda_x * gx + p.eps * p.lambda_y / T::from_count(p.j_per) * gy)
}

/// Classical fourth-order Runge-Kutta stepper with reusable stage buffers.
///
/// Counts its steps so that a blow-up can be reported with the step index and
/// elapsed model time.
#[derive(Debug, Clone)]
pub struct Rk4<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
    steps: u64,
    time: f64,
}

impl<T: Real> Rk4<T> {
    pub fn new(dim: usize) -> Self {
        let z = vec![T::zero(); dim];
        Self { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z, steps: 0, time: 0.0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Advances `state` by `dt` in place. `rhs(x, dx)` writes the tendency of `x` into `dx`.
    pub fn step<F>(&mut self, rhs: &mut F, state: &mut [T], dt: T) -> Result<()>
    where
        F: FnMut(&[T], &mut [T]) -> Result<()>,
    {
        let n = state.len();
        if n != self.k1.len() {
            return Err(Error::InvalidDimension(format!("RK4 workspace is {}, state is {n}", self.k1.len())));
        }
        let half = T::lit(0.5) * dt;
        rhs(state, &mut self.k1)?;
        for i in 0..n {
            self.tmp[i] = state[i] + half * self.k1[i];
        }
        rhs(&self.tmp, &mut self.k2)?;
        for i in 0..n {
            self.tmp[i] = state[i] + half * self.k2[i];
        }
        rhs(&self.tmp, &mut self.k3)?;
        for i in 0..n {
            self.tmp[i] = state[i] + dt * self.k3[i];
        }
        rhs(&self.tmp, &mut self.k4)?;
        let sixth = dt / T::lit(6.0);
        let two = T::lit(2.0);
        for i in 0..n {
            state[i] += sixth * (self.k1[i] + two * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
        self.steps += 1;
        self.time += dt.as_f64();
        if !all_finite(state) {
            return Err(Error::NumericalBlowup { step: self.steps, time: self.time });
        }
        Ok(())
    }
}

fn check_dt<T: Real>(dt: T) -> Result<()> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
    }
    Ok(())
}

/// One classical RK4 step of `dx/dt = rhs(x)`.
pub fn rk4_step<T, F>(rhs: F, state: &[T], dt: T) -> Result<Vec<T>>
where
    T: Real,
    F: Fn(&[T]) -> Vec<T>,
{
    check_dt(dt)?;
    let mut x = state.to_vec();
    let mut f = |s: &[T], out: &mut [T]| {
        let v = rhs(s);
        if v.len() != out.len() {
            return Err(Error::InvalidDimension("vector field changed dimension".into()));
        }
        out.copy_from_slice(&v);
        Ok(())
    };
    Rk4::new(x.len()).step(&mut f, &mut x, dt)?;
    Ok(x)
}

/// Euler-Maruyama stepper for `dx = drift(x) dt + sigma dW` with additive noise.
#[derive(Debug, Clone)]
pub struct EulerMaruyama<T> {
    drift: Vec<T>,
    steps: u64,
    time: f64,
}

impl<T: Real> EulerMaruyama<T> {
    pub fn new(dim: usize) -> Self {
        Self { drift: vec![T::zero(); dim], steps: 0, time: 0.0 }
    }

    /// Advances `state` by `dt` using the caller-supplied standard normals.
    pub fn step<F>(&mut self, drift: &mut F, sigma: &Array2<T>, state: &mut [T], dt: T, normals: &[T]) -> Result<()>
    where
        F: FnMut(&[T], &mut [T]) -> Result<()>,
    {
        let n = state.len();
        if self.drift.len() != n || sigma.dim() != (n, n) || normals.len() != n {
            return Err(Error::InvalidDimension(format!(
                "Euler-Maruyama: state {n}, sigma {:?}, normals {}",
                sigma.dim(),
                normals.len()
            )));
        }
        drift(state, &mut self.drift)?;
        let sq = dt.sqrt();
        for (i, row) in sigma.rows().into_iter().enumerate() {
            let noise = row.iter().zip(normals).fold(T::zero(), |a, (&s, &z)| a + s * z);
            state[i] += self.drift[i] * dt + noise * sq;
        }
        self.steps += 1;
        self.time += dt.as_f64();
        if !all_finite(state) {
            return Err(Error::NumericalBlowup { step: self.steps, time: self.time });
        }
        Ok(())
    }
}

/// One Euler-Maruyama step: `state + drift(state) dt + sigma normals sqrt(dt)`.
pub fn euler_maruyama_step<T, F>(drift: F, sigma: &Array2<T>, state: &[T], dt: T, normals: &[T]) -> Result<Vec<T>>
where
    T: Real,
    F: Fn(&[T]) -> Vec<T>,
{
    check_dt(dt)?;
    let mut x = state.to_vec();
    let mut f = |s: &[T], out: &mut [T]| {
        let v = drift(s);
        if v.len() != out.len() {
            return Err(Error::InvalidDimension("drift has wrong dimension".into()));
        }
        out.copy_from_slice(&v);
        Ok(())
    };
    EulerMaruyama::new(x.len()).step(&mut f, sigma, &mut x, dt, normals)?;
    Ok(x)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::LorenzParams;

    pub fn params() -> LorenzParams<f64> {
        LorenzParams {
            n_x: 5,
            j_per: 4,
            eps: 0.1,
            f_x: 6.0,
            f_y: 16.0,
            lambda_x: 0.3,
            lambda_y: 0.3,
            mu_x: 1.9,
            sd_x: 3.1,
            mu_y: 3.6,
            sd_y: 5.4,
        }
    }
}

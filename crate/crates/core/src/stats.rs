//! Statistics used to compare reduced models against the full system:
//! marginal density, autocorrelation, nearest-neighbour cross-correlation,
//! energy autocorrelation, and a relative L2 error between two estimates.
//!
//! All correlations are uncentered and pooled over the slow components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::series::TimeSeries;

/// Histogram density estimate; `pdf[b]` is the density on `[edges[b], edges[b+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate<T> {
    pub bin_edges: Vec<T>,
    pub pdf: Vec<T>,
}

impl<T: Real> DensityEstimate<T> {
    pub fn n_bins(&self) -> usize {
        self.pdf.len()
    }

    pub fn bin_centers(&self) -> Vec<T> {
        let half = T::lit(0.5);
        self.bin_edges.windows(2).map(|w| half * (w[0] + w[1])).collect()
    }

    pub fn widths(&self) -> Vec<T> {
        self.bin_edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `sum pdf * width`, which is 1 up to roundoff.
    pub fn integral(&self) -> T {
        self.pdf.iter().zip(self.widths()).fold(T::zero(), |acc, (&p, w)| acc + p * w)
    }

    pub fn range(&self) -> (T, T) {
        (self.bin_edges[0], self.bin_edges[self.bin_edges.len() - 1])
    }
}

/// A function of lag sampled on an increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve<T> {
    pub lags: Vec<T>,
    pub values: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport<T> {
    pub density_err: T,
    pub corr_err: T,
    pub cross_corr_err: T,
    pub energy_corr_err: T,
}

impl<T: Copy> ErrorReport<T> {
    pub fn as_array(&self) -> [T; 4] {
        [self.density_err, self.corr_err, self.cross_corr_err, self.energy_corr_err]
    }
}

/// `n_bins + 1` equally spaced edges on `[lo, hi]`, with both ends exact.
pub fn uniform_edges<T: Real>(lo: T, hi: T, n_bins: usize) -> Result<Vec<T>> {
    if n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be at least 1".into()));
    }
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return Err(Error::DegenerateData(format!("invalid histogram range [{lo}, {hi}]")));
    }
    let n = T::from_count(n_bins);
    let mut edges: Vec<T> = (0..=n_bins).map(|k| lo + (hi - lo) * T::from_count(k) / n).collect();
    edges[n_bins] = hi;
    Ok(edges)
}

fn sample_range<T: Real>(samples: &[T]) -> Result<(T, T)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples for density".into()));
    }
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for &v in samples {
        if !v.is_finite() {
            return Err(Error::DegenerateData("non-finite sample".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= lo {
        return Err(Error::DegenerateData(format!("all samples equal {lo}")));
    }
    Ok((lo, hi))
}

/// Histogram on `n_bins` equal bins spanning the sample range.
pub fn density<T: Real>(samples: &[T], n_bins: usize) -> Result<DensityEstimate<T>> {
    let (lo, hi) = sample_range(samples)?;
    density_on_edges(samples, &uniform_edges(lo, hi, n_bins)?)
}

/// Histogram on the given increasing edges. Samples outside the edges are
/// dropped and the density is normalized over the retained samples.
pub fn density_on_edges<T: Real>(samples: &[T], edges: &[T]) -> Result<DensityEstimate<T>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("histogram edges must be strictly increasing".into()));
    }
    let nb = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[nb]);
    let mut counts = vec![0usize; nb];
    let mut kept = 0usize;
    for &v in samples {
        if !(v >= lo && v <= hi) {
            continue;
        }
        let b = match edges.binary_search_by(|e| e.partial_cmp(&v).expect("finite edges")) {
            Ok(k) => k.min(nb - 1),
            Err(k) => k - 1,
        };
        counts[b] += 1;
        kept += 1;
    }
    if kept == 0 {
        return Err(Error::NonOverlapping);
    }
    let total = T::from_count(kept);
    let pdf = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| T::from_count(c) / (total * (w[1] - w[0])))
        .collect();
    Ok(DensityEstimate { bin_edges: edges.to_vec(), pdf })
}

/// Common edges covering the ranges of all sample sets.
pub fn union_edges<T: Real>(sets: &[&[T]], n_bins: usize) -> Result<Vec<T>> {
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for s in sets {
        let (a, b) = sample_range(s)?;
        lo = lo.min(a);
        hi = hi.max(b);
    }
    uniform_edges(lo, hi, n_bins)
}

fn columns<T: Real>(series: &TimeSeries<T>) -> Vec<Vec<T>> {
    series.view().columns().into_iter().map(|c| c.to_vec()).collect()
}

fn lag_count<T: Real>(series: &TimeSeries<T>, max_lag: T) -> Result<usize> {
    if !(max_lag >= T::zero()) || !(series.dt > T::zero()) {
        return Err(Error::InvalidParameter("max_lag must be non-negative and dt positive".into()));
    }
    let k = (max_lag / series.dt + T::lit(1e-9)).floor().to_usize().unwrap_or(usize::MAX);
    if series.len() < 2 * (k + 1) {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot support {} lags",
            series.len(),
            k + 1
        )));
    }
    Ok(k)
}

fn lag_grid<T: Real>(dt: T, k: usize) -> Vec<T> {
    (0..=k).map(|l| dt * T::from_count(l)).collect()
}

/// `(1/(N-k)) sum_t a(t) b(t+k)`.
fn lagged_mean(a: &[f64], b: &[f64], k: usize) -> f64 {
    let n = a.len() - k;
    let mut acc = 0.0;
    for (x, y) in a[..n].iter().zip(&b[k..]) {
        acc += x * y;
    }
    acc / n as f64
}

fn to_f64_columns<T: Real>(cols: &[Vec<T>]) -> Vec<Vec<f64>> {
    cols.iter().map(|c| c.iter().map(|v| v.as_f64()).collect()).collect()
}

/// Pooled mean lagged product of component `i` with component `i + shift` (cyclic).
fn pooled_lagged(cols: &[Vec<f64>], shift: usize, k: usize) -> f64 {
    let n = cols.len();
    let sum: f64 = (0..n).map(|i| lagged_mean(&cols[i], &cols[(i + shift) % n], k)).sum();
    sum / n as f64
}

fn normalized_curve<T: Real>(cols: &[Vec<f64>], shift: usize, dt: T, k: usize) -> Result<CorrelationCurve<T>> {
    let denom = pooled_lagged(cols, 0, 0);
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::DegenerateData("zero or non-finite second moment".into()));
    }
    let values = (0..=k).map(|l| T::lit(pooled_lagged(cols, shift, l) / denom)).collect();
    Ok(CorrelationCurve { lags: lag_grid(dt, k), values })
}

/// Uncentered autocorrelation `<x_i(t) x_i(t+s)> / <x_i^2>`, pooled over components.
pub fn autocorrelation<T: Real>(series: &TimeSeries<T>, max_lag: T) -> Result<CorrelationCurve<T>> {
    let k = lag_count(series, max_lag)?;
    normalized_curve(&to_f64_columns(&columns(series)), 0, series.dt, k)
}

/// Uncentered cross-correlation `<x_i(t) x_{i+1}(t+s)> / <x_i^2>`, pooled over components.
pub fn cross_correlation<T: Real>(series: &TimeSeries<T>, max_lag: T) -> Result<CorrelationCurve<T>> {
    if series.dim() < 2 {
        return Err(Error::InvalidDimension("cross-correlation needs at least two components".into()));
    }
    let k = lag_count(series, max_lag)?;
    normalized_curve(&to_f64_columns(&columns(series)), 1, series.dt, k)
}

/// Energy autocorrelation
/// `K(s) = <x_i^2(t) x_i^2(t+s)> / (<x_i^2>^2 + 2 <x_i(t) x_i(t+s)>^2)`,
/// formed per component and then averaged. Equals 1 for every lag of a
/// stationary zero-mean Gaussian process.
pub fn energy_autocorrelation<T: Real>(series: &TimeSeries<T>, max_lag: T) -> Result<CorrelationCurve<T>> {
    let k = lag_count(series, max_lag)?;
    let cols = to_f64_columns(&columns(series));
    let squares: Vec<Vec<f64>> = cols.iter().map(|c| c.iter().map(|v| v * v).collect()).collect();
    let n = cols.len() as f64;
    let m2: Vec<f64> = cols.iter().map(|c| lagged_mean(c, c, 0)).collect();
    if m2.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateData("zero or non-finite second moment".into()));
    }
    let values = (0..=k)
        .map(|l| {
            let s: f64 = cols
                .iter()
                .zip(&squares)
                .zip(&m2)
                .map(|((c, sq), &m)| {
                    let c_l = lagged_mean(c, c, l);
                    lagged_mean(sq, sq, l) / (m * m + 2.0 * c_l * c_l)
                })
                .sum();
            T::lit(s / n)
        })
        .collect();
    Ok(CorrelationCurve { lags: lag_grid(series.dt, k), values })
}

/// Trapezoid quadrature weights on an increasing grid; a single point gets weight 1.
fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = 0.5 * (x[i + 1] - x[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

fn weighted_relative(test: &[f64], reference: &[f64], weights: &[f64]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&t, &r), &w) in test.iter().zip(reference).zip(weights) {
        num += w * (t - r) * (t - r);
        den += w * r * r;
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateData("reference has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// Linear interpolation of `(xs, ys)` at `x`, exact at grid points; `None` outside the grid.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let last = xs.len() - 1;
    if x < xs[0] || x > xs[last] {
        return None;
    }
    match xs.binary_search_by(|v| v.partial_cmp(&x).expect("finite grid")) {
        Ok(i) => Some(ys[i]),
        Err(i) => {
            let (x0, x1) = (xs[i - 1], xs[i]);
            let f = (x - x0) / (x1 - x0);
            Some(ys[i - 1] + f * (ys[i] - ys[i - 1]))
        }
    }
}

/// Objects that can be compared by a relative discrete L2 error.
pub trait Comparable<T> {
    /// `||self - reference|| / ||reference||`.
    fn relative_error_to(&self, reference: &Self) -> Result<T>;
}

impl<T: Real> Comparable<T> for CorrelationCurve<T> {
    /// The test curve is interpolated onto the reference lags within the
    /// overlapping range and the norm uses trapezoid weights on those lags.
    fn relative_error_to(&self, reference: &Self) -> Result<T> {
        for c in [self, reference] {
            if c.lags.is_empty() || c.lags.len() != c.values.len() {
                return Err(Error::InvalidDimension("curve lags and values differ in length".into()));
            }
        }
        let tx: Vec<f64> = self.lags.iter().map(|v| v.as_f64()).collect();
        let ty: Vec<f64> = self.values.iter().map(|v| v.as_f64()).collect();
        let mut grid = Vec::new();
        let mut t_vals = Vec::new();
        let mut r_vals = Vec::new();
        for (&x, &y) in reference.lags.iter().zip(&reference.values) {
            if let Some(v) = interpolate(&tx, &ty, x.as_f64()) {
                grid.push(x.as_f64());
                t_vals.push(v);
                r_vals.push(y.as_f64());
            }
        }
        if grid.is_empty() {
            return Err(Error::NonOverlapping);
        }
        weighted_relative(&t_vals, &r_vals, &trapezoid_weights(&grid)).map(T::lit)
    }
}

/// Redistributes a histogram onto new edges assuming uniform density within each old bin.
fn rebin(d: &DensityEstimate<f64>, edges: &[f64]) -> Vec<f64> {
    let nb = edges.len() - 1;
    let mut mass = vec![0.0; nb];
    let mut j = 0;
    for (b, w) in d.bin_edges.windows(2).enumerate() {
        let (a0, a1) = (w[0], w[1]);
        while j < nb && edges[j + 1] <= a0 {
            j += 1;
        }
        let mut k = j;
        while k < nb && edges[k] < a1 {
            let overlap = a1.min(edges[k + 1]) - a0.max(edges[k]);
            if overlap > 0.0 {
                mass[k] += d.pdf[b] * overlap;
            }
            k += 1;
        }
    }
    mass.iter().zip(edges.windows(2)).map(|(m, w)| m / (w[1] - w[0])).collect()
}

impl<T: Real> Comparable<T> for DensityEstimate<T> {
    /// Densities on identical edges are compared bin by bin with width
    /// weights; otherwise both are re-binned, conserving mass, onto a uniform
    /// grid spanning the union of the two ranges.
    fn relative_error_to(&self, reference: &Self) -> Result<T> {
        for d in [self, reference] {
            if d.bin_edges.len() != d.pdf.len() + 1 || d.pdf.is_empty() {
                return Err(Error::InvalidDimension("density needs one more edge than bins".into()));
            }
        }
        let to64 = |d: &DensityEstimate<T>| DensityEstimate {
            bin_edges: d.bin_edges.iter().map(|v| v.as_f64()).collect::<Vec<f64>>(),
            pdf: d.pdf.iter().map(|v| v.as_f64()).collect(),
        };
        let (t, r) = (to64(self), to64(reference));
        if t.bin_edges == r.bin_edges {
            return weighted_relative(&t.pdf, &r.pdf, &r.widths()).map(T::lit);
        }
        let (tl, th) = t.range();
        let (rl, rh) = r.range();
        if th <= rl || tl >= rh {
            return Err(Error::NonOverlapping);
        }
        let edges = uniform_edges(tl.min(rl), th.max(rh), t.n_bins().max(r.n_bins()))?;
        let widths: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
        weighted_relative(&rebin(&t, &edges), &rebin(&r, &edges), &widths).map(T::lit)
    }
}

/// Relative L2 error of `test` against `reference`.
pub fn relative_error<T: Real, C: Comparable<T>>(test: &C, reference: &C) -> Result<T> {
    test.relative_error_to(reference)
}

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Uniformly sampled multivariate time series; rows are samples, columns components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct TimeSeries<T> {
    #[serde(with = "crate::serde_matrix")]
    pub data: Array2<T>,
    /// Sampling interval in model time units.
    pub dt: T,
}

impl<T: Real> TimeSeries<T> {
    pub fn new(data: Array2<T>, dt: T) -> Self {
        Self { data, dt }
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.data.view()
    }

    /// Per-component time mean.
    pub fn component_means(&self) -> Vec<T> {
        let n = T::from_count(self.len().max(1));
        self.data
            .columns()
            .into_iter()
            .map(|c| c.iter().fold(T::zero(), |a, &v| a + v) / n)
            .collect()
    }
}

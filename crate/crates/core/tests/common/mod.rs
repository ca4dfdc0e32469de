#![allow(dead_code)]

use ndarray::Array2;
use slowfast::calibration::{ArtifactMetadata, CalibrationArtifact, CalibrationOptions, Climatology};
use slowfast::dynamics::LorenzParams;

/// Climatology of the uncoupled models at `F_x = 6`, `F_y = 16`.
pub const SLOW: Climatology<f64> = Climatology { mean: 2.0147, std: 2.8336 };
pub const FAST: Climatology<f64> = Climatology { mean: 3.0846, std: 6.3118 };

pub fn params(lambda: f64, eps: f64) -> LorenzParams<f64> {
    LorenzParams {
        n_x: 20,
        j_per: 4,
        eps,
        f_x: 6.0,
        f_y: 16.0,
        lambda_x: lambda,
        lambda_y: lambda,
        mu_x: SLOW.mean,
        sd_x: SLOW.std,
        mu_y: FAST.mean,
        sd_y: FAST.std,
    }
}

pub const REGIMES: [(f64, f64); 4] = [(0.3, 0.1), (0.3, 0.01), (0.35, 0.1), (0.35, 0.01)];

/// Artifact with the given matrices; `c0` and `cbar` are filled with placeholders.
pub fn artifact(p: LorenzParams<f64>, x_star: Vec<f64>, z_mean: Vec<f64>, r_mat: Array2<f64>, sigma: Array2<f64>) -> CalibrationArtifact<f64> {
    let ny = p.n_y();
    let s_mat = sigma.dot(&sigma.t());
    CalibrationArtifact {
        x_star,
        z_mean,
        c0: Array2::eye(ny),
        cbar: r_mat.clone(),
        r_mat,
        s_mat,
        sigma,
        metadata: ArtifactMetadata {
            params: p,
            options: CalibrationOptions::default(),
            n_samples: 0,
            dt_sample: 0.05,
            tau_trunc: 20.0,
            truncation_converged: false,
            clamped_eigenvalues: 0,
            condition_c0: 1.0,
            x_star_source: "test".into(),
        },
    }
}

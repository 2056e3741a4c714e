//! Post-hoc calibrators: global temperature scaling (TS), local temperature
//! scaling (LTS) and selective scaling (SS).
//!
//! Every method rescales each pixel's logit vector by a positive scalar, so
//! the per-pixel argmax never changes. Fitting takes a labelled [`Dataset`];
//! applying needs only logits and lead times.

mod bundle;
mod lts;
mod selective;
mod temperature;
mod train;

use thiserror::Error;

use crate::dataset::{validate_scores, DatasetError};
use crate::diffnet::NetError;
use crate::tensor::{Tensor, TensorError};

pub use bundle::{FitOptions, 
    load_calibrator, save_calibrator, Calibrator, CalibratorBundle, FitMetadata, Method, BUNDLE_FORMAT_VERSION,
    BUNDLE_MANIFEST,
};
pub use lts::{apply_lts, fit_lts, lts_input, lts_network_spec, LtsOptions, LtsRegressor};
pub use selective::{
    apply_ss, apply_with_flags, fit_ss, misprediction_targets, ss_input, ss_network_spec, SelectiveScaler, SsOptions,
    HELD_OUT_RATIO,
};
pub use temperature::{apply_temperature, fit_temperature, mean_nll, GlobalTemperature, TEMPERATURE_BOUNDS};
pub use train::TrainSummary;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Network(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training diverged in epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("no mispredictions in the training split; nothing to calibrate")]
    NoMispredictions,
    #[error("calibrator expects {expected} classes, data has {found}")]
    ClassMismatch { expected: usize, found: usize },
    #[error("{found} lead times given for {samples} samples")]
    LeadTimeCount { found: usize, samples: usize },
    #[error("unsupported data: {0}")]
    Unsupported(String),
    #[error("bundle manifest: {0}")]
    Manifest(String),
    #[error("bundle format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Checks an apply-time logit tensor against the calibrator's class count
/// and returns its `[N, K, H, W]` shape.
fn check_logits(logits: &Tensor, lead_times: &[usize], classes: usize) -> Result<[usize; 4], CalibrationError> {
    let dims = validate_scores(logits, "logits")?;
    if dims[1] != classes {
        return Err(CalibrationError::ClassMismatch {
            expected: classes,
            found: dims[1],
        });
    }
    if lead_times.len() != dims[0] {
        return Err(CalibrationError::LeadTimeCount {
            found: lead_times.len(),
            samples: dims[0],
        });
    }
    Ok(dims)
}

/// Minimizes a unimodal function on `[lo, hi]` until the bracket is
/// narrower than `tol`; returns the bracket midpoint.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Negative log-likelihood of `label` under `softmax(z / temperature)`.
pub(crate) fn tempered_nll(z: &[f64], label: usize, temperature: f64) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| ((v - max) / temperature).exp()).sum();
    sum.ln() - (z[label] - max) / temperature
}

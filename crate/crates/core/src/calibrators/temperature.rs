use serde::{Deserialize, Serialize};

use super::{golden_section, tempered_nll, CalibrationError};
use crate::dataset::{validate_scores, Dataset};
use crate::metrics::{map_pixels, softmax_tempered};
use crate::tensor::Tensor;

/// Search interval for the global temperature.
pub const TEMPERATURE_BOUNDS: (f64, f64) = (0.05, 20.0);
const LOG_T_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalTemperature {
    pub temperature: f64,
}

/// Pixels as `(max-shifted logits, label)` rows, so each NLL evaluation is a
/// single pass over contiguous memory.
struct PixelTable {
    classes: usize,
    shifted: Vec<f64>,
    labels: Vec<usize>,
}

impl PixelTable {
    fn new(ds: &Dataset) -> Self {
        let d = ds.dims();
        let hw = d.pixels_per_sample();
        let mut shifted = Vec::with_capacity(d.total_pixels() * d.classes);
        let mut labels = Vec::with_capacity(d.total_pixels());
        let mut z = vec![0.0; d.classes];
        for s in 0..d.samples {
            for p in 0..hw {
                ds.pixel_scores(s, p, &mut z);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                shifted.extend(z.iter().map(|v| v - max));
                labels.push(ds.label(s, p));
            }
        }
        PixelTable {
            classes: d.classes,
            shifted,
            labels,
        }
    }

    fn mean_nll(&self, temperature: f64) -> f64 {
        let total: f64 = self
            .shifted
            .chunks_exact(self.classes)
            .zip(&self.labels)
            .map(|(z, &y)| {
                let sum: f64 = z.iter().map(|v| (v / temperature).exp()).sum();
                sum.ln() - z[y] / temperature
            })
            .sum();
        total / self.labels.len() as f64
    }
}

/// Mean cross-entropy of `softmax(z / temperature)` over every pixel.
pub fn mean_nll(ds: &Dataset, temperature: f64) -> f64 {
    let d = ds.dims();
    let mut z = vec![0.0; d.classes];
    let mut total = 0.0;
    for s in 0..d.samples {
        for p in 0..d.pixels_per_sample() {
            ds.pixel_scores(s, p, &mut z);
            total += tempered_nll(&z, ds.label(s, p), temperature);
        }
    }
    total / d.total_pixels() as f64
}

/// NLL-optimal single temperature, by golden-section search on `ln T`.
pub fn fit_temperature(ds: &Dataset) -> Result<GlobalTemperature, CalibrationError> {
    if ds.dims().classes < 2 {
        log::warn!("single-class data carries no calibration signal; using T = 1");
        return Ok(GlobalTemperature { temperature: 1.0 });
    }
    let table = PixelTable::new(ds);
    let (lo, hi) = TEMPERATURE_BOUNDS;
    let log_t = golden_section(|u| table.mean_nll(u.exp()), lo.ln(), hi.ln(), LOG_T_TOLERANCE);
    Ok(GlobalTemperature {
        temperature: log_t.exp(),
    })
}

pub fn apply_temperature(cal: &GlobalTemperature, logits: &Tensor) -> Result<Tensor, CalibrationError> {
    let [_, k, _, _] = validate_scores(logits, "logits")?;
    let t = cal.temperature;
    Ok(map_pixels(logits, k, |_, _, z, out| softmax_tempered(z, t, out)))
}

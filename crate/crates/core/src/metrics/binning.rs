use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Default edges for the 12-class rate discretization, mm/h.
pub const DEFAULT_RATE_EDGES: [f64; 11] = [0.2, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0];

/// Ascending precipitation-rate edges separating K classes. Class 0 is below
/// the first edge, class K-1 is at or above the last. The edges double as
/// the exceedance thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBinning {
    edges_mm_per_h: Vec<f64>,
}

impl RateBinning {
    pub fn new(edges_mm_per_h: Vec<f64>) -> Result<Self, MetricsError> {
        if edges_mm_per_h.is_empty() {
            return Err(MetricsError::InvalidBinning("at least one rate edge is required".into()));
        }
        if edges_mm_per_h.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(MetricsError::InvalidBinning("rate edges must be positive and finite".into()));
        }
        if edges_mm_per_h.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetricsError::InvalidBinning("rate edges must be strictly ascending".into()));
        }
        Ok(RateBinning { edges_mm_per_h })
    }

    /// Edges for `classes` rate classes: the default table for 12 classes,
    /// geometric spacing between 0.2 and 10 mm/h otherwise.
    pub fn for_classes(classes: usize) -> Result<Self, MetricsError> {
        match classes {
            0 | 1 => Err(MetricsError::InvalidBinning(format!(
                "a rate binning needs at least 2 classes, got {classes}"
            ))),
            12 => Ok(Self::default()),
            2 => Self::new(vec![1.0]),
            k => {
                let n = k - 1;
                let ratio: f64 = 10.0 / 0.2;
                Self::new(
                    (0..n)
                        .map(|i| 0.2 * ratio.powf(i as f64 / (n - 1) as f64))
                        .collect(),
                )
            }
        }
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges_mm_per_h
    }

    pub fn classes(&self) -> usize {
        self.edges_mm_per_h.len() + 1
    }

    pub fn thresholds(&self) -> usize {
        self.edges_mm_per_h.len()
    }

    /// Index of the edge equal to `rate` (relative tolerance 1e-9).
    pub fn threshold_index(&self, rate: f64) -> Result<usize, MetricsError> {
        self.edges_mm_per_h
            .iter()
            .position(|e| (e - rate).abs() <= 1e-9 * e.abs().max(1.0))
            .ok_or(MetricsError::UnknownThreshold(rate))
    }
}

impl Default for RateBinning {
    fn default() -> Self {
        RateBinning {
            edges_mm_per_h: DEFAULT_RATE_EDGES.to_vec(),
        }
    }
}

/// `bins` evenly spaced confidence bins over [0, 1]. Bin b covers
/// [b/B, (b+1)/B); the last bin is closed so that 1.0 is representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceBinning {
    bins: usize,
}

impl ConfidenceBinning {
    pub fn new(bins: usize) -> Result<Self, MetricsError> {
        if bins < 2 {
            return Err(MetricsError::InvalidBinning(format!(
                "need at least 2 confidence bins, got {bins}"
            )));
        }
        Ok(ConfidenceBinning { bins })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn lower_edge(&self, bin: usize) -> f64 {
        bin as f64 / self.bins as f64
    }

    pub fn upper_edge(&self, bin: usize) -> f64 {
        (bin + 1) as f64 / self.bins as f64
    }

    pub fn assign(&self, confidence: f64) -> Result<usize, MetricsError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(MetricsError::ConfidenceOutOfRange(confidence));
        }
        let last = self.bins - 1;
        let mut b = ((confidence * self.bins as f64).floor() as usize).min(last);
        // floor(c * B) can land one bin off near an edge; settle against the edges themselves.
        if b > 0 && confidence < self.lower_edge(b) {
            b -= 1;
        } else if b < last && confidence >= self.upper_edge(b) {
            b += 1;
        }
        Ok(b)
    }
}

impl Default for ConfidenceBinning {
    fn default() -> Self {
        ConfidenceBinning { bins: 20 }
    }
}

pub fn assign_bin(confidence: f64, binning: &ConfidenceBinning) -> Result<usize, MetricsError> {
    binning.assign(confidence)
}

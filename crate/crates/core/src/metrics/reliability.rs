use serde::{Deserialize, Serialize};

use super::probability::exceedance_from_probs;
use super::{ConfidenceBinning, LeadScores, MetricsError, RateBinning};
use crate::dataset::Dataset;

/// Statistics of one (threshold, lead time, confidence bin) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub count: u64,
    pub mean_conf: Option<f64>,
    pub obs_freq: Option<f64>,
}

impl Cell {
    /// |observed frequency - mean confidence|, `None` for empty cells.
    pub fn abs_gap(&self) -> Option<f64> {
        Some((self.obs_freq? - self.mean_conf?).abs())
    }
}

/// Exceedance reliability statistics indexed by threshold, lead time and
/// confidence bin. Sums are accumulated in f64 in sample order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    thresholds_mm_h: Vec<f64>,
    lead_times: usize,
    bins: usize,
    counts: Vec<u64>,
    sum_conf: Vec<f64>,
    sum_obs: Vec<f64>,
}

impl ReliabilityTable {
    pub fn empty(thresholds_mm_h: Vec<f64>, lead_times: usize, bins: usize) -> Self {
        let cells = thresholds_mm_h.len() * lead_times * bins;
        ReliabilityTable {
            thresholds_mm_h,
            lead_times,
            bins,
            counts: vec![0; cells],
            sum_conf: vec![0.0; cells],
            sum_obs: vec![0.0; cells],
        }
    }

    fn index(&self, threshold: usize, lead: usize, bin: usize) -> usize {
        (threshold * self.lead_times + lead) * self.bins + bin
    }

    /// Adds one prediction to a cell.
    pub fn record(&mut self, threshold: usize, lead: usize, bin: usize, confidence: f64, observed: bool) {
        let i = self.index(threshold, lead, bin);
        self.counts[i] += 1;
        self.sum_conf[i] += confidence;
        if observed {
            self.sum_obs[i] += 1.0;
        }
    }

    pub fn thresholds_mm_h(&self) -> &[f64] {
        &self.thresholds_mm_h
    }

    pub fn num_thresholds(&self) -> usize {
        self.thresholds_mm_h.len()
    }

    pub fn lead_times(&self) -> usize {
        self.lead_times
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn cell(&self, threshold: usize, lead: usize, bin: usize) -> Cell {
        let i = self.index(threshold, lead, bin);
        let count = self.counts[i];
        if count == 0 {
            return Cell {
                count,
                mean_conf: None,
                obs_freq: None,
            };
        }
        Cell {
            count,
            mean_conf: Some(self.sum_conf[i] / count as f64),
            obs_freq: Some(self.sum_obs[i] / count as f64),
        }
    }

    pub fn count(&self, threshold: usize, lead: usize, bin: usize) -> u64 {
        self.counts[self.index(threshold, lead, bin)]
    }

    /// Counts as nested [threshold][lead time][bin] vectors.
    pub fn counts_nested(&self) -> Vec<Vec<Vec<u64>>> {
        (0..self.num_thresholds())
            .map(|t| {
                (0..self.lead_times)
                    .map(|l| (0..self.bins).map(|b| self.count(t, l, b)).collect())
                    .collect()
            })
            .collect()
    }

    /// Number of predictions at `lead` for one threshold.
    pub fn predictions_at(&self, threshold: usize, lead: usize) -> u64 {
        (0..self.bins).map(|b| self.count(threshold, lead, b)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }
}

/// Builds the exceedance reliability table from a probability dataset.
pub fn reliability_table(
    probs: &Dataset,
    rate_binning: &RateBinning,
    conf_binning: &ConfidenceBinning,
) -> Result<ReliabilityTable, MetricsError> {
    let dims = probs.dims();
    if dims.classes != rate_binning.classes() {
        return Err(MetricsError::ClassMismatch {
            data: dims.classes,
            binning: rate_binning.classes(),
        });
    }
    if dims.total_pixels() == 0 {
        return Err(MetricsError::EmptyDataset);
    }
    let kt = rate_binning.thresholds();
    let mut table = ReliabilityTable::empty(rate_binning.edges().to_vec(), dims.lead_times, conf_binning.bins());
    let mut p = vec![0.0; dims.classes];
    let mut exceed = vec![0.0; kt];
    for sample in 0..dims.samples {
        let lead = probs.lead_times()[sample];
        for pixel in 0..dims.pixels_per_sample() {
            probs.pixel_scores(sample, pixel, &mut p);
            exceedance_from_probs(&p, &mut exceed);
            let y = probs.label(sample, pixel);
            for (t, &c) in exceed.iter().enumerate() {
                let bin = conf_binning.assign(c)?;
                table.record(t, lead, bin, c, y > t);
            }
        }
    }
    Ok(table)
}

/// Per-threshold term of the thresholded calibration error at one lead time:
/// uniform weights over the non-empty bins. `None` when every bin is empty.
pub fn threshold_term(table: &ReliabilityTable, threshold: usize, lead: usize) -> Option<f64> {
    let gaps: Vec<f64> = (0..table.bins())
        .filter_map(|b| table.cell(threshold, lead, b).abs_gap())
        .collect();
    if gaps.is_empty() {
        return None;
    }
    Some(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// Expected thresholded calibration error per lead time and averaged
/// uniformly over lead times with data.
///
/// Within a threshold the uniform bin weights are renormalized over the
/// non-empty bins; thresholds without any prediction are left out of the
/// threshold average.
pub fn etce(table: &ReliabilityTable) -> Result<LeadScores, MetricsError> {
    if table.is_empty() {
        return Err(MetricsError::EmptyTable);
    }
    let per_lead = (0..table.lead_times())
        .map(|lead| {
            let terms: Vec<f64> = (0..table.num_thresholds())
                .filter_map(|t| threshold_term(table, t, lead))
                .collect();
            if terms.is_empty() {
                None
            } else {
                Some(terms.iter().sum::<f64>() / terms.len() as f64)
            }
        })
        .collect();
    Ok(LeadScores::from_per_lead(per_lead))
}

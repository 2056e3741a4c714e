use serde::{Deserialize, Serialize};

use super::probability::{argmax, exceedance_from_probs};
use super::{ConfidenceBinning, MetricsError, RateBinning};
use crate::dataset::Dataset;

/// A score for each lead time plus the uniform average over lead times
/// that have data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadScores {
    pub per_lead_time: Vec<Option<f64>>,
    pub average: f64,
}

impl LeadScores {
    pub fn from_per_lead(per_lead_time: Vec<Option<f64>>) -> Self {
        let present: Vec<f64> = per_lead_time.iter().flatten().copied().collect();
        let average = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        LeadScores {
            per_lead_time,
            average,
        }
    }
}

/// Count, confidence sum and hit sum of one confidence bin.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinAccumulator {
    pub count: u64,
    pub sum_conf: f64,
    pub sum_hit: f64,
}

impl BinAccumulator {
    pub fn add(&mut self, confidence: f64, hit: bool) {
        self.count += 1;
        self.sum_conf += confidence;
        if hit {
            self.sum_hit += 1.0;
        }
    }
}

/// Sample-weighted binned calibration error: sum over bins of
/// (n_b / total) * |acc(b) - conf(b)|. Empty bins contribute nothing.
pub fn weighted_bin_error(bins: &[BinAccumulator], total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| {
            let n = b.count as f64;
            (n / total as f64) * (b.sum_hit / n - b.sum_conf / n).abs()
        })
        .sum()
}

/// Expected calibration error of a flat list of (confidence, correct) pairs.
pub fn binned_ece(
    confidences: &[f64],
    correct: &[bool],
    binning: &ConfidenceBinning,
) -> Result<f64, MetricsError> {
    let mut bins = vec![BinAccumulator::default(); binning.bins()];
    for (&c, &hit) in confidences.iter().zip(correct) {
        bins[binning.assign(c)?].add(c, hit);
    }
    Ok(weighted_bin_error(&bins, confidences.len() as u64))
}

fn lead_counts(ds: &Dataset) -> Vec<u64> {
    let mut counts = vec![0u64; ds.dims().lead_times];
    for &l in ds.lead_times() {
        counts[l] += ds.dims().pixels_per_sample() as u64;
    }
    counts
}

/// Top-class ECE per lead time on a probability dataset.
pub fn ece(probs: &Dataset, binning: &ConfidenceBinning) -> Result<LeadScores, MetricsError> {
    let dims = probs.dims();
    if dims.total_pixels() == 0 {
        return Err(MetricsError::EmptyDataset);
    }
    let mut acc = vec![vec![BinAccumulator::default(); binning.bins()]; dims.lead_times];
    let mut p = vec![0.0; dims.classes];
    for sample in 0..dims.samples {
        let lead = probs.lead_times()[sample];
        for pixel in 0..dims.pixels_per_sample() {
            probs.pixel_scores(sample, pixel, &mut p);
            let top = argmax(&p);
            let conf = p[top].clamp(0.0, 1.0);
            acc[lead][binning.assign(conf)?].add(conf, top == probs.label(sample, pixel));
        }
    }
    let counts = lead_counts(probs);
    Ok(LeadScores::from_per_lead(
        acc.iter()
            .zip(&counts)
            .map(|(bins, &n)| (n > 0).then(|| weighted_bin_error(bins, n)))
            .collect(),
    ))
}

/// Static calibration error: the per-class binned error of every class
/// probability against the indicator `label == k`, averaged over classes.
pub fn sce(probs: &Dataset, binning: &ConfidenceBinning) -> Result<LeadScores, MetricsError> {
    let dims = probs.dims();
    if dims.total_pixels() == 0 {
        return Err(MetricsError::EmptyDataset);
    }
    let k = dims.classes;
    let b = binning.bins();
    let mut acc = vec![BinAccumulator::default(); dims.lead_times * k * b];
    let mut p = vec![0.0; k];
    for sample in 0..dims.samples {
        let lead = probs.lead_times()[sample];
        for pixel in 0..dims.pixels_per_sample() {
            probs.pixel_scores(sample, pixel, &mut p);
            let y = probs.label(sample, pixel);
            for (class, &pc) in p.iter().enumerate() {
                let c = pc.clamp(0.0, 1.0);
                acc[(lead * k + class) * b + binning.assign(c)?].add(c, y == class);
            }
        }
    }
    let counts = lead_counts(probs);
    Ok(LeadScores::from_per_lead(
        (0..dims.lead_times)
            .map(|lead| {
                let n = counts[lead];
                (n > 0).then(|| {
                    (0..k)
                        .map(|class| {
                            let start = (lead * k + class) * b;
                            weighted_bin_error(&acc[start..start + b], n)
                        })
                        .sum::<f64>()
                        / k as f64
                })
            })
            .collect(),
    ))
}

/// How a binary exceedance forecast is derived from the class probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Rule {
    /// Positive iff the exceedance probability is above 0.5.
    ExceedanceAboveHalf,
    /// Positive iff the most likely class lies above the threshold.
    Argmax,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// 2TP / (2TP + FP + FN), zero when there is nothing to score.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

/// F1 of the binary event "rate exceeds `rate_threshold_mm_per_h`".
pub fn f1_at_threshold(
    probs: &Dataset,
    rate_binning: &RateBinning,
    rate_threshold_mm_per_h: f64,
    rule: F1Rule,
) -> Result<LeadScores, MetricsError> {
    let dims = probs.dims();
    if dims.classes != rate_binning.classes() {
        return Err(MetricsError::ClassMismatch {
            data: dims.classes,
            binning: rate_binning.classes(),
        });
    }
    let t = rate_binning.threshold_index(rate_threshold_mm_per_h)?;
    let mut confusion = vec![Confusion::default(); dims.lead_times];
    let mut p = vec![0.0; dims.classes];
    let mut e = vec![0.0; dims.classes - 1];
    for sample in 0..dims.samples {
        let lead = probs.lead_times()[sample];
        for pixel in 0..dims.pixels_per_sample() {
            probs.pixel_scores(sample, pixel, &mut p);
            let predicted = match rule {
                F1Rule::ExceedanceAboveHalf => {
                    exceedance_from_probs(&p, &mut e);
                    e[t] > 0.5
                }
                F1Rule::Argmax => argmax(&p) > t,
            };
            confusion[lead].add(predicted, probs.label(sample, pixel) > t);
        }
    }
    let counts = lead_counts(probs);
    Ok(LeadScores::from_per_lead(
        confusion
            .iter()
            .zip(&counts)
            .map(|(c, &n)| (n > 0).then(|| c.f1()))
            .collect(),
    ))
}

/// Area under the ROC curve via the rank-sum statistic (ties count half).
/// Returns `None` when either class is absent.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // average 1-based rank of the tie group
        let rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += rank * order[i..=j].iter().filter(|&&k| positives[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

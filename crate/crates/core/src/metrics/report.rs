use serde::{Deserialize, Serialize};

use super::{
    ece, etce, f1_at_threshold, reliability_table, sce, ConfidenceBinning, F1Rule, LeadScores,
    MetricsError, RateBinning, ReliabilityTable,
};
use crate::dataset::Dataset;

pub const REPORT_SCHEMA: &str = "forecal.report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub threshold_mm_h: f64,
    pub rule: F1Rule,
    pub per_lead_time: Vec<Option<f64>>,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub bins: usize,
    pub thresholds_mm_h: Vec<f64>,
    pub samples: usize,
    pub pixels: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub lead_times: usize,
    /// Pixel predictions per lead time.
    pub predictions_per_lead_time: Vec<u64>,
    pub etce_bin_weighting: String,
    pub lead_time_average: String,
}

/// Everything `eval` reports. Key names are part of the JSON contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub schema: String,
    pub ece: LeadScores,
    pub sce: LeadScores,
    pub etce: LeadScores,
    pub f1_at_threshold: Option<F1Report>,
    /// Prediction counts indexed [threshold][lead time][bin].
    pub bin_counts: Vec<Vec<Vec<u64>>>,
    pub metadata: ReportMetadata,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub rate_binning: RateBinning,
    pub conf_binning: ConfidenceBinning,
    pub f1_threshold_mm_h: Option<f64>,
    pub f1_rule: F1Rule,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            rate_binning: RateBinning::default(),
            conf_binning: ConfidenceBinning::default(),
            f1_threshold_mm_h: Some(1.0),
            f1_rule: F1Rule::ExceedanceAboveHalf,
        }
    }
}

/// Computes the full report for a probability dataset. The reliability
/// table is returned alongside so callers can export diagram rows without
/// a second pass.
pub fn evaluate(
    probs: &Dataset,
    options: &EvalOptions,
) -> Result<(CalibrationReport, ReliabilityTable), MetricsError> {
    let dims = probs.dims();
    let table = reliability_table(probs, &options.rate_binning, &options.conf_binning)?;
    let f1 = match options.f1_threshold_mm_h {
        Some(rate) => {
            let s = f1_at_threshold(probs, &options.rate_binning, rate, options.f1_rule)?;
            Some(F1Report {
                threshold_mm_h: rate,
                rule: options.f1_rule,
                per_lead_time: s.per_lead_time,
                average: s.average,
            })
        }
        None => None,
    };
    let report = CalibrationReport {
        schema: REPORT_SCHEMA.to_string(),
        ece: ece(probs, &options.conf_binning)?,
        sce: sce(probs, &options.conf_binning)?,
        etce: etce(&table)?,
        f1_at_threshold: f1,
        bin_counts: table.counts_nested(),
        metadata: ReportMetadata {
            bins: options.conf_binning.bins(),
            thresholds_mm_h: options.rate_binning.edges().to_vec(),
            samples: dims.samples,
            pixels: dims.total_pixels(),
            classes: dims.classes,
            height: dims.height,
            width: dims.width,
            lead_times: dims.lead_times,
            predictions_per_lead_time: (0..dims.lead_times).map(|l| table.predictions_at(0, l)).collect(),
            etce_bin_weighting: "uniform over non-empty bins".into(),
            lead_time_average: "uniform over lead times with data".into(),
        },
    };
    Ok((report, table))
}

//! Calibration metrics for multiclass rate forecasts.
//!
//! All metrics are computed per lead time, treating the lead time as a
//! categorical group, and then averaged uniformly over lead times. The
//! thresholded error works on exceedance probabilities P(r > R_k) for each
//! interior rate edge R_k, so a K-class forecast has K-1 thresholds.

mod binning;
mod diagram;
mod probability;
mod reliability;
mod report;
mod scores;

use thiserror::Error;

use crate::dataset::DatasetError;

pub use binning::{assign_bin, ConfidenceBinning, RateBinning, DEFAULT_RATE_EDGES};
pub use diagram::{diagram_export, write_diagram_csv, DiagramRow, DiagramSelection, CSV_HEADER};
pub use probability::{
    argmax, class_probabilities, exceedance_from_probs, exceedance_labels, exceedance_probabilities,
    softmax, softmax_tempered,
};
pub(crate) use probability::map_pixels;
pub use reliability::{etce, reliability_table, threshold_term, Cell, ReliabilityTable};
pub use report::{evaluate, CalibrationReport, EvalOptions, F1Report, ReportMetadata, REPORT_SCHEMA};
pub use scores::{
    binned_ece, ece, f1_at_threshold, roc_auc, sce, weighted_bin_error, BinAccumulator, Confusion,
    F1Rule, LeadScores,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid binning: {0}")]
    InvalidBinning(String),
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("{0} mm/h is not one of the rate edges")]
    UnknownThreshold(f64),
    #[error("data has {data} classes but the rate binning defines {binning}")]
    ClassMismatch { data: usize, binning: usize },
    #[error("dataset holds no predictions")]
    EmptyDataset,
    #[error("reliability table holds no predictions")]
    EmptyTable,
}

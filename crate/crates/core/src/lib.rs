//! Calibration toolkit for gridded multiclass probabilistic forecasts.
//!
//! - [`tensor`]: dense tensors and the FCT1 file format
//! - [`dataset`]: validation of (logits, labels, lead times) triples
//! - [`metrics`]: ECE, SCE, thresholded calibration error, F1, reliability diagrams
//! - [`diffnet`]: a small reverse-mode network engine with FiLM conditioning
//! - [`calibrators`]: temperature, local temperature and selective scaling
//! - [`synth`]: synthetic forecasts with known calibration

pub mod calibrators;
pub mod dataset;
pub mod diffnet;
pub mod metrics;
pub mod synth;
pub mod tensor;

pub use dataset::{validate_dataset, Dataset, DatasetDims, DatasetError};
pub use tensor::{read_tensor, write_tensor, DType, Tensor, TensorData, TensorError};

//! Shape and range validation for (logits, labels, lead times) triples.

use thiserror::Error;

use crate::tensor::{DType, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("{tensor}: expected dtype {expected}, found {found}")]
    Dtype {
        tensor: &'static str,
        expected: &'static str,
        found: &'static str,
    },
    #[error("{tensor}: expected shape {expected}, found {found:?}")]
    Shape {
        tensor: &'static str,
        expected: String,
        found: Vec<usize>,
    },
    #[error("{tensor}: value {value} at index {index} outside 0..{limit}")]
    OutOfRange {
        tensor: &'static str,
        value: i64,
        index: usize,
        limit: usize,
    },
    #[error("{tensor}: non-finite value at index {index}")]
    NonFinite { tensor: &'static str, index: usize },
}

/// Sizes of a validated dataset: samples, classes, height, width, lead times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetDims {
    pub samples: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub lead_times: usize,
}

impl DatasetDims {
    pub fn pixels_per_sample(&self) -> usize {
        self.height * self.width
    }

    pub fn total_pixels(&self) -> usize {
        self.samples * self.pixels_per_sample()
    }
}

fn require_dtype(t: &Tensor, name: &'static str, want: DType) -> Result<(), DatasetError> {
    if t.dtype() != want {
        return Err(DatasetError::Dtype {
            tensor: name,
            expected: want.name(),
            found: t.dtype().name(),
        });
    }
    Ok(())
}

/// Checks that `scores` is an f32 tensor shaped [N,K,H,W] with finite entries.
pub fn validate_scores(scores: &Tensor, name: &'static str) -> Result<[usize; 4], DatasetError> {
    require_dtype(scores, name, DType::F32)?;
    let s = scores.shape();
    if s.len() != 4 {
        return Err(DatasetError::Shape {
            tensor: name,
            expected: "[N,K,H,W]".into(),
            found: s.to_vec(),
        });
    }
    let data = scores.as_f32().expect("dtype checked");
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(DatasetError::NonFinite {
            tensor: name,
            index,
        });
    }
    Ok([s[0], s[1], s[2], s[3]])
}

/// Validates a dataset triple. The number of lead times is one past the
/// largest lead-time index present.
pub fn validate_dataset(
    logits: &Tensor,
    labels: &Tensor,
    lead_times: &Tensor,
) -> Result<DatasetDims, DatasetError> {
    validate_named(logits, "logits", labels, lead_times)
}

pub(crate) fn validate_named(
    scores: &Tensor,
    scores_name: &'static str,
    labels: &Tensor,
    lead_times: &Tensor,
) -> Result<DatasetDims, DatasetError> {
    let [n, k, h, w] = validate_scores(scores, scores_name)?;
    require_dtype(labels, "labels", DType::I64)?;
    require_dtype(lead_times, "lead_times", DType::I64)?;
    if labels.shape() != [n, h, w] {
        return Err(DatasetError::Shape {
            tensor: "labels",
            expected: format!("[{n},{h},{w}]"),
            found: labels.shape().to_vec(),
        });
    }
    if lead_times.shape() != [n] {
        return Err(DatasetError::Shape {
            tensor: "lead_times",
            expected: format!("[{n}]"),
            found: lead_times.shape().to_vec(),
        });
    }
    let label_data = labels.as_i64().expect("dtype checked");
    if let Some((index, &value)) = label_data
        .iter()
        .enumerate()
        .find(|(_, &v)| v < 0 || v as usize >= k)
    {
        return Err(DatasetError::OutOfRange {
            tensor: "labels",
            value,
            index,
            limit: k,
        });
    }
    let lead_data = lead_times.as_i64().expect("dtype checked");
    if let Some((index, &value)) = lead_data.iter().enumerate().find(|(_, &v)| v < 0) {
        return Err(DatasetError::OutOfRange {
            tensor: "lead_times",
            value,
            index,
            limit: usize::MAX,
        });
    }
    let l = lead_data.iter().copied().max().unwrap_or(0) as usize + 1;
    Ok(DatasetDims {
        samples: n,
        classes: k,
        height: h,
        width: w,
        lead_times: l,
    })
}

/// An owned, validated dataset. `scores` are logits unless stated otherwise.
#[derive(Debug, Clone)]
pub struct Dataset {
    dims: DatasetDims,
    scores: Vec<f32>,
    labels: Vec<usize>,
    lead_times: Vec<usize>,
}

impl Dataset {
    pub fn new(logits: &Tensor, labels: &Tensor, lead_times: &Tensor) -> Result<Self, DatasetError> {
        let dims = validate_dataset(logits, labels, lead_times)?;
        Ok(Self::from_validated(dims, logits, labels, lead_times))
    }

    /// Builds a dataset whose score tensor holds class probabilities rather than logits.
    pub fn from_probabilities(
        probs: &Tensor,
        labels: &Tensor,
        lead_times: &Tensor,
    ) -> Result<Self, DatasetError> {
        let dims = validate_named(probs, "probs", labels, lead_times)?;
        Ok(Self::from_validated(dims, probs, labels, lead_times))
    }

    fn from_validated(dims: DatasetDims, scores: &Tensor, labels: &Tensor, lead: &Tensor) -> Self {
        Dataset {
            dims,
            scores: scores.as_f32().expect("validated").to_vec(),
            labels: labels
                .as_i64()
                .expect("validated")
                .iter()
                .map(|&v| v as usize)
                .collect(),
            lead_times: lead
                .as_i64()
                .expect("validated")
                .iter()
                .map(|&v| v as usize)
                .collect(),
        }
    }

    pub fn dims(&self) -> DatasetDims {
        self.dims
    }

    /// Flat [N,K,H,W] score buffer.
    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    /// Flat [N,H,W] class labels.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn lead_times(&self) -> &[usize] {
        &self.lead_times
    }

    /// Copies the K scores of pixel `pixel` of sample `sample` into `out`.
    pub fn pixel_scores(&self, sample: usize, pixel: usize, out: &mut [f64]) {
        gather_pixel(&self.scores, self.dims.classes, self.dims.pixels_per_sample(), sample, pixel, out);
    }

    pub fn label(&self, sample: usize, pixel: usize) -> usize {
        self.labels[sample * self.dims.pixels_per_sample() + pixel]
    }

    /// Dataset restricted to the given samples, in the given order.
    pub fn select(&self, samples: &[usize]) -> Dataset {
        let hw = self.dims.pixels_per_sample();
        let khw = self.dims.classes * hw;
        let mut scores = Vec::with_capacity(samples.len() * khw);
        let mut labels = Vec::with_capacity(samples.len() * hw);
        let mut lead_times = Vec::with_capacity(samples.len());
        for &s in samples {
            scores.extend_from_slice(&self.scores[s * khw..(s + 1) * khw]);
            labels.extend_from_slice(&self.labels[s * hw..(s + 1) * hw]);
            lead_times.push(self.lead_times[s]);
        }
        Dataset {
            dims: DatasetDims {
                samples: samples.len(),
                ..self.dims
            },
            scores,
            labels,
            lead_times,
        }
    }

    pub fn scores_tensor(&self) -> Tensor {
        let d = self.dims;
        Tensor::from_f32(vec![d.samples, d.classes, d.height, d.width], self.scores.clone())
            .expect("validated shape")
    }

    pub fn labels_tensor(&self) -> Tensor {
        let d = self.dims;
        Tensor::from_i64(
            vec![d.samples, d.height, d.width],
            self.labels.iter().map(|&v| v as i64).collect(),
        )
        .expect("validated shape")
    }

    pub fn lead_times_tensor(&self) -> Tensor {
        Tensor::from_i64(
            vec![self.dims.samples],
            self.lead_times.iter().map(|&v| v as i64).collect(),
        )
        .expect("validated shape")
    }
}

/// Reads one pixel's K-vector out of a flat [N,K,H,W] buffer.
pub fn gather_pixel(data: &[f32], classes: usize, hw: usize, sample: usize, pixel: usize, out: &mut [f64]) {
    let base = sample * classes * hw + pixel;
    for (k, o) in out.iter_mut().enumerate().take(classes) {
        *o = data[base + k * hw] as f64;
    }
}

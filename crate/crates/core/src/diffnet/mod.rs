//! A small reverse-mode engine for the two calibrator networks.
//!
//! Networks are sequential stacks of layers operating on one sample's
//! feature map `[C, H, W]` at a time. Dense layers act on the channel vector
//! at every spatial position, so a per-pixel MLP and a convolutional trunk
//! share the same machinery. FiLM layers modulate channels with a scale and
//! shift computed from a learned lead-time embedding.
//!
//! Everything is generic over the scalar type: training runs in `f32`,
//! gradient checks cast the same network to `f64`.

mod gradcheck;
mod io;
mod loss;
mod network;
mod optim;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;
use thiserror::Error;

pub use gradcheck::{finite_difference_check, FdReport};
pub use io::{load_network, save_network, NETWORK_MANIFEST};
pub use loss::{
    loss_and_gradients, Batch, BinaryCrossEntropy, Objective, SoftmaxCrossEntropy, TemperedCrossEntropy,
};
pub use network::{FilmSpec, Gradients, LayerSpec, Network, NetworkSpec, Parameter, Tape};
pub use optim::{AdamConfig, OptimizerState};

pub trait Real: Float + AddAssign + Sum + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("layer {layer} ({kind}): {detail}")]
    Shape {
        layer: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("lead time {lead_time} outside the {lead_times} embedded lead times")]
    LeadTime { lead_time: usize, lead_times: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("target mismatch: {0}")]
    Target(String),
    #[error("network manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One sample's activations, channel-major `[C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<S>,
}

impl<S: Real> FeatureMap<S> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), channels * height * width, "feature map size");
        FeatureMap {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(channels, height, width, vec![S::zero(); channels * height * width])
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: S) -> Self {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[S] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn cast<T: Real>(&self) -> FeatureMap<T> {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }
}

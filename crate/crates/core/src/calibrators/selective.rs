use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lts::EMBEDDING_DIM;
use super::train::{train, TrainSettings, TrainSummary};
use super::{check_logits, golden_section, softplus, tempered_nll, CalibrationError};
use crate::dataset::{gather_pixel, Dataset};
use crate::diffnet::{BinaryCrossEntropy, FeatureMap, FilmSpec, LayerSpec, Network, NetworkSpec};
use crate::metrics::{argmax, map_pixels, softmax, softmax_tempered, Confusion};
use crate::tensor::Tensor;

/// One held-out sample per this many samples is kept back for choosing the
/// flag threshold and the temperature.
pub const HELD_OUT_RATIO: usize = 111;
/// Search interval for `a` in `T = 1 + softplus(a)`.
const SCALE_BOUNDS: (f64, f64) = (-10.0, 19.0);
const SCALE_TOLERANCE: f64 = 1e-4;
const INPUT_SCALE: f64 = 0.2;

/// Misprediction classifier plus the temperature applied where it fires.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveScaler {
    pub network: Network<f32>,
    /// Pixels whose classifier output exceeds this are rescaled.
    pub threshold: f64,
    /// Unconstrained parameter `a`; the temperature is `1 + softplus(a)`.
    pub scale_parameter: f64,
}

impl SelectiveScaler {
    pub fn temperature(&self) -> f64 {
        1.0 + softplus(self.scale_parameter)
    }

    pub fn classes(&self) -> usize {
        self.network.spec().input_channels
    }

    /// Classifier output per pixel, flat [N*H*W].
    pub fn scores(&self, logits: &Tensor, lead_times: &[usize]) -> Result<Vec<f32>, CalibrationError> {
        let [_, k, h, w] = check_logits(logits, lead_times, self.classes())?;
        let data = logits.as_f32().expect("validated");
        let plane = k * h * w;
        let mut out = Vec::with_capacity(lead_times.len() * h * w);
        for (s, &lead) in lead_times.iter().enumerate() {
            let x = ss_input(&data[s * plane..(s + 1) * plane], k, h, w);
            out.extend(self.network.forward(&x, lead)?.data);
        }
        Ok(out)
    }

    pub fn flags(&self, logits: &Tensor, lead_times: &[usize]) -> Result<Vec<bool>, CalibrationError> {
        Ok(self
            .scores(logits, lead_times)?
            .iter()
            .map(|&s| s as f64 > self.threshold)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsOptions {
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for SsOptions {
    fn default() -> Self {
        SsOptions {
            epochs: 5,
            seed: 0,
            batch_size: 8,
            learning_rate: 2e-3,
        }
    }
}

/// Per-pixel MLP K -> 64 -> 32 -> 1 with FiLM on both hidden layers and
/// sigmoid activations throughout.
pub fn ss_network_spec(classes: usize, lead_times: usize) -> NetworkSpec {
    NetworkSpec {
        input_channels: classes,
        layers: vec![
            LayerSpec::Dense {
                inputs: classes,
                outputs: 64,
            },
            LayerSpec::Film { channels: 64 },
            LayerSpec::Sigmoid,
            LayerSpec::Dense { inputs: 64, outputs: 32 },
            LayerSpec::Film { channels: 32 },
            LayerSpec::Sigmoid,
            LayerSpec::Dense { inputs: 32, outputs: 1 },
            LayerSpec::Sigmoid,
        ],
        film: Some(FilmSpec {
            lead_times,
            embedding_dim: EMBEDDING_DIM,
        }),
    }
}

/// Classifier input: logits shifted so the top class sits at zero, scaled.
pub fn ss_input(logits: &[f32], classes: usize, height: usize, width: usize) -> FeatureMap<f32> {
    let hw = height * width;
    let mut data = vec![0f32; classes * hw];
    for p in 0..hw {
        let max = (0..classes).map(|c| logits[c * hw + p]).fold(f32::NEG_INFINITY, f32::max) as f64;
        for c in 0..classes {
            data[c * hw + p] = ((logits[c * hw + p] as f64 - max) * INPUT_SCALE) as f32;
        }
    }
    FeatureMap::new(classes, height, width, data)
}

/// `argmax(z) != label` for every pixel, flat [N*H*W].
pub fn misprediction_targets(ds: &Dataset) -> Vec<bool> {
    let d = ds.dims();
    let hw = d.pixels_per_sample();
    let mut z = vec![0.0; d.classes];
    let mut out = Vec::with_capacity(d.total_pixels());
    for s in 0..d.samples {
        for p in 0..hw {
            ds.pixel_scores(s, p, &mut z);
            out.push(argmax(&z) != ds.label(s, p));
        }
    }
    out
}

/// Flag threshold on the grid 0.01..=0.99 with the best misprediction F1;
/// ties go to the lowest threshold.
fn choose_threshold(scores: &[f32], targets: &[bool]) -> f64 {
    let mut best = (0.5, f64::NEG_INFINITY);
    for i in 1..=99 {
        let theta = i as f64 / 100.0;
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(targets) {
            c.add(s as f64 > theta, y);
        }
        let f1 = c.f1();
        if f1 > best.1 {
            best = (theta, f1);
        }
    }
    best.0
}

pub fn fit_ss(ds: &Dataset, options: &SsOptions) -> Result<(SelectiveScaler, TrainSummary), CalibrationError> {
    let d = ds.dims();
    if d.samples < 2 {
        return Err(CalibrationError::Unsupported(
            "selective scaling needs at least two samples to split".into(),
        ));
    }
    let hw = d.pixels_per_sample();
    let mut order: Vec<usize> = (0..d.samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(3);
    order.shuffle(&mut rng);
    let held_count = ((d.samples as f64 / HELD_OUT_RATIO as f64).round() as usize).max(1);
    let (held, fit) = order.split_at(held_count);
    let mut held = held.to_vec();
    let mut fit = fit.to_vec();
    held.sort_unstable();
    fit.sort_unstable();

    let targets = misprediction_targets(ds);
    let positives = fit
        .iter()
        .flat_map(|&s| &targets[s * hw..(s + 1) * hw])
        .filter(|&&t| t)
        .count();
    if positives == 0 {
        return Err(CalibrationError::NoMispredictions);
    }
    let total = fit.len() * hw;
    let negatives = total - positives;
    let weight = |count: usize| if count == 0 { 0.0 } else { total as f64 / (2.0 * count as f64) };
    let objective = BinaryCrossEntropy {
        targets: &targets,
        positions: hw,
        positive_weight: weight(positives),
        negative_weight: weight(negatives),
    };
    let plane = d.classes * hw;
    let inputs: Vec<FeatureMap<f32>> = ds
        .scores()
        .chunks_exact(plane)
        .map(|z| ss_input(z, d.classes, d.height, d.width))
        .collect();
    let mut network = Network::new(ss_network_spec(d.classes, d.lead_times), options.seed)?;
    let summary = train(
        &mut network,
        &inputs,
        ds.lead_times(),
        &fit,
        &objective,
        TrainSettings {
            epochs: options.epochs,
            batch_size: options.batch_size,
            learning_rate: options.learning_rate,
            seed: options.seed,
        },
    )?;

    let mut scores = Vec::with_capacity(held.len() * hw);
    let mut held_targets = Vec::with_capacity(held.len() * hw);
    for &s in &held {
        scores.extend(network.forward(&inputs[s], ds.lead_times()[s])?.data);
        held_targets.extend_from_slice(&targets[s * hw..(s + 1) * hw]);
    }
    let threshold = choose_threshold(&scores, &held_targets);

    let mut flagged: Vec<(Vec<f64>, usize)> = Vec::new();
    for (i, &s) in held.iter().enumerate() {
        for p in 0..hw {
            if scores[i * hw + p] as f64 > threshold {
                let mut z = vec![0.0; d.classes];
                gather_pixel(ds.scores(), d.classes, hw, s, p, &mut z);
                flagged.push((z, ds.label(s, p)));
            }
        }
    }
    let scale_parameter = if flagged.is_empty() {
        log::warn!("no held-out pixel is flagged; selective temperature left near 1");
        SCALE_BOUNDS.0
    } else {
        let nll = |a: f64| {
            let t = 1.0 + softplus(a);
            flagged.iter().map(|(z, y)| tempered_nll(z, *y, t)).sum::<f64>() / flagged.len() as f64
        };
        golden_section(nll, SCALE_BOUNDS.0, SCALE_BOUNDS.1, SCALE_TOLERANCE)
    };
    log::info!(
        "selective scaling: {} fit / {} held-out samples, threshold {threshold}, {} flagged held-out pixels",
        fit.len(),
        held.len(),
        flagged.len()
    );
    Ok((
        SelectiveScaler {
            network,
            threshold,
            scale_parameter,
        },
        summary,
    ))
}

/// `softmax(z / temperature)` where `flags` is set, `softmax(z)` elsewhere.
pub fn apply_with_flags(logits: &Tensor, flags: &[bool], temperature: f64) -> Result<Tensor, CalibrationError> {
    let [n, k, h, w] = crate::dataset::validate_scores(logits, "logits")?;
    let hw = h * w;
    if flags.len() != n * hw {
        return Err(CalibrationError::Unsupported(format!(
            "{} flags for {} pixels",
            flags.len(),
            n * hw
        )));
    }
    Ok(map_pixels(logits, k, |s, p, z, out| {
        if flags[s * hw + p] {
            softmax_tempered(z, temperature, out)
        } else {
            softmax(z, out)
        }
    }))
}

pub fn apply_ss(cal: &SelectiveScaler, logits: &Tensor, lead_times: &[usize]) -> Result<Tensor, CalibrationError> {
    let flags = cal.flags(logits, lead_times)?;
    apply_with_flags(logits, &flags, cal.temperature())
}

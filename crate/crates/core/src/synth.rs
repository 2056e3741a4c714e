//! Synthetic forecasts whose calibration is known by construction.
//!
//! Each pixel draws a true class distribution `q` from a Dirichlet prior and
//! a label `y ~ q`. The emitted logits are `ln(q) / tau`, so with `tau = 1`
//! the forecast is perfectly calibrated and the NLL-optimal global
//! temperature for a uniform `tau` is `1 / tau`.
//!
//! Randomness is keyed by (seed, sample, pixel): every pixel owns a ChaCha
//! stream, so output never depends on generation order.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::RateBinning;
use crate::tensor::{write_tensor, Tensor, TensorError};

pub const LOGITS_FILE: &str = "logits.fct1";
pub const LABELS_FILE: &str = "labels.fct1";
pub const LEAD_TIMES_FILE: &str = "lead_times.fct1";
pub const SCENARIO_FILE: &str = "scenario.json";

/// Smallest class probability; keeps logits finite.
pub const PROB_FLOOR: f64 = 1e-6;

pub const DEFAULT_TAU_BAD: f64 = 0.2;
pub const DEFAULT_TRIGGER_GAP: f64 = 0.3;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Distortion {
    None,
    /// One temperature for every pixel.
    Temperature { tau: f64 },
    /// One temperature per lead time.
    Schedule { taus: Vec<f64> },
    /// Sharpen by `tau_bad` only where the top-two gap of `ln q` is below `gap`.
    PlantedCorruption { tau_bad: f64, gap: f64 },
}

impl Distortion {
    pub fn planted_default() -> Self {
        Distortion::PlantedCorruption {
            tau_bad: DEFAULT_TAU_BAD,
            gap: DEFAULT_TRIGGER_GAP,
        }
    }

    /// Evenly spaced per-lead temperatures from `first` to `last`.
    pub fn linear_schedule(lead_times: usize, first: f64, last: f64) -> Self {
        let taus = if lead_times == 1 {
            vec![first]
        } else {
            (0..lead_times)
                .map(|l| first + (last - first) * l as f64 / (lead_times - 1) as f64)
                .collect()
        };
        Distortion::Schedule { taus }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScenario {
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub lead_times: usize,
    /// Dirichlet concentration, one entry per class.
    pub alpha: Vec<f64>,
    pub distortion: Distortion,
    pub seed: u64,
}

/// Concentration skewed toward the dry class: 2.0 for class 0, then a
/// linear taper from 0.5 down to 0.1 over the remaining classes.
pub fn default_alpha(classes: usize) -> Vec<f64> {
    let rest = classes.saturating_sub(1);
    let mut alpha = vec![2.0];
    alpha.extend((0..rest).map(|i| {
        if rest == 1 {
            0.5
        } else {
            0.5 - 0.4 * i as f64 / (rest - 1) as f64
        }
    }));
    alpha.truncate(classes);
    alpha
}

impl SynthScenario {
    pub fn new(
        samples: usize,
        height: usize,
        width: usize,
        classes: usize,
        lead_times: usize,
        distortion: Distortion,
        seed: u64,
    ) -> Self {
        SynthScenario {
            samples,
            height,
            width,
            classes,
            lead_times,
            alpha: default_alpha(classes),
            distortion,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.samples == 0 || self.height == 0 || self.width == 0 {
            return bad("samples, height and width must be positive".into());
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.lead_times == 0 {
            return bad("need at least one lead time".into());
        }
        if self.alpha.len() != self.classes || self.alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return bad(format!("alpha must hold {} positive values", self.classes));
        }
        let positive = |t: f64| t.is_finite() && t > 0.0;
        match &self.distortion {
            Distortion::None => {}
            Distortion::Temperature { tau } if !positive(*tau) => return bad(format!("tau {tau} must be > 0")),
            Distortion::Schedule { taus } => {
                if taus.len() != self.lead_times {
                    return bad(format!(
                        "schedule has {} temperatures for {} lead times",
                        taus.len(),
                        self.lead_times
                    ));
                }
                if !taus.iter().copied().all(positive) {
                    return bad("schedule temperatures must be > 0".into());
                }
            }
            Distortion::PlantedCorruption { tau_bad, gap } => {
                if !positive(*tau_bad) {
                    return bad(format!("tau_bad {tau_bad} must be > 0"));
                }
                if !(gap.is_finite() && *gap >= 0.0) {
                    return bad(format!("trigger gap {gap} must be >= 0"));
                }
            }
            Distortion::Temperature { .. } => {}
        }
        Ok(())
    }

    pub fn lead_time_of(&self, sample: usize) -> usize {
        sample % self.lead_times
    }
}

/// True when the two largest logits are closer than `gap`.
pub fn planted_corruption_trigger(logits: &[f64], gap: f64) -> bool {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &z in logits {
        if z > first {
            second = first;
            first = z;
        } else if z > second {
            second = z;
        }
    }
    first - second < gap
}

/// Generated tensors plus the true distributions and corruption flags.
#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub logits: Tensor,
    pub labels: Tensor,
    pub lead_times: Tensor,
    /// True class distributions `q`, [N,K,H,W].
    pub truth: Tensor,
    /// Per-pixel flag, set where planted corruption fired, [N,H,W].
    pub corrupted: Vec<bool>,
}

impl SyntheticSet {
    pub fn corruption_rate(&self) -> f64 {
        self.corrupted.iter().filter(|&&c| c).count() as f64 / self.corrupted.len() as f64
    }

    /// Writes the three tensors and `scenario.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>, scenario: &SynthScenario) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        write_tensor(&self.logits, dir.join(LOGITS_FILE))?;
        write_tensor(&self.labels, dir.join(LABELS_FILE))?;
        write_tensor(&self.lead_times, dir.join(LEAD_TIMES_FILE))?;
        let path = dir.join(SCENARIO_FILE);
        fs::write(&path, scenario_json(scenario)).map_err(io(&path))
    }
}

#[derive(Serialize)]
struct ScenarioFile<'a> {
    #[serde(flatten)]
    scenario: &'a SynthScenario,
    rate_edges_mm_h: Vec<f64>,
}

/// `scenario.json` contents: every scenario field plus the rate edges.
pub fn scenario_json(scenario: &SynthScenario) -> String {
    let edges = RateBinning::for_classes(scenario.classes)
        .map(|b| b.edges().to_vec())
        .unwrap_or_default();
    let file = ScenarioFile {
        scenario,
        rate_edges_mm_h: edges,
    };
    serde_json::to_string_pretty(&file).expect("scenario serializes") + "\n"
}

fn sample_distribution(rng: &mut ChaCha8Rng, gammas: &[Gamma<f64>], q: &mut [f64]) {
    let mut sum = 0.0;
    for (qk, g) in q.iter_mut().zip(gammas) {
        *qk = g.sample(rng);
        sum += *qk;
    }
    if !(sum > 0.0 && sum.is_finite()) {
        // every draw underflowed; fall back to uniform
        let k = q.len() as f64;
        q.iter_mut().for_each(|v| *v = 1.0 / k);
        return;
    }
    q.iter_mut().for_each(|v| *v = (*v / sum).max(PROB_FLOOR));
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
}

fn sample_label(rng: &mut ChaCha8Rng, q: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in q.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    q.len() - 1
}

pub fn generate(scenario: &SynthScenario) -> Result<SyntheticSet, SynthError> {
    scenario.validate()?;
    let (n, k, h, w) = (scenario.samples, scenario.classes, scenario.height, scenario.width);
    let hw = h * w;
    let gammas: Vec<Gamma<f64>> = scenario
        .alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("validated alpha"))
        .collect();
    let base = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut logits = vec![0f32; n * k * hw];
    let mut truth = vec![0f32; n * k * hw];
    let mut labels = vec![0i64; n * hw];
    let mut corrupted = vec![false; n * hw];
    let mut q = vec![0.0; k];
    let mut clean = vec![0.0; k];
    for sample in 0..n {
        let lead = scenario.lead_time_of(sample);
        for pixel in 0..hw {
            let mut rng = base.clone();
            rng.set_stream(((sample as u64) << 32) | pixel as u64);
            sample_distribution(&mut rng, &gammas, &mut q);
            labels[sample * hw + pixel] = sample_label(&mut rng, &q) as i64;
            for (c, &qc) in clean.iter_mut().zip(&q) {
                *c = qc.ln();
            }
            let tau = match &scenario.distortion {
                Distortion::None => 1.0,
                Distortion::Temperature { tau } => *tau,
                Distortion::Schedule { taus } => taus[lead],
                Distortion::PlantedCorruption { tau_bad, gap } => {
                    if planted_corruption_trigger(&clean, *gap) {
                        corrupted[sample * hw + pixel] = true;
                        *tau_bad
                    } else {
                        1.0
                    }
                }
            };
            let base_index = sample * k * hw + pixel;
            for c in 0..k {
                logits[base_index + c * hw] = (clean[c] / tau) as f32;
                truth[base_index + c * hw] = q[c] as f32;
            }
        }
    }
    Ok(SyntheticSet {
        logits: Tensor::from_f32(vec![n, k, h, w], logits)?,
        labels: Tensor::from_i64(vec![n, h, w], labels)?,
        lead_times: Tensor::from_i64(
            vec![n],
            (0..n).map(|s| scenario.lead_time_of(s) as i64).collect(),
        )?,
        truth: Tensor::from_f32(vec![n, k, h, w], truth)?,
        corrupted,
    })
}

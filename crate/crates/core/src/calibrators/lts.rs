use super::train::{train, TrainSettings, TrainSummary};
use super::{check_logits, CalibrationError};
use crate::dataset::Dataset;
use crate::diffnet::{FeatureMap, FilmSpec, LayerSpec, Network, NetworkSpec, TemperedCrossEntropy};
use crate::metrics::{map_pixels, softmax_tempered};
use crate::tensor::Tensor;

const WIDTH: usize = 8;
pub(crate) const EMBEDDING_DIM: usize = 8;
const INPUT_SCALE: f64 = 0.1;

/// Per-pixel temperature regressor; the network outputs `t` and the
/// temperature is `exp(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtsRegressor {
    pub network: Network<f32>,
}

impl LtsRegressor {
    pub fn conditioned(&self) -> bool {
        self.network.spec().film.is_some()
    }

    pub fn classes(&self) -> usize {
        self.network.spec().input_channels
    }

    /// Temperatures as a [N,1,H,W] tensor.
    pub fn temperature_map(&self, logits: &Tensor, lead_times: &[usize]) -> Result<Tensor, CalibrationError> {
        let [n, k, h, w] = check_logits(logits, lead_times, self.classes())?;
        check_spatial(h, w)?;
        let data = logits.as_f32().expect("validated");
        let plane = k * h * w;
        let mut out = Vec::with_capacity(n * h * w);
        for (s, &lead) in lead_times.iter().enumerate() {
            let x = lts_input(&data[s * plane..(s + 1) * plane], k, h, w);
            let t = self.network.forward(&x, lead)?;
            out.extend(t.data.iter().map(|v| v.exp()));
        }
        Ok(Tensor::from_f32(vec![n, 1, h, w], out)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtsOptions {
    pub conditioned: bool,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for LtsOptions {
    fn default() -> Self {
        LtsOptions {
            conditioned: true,
            epochs: 5,
            seed: 0,
            batch_size: 8,
            learning_rate: 5e-3,
        }
    }
}

/// conv3x3(K->8), two pool stages each followed by conv3x3 and FiLM, two
/// upsampling stages, then a 1x1 head to one channel. There are no
/// activations, so the map from input to `t` is smooth. The unconditioned
/// variant drops the FiLM layers and keeps every other shape.
pub fn lts_network_spec(classes: usize, lead_times: usize, conditioned: bool) -> NetworkSpec {
    let conv = |inputs, outputs, kernel| LayerSpec::Conv2d {
        inputs,
        outputs,
        kernel,
    };
    let film = |v: &mut Vec<LayerSpec>| {
        if conditioned {
            v.push(LayerSpec::Film { channels: WIDTH });
        }
    };
    let mut layers = vec![conv(classes, WIDTH, 3), LayerSpec::AvgPool2, conv(WIDTH, WIDTH, 3)];
    film(&mut layers);
    layers.extend([LayerSpec::AvgPool2, conv(WIDTH, WIDTH, 3)]);
    film(&mut layers);
    layers.extend([LayerSpec::Upsample2, LayerSpec::Upsample2, conv(WIDTH, 1, 1)]);
    NetworkSpec {
        input_channels: classes,
        layers,
        film: conditioned.then_some(FilmSpec {
            lead_times,
            embedding_dim: EMBEDDING_DIM,
        }),
    }
}

/// Network input for one sample's [K,H,W] logits: per-pixel mean-centred
/// and scaled to order one.
pub fn lts_input(logits: &[f32], classes: usize, height: usize, width: usize) -> FeatureMap<f32> {
    let hw = height * width;
    let mut data = vec![0f32; classes * hw];
    for p in 0..hw {
        let mean = (0..classes).map(|c| logits[c * hw + p] as f64).sum::<f64>() / classes as f64;
        for c in 0..classes {
            data[c * hw + p] = ((logits[c * hw + p] as f64 - mean) * INPUT_SCALE) as f32;
        }
    }
    FeatureMap::new(classes, height, width, data)
}

fn check_spatial(height: usize, width: usize) -> Result<(), CalibrationError> {
    if !height.is_multiple_of(4) || !width.is_multiple_of(4) {
        return Err(CalibrationError::Unsupported(format!(
            "local temperature scaling needs height and width divisible by 4, got {height}x{width}"
        )));
    }
    Ok(())
}

pub fn fit_lts(ds: &Dataset, options: &LtsOptions) -> Result<(LtsRegressor, TrainSummary), CalibrationError> {
    let d = ds.dims();
    check_spatial(d.height, d.width)?;
    let hw = d.pixels_per_sample();
    let plane = d.classes * hw;
    let inputs: Vec<FeatureMap<f32>> = ds
        .scores()
        .chunks_exact(plane)
        .map(|z| lts_input(z, d.classes, d.height, d.width))
        .collect();
    let objective = TemperedCrossEntropy {
        logits: ds.scores(),
        labels: ds.labels(),
        classes: d.classes,
        positions: hw,
    };
    let spec = lts_network_spec(d.classes, d.lead_times, options.conditioned);
    let mut network = Network::new(spec, options.seed)?;
    let ids: Vec<usize> = (0..d.samples).collect();
    let summary = train(
        &mut network,
        &inputs,
        ds.lead_times(),
        &ids,
        &objective,
        TrainSettings {
            epochs: options.epochs,
            batch_size: options.batch_size,
            learning_rate: options.learning_rate,
            seed: options.seed,
        },
    )?;
    Ok((LtsRegressor { network }, summary))
}

pub fn apply_lts(cal: &LtsRegressor, logits: &Tensor, lead_times: &[usize]) -> Result<Tensor, CalibrationError> {
    let temps = cal.temperature_map(logits, lead_times)?;
    let temps = temps.as_f32().expect("f32");
    let [_, k, h, w] = check_logits(logits, lead_times, cal.classes())?;
    let hw = h * w;
    Ok(map_pixels(logits, k, |s, p, z, out| {
        softmax_tempered(z, temps[s * hw + p] as f64, out)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrators::train::mean_loss;
    use crate::diffnet::{finite_difference_check, Batch};
    use crate::metrics::{argmax, class_probabilities};
    use crate::synth::{generate, Distortion, SynthScenario};

    fn synth(n: usize, distortion: Distortion, seed: u64) -> Dataset {
        let set = generate(&SynthScenario::new(n, 8, 8, 6, 3, distortion, seed)).unwrap();
        Dataset::new(&set.logits, &set.labels, &set.lead_times).unwrap()
    }

    #[test]
    fn variants_share_trunk_shapes() {
        let a = Network::<f32>::new(lts_network_spec(12, 6, true), 0).unwrap();
        let b = Network::<f32>::new(lts_network_spec(12, 6, false), 0).unwrap();
        let shapes = |n: &Network<f32>| -> Vec<Vec<usize>> {
            n.params()
                .iter()
                .filter(|p| p.name.ends_with(".weight") && !p.name.contains("gamma") && !p.name.contains("beta"))
                .map(|p| p.shape.clone())
                .collect()
        };
        assert_eq!(shapes(&a), shapes(&b));
        assert!(a.parameter_count() > b.parameter_count());
    }

    #[test]
    fn conditioning_leaves_initial_loss_unchanged() {
        let ds = synth(6, Distortion::Temperature { tau: 0.7 }, 1);
        let d = ds.dims();
        let inputs: Vec<_> = ds
            .scores()
            .chunks_exact(d.classes * 64)
            .map(|z| lts_input(z, d.classes, 8, 8))
            .collect();
        let obj = TemperedCrossEntropy {
            logits: ds.scores(),
            labels: ds.labels(),
            classes: d.classes,
            positions: 64,
        };
        let ids: Vec<usize> = (0..6).collect();
        let losses: Vec<f64> = [false, true]
            .iter()
            .map(|&c| {
                let net = Network::new(lts_network_spec(d.classes, 3, c), 9).unwrap();
                mean_loss(&net, &inputs, ds.lead_times(), &ids, &obj).unwrap()
            })
            .collect();
        assert_eq!(losses[0], losses[1]);
    }

    #[test]
    fn zero_output_is_identity() {
        let ds = synth(3, Distortion::None, 2);
        let spec = lts_network_spec(6, 3, true);
        let cal = LtsRegressor {
            network: Network::zeroed(spec, 0).unwrap(),
        };
        let logits = ds.scores_tensor();
        let p = apply_lts(&cal, &logits, ds.lead_times()).unwrap();
        let q = class_probabilities(&logits).unwrap();
        for (a, b) in p.as_f32().unwrap().iter().zip(q.as_f32().unwrap()) {
            assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn gradients_match_differences_at_init() {
        let ds = synth(2, Distortion::Temperature { tau: 0.6 }, 4);
        let d = ds.dims();
        let net = Network::<f32>::new(lts_network_spec(d.classes, 3, true), 5).unwrap().cast::<f64>();
        let inputs: Vec<FeatureMap<f64>> = ds
            .scores()
            .chunks_exact(d.classes * 64)
            .map(|z| lts_input(z, d.classes, 8, 8).cast())
            .collect();
        let obj = TemperedCrossEntropy {
            logits: ds.scores(),
            labels: ds.labels(),
            classes: d.classes,
            positions: 64,
        };
        let batch = Batch {
            inputs: inputs.iter().collect(),
            lead_times: ds.lead_times()[..2].to_vec(),
            sample_ids: vec![0, 1],
        };
        let r = finite_difference_check(&net, &batch, &obj, 300, 1e-4, 0).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn fit_is_deterministic_and_preserves_argmax() {
        let ds = synth(8, Distortion::Temperature { tau: 0.5 }, 3);
        let opts = LtsOptions {
            epochs: 2,
            ..LtsOptions::default()
        };
        let (a, sa) = fit_lts(&ds, &opts).unwrap();
        let (b, sb) = fit_lts(&ds, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert!(sa.final_loss < sa.initial_loss);
        let logits = ds.scores_tensor();
        let p = apply_lts(&a, &logits, ds.lead_times()).unwrap();
        let (pz, pp) = (logits.as_f32().unwrap(), p.as_f32().unwrap());
        let (k, hw) = (6, 64);
        for s in 0..8 {
            for px in 0..hw {
                let col = |d: &[f32]| (0..k).map(|c| d[s * k * hw + c * hw + px] as f64).collect::<Vec<_>>();
                let (z, q) = (col(pz), col(pp));
                assert_eq!(argmax(&z), argmax(&q));
                assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_odd_sizes_and_wrong_classes() {
        let set = generate(&SynthScenario::new(2, 6, 6, 6, 1, Distortion::None, 0)).unwrap();
        let ds = Dataset::new(&set.logits, &set.labels, &set.lead_times).unwrap();
        assert!(matches!(
            fit_lts(&ds, &LtsOptions::default()),
            Err(CalibrationError::Unsupported(_))
        ));
        let cal = LtsRegressor {
            network: Network::new(lts_network_spec(12, 1, false), 0).unwrap(),
        };
        let good = synth(1, Distortion::None, 0);
        assert!(matches!(
            apply_lts(&cal, &good.scores_tensor(), &[0]),
            Err(CalibrationError::ClassMismatch { expected: 12, found: 6 })
        ));
    }
}

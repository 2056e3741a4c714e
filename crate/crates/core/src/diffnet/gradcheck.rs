use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_and_gradients, Batch, NetError, Network, Objective};

pub const FD_STEP: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (parameter name, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub tolerance: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares reverse-mode gradients against central differences with step
/// 1e-3 on up to `max_checks` randomly chosen parameter entries.
pub fn finite_difference_check(
    net: &Network<f64>,
    batch: &Batch<f64>,
    objective: &dyn Objective<f64>,
    max_checks: usize,
    tolerance: f64,
    seed: u64,
) -> Result<FdReport, NetError> {
    let (_, grads) = loss_and_gradients(net, batch, objective)?;
    let coords: Vec<(usize, usize)> = net
        .params()
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.value.len()).map(move |i| (pi, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = if coords.len() <= max_checks {
        (0..coords.len()).collect()
    } else {
        let mut v = sample(&mut rng, coords.len(), max_checks).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = net.clone();
    let mut report = FdReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance,
    };
    for ci in picked {
        let (pi, i) = coords[ci];
        let original = probe.params()[pi].value[i];
        probe.params_mut()[pi].value[i] = original + FD_STEP;
        let (plus, _) = loss_and_gradients(&probe, batch, objective)?;
        probe.params_mut()[pi].value[i] = original - FD_STEP;
        let (minus, _) = loss_and_gradients(&probe, batch, objective)?;
        probe.params_mut()[pi].value[i] = original;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = grads.0[pi][i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((net.params()[pi].name.clone(), i, analytic, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{FeatureMap, FilmSpec, LayerSpec, NetworkSpec, SoftmaxCrossEntropy};

    /// 0.5 * sum of squared outputs; quadratic in the weights of a linear network.
    struct HalfSquare;

    impl Objective<f64> for HalfSquare {
        fn sample_loss(&self, _: usize, out: &FeatureMap<f64>) -> Result<(f64, FeatureMap<f64>, usize), NetError> {
            let loss = out.data.iter().map(|v| 0.5 * v * v).sum();
            Ok((loss, out.clone(), out.data.len()))
        }
    }

    fn input(c: usize, h: usize, w: usize, phase: f64) -> FeatureMap<f64> {
        FeatureMap::new(c, h, w, (0..c * h * w).map(|i| (i as f64 * 0.71 + phase).cos()).collect())
    }

    #[test]
    fn linear_network_is_exact() {
        let spec = NetworkSpec {
            input_channels: 3,
            layers: vec![LayerSpec::Dense { inputs: 3, outputs: 2 }],
            film: None,
        };
        let net = Network::<f64>::new(spec, 1).unwrap();
        let x = input(3, 2, 2, 0.0);
        let batch = Batch {
            inputs: vec![&x],
            lead_times: vec![0],
            sample_ids: vec![0],
        };
        let r = finite_difference_check(&net, &batch, &HalfSquare, 100, 1e-9, 0).unwrap();
        assert_eq!(r.checked, 8);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn conv_film_stack_matches_differences() {
        let spec = NetworkSpec {
            input_channels: 2,
            layers: vec![
                LayerSpec::Conv2d {
                    inputs: 2,
                    outputs: 4,
                    kernel: 3,
                },
                LayerSpec::AvgPool2,
                LayerSpec::Film { channels: 4 },
                LayerSpec::Sigmoid,
                LayerSpec::Upsample2,
                LayerSpec::Conv2d {
                    inputs: 4,
                    outputs: 3,
                    kernel: 1,
                },
            ],
            film: Some(FilmSpec {
                lead_times: 2,
                embedding_dim: 3,
            }),
        };
        let mut net = Network::<f64>::new(spec, 4).unwrap();
        // move FiLM off its identity point so every head gets a gradient
        for p in net.params_mut() {
            if p.name.contains("gamma_weight") || p.name.contains("beta_weight") {
                p.value.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * (i as f64).sin());
            }
        }
        let a = input(2, 4, 4, 0.3);
        let b = input(2, 4, 4, 1.1);
        let targets: Vec<usize> = (0..32).map(|i| i % 3).collect();
        let obj = SoftmaxCrossEntropy {
            targets: &targets,
            classes: 3,
            positions: 16,
        };
        let batch = Batch {
            inputs: vec![&a, &b],
            lead_times: vec![0, 1],
            sample_ids: vec![0, 1],
        };
        let r = finite_difference_check(&net, &batch, &obj, 10_000, 1e-4, 0).unwrap();
        assert_eq!(r.checked, net.parameter_count());
        assert!(r.passed(), "{r:?}");
    }
}

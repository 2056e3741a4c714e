//! Softmax and exceedance transforms over [N,K,H,W] tensors.

use super::{MetricsError, RateBinning};
use crate::dataset::{gather_pixel, validate_scores, DatasetError};
use crate::tensor::{DType, Tensor};

/// Softmax of `logits / temperature`, computed with max subtraction.
pub fn softmax_tempered(logits: &[f64], temperature: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = ((z - max) / temperature).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub fn softmax(logits: &[f64], out: &mut [f64]) {
    softmax_tempered(logits, 1.0, out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Exceedance of each threshold: `out[k] = sum of probs[j] for j > k`.
/// Accumulated from the top class down, so the result is non-increasing in k.
pub fn exceedance_from_probs(probs: &[f64], out: &mut [f64]) {
    let k = probs.len();
    debug_assert_eq!(out.len() + 1, k);
    let mut acc = 0.0;
    for t in (0..k - 1).rev() {
        acc += probs[t + 1];
        out[t] = acc.clamp(0.0, 1.0);
    }
}

/// Applies `f` to every pixel's K-vector of a [N,K,H,W] f32 tensor and writes
/// the M-vector it produces into a [N,M,H,W] f32 tensor.
pub(crate) fn map_pixels<F>(input: &Tensor, out_channels: usize, mut f: F) -> Tensor
where
    F: FnMut(usize, usize, &[f64], &mut [f64]),
{
    let s = input.shape();
    let (n, k, h, w) = (s[0], s[1], s[2], s[3]);
    let hw = h * w;
    let data = input.as_f32().expect("f32 tensor");
    let mut out = vec![0f32; n * out_channels * hw];
    let mut px = vec![0.0; k];
    let mut res = vec![0.0; out_channels];
    for sample in 0..n {
        for p in 0..hw {
            gather_pixel(data, k, hw, sample, p, &mut px);
            f(sample, p, &px, &mut res);
            let base = sample * out_channels * hw + p;
            for (c, &v) in res.iter().enumerate() {
                out[base + c * hw] = v as f32;
            }
        }
    }
    Tensor::from_f32(vec![n, out_channels, h, w], out).expect("shape preserved")
}

/// Per-pixel softmax over the class axis of a [N,K,H,W] logit tensor.
pub fn class_probabilities(logits: &Tensor) -> Result<Tensor, MetricsError> {
    let [_, k, _, _] = validate_scores(logits, "logits")?;
    Ok(map_pixels(logits, k, |_, _, z, out| softmax(z, out)))
}

/// [N,K,H,W] class probabilities to [N,K-1,H,W] exceedance probabilities.
pub fn exceedance_probabilities(probs: &Tensor, binning: &RateBinning) -> Result<Tensor, MetricsError> {
    let [_, k, _, _] = validate_scores(probs, "probs")?;
    if k != binning.classes() {
        return Err(MetricsError::ClassMismatch {
            data: k,
            binning: binning.classes(),
        });
    }
    Ok(map_pixels(probs, k - 1, |_, _, p, out| exceedance_from_probs(p, out)))
}

/// [N,H,W] class labels to [N,K-1,H,W] exceedance indicators (i64 0/1).
pub fn exceedance_labels(labels: &Tensor, binning: &RateBinning) -> Result<Tensor, MetricsError> {
    if labels.dtype() != DType::I64 {
        return Err(DatasetError::Dtype {
            tensor: "labels",
            expected: "i64",
            found: labels.dtype().name(),
        }
        .into());
    }
    let s = labels.shape();
    if s.len() != 3 {
        return Err(DatasetError::Shape {
            tensor: "labels",
            expected: "[N,H,W]".into(),
            found: s.to_vec(),
        }
        .into());
    }
    let (n, hw) = (s[0], s[1] * s[2]);
    let k = binning.classes();
    let kt = k - 1;
    let data = labels.as_i64().expect("dtype checked");
    let mut out = vec![0i64; n * kt * hw];
    for sample in 0..n {
        for p in 0..hw {
            let index = sample * hw + p;
            let y = data[index];
            if y < 0 || y as usize >= k {
                return Err(DatasetError::OutOfRange {
                    tensor: "labels",
                    value: y,
                    index,
                    limit: k,
                }
                .into());
            }
            for t in 0..(y as usize).min(kt) {
                out[(sample * kt + t) * hw + p] = 1;
            }
        }
    }
    Ok(Tensor::from_i64(vec![n, kt, s[1], s[2]], out).expect("shape preserved"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_and_analytic_softmax() {
        let mut out = [0.0; 12];
        softmax(&[0.0; 12], &mut out);
        assert!(out.iter().all(|&p| (p - 1.0 / 12.0).abs() < 1e-15));
        let mut out = [0.0; 2];
        softmax(&[2f64.ln(), 0.0], &mut out);
        assert!((out[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((out[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn class_probabilities_tensor() {
        let z = Tensor::from_f32(vec![1, 2, 1, 1], vec![2f32.ln(), 0.0]).unwrap();
        let p = class_probabilities(&z).unwrap();
        let p = p.as_f32().unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-6);
        let bad = Tensor::from_f32(vec![1, 2, 1, 1], vec![f32::INFINITY, 0.0]).unwrap();
        assert!(class_probabilities(&bad).is_err());
    }

    #[test]
    fn exceedance_examples() {
        let mut e = [0.0; 2];
        exceedance_from_probs(&[0.5, 0.3, 0.2], &mut e);
        assert!((e[0] - 0.5).abs() < 1e-15 && (e[1] - 0.2).abs() < 1e-15);
        let mut one_hot = [0.0; 12];
        one_hot[0] = 1.0;
        let mut e = [0.0; 11];
        exceedance_from_probs(&one_hot, &mut e);
        assert!(e.iter().all(|&v| v == 0.0));
        one_hot[0] = 0.0;
        one_hot[11] = 1.0;
        exceedance_from_probs(&one_hot, &mut e);
        assert!(e.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn exceedance_label_examples() {
        let binning = RateBinning::default();
        let y = Tensor::from_i64(vec![3, 1, 1], vec![0, 11, 5]).unwrap();
        let e = exceedance_labels(&y, &binning).unwrap();
        assert_eq!(e.shape(), &[3, 11, 1, 1]);
        let d = e.as_i64().unwrap();
        assert!(d[0..11].iter().all(|&v| v == 0));
        assert!(d[11..22].iter().all(|&v| v == 1));
        assert_eq!(&d[22..33], &[1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0]);
        let bad = Tensor::from_i64(vec![1, 1, 1], vec![12]).unwrap();
        assert!(exceedance_labels(&bad, &binning).is_err());
    }

    #[test]
    fn exceedance_tensor_checks_classes() {
        let p = Tensor::from_f32(vec![1, 3, 1, 1], vec![0.5, 0.3, 0.2]).unwrap();
        assert!(matches!(
            exceedance_probabilities(&p, &RateBinning::default()),
            Err(MetricsError::ClassMismatch { .. })
        ));
        let e = exceedance_probabilities(&p, &RateBinning::new(vec![1.0, 2.0]).unwrap()).unwrap();
        let e = e.as_f32().unwrap();
        assert!((e[0] - 0.5).abs() < 1e-7 && (e[1] - 0.2).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_exceedance_monotone(z in proptest::collection::vec(-30.0f64..30.0, 2..16)) {
            let mut p = vec![0.0; z.len()];
            softmax(&z, &mut p);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            let mut e = vec![0.0; z.len() - 1];
            exceedance_from_probs(&p, &mut e);
            prop_assert!(e.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(e.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

use super::{FeatureMap, Gradients, NetError, Network, Real};

/// Inputs of one mini-batch. `sample_ids` tell the objective which targets
/// belong to each input.
#[derive(Debug, Clone)]
pub struct Batch<'a, S> {
    pub inputs: Vec<&'a FeatureMap<S>>,
    pub lead_times: Vec<usize>,
    pub sample_ids: Vec<usize>,
}

/// A loss over a network's per-sample output.
pub trait Objective<S: Real> {
    /// Loss summed over the elements of one sample's output, the gradient of
    /// that sum with respect to the output, and the number of elements.
    fn sample_loss(&self, sample: usize, output: &FeatureMap<S>) -> Result<(f64, FeatureMap<S>, usize), NetError>;
}

/// Mean loss over all output elements of the batch and its gradient with
/// respect to every parameter.
pub fn loss_and_gradients<S: Real>(
    net: &Network<S>,
    batch: &Batch<S>,
    objective: &dyn Objective<S>,
) -> Result<(f64, Gradients<S>), NetError> {
    let mut grads = Gradients::zeros_like(net.params());
    let mut total = 0.0;
    let mut elements = 0usize;
    for ((input, &lead), &id) in batch.inputs.iter().zip(&batch.lead_times).zip(&batch.sample_ids) {
        let (out, tape) = net.forward_tape(input, lead)?;
        if out.data.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite(format!("forward pass of sample {id}")));
        }
        let (loss, grad_out, n) = objective.sample_loss(id, &out)?;
        if !loss.is_finite() {
            return Err(NetError::NonFinite(format!("loss of sample {id}")));
        }
        total += loss;
        elements += n;
        net.backward(tape, grad_out, &mut grads);
    }
    if elements == 0 {
        return Err(NetError::Target("batch has no elements".into()));
    }
    grads.scale(S::of(1.0 / elements as f64));
    Ok((total / elements as f64, grads))
}

fn check_output<S>(out: &FeatureMap<S>, channels: usize, plane: usize, what: &str) -> Result<(), NetError> {
    if out.channels != channels || out.height * out.width != plane {
        return Err(NetError::Target(format!(
            "{what} expects {channels} channels over {plane} positions, output is {}x{}x{}",
            out.channels, out.height, out.width
        )));
    }
    Ok(())
}

/// Softmax cross-entropy over the channel axis; `targets` holds one class
/// per position, `positions` per sample.
pub struct SoftmaxCrossEntropy<'a> {
    pub targets: &'a [usize],
    pub classes: usize,
    pub positions: usize,
}

impl<S: Real> Objective<S> for SoftmaxCrossEntropy<'_> {
    fn sample_loss(&self, sample: usize, out: &FeatureMap<S>) -> Result<(f64, FeatureMap<S>, usize), NetError> {
        check_output(out, self.classes, self.positions, "softmax cross-entropy")?;
        let p = self.positions;
        let targets = &self.targets[sample * p..(sample + 1) * p];
        let mut grad = FeatureMap::zeros(out.channels, out.height, out.width);
        let mut loss = 0.0;
        let mut z = vec![0.0; self.classes];
        for (pos, &y) in targets.iter().enumerate() {
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = out.data[k * p + pos].as_f64();
            }
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            loss += max + sum.ln() - z[y];
            for (k, &zk) in z.iter().enumerate() {
                let prob = (zk - max).exp() / sum;
                let t = if k == y { 1.0 } else { 0.0 };
                grad.data[k * p + pos] = S::of(prob - t);
            }
        }
        Ok((loss, grad, p))
    }
}

/// Class-weighted binary cross-entropy on a single-channel probability map.
pub struct BinaryCrossEntropy<'a> {
    pub targets: &'a [bool],
    pub positions: usize,
    pub positive_weight: f64,
    pub negative_weight: f64,
}

const PROB_EPS: f64 = 1e-7;

impl<S: Real> Objective<S> for BinaryCrossEntropy<'_> {
    fn sample_loss(&self, sample: usize, out: &FeatureMap<S>) -> Result<(f64, FeatureMap<S>, usize), NetError> {
        check_output(out, 1, self.positions, "binary cross-entropy")?;
        let targets = &self.targets[sample * self.positions..(sample + 1) * self.positions];
        let mut grad = FeatureMap::zeros(1, out.height, out.width);
        let mut loss = 0.0;
        for ((g, &prob), &y) in grad.data.iter_mut().zip(&out.data).zip(targets) {
            let p = prob.as_f64().clamp(PROB_EPS, 1.0 - PROB_EPS);
            let (l, d) = if y {
                (-self.positive_weight * p.ln(), -self.positive_weight / p)
            } else {
                (-self.negative_weight * (1.0 - p).ln(), self.negative_weight / (1.0 - p))
            };
            loss += l;
            *g = S::of(d);
        }
        Ok((loss, grad, self.positions))
    }
}

/// Negative log-likelihood of `softmax(z / exp(t))` where `t` is the
/// network's single-channel output and `z` the base logits.
pub struct TemperedCrossEntropy<'a> {
    /// Flat [N, K, positions] logits.
    pub logits: &'a [f32],
    /// Flat [N, positions] labels.
    pub labels: &'a [usize],
    pub classes: usize,
    pub positions: usize,
}

impl<S: Real> Objective<S> for TemperedCrossEntropy<'_> {
    fn sample_loss(&self, sample: usize, out: &FeatureMap<S>) -> Result<(f64, FeatureMap<S>, usize), NetError> {
        check_output(out, 1, self.positions, "tempered cross-entropy")?;
        let (k, p) = (self.classes, self.positions);
        let logits = &self.logits[sample * k * p..(sample + 1) * k * p];
        let labels = &self.labels[sample * p..(sample + 1) * p];
        let mut grad = FeatureMap::zeros(1, out.height, out.width);
        let mut loss = 0.0;
        let mut u = vec![0.0; k];
        for pos in 0..p {
            let inv_t = (-out.data[pos].as_f64()).exp();
            for (c, uc) in u.iter_mut().enumerate() {
                *uc = logits[c * p + pos] as f64 * inv_t;
            }
            let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = u.iter().map(|v| (v - max).exp()).sum();
            let y = labels[pos];
            loss += max + sum.ln() - u[y];
            // dL/du_c = p_c - [c == y] and du_c/dt = -u_c
            let mut d = 0.0;
            for (c, &uc) in u.iter().enumerate() {
                let prob = (uc - max).exp() / sum;
                let t = if c == y { 1.0 } else { 0.0 };
                d -= (prob - t) * uc;
            }
            grad.data[pos] = S::of(d);
        }
        Ok((loss, grad, p))
    }
}

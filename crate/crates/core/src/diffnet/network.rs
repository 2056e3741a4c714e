// Channel loops index several parallel buffers at once.
#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureMap, NetError, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Linear map of the channel vector at every position.
    Dense { inputs: usize, outputs: usize },
    /// Zero-padded, stride-1 convolution with a 1x1 or 3x3 kernel.
    Conv2d {
        inputs: usize,
        outputs: usize,
        kernel: usize,
    },
    AvgPool2,
    Upsample2,
    Relu,
    Sigmoid,
    /// Per-channel `gamma(lead) * x + beta(lead)`.
    Film { channels: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::AvgPool2 => "avgpool2",
            LayerSpec::Upsample2 => "upsample2",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Film { .. } => "film",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilmSpec {
    pub lead_times: usize,
    pub embedding_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    /// Lead-time conditioning; required iff the stack contains FiLM layers.
    pub film: Option<FilmSpec>,
}

impl NetworkSpec {
    /// Channel count after every layer, validating the stack on the way.
    fn channel_trace(&self) -> Result<Vec<usize>, NetError> {
        if self.input_channels == 0 {
            return Err(NetError::InvalidSpec("input must have at least one channel".into()));
        }
        let mut channels = self.input_channels;
        let mut trace = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mismatch = |expected: usize| NetError::Shape {
                layer: i,
                kind: layer.kind(),
                detail: format!("declares {expected} input channels, receives {channels}"),
            };
            match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    if inputs != channels {
                        return Err(mismatch(inputs));
                    }
                    if outputs == 0 {
                        return Err(NetError::InvalidSpec(format!("layer {i} has no outputs")));
                    }
                    channels = outputs;
                }
                LayerSpec::Conv2d {
                    inputs,
                    outputs,
                    kernel,
                } => {
                    if inputs != channels {
                        return Err(mismatch(inputs));
                    }
                    if kernel != 1 && kernel != 3 {
                        return Err(NetError::InvalidSpec(format!(
                            "layer {i}: kernel {kernel} unsupported, use 1 or 3"
                        )));
                    }
                    if outputs == 0 {
                        return Err(NetError::InvalidSpec(format!("layer {i} has no outputs")));
                    }
                    channels = outputs;
                }
                LayerSpec::Film { channels: c } => {
                    if c != channels {
                        return Err(mismatch(c));
                    }
                    if self.film.is_none() {
                        return Err(NetError::InvalidSpec(format!(
                            "layer {i} is FiLM but the network has no lead-time conditioning"
                        )));
                    }
                }
                LayerSpec::AvgPool2 | LayerSpec::Upsample2 | LayerSpec::Relu | LayerSpec::Sigmoid => {}
            }
            trace.push(channels);
        }
        if let Some(f) = self.film {
            if f.lead_times == 0 || f.embedding_dim == 0 {
                return Err(NetError::InvalidSpec("FiLM needs at least one lead time and embedding dimension".into()));
            }
        }
        Ok(trace)
    }

    pub fn output_channels(&self) -> Result<usize, NetError> {
        Ok(self
            .channel_trace()?
            .last()
            .copied()
            .unwrap_or(self.input_channels))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<S>,
}

impl<S: Real> Parameter<S> {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Parameter {
            name,
            shape,
            value: vec![S::zero(); n],
        }
    }
}

/// Parameter indices used by one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Binding {
    Stateless,
    Affine {
        weight: usize,
        bias: usize,
    },
    Film {
        gamma_w: usize,
        gamma_b: usize,
        beta_w: usize,
        beta_b: usize,
    },
}

/// Gradient buffers aligned with `Network::params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S>(pub Vec<Vec<S>>);

impl<S: Real> Gradients<S> {
    pub fn zeros_like(params: &[Parameter<S>]) -> Self {
        Gradients(params.iter().map(|p| vec![S::zero(); p.value.len()]).collect())
    }

    pub fn scale(&mut self, factor: S) {
        self.0.iter_mut().flatten().for_each(|g| *g = *g * factor);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    spec: NetworkSpec,
    seed: u64,
    params: Vec<Parameter<S>>,
    bindings: Vec<Binding>,
    embedding: Option<usize>,
}

fn uniform_fill<S: Real>(rng: &mut ChaCha8Rng, values: &mut [S], bound: f64) {
    for v in values {
        *v = S::of(rng.random_range(-bound..bound));
    }
}

impl<S: Real> Network<S> {
    /// Builds a network with fan-in scaled uniform weights and zero biases.
    ///
    /// Trunk and FiLM parameters come from independent streams, so the trunk
    /// of a conditioned network equals that of its unconditioned twin for the
    /// same seed. FiLM heads start at gamma = 1, beta = 0.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self, NetError> {
        let mut net = Self::zeroed(spec, seed)?;
        let mut trunk = ChaCha8Rng::seed_from_u64(seed);
        let mut film = ChaCha8Rng::seed_from_u64(seed);
        film.set_stream(1);
        for (layer, binding) in net.spec.layers.clone().iter().zip(net.bindings.clone()) {
            match (layer, binding) {
                (LayerSpec::Dense { inputs, .. }, Binding::Affine { weight, .. }) => {
                    uniform_fill(&mut trunk, &mut net.params[weight].value, (3.0 / *inputs as f64).sqrt());
                }
                (LayerSpec::Conv2d { inputs, kernel, .. }, Binding::Affine { weight, .. }) => {
                    let fan_in = (inputs * kernel * kernel) as f64;
                    uniform_fill(&mut trunk, &mut net.params[weight].value, (3.0 / fan_in).sqrt());
                }
                (LayerSpec::Film { .. }, Binding::Film { gamma_b, .. }) => {
                    net.params[gamma_b].value.iter_mut().for_each(|v| *v = S::one());
                }
                _ => {}
            }
        }
        if let Some(e) = net.embedding {
            uniform_fill(&mut film, &mut net.params[e].value, 1.0);
        }
        Ok(net)
    }

    /// Same layout as [`Network::new`] with every parameter zero.
    pub fn zeroed(spec: NetworkSpec, seed: u64) -> Result<Self, NetError> {
        spec.channel_trace()?;
        let mut params = Vec::new();
        let mut bindings = Vec::with_capacity(spec.layers.len());
        let embed_dim = spec.film.map(|f| f.embedding_dim).unwrap_or(0);
        for (i, layer) in spec.layers.iter().enumerate() {
            let binding = match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    params.push(Parameter::zeros(format!("layer{i}.weight"), vec![outputs, inputs]));
                    params.push(Parameter::zeros(format!("layer{i}.bias"), vec![outputs]));
                    Binding::Affine {
                        weight: params.len() - 2,
                        bias: params.len() - 1,
                    }
                }
                LayerSpec::Conv2d {
                    inputs,
                    outputs,
                    kernel,
                } => {
                    params.push(Parameter::zeros(
                        format!("layer{i}.weight"),
                        vec![outputs, inputs, kernel, kernel],
                    ));
                    params.push(Parameter::zeros(format!("layer{i}.bias"), vec![outputs]));
                    Binding::Affine {
                        weight: params.len() - 2,
                        bias: params.len() - 1,
                    }
                }
                LayerSpec::Film { channels } => {
                    let base = params.len();
                    params.push(Parameter::zeros(format!("layer{i}.gamma_weight"), vec![channels, embed_dim]));
                    params.push(Parameter::zeros(format!("layer{i}.gamma_bias"), vec![channels]));
                    params.push(Parameter::zeros(format!("layer{i}.beta_weight"), vec![channels, embed_dim]));
                    params.push(Parameter::zeros(format!("layer{i}.beta_bias"), vec![channels]));
                    Binding::Film {
                        gamma_w: base,
                        gamma_b: base + 1,
                        beta_w: base + 2,
                        beta_b: base + 3,
                    }
                }
                _ => Binding::Stateless,
            };
            bindings.push(binding);
        }
        let embedding = spec.film.map(|f| {
            params.push(Parameter::zeros(
                "film.embedding".into(),
                vec![f.lead_times, f.embedding_dim],
            ));
            params.len() - 1
        });
        Ok(Network {
            spec,
            seed,
            params,
            bindings,
            embedding,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Parameter<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<S>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<T: Real>(&self) -> Network<T> {
        Network {
            spec: self.spec.clone(),
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: p.value.iter().map(|v| T::of(v.as_f64())).collect(),
                })
                .collect(),
            bindings: self.bindings.clone(),
            embedding: self.embedding,
        }
    }

    fn film_coefficients(&self, binding: Binding, lead: usize, channels: usize) -> (Vec<S>, Vec<S>) {
        let Binding::Film {
            gamma_w,
            gamma_b,
            beta_w,
            beta_b,
        } = binding
        else {
            unreachable!("film binding")
        };
        let f = self.spec.film.expect("validated");
        let e = &self.params[self.embedding.expect("validated")].value
            [lead * f.embedding_dim..(lead + 1) * f.embedding_dim];
        let head = |w: usize, b: usize| -> Vec<S> {
            (0..channels)
                .map(|c| {
                    let row = &self.params[w].value[c * f.embedding_dim..(c + 1) * f.embedding_dim];
                    let mut acc = self.params[b].value[c];
                    for (wv, ev) in row.iter().zip(e) {
                        acc += *wv * *ev;
                    }
                    acc
                })
                .collect()
        };
        (head(gamma_w, gamma_b), head(beta_w, beta_b))
    }

    pub fn forward(&self, input: &FeatureMap<S>, lead_time: usize) -> Result<FeatureMap<S>, NetError> {
        Ok(self.forward_tape(input, lead_time)?.0)
    }

    /// Forward pass that also records what the backward pass needs.
    pub fn forward_tape(&self, input: &FeatureMap<S>, lead_time: usize) -> Result<(FeatureMap<S>, Tape<S>), NetError> {
        if input.channels != self.spec.input_channels {
            return Err(NetError::Shape {
                layer: 0,
                kind: self.spec.layers.first().map(|l| l.kind()).unwrap_or("input"),
                detail: format!(
                    "network expects {} input channels, got {}",
                    self.spec.input_channels, input.channels
                ),
            });
        }
        if let Some(f) = self.spec.film {
            if lead_time >= f.lead_times {
                return Err(NetError::LeadTime {
                    lead_time,
                    lead_times: f.lead_times,
                });
            }
        }
        let mut x = input.clone();
        let mut records = Vec::with_capacity(self.spec.layers.len());
        for (i, (layer, &binding)) in self.spec.layers.iter().zip(&self.bindings).enumerate() {
            let y = match (*layer, binding) {
                (LayerSpec::Dense { .. }, Binding::Affine { weight, bias })
                | (LayerSpec::Conv2d { kernel: 1, .. }, Binding::Affine { weight, bias }) => {
                    let out = pointwise_forward(&x, &self.params[weight].value, &self.params[bias].value);
                    records.push(Record::Input(x));
                    out
                }
                (LayerSpec::Conv2d { kernel: 3, .. }, Binding::Affine { weight, bias }) => {
                    let out = conv3_forward(&x, &self.params[weight].value, &self.params[bias].value);
                    records.push(Record::Input(x));
                    out
                }
                (LayerSpec::AvgPool2, _) => {
                    if !x.height.is_multiple_of(2) || !x.width.is_multiple_of(2) {
                        return Err(NetError::Shape {
                            layer: i,
                            kind: layer.kind(),
                            detail: format!("spatial size {}x{} is not even", x.height, x.width),
                        });
                    }
                    records.push(Record::None);
                    avgpool_forward(&x)
                }
                (LayerSpec::Upsample2, _) => {
                    records.push(Record::None);
                    upsample_forward(&x)
                }
                (LayerSpec::Relu, _) => {
                    let out = FeatureMap {
                        data: x.data.iter().map(|&v| if v > S::zero() { v } else { S::zero() }).collect(),
                        ..x
                    };
                    records.push(Record::Input(x));
                    out
                }
                (LayerSpec::Sigmoid, _) => {
                    let out = FeatureMap {
                        data: x.data.iter().map(|&v| S::one() / (S::one() + (-v).exp())).collect(),
                        ..x
                    };
                    records.push(Record::Output(out.clone()));
                    out
                }
                (LayerSpec::Film { channels }, b) => {
                    let (gamma, beta) = self.film_coefficients(b, lead_time, channels);
                    let plane = x.plane();
                    let mut out = x.clone();
                    for c in 0..channels {
                        for v in &mut out.data[c * plane..(c + 1) * plane] {
                            *v = gamma[c] * *v + beta[c];
                        }
                    }
                    records.push(Record::Film { input: x, gamma });
                    out
                }
                _ => unreachable!("binding matches layer kind"),
            };
            x = y;
        }
        Ok((
            x,
            Tape {
                records,
                lead_time,
            },
        ))
    }

    /// Accumulates parameter gradients for one sample given dLoss/dOutput.
    pub fn backward(&self, tape: Tape<S>, grad_output: FeatureMap<S>, grads: &mut Gradients<S>) {
        let lead = tape.lead_time;
        let mut g = grad_output;
        for ((layer, &binding), record) in self
            .spec
            .layers
            .iter()
            .zip(&self.bindings)
            .zip(tape.records)
            .rev()
        {
            g = match (*layer, binding, record) {
                (LayerSpec::Dense { .. }, Binding::Affine { weight, bias }, Record::Input(x))
                | (LayerSpec::Conv2d { kernel: 1, .. }, Binding::Affine { weight, bias }, Record::Input(x)) => {
                    let (gw, gb) = two_mut(&mut grads.0, weight, bias);
                    pointwise_backward(&x, &self.params[weight].value, &g, gw, gb)
                }
                (LayerSpec::Conv2d { kernel: 3, .. }, Binding::Affine { weight, bias }, Record::Input(x)) => {
                    let (gw, gb) = two_mut(&mut grads.0, weight, bias);
                    conv3_backward(&x, &self.params[weight].value, &g, gw, gb)
                }
                (LayerSpec::AvgPool2, _, _) => avgpool_backward(&g),
                (LayerSpec::Upsample2, _, _) => upsample_backward(&g),
                (LayerSpec::Relu, _, Record::Input(x)) => {
                    for (gv, &xv) in g.data.iter_mut().zip(&x.data) {
                        if xv <= S::zero() {
                            *gv = S::zero();
                        }
                    }
                    g
                }
                (LayerSpec::Sigmoid, _, Record::Output(y)) => {
                    for (gv, &yv) in g.data.iter_mut().zip(&y.data) {
                        *gv = *gv * yv * (S::one() - yv);
                    }
                    g
                }
                (
                    LayerSpec::Film { channels },
                    Binding::Film {
                        gamma_w,
                        gamma_b,
                        beta_w,
                        beta_b,
                    },
                    Record::Film { input, gamma },
                ) => self.film_backward(
                    FilmGrad {
                        channels,
                        lead,
                        gamma_w,
                        gamma_b,
                        beta_w,
                        beta_b,
                    },
                    &input,
                    &gamma,
                    g,
                    grads,
                ),
                _ => unreachable!("tape matches layers"),
            };
        }
    }

    fn film_backward(
        &self,
        at: FilmGrad,
        input: &FeatureMap<S>,
        gamma: &[S],
        mut g: FeatureMap<S>,
        grads: &mut Gradients<S>,
    ) -> FeatureMap<S> {
        let f = self.spec.film.expect("validated");
        let dim = f.embedding_dim;
        let emb_index = self.embedding.expect("validated");
        let e: Vec<S> = self.params[emb_index].value[at.lead * dim..(at.lead + 1) * dim].to_vec();
        let plane = input.plane();
        let mut d_emb = vec![S::zero(); dim];
        for c in 0..at.channels {
            let gs = &mut g.data[c * plane..(c + 1) * plane];
            let xs = &input.data[c * plane..(c + 1) * plane];
            let mut d_gamma = S::zero();
            let mut d_beta = S::zero();
            for (gv, &xv) in gs.iter_mut().zip(xs) {
                d_gamma += *gv * xv;
                d_beta += *gv;
                *gv = *gv * gamma[c];
            }
            grads.0[at.gamma_b][c] += d_gamma;
            grads.0[at.beta_b][c] += d_beta;
            for j in 0..dim {
                grads.0[at.gamma_w][c * dim + j] += d_gamma * e[j];
                grads.0[at.beta_w][c * dim + j] += d_beta * e[j];
                d_emb[j] += d_gamma * self.params[at.gamma_w].value[c * dim + j]
                    + d_beta * self.params[at.beta_w].value[c * dim + j];
            }
        }
        for (j, d) in d_emb.into_iter().enumerate() {
            grads.0[emb_index][at.lead * dim + j] += d;
        }
        g
    }
}

#[derive(Clone, Copy)]
struct FilmGrad {
    channels: usize,
    lead: usize,
    gamma_w: usize,
    gamma_b: usize,
    beta_w: usize,
    beta_b: usize,
}

#[derive(Debug, Clone)]
enum Record<S> {
    None,
    Input(FeatureMap<S>),
    Output(FeatureMap<S>),
    Film { input: FeatureMap<S>, gamma: Vec<S> },
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<S> {
    records: Vec<Record<S>>,
    lead_time: usize,
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

fn pointwise_forward<S: Real>(x: &FeatureMap<S>, w: &[S], b: &[S]) -> FeatureMap<S> {
    let (cin, p) = (x.channels, x.plane());
    let cout = b.len();
    let mut out = FeatureMap::zeros(cout, x.height, x.width);
    for o in 0..cout {
        let row = &mut out.data[o * p..(o + 1) * p];
        row.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..cin {
            let wv = w[o * cin + i];
            for (r, &xv) in row.iter_mut().zip(&x.data[i * p..(i + 1) * p]) {
                *r += wv * xv;
            }
        }
    }
    out
}

fn pointwise_backward<S: Real>(
    x: &FeatureMap<S>,
    w: &[S],
    g: &FeatureMap<S>,
    gw: &mut [S],
    gb: &mut [S],
) -> FeatureMap<S> {
    let (cin, p) = (x.channels, x.plane());
    let cout = g.channels;
    let mut gx = FeatureMap::zeros(cin, x.height, x.width);
    for o in 0..cout {
        let grow = &g.data[o * p..(o + 1) * p];
        gb[o] += grow.iter().copied().sum();
        for i in 0..cin {
            let xrow = &x.data[i * p..(i + 1) * p];
            let mut acc = S::zero();
            for (&gv, &xv) in grow.iter().zip(xrow) {
                acc += gv * xv;
            }
            gw[o * cin + i] += acc;
            let wv = w[o * cin + i];
            for (gxv, &gv) in gx.data[i * p..(i + 1) * p].iter_mut().zip(grow) {
                *gxv += wv * gv;
            }
        }
    }
    gx
}

/// Valid output range along one axis for a kernel offset `d` in {-1, 0, 1}.
fn span(len: usize, d: isize) -> (usize, usize) {
    match d {
        -1 => (1, len),
        1 => (0, len.saturating_sub(1)),
        _ => (0, len),
    }
}

fn conv3_forward<S: Real>(x: &FeatureMap<S>, w: &[S], b: &[S]) -> FeatureMap<S> {
    let (cin, h, wd) = (x.channels, x.height, x.width);
    let cout = b.len();
    let p = h * wd;
    let mut out = FeatureMap::zeros(cout, h, wd);
    for o in 0..cout {
        let oplane = &mut out.data[o * p..(o + 1) * p];
        oplane.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..cin {
            let iplane = &x.data[i * p..(i + 1) * p];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(wd, dx);
                    let wv = w[((o * cin + i) * 3 + ky) * 3 + kx];
                    for yy in y0..y1 {
                        let src = ((yy as isize + dy) as usize) * wd;
                        let dst = yy * wd;
                        let srow = &iplane[(src as isize + x0 as isize + dx) as usize..(src as isize + x1 as isize + dx) as usize];
                        for (d, &s) in oplane[dst + x0..dst + x1].iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv3_backward<S: Real>(
    x: &FeatureMap<S>,
    w: &[S],
    g: &FeatureMap<S>,
    gw: &mut [S],
    gb: &mut [S],
) -> FeatureMap<S> {
    let (cin, h, wd) = (x.channels, x.height, x.width);
    let cout = g.channels;
    let p = h * wd;
    let mut gx = FeatureMap::zeros(cin, h, wd);
    for o in 0..cout {
        let gplane = &g.data[o * p..(o + 1) * p];
        gb[o] += gplane.iter().copied().sum();
        for i in 0..cin {
            let iplane = &x.data[i * p..(i + 1) * p];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(wd, dx);
                    let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                    let wv = w[widx];
                    let mut acc = S::zero();
                    for yy in y0..y1 {
                        let src = ((yy as isize + dy) as usize) * wd;
                        let dst = yy * wd;
                        let lo = (src as isize + x0 as isize + dx) as usize;
                        let hi = (src as isize + x1 as isize + dx) as usize;
                        let grow = &gplane[dst + x0..dst + x1];
                        for (&gv, &xv) in grow.iter().zip(&iplane[lo..hi]) {
                            acc += gv * xv;
                        }
                        for (gxv, &gv) in gx.data[i * p + lo..i * p + hi].iter_mut().zip(grow) {
                            *gxv += wv * gv;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    gx
}

fn avgpool_forward<S: Real>(x: &FeatureMap<S>) -> FeatureMap<S> {
    let (h2, w2) = (x.height / 2, x.width / 2);
    let quarter = S::of(0.25);
    let mut out = FeatureMap::zeros(x.channels, h2, w2);
    for c in 0..x.channels {
        let src = x.channel(c);
        for yy in 0..h2 {
            for xx in 0..w2 {
                let a = src[2 * yy * x.width + 2 * xx];
                let b = src[2 * yy * x.width + 2 * xx + 1];
                let d = src[(2 * yy + 1) * x.width + 2 * xx];
                let e = src[(2 * yy + 1) * x.width + 2 * xx + 1];
                out.data[c * h2 * w2 + yy * w2 + xx] = (a + b + d + e) * quarter;
            }
        }
    }
    out
}

fn avgpool_backward<S: Real>(g: &FeatureMap<S>) -> FeatureMap<S> {
    let (h, w) = (g.height * 2, g.width * 2);
    let quarter = S::of(0.25);
    let mut gx = FeatureMap::zeros(g.channels, h, w);
    for c in 0..g.channels {
        for yy in 0..h {
            for xx in 0..w {
                gx.data[c * h * w + yy * w + xx] = g.data[c * g.plane() + (yy / 2) * g.width + xx / 2] * quarter;
            }
        }
    }
    gx
}

fn upsample_forward<S: Real>(x: &FeatureMap<S>) -> FeatureMap<S> {
    let (h, w) = (x.height * 2, x.width * 2);
    let mut out = FeatureMap::zeros(x.channels, h, w);
    for c in 0..x.channels {
        for yy in 0..h {
            for xx in 0..w {
                out.data[c * h * w + yy * w + xx] = x.data[c * x.plane() + (yy / 2) * x.width + xx / 2];
            }
        }
    }
    out
}

fn upsample_backward<S: Real>(g: &FeatureMap<S>) -> FeatureMap<S> {
    let (h2, w2) = (g.height / 2, g.width / 2);
    let mut gx = FeatureMap::zeros(g.channels, h2, w2);
    for c in 0..g.channels {
        let src = g.channel(c);
        for yy in 0..g.height {
            for xx in 0..g.width {
                gx.data[c * h2 * w2 + (yy / 2) * w2 + xx / 2] += src[yy * g.width + xx];
            }
        }
    }
    gx
}

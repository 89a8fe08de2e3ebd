//! Fully connected critic `Q(s, a)`: ReLU hidden layers and one linear
//! output unit, trained with hand-derived backpropagation and Adam.
//!
//! Parameters live in one flat vector. Each layer stores its weight matrix
//! row-major (`n_out x n_in`) followed by its bias vector, which makes the
//! optimizer, target copies and gradient checks plain slice operations.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, io_err, Error, Result};

pub const FORMAT_NAME: &str = "iab-qnet";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_size: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_size: usize,
}

impl NetSpec {
    pub fn new(input_size: usize, hidden_layers: usize, hidden_width: usize) -> Result<Self> {
        let spec = Self {
            input_size,
            hidden_layers,
            hidden_width,
            output_size: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Critic over an observation concatenated with a one-hot action.
    pub fn critic(obs_len: usize, n_actions: usize, hidden_layers: usize, hidden_width: usize) -> Result<Self> {
        Self::new(obs_len + n_actions, hidden_layers, hidden_width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(domain("input size must be at least 1"));
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(domain(format!(
                "need at least one hidden layer of width >= 1, got {} x {}",
                self.hidden_layers, self.hidden_width
            )));
        }
        if self.output_size != 1 {
            return Err(domain("critic has exactly one output"));
        }
        Ok(())
    }

    fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut offset = 0;
        let mut n_in = self.input_size;
        for l in 0..=self.hidden_layers {
            let n_out = if l == self.hidden_layers {
                self.output_size
            } else {
                self.hidden_width
            };
            shapes.push(LayerShape { n_in, n_out, offset });
            offset += n_in * n_out + n_out;
            n_in = n_out;
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|s| s.n_in * s.n_out + s.n_out)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    n_in: usize,
    n_out: usize,
    offset: usize,
}

impl LayerShape {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.n_in * self.n_out
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.n_in * self.n_out;
        start..start + self.n_out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    /// Rescale gradients whose L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            clip_norm: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        let positive = |v: f64| v > 0.0;
        if !positive(self.alpha) || !in_unit(self.beta1) || !in_unit(self.beta2) || !positive(self.eps_hat) {
            return Err(domain(format!("invalid optimizer config {self:?}")));
        }
        if matches!(self.clip_norm, Some(c) if !positive(c)) {
            return Err(domain("clip norm must be positive"));
        }
        Ok(())
    }
}

/// Gradient of the loss with respect to every parameter, in the network's
/// flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    fn zeros(n: usize) -> Self {
        Self {
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QNetworkFile", into = "QNetworkFile")]
pub struct QNetwork {
    spec: NetSpec,
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
    adam: AdamState,
}

impl QNetwork {
    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn init(spec: NetSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in net.shapes.clone() {
            let limit = (6.0 / s.n_in as f64).sqrt();
            for w in &mut net.params[s.weights()] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.param_count();
        Ok(Self {
            spec,
            shapes: spec.layer_shapes(),
            params: vec![0.0; n],
            adam: AdamState::zeros(n),
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn n_layers(&self) -> usize {
        self.shapes.len()
    }

    /// Row-major `n_out x n_in` weights of layer `l` (the last one is the output).
    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.shapes[l].weights();
        &mut self.params[r]
    }

    pub fn biases_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.shapes[l].biases();
        &mut self.params[r]
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        self.check_input(input)?;
        let mut scratch = Scratch::default();
        Ok(self.run_from(0, input.to_vec(), &mut scratch))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.spec.input_size {
            return Err(domain(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.spec.input_size
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(domain("input contains non-finite values"));
        }
        Ok(())
    }

    /// Applies layer `first` onwards to `act`, which holds the input of that
    /// layer. Returns the scalar output.
    fn run_from(&self, first: usize, mut act: Vec<f64>, scratch: &mut Scratch) -> f64 {
        for (l, s) in self.shapes.iter().enumerate().skip(first) {
            let w = &self.params[s.weights()];
            let b = &self.params[s.biases()];
            let out = &mut scratch.buf;
            out.clear();
            out.extend(b.iter().enumerate().map(|(o, &bias)| {
                let row = &w[o * s.n_in..(o + 1) * s.n_in];
                bias + dot(row, &act)
            }));
            if l + 1 < self.shapes.len() {
                relu(out);
            }
            std::mem::swap(&mut act, out);
        }
        act[0]
    }

    /// `Q(obs, a)` for every one-hot action `a`; the input is the
    /// observation followed by the one-hot vector.
    pub fn q_all_actions(&self, obs: &[f64], n_actions: usize) -> Result<Vec<f64>> {
        if obs.len() + n_actions != self.spec.input_size {
            return Err(domain(format!(
                "observation of {} plus {n_actions} actions does not match input size {}",
                obs.len(),
                self.spec.input_size
            )));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(domain("observation contains non-finite values"));
        }
        // The observation part of the first layer is shared by every action;
        // the one-hot part only adds one weight column.
        let s = self.shapes[0];
        let w = &self.params[s.weights()];
        let b = &self.params[s.biases()];
        let shared: Vec<f64> = (0..s.n_out)
            .map(|o| b[o] + dot(&w[o * s.n_in..o * s.n_in + obs.len()], obs))
            .collect();
        let mut scratch = Scratch::default();
        Ok((0..n_actions)
            .map(|k| {
                let mut h: Vec<f64> = shared
                    .iter()
                    .enumerate()
                    .map(|(o, &v)| v + w[o * s.n_in + obs.len() + k])
                    .collect();
                relu(&mut h);
                self.run_from(1, h, &mut scratch)
            })
            .collect())
    }

    /// Mean squared error over `batch` of `(input, target)` pairs and its
    /// exact gradient.
    pub fn loss_and_gradients(&self, batch: &[(Vec<f64>, f64)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(domain("empty batch"));
        }
        let m = batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (input, target) in batch {
            self.check_input(input)?;
            if !target.is_finite() {
                return Err(domain("non-finite target"));
            }
            // activations[l] is the input of layer l; the last entry is the output
            let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.shapes.len() + 1);
            acts.push(input.clone());
            for (l, s) in self.shapes.iter().enumerate() {
                let w = &self.params[s.weights()];
                let b = &self.params[s.biases()];
                let prev = &acts[l];
                let mut out: Vec<f64> = (0..s.n_out)
                    .map(|o| b[o] + dot(&w[o * s.n_in..(o + 1) * s.n_in], prev))
                    .collect();
                if l + 1 < self.shapes.len() {
                    relu(&mut out);
                }
                acts.push(out);
            }
            let err = acts[self.shapes.len()][0] - target;
            loss += err * err;

            let mut delta = vec![2.0 * err / m];
            for (l, s) in self.shapes.iter().enumerate().rev() {
                let prev = &acts[l];
                let wr = s.weights();
                for o in 0..s.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let g = &mut grad[wr.start + o * s.n_in..wr.start + (o + 1) * s.n_in];
                    for (gi, &a) in g.iter_mut().zip(prev) {
                        *gi += d * a;
                    }
                    grad[s.biases().start + o] += d;
                }
                if l == 0 {
                    break;
                }
                let w = &self.params[wr];
                let mut back = vec![0.0; s.n_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (bi, &wi) in back.iter_mut().zip(&w[o * s.n_in..(o + 1) * s.n_in]) {
                        *bi += wi * d;
                    }
                }
                // ReLU gate of the previous layer; derivative taken as 0 at 0
                for (bi, &a) in back.iter_mut().zip(prev) {
                    if a <= 0.0 {
                        *bi = 0.0;
                    }
                }
                delta = back;
            }
        }
        Ok((loss / m, Gradients(grad)))
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &OptimizerConfig) -> Result<()> {
        if grads.0.len() != self.params.len() {
            return Err(domain(format!(
                "gradient has {} entries, network has {} parameters",
                grads.0.len(),
                self.params.len()
            )));
        }
        cfg.validate()?;
        let scale = match cfg.clip_norm {
            Some(c) => {
                let n = grads.norm();
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let a = &mut self.adam;
        a.t += 1;
        let t = i32::try_from(a.t).unwrap_or(i32::MAX);
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (((p, m), v), &g) in self
            .params
            .iter_mut()
            .zip(a.m.iter_mut())
            .zip(a.v.iter_mut())
            .zip(&grads.0)
        {
            let g = g * scale;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.eps_hat);
        }
        Ok(())
    }

    /// Overwrites this network's parameters with those of `source`. The
    /// optimizer state of `self` is kept.
    pub fn copy_parameters_from(&mut self, source: &QNetwork) -> Result<()> {
        if self.spec != source.spec {
            return Err(domain(format!(
                "cannot copy parameters between {:?} and {:?}",
                source.spec, self.spec
            )));
        }
        self.params.copy_from_slice(&source.params);
        Ok(())
    }

    /// Moves parameters toward `source`: `theta <- tau * source + (1 - tau) * theta`.
    /// `tau = 1` is a plain copy.
    pub fn blend_parameters_from(&mut self, source: &QNetwork, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(domain(format!("blend factor must be in (0, 1], got {tau}")));
        }
        if tau == 1.0 {
            return self.copy_parameters_from(source);
        }
        if self.spec != source.spec {
            return Err(domain(format!(
                "cannot blend parameters between {:?} and {:?}",
                source.spec, self.spec
            )));
        }
        for (t, &o) in self.params.iter_mut().zip(&source.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| domain(format!("bad network file: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Default)]
struct Scratch {
    buf: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// On-disk layout: per-layer matrices as rows, plus the Adam moments in the
/// same per-layer shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct QNetworkFile {
    format: String,
    version: u32,
    spec: NetSpec,
    layers: Vec<LayerFile>,
    adam: AdamFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamFile {
    t: u64,
    m: Vec<LayerFile>,
    v: Vec<LayerFile>,
}

fn split_layers(shapes: &[LayerShape], flat: &[f64]) -> Vec<LayerFile> {
    shapes
        .iter()
        .map(|s| LayerFile {
            weights: flat[s.weights()].chunks(s.n_in).map(<[f64]>::to_vec).collect(),
            biases: flat[s.biases()].to_vec(),
        })
        .collect()
}

fn join_layers(shapes: &[LayerShape], layers: &[LayerFile], what: &str) -> Result<Vec<f64>> {
    if layers.len() != shapes.len() {
        return Err(domain(format!("{what}: expected {} layers, found {}", shapes.len(), layers.len())));
    }
    let mut flat = Vec::new();
    for (i, (s, l)) in shapes.iter().zip(layers).enumerate() {
        if l.weights.len() != s.n_out
            || l.weights.iter().any(|r| r.len() != s.n_in)
            || l.biases.len() != s.n_out
        {
            return Err(domain(format!("{what}: layer {i} does not match {}x{}", s.n_out, s.n_in)));
        }
        flat.extend(l.weights.iter().flatten());
        flat.extend(&l.biases);
    }
    Ok(flat)
}

impl From<QNetwork> for QNetworkFile {
    fn from(net: QNetwork) -> Self {
        Self {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            spec: net.spec,
            layers: split_layers(&net.shapes, &net.params),
            adam: AdamFile {
                t: net.adam.t,
                m: split_layers(&net.shapes, &net.adam.m),
                v: split_layers(&net.shapes, &net.adam.v),
            },
        }
    }
}

impl TryFrom<QNetworkFile> for QNetwork {
    type Error = Error;

    fn try_from(f: QNetworkFile) -> Result<Self> {
        if f.format != FORMAT_NAME || f.version != FORMAT_VERSION {
            return Err(domain(format!(
                "unsupported network format {} v{}",
                f.format, f.version
            )));
        }
        let mut net = QNetwork::zeros(f.spec)?;
        net.params = join_layers(&net.shapes, &f.layers, "parameters")?;
        net.adam = AdamState {
            t: f.adam.t,
            m: join_layers(&net.shapes, &f.adam.m, "adam m")?,
            v: join_layers(&net.shapes, &f.adam.v, "adam v")?,
        };
        if !net.is_finite() {
            return Err(domain("parameters must be finite"));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn spec(i: usize, l: usize, w: usize) -> NetSpec {
        NetSpec::new(i, l, w).unwrap()
    }

    #[test]
    fn parameter_count_and_seeded_init() {
        let s = spec(23, 1, 32);
        assert_eq!(s.param_count(), 801);
        let a = QNetwork::init(s, 11).unwrap();
        let b = QNetwork::init(s, 11).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), QNetwork::init(s, 12).unwrap().params());
        assert_eq!(a.adam_state().t, 0);
        // biases start at zero, weights within the He bound
        let limit = (6.0f64 / 23.0).sqrt();
        assert!(a.params()[..23 * 32].iter().all(|w| w.abs() <= limit));
        assert!(a.params()[23 * 32..23 * 32 + 32].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn invalid_specs() {
        assert!(NetSpec::new(23, 1, 0).is_err());
        assert!(NetSpec::new(23, 0, 8).is_err());
        let bad = NetSpec {
            input_size: 23,
            hidden_layers: 1,
            hidden_width: 0,
            output_size: 1,
        };
        assert!(QNetwork::init(bad, 0).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let n = QNetwork::zeros(spec(23, 2, 8)).unwrap();
        assert_eq!(n.forward(&[0.3; 23]).unwrap(), 0.0);
        assert_eq!(n.q_all_actions(&[0.5; 16], 7).unwrap(), vec![0.0; 7]);
        assert!(n.forward(&[0.0; 22]).is_err());
        assert!(n.q_all_actions(&[0.0; 15], 7).is_err());
    }

    #[test]
    fn dead_relu_passes_output_bias() {
        let mut n = QNetwork::zeros(spec(1, 1, 1)).unwrap();
        n.weights_mut(0)[0] = 5.0;
        n.biases_mut(0)[0] = -10.0;
        n.weights_mut(1)[0] = 3.0;
        n.biases_mut(1)[0] = 0.25;
        // pre-activation 5*1 - 10 = -5
        assert_eq!(n.forward(&[1.0]).unwrap(), 0.25);
    }

    #[test]
    fn hand_computed_forward() {
        // hidden = relu([[1, 2], [-1, 3]] x + [0, -1]), out = [2, -1] . hidden + 0.5
        let mut n = QNetwork::zeros(spec(2, 1, 2)).unwrap();
        n.weights_mut(0).copy_from_slice(&[1.0, 2.0, -1.0, 3.0]);
        n.biases_mut(0).copy_from_slice(&[0.0, -1.0]);
        n.weights_mut(1).copy_from_slice(&[2.0, -1.0]);
        n.biases_mut(1)[0] = 0.5;
        let table = [
            ([1.0, 1.0], 2.0 * 3.0 - 1.0 + 0.5),
            ([2.0, -1.0], 0.5),
            ([-1.0, 1.0], 2.0 * 1.0 - 3.0 + 0.5),
            ([0.0, 0.0], 0.5),
        ];
        for (x, want) in table {
            assert_eq!(n.forward(&x).unwrap(), want, "{x:?}");
        }
    }

    #[test]
    fn q_all_matches_explicit_forward() {
        let n = QNetwork::init(spec(23, 3, 16), 3).unwrap();
        let obs: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let q = n.q_all_actions(&obs, 7).unwrap();
        for (k, &qk) in q.iter().enumerate() {
            let mut x = obs.clone();
            x.extend((0..7).map(|j| if j == k { 1.0 } else { 0.0 }));
            let f = n.forward(&x).unwrap();
            assert!((f - qk).abs() <= 1e-12 * f.abs().max(1.0));
        }
    }

    #[test]
    fn action_only_net_ignores_observation() {
        let mut n = QNetwork::init(spec(23, 1, 8), 5).unwrap();
        for o in 0..8 {
            for i in 0..16 {
                n.weights_mut(0)[o * 23 + i] = 0.0;
            }
        }
        let a = n.q_all_actions(&[0.1; 16], 7).unwrap();
        let b = n.q_all_actions(&[0.9; 16], 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_zero_when_targets_match() {
        let n = QNetwork::init(spec(4, 2, 5), 9).unwrap();
        let batch: Vec<_> = (0..6)
            .map(|i| {
                let x = vec![i as f64 * 0.1, 0.2, -0.3, 0.7];
                let y = n.forward(&x).unwrap();
                (x, y)
            })
            .collect();
        let (loss, g) = n.loss_and_gradients(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.0.iter().all(|&v| v == 0.0));
        assert!(n.loss_and_gradients(&[]).is_err());
    }

    #[test]
    fn single_path_closed_form_gradient() {
        // one hidden unit with unit weight and positive input acts as identity,
        // so the output weight w sees d/dw (w x - y)^2 = 2 (w x - y) x
        let mut n = QNetwork::zeros(spec(1, 1, 1)).unwrap();
        n.weights_mut(0)[0] = 1.0;
        let (w, x, y) = (0.7, 2.0, 3.0);
        n.weights_mut(1)[0] = w;
        let (loss, g) = n.loss_and_gradients(&[(vec![x], y)]).unwrap();
        assert_eq!(loss, (w * x - y) * (w * x - y));
        assert_eq!(g.0[2], 2.0 * (w * x - y) * x);
    }

    #[test]
    fn relu_scaling_is_linear_on_active_region() {
        let mut n = QNetwork::zeros(spec(2, 1, 3)).unwrap();
        n.weights_mut(0).copy_from_slice(&[1.0, 0.5, 0.2, 0.3, 2.0, 1.0]);
        n.weights_mut(1).copy_from_slice(&[1.0, -2.0, 0.5]);
        let x = [0.4, 0.9];
        let y1 = n.forward(&x).unwrap();
        let y3 = n.forward(&[1.2, 2.7]).unwrap();
        assert!((y3 - 3.0 * y1).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut n = QNetwork::init(spec(5, 2, 4), 1).unwrap();
        let before = n.params().to_vec();
        let g = Gradients(vec![0.0; before.len()]);
        for _ in 0..3 {
            n.adam_step(&g, &OptimizerConfig::default()).unwrap();
        }
        assert_eq!(n.params(), &before[..]);
        assert_eq!(n.adam_state().t, 3);
        assert!(n.adam_step(&Gradients(vec![0.0; 2]), &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn gradient_clipping_bounds_update_direction() {
        let cfg = OptimizerConfig {
            clip_norm: Some(1.0),
            ..OptimizerConfig::default()
        };
        let mut a = QNetwork::zeros(spec(1, 1, 1)).unwrap();
        let mut b = a.clone();
        let g = Gradients(vec![30.0, 0.0, 40.0, 0.0]);
        a.adam_step(&g, &cfg).unwrap();
        b.adam_step(&Gradients(vec![0.6, 0.0, 0.8, 0.0]), &OptimizerConfig::default()).unwrap();
        assert_eq!(a.adam_state().m, b.adam_state().m);
    }

    #[test]
    fn blend_moves_toward_source() {
        let spec = NetSpec::new(3, 1, 2).unwrap();
        let src = QNetwork::init(spec, 4).unwrap();
        let mut dst = QNetwork::zeros(spec).unwrap();
        dst.blend_parameters_from(&src, 0.1).unwrap();
        for (d, s) in dst.params().iter().zip(src.params()) {
            assert_eq!(*d, 0.1 * s);
        }
        dst.blend_parameters_from(&src, 1.0).unwrap();
        assert_eq!(dst.params(), src.params());
        assert!(dst.blend_parameters_from(&src, 0.0).is_err());
        let other = QNetwork::zeros(NetSpec::new(2, 1, 2).unwrap()).unwrap();
        assert!(dst.blend_parameters_from(&other, 0.5).is_err());
    }

    #[test]
    fn copy_is_deep_and_checks_spec() {
        let src = QNetwork::init(spec(23, 1, 8), 2).unwrap();
        let mut dst = QNetwork::init(spec(23, 1, 8), 3).unwrap();
        dst.adam_step(&Gradients(vec![1.0; src.params().len()]), &OptimizerConfig::default())
            .unwrap();
        let adam = dst.adam_state().clone();
        dst.copy_parameters_from(&src).unwrap();
        assert_eq!(dst.adam_state(), &adam);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..23).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_eq!(src.forward(&x).unwrap(), dst.forward(&x).unwrap());
        }
        let mut src = src;
        src.params_mut()[0] += 1.0;
        assert_ne!(src.params()[0], dst.params()[0]);

        let mut other = QNetwork::init(spec(23, 1, 16), 3).unwrap();
        assert!(other.copy_parameters_from(&src).is_err());
    }

    #[test]
    fn identical_updates_are_bit_identical() {
        let run = || {
            let mut n = QNetwork::init(spec(6, 2, 5), 4).unwrap();
            for i in 0..20 {
                let batch = vec![(vec![0.1 * i as f64; 6], 1.0), (vec![0.3; 6], -0.5)];
                let (_, g) = n.loss_and_gradients(&batch).unwrap();
                n.adam_step(&g, &OptimizerConfig::default()).unwrap();
            }
            n
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_foreign_format() {
        let n = QNetwork::init(spec(3, 1, 2), 0).unwrap();
        let text = n.to_json().replace(FORMAT_NAME, "other");
        assert!(QNetwork::from_json(&text).is_err());
    }

    proptest! {
        #[test]
        fn serialization_is_bit_exact(seed in any::<u64>(), layers in 1usize..4, width in 1usize..9, steps in 0usize..4) {
            let mut n = QNetwork::init(spec(7, layers, width), seed).unwrap();
            for i in 0..steps {
                let (_, g) = n.loss_and_gradients(&[(vec![0.1 * i as f64 + 0.05; 7], 1.0 / 3.0)]).unwrap();
                n.adam_step(&g, &OptimizerConfig::default()).unwrap();
            }
            let back = QNetwork::from_json(&n.to_json()).unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.params()), bits(n.params()));
            prop_assert_eq!(bits(&back.adam_state().m), bits(&n.adam_state().m));
            prop_assert_eq!(bits(&back.adam_state().v), bits(&n.adam_state().v));
            prop_assert_eq!(back, n);
        }
    }
}

//! Single-hidden-layer Q-network, semi-gradient TD loss and Adam.
//!
//! Parameters live in one flat vector, layer-ordered and row-major:
//! `W1 [hidden x input]`, `b1 [hidden]`, `W2 [output x hidden]`, `b2 [output]`.
//! Gradients and Adam moments share this layout. The hidden activation is ReLU.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning hyperparameters shared by every agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub gamma: f64,
    pub eps_sel: f64,
    pub eps_dil: f64,
    pub buffer_capacity: usize,
    pub lr: f64,
    pub hidden_dim: usize,
    pub init: InitScheme,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            gamma: 0.99,
            eps_sel: 0.1,
            eps_dil: 0.05,
            buffer_capacity: 256,
            lr: 0.001,
            hidden_dim: 256,
            init: InitScheme::GlorotUniform,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Config(msg)) };
        check(
            (0.0..1.0).contains(&self.gamma),
            format!("gamma must lie in [0, 1), got {}", self.gamma),
        )?;
        check(
            (0.0..=1.0).contains(&self.eps_sel),
            format!("eps_sel must lie in [0, 1], got {}", self.eps_sel),
        )?;
        check(
            (0.0..=1.0).contains(&self.eps_dil),
            format!("eps_dil must lie in [0, 1], got {}", self.eps_dil),
        )?;
        check(self.buffer_capacity > 0, "buffer_capacity must be positive".into())?;
        check(
            self.lr.is_finite() && self.lr > 0.0,
            format!("lr must be positive, got {}", self.lr),
        )?;
        check(self.hidden_dim > 0, "hidden_dim must be positive".into())
    }
}

/// One transition `(s, a, r, s')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    params: Vec<f64>,
}

/// Gradient of a loss with respect to every parameter of a [`QNetwork`], in its flat layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl QNetwork {
    /// Glorot-uniform weights and zero biases; see [`InitScheme::GlorotUniform`].
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        QNetwork::init_with(InitScheme::GlorotUniform, input_dim, hidden_dim, output_dim, rng)
    }

    pub fn init_with<R: Rng + ?Sized>(
        scheme: InitScheme,
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        assert!(input_dim > 0 && hidden_dim > 0 && output_dim > 0, "network dimensions must be positive");
        let mut net = QNetwork::zeros(input_dim, hidden_dim, output_dim);
        let (w1, b1, w2, b2) = net.split_mut();
        match scheme {
            InitScheme::GlorotUniform => {
                let l1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
                let l2 = (6.0 / (hidden_dim + output_dim) as f64).sqrt();
                fill_uniform(w1, l1, rng);
                fill_uniform(w2, l2, rng);
            }
            InitScheme::FanInUniform => {
                let l1 = 1.0 / (input_dim as f64).sqrt();
                let l2 = 1.0 / (hidden_dim as f64).sqrt();
                fill_uniform(w1, l1, rng);
                fill_uniform(b1, l1, rng);
                fill_uniform(w2, l2, rng);
                fill_uniform(b2, l2, rng);
            }
        }
        net
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        let n = hidden_dim * input_dim + hidden_dim + output_dim * hidden_dim + output_dim;
        QNetwork {
            input_dim,
            hidden_dim,
            output_dim,
            params: vec![0.0; n],
        }
    }

    /// Builds a network from explicit row-major tensors.
    pub fn from_parts(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        w1: &[f64],
        b1: &[f64],
        w2: &[f64],
        b2: &[f64],
    ) -> Result<Self> {
        let mut net = QNetwork::zeros(input_dim, hidden_dim, output_dim);
        let expect = |got: usize, expected: usize| {
            if got == expected {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected, got })
            }
        };
        expect(w1.len(), hidden_dim * input_dim)?;
        expect(b1.len(), hidden_dim)?;
        expect(w2.len(), output_dim * hidden_dim)?;
        expect(b2.len(), output_dim)?;
        let (dw1, db1, dw2, db2) = net.split_mut();
        dw1.copy_from_slice(w1);
        db1.copy_from_slice(b1);
        dw2.copy_from_slice(w2);
        db2.copy_from_slice(b2);
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self) -> [usize; 3] {
        let a = self.hidden_dim * self.input_dim;
        let b = a + self.hidden_dim;
        let c = b + self.output_dim * self.hidden_dim;
        [a, b, c]
    }

    /// `(W1, b1, W2, b2)` views.
    pub fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let [a, b, c] = self.offsets();
        let (w1, rest) = self.params.split_at(a);
        let (b1, rest) = rest.split_at(b - a);
        let (w2, b2) = rest.split_at(c - b);
        (w1, b1, w2, b2)
    }

    fn split_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let [a, b, c] = self.offsets();
        let (w1, rest) = self.params.split_at_mut(a);
        let (b1, rest) = rest.split_at_mut(b - a);
        let (w2, b2) = rest.split_at_mut(c - b);
        (w1, b1, w2, b2)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Hidden pre-activations into `z`, Q-values into `q`.
    fn forward_into(&self, x: &[f64], z: &mut [f64], q: &mut [f64]) {
        let (w1, b1, w2, b2) = self.split();
        for (j, zj) in z.iter_mut().enumerate() {
            let row = &w1[j * self.input_dim..(j + 1) * self.input_dim];
            *zj = b1[j] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        for (k, qk) in q.iter_mut().enumerate() {
            let row = &w2[k * self.hidden_dim..(k + 1) * self.hidden_dim];
            *qk = b2[k] + row.iter().zip(z.iter()).map(|(w, &zj)| w * zj.max(0.0)).sum::<f64>();
        }
    }

    /// `W2 relu(W1 x + b1) + b2`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut z = vec![0.0; self.hidden_dim];
        let mut q = vec![0.0; self.output_dim];
        self.forward_into(x, &mut z, &mut q);
        Ok(q)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn to_checkpoint(&self) -> NetworkCheckpoint {
        let (w1, b1, w2, b2) = self.split();
        NetworkCheckpoint {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            output_dim: self.output_dim,
            activation: "relu".to_string(),
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: b2.to_vec(),
        }
    }

    pub fn from_checkpoint(ck: &NetworkCheckpoint) -> Result<Self> {
        if ck.activation != "relu" {
            return Err(Error::Config(format!("unsupported activation `{}`", ck.activation)));
        }
        QNetwork::from_parts(ck.input_dim, ck.hidden_dim, ck.output_dim, &ck.w1, &ck.b1, &ck.w2, &ck.b2)
    }
}

fn fill_uniform<R: Rng + ?Sized>(values: &mut [f64], limit: f64, rng: &mut R) {
    for v in values {
        *v = rng.gen_range(-limit..limit);
    }
}

/// How fresh network parameters are drawn. Draws are consumed tensor by tensor in
/// layout order, each tensor row-major.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Weights `U[-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`, zero biases.
    #[default]
    GlorotUniform,
    /// Weights and biases `U[-l, l)` with `l = 1 / sqrt(fan_in)`, the usual default of
    /// deep-learning frameworks for dense layers.
    FanInUniform,
}

/// JSON checkpoint of a network; tensors are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCheckpoint {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub activation: String,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Mean squared TD error over `batch` and its gradient.
///
/// The target `r + gamma * max_a' Q(s', a')` is computed with the same network and
/// held constant under differentiation.
pub fn td_loss_and_grad(net: &QNetwork, batch: &[Experience], gamma: f64) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (input, hidden, output) = (net.input_dim, net.hidden_dim, net.output_dim);
    let mut grads = vec![0.0; net.num_params()];
    let mut z = vec![0.0; hidden];
    let mut q = vec![0.0; output];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    let [o1, o2, o3] = net.offsets();
    let (_, _, w2, _) = net.split();

    for e in batch {
        net.check_input(&e.s)?;
        net.check_input(&e.s_next)?;
        if e.a >= output {
            return Err(Error::DimensionMismatch {
                expected: output,
                got: e.a,
            });
        }
        net.forward_into(&e.s_next, &mut z, &mut q);
        let target = e.r + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        net.forward_into(&e.s, &mut z, &mut q);
        let err = q[e.a] - target;
        loss += err * err * scale;

        // d loss / d q[a]
        let g = 2.0 * err * scale;
        grads[o3 + e.a] += g;
        let w2_row = &w2[e.a * hidden..(e.a + 1) * hidden];
        for j in 0..hidden {
            if z[j] > 0.0 {
                grads[o2 + e.a * hidden + j] += g * z[j];
                let dz = g * w2_row[j];
                grads[o1 + j] += dz;
                let row = &mut grads[j * input..(j + 1) * input];
                for (gw, x) in row.iter_mut().zip(&e.s) {
                    *gw += dz * x;
                }
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { what: "TD loss" });
    }
    Ok((loss, Gradients(grads)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn for_network(net: &QNetwork, config: AdamConfig) -> Self {
        AdamState::new(net.num_params(), config)
    }

    /// One bias-corrected Adam update of `params`.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: "gradients" });
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step.min(i32::MAX as u64) as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { what: "network parameters" });
        }
        Ok(())
    }
}

/// Applies one Adam step to `net`.
pub fn adam_step(net: &mut QNetwork, opt: &mut AdamState, grads: &Gradients) -> Result<()> {
    opt.apply(&mut net.params, &grads.0)
}

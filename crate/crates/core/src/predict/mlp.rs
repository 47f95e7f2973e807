//! Dense feed-forward regressor: ReLU hidden layers, linear output, `max(0, ·)` at inference.
//!
//! All parameters live in one flat vector. Layer `l` with `i` inputs and `o` outputs stores its
//! `o × i` weights row-major followed by its `o` biases.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, weight_decay: 1e-6, batch_size: 64, epochs: 100, seed: 0 }
    }
}

impl TrainConfig {
    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plain struct serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// He-uniform weights `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        let mut m = Self::zeros(dims)?;
        m.seed = seed;
        let mut rng = rng_from(seed, &[stream::INIT]);
        let mut off = 0;
        for w in dims.windows(2) {
            let (fan_in, out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut m.params[off..off + out * fan_in] {
                *p = rng.random_range(-bound..bound);
            }
            off += out * fan_in + out;
        }
        Ok(m)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::domain(format!("invalid layer dimensions {dims:?}")));
        }
        if *dims.last().expect("len >= 2") != 1 {
            return Err(Error::domain("the output layer must have width 1"));
        }
        Ok(Self { dims: dims.to_vec(), params: vec![0.0; param_count(dims)], seed: 0 })
    }

    /// `[input, hidden..., 1]`.
    pub fn with_hidden(input: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self::new(&dims, seed)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Network output before the clamp.
    pub fn raw_forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dims[0] {
            return Err(Error::DimensionMismatch { expected: self.dims[0], actual: x.len() });
        }
        let mut acts = Vec::new();
        self.forward_into(x, &mut acts);
        Ok(acts.last().expect("output layer")[0])
    }

    /// Predicted count, `max(0, raw)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.raw_forward(x)?.max(0.0))
    }

    /// Activations of every layer, input included; hidden layers after ReLU.
    fn forward_into(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.clear();
        acts.push(x.to_vec());
        let layers = self.dims.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[off..off + o * i];
            let b = &self.params[off + o * i..off + o * i + o];
            let prev = &acts[l];
            let mut out: Vec<f64> = (0..o)
                .map(|r| b[r] + w[r * i..(r + 1) * i].iter().zip(prev).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
            off += o * i + o;
        }
    }

    /// Mean squared error of the raw output over `batch`; adds its gradient into `grad`.
    pub fn loss_and_grad(&self, batch: &[(&[f64], f64)], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.params.len());
        let scale = 1.0 / batch.len().max(1) as f64;
        let layers = self.dims.len() - 1;
        let mut acts = Vec::new();
        let mut loss = 0.0;
        for &(x, y) in batch {
            self.forward_into(x, &mut acts);
            let err = acts[layers][0] - y;
            loss += err * err * scale;
            let mut delta = vec![2.0 * err * scale];
            let mut off = self.params.len();
            for l in (0..layers).rev() {
                let (i, o) = (self.dims[l], self.dims[l + 1]);
                off -= o * i + o;
                let prev = &acts[l];
                for r in 0..o {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    grad[off + o * i + r] += d;
                    grad[off + r * i..off + (r + 1) * i].iter_mut().zip(prev).for_each(|(g, a)| *g += d * a);
                }
                if l > 0 {
                    let w = &self.params[off..off + o * i];
                    delta = (0..i)
                        .map(|c| {
                            if prev[c] > 0.0 {
                                (0..o).map(|r| delta[r] * w[r * i + c]).sum()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                }
            }
        }
        loss
    }

    pub fn write_checkpoint<W: Write>(&self, cfg: &TrainConfig, mut w: W) -> Result<()> {
        writeln!(w, "fleet-mlp 1")?;
        let dims: Vec<String> = self.dims.iter().map(usize::to_string).collect();
        writeln!(w, "dims {}", dims.join(" "))?;
        writeln!(w, "seed {}", self.seed)?;
        writeln!(w, "config_hash {}", cfg.hash())?;
        writeln!(w, "params {}", self.params.len())?;
        for p in &self.params {
            // `{:?}` prints the shortest representation that round-trips exactly.
            writeln!(w, "{p:?}")?;
        }
        Ok(())
    }

    /// Reads a checkpoint and returns the model together with its config hash.
    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<(Self, String)> {
        let mut lines = r.lines().enumerate();
        let mut next = |key: &str| -> Result<(usize, String)> {
            let (n, line) = lines.next().ok_or_else(|| Error::parse(0, format!("missing `{key}`")))?;
            let line = line?;
            let rest = line
                .strip_prefix(key)
                .ok_or_else(|| Error::parse(n + 1, format!("expected `{key}`")))?;
            Ok((n + 1, rest.trim().to_string()))
        };
        let (n, version) = next("fleet-mlp")?;
        if version != "1" {
            return Err(Error::parse(n, format!("unsupported checkpoint version {version}")));
        }
        let (n, dims) = next("dims")?;
        let dims = dims
            .split_whitespace()
            .map(|d| d.parse::<usize>().map_err(|e| Error::parse(n, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let (n, seed) = next("seed")?;
        let seed = seed.parse::<u64>().map_err(|e| Error::parse(n, e.to_string()))?;
        let (_, hash) = next("config_hash")?;
        let (n, count) = next("params")?;
        let count = count.parse::<usize>().map_err(|e| Error::parse(n, e.to_string()))?;
        let mut m = Self::zeros(&dims)?;
        m.seed = seed;
        if count != m.params.len() {
            return Err(Error::DimensionMismatch { expected: m.params.len(), actual: count });
        }
        for k in 0..count {
            let (n, v) = next("")?;
            m.params[k] = v.parse::<f64>().map_err(|e| Error::parse(n, e.to_string()))?;
        }
        Ok((m, hash))
    }
}

/// Adam with L2 weight decay added to the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(params: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            let g = grad[k] + self.weight_decay * params[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Mini-batch Adam on the MSE of the raw output. Returns the mean training loss of each epoch.
pub fn train(model: &mut Mlp, data: &[(Vec<f64>, f64)], cfg: &TrainConfig) -> Result<Vec<f64>> {
    use rand::seq::SliceRandom;
    if data.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if let Some((x, _)) = data.iter().find(|(x, _)| x.len() != model.input_dim()) {
        return Err(Error::DimensionMismatch { expected: model.input_dim(), actual: x.len() });
    }
    let mut adam = Adam::new(model.params.len(), cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = rng_from(cfg.seed, &[stream::SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], f64)> = chunk.iter().map(|&k| (data[k].0.as_slice(), data[k].1)).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = model.loss_and_grad(&batch, &mut grad);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut model.params, &grad);
        }
        curve.push(total / data.len() as f64);
    }
    Ok(curve)
}

/// Largest relative difference between backpropagated and central-difference gradients of the
/// single-sample loss `(raw(x) − y)²`.
pub fn gradient_check(model: &Mlp, x: &[f64], y: f64) -> Result<f64> {
    const STEP: f64 = 1e-4;
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::domain("parameters must be finite"));
    }
    if x.len() != model.input_dim() {
        return Err(Error::DimensionMismatch { expected: model.input_dim(), actual: x.len() });
    }
    let mut analytic = vec![0.0; model.params.len()];
    model.loss_and_grad(&[(x, y)], &mut analytic);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let loss = |m: &Mlp| {
        let e = m.raw_forward(x).expect("checked dimension") - y;
        e * e
    };
    for (k, &a) in analytic.iter().enumerate() {
        let orig = probe.params[k];
        probe.params[k] = orig + STEP;
        let up = loss(&probe);
        probe.params[k] = orig - STEP;
        let down = loss(&probe);
        probe.params[k] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let scale = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(&[3, 4, 4, 1]).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), 0.0);
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn tiny_network_by_hand() {
        // 1-1-1: h = relu(2x + 1), out = -3h + 0.5.
        let mut m = Mlp::zeros(&[1, 1, 1]).unwrap();
        m.params_mut().copy_from_slice(&[2.0, 1.0, -3.0, 0.5]);
        assert_eq!(m.raw_forward(&[1.0]).unwrap(), -8.5);
        assert_eq!(m.forward(&[1.0]).unwrap(), 0.0);
        assert_eq!(m.raw_forward(&[-1.0]).unwrap(), 0.5);
        m.params_mut().copy_from_slice(&[2.0, 1.0, 3.0, 0.5]);
        assert_eq!(m.forward(&[1.0]).unwrap(), 9.5);
    }

    #[test]
    fn two_parameter_gradient() {
        // 1-1 linear net out = w x + b: dL/dw = 2(wx + b − y)x. At w=0.5, b=0.2, x=3, y=1: 4.2.
        let mut m = Mlp::zeros(&[1, 1]).unwrap();
        m.params_mut().copy_from_slice(&[0.5, 0.2]);
        let mut g = vec![0.0; 2];
        let loss = m.loss_and_grad(&[(&[3.0], 1.0)], &mut g);
        assert!((loss - 0.49).abs() < 1e-12);
        assert!((g[0] - 4.2).abs() < 1e-12 && (g[1] - 1.4).abs() < 1e-12);
        assert!(gradient_check(&m, &[3.0], 1.0).unwrap() < 1e-4);
    }

    #[test]
    fn zero_point_is_stationary() {
        let m = Mlp::zeros(&[2, 3, 1]).unwrap();
        let mut g = vec![0.0; m.params().len()];
        m.loss_and_grad(&[(&[0.0, 0.0], 0.0)], &mut g);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_net_gradients() {
        let m = Mlp::new(&[4, 6, 5, 1], 3).unwrap();
        assert!(m.params().len() <= 100);
        let err = gradient_check(&m, &[0.3, -1.2, 0.8, 0.1], 0.7).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(Mlp::new(&[5, 8, 1], 1).unwrap(), Mlp::new(&[5, 8, 1], 1).unwrap());
        assert_ne!(Mlp::new(&[5, 8, 1], 1).unwrap(), Mlp::new(&[5, 8, 1], 2).unwrap());
    }

    #[test]
    fn identical_pairs_fit() {
        let mut m = Mlp::new(&[2, 8, 8, 1], 0).unwrap();
        let data = vec![(vec![0.5, -0.5], 3.0); 16];
        let cfg = TrainConfig { learning_rate: 1e-2, epochs: 500, batch_size: 8, ..TrainConfig::default() };
        let curve = train(&mut m, &data, &cfg).unwrap();
        assert!(*curve.last().unwrap() < 1e-6, "{:?}", curve.last());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Mlp::new(&[3, 4, 1], 11).unwrap();
        let cfg = TrainConfig::default();
        let mut buf = Vec::new();
        m.write_checkpoint(&cfg, &mut buf).unwrap();
        let (back, hash) = Mlp::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(hash, cfg.hash());
        assert_eq!(hash.len(), 16);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut m = Mlp::new(&[1, 1], 0).unwrap();
        let data = vec![(vec![f64::NAN], 1.0)];
        assert!(matches!(train(&mut m, &data, &TrainConfig::default()), Err(Error::NonFiniteLoss { epoch: 0 })));
    }
}

//! Small dense feed-forward networks with hand-written backpropagation and
//! the Adam optimizer.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "MLP1" | u32 layer_count
//! per layer: u32 in | u32 out | u8 activation (0 linear, 1 relu, 2 tanh)
//!            | out*in f64 weights (row-major) | out f64 biases
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::rng_from;

const MLP_MAGIC: &[u8; 4] = b"MLP1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Activation::Linear),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Tanh),
            _ => Err(Error::Header(format!("unknown activation tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        let outputs = weights.len();
        let inputs = weights.first().map_or(0, Vec::len);
        if outputs == 0 || inputs == 0 || biases.len() != outputs {
            return Err(invalid("layer shapes do not agree"));
        }
        if weights.iter().any(|r| r.len() != inputs) {
            return Err(invalid("ragged weight matrix"));
        }
        Ok(Layer {
            inputs,
            outputs,
            weights: weights.concat(),
            biases,
            activation,
        })
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(self.biases.iter().flatten())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|g| *g == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(invalid(format!(
                    "layer output {} does not feed input {}",
                    w[0].outputs, w[1].inputs
                )));
            }
        }
        let net = Mlp { layers };
        if !net.is_finite() {
            return Err(Error::NonFinite("network parameter".into()));
        }
        Ok(net)
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    /// `sizes` lists every layer width including input and output; hidden
    /// layers use `hidden`, the last layer `output`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid("need at least input and output sizes, all positive"));
        }
        let mut rng = rng_from(seed);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights: (0..fan_in * fan_out)
                        .map(|_| rng.random_range(-limit..limit))
                        .collect(),
                    biases: vec![0.0; fan_out],
                    activation: if i == last { output } else { hidden },
                }
            })
            .collect();
        Mlp::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Multiplies the last layer's weights and biases by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weights.iter_mut().for_each(|w| *w *= factor);
        last.biases.iter_mut().for_each(|b| *b *= factor);
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for l in &self.layers {
            a = l.affine(&a).into_iter().map(|z| l.activation.apply(z)).collect();
        }
        Ok(a)
    }

    /// Gradients of `upstream . forward(x)` with respect to every parameter
    /// and to the input.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        self.check_input(x)?;
        if upstream.len() != self.out_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.out_dim(),
                got: upstream.len(),
            });
        }
        // inputs[i] feeds layer i; pre[i] / post[i] are its pre- and post-activations
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for l in &self.layers {
            let z = l.affine(&a);
            let out: Vec<f64> = z.iter().map(|v| l.activation.apply(*v)).collect();
            inputs.push(std::mem::replace(&mut a, out.clone()));
            pre.push(z);
            post.push(out);
        }

        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            for ((g, z), out) in delta.iter_mut().zip(&pre[i]).zip(&post[i]) {
                *g *= l.activation.derivative(*z, *out);
            }
            let input = &inputs[i];
            for (o, g) in delta.iter().enumerate() {
                grads.biases[i][o] = *g;
                let row = &mut grads.weights[i][o * l.inputs..(o + 1) * l.inputs];
                for (w, v) in row.iter_mut().zip(input) {
                    *w = g * v;
                }
            }
            let mut next = vec![0.0; l.inputs];
            for (o, g) in delta.iter().enumerate() {
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                for (n, w) in next.iter_mut().zip(row) {
                    *n += g * w;
                }
            }
            delta = next;
        }
        Ok((grads, delta))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MLP_MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.inputs as u32).to_le_bytes())?;
            w.write_all(&(l.outputs as u32).to_le_bytes())?;
            w.write_all(&[l.activation.tag()])?;
            for v in l.weights.iter().chain(&l.biases) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if &b4 != MLP_MAGIC {
            return Err(Error::Header(format!("bad magic {b4:?}, expected \"MLP1\"")));
        }
        let mut u32_ = |r: &mut R| -> Result<usize> {
            r.read_exact(&mut b4)?;
            Ok(u32::from_le_bytes(b4) as usize)
        };
        let count = u32_(&mut r)?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = u32_(&mut r)?;
            let outputs = u32_(&mut r)?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let mut vals = vec![0.0f64; inputs * outputs + outputs];
            let mut b8 = [0u8; 8];
            for v in vals.iter_mut() {
                r.read_exact(&mut b8)?;
                *v = f64::from_le_bytes(b8);
            }
            let biases = vals.split_off(inputs * outputs);
            layers.push(Layer {
                inputs,
                outputs,
                weights: vals,
                biases,
                activation: Activation::from_tag(tag[0])?,
            });
        }
        Mlp::from_layers(layers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators and step counter for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }
}

/// One bias-corrected Adam update of `net` in place.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.weights.len() != net.layers.len()
        || net
            .layers
            .iter()
            .zip(grads.weights.iter().zip(&grads.biases))
            .any(|(l, (w, b))| w.len() != l.weights.len() || b.len() != l.biases.len())
    {
        return Err(invalid("gradient shapes do not match the network"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    for (i, l) in net.layers.iter_mut().enumerate() {
        update(
            &mut l.weights,
            &grads.weights[i],
            &mut state.m.weights[i],
            &mut state.v.weights[i],
        );
        update(
            &mut l.biases,
            &grads.biases[i],
            &mut state.m.biases[i],
            &mut state.v.biases[i],
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_net(w: f64, b: f64) -> Mlp {
        Mlp::from_layers(vec![Layer::new(vec![vec![w]], vec![b], Activation::Linear).unwrap()])
            .unwrap()
    }

    #[test]
    fn affine_arithmetic() {
        assert_eq!(scalar_net(2.0, 1.0).forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn relu_clamps_negative_preactivations() {
        let l = Layer::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], Activation::Relu)
            .unwrap();
        let net = Mlp::from_layers(vec![l]).unwrap();
        assert_eq!(net.forward(&[-1.0, -2.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_chain_rule() {
        let (g, dx) = scalar_net(2.0, 1.0).backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(g.weights[0], vec![3.0]);
        assert_eq!(g.biases[0], vec![1.0]);
        assert_eq!(dx, vec![2.0]);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let net = Mlp::new(&[3, 8, 2], Activation::Tanh, Activation::Linear, 1).unwrap();
        let (g, dx) = net.backward(&[0.1, -0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.is_zero());
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_checks() {
        let net = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Linear, 1).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(net.forward(&[1.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut net = Mlp::new(&[2, 4, 1], Activation::Relu, Activation::Linear, 3).unwrap();
        let before = net.clone();
        let mut st = AdamState::new(&net, AdamConfig::default());
        adam_step(&mut net, &Gradients::zeros_like(&before), &mut st).unwrap();
        assert_eq!(net, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut net = scalar_net(0.5, 0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(&net, cfg);
        let g = Gradients {
            weights: vec![vec![1.0]],
            biases: vec![vec![0.0]],
        };
        adam_step(&mut net, &g, &mut st).unwrap();
        // m_hat = 1, v_hat = 1 → Δ = -0.1 / (1 + 1e-8)
        let delta = net.layers()[0].weights[0] - 0.5;
        assert!((delta + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{delta}");
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = scalar_net(0.5, 0.0);
        let mut st = AdamState::new(&net, AdamConfig::default());
        let g = Gradients {
            weights: vec![vec![f64::NAN]],
            biases: vec![vec![0.0]],
        };
        assert!(matches!(adam_step(&mut net, &g, &mut st), Err(Error::NonFinite(_))));
    }

    #[test]
    fn adam_is_deterministic() {
        let mut a = Mlp::new(&[3, 5, 2], Activation::Tanh, Activation::Linear, 9).unwrap();
        let mut b = a.clone();
        let (g, _) = a.backward(&[0.3, 0.1, -0.7], &[1.0, -2.0]).unwrap();
        let mut sa = AdamState::new(&a, AdamConfig::default());
        let mut sb = sa.clone();
        adam_step(&mut a, &g, &mut sa).unwrap();
        adam_step(&mut b, &g, &mut sb).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Mlp::new(&[4, 6, 3], Activation::Relu, Activation::Tanh, 2).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MLP1");
        assert_eq!(Mlp::read_from(&buf[..]).unwrap(), net);
        assert!(Mlp::read_from(&b"NOPE"[..]).is_err());
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use crate::error::{Error, Result};

/// Layer stack plus the identifier stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub id: String,
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Output dimension after every layer, validating the chain.
    pub fn dims(&self) -> Result<Vec<usize>> {
        let mut dims = Vec::with_capacity(self.layers.len() + 1);
        dims.push(self.input_dim);
        for layer in &self.layers {
            let next = layer.output_dim(*dims.last().unwrap())?;
            dims.push(next);
        }
        Ok(dims)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }
}

/// Per-call record of every layer's output, needed by [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }

    /// Output of layer `index` (zero-based).
    pub fn layer_output(&self, index: usize) -> &[f64] {
        &self.activations[index + 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: Architecture,
    dims: Vec<usize>,
    offsets: Vec<usize>,
    pub params: Vec<f64>,
}

impl Network {
    /// Builds a network with all parameters zero.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        let n = arch.param_count();
        Self::from_params(arch, vec![0.0; n])
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let dims = arch.dims()?;
        if params.len() != arch.param_count() {
            return Err(Error::invalid(format!(
                "architecture {} needs {} parameters, got {}",
                arch.id,
                arch.param_count(),
                params.len()
            )));
        }
        let mut offsets = Vec::with_capacity(arch.layers.len() + 1);
        let mut acc = 0;
        for layer in &arch.layers {
            offsets.push(acc);
            acc += layer.param_count();
        }
        offsets.push(acc);
        Ok(Self {
            arch,
            dims,
            offsets,
            params,
        })
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        for (i, layer) in net.arch.layers.iter().enumerate() {
            let fan_in = layer.fan_in();
            if fan_in == 0 {
                continue;
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            let start = net.offsets[i];
            for w in &mut net.params[start..start + layer.weight_count()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: &[f64]) -> Trace {
        self.forward_with(&self.params, x)
    }

    /// Forward pass with an explicit parameter vector of this architecture.
    pub fn forward_with(&self, params: &[f64], x: &[f64]) -> Trace {
        assert_eq!(x.len(), self.input_dim(), "input dimension mismatch");
        let mut activations = Vec::with_capacity(self.arch.layers.len() + 1);
        activations.push(x.to_vec());
        for (i, layer) in self.arch.layers.iter().enumerate() {
            let p = &params[self.offsets[i]..self.offsets[i + 1]];
            let y = layer.forward(p, activations.last().unwrap(), self.dims[i + 1]);
            activations.push(y);
        }
        Trace { activations }
    }

    /// Convenience wrapper returning only the output.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).activations.pop().unwrap()
    }

    /// Back-propagates `grad_out` through a trace produced by this network.
    /// Parameter gradients are added into `grad_params` when supplied.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_out: &[f64],
        mut grad_params: Option<&mut [f64]>,
    ) -> Vec<f64> {
        assert_eq!(grad_out.len(), self.output_dim(), "gradient dimension mismatch");
        let mut grad = grad_out.to_vec();
        for (i, layer) in self.arch.layers.iter().enumerate().rev() {
            let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
            let gp = grad_params.as_deref_mut().map(|g| &mut g[lo..hi]);
            grad = layer.backward(
                &self.params[lo..hi],
                &trace.activations[i],
                &trace.activations[i + 1],
                &grad,
                gp,
            );
        }
        grad
    }

    /// Clamps every parameter into `[-bound, bound]`.
    pub fn clip_weights(&mut self, bound: f64) {
        for p in &mut self.params {
            *p = p.clamp(-bound, bound);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// SHA-256 over the architecture description and the little-endian
    /// parameter bytes.
    pub fn checksum(&self) -> String {
        let mut bytes = serde_json::to_vec(&self.arch).expect("architecture serializes");
        for p in &self.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        crate::io::sha256_hex(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn finite_difference_check(arch: Architecture, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::init(arch, &mut rng).unwrap();
        // bias terms start at zero; perturb so every parameter matters
        let mut net = net;
        for p in &mut net.params {
            *p += rng.random_range(-0.05..0.05);
        }
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |n: &Network, x: &[f64]| -> f64 {
            n.predict(x).iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let trace = net.forward(&x);
        let mut gp = vec![0.0; net.param_count()];
        let gx = net.backward(&trace, &probe, Some(&mut gp));
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-6 * (1.0 + fd.abs()), "input {i}: {fd} vs {}", gx[i]);
        }
        for i in (0..net.param_count()).step_by(7.max(net.param_count() / 60)) {
            let mut np = net.clone();
            np.params[i] += h;
            let mut nm = net.clone();
            nm.params[i] -= h;
            let fd = (loss(&np, &x) - loss(&nm, &x)) / (2.0 * h);
            assert!((fd - gp[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", gp[i]);
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let arch = Architecture {
            id: "t".into(),
            input_dim: 3,
            layers: vec![
                LayerSpec::Linear { inputs: 3, outputs: 5 },
                LayerSpec::LeakyRelu { slope: 0.2 },
                LayerSpec::Linear { inputs: 5, outputs: 4 },
                LayerSpec::Tanh,
                LayerSpec::Linear { inputs: 4, outputs: 2 },
                LayerSpec::Sigmoid,
            ],
        };
        finite_difference_check(arch, 1);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let arch = Architecture {
            id: "t".into(),
            input_dim: 5 * 5 * 2,
            layers: vec![
                LayerSpec::Conv2d { input: [5, 5, 2], out_channels: 3, kernel: 3, stride: 2, padding: 1 },
                LayerSpec::Tanh,
                LayerSpec::ConvTranspose2d { input: [3, 3, 3], out_channels: 2, kernel: 4, stride: 2, padding: 1 },
                LayerSpec::Tanh,
            ],
        };
        assert_eq!(arch.dims().unwrap(), vec![50, 27, 27, 72, 72]);
        finite_difference_check(arch, 2);
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let arch = Architecture {
            id: "bad".into(),
            input_dim: 3,
            layers: vec![LayerSpec::Linear { inputs: 4, outputs: 1 }],
        };
        assert!(Network::zeros(arch).is_err());
    }

    #[test]
    fn weight_clipping_bounds_every_parameter() {
        let arch = super::super::arch::mlp("c", 2, &[8], 1, LayerSpec::Relu, None);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::init(arch, &mut rng).unwrap();
        for p in &mut net.params {
            *p *= 100.0;
        }
        net.clip_weights(0.01);
        assert!(net.params.iter().all(|p| p.abs() <= 0.01));
    }
}

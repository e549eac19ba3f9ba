//! Small fully-connected networks with exact reverse-mode gradients.
//!
//! Everything is `f64` and single-sample; batching is grad accumulation at
//! the call site. The tape captures layer inputs and pre-activations so a
//! matching `backward` replays the exact forward computation.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug)]
pub struct Layer {
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Forward-pass record: inputs to every layer plus pre-activations.
#[derive(Clone, Debug)]
pub struct Tape {
    pub(crate) layer_inputs: Vec<Vec<f64>>,
    pub(crate) preacts: Vec<Vec<f64>>,
}

/// Per-parameter gradients plus the gradient w.r.t. the network input
/// (needed to chain networks and for straight-through estimation).
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Network {
    /// MLP with ReLU hidden layers and an identity output layer. Parameters
    /// are initialized uniformly in `±1/sqrt(fan_in)`, deterministically in
    /// `seed`.
    pub fn mlp(dims: &[usize], seed: u64) -> Network {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, pair) in dims.windows(2).enumerate() {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let limit = 1.0 / (in_dim as f64).sqrt();
            let weights = (0..in_dim * out_dim)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            let activation = if i + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer {
                weights,
                bias: vec![0.0; out_dim],
                activation,
                in_dim,
                out_dim,
            });
        }
        Network { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if input.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "forward expects input of length {}, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = layer.bias.clone();
            for (row, z_out) in z.iter_mut().enumerate() {
                let w = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                let mut acc = 0.0;
                for (wi, xi) in w.iter().zip(&x) {
                    acc += wi * xi;
                }
                *z_out += acc;
            }
            let a = match layer.activation {
                Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
                Activation::Identity => z.clone(),
            };
            layer_inputs.push(x);
            preacts.push(z);
            x = a;
        }
        Ok((
            x,
            Tape {
                layer_inputs,
                preacts,
            },
        ))
    }

    /// Inference without a tape. Panics on dimension mismatch.
    pub fn infer(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim(), "infer input dim mismatch");
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut a = layer.bias.clone();
            for (row, out) in a.iter_mut().enumerate() {
                let w = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                let mut acc = 0.0;
                for (wi, xi) in w.iter().zip(&x) {
                    acc += wi * xi;
                }
                *out += acc;
            }
            if layer.activation == Activation::Relu {
                for v in &mut a {
                    *v = v.max(0.0);
                }
            }
            x = a;
        }
        x
    }

    /// Exact gradients of a scalar loss given `d loss / d output`.
    pub fn backward(&self, tape: &Tape, out_grad: &[f64]) -> Result<Gradients> {
        if tape.layer_inputs.len() != self.layers.len()
            || tape
                .preacts
                .iter()
                .zip(&self.layers)
                .any(|(p, l)| p.len() != l.out_dim)
            || tape
                .layer_inputs
                .iter()
                .zip(&self.layers)
                .any(|(x, l)| x.len() != l.in_dim)
        {
            return Err(Error::contract("tape does not match this network"));
        }
        if out_grad.len() != self.output_dim() {
            return Err(Error::contract("output gradient dim mismatch"));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut da = out_grad.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let z = &tape.preacts[idx];
            let x = &tape.layer_inputs[idx];
            // dz = da * act'(z)
            let dz: Vec<f64> = match layer.activation {
                Activation::Relu => da
                    .iter()
                    .zip(z)
                    .map(|(&g, &zv)| if zv > 0.0 { g } else { 0.0 })
                    .collect(),
                Activation::Identity => da.clone(),
            };
            let dw = &mut grads.weights[idx];
            for (row, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                let wrow = &mut dw[row * layer.in_dim..(row + 1) * layer.in_dim];
                for (w, &xi) in wrow.iter_mut().zip(x) {
                    *w += dzr * xi;
                }
            }
            for (b, &dzr) in grads.biases[idx].iter_mut().zip(&dz) {
                *b += dzr;
            }
            // dx = W^T dz
            let mut dx = vec![0.0; layer.in_dim];
            for (row, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                let wrow = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                for (d, &w) in dx.iter_mut().zip(wrow) {
                    *d += dzr * w;
                }
            }
            da = dx;
        }
        grads.input = da;
        Ok(grads)
    }
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Gradients {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.input.iter_mut().zip(&other.input) {
            *x += y;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for x in a.iter_mut() {
                *x *= factor;
            }
        }
        for x in self.input.iter_mut() {
            *x *= factor;
        }
    }

    /// L2 norm over the parameter gradients (the input gradient is not a
    /// parameter and is excluded).
    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for a in self.weights.iter().chain(self.biases.iter()) {
            for x in a {
                acc += x * x;
            }
        }
        acc.sqrt()
    }

    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let f = max_norm / norm;
            for a in self.weights.iter_mut().chain(self.biases.iter_mut()) {
                for x in a.iter_mut() {
                    *x *= f;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|a| a.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_identity_layer(dim: usize) -> Network {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Network {
            layers: vec![Layer {
                weights,
                bias: vec![0.0; dim],
                activation: Activation::Identity,
                in_dim: dim,
                out_dim: dim,
            }],
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single_identity_layer(3);
        let (out, _) = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut net = single_identity_layer(2);
        net.layers[0].activation = Activation::Relu;
        let (out, _) = net.forward(&[-1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 2.0]);
    }

    #[test]
    fn two_fixed_layers_match_hand_computation() {
        let net = Network {
            layers: vec![
                Layer {
                    weights: vec![1.0, 2.0, 3.0, 4.0],
                    bias: vec![0.5, -0.5],
                    activation: Activation::Relu,
                    in_dim: 2,
                    out_dim: 2,
                },
                Layer {
                    weights: vec![1.0, -1.0, 2.0, 1.0],
                    bias: vec![0.0, 1.0],
                    activation: Activation::Identity,
                    in_dim: 2,
                    out_dim: 2,
                },
            ],
        };
        let (out, _) = net.forward(&[1.0, 1.0]).unwrap();
        // z1 = (3.5, 6.5), relu unchanged; z2 = (3.5-6.5, 7+6.5+1)
        assert_eq!(out, vec![-3.0, 14.5]);
    }

    #[test]
    fn linear_gradient_is_input_row() {
        let net = single_identity_layer(3);
        let (_, tape) = net.forward(&[0.25, -1.5, 2.0]).unwrap();
        let grads = net.backward(&tape, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(&grads.weights[0][0..3], &[0.25, -1.5, 2.0]);
        assert_eq!(&grads.weights[0][3..], &[0.0; 6]);
        assert_eq!(grads.biases[0], vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_blocks_gradient_at_negative_preactivation() {
        let mut net = single_identity_layer(2);
        net.layers[0].activation = Activation::Relu;
        let (_, tape) = net.forward(&[-3.0, 1.0]).unwrap();
        let grads = net.backward(&tape, &[1.0, 1.0]).unwrap();
        // Unit 0 saw a negative pre-activation: no gradient flows.
        assert_eq!(grads.weights[0][0], 0.0);
        assert_eq!(grads.biases[0][0], 0.0);
        assert_eq!(grads.biases[0][1], 1.0);
    }

    #[test]
    fn dimension_mismatch_is_contract_violation() {
        let net = single_identity_layer(3);
        assert!(net.forward(&[1.0]).is_err());
        let (_, tape) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        let other = single_identity_layer(2);
        assert!(other.backward(&tape, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn mlp_is_deterministic_in_seed() {
        let a = Network::mlp(&[4, 8, 2], 7);
        let b = Network::mlp(&[4, 8, 2], 7);
        assert_eq!(a.layers[0].weights, b.layers[0].weights);
        let c = Network::mlp(&[4, 8, 2], 8);
        assert_ne!(a.layers[0].weights, c.layers[0].weights);
    }

    #[test]
    fn clip_reduces_norm() {
        let net = Network::mlp(&[3, 4, 2], 1);
        let mut g = Gradients::zeros_like(&net);
        for w in g.weights[0].iter_mut() {
            *w = 10.0;
        }
        let before = g.global_norm();
        assert!(before > 5.0);
        g.clip_global_norm(5.0);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
    }
}

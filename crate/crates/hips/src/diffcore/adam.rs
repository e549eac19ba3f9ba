//! Adam with bias correction over a network's flattened parameters.

use super::network::{Gradients, Network};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> AdamState {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_network(net: &Network, learning_rate: f64) -> AdamState {
        AdamState::new(net.param_count(), learning_rate)
    }
}

/// One Adam update. Flattening order is layer-by-layer, weights then bias.
/// Non-finite gradients reject the whole update.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.weights.len() != net.layers.len() {
        return Err(Error::contract("gradient layer count mismatch"));
    }
    for (layer, (gw, gb)) in net
        .layers
        .iter()
        .zip(grads.weights.iter().zip(&grads.biases))
    {
        if gw.len() != layer.weights.len() || gb.len() != layer.bias.len() {
            return Err(Error::contract("gradient shape mismatch"));
        }
    }
    if !grads.is_finite() {
        return Err(Error::Numerical("non-finite gradient; update rejected".into()));
    }
    if state.m.len() != net.param_count() {
        return Err(Error::contract("optimizer state size mismatch"));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let mut idx = 0;
    for (layer, (gw, gb)) in net
        .layers
        .iter_mut()
        .zip(grads.weights.iter().zip(&grads.biases))
    {
        for (p, &g) in layer.weights.iter_mut().chain(layer.bias.iter_mut()).zip(
            gw.iter().chain(gb.iter()),
        ) {
            let m = &mut state.m[idx];
            let v = &mut state.v[idx];
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
            idx += 1;
        }
    }
    Ok(())
}

/// Adam over a bare parameter vector (used for the codebook).
pub fn adam_step_flat(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::contract("flat adam shape mismatch"));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite gradient; update rejected".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for (idx, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        *p -= state.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::network::{Activation, Layer};

    fn scalar_net(value: f64) -> Network {
        Network {
            layers: vec![Layer {
                weights: vec![value],
                bias: vec![0.0],
                activation: Activation::Identity,
                in_dim: 1,
                out_dim: 1,
            }],
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut net = scalar_net(0.7);
        let mut state = AdamState::for_network(&net, 0.001);
        let grads = Gradients::zeros_like(&net);
        adam_step(&mut net, &grads, &mut state).unwrap();
        assert_eq!(net.layers[0].weights[0], 0.7);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // With g=1 at step 1 the bias-corrected update is lr / (1 + eps).
        let mut net = scalar_net(0.0);
        let mut state = AdamState::for_network(&net, 0.001);
        let mut grads = Gradients::zeros_like(&net);
        grads.weights[0][0] = 1.0;
        adam_step(&mut net, &grads, &mut state).unwrap();
        let delta = net.layers[0].weights[0];
        assert!((delta + 0.001).abs() < 1e-8, "delta {delta}");
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut net = scalar_net(0.3);
        let mut state = AdamState::for_network(&net, 0.001);
        let mut grads = Gradients::zeros_like(&net);
        grads.weights[0][0] = f64::NAN;
        assert!(adam_step(&mut net, &grads, &mut state).is_err());
        assert_eq!(net.layers[0].weights[0], 0.3);
    }
}

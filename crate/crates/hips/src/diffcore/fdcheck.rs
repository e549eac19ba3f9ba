//! Central finite-difference verification of analytic gradients.

use super::network::{Gradients, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Coordinate of one parameter inside a network.
#[derive(Clone, Copy, Debug)]
struct ParamCoord {
    layer: usize,
    bias: bool,
    idx: usize,
}

fn all_coords(net: &Network) -> Vec<ParamCoord> {
    let mut out = Vec::with_capacity(net.param_count());
    for (layer, l) in net.layers.iter().enumerate() {
        for idx in 0..l.weights.len() {
            out.push(ParamCoord {
                layer,
                bias: false,
                idx,
            });
        }
        for idx in 0..l.bias.len() {
            out.push(ParamCoord {
                layer,
                bias: true,
                idx,
            });
        }
    }
    out
}

fn get(net: &Network, c: ParamCoord) -> f64 {
    if c.bias {
        net.layers[c.layer].bias[c.idx]
    } else {
        net.layers[c.layer].weights[c.idx]
    }
}

fn set(net: &mut Network, c: ParamCoord, v: f64) {
    if c.bias {
        net.layers[c.layer].bias[c.idx] = v;
    } else {
        net.layers[c.layer].weights[c.idx] = v;
    }
}

fn analytic_at(grads: &Gradients, c: ParamCoord) -> f64 {
    if c.bias {
        grads.biases[c.layer][c.idx]
    } else {
        grads.weights[c.layer][c.idx]
    }
}

/// Maximum relative error between `analytic` and central finite differences
/// of `loss` over a seeded sample of parameter coordinates (all of them when
/// `sample >= param_count`). The first weight and bias of every layer are
/// always included.
pub fn finite_difference_max_rel_err(
    net: &mut Network,
    loss: impl Fn(&Network) -> f64,
    analytic: &Gradients,
    sample: usize,
    seed: u64,
) -> f64 {
    let coords = all_coords(net);
    let mut picked: Vec<ParamCoord> = Vec::new();
    if sample >= coords.len() {
        picked = coords;
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (layer, l) in net.layers.iter().enumerate() {
            picked.push(ParamCoord {
                layer,
                bias: false,
                idx: 0,
            });
            if !l.bias.is_empty() {
                picked.push(ParamCoord {
                    layer,
                    bias: true,
                    idx: 0,
                });
            }
        }
        while picked.len() < sample {
            picked.push(coords[rng.random_range(0..coords.len())]);
        }
    }

    let mut max_rel = 0.0f64;
    for c in picked {
        let theta = get(net, c);
        let h = 1e-6 * (1.0 + theta.abs());
        set(net, c, theta + h);
        let up = loss(net);
        set(net, c, theta - h);
        let down = loss(net);
        set(net, c, theta);
        let fd = (up - down) / (2.0 * h);
        let a = analytic_at(analytic, c);
        let denom = a.abs().max(fd.abs()).max(1e-6);
        max_rel = max_rel.max((a - fd).abs() / denom);
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::loss::softmax_cross_entropy;

    #[test]
    fn random_net_gradients_match_finite_differences() {
        let mut net = Network::mlp(&[5, 7, 3], 11);
        let input: Vec<f64> = (0..5).map(|i| (i as f64) * 0.3 - 0.7).collect();
        let (out, tape) = net.forward(&input).unwrap();
        let (_, out_grad) = softmax_cross_entropy(&out, 1);
        let analytic = net.backward(&tape, &out_grad).unwrap();
        let input_cl = input.clone();
        let err = finite_difference_max_rel_err(
            &mut net,
            move |n| {
                let o = n.infer(&input_cl);
                softmax_cross_entropy(&o, 1).0
            },
            &analytic,
            usize::MAX,
            0,
        );
        assert!(err < 1e-4, "max relative error {err}");
    }
}

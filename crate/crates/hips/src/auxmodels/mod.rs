//! Learned low-level dynamics and the distance-to-goal heuristic used by
//! planning.
//!
//! The dynamics model predicts the successor's per-cell categories from the
//! current state and action; it is trained exclusively on random-provenance
//! trajectories. Structurally invalid decodes are repaired to "state
//! unchanged" and counted by callers. The value network regresses the raw
//! remaining step count along expert trajectories and is clamped to be
//! nonnegative; it is knowingly non-admissible.

use crate::diffcore::{
    adam_step, per_cell_argmax, per_cell_cross_entropy, AdamState, Gradients, Network,
    GRAD_CLIP_NORM, LR_DYNAMICS, LR_POLICY,
};
use crate::envs::{derive_seed, Action, EnvState, SizeConfig, TrajectoryDataset, ACTION_COUNT};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct AuxConfig {
    pub dynamics_lr: f64,
    pub dynamics_steps: usize,
    pub dynamics_hidden: Vec<usize>,
    pub value_lr: f64,
    pub value_steps: usize,
    pub value_hidden: Vec<usize>,
    pub batch_size: usize,
    pub holdout_fraction: f64,
}

impl AuxConfig {
    pub fn default_for(_config: SizeConfig) -> AuxConfig {
        AuxConfig {
            dynamics_lr: LR_DYNAMICS,
            dynamics_steps: 8000,
            dynamics_hidden: vec![192, 192],
            value_lr: LR_POLICY,
            value_steps: 3000,
            value_hidden: vec![64, 64],
            batch_size: 16,
            holdout_fraction: 0.1,
        }
    }
}

/// `concat(encode(s), onehot(a))` -> per-cell category logits for `s'`.
#[derive(Clone, Debug)]
pub struct DynamicsModel {
    pub net: Network,
    pub env_config: SizeConfig,
}

impl DynamicsModel {
    pub fn new(env_config: SizeConfig, hidden: &[usize], seed: u64) -> DynamicsModel {
        let enc = EnvState::encode_dim(env_config);
        let cells = env_config.cells();
        let cats = EnvState::cell_categories(env_config);
        let mut dims = vec![enc + ACTION_COUNT];
        dims.extend_from_slice(hidden);
        dims.push(cells * cats);
        DynamicsModel {
            net: Network::mlp(&dims, seed),
            env_config,
        }
    }

    fn input(state: &EnvState, action: Action) -> Vec<f64> {
        let mut input = state.encode();
        let mut onehot = [0.0; ACTION_COUNT];
        onehot[action.index()] = 1.0;
        input.extend_from_slice(&onehot);
        input
    }

    /// Per-cell argmax decode of the predicted successor. Structurally
    /// invalid decodes return the input state unchanged with `repaired`
    /// set.
    pub fn predict_next(&self, state: &EnvState, action: Action) -> (EnvState, bool) {
        let logits = self.net.infer(&Self::input(state, action));
        let cells = per_cell_argmax(&logits, EnvState::cell_categories(self.env_config));
        match EnvState::from_cell_codes(self.env_config, &cells) {
            Ok(next) => (next, false),
            Err(_) => (state.clone(), true),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct DynamicsStats {
    pub transitions: usize,
    /// Fraction of held-out transitions whose full successor state decodes
    /// exactly.
    pub holdout_exact_accuracy: f64,
    /// Same, restricted to no-op transitions (invalid moves).
    pub holdout_noop_accuracy: f64,
}

/// Train the dynamics model on `(s, a) -> s'` transitions drawn only from
/// random-provenance records.
pub fn train_dynamics(
    dataset: &TrajectoryDataset,
    env_config: SizeConfig,
    config: &AuxConfig,
    seed: u64,
) -> Result<(DynamicsModel, DynamicsStats)> {
    let mut transitions: Vec<(&EnvState, Action, &EnvState)> = Vec::new();
    for t in dataset.random() {
        for i in 0..t.len() {
            transitions.push((&t.states[i], t.actions[i], &t.states[i + 1]));
        }
    }
    if transitions.is_empty() {
        return Err(Error::config(
            "dynamics training needs random-provenance trajectories",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 30, 0));
    let mut order: Vec<usize> = (0..transitions.len()).collect();
    order.shuffle(&mut rng);
    let holdout_n = ((transitions.len() as f64 * config.holdout_fraction) as usize)
        .clamp(1, transitions.len() - 1);
    let (holdout_idx, train_idx) = order.split_at(holdout_n);

    let mut model = DynamicsModel::new(env_config, &config.dynamics_hidden, derive_seed(seed, 31, 0));
    let mut opt = AdamState::for_network(&model.net, config.dynamics_lr);
    let cats = EnvState::cell_categories(env_config);
    let mut cursor = train_idx.len();
    let mut epoch_order: Vec<usize> = train_idx.to_vec();
    for _ in 0..config.dynamics_steps {
        let mut grads = Gradients::zeros_like(&model.net);
        for _ in 0..config.batch_size {
            if cursor >= epoch_order.len() {
                epoch_order.shuffle(&mut rng);
                cursor = 0;
            }
            let (s, a, s_next) = transitions[epoch_order[cursor]];
            cursor += 1;
            let (logits, tape) = model.net.forward(&DynamicsModel::input(s, a))?;
            let (_, dlogits) = per_cell_cross_entropy(&logits, cats, &s_next.cell_codes());
            grads.add_assign(&model.net.backward(&tape, &dlogits)?);
        }
        grads.scale(1.0 / config.batch_size as f64);
        grads.clip_global_norm(GRAD_CLIP_NORM);
        adam_step(&mut model.net, &grads, &mut opt)?;
    }

    let mut exact = 0usize;
    let mut noop_total = 0usize;
    let mut noop_exact = 0usize;
    for &i in holdout_idx {
        let (s, a, s_next) = transitions[i];
        let (pred, _) = model.predict_next(s, a);
        let hit = pred == *s_next;
        exact += usize::from(hit);
        if s == s_next {
            noop_total += 1;
            noop_exact += usize::from(hit);
        }
    }
    let stats = DynamicsStats {
        transitions: transitions.len(),
        holdout_exact_accuracy: exact as f64 / holdout_idx.len() as f64,
        holdout_noop_accuracy: if noop_total > 0 {
            noop_exact as f64 / noop_total as f64
        } else {
            1.0
        },
    };
    Ok((model, stats))
}

/// Distance-to-goal heuristic: `encode(s)` -> remaining low-level steps.
#[derive(Clone, Debug)]
pub struct ValueHeuristic {
    pub net: Network,
    pub env_config: SizeConfig,
}

impl ValueHeuristic {
    pub fn new(env_config: SizeConfig, hidden: &[usize], seed: u64) -> ValueHeuristic {
        let mut dims = vec![EnvState::encode_dim(env_config)];
        dims.extend_from_slice(hidden);
        dims.push(1);
        ValueHeuristic {
            net: Network::mlp(&dims, seed),
            env_config,
        }
    }

    /// Predicted remaining steps, clamped to be nonnegative.
    pub fn value(&self, state: &EnvState) -> f64 {
        self.net.infer(&state.encode())[0].max(0.0)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ValueStats {
    pub samples: usize,
    pub holdout_mae: f64,
}

/// Squared-error regression of the remaining step count `T - i` over every
/// state of every expert trajectory.
pub fn train_value(
    dataset: &TrajectoryDataset,
    env_config: SizeConfig,
    config: &AuxConfig,
    seed: u64,
) -> Result<(ValueHeuristic, ValueStats)> {
    let mut samples: Vec<(&EnvState, f64)> = Vec::new();
    for t in dataset.expert() {
        let total = t.len();
        for (i, s) in t.states.iter().enumerate() {
            samples.push((s, (total - i) as f64));
        }
    }
    if samples.is_empty() {
        return Err(Error::config("value training needs expert trajectories"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 32, 0));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let holdout_n = ((samples.len() as f64 * config.holdout_fraction) as usize)
        .clamp(1, samples.len() - 1);
    let (holdout_idx, train_idx) = order.split_at(holdout_n);

    let mut value = ValueHeuristic::new(env_config, &config.value_hidden, derive_seed(seed, 33, 0));
    let mut opt = AdamState::for_network(&value.net, config.value_lr);
    let mut epoch_order: Vec<usize> = train_idx.to_vec();
    let mut cursor = epoch_order.len();
    for _ in 0..config.value_steps {
        let mut grads = Gradients::zeros_like(&value.net);
        for _ in 0..config.batch_size {
            if cursor >= epoch_order.len() {
                epoch_order.shuffle(&mut rng);
                cursor = 0;
            }
            let (s, target) = samples[epoch_order[cursor]];
            cursor += 1;
            let (out, tape) = value.net.forward(&s.encode())?;
            let d = 2.0 * (out[0] - target);
            grads.add_assign(&value.net.backward(&tape, &[d])?);
        }
        grads.scale(1.0 / config.batch_size as f64);
        grads.clip_global_norm(GRAD_CLIP_NORM);
        adam_step(&mut value.net, &grads, &mut opt)?;
    }

    let mae = holdout_idx
        .iter()
        .map(|&i| {
            let (s, target) = samples[i];
            (value.value(s) - target).abs()
        })
        .sum::<f64>()
        / holdout_idx.len() as f64;
    Ok((
        value,
        ValueStats {
            samples: samples.len(),
            holdout_mae: mae,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::generate_dataset;

    fn stp3() -> SizeConfig {
        SizeConfig::Stp { side: 3 }
    }

    fn quick_config() -> AuxConfig {
        AuxConfig {
            dynamics_steps: 5000,
            dynamics_hidden: vec![160, 160],
            dynamics_lr: 1e-3,
            value_steps: 1200,
            value_hidden: vec![48],
            ..AuxConfig::default_for(stp3())
        }
    }

    #[test]
    fn dynamics_requires_random_split() {
        let ds = generate_dataset(stp3(), 3, 0, 0, 1).unwrap();
        assert!(matches!(
            train_dynamics(&ds, stp3(), &quick_config(), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dynamics_learns_stp_transitions() {
        let ds = generate_dataset(stp3(), 0, 60, 100, 2).unwrap();
        let (model, stats) = train_dynamics(&ds, stp3(), &quick_config(), 2).unwrap();
        assert!(
            stats.holdout_exact_accuracy >= 0.65,
            "exact accuracy {}",
            stats.holdout_exact_accuracy
        );
        assert!(
            stats.holdout_noop_accuracy >= 0.9,
            "no-op accuracy {}",
            stats.holdout_noop_accuracy
        );
        // Deterministic inference.
        let t = ds.random().next().unwrap();
        let (a, ra) = model.predict_next(&t.states[0], t.actions[0]);
        let (b, rb) = model.predict_next(&t.states[0], t.actions[0]);
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn invalid_decode_repairs_to_identity() {
        let model = {
            let mut m = DynamicsModel::new(stp3(), &[16], 3);
            // Zero all parameters: argmax decodes every cell to category 0,
            // which is not a permutation.
            for layer in &mut m.net.layers {
                layer.weights.iter_mut().for_each(|w| *w = 0.0);
                layer.bias.iter_mut().for_each(|b| *b = 0.0);
            }
            m
        };
        let s = crate::envs::sample_instance(stp3(), 5).unwrap();
        let (next, repaired) = model.predict_next(&s, Action::Up);
        assert!(repaired);
        assert_eq!(next, s);
    }

    #[test]
    fn value_is_clamped_nonnegative() {
        let mut v = ValueHeuristic::new(stp3(), &[8], 4);
        v.net.layers.last_mut().unwrap().bias[0] = -100.0;
        let s = crate::envs::sample_instance(stp3(), 6).unwrap();
        assert_eq!(v.value(&s), 0.0);
    }

    #[test]
    fn value_correlates_with_remaining_steps() {
        let ds = generate_dataset(stp3(), 40, 0, 0, 7).unwrap();
        let (value, stats) = train_value(&ds, stp3(), &quick_config(), 7).unwrap();
        assert!(stats.holdout_mae < 6.0, "mae {}", stats.holdout_mae);
        // Rank correlation on a fresh trajectory.
        let fresh = generate_dataset(stp3(), 1, 0, 0, 999).unwrap();
        let t = fresh.expert().next().unwrap();
        let preds: Vec<f64> = t.states.iter().map(|s| value.value(s)).collect();
        let targets: Vec<f64> = (0..=t.len()).map(|i| (t.len() - i) as f64).collect();
        let rho = spearman(&preds, &targets);
        assert!(rho > 0.5, "spearman {rho}");
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        fn ranks(v: &[f64]) -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
            let mut r = vec![0.0; v.len()];
            for (rank, &i) in idx.iter().enumerate() {
                r[i] = rank as f64;
            }
            r
        }
        let ra = ranks(a);
        let rb = ranks(b);
        let n = ra.len() as f64;
        let ma = ra.iter().sum::<f64>() / n;
        let mb = rb.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in ra.iter().zip(&rb) {
            cov += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        cov / (va.sqrt() * vb.sqrt())
    }
}


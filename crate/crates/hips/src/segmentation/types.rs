use crate::diffcore::{log_softmax, Network, Tape};
use crate::envs::{EnvState, SizeConfig, ACTION_COUNT};
use crate::error::Result;

/// Segmentation policy: maps a subgoal state to logits over the offsets
/// `1..=horizon` of the next subgoal.
#[derive(Clone, Debug)]
pub struct Detector {
    pub net: Network,
    pub horizon: usize,
}

impl Detector {
    pub fn new(enc_dim: usize, hidden: &[usize], horizon: usize, seed: u64) -> Detector {
        let mut dims = vec![enc_dim];
        dims.extend_from_slice(hidden);
        dims.push(horizon);
        Detector {
            net: Network::mlp(&dims, seed),
            horizon,
        }
    }
}

/// Goal-conditioned low-level policy over the shared four-action space. The
/// input is the concatenation of the state and goal encodings.
#[derive(Clone, Debug)]
pub struct LowLevelPolicy {
    pub net: Network,
}

impl LowLevelPolicy {
    pub fn new(env_config: SizeConfig, hidden: &[usize], seed: u64) -> LowLevelPolicy {
        let enc = EnvState::encode_dim(env_config);
        let mut dims = vec![2 * enc];
        dims.extend_from_slice(hidden);
        dims.push(ACTION_COUNT);
        LowLevelPolicy {
            net: Network::mlp(&dims, seed),
        }
    }

    pub(crate) fn concat_input(state_enc: &[f64], goal_enc: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(state_enc.len() + goal_enc.len());
        input.extend_from_slice(state_enc);
        input.extend_from_slice(goal_enc);
        input
    }

    pub fn action_log_probs_enc(&self, state_enc: &[f64], goal_enc: &[f64]) -> Vec<f64> {
        log_softmax(&self.net.infer(&Self::concat_input(state_enc, goal_enc)))
    }

    pub fn action_log_probs(&self, state: &EnvState, goal: &EnvState) -> Vec<f64> {
        self.action_log_probs_enc(&state.encode(), &goal.encode())
    }

    /// Deterministic argmax action (lowest index on ties).
    pub fn greedy_action(&self, state: &EnvState, goal: &EnvState) -> crate::envs::Action {
        let logits = self
            .net
            .infer(&Self::concat_input(&state.encode(), &goal.encode()));
        crate::envs::Action::from_index(crate::diffcore::argmax(&logits)).expect("4 actions")
    }

    pub fn forward_enc(&self, state_enc: &[f64], goal_enc: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.net.forward(&Self::concat_input(state_enc, goal_enc))
    }
}

/// State-value baseline for the detector's REINFORCE updates.
#[derive(Clone, Debug)]
pub struct ValueBaseline {
    pub net: Network,
}

impl ValueBaseline {
    pub fn new(enc_dim: usize, hidden: &[usize], seed: u64) -> ValueBaseline {
        let mut dims = vec![enc_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        ValueBaseline {
            net: Network::mlp(&dims, seed),
        }
    }

    pub fn value(&self, state: &EnvState) -> f64 {
        self.net.infer(&state.encode())[0]
    }
}

/// Strictly increasing subgoal indices into a trajectory; the last index is
/// the trajectory's final index.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Segmentation {
    pub indices: Vec<usize>,
}

impl Segmentation {
    /// Number of segments `M`.
    pub fn segments(&self) -> usize {
        self.indices.len()
    }

    /// Validate the structural invariants against a trajectory of length `t`
    /// and the horizon.
    pub fn is_valid(&self, t: usize, horizon: usize) -> bool {
        if self.indices.is_empty() || *self.indices.last().unwrap() != t {
            return false;
        }
        let mut prev = 0usize;
        for &g in &self.indices {
            if g <= prev || g - prev > horizon {
                return false;
            }
            prev = g;
        }
        true
    }

    /// Iterate `(start, end)` segment bounds.
    pub fn bounds(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(0)
            .chain(self.indices.iter().copied())
            .zip(self.indices.iter().copied())
    }
}

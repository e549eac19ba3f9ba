//! The subgoal-space abstraction the searches run over, plus its two
//! concrete implementations: the learned generative space and the
//! procedural TSP oracle space.

use crate::auxmodels::{DynamicsModel, ValueHeuristic};
use crate::envs::{tsp, Action, EnvKind, EnvState};
use crate::segmentation::LowLevelPolicy;
use crate::vqvae::{generate_subgoals, CodePrior, SubgoalVqvae};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicU64, Ordering};

/// One verified successor subgoal.
#[derive(Clone, Debug)]
pub struct Candidate<S> {
    pub state: S,
    /// Log-probability contribution to the node policy `pi(n)`.
    pub log_prob: f64,
    /// Low-level steps from the parent subgoal.
    pub distance: usize,
    /// Low-level actions realizing the segment.
    pub actions: Vec<Action>,
}

/// A space the subgoal-level searches can plan in. `expand` returns only
/// verified-reachable children; deduplication against already-expanded
/// states is the search's job.
pub trait SubgoalSpace {
    type State: Clone + Eq + std::hash::Hash + std::fmt::Debug;

    fn is_terminal(&self, state: &Self::State) -> bool;
    /// Heuristic distance-to-goal `h(n) >= 0`.
    fn heuristic(&self, state: &Self::State) -> f64;
    fn expand(&self, state: &Self::State) -> Vec<Candidate<Self::State>>;
    /// One step of a subgoal-level rollout (MCTS). `None` ends the rollout
    /// unsuccessfully.
    fn rollout_step(
        &self,
        state: &Self::State,
        rng: &mut ChaCha8Rng,
    ) -> Option<Candidate<Self::State>>;
}

/// Where successor states come from during reachability rollouts.
pub enum DynamicsSource<'a> {
    Simulator,
    Learned(&'a DynamicsModel),
}

impl DynamicsSource<'_> {
    /// Apply one action; learned-dynamics repairs are counted.
    pub fn step(&self, state: &EnvState, action: Action, repairs: &AtomicU64) -> EnvState {
        match self {
            DynamicsSource::Simulator => state.step(action),
            DynamicsSource::Learned(model) => {
                let (next, repaired) = model.predict_next(state, action);
                if repaired {
                    repairs.fetch_add(1, Ordering::Relaxed);
                }
                next
            }
        }
    }
}

/// Heuristic source; `Zero` turns A* into uniform-cost search and PHS* into
/// LevinTS.
pub enum ValueSource<'a> {
    Learned(&'a ValueHeuristic),
    Zero,
}

impl ValueSource<'_> {
    pub fn value(&self, state: &EnvState) -> f64 {
        match self {
            ValueSource::Learned(v) => v.value(state),
            ValueSource::Zero => 0.0,
        }
    }
}

/// Greedy goal-conditioned rollout from `start` toward `goal` under the
/// selected dynamics. Succeeds iff some visited state equals `goal` exactly
/// within `max_steps`; the start state itself does not count (self-loops are
/// forbidden). Returns the step count and the action sequence.
pub fn check_reachability(
    start: &EnvState,
    goal: &EnvState,
    policy: &LowLevelPolicy,
    dynamics: &DynamicsSource<'_>,
    max_steps: usize,
    repairs: &AtomicU64,
) -> Option<(usize, Vec<Action>)> {
    if start == goal {
        return None;
    }
    let goal_enc = goal.encode();
    let mut state = start.clone();
    let mut actions = Vec::new();
    for step in 1..=max_steps {
        let log_probs = policy.action_log_probs_enc(&state.encode(), &goal_enc);
        let action = Action::from_index(crate::diffcore::argmax(&log_probs)).expect("4 actions");
        let next = dynamics.step(&state, action, repairs);
        actions.push(action);
        if next == *goal {
            return Some((step, actions));
        }
        if next == state {
            // Greedy policy is deterministic: a fixed point never escapes.
            return None;
        }
        state = next;
    }
    None
}

/// Learned subgoal space: candidates from the generative model, reachability
/// from the low-level policy under the chosen dynamics, heuristic from the
/// value source.
pub struct HipsSpace<'a> {
    pub vqvae: &'a SubgoalVqvae,
    pub prior: &'a CodePrior,
    pub policy: &'a LowLevelPolicy,
    pub dynamics: DynamicsSource<'a>,
    pub value: ValueSource<'a>,
    pub max_reach_steps: usize,
    /// Renormalize prior mass over the reachable surviving children
    /// (otherwise raw prior log-probabilities are used).
    pub renormalize_after_filter: bool,
    /// Learned-dynamics decode repairs observed during this search.
    pub repairs: AtomicU64,
    /// Structurally invalid decodes dropped by the generator.
    pub invalid_decodes: AtomicU64,
}

impl<'a> HipsSpace<'a> {
    pub fn new(
        vqvae: &'a SubgoalVqvae,
        prior: &'a CodePrior,
        policy: &'a LowLevelPolicy,
        dynamics: DynamicsSource<'a>,
        value: ValueSource<'a>,
        max_reach_steps: usize,
        renormalize_after_filter: bool,
    ) -> HipsSpace<'a> {
        HipsSpace {
            vqvae,
            prior,
            policy,
            dynamics,
            value,
            max_reach_steps,
            renormalize_after_filter,
            repairs: AtomicU64::new(0),
            invalid_decodes: AtomicU64::new(0),
        }
    }
}

impl SubgoalSpace for HipsSpace<'_> {
    type State = EnvState;

    fn is_terminal(&self, state: &EnvState) -> bool {
        state.is_terminal()
    }

    fn heuristic(&self, state: &EnvState) -> f64 {
        self.value.value(state)
    }

    fn expand(&self, state: &EnvState) -> Vec<Candidate<EnvState>> {
        let (generated, invalid) = generate_subgoals(self.vqvae, self.prior, state);
        self.invalid_decodes.fetch_add(invalid as u64, Ordering::Relaxed);
        let mut children = Vec::new();
        for cand in generated {
            if cand.state == *state {
                continue;
            }
            if let Some((distance, actions)) = check_reachability(
                state,
                &cand.state,
                self.policy,
                &self.dynamics,
                self.max_reach_steps,
                &self.repairs,
            ) {
                // Raw prior mass; renormalized below over the survivors
                // when the flag is set.
                children.push(Candidate {
                    state: cand.state,
                    log_prob: cand.raw_log_prob,
                    distance,
                    actions,
                });
            }
        }
        if self.renormalize_after_filter && !children.is_empty() {
            let lse = crate::diffcore::logsumexp(
                &children.iter().map(|c| c.log_prob).collect::<Vec<_>>(),
            );
            if lse.is_finite() {
                for c in &mut children {
                    c.log_prob -= lse;
                }
            }
        }
        children
    }

    /// Sample one code from the full prior, decode, and verify. Unreachable
    /// or invalid samples end the rollout (the prior was not renormalized
    /// over feasible children here, matching how rollouts spend budget on
    /// infeasible codes).
    fn rollout_step(&self, state: &EnvState, rng: &mut ChaCha8Rng) -> Option<Candidate<EnvState>> {
        let log_probs = self.prior.log_probs(&state.encode());
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut code = log_probs.len() - 1;
        for (k, lp) in log_probs.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                code = k;
                break;
            }
        }
        let logits = self
            .vqvae
            .decode_logits(&self.vqvae.codebook.codes[code], &state.encode());
        let cells = crate::diffcore::per_cell_argmax(
            &logits,
            EnvState::cell_categories(self.vqvae.env_config),
        );
        let decoded = match EnvState::from_cell_codes(self.vqvae.env_config, &cells) {
            Ok(s) => s,
            Err(_) => {
                self.invalid_decodes.fetch_add(1, Ordering::Relaxed);
                return None;
            }
        };
        if decoded == *state {
            return None;
        }
        let (distance, actions) = check_reachability(
            state,
            &decoded,
            self.policy,
            &self.dynamics,
            self.max_reach_steps,
            &self.repairs,
        )?;
        Some(Candidate {
            state: decoded,
            log_prob: log_probs[code],
            distance,
            actions,
        })
    }
}

/// Procedural TSP subgoal space: one candidate per unvisited city (plus the
/// return to the start when every city is visited), with exact grid
/// distances. Candidates are produced by simulating a canonical shortest
/// path, so cities crossed in passing are marked visited and every plan
/// replays exactly in the simulator.
pub struct OracleTspSpace<'a> {
    pub value: ValueSource<'a>,
}

impl OracleTspSpace<'_> {
    fn walk(state: &EnvState, target_flat: usize) -> Candidate<EnvState> {
        let cols = state.cols();
        let to = (target_flat / cols, target_flat % cols);
        let actions = crate::envs::shortest_grid_path(state.agent(), to);
        let mut cur = state.clone();
        for &a in &actions {
            cur = cur.step(a);
        }
        debug_assert_eq!(cur.agent(), to);
        Candidate {
            state: cur,
            log_prob: 0.0, // filled by the caller
            distance: actions.len(),
            actions,
        }
    }

    fn candidates(&self, state: &EnvState) -> Vec<Candidate<EnvState>> {
        debug_assert_eq!(state.kind(), EnvKind::Tsp);
        if state.is_terminal() {
            return Vec::new();
        }
        let unvisited = tsp::unvisited_cities(state);
        let mut out: Vec<Candidate<EnvState>> = if unvisited.is_empty() {
            vec![Self::walk(state, tsp::start_cell(state))]
        } else {
            unvisited.iter().map(|&c| Self::walk(state, c)).collect()
        };
        let lp = -((out.len() as f64).ln());
        for c in &mut out {
            c.log_prob = lp;
        }
        out
    }
}

impl SubgoalSpace for OracleTspSpace<'_> {
    type State = EnvState;

    fn is_terminal(&self, state: &EnvState) -> bool {
        state.is_terminal()
    }

    fn heuristic(&self, state: &EnvState) -> f64 {
        self.value.value(state)
    }

    fn expand(&self, state: &EnvState) -> Vec<Candidate<EnvState>> {
        self.candidates(state)
    }

    fn rollout_step(&self, state: &EnvState, rng: &mut ChaCha8Rng) -> Option<Candidate<EnvState>> {
        let mut options = self.candidates(state);
        if options.is_empty() {
            return None;
        }
        let pick = rng.random_range(0..options.len());
        Some(options.swap_remove(pick))
    }
}

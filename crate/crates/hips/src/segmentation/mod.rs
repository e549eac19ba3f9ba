//! Joint training of the subgoal detector and the goal-conditioned low-level
//! policy on expert trajectories.
//!
//! The detector walks a trajectory subgoal to subgoal, choosing the offset of
//! the next subgoal among the following `H` states. Each chosen segment is
//! rewarded with the policy's log-probability of the demonstrated actions
//! minus a per-segment penalty `alpha`, and the detector is trained with
//! REINFORCE against a learned value baseline while the policy is trained by
//! goal-conditioned behavioral cloning on the same segments. A dynamic
//! programming oracle computes the exact optimum of the same objective for a
//! frozen policy, and a fixed-interval segmentation provides the ablation
//! baseline.

mod pairs;
mod types;

pub use pairs::{SubgoalPair, SubgoalPairs};
pub use types::{Detector, LowLevelPolicy, Segmentation, ValueBaseline};

use crate::diffcore::{
    adam_step, log_softmax, softmax_cross_entropy, AdamState, Gradients, GRAD_CLIP_NORM,
};
use crate::envs::{derive_seed, EnvState, SizeConfig, Trajectory, TrajectoryDataset};
use crate::error::{Error, Result};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SegmentationMode {
    /// Learned detector (REINFORCE).
    Detector,
    /// Fixed-interval subgoals of length `fixed_k`.
    FixedK,
}

#[derive(Clone, Debug)]
pub struct SegmentationConfig {
    pub mode: SegmentationMode,
    /// Per-segment penalty in the reward.
    pub alpha: f64,
    /// Subgoal horizon: maximum offset the detector may choose.
    pub horizon: usize,
    /// Segment length for the fixed-interval ablation.
    pub fixed_k: usize,
    /// Total trajectory episodes for the joint training loop.
    pub episodes: usize,
    pub discount: f64,
    /// Whether within-episode returns are discounted.
    pub discounted_returns: bool,
    /// Per-step floor on action log-probabilities, preventing -inf returns.
    pub log_prob_floor: f64,
    pub detector_lr: f64,
    pub baseline_lr: f64,
    pub policy_lr: f64,
    pub policy_hidden: Vec<usize>,
    pub detector_hidden: Vec<usize>,
    pub baseline_hidden: Vec<usize>,
}

impl SegmentationConfig {
    /// Defaults: alpha 0.1 (TSP 0.05), horizon 10 (TSP 50), fixed k 5
    /// (TSP 4), REINFORCE discount 0.99, learning rate 1e-3 for the policy,
    /// detector, and baseline.
    pub fn default_for(config: SizeConfig) -> SegmentationConfig {
        let tsp = matches!(config, SizeConfig::Tsp { .. });
        SegmentationConfig {
            mode: SegmentationMode::Detector,
            alpha: if tsp { 0.05 } else { 0.1 },
            horizon: if tsp { 50 } else { 10 },
            fixed_k: if tsp { 4 } else { 5 },
            episodes: 6000,
            discount: 0.99,
            discounted_returns: true,
            log_prob_floor: -20.0,
            detector_lr: 1e-3,
            baseline_lr: 1e-3,
            policy_lr: 1e-3,
            policy_hidden: vec![128, 128],
            detector_hidden: vec![128, 128],
            baseline_hidden: vec![64, 64],
        }
    }
}

/// Log-probability of the demonstrated actions over `[start, end)` of one
/// trajectory, conditioned on `states[end]` as the goal. No flooring.
pub fn segment_log_prob(
    policy: &LowLevelPolicy,
    trajectory: &Trajectory,
    start: usize,
    end: usize,
) -> f64 {
    assert!(start < end && end <= trajectory.len());
    let goal_enc = trajectory.states[end].encode();
    let mut total = 0.0;
    for i in start..end {
        let log_probs = policy.action_log_probs_enc(&trajectory.states[i].encode(), &goal_enc);
        total += log_probs[trajectory.actions[i].index()];
    }
    total
}

/// One-step detector reward for segment reward `r_k`: `r_k - alpha`.
pub fn step_reward(r_k: f64, alpha: f64) -> f64 {
    debug_assert!(alpha >= 0.0);
    r_k - alpha
}

/// Segment scorer abstraction so the REINFORCE loop and the DP oracle can
/// run against either a real policy or a frozen table of segment scores.
pub trait SegmentScorer {
    /// Trajectory length `T` this scorer is bound to.
    fn len(&self) -> usize;
    /// Score of the segment `[start, end)` with goal at `end`.
    fn segment_log_prob(&self, start: usize, end: usize) -> f64;
    /// How many steps in the segment hit the log-probability floor.
    fn floored_steps(&self, _start: usize, _end: usize) -> usize {
        0
    }
}

/// Policy-backed scorer over one trajectory with per-step flooring. All
/// per-step log-probabilities are precomputed, so repeated segment queries
/// (as in the DP oracle) are prefix-sum lookups.
pub struct PolicySegmentScorer {
    t: usize,
    horizon: usize,
    /// prefix[g] = (log-prob prefix sums, floored-step prefix counts) for
    /// goal g, covering only the horizon window before g.
    prefix: Vec<Option<(Vec<f64>, Vec<u32>)>>,
}

impl PolicySegmentScorer {
    pub fn new(
        policy: &LowLevelPolicy,
        trajectory: &Trajectory,
        horizon: usize,
        floor: f64,
    ) -> PolicySegmentScorer {
        let t = trajectory.len();
        let encodings: Vec<Vec<f64>> = trajectory.states.iter().map(|s| s.encode()).collect();
        let mut prefix = vec![None; t + 1];
        for goal in 1..=t {
            let lo = goal.saturating_sub(horizon);
            let mut acc = vec![0.0; goal + 1];
            let mut floored = vec![0u32; goal + 1];
            for i in lo..goal {
                let raw = policy.action_log_probs_enc(&encodings[i], &encodings[goal])
                    [trajectory.actions[i].index()];
                acc[i + 1] = acc[i] + raw.max(floor);
                floored[i + 1] = floored[i] + u32::from(raw < floor);
            }
            prefix[goal] = Some((acc, floored));
        }
        PolicySegmentScorer {
            t,
            horizon,
            prefix,
        }
    }
}

impl SegmentScorer for PolicySegmentScorer {
    fn len(&self) -> usize {
        self.t
    }

    fn segment_log_prob(&self, start: usize, end: usize) -> f64 {
        assert!(start < end && end <= self.t && end - start <= self.horizon);
        let (acc, _) = self.prefix[end].as_ref().expect("goal within range");
        acc[end] - acc[start]
    }

    fn floored_steps(&self, start: usize, end: usize) -> usize {
        let (_, floored) = self.prefix[end].as_ref().expect("goal within range");
        (floored[end] - floored[start]) as usize
    }
}

/// Walk the trajectory with the detector, sampling (training) or taking the
/// argmax (extraction). Offsets past the trajectory end are masked out.
pub fn segment_trajectory(
    detector: &Detector,
    trajectory: &Trajectory,
    greedy: bool,
    rng: &mut ChaCha8Rng,
) -> Segmentation {
    let t = trajectory.len();
    let mut indices = Vec::new();
    let mut i = 0;
    while i < t {
        let allowed = detector.horizon.min(t - i);
        let logits = detector.net.infer(&trajectory.states[i].encode());
        let log_probs = log_softmax(&logits[..allowed]);
        let offset = if greedy {
            crate::diffcore::argmax(&log_probs) + 1
        } else {
            sample_index(&log_probs, rng) + 1
        };
        i += offset;
        indices.push(i);
    }
    Segmentation { indices }
}

fn sample_index(log_probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let weights: Vec<f64> = log_probs.iter().map(|&lp| lp.exp().max(1e-300)).collect();
    let dist = WeightedIndex::new(&weights).expect("valid weights");
    dist.sample(rng)
}

/// Everything one REINFORCE episode produces. Gradients are returned rather
/// than applied so the caller controls clipping and optimizer state.
pub struct ReinforceOutcome {
    pub detector_grads: Gradients,
    pub baseline_grads: Gradients,
    /// Undiscounted episode return, `sum_k (r_k - alpha)`.
    pub episode_return: f64,
    pub segmentation: Segmentation,
    /// Steps whose log-probability hit the configured floor.
    pub floored_steps: usize,
}

/// Sample a segmentation with the detector, score it with the (frozen within
/// this episode) scorer, and compute REINFORCE gradients for the detector
/// plus squared-error gradients for the baseline.
pub fn reinforce_episode<S: SegmentScorer>(
    detector: &Detector,
    baseline: &ValueBaseline,
    scorer: &S,
    trajectory: &Trajectory,
    config: &SegmentationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ReinforceOutcome> {
    let t = trajectory.len();
    if t == 0 {
        return Err(Error::contract("cannot segment an empty trajectory"));
    }
    debug_assert_eq!(scorer.len(), t);

    struct Decision {
        position: usize,
        allowed: usize,
        chosen: usize,
        tape: crate::diffcore::Tape,
        logits: Vec<f64>,
    }

    // Walk and sample, recording tapes for the gradient pass.
    let mut decisions = Vec::new();
    let mut indices = Vec::new();
    let mut i = 0;
    while i < t {
        let allowed = config.horizon.min(t - i);
        let enc = trajectory.states[i].encode();
        let (logits, tape) = detector.net.forward(&enc)?;
        let log_probs = log_softmax(&logits[..allowed]);
        let chosen = sample_index(&log_probs, rng);
        decisions.push(Decision {
            position: i,
            allowed,
            chosen,
            tape,
            logits,
        });
        i += chosen + 1;
        indices.push(i);
    }

    // Per-segment rewards and (optionally discounted) returns.
    let mut rewards = Vec::with_capacity(decisions.len());
    let mut floored_steps = 0;
    for d in &decisions {
        let (start, end) = (d.position, d.position + d.chosen + 1);
        let r_k = scorer.segment_log_prob(start, end);
        if !r_k.is_finite() {
            return Err(Error::Numerical(
                "segment score must be finite (apply a log-prob floor)".into(),
            ));
        }
        floored_steps += scorer.floored_steps(start, end);
        rewards.push(step_reward(r_k, config.alpha));
    }
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for k in (0..rewards.len()).rev() {
        acc = rewards[k]
            + if config.discounted_returns {
                config.discount * acc
            } else {
                acc
            };
        returns[k] = acc;
    }
    let episode_return: f64 = rewards.iter().sum();

    // Baseline values at each segment's start state.
    let mut baseline_grads = Gradients::zeros_like(&baseline.net);
    let mut detector_grads = Gradients::zeros_like(&detector.net);
    let m = decisions.len() as f64;
    for (d, &g_k) in decisions.iter().zip(&returns) {
        let enc = trajectory.states[d.position].encode();
        let (value_out, value_tape) = baseline.net.forward(&enc)?;
        let b_k = value_out[0];
        let advantage = g_k - b_k;

        // Squared-error baseline update (mean over segments).
        let db = 2.0 * (b_k - g_k) / m;
        baseline_grads.add_assign(&baseline.net.backward(&value_tape, &[db])?);

        // REINFORCE: minimize -A_k * log d(o_k); masked softmax gradient.
        let log_probs = log_softmax(&d.logits[..d.allowed]);
        let mut dlogits = vec![0.0; detector.net.output_dim()];
        for (j, item) in dlogits.iter_mut().enumerate().take(d.allowed) {
            let p = log_probs[j].exp();
            let indicator = if j == d.chosen { 1.0 } else { 0.0 };
            *item = advantage * (p - indicator);
        }
        detector_grads.add_assign(&detector.net.backward(&d.tape, &dlogits)?);
    }

    Ok(ReinforceOutcome {
        detector_grads,
        baseline_grads,
        episode_return,
        segmentation: Segmentation { indices },
        floored_steps,
    })
}

/// One goal-conditioned behavioral cloning step over a batch of
/// (state, action, goal) triples; returns the pre-update mean loss.
pub fn gcbc_update(
    policy: &mut LowLevelPolicy,
    batch: &[(&EnvState, crate::envs::Action, &EnvState)],
    opt: &mut AdamState,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("empty GCBC batch"));
    }
    let mut grads = Gradients::zeros_like(&policy.net);
    let mut total_loss = 0.0;
    for &(state, action, goal) in batch {
        let input = LowLevelPolicy::concat_input(&state.encode(), &goal.encode());
        let (logits, tape) = policy.net.forward(&input)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, action.index());
        total_loss += loss;
        grads.add_assign(&policy.net.backward(&tape, &dlogits)?);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    grads.clip_global_norm(GRAD_CLIP_NORM);
    adam_step(&mut policy.net, &grads, opt)?;
    Ok(total_loss / n)
}

/// Exact maximizer of `sum_k (r_k - alpha)` over all segmentations with
/// segment lengths at most `horizon`, by dynamic programming from the end of
/// the trajectory. Ties break toward fewer segments, then the earlier
/// subgoal.
pub fn optimal_segmentation_dp<S: SegmentScorer>(
    scorer: &S,
    alpha: f64,
    horizon: usize,
) -> (Segmentation, f64) {
    let t = scorer.len();
    assert!(t > 0, "empty trajectory");
    let mut best = vec![f64::NEG_INFINITY; t + 1];
    let mut segs = vec![usize::MAX; t + 1];
    let mut choice = vec![0usize; t + 1];
    best[t] = 0.0;
    segs[t] = 0;
    for i in (0..t).rev() {
        for o in 1..=horizon.min(t - i) {
            let score = scorer.segment_log_prob(i, i + o) - alpha + best[i + o];
            let m = 1 + segs[i + o];
            if score > best[i] || (score == best[i] && m < segs[i]) {
                best[i] = score;
                segs[i] = m;
                choice[i] = o;
            }
        }
    }
    let mut indices = Vec::with_capacity(segs[0]);
    let mut i = 0;
    while i < t {
        i += choice[i];
        indices.push(i);
    }
    (Segmentation { indices }, best[0])
}

/// Fixed-interval subgoals: `k, 2k, ...` with the trajectory end appended
/// (the last segment may be shorter).
pub fn fixed_k_segmentation(trajectory: &Trajectory, k: usize) -> Segmentation {
    fixed_k_for_len(trajectory.len(), k)
}

pub(crate) fn fixed_k_for_len(t: usize, k: usize) -> Segmentation {
    assert!(k >= 1);
    let mut indices: Vec<usize> = (1..=t / k).map(|j| j * k).collect();
    if indices.last().copied() != Some(t) {
        indices.push(t);
    }
    Segmentation { indices }
}

/// Greedy-mode segmentation of every expert trajectory into consecutive
/// subgoal pairs, including the leading `(s_0, s_{g_1})` pair.
pub fn extract_subgoal_pairs(
    detector: &Detector,
    dataset: &TrajectoryDataset,
    config: SizeConfig,
) -> SubgoalPairs {
    let mut rng = ChaCha8Rng::seed_from_u64(0); // greedy mode ignores the rng
    let mut pairs = Vec::new();
    for trajectory in dataset.expert() {
        if trajectory.is_empty() {
            continue;
        }
        let seg = segment_trajectory(detector, trajectory, true, &mut rng);
        push_pairs(&mut pairs, trajectory, &seg);
    }
    SubgoalPairs { config, pairs }
}

/// Fixed-interval variant used by the ablation.
pub fn extract_fixed_k_pairs(
    dataset: &TrajectoryDataset,
    k: usize,
    config: SizeConfig,
) -> SubgoalPairs {
    let mut pairs = Vec::new();
    for trajectory in dataset.expert() {
        if trajectory.is_empty() {
            continue;
        }
        let seg = fixed_k_segmentation(trajectory, k);
        push_pairs(&mut pairs, trajectory, &seg);
    }
    SubgoalPairs { config, pairs }
}

fn push_pairs(pairs: &mut Vec<SubgoalPair>, trajectory: &Trajectory, seg: &Segmentation) {
    let mut prev = 0usize;
    for &g in &seg.indices {
        pairs.push(SubgoalPair {
            from: trajectory.states[prev].clone(),
            to: trajectory.states[g].clone(),
            length: g - prev,
        });
        prev = g;
    }
}

/// Outputs of the joint training loop.
pub struct SegmentationArtifacts {
    pub policy: LowLevelPolicy,
    pub detector: Option<Detector>,
    pub baseline: Option<ValueBaseline>,
    pub stats: SegmentationStats,
}

#[derive(Clone, Debug, Default)]
pub struct SegmentationStats {
    /// Mean undiscounted return over the last 10% of episodes.
    pub final_mean_return: f64,
    pub episodes: usize,
    pub floored_steps: usize,
}

/// Joint training per the alternating schedule: each episode runs one
/// REINFORCE update of the detector/baseline on a sampled segmentation of
/// one trajectory, then one GCBC update of the policy on the same segments.
/// Trajectories are visited in seeded shuffled order, reshuffled per epoch.
pub fn train_segmentation(
    dataset: &TrajectoryDataset,
    config: &SegmentationConfig,
    env_config: SizeConfig,
    seed: u64,
) -> Result<SegmentationArtifacts> {
    let trajectories: Vec<&Trajectory> = dataset.expert().filter(|t| !t.is_empty()).collect();
    if trajectories.is_empty() {
        return Err(Error::config("no expert trajectories to segment"));
    }
    let enc_dim = EnvState::encode_dim(env_config);
    let mut policy = LowLevelPolicy::new(env_config, &config.policy_hidden, derive_seed(seed, 10, 0));
    let mut policy_opt = AdamState::for_network(&policy.net, config.policy_lr);

    let detector_mode = config.mode == SegmentationMode::Detector;
    let mut detector = detector_mode.then(|| {
        Detector::new(
            enc_dim,
            &config.detector_hidden,
            config.horizon,
            derive_seed(seed, 11, 0),
        )
    });
    let mut baseline = detector_mode.then(|| {
        ValueBaseline::new(enc_dim, &config.baseline_hidden, derive_seed(seed, 12, 0))
    });
    let mut detector_opt = detector
        .as_ref()
        .map(|d| AdamState::for_network(&d.net, config.detector_lr));
    let mut baseline_opt = baseline
        .as_ref()
        .map(|b| AdamState::for_network(&b.net, config.baseline_lr));

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 13, 0));
    let mut order: Vec<usize> = (0..trajectories.len()).collect();
    let mut cursor = order.len(); // trigger shuffle on first episode

    let tail_start = config.episodes - config.episodes / 10;
    let mut stats = SegmentationStats {
        episodes: config.episodes,
        ..Default::default()
    };
    let mut tail_sum = 0.0;
    let mut tail_count = 0usize;

    for episode in 0..config.episodes {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let trajectory = trajectories[order[cursor]];
        cursor += 1;

        let segmentation = if let (Some(det), Some(base)) = (detector.as_mut(), baseline.as_mut())
        {
            let scorer =
                PolicySegmentScorer::new(&policy, trajectory, config.horizon, config.log_prob_floor);
            let mut outcome =
                reinforce_episode(det, base, &scorer, trajectory, config, &mut rng)?;
            outcome.detector_grads.clip_global_norm(GRAD_CLIP_NORM);
            outcome.baseline_grads.clip_global_norm(GRAD_CLIP_NORM);
            adam_step(
                &mut det.net,
                &outcome.detector_grads,
                detector_opt.as_mut().expect("detector optimizer"),
            )?;
            adam_step(
                &mut base.net,
                &outcome.baseline_grads,
                baseline_opt.as_mut().expect("baseline optimizer"),
            )?;
            stats.floored_steps += outcome.floored_steps;
            if episode >= tail_start {
                tail_sum += outcome.episode_return;
                tail_count += 1;
            }
            outcome.segmentation
        } else {
            fixed_k_segmentation(trajectory, config.fixed_k)
        };

        let mut batch = Vec::new();
        let mut prev = 0usize;
        for &g in &segmentation.indices {
            for i in prev..g {
                batch.push((&trajectory.states[i], trajectory.actions[i], &trajectory.states[g]));
            }
            prev = g;
        }
        gcbc_update(&mut policy, &batch, &mut policy_opt)?;
    }
    if tail_count > 0 {
        stats.final_mean_return = tail_sum / tail_count as f64;
    }
    Ok(SegmentationArtifacts {
        policy,
        detector,
        baseline,
        stats,
    })
}

#[cfg(test)]
mod tests;

use super::*;
use crate::envs::{generate_dataset, sample_instance, Action, SizeConfig};
use std::collections::HashMap;

fn stp3() -> SizeConfig {
    SizeConfig::Stp { side: 3 }
}

/// A short STP walk with pairwise-distinct states.
fn walk_trajectory(t: usize) -> Trajectory {
    for seed in 0.. {
        let start = sample_instance(stp3(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut states = vec![start.clone()];
        let mut actions = Vec::new();
        let mut cur = start;
        while actions.len() < t {
            let a = Action::ALL[rand::Rng::random_range(&mut rng, 0..4)];
            let next = cur.step(a);
            if next == cur || next.is_terminal() || states.contains(&next) {
                continue;
            }
            states.push(next.clone());
            actions.push(a);
            cur = next;
        }
        if let Ok(tr) = Trajectory::from_initial(states[0].clone(), actions) {
            if tr.len() == t {
                return tr;
            }
        }
    }
    unreachable!()
}

/// Zero all parameters so every categorical head is exactly uniform.
fn zero_net(net: &mut crate::diffcore::Network) {
    for layer in &mut net.layers {
        layer.weights.iter_mut().for_each(|w| *w = 0.0);
        layer.bias.iter_mut().for_each(|b| *b = 0.0);
    }
}

struct TableScorer {
    t: usize,
    scores: HashMap<(usize, usize), f64>,
}

impl SegmentScorer for TableScorer {
    fn len(&self) -> usize {
        self.t
    }
    fn segment_log_prob(&self, start: usize, end: usize) -> f64 {
        *self
            .scores
            .get(&(start, end))
            .unwrap_or_else(|| panic!("missing score for ({start},{end})"))
    }
}

fn full_table(t: usize, horizon: usize, mut f: impl FnMut(usize, usize) -> f64) -> TableScorer {
    let mut scores = HashMap::new();
    for start in 0..t {
        for end in start + 1..=(start + horizon).min(t) {
            scores.insert((start, end), f(start, end));
        }
    }
    TableScorer { t, scores }
}

/// Independent oracle: enumerate all segmentations with segment lengths at
/// most `horizon`, maximizing total score with the same tie-breaking as the
/// DP (fewer segments, then lexicographically earlier indices).
fn enumerate_best(scorer: &TableScorer, alpha: f64, horizon: usize) -> (Vec<usize>, f64) {
    let t = scorer.t;
    let mut best: Option<(Vec<usize>, f64)> = None;
    // Bitmask over cut positions 1..t-1; position t is always a cut.
    for mask in 0..(1u32 << (t - 1)) {
        let mut indices = Vec::new();
        for pos in 1..t {
            if mask & (1 << (pos - 1)) != 0 {
                indices.push(pos);
            }
        }
        indices.push(t);
        let mut prev = 0;
        let mut ok = true;
        let mut score = 0.0;
        for &g in &indices {
            if g - prev > horizon {
                ok = false;
                break;
            }
            score += scorer.segment_log_prob(prev, g) - alpha;
            prev = g;
        }
        if !ok {
            continue;
        }
        let better = match &best {
            None => true,
            Some((b_idx, b_score)) => {
                score > *b_score
                    || (score == *b_score && indices.len() < b_idx.len())
                    || (score == *b_score && indices.len() == b_idx.len() && indices < *b_idx)
            }
        };
        if better {
            best = Some((indices, score));
        }
    }
    best.expect("at least one segmentation")
}

#[test]
fn uniform_policy_segment_log_prob_is_ln_quarter_per_step() {
    let traj = walk_trajectory(3);
    let mut policy = LowLevelPolicy::new(stp3(), &[16], 1);
    zero_net(&mut policy.net);
    let lp = segment_log_prob(&policy, &traj, 0, 3);
    assert!((lp - 3.0 * (0.25f64).ln()).abs() < 1e-12);
}

#[test]
fn segment_log_prob_matches_per_step_sum() {
    let traj = walk_trajectory(2);
    let policy = LowLevelPolicy::new(stp3(), &[16], 7);
    let goal = &traj.states[2];
    let manual: f64 = (0..2)
        .map(|i| policy.action_log_probs(&traj.states[i], goal)[traj.actions[i].index()])
        .sum();
    assert!((segment_log_prob(&policy, &traj, 0, 2) - manual).abs() < 1e-12);
}

#[test]
fn step_reward_is_reward_minus_alpha() {
    assert!((step_reward(-0.2, 0.1) - (-0.3)).abs() < 1e-15);
    assert_eq!(step_reward(0.0, 0.0), 0.0);
}

#[test]
fn length_one_trajectory_forces_single_offset() {
    let traj = walk_trajectory(1);
    let detector = Detector::new(81, &[8], 10, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seg = segment_trajectory(&detector, &traj, false, &mut rng);
    assert_eq!(seg.indices, vec![1]);
}

#[test]
fn degenerate_detector_takes_max_offset() {
    let traj = walk_trajectory(10);
    let mut detector = Detector::new(81, &[8], 10, 3);
    zero_net(&mut detector.net);
    detector.net.layers.last_mut().unwrap().bias[9] = 50.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seg = segment_trajectory(&detector, &traj, false, &mut rng);
    assert_eq!(seg.indices, vec![10]);
}

#[test]
fn greedy_mode_is_deterministic() {
    let traj = walk_trajectory(8);
    let detector = Detector::new(81, &[16], 10, 9);
    let mut rng_a = ChaCha8Rng::seed_from_u64(1);
    let mut rng_b = ChaCha8Rng::seed_from_u64(999);
    let a = segment_trajectory(&detector, &traj, true, &mut rng_a);
    let b = segment_trajectory(&detector, &traj, true, &mut rng_b);
    assert_eq!(a, b);
}

#[test]
fn sampled_segmentations_respect_masking() {
    for t in [1usize, 2, 3, 7, 12] {
        let traj = walk_trajectory(t);
        let detector = Detector::new(81, &[16], 5, 11);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seg = segment_trajectory(&detector, &traj, false, &mut rng);
            assert!(seg.is_valid(t, 5), "invalid segmentation {:?} for t={t}", seg.indices);
        }
    }
}

#[test]
fn detector_gradient_scales_with_advantage() {
    let traj = walk_trajectory(4);
    let detector = Detector::new(81, &[16], 10, 5);
    let mut base_zero = ValueBaseline::new(81, &[8], 5);
    zero_net(&mut base_zero.net);
    let mut base_two = base_zero.clone();
    base_two.net.layers.last_mut().unwrap().bias[0] = 2.0;
    let config = SegmentationConfig {
        episodes: 1,
        ..SegmentationConfig::default_for(stp3())
    };
    let scorer = full_table(4, 10, |s, e| -0.1 * (e - s) as f64);
    // Scan for a seed whose sampled episode is a single segment.
    let seed = (0..200)
        .find(|&seed| {
            let out = reinforce_episode(
                &detector,
                &base_zero,
                &scorer,
                &traj,
                &config,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap();
            out.segmentation.segments() == 1
        })
        .expect("some seed samples a single segment");
    let out_a =
        reinforce_episode(&detector, &base_zero, &scorer, &traj, &config, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
    let out_b =
        reinforce_episode(&detector, &base_two, &scorer, &traj, &config, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
    assert_eq!(out_a.segmentation, out_b.segmentation);
    assert_eq!(out_a.segmentation.segments(), 1, "expected a single segment");
    let g = out_a.episode_return; // single segment: G = R_1
    let ratio = (g - 0.0) / (g - 2.0);
    for (wa, wb) in out_a.detector_grads.weights[0]
        .iter()
        .zip(&out_b.detector_grads.weights[0])
    {
        if wb.abs() > 1e-12 {
            assert!((wa / wb - ratio).abs() < 1e-9, "{wa} vs {wb}, ratio {ratio}");
        }
    }
}

#[test]
fn perfect_policy_zero_alpha_has_zero_gradient_at_converged_baseline() {
    let traj = walk_trajectory(5);
    let detector = Detector::new(81, &[16], 10, 6);
    let mut baseline = ValueBaseline::new(81, &[8], 6);
    zero_net(&mut baseline.net); // outputs exactly the perfect return, 0
    let mut config = SegmentationConfig::default_for(stp3());
    config.alpha = 0.0;
    let scorer = full_table(5, 10, |_, _| 0.0);
    let out = reinforce_episode(
        &detector,
        &baseline,
        &scorer,
        &traj,
        &config,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(out.episode_return, 0.0);
    assert!(out.detector_grads.global_norm() < 1e-12);
}

#[test]
fn episode_return_is_sum_of_rewards_minus_alpha_per_segment() {
    let traj = walk_trajectory(6);
    let detector = Detector::new(81, &[16], 3, 2);
    let baseline = ValueBaseline::new(81, &[8], 2);
    let config = SegmentationConfig {
        alpha: 0.25,
        horizon: 3,
        ..SegmentationConfig::default_for(stp3())
    };
    let scorer = full_table(6, 3, |s, e| -0.3 * (e - s) as f64);
    let out = reinforce_episode(
        &detector,
        &baseline,
        &scorer,
        &traj,
        &config,
        &mut ChaCha8Rng::seed_from_u64(4),
    )
    .unwrap();
    let m = out.segmentation.segments() as f64;
    let sum_r: f64 = out
        .segmentation
        .bounds()
        .map(|(s, e)| scorer.segment_log_prob(s, e))
        .sum();
    assert!((out.episode_return - (sum_r - 0.25 * m)).abs() < 1e-12);
}

#[test]
fn gcbc_uniform_policy_loss_is_ln_four() {
    let traj = walk_trajectory(4);
    let mut policy = LowLevelPolicy::new(stp3(), &[16], 8);
    zero_net(&mut policy.net);
    let goal = &traj.states[4];
    let batch: Vec<_> = (0..4).map(|i| (&traj.states[i], traj.actions[i], goal)).collect();
    let mut opt = AdamState::for_network(&policy.net, 1e-3);
    let loss = gcbc_update(&mut policy, &batch, &mut opt).unwrap();
    assert!((loss - 4.0f64.ln()).abs() < 1e-12);
}

#[test]
fn gcbc_loss_decreases_on_fixed_batch() {
    let ds = generate_dataset(stp3(), 5, 0, 0, 21).unwrap();
    let mut triples = Vec::new();
    'outer: for t in ds.expert() {
        let goal = t.states.last().unwrap();
        for i in 0..t.len() {
            triples.push((&t.states[i], t.actions[i], goal));
            if triples.len() == 50 {
                break 'outer;
            }
        }
    }
    assert_eq!(triples.len(), 50);
    let mut policy = LowLevelPolicy::new(stp3(), &[32], 9);
    let mut opt = AdamState::for_network(&policy.net, 1e-3);
    let mut losses = Vec::new();
    for _ in 0..100 {
        losses.push(gcbc_update(&mut policy, &triples, &mut opt).unwrap());
    }
    assert!(losses[99] < losses[0]);
    let increases = losses.windows(2).filter(|w| w[1] > w[0] + 1e-9).count();
    assert!(increases < 10, "loss increased {increases} times");
}

#[test]
fn dp_matches_exhaustive_enumeration_on_hand_set_scores() {
    // T=3, H=3: four segmentations of {1,2,3}.
    let scorer = full_table(3, 3, |s, e| match (s, e) {
        (0, 1) => -1.0,
        (0, 2) => -0.5,
        (0, 3) => -4.0,
        (1, 2) => -0.2,
        (1, 3) => -0.1,
        (2, 3) => -0.3,
        _ => unreachable!(),
    });
    let alpha = 0.1;
    let (seg, score) = optimal_segmentation_dp(&scorer, alpha, 3);
    let (best_idx, best_score) = enumerate_best(&scorer, alpha, 3);
    assert_eq!(seg.indices, best_idx);
    assert!((score - best_score).abs() < 1e-12);
    // [2] + [2,3]: -0.5 - 0.3 - 2*alpha = -1.0 beats [3]: -4.1 and others.
    assert_eq!(seg.indices, vec![2, 3]);
}

#[test]
fn dp_matches_exhaustive_enumeration_on_random_tables() {
    use rand::Rng;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let t = rng.random_range(4..=10);
        let horizon = rng.random_range(2..=4);
        let alpha = rng.random_range(0.0..0.5);
        let scorer = full_table(t, horizon, |_, _| rng.random_range(-3.0..0.0));
        let (seg, score) = optimal_segmentation_dp(&scorer, alpha, horizon);
        let (best_idx, best_score) = enumerate_best(&scorer, alpha, horizon);
        assert_eq!(seg.indices, best_idx, "case {case}");
        assert!((score - best_score).abs() < 1e-9, "case {case}");
    }
}

#[test]
fn dp_tie_breaks_toward_fewest_segments_then_earliest() {
    // All-zero scores, zero alpha: everything ties at 0.
    let scorer = full_table(15, 10, |_, _| 0.0);
    let (seg, score) = optimal_segmentation_dp(&scorer, 0.0, 10);
    assert_eq!(score, 0.0);
    assert_eq!(seg.indices, vec![5, 15]);
    // Single window: one segment.
    let scorer = full_table(10, 10, |_, _| 0.0);
    let (seg, _) = optimal_segmentation_dp(&scorer, 0.0, 10);
    assert_eq!(seg.indices, vec![10]);
}

#[test]
fn huge_alpha_forces_minimum_segment_count() {
    let scorer = full_table(12, 5, |_, _| -1.0);
    let (seg, _) = optimal_segmentation_dp(&scorer, 1e6, 5);
    assert_eq!(seg.segments(), 12usize.div_ceil(5));
}

#[test]
fn fixed_k_examples() {
    assert_eq!(fixed_k_for_len(10, 5).indices, vec![5, 10]);
    assert_eq!(fixed_k_for_len(7, 5).indices, vec![5, 7]);
    assert_eq!(fixed_k_for_len(3, 5).indices, vec![3]);
}

#[test]
fn extracted_pairs_chain_through_subgoals() {
    let ds = generate_dataset(stp3(), 4, 0, 0, 33).unwrap();
    let pairs = extract_fixed_k_pairs(&ds, 5, stp3());
    let mut offset = 0;
    for t in ds.expert() {
        let seg = fixed_k_segmentation(t, 5);
        let these = &pairs.pairs[offset..offset + seg.segments()];
        assert_eq!(these[0].from, t.states[0]);
        for w in these.windows(2) {
            assert_eq!(w[0].to, w[1].from);
        }
        assert_eq!(these.last().unwrap().to, *t.states.last().unwrap());
        for p in these {
            assert!(p.length >= 1 && p.length <= 5);
        }
        offset += seg.segments();
    }
    assert_eq!(offset, pairs.pairs.len());
}

#[test]
fn pairs_roundtrip_through_file() {
    let ds = generate_dataset(stp3(), 3, 0, 0, 17).unwrap();
    let pairs = extract_fixed_k_pairs(&ds, 4, stp3());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    pairs.save(&path).unwrap();
    let loaded = SubgoalPairs::load(&path).unwrap();
    assert_eq!(pairs, loaded);
}

/// REINFORCE with a frozen tabular scorer converges near the DP optimum on a
/// short synthetic trajectory.
#[test]
fn reinforce_approaches_dp_optimum_on_frozen_scores() {
    let traj = walk_trajectory(6);
    let horizon = 3;
    let alpha = 0.1;
    // Hand-shaped scores rewarding the segmentation [2, 5, 6].
    let scorer = full_table(6, horizon, |s, e| match (s, e) {
        (0, 2) => -0.1,
        (2, 5) => -0.2,
        (5, 6) => -0.1,
        _ => -1.5 * (e - s) as f64,
    });
    let (opt_seg, opt_return) = optimal_segmentation_dp(&scorer, alpha, horizon);
    assert_eq!(opt_seg.indices, vec![2, 5, 6]);

    let mut config = SegmentationConfig::default_for(stp3());
    config.alpha = alpha;
    config.horizon = horizon;
    config.detector_hidden = vec![32];
    config.baseline_hidden = vec![16];
    let mut detector = Detector::new(81, &config.detector_hidden, horizon, 14);
    let mut baseline = ValueBaseline::new(81, &config.baseline_hidden, 15);
    let mut det_opt = AdamState::for_network(&detector.net, config.detector_lr);
    let mut base_opt = AdamState::for_network(&baseline.net, config.baseline_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut tail = Vec::new();
    for episode in 0..5000 {
        let mut out =
            reinforce_episode(&detector, &baseline, &scorer, &traj, &config, &mut rng).unwrap();
        out.detector_grads.clip_global_norm(GRAD_CLIP_NORM);
        out.baseline_grads.clip_global_norm(GRAD_CLIP_NORM);
        adam_step(&mut detector.net, &out.detector_grads, &mut det_opt).unwrap();
        adam_step(&mut baseline.net, &out.baseline_grads, &mut base_opt).unwrap();
        if episode >= 4750 {
            tail.push(out.episode_return);
        }
    }
    let mean_tail: f64 = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(
        (opt_return - mean_tail).abs() < 0.05,
        "tail mean {mean_tail} vs optimum {opt_return}"
    );
    // Greedy extraction recovers the optimal segmentation.
    let greedy = segment_trajectory(&detector, &traj, true, &mut rng);
    assert_eq!(greedy.indices, opt_seg.indices);
}

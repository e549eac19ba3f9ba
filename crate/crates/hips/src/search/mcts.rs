//! Monte Carlo tree search over subgoals with UCT selection.
//!
//! Expansion generates all reachable children of a leaf at once (one node
//! expansion against the budget, the same unit the best-first searches
//! count). Rollouts sample codes from the prior until a terminal state or
//! the depth cap, and score `1 / (1 + total low-level steps)` for terminal
//! rollouts and zero otherwise. The final plan descends most-visited
//! children restricted to subtrees that contain a terminal tree node.

use super::space::SubgoalSpace;
use super::Plan;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// UCT score: `mean + c * sqrt(ln(parent_visits) / child_visits)`.
/// Unvisited children are infinitely attractive.
pub fn uct_score(mean_value: f64, parent_visits: u64, child_visits: u64, c: f64) -> f64 {
    if child_visits == 0 {
        return f64::INFINITY;
    }
    mean_value + c * ((parent_visits as f64).ln() / child_visits as f64).sqrt()
}

struct MctsNode<S> {
    state: S,
    parent: Option<usize>,
    children: Option<Vec<usize>>,
    visits: u64,
    value_sum: f64,
    cum_dist: usize,
    actions: Vec<crate::envs::Action>,
    terminal: bool,
    /// No children and not terminal: nothing below this node.
    dead: bool,
    /// Some descendant (or this node) is a terminal tree node.
    solved_below: bool,
}

pub fn mcts_search<Sp: SubgoalSpace>(
    space: &Sp,
    root: Sp::State,
    exploration_c: f64,
    budget: usize,
    rollout_depth_cap: usize,
    seed: u64,
) -> (Option<Plan<Sp::State>>, usize) {
    assert!(budget >= 1);
    if space.is_terminal(&root) {
        return (
            Some(Plan {
                subgoals: Vec::new(),
                actions: Vec::new(),
                expansions: 0,
                total_steps: 0,
            }),
            0,
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arena: Vec<MctsNode<Sp::State>> = vec![MctsNode {
        state: root,
        parent: None,
        children: None,
        visits: 0,
        value_sum: 0.0,
        cum_dist: 0,
        actions: Vec::new(),
        terminal: false,
        dead: false,
        solved_below: false,
    }];
    let mut expansions = 0usize;
    // Selection/backup iterations that do not expand are bounded too, so the
    // loop terminates once the tree is saturated.
    let max_iterations = budget.saturating_mul(16).max(1024);
    let mut iterations = 0usize;

    while expansions < budget && iterations < max_iterations {
        iterations += 1;
        // Selection.
        let mut idx = 0usize;
        loop {
            if arena[idx].terminal || arena[idx].dead {
                break;
            }
            match &arena[idx].children {
                None => break,
                Some(children) if children.is_empty() => break,
                Some(children) => {
                    let parent_visits = arena[idx].visits.max(1);
                    let mut best = children[0];
                    let mut best_score = f64::NEG_INFINITY;
                    for &ch in children {
                        let node = &arena[ch];
                        let mean = if node.visits > 0 {
                            node.value_sum / node.visits as f64
                        } else {
                            0.0
                        };
                        let score = uct_score(mean, parent_visits, node.visits, exploration_c);
                        if score > best_score {
                            best_score = score;
                            best = ch;
                        }
                    }
                    idx = best;
                }
            }
        }

        let reward;
        if arena[idx].terminal {
            reward = 1.0 / (1.0 + arena[idx].cum_dist as f64);
        } else if arena[idx].dead {
            reward = 0.0;
        } else {
            // Expansion.
            let candidates = space.expand(&arena[idx].state);
            expansions += 1;
            let mut child_ids = Vec::with_capacity(candidates.len());
            for cand in candidates {
                if cand.state == arena[idx].state {
                    continue;
                }
                let terminal = space.is_terminal(&cand.state);
                let child = MctsNode {
                    state: cand.state,
                    parent: Some(idx),
                    children: None,
                    visits: 0,
                    value_sum: 0.0,
                    cum_dist: arena[idx].cum_dist + cand.distance,
                    actions: cand.actions,
                    terminal,
                    dead: false,
                    solved_below: terminal,
                };
                let id = arena.len();
                arena.push(child);
                child_ids.push(id);
                if terminal {
                    let mut up = Some(idx);
                    while let Some(u) = up {
                        arena[u].solved_below = true;
                        up = arena[u].parent;
                    }
                }
            }
            if child_ids.is_empty() {
                arena[idx].dead = true;
                arena[idx].children = Some(Vec::new());
                reward = 0.0;
            } else {
                let pick = child_ids[rng.random_range(0..child_ids.len())];
                arena[idx].children = Some(child_ids);
                reward = if arena[pick].terminal {
                    1.0 / (1.0 + arena[pick].cum_dist as f64)
                } else {
                    rollout(space, &arena[pick], rollout_depth_cap, &mut rng)
                };
                idx = pick; // back up through the simulated child
            }
        }

        // Backup of mean values.
        let mut up = Some(idx);
        while let Some(u) = up {
            arena[u].visits += 1;
            arena[u].value_sum += reward;
            up = arena[u].parent;
        }
    }

    // Plan extraction: repeatedly descend the most-visited child among
    // subtrees that contain a terminal node.
    if !arena[0].solved_below {
        return (None, expansions);
    }
    let mut idx = 0usize;
    while !arena[idx].terminal {
        let Some(children) = &arena[idx].children else {
            return (None, expansions);
        };
        let mut best: Option<usize> = None;
        for &ch in children {
            if !arena[ch].solved_below {
                continue;
            }
            if best.is_none_or(|b| arena[ch].visits > arena[b].visits) {
                best = Some(ch);
            }
        }
        match best {
            Some(b) => idx = b,
            None => return (None, expansions),
        }
    }
    let mut subgoals = Vec::new();
    let mut actions_rev: Vec<Vec<crate::envs::Action>> = Vec::new();
    let total_steps = arena[idx].cum_dist;
    let mut cur = idx;
    while let Some(parent) = arena[cur].parent {
        subgoals.push(arena[cur].state.clone());
        actions_rev.push(arena[cur].actions.clone());
        cur = parent;
    }
    subgoals.reverse();
    actions_rev.reverse();
    let actions = actions_rev.concat();
    (
        Some(Plan {
            subgoals,
            actions,
            expansions,
            total_steps,
        }),
        expansions,
    )
}

fn rollout<Sp: SubgoalSpace>(
    space: &Sp,
    start: &MctsNode<Sp::State>,
    depth_cap: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut state = start.state.clone();
    let mut steps = start.cum_dist;
    for _ in 0..depth_cap {
        if space.is_terminal(&state) {
            return 1.0 / (1.0 + steps as f64);
        }
        let Some(next) = space.rollout_step(&state, rng) else {
            return 0.0;
        };
        steps += next.distance;
        state = next.state;
    }
    if space.is_terminal(&state) {
        return 1.0 / (1.0 + steps as f64);
    }
    0.0
}

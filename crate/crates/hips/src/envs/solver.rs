//! Exact reference solvers used for expert data generation and as test
//! oracles: breadth-first search for Sokoban, IDA* for the sliding tile
//! puzzle, and a Held-Karp tour-length oracle for TSP.

use super::{tsp, Action, EnvKind, EnvState, Extras};
use std::collections::{HashMap, VecDeque};

pub fn manhattan(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// Canonical shortest grid path: vertical moves first, then horizontal.
pub fn shortest_grid_path(from: (usize, usize), to: (usize, usize)) -> Vec<Action> {
    let mut out = Vec::with_capacity(manhattan(from, to));
    let (mut r, mut c) = from;
    while r != to.0 {
        if r < to.0 {
            out.push(Action::Down);
            r += 1;
        } else {
            out.push(Action::Up);
            r -= 1;
        }
    }
    while c != to.1 {
        if c < to.1 {
            out.push(Action::Right);
            c += 1;
        } else {
            out.push(Action::Left);
            c -= 1;
        }
    }
    out
}

fn sokoban_key(state: &EnvState) -> u64 {
    let Extras::Sokoban { boxes } = &state.extras else {
        unreachable!()
    };
    let mut key = state.agent_flat() as u64;
    for &b in boxes {
        key = (key << 7) | b as u64;
    }
    key
}

/// Breadth-first search over agent moves. Returns a move-optimal solution or
/// `None` once `max_nodes` states have been expanded (the caller resamples).
pub fn solve_sokoban(start: &EnvState, max_nodes: usize) -> Option<Vec<Action>> {
    debug_assert_eq!(start.kind(), EnvKind::Sokoban);
    if start.is_terminal() {
        return Some(Vec::new());
    }
    let mut parents: HashMap<u64, (u64, Action)> = HashMap::new();
    let mut queue: VecDeque<EnvState> = VecDeque::new();
    let start_key = sokoban_key(start);
    parents.insert(start_key, (start_key, Action::Up));
    queue.push_back(start.clone());
    let mut expanded = 0usize;
    while let Some(state) = queue.pop_front() {
        expanded += 1;
        if expanded > max_nodes {
            return None;
        }
        let key = sokoban_key(&state);
        for action in Action::ALL {
            let next = state.step(action);
            let next_key = sokoban_key(&next);
            if next_key == key || parents.contains_key(&next_key) {
                continue;
            }
            parents.insert(next_key, (key, action));
            if next.is_terminal() {
                let mut actions = vec![action];
                let mut cur = key;
                while cur != start_key {
                    let (prev, a) = parents[&cur];
                    actions.push(a);
                    cur = prev;
                }
                actions.reverse();
                return Some(actions);
            }
            queue.push_back(next);
        }
    }
    None
}

fn stp_heuristic(state: &EnvState) -> usize {
    let cols = state.cols();
    let mut h = 0;
    for (i, &v) in state.grid.iter().enumerate() {
        if v == 0 {
            continue;
        }
        let goal = state.config.cells() - 1 - v as usize;
        h += manhattan((i / cols, i % cols), (goal / cols, goal % cols));
    }
    h
}

/// IDA* with the Manhattan-distance heuristic.
pub fn solve_stp(start: &EnvState, max_nodes: usize) -> Option<Vec<Action>> {
    debug_assert_eq!(start.kind(), EnvKind::Stp);
    if start.is_terminal() {
        return Some(Vec::new());
    }
    let mut bound = stp_heuristic(start);
    let mut path: Vec<Action> = Vec::new();
    let mut budget = max_nodes;
    loop {
        match dfs(start, 0, bound, &mut path, &mut budget) {
            DfsResult::Found => return Some(path),
            DfsResult::Exhausted => return None,
            DfsResult::Min(next_bound) => {
                if next_bound == usize::MAX {
                    return None;
                }
                bound = next_bound;
            }
        }
    }
}

enum DfsResult {
    Found,
    Min(usize),
    Exhausted,
}

fn dfs(
    state: &EnvState,
    g: usize,
    bound: usize,
    path: &mut Vec<Action>,
    budget: &mut usize,
) -> DfsResult {
    let f = g + stp_heuristic(state);
    if f > bound {
        return DfsResult::Min(f);
    }
    if state.is_terminal() {
        return DfsResult::Found;
    }
    if *budget == 0 {
        return DfsResult::Exhausted;
    }
    *budget -= 1;
    let mut min = usize::MAX;
    for action in Action::ALL {
        if let Some(&last) = path.last() {
            let inverse = match last {
                Action::Up => Action::Down,
                Action::Down => Action::Up,
                Action::Left => Action::Right,
                Action::Right => Action::Left,
            };
            if action == inverse {
                continue;
            }
        }
        let next = state.step(action);
        if next == *state {
            continue;
        }
        path.push(action);
        match dfs(&next, g + 1, bound, path, budget) {
            DfsResult::Found => return DfsResult::Found,
            DfsResult::Exhausted => return DfsResult::Exhausted,
            DfsResult::Min(m) => min = min.min(m),
        }
        path.pop();
    }
    DfsResult::Min(min)
}

/// Exact optimal tour length for a TSP state: minimum over visit orders of
/// the Manhattan leg sum, starting and ending at the start cell. Bitmask
/// dynamic programming, O(n^2 * 2^n).
pub fn held_karp_tour_length(state: &EnvState) -> usize {
    debug_assert_eq!(state.kind(), EnvKind::Tsp);
    let cols = state.cols();
    let pos = |flat: usize| (flat / cols, flat % cols);
    let cities: Vec<(usize, usize)> = tsp::cities(state).into_iter().map(pos).collect();
    let start = pos(tsp::start_cell(state));
    let n = cities.len();
    assert!(n <= 16, "held-karp oracle supports up to 16 cities");
    if n == 0 {
        return 0;
    }
    let full = (1usize << n) - 1;
    // dp[mask][i]: shortest walk from start covering `mask`, ending at city i.
    let mut dp = vec![vec![usize::MAX; n]; full + 1];
    for i in 0..n {
        dp[1 << i][i] = manhattan(start, cities[i]);
    }
    for mask in 1..=full {
        for i in 0..n {
            let cur = dp[mask][i];
            if cur == usize::MAX || mask & (1 << i) == 0 {
                continue;
            }
            for j in 0..n {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let next_mask = mask | (1 << j);
                let cand = cur + manhattan(cities[i], cities[j]);
                if cand < dp[next_mask][j] {
                    dp[next_mask][j] = cand;
                }
            }
        }
    }
    (0..n)
        .map(|i| dp[full][i].saturating_add(manhattan(cities[i], start)))
        .min()
        .expect("at least one city")
}

//! Sliding tile puzzle. `grid` holds the tile permutation (0 = blank), the
//! agent position is the blank, and actions move the blank. The goal layout
//! is descending: cell `i` holds tile `n*n-1-i`, blank last.

use super::{Action, EnvState, Error, Extras, Result, SizeConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn goal_tile(config: SizeConfig, flat: usize) -> u8 {
    (config.cells() - 1 - flat) as u8
}

pub(crate) fn step(state: &EnvState, action: Action) -> EnvState {
    let Some(next) = state.neighbor(state.agent, action) else {
        return state.clone();
    };
    let blank_flat = state.agent_flat();
    let next_flat = next.0 as usize * state.cols() + next.1 as usize;
    let mut out = state.clone();
    out.grid.swap(blank_flat, next_flat);
    out.agent = next;
    out
}

pub(crate) fn is_terminal(state: &EnvState) -> bool {
    state
        .grid
        .iter()
        .enumerate()
        .all(|(i, &v)| v == goal_tile(state.config, i))
}

pub(crate) fn encode(state: &EnvState) -> Vec<f64> {
    let cells = state.config.cells();
    let mut out = vec![0.0; cells * cells];
    for (i, &v) in state.grid.iter().enumerate() {
        out[v as usize * cells + i] = 1.0;
    }
    out
}

pub(crate) fn decode(config: SizeConfig, tensor: &[f64]) -> Result<EnvState> {
    let cells = config.cells();
    let mut grid = vec![u8::MAX; cells];
    for v in 0..cells {
        for i in 0..cells {
            if tensor[v * cells + i] > 0.5 {
                if grid[i] != u8::MAX {
                    return Err(Error::contract("cell has two tile values"));
                }
                grid[i] = v as u8;
            }
        }
    }
    from_cell_codes(config, &grid)
}

pub(crate) fn from_cell_codes(config: SizeConfig, codes: &[u8]) -> Result<EnvState> {
    let cells = config.cells();
    let mut seen = vec![false; cells];
    let mut blank = None;
    for (i, &v) in codes.iter().enumerate() {
        if (v as usize) >= cells || seen[v as usize] {
            return Err(Error::contract("tile codes are not a permutation"));
        }
        seen[v as usize] = true;
        if v == 0 {
            blank = Some(((i / config.cols()) as u8, (i % config.cols()) as u8));
        }
    }
    let agent = blank.ok_or_else(|| Error::contract("no blank cell"))?;
    Ok(EnvState {
        config,
        grid: codes.to_vec(),
        agent,
        extras: Extras::Stp,
    })
}

/// Reverse scramble from the goal. Solvable by construction.
pub(crate) fn sample(config: SizeConfig, rng: &mut ChaCha8Rng) -> EnvState {
    let cells = config.cells();
    let grid: Vec<u8> = (0..cells).map(|i| goal_tile(config, i)).collect();
    let last = cells - 1;
    let mut state = EnvState {
        config,
        grid,
        agent: ((last / config.cols()) as u8, (last % config.cols()) as u8),
        extras: Extras::Stp,
    };
    let moves = rng.random_range(4..=3 * cells);
    let mut last_action: Option<Action> = None;
    let mut done = 0;
    while done < moves || state.is_terminal() {
        let action = Action::ALL[rng.random_range(0..4)];
        if let Some(prev) = last_action {
            // Skip the immediate inverse so scrambles make progress.
            let inverse = match prev {
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
        if next == state {
            continue;
        }
        state = next;
        last_action = Some(action);
        done += 1;
    }
    state
}

//! Sokoban dynamics, encoding, and reverse-play instance generation.
//!
//! The static layer in `grid` uses `FLOOR`/`WALL`/`TARGET`; boxes are a
//! sorted list of flat cell indices in the extras and the agent is tracked
//! separately. 4-channel encoding order is `[wall, box, target, agent]`; the
//! exact channel order is a repo convention.

use super::{Action, EnvState, Error, Extras, Result, SizeConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) const FLOOR: u8 = 0;
pub(crate) const WALL: u8 = 1;
pub(crate) const TARGET: u8 = 2;

// cell categories for `cell_codes`
const C_FLOOR: u8 = 0;
const C_WALL: u8 = 1;
const C_TARGET: u8 = 2;
const C_BOX: u8 = 3;
const C_BOX_ON_TARGET: u8 = 4;
const C_AGENT: u8 = 5;
const C_AGENT_ON_TARGET: u8 = 6;

fn boxes(state: &EnvState) -> &[u8] {
    match &state.extras {
        Extras::Sokoban { boxes } => boxes,
        _ => unreachable!("sokoban extras"),
    }
}

fn has_box(state: &EnvState, flat: usize) -> bool {
    boxes(state).binary_search(&(flat as u8)).is_ok()
}

fn is_wall(state: &EnvState, flat: usize) -> bool {
    state.grid[flat] == WALL
}

pub(crate) fn step(state: &EnvState, action: Action) -> EnvState {
    let Some(next) = state.neighbor(state.agent, action) else {
        return state.clone();
    };
    let next_flat = (next.0 as usize) * state.cols() + next.1 as usize;
    if is_wall(state, next_flat) {
        return state.clone();
    }
    if has_box(state, next_flat) {
        // Push: the box target cell must be free floor/target.
        let Some(beyond) = state.neighbor(next, action) else {
            return state.clone();
        };
        let beyond_flat = (beyond.0 as usize) * state.cols() + beyond.1 as usize;
        if is_wall(state, beyond_flat) || has_box(state, beyond_flat) {
            return state.clone();
        }
        let mut new_boxes: Vec<u8> = boxes(state).to_vec();
        let pos = new_boxes
            .iter()
            .position(|&b| b == next_flat as u8)
            .expect("pushed box present");
        new_boxes[pos] = beyond_flat as u8;
        new_boxes.sort_unstable();
        let mut out = state.clone();
        out.agent = next;
        out.extras = Extras::Sokoban { boxes: new_boxes };
        out
    } else {
        let mut out = state.clone();
        out.agent = next;
        out
    }
}

pub(crate) fn is_terminal(state: &EnvState) -> bool {
    boxes(state).iter().all(|&b| state.grid[b as usize] == TARGET)
}

pub(crate) fn encode(state: &EnvState) -> Vec<f64> {
    let cells = state.config.cells();
    let mut out = vec![0.0; 4 * cells];
    for (i, &g) in state.grid.iter().enumerate() {
        if g == WALL {
            out[i] = 1.0;
        }
        if g == TARGET {
            out[2 * cells + i] = 1.0;
        }
    }
    for &b in boxes(state) {
        out[cells + b as usize] = 1.0;
    }
    out[3 * cells + state.agent_flat()] = 1.0;
    out
}

pub(crate) fn decode(config: SizeConfig, tensor: &[f64]) -> Result<EnvState> {
    let cells = config.cells();
    let on = |ch: usize, i: usize| tensor[ch * cells + i] > 0.5;
    let mut grid = vec![FLOOR; cells];
    let mut box_list = Vec::new();
    let mut agent = None;
    for i in 0..cells {
        if on(0, i) {
            grid[i] = WALL;
        }
        if on(2, i) {
            if grid[i] == WALL {
                return Err(Error::contract("decoded target overlaps wall"));
            }
            grid[i] = TARGET;
        }
        if on(1, i) {
            box_list.push(i as u8);
        }
        if on(3, i) {
            if agent.is_some() {
                return Err(Error::contract("decoded state has multiple agents"));
            }
            agent = Some(((i / config.cols()) as u8, (i % config.cols()) as u8));
        }
    }
    let agent = agent.ok_or_else(|| Error::contract("decoded state has no agent"))?;
    build(config, grid, box_list, agent)
}

pub(crate) fn cell_codes(state: &EnvState) -> Vec<u8> {
    let mut out: Vec<u8> = state
        .grid
        .iter()
        .map(|&g| match g {
            WALL => C_WALL,
            TARGET => C_TARGET,
            _ => C_FLOOR,
        })
        .collect();
    for &b in boxes(state) {
        out[b as usize] = if state.grid[b as usize] == TARGET {
            C_BOX_ON_TARGET
        } else {
            C_BOX
        };
    }
    let a = state.agent_flat();
    out[a] = if state.grid[a] == TARGET {
        C_AGENT_ON_TARGET
    } else {
        C_AGENT
    };
    out
}

pub(crate) fn from_cell_codes(config: SizeConfig, codes: &[u8]) -> Result<EnvState> {
    let mut grid = vec![FLOOR; codes.len()];
    let mut box_list = Vec::new();
    let mut agent = None;
    for (i, &code) in codes.iter().enumerate() {
        match code {
            C_FLOOR => {}
            C_WALL => grid[i] = WALL,
            C_TARGET => grid[i] = TARGET,
            C_BOX => box_list.push(i as u8),
            C_BOX_ON_TARGET => {
                grid[i] = TARGET;
                box_list.push(i as u8);
            }
            C_AGENT | C_AGENT_ON_TARGET => {
                if code == C_AGENT_ON_TARGET {
                    grid[i] = TARGET;
                }
                if agent.is_some() {
                    return Err(Error::contract("multiple agent cells"));
                }
                agent = Some(((i / config.cols()) as u8, (i % config.cols()) as u8));
            }
            other => return Err(Error::contract(format!("invalid sokoban cell code {other}"))),
        }
    }
    let agent = agent.ok_or_else(|| Error::contract("no agent cell"))?;
    build(config, grid, box_list, agent)
}

/// Shared structural validation for decoded states.
fn build(config: SizeConfig, grid: Vec<u8>, box_list: Vec<u8>, agent: (u8, u8)) -> Result<EnvState> {
    let SizeConfig::Sokoban { boxes: n_boxes, .. } = config else {
        return Err(Error::contract("sokoban config expected"));
    };
    if box_list.len() != n_boxes {
        return Err(Error::contract(format!(
            "expected {n_boxes} boxes, found {}",
            box_list.len()
        )));
    }
    let n_targets = grid.iter().filter(|&&g| g == TARGET).count();
    if n_targets != box_list.len() {
        return Err(Error::contract("box and target counts differ"));
    }
    for &b in &box_list {
        if grid[b as usize] == WALL {
            return Err(Error::contract("box on wall"));
        }
    }
    let agent_flat = agent.0 as usize * config.cols() + agent.1 as usize;
    if grid[agent_flat] == WALL || box_list.contains(&(agent_flat as u8)) {
        return Err(Error::contract("agent overlaps wall or box"));
    }
    let mut boxes_sorted = box_list;
    boxes_sorted.sort_unstable();
    boxes_sorted.dedup();
    if boxes_sorted.len() != n_boxes {
        return Err(Error::contract("duplicate box cells"));
    }
    Ok(EnvState {
        config,
        grid,
        agent,
        extras: Extras::Sokoban { boxes: boxes_sorted },
    })
}

/// Reverse-play generation: start from a solved layout (boxes on targets)
/// and scramble with random agent moves and box *pulls*. Every reverse move
/// has a forward counterpart, so the result is solvable by construction.
pub(crate) fn sample(config: SizeConfig, rng: &mut ChaCha8Rng) -> EnvState {
    let SizeConfig::Sokoban {
        rows,
        cols,
        boxes: n_boxes,
        walls,
    } = config
    else {
        unreachable!()
    };
    loop {
        let mut grid = vec![FLOOR; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                if r == 0 || c == 0 || r == rows - 1 || c == cols - 1 {
                    grid[r * cols + c] = WALL;
                }
            }
        }
        let mut interior: Vec<usize> = (0..rows * cols).filter(|&i| grid[i] == FLOOR).collect();
        interior.shuffle(rng);
        for &w in interior.iter().take(walls) {
            grid[w] = WALL;
        }
        let free: Vec<usize> = interior.iter().copied().skip(walls).collect();
        let mut picks = free.clone();
        picks.shuffle(rng);
        let target_cells: Vec<usize> = picks.iter().copied().take(n_boxes).collect();
        let agent_cell = picks[n_boxes];
        for &t in &target_cells {
            grid[t] = TARGET;
        }
        let mut box_list: Vec<u8> = target_cells.iter().map(|&t| t as u8).collect();
        box_list.sort_unstable();
        let mut state = EnvState {
            config,
            grid,
            agent: ((agent_cell / cols) as u8, (agent_cell % cols) as u8),
            extras: Extras::Sokoban { boxes: box_list },
        };

        let scramble = rng.random_range(2 * rows * cols..6 * rows * cols);
        for _ in 0..scramble {
            state = reverse_move(&state, rng);
        }
        // A few extra tries in case the scramble walked back to the solution.
        let mut guard = 0;
        while is_terminal(&state) && guard < 4 * rows * cols {
            state = reverse_move(&state, rng);
            guard += 1;
        }
        if !is_terminal(&state) {
            return state;
        }
    }
}

/// One random reverse move: either a plain agent move into a free cell, or a
/// pull (agent steps away from an adjacent box and drags it along).
fn reverse_move(state: &EnvState, rng: &mut ChaCha8Rng) -> EnvState {
    let mut options: Vec<(Action, bool)> = Vec::with_capacity(8);
    for action in Action::ALL {
        let Some(next) = state.neighbor(state.agent, action) else {
            continue;
        };
        let next_flat = next.0 as usize * state.cols() + next.1 as usize;
        if is_wall(state, next_flat) || has_box(state, next_flat) {
            continue;
        }
        options.push((action, false));
        // Pull is possible when the cell *behind* the agent holds a box.
        let (dr, dc) = action.delta();
        let br = state.agent.0 as i32 - dr;
        let bc = state.agent.1 as i32 - dc;
        if br >= 0 && bc >= 0 && (br as usize) < state.rows() && (bc as usize) < state.cols() {
            let behind_flat = br as usize * state.cols() + bc as usize;
            if has_box(state, behind_flat) {
                options.push((action, true));
            }
        }
    }
    if options.is_empty() {
        return state.clone();
    }
    let &(action, pull) = options.choose(rng).expect("non-empty options");
    let next = state.neighbor(state.agent, action).expect("checked above");
    let mut out = state.clone();
    if pull {
        let (dr, dc) = action.delta();
        let behind = (
            (state.agent.0 as i32 - dr) as usize,
            (state.agent.1 as i32 - dc) as usize,
        );
        let behind_flat = behind.0 * state.cols() + behind.1;
        let mut new_boxes = boxes(state).to_vec();
        let pos = new_boxes
            .iter()
            .position(|&b| b == behind_flat as u8)
            .expect("pulled box present");
        new_boxes[pos] = state.agent_flat() as u8;
        new_boxes.sort_unstable();
        out.extras = Extras::Sokoban { boxes: new_boxes };
    }
    out.agent = next;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::sample_instance;

    fn tiny() -> EnvState {
        // 5x5 room: agent at (2,1), box at (2,2), target at (2,3).
        let config = SizeConfig::Sokoban {
            rows: 5,
            cols: 5,
            boxes: 1,
            walls: 0,
        };
        let mut grid = vec![FLOOR; 25];
        for r in 0..5 {
            for c in 0..5 {
                if r == 0 || c == 0 || r == 4 || c == 4 {
                    grid[r * 5 + c] = WALL;
                }
            }
        }
        grid[2 * 5 + 3] = TARGET;
        EnvState {
            config,
            grid,
            agent: (2, 1),
            extras: Extras::Sokoban {
                boxes: vec![(2 * 5 + 2) as u8],
            },
        }
    }

    #[test]
    fn push_moves_agent_and_box() {
        let s = tiny();
        let s2 = s.step(Action::Right);
        assert_eq!(s2.agent(), (2, 2));
        assert_eq!(boxes(&s2), &[(2 * 5 + 3) as u8]);
        assert!(s2.is_terminal());
    }

    #[test]
    fn push_into_wall_is_noop() {
        let s = tiny();
        // Push the box to the target, then keep pushing against the wall.
        let s2 = s.step(Action::Right);
        let s3 = s2.step(Action::Right);
        assert_eq!(s2, s3);
    }

    #[test]
    fn plain_move_into_wall_is_noop() {
        let s = tiny();
        let s2 = s.step(Action::Left);
        assert_eq!(s, s2);
    }

    #[test]
    fn encode_decode_roundtrip() {
        let config = SizeConfig::Sokoban {
            rows: 8,
            cols: 8,
            boxes: 2,
            walls: 2,
        };
        for seed in 0..20 {
            let s = sample_instance(config, seed).unwrap();
            let t = s.encode();
            assert_eq!(t.len(), EnvState::encode_dim(config));
            assert_eq!(EnvState::decode(config, &t).unwrap(), s);
            let codes = s.cell_codes();
            assert_eq!(EnvState::from_cell_codes(config, &codes).unwrap(), s);
        }
    }

    #[test]
    fn encode_has_single_agent_cell() {
        let config = SizeConfig::Sokoban {
            rows: 8,
            cols: 8,
            boxes: 2,
            walls: 2,
        };
        let s = sample_instance(config, 3).unwrap();
        let t = s.encode();
        let cells = config.cells();
        let agent_on: usize = t[3 * cells..].iter().filter(|&&v| v > 0.5).count();
        assert_eq!(agent_on, 1);
    }
}

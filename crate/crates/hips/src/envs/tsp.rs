//! Grid traveling salesman. The static layer marks city and start cells; the
//! agent walks the open grid, visiting a city by stepping onto it, and must
//! return to the start once every city has been visited.

use super::{Action, EnvState, Error, Extras, Result, SizeConfig};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

pub(crate) const EMPTY: u8 = 0;
pub(crate) const CITY: u8 = 1;
pub(crate) const START: u8 = 2;

// cell categories for `cell_codes`
const C_EMPTY: u8 = 0;
const C_UNVISITED: u8 = 1;
const C_VISITED: u8 = 2;
const C_START: u8 = 3;
const C_AGENT: u8 = 4;
const C_AGENT_ON_VISITED: u8 = 5;
const C_AGENT_ON_START: u8 = 6;

/// Sorted flat indices of the city cells.
pub(crate) fn cities(state: &EnvState) -> Vec<usize> {
    state
        .grid
        .iter()
        .enumerate()
        .filter(|(_, &g)| g == CITY)
        .map(|(i, _)| i)
        .collect()
}

pub(crate) fn start_cell(state: &EnvState) -> usize {
    state
        .grid
        .iter()
        .position(|&g| g == START)
        .expect("tsp state has a start cell")
}

fn visited_mask(state: &EnvState) -> u64 {
    match state.extras {
        Extras::Tsp { visited } => visited,
        _ => unreachable!("tsp extras"),
    }
}

pub(crate) fn is_visited(state: &EnvState, city_flat: usize) -> bool {
    let cs = cities(state);
    match cs.binary_search(&city_flat) {
        Ok(idx) => visited_mask(state) & (1 << idx) != 0,
        Err(_) => false,
    }
}

pub(crate) fn all_visited(state: &EnvState) -> bool {
    let n = cities(state).len();
    visited_mask(state) == (1u64 << n) - 1
}

pub(crate) fn unvisited_cities(state: &EnvState) -> Vec<usize> {
    let mask = visited_mask(state);
    cities(state)
        .into_iter()
        .enumerate()
        .filter(|(idx, _)| mask & (1 << idx) == 0)
        .map(|(_, flat)| flat)
        .collect()
}

pub(crate) fn step(state: &EnvState, action: Action) -> EnvState {
    let Some(next) = state.neighbor(state.agent, action) else {
        return state.clone();
    };
    let mut out = state.clone();
    out.agent = next;
    let next_flat = next.0 as usize * state.cols() + next.1 as usize;
    if state.grid[next_flat] == CITY {
        let cs = cities(state);
        let idx = cs.binary_search(&next_flat).expect("city cell is a city");
        let Extras::Tsp { visited } = &mut out.extras else {
            unreachable!()
        };
        *visited |= 1 << idx;
    }
    out
}

pub(crate) fn is_terminal(state: &EnvState) -> bool {
    all_visited(state) && state.agent_flat() == start_cell(state)
}

pub(crate) fn encode(state: &EnvState) -> Vec<f64> {
    let cells = state.config.cells();
    let mut out = vec![0.0; 5 * cells];
    for (i, &g) in state.grid.iter().enumerate() {
        match g {
            CITY => {
                let ch = if is_visited(state, i) { 2 } else { 1 };
                out[ch * cells + i] = 1.0;
            }
            START => out[3 * cells + i] = 1.0,
            _ => out[i] = 1.0,
        }
    }
    out[4 * cells + state.agent_flat()] = 1.0;
    out
}

pub(crate) fn decode(config: SizeConfig, tensor: &[f64]) -> Result<EnvState> {
    let cells = config.cells();
    let on = |ch: usize, i: usize| tensor[ch * cells + i] > 0.5;
    let mut codes = vec![C_EMPTY; cells];
    let mut agent = None;
    for i in 0..cells {
        if on(1, i) {
            codes[i] = C_UNVISITED;
        } else if on(2, i) {
            codes[i] = C_VISITED;
        } else if on(3, i) {
            codes[i] = C_START;
        }
        if on(4, i) {
            if agent.is_some() {
                return Err(Error::contract("decoded state has multiple agents"));
            }
            agent = Some(i);
        }
    }
    let agent = agent.ok_or_else(|| Error::contract("decoded state has no agent"))?;
    codes[agent] = match codes[agent] {
        C_EMPTY => C_AGENT,
        C_VISITED => C_AGENT_ON_VISITED,
        C_START => C_AGENT_ON_START,
        C_UNVISITED => return Err(Error::contract("agent on unvisited city")),
        _ => unreachable!(),
    };
    from_cell_codes(config, &codes)
}

pub(crate) fn cell_codes(state: &EnvState) -> Vec<u8> {
    let mut out: Vec<u8> = state
        .grid
        .iter()
        .enumerate()
        .map(|(i, &g)| match g {
            CITY => {
                if is_visited(state, i) {
                    C_VISITED
                } else {
                    C_UNVISITED
                }
            }
            START => C_START,
            _ => C_EMPTY,
        })
        .collect();
    let a = state.agent_flat();
    out[a] = match out[a] {
        C_EMPTY => C_AGENT,
        C_VISITED => C_AGENT_ON_VISITED,
        C_START => C_AGENT_ON_START,
        // Arrival marks a city visited, so the agent is never on an
        // unvisited city.
        C_UNVISITED => C_AGENT_ON_VISITED,
        _ => unreachable!(),
    };
    out
}

pub(crate) fn from_cell_codes(config: SizeConfig, codes: &[u8]) -> Result<EnvState> {
    let SizeConfig::Tsp { cities: n_cities, .. } = config else {
        return Err(Error::contract("tsp config expected"));
    };
    let mut grid = vec![EMPTY; codes.len()];
    let mut agent = None;
    let mut start = None;
    let mut city_cells = Vec::new();
    let mut visited_cells = Vec::new();
    for (i, &code) in codes.iter().enumerate() {
        match code {
            C_EMPTY => {}
            C_UNVISITED => {
                grid[i] = CITY;
                city_cells.push(i);
            }
            C_VISITED => {
                grid[i] = CITY;
                city_cells.push(i);
                visited_cells.push(i);
            }
            C_START => {
                grid[i] = START;
                if start.replace(i).is_some() {
                    return Err(Error::contract("multiple start cells"));
                }
            }
            C_AGENT | C_AGENT_ON_VISITED | C_AGENT_ON_START => {
                if agent.replace(i).is_some() {
                    return Err(Error::contract("multiple agent cells"));
                }
                match code {
                    C_AGENT_ON_VISITED => {
                        grid[i] = CITY;
                        city_cells.push(i);
                        visited_cells.push(i);
                    }
                    C_AGENT_ON_START => {
                        grid[i] = START;
                        if start.replace(i).is_some() {
                            return Err(Error::contract("multiple start cells"));
                        }
                    }
                    _ => {}
                }
            }
            other => return Err(Error::contract(format!("invalid tsp cell code {other}"))),
        }
    }
    let agent = agent.ok_or_else(|| Error::contract("no agent cell"))?;
    start.ok_or_else(|| Error::contract("no start cell"))?;
    if city_cells.len() != n_cities {
        return Err(Error::contract(format!(
            "expected {n_cities} cities, found {}",
            city_cells.len()
        )));
    }
    city_cells.sort_unstable();
    let mut visited = 0u64;
    for v in visited_cells {
        let idx = city_cells.binary_search(&v).expect("visited cell is a city");
        visited |= 1 << idx;
    }
    Ok(EnvState {
        config,
        grid,
        agent: ((agent / config.cols()) as u8, (agent % config.cols()) as u8),
        extras: Extras::Tsp { visited },
    })
}

pub(crate) fn sample(config: SizeConfig, rng: &mut ChaCha8Rng) -> EnvState {
    let SizeConfig::Tsp { cities: n_cities, .. } = config else {
        unreachable!()
    };
    let cells = config.cells();
    let mut order: Vec<usize> = (0..cells).collect();
    order.shuffle(rng);
    let start = order[0];
    let mut grid = vec![EMPTY; cells];
    grid[start] = START;
    for &c in order.iter().skip(1).take(n_cities) {
        grid[c] = CITY;
    }
    EnvState {
        config,
        grid,
        agent: ((start / config.cols()) as u8, (start % config.cols()) as u8),
        extras: Extras::Tsp { visited: 0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::sample_instance;

    fn cfg() -> SizeConfig {
        SizeConfig::Tsp {
            rows: 10,
            cols: 10,
            cities: 8,
        }
    }

    #[test]
    fn sample_has_distinct_cities_and_agent_at_start() {
        let s = sample_instance(cfg(), 1).unwrap();
        let cs = cities(&s);
        assert_eq!(cs.len(), 8);
        assert_eq!(s.agent_flat(), start_cell(&s));
        assert_eq!(visited_mask(&s), 0);
    }

    #[test]
    fn stepping_onto_city_marks_it_visited() {
        let s = sample_instance(cfg(), 1).unwrap();
        let target = *cities(&s).first().unwrap();
        // Walk there along a vertical-then-horizontal path.
        let mut state = s.clone();
        let (tr, tc) = (target / 10, target % 10);
        while state.agent().0 != tr {
            let a = if state.agent().0 < tr { Action::Down } else { Action::Up };
            state = state.step(a);
        }
        while state.agent().1 != tc {
            let a = if state.agent().1 < tc { Action::Right } else { Action::Left };
            state = state.step(a);
        }
        assert!(is_visited(&state, target));
    }

    #[test]
    fn all_visited_but_not_at_start_is_not_terminal() {
        let s = sample_instance(cfg(), 2).unwrap();
        let mut out = s.clone();
        let n = cities(&s).len();
        let Extras::Tsp { visited } = &mut out.extras else {
            unreachable!()
        };
        *visited = (1 << n) - 1;
        // Move the agent off the start cell.
        let moved = [Action::Up, Action::Down, Action::Left, Action::Right]
            .into_iter()
            .map(|a| out.step(a))
            .find(|s2| s2.agent_flat() != start_cell(s2))
            .unwrap();
        assert!(all_visited(&moved));
        assert!(!moved.is_terminal());
        // And back at start it is terminal.
        assert!(out.is_terminal());
    }

    #[test]
    fn encode_decode_roundtrip() {
        for seed in 0..20 {
            let mut s = sample_instance(cfg(), seed).unwrap();
            // Take a short random-ish walk to churn the visited mask.
            for i in 0..15 {
                s = s.step(Action::ALL[(seed as usize + i) % 4]);
            }
            assert_eq!(EnvState::decode(cfg(), &s.encode()).unwrap(), s);
            assert_eq!(EnvState::from_cell_codes(cfg(), &s.cell_codes()).unwrap(), s);
        }
    }

    #[test]
    fn empty_cell_is_channel_zero() {
        let s = sample_instance(cfg(), 3).unwrap();
        let t = s.encode();
        let cells = cfg().cells();
        // Find an empty, non-agent cell and check only channel 0 is set.
        let i = (0..cells)
            .find(|&i| s.grid[i] == EMPTY && i != s.agent_flat())
            .unwrap();
        assert_eq!(t[i], 1.0);
        for ch in 1..5 {
            assert_eq!(t[ch * cells + i], 0.0);
        }
    }
}

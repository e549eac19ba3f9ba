//! A subgoal space defined by explicit tables. Used to exercise the search
//! algorithms on synthetic graphs with known costs, heuristics, and priors.

use super::space::{Candidate, SubgoalSpace};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, HashSet};

#[derive(Default)]
pub struct TableSpace {
    pub children: HashMap<u32, Vec<(u32, usize, f64)>>,
    pub heuristic: HashMap<u32, f64>,
    pub terminals: HashSet<u32>,
}

impl TableSpace {
    pub fn add_edge(&mut self, from: u32, to: u32, distance: usize, log_prob: f64) {
        self.children.entry(from).or_default().push((to, distance, log_prob));
    }

    pub fn set_heuristic(&mut self, node: u32, h: f64) {
        self.heuristic.insert(node, h);
    }
}

impl SubgoalSpace for TableSpace {
    type State = u32;

    fn is_terminal(&self, state: &u32) -> bool {
        self.terminals.contains(state)
    }

    fn heuristic(&self, state: &u32) -> f64 {
        self.heuristic.get(state).copied().unwrap_or(0.0)
    }

    fn expand(&self, state: &u32) -> Vec<Candidate<u32>> {
        self.children
            .get(state)
            .map(|edges| {
                edges
                    .iter()
                    .map(|&(to, distance, log_prob)| Candidate {
                        state: to,
                        log_prob,
                        distance,
                        actions: Vec::new(),
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    fn rollout_step(&self, state: &u32, rng: &mut ChaCha8Rng) -> Option<Candidate<u32>> {
        let mut options = self.expand(state);
        if options.is_empty() {
            return None;
        }
        let pick = rng.random_range(0..options.len());
        Some(options.swap_remove(pick))
    }
}

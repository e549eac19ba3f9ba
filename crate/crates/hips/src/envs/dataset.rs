//! Trajectories and dataset generation/persistence.
//!
//! Dataset files are line-delimited: a versioned header line followed by one
//! JSON record per trajectory holding the initial state as flat cell codes
//! plus the action codes. All later states are reconstructed by replay on
//! load and the solved invariant is re-verified.

use super::{
    derive_seed, sample_instance, solver, tsp, Action, EnvKind, EnvState, Error, Result,
    SizeConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Expert,
    Random,
}

/// A state/action sequence; `states.len() == actions.len() + 1`.
#[derive(Clone, PartialEq, Debug)]
pub struct Trajectory {
    pub states: Vec<EnvState>,
    pub actions: Vec<Action>,
    pub solved: bool,
}

impl Trajectory {
    /// Replay `actions` from `initial`. `solved` is true when the final state
    /// is terminal; passing through a terminal state earlier is rejected.
    pub fn from_initial(initial: EnvState, actions: Vec<Action>) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(actions.len() + 1);
        states.push(initial);
        for (i, &a) in actions.iter().enumerate() {
            let last = states.last().expect("non-empty");
            if last.is_terminal() {
                return Err(Error::contract(format!(
                    "trajectory passes through a terminal state at step {i}"
                )));
            }
            states.push(last.step(a));
        }
        let solved = states.last().expect("non-empty").is_terminal();
        Ok(Trajectory {
            states,
            actions,
            solved,
        })
    }

    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Check `states[i+1] == step(states[i], actions[i])` for every `i`.
    pub fn verify_consistency(&self) -> bool {
        self.states.len() == self.actions.len() + 1
            && self
                .actions
                .iter()
                .enumerate()
                .all(|(i, &a)| self.states[i].step(a) == self.states[i + 1])
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct TrajectoryRecord {
    pub trajectory: Trajectory,
    pub provenance: Provenance,
}

#[derive(Clone, PartialEq, Debug, Default)]
pub struct TrajectoryDataset {
    pub records: Vec<TrajectoryRecord>,
}

impl TrajectoryDataset {
    pub fn expert(&self) -> impl Iterator<Item = &Trajectory> {
        self.records
            .iter()
            .filter(|r| r.provenance == Provenance::Expert)
            .map(|r| &r.trajectory)
    }

    pub fn random(&self) -> impl Iterator<Item = &Trajectory> {
        self.records
            .iter()
            .filter(|r| r.provenance == Provenance::Random)
            .map(|r| &r.trajectory)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(
            w,
            "{}",
            serde_json::to_string(&FileHeader {
                format: DATASET_FORMAT.to_string(),
                version: DATASET_VERSION,
            })
            .expect("header serializes")
        )?;
        for rec in &self.records {
            let initial = &rec.trajectory.states[0];
            let line = DatasetLine {
                env_kind: initial.kind(),
                size_config: initial.config(),
                initial_state: initial.cell_codes(),
                actions: rec.trajectory.actions.iter().map(|a| a.index() as u8).collect(),
                provenance: rec.provenance,
            };
            writeln!(w, "{}", serde_json::to_string(&line).expect("line serializes"))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrajectoryDataset> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut offset = 0u64;
        let mut records = Vec::new();
        let mut saw_header = false;
        for line in reader.lines() {
            let line = line?;
            let line_start = offset;
            offset += line.len() as u64 + 1;
            if line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                let header: FileHeader = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(line_start, e.to_string()))?;
                header.expect(DATASET_FORMAT, DATASET_VERSION, line_start)?;
                saw_header = true;
                continue;
            }
            let parsed: DatasetLine = serde_json::from_str(&line)
                .map_err(|e| Error::parse(line_start, e.to_string()))?;
            if parsed.env_kind != parsed.size_config.kind() {
                return Err(Error::parse(line_start, "env_kind/size_config mismatch"));
            }
            let initial = EnvState::from_cell_codes(parsed.size_config, &parsed.initial_state)
                .map_err(|e| Error::parse(line_start, e.to_string()))?;
            let actions: Vec<Action> = parsed
                .actions
                .iter()
                .map(|&i| {
                    Action::from_index(i as usize)
                        .ok_or_else(|| Error::parse(line_start, format!("bad action code {i}")))
                })
                .collect::<Result<_>>()?;
            let trajectory = Trajectory::from_initial(initial, actions)
                .map_err(|e| Error::parse(line_start, e.to_string()))?;
            records.push(TrajectoryRecord {
                trajectory,
                provenance: parsed.provenance,
            });
        }
        if !saw_header {
            return Err(Error::parse(0, "missing dataset header"));
        }
        Ok(TrajectoryDataset { records })
    }
}

pub(crate) const DATASET_FORMAT: &str = "trajectories";
pub(crate) const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub(crate) struct FileHeader {
    pub format: String,
    pub version: u32,
}

impl FileHeader {
    pub(crate) fn expect(&self, format: &str, version: u32, offset: u64) -> Result<()> {
        if self.format != format {
            return Err(Error::parse(
                offset,
                format!("expected format `{format}`, found `{}`", self.format),
            ));
        }
        if self.version != version {
            return Err(Error::parse(
                offset,
                format!("unsupported {format} version {}", self.version),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetLine {
    env_kind: EnvKind,
    size_config: SizeConfig,
    initial_state: Vec<u8>,
    actions: Vec<u8>,
    provenance: Provenance,
}

/// Build a dataset of expert solutions plus bounded random rollouts,
/// deterministically in `seed`.
///
/// Experts: Sokoban via breadth-first search, STP via IDA*, TSP via the
/// deliberately suboptimal teacher that visits cities in a random order
/// along shortest grid paths. Instances whose solve exceeds the node cap are
/// resampled a bounded number of times.
pub fn generate_dataset(
    config: SizeConfig,
    n_expert: usize,
    n_random: usize,
    random_len: usize,
    seed: u64,
) -> Result<TrajectoryDataset> {
    config.validate()?;
    let mut records = Vec::with_capacity(n_expert + n_random);
    const MAX_ATTEMPTS: u64 = 8;
    const SOLVER_NODE_CAP: usize = 4_000_000;
    for i in 0..n_expert {
        let mut solved = None;
        for attempt in 0..MAX_ATTEMPTS {
            let inst_seed = derive_seed(seed, 1, (i as u64) * MAX_ATTEMPTS + attempt);
            let instance = sample_instance(config, inst_seed)?;
            let actions = match config.kind() {
                EnvKind::Sokoban => solver::solve_sokoban(&instance, SOLVER_NODE_CAP),
                EnvKind::Stp => solver::solve_stp(&instance, SOLVER_NODE_CAP),
                EnvKind::Tsp => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, i as u64));
                    Some(teacher_tour(&instance, &mut rng))
                }
            };
            if let Some(actions) = actions {
                solved = Some(Trajectory::from_initial(instance, actions)?);
                break;
            }
        }
        let trajectory = solved.ok_or_else(|| {
            Error::Generation(format!(
                "expert instance {i} unsolved after {MAX_ATTEMPTS} attempts"
            ))
        })?;
        debug_assert!(trajectory.solved);
        records.push(TrajectoryRecord {
            trajectory,
            provenance: Provenance::Expert,
        });
    }
    for j in 0..n_random {
        let instance = sample_instance(config, derive_seed(seed, 3, j as u64))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4, j as u64));
        let mut actions = Vec::new();
        let mut state = instance.clone();
        for _ in 0..random_len {
            if state.is_terminal() {
                break;
            }
            let a = Action::ALL[rng.random_range(0..4)];
            actions.push(a);
            state = state.step(a);
        }
        records.push(TrajectoryRecord {
            trajectory: Trajectory::from_initial(instance, actions)?,
            provenance: Provenance::Random,
        });
    }
    Ok(TrajectoryDataset { records })
}

/// Random-visit-order teacher tour: shuffle the cities, walk to each along a
/// canonical shortest path, then return to the start.
pub fn teacher_tour(instance: &EnvState, rng: &mut ChaCha8Rng) -> Vec<Action> {
    debug_assert_eq!(instance.kind(), EnvKind::Tsp);
    let cols = instance.cols();
    let pos = |flat: usize| (flat / cols, flat % cols);
    let mut order: Vec<usize> = tsp::cities(instance);
    order.shuffle(rng);
    let mut actions = Vec::new();
    let mut cur = instance.agent();
    for city in order {
        let leg = solver::shortest_grid_path(cur, pos(city));
        actions.extend(leg);
        cur = pos(city);
    }
    actions.extend(solver::shortest_grid_path(
        cur,
        pos(tsp::start_cell(instance)),
    ));
    actions
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsp_dataset_experts_are_suboptimal_on_average() {
        let config = SizeConfig::Tsp {
            rows: 10,
            cols: 10,
            cities: 8,
        };
        let ds = generate_dataset(config, 20, 0, 0, 9).unwrap();
        let mut teacher_total = 0usize;
        let mut optimal_total = 0usize;
        for t in ds.expert() {
            assert!(t.solved);
            teacher_total += t.len();
            optimal_total += solver::held_karp_tour_length(&t.states[0]);
        }
        assert!(
            teacher_total > optimal_total,
            "teacher {teacher_total} should exceed optimum {optimal_total}"
        );
    }

    #[test]
    fn sokoban_experts_all_solved() {
        let config = SizeConfig::Sokoban {
            rows: 7,
            cols: 7,
            boxes: 2,
            walls: 1,
        };
        let ds = generate_dataset(config, 8, 0, 0, 4).unwrap();
        assert_eq!(ds.expert().count(), 8);
        for t in ds.expert() {
            assert!(t.solved);
            assert!(t.verify_consistency());
        }
    }

    #[test]
    fn random_records_have_random_provenance() {
        let config = SizeConfig::Stp { side: 3 };
        let ds = generate_dataset(config, 0, 10, 32, 11).unwrap();
        assert_eq!(ds.random().count(), 10);
        for t in ds.random() {
            assert!(t.len() <= 32);
        }
    }

    #[test]
    fn dataset_roundtrip_and_determinism() {
        let config = SizeConfig::Stp { side: 3 };
        let a = generate_dataset(config, 3, 3, 16, 5).unwrap();
        let b = generate_dataset(config, 3, 3, 16, 5).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        a.save(&path).unwrap();
        let loaded = TrajectoryDataset::load(&path).unwrap();
        assert_eq!(a, loaded);
    }

    #[test]
    fn truncated_dataset_is_a_parse_error() {
        let config = SizeConfig::Stp { side: 3 };
        let ds = generate_dataset(config, 1, 0, 0, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        ds.save(&path).unwrap();
        let data = std::fs::read(&path).unwrap();
        std::fs::write(&path, &data[..data.len() - 10]).unwrap();
        match TrajectoryDataset::load(&path) {
            Err(Error::Parse { .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}

//! Subgoal-pair artifact: the hand-off from segmentation to the generative
//! model. Line-delimited file with a versioned header carrying the shared
//! size config; each record holds both states as flat cell codes plus the
//! segment length.

use crate::envs::{EnvKind, EnvState, SizeConfig};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Clone, PartialEq, Debug)]
pub struct SubgoalPair {
    /// Segment start state (`s_{g_k}` of the previous subgoal, or `s_0`).
    pub from: EnvState,
    /// Segment end state (the subgoal).
    pub to: EnvState,
    /// Low-level steps between them.
    pub length: usize,
}

#[derive(Clone, PartialEq, Debug)]
pub struct SubgoalPairs {
    pub config: SizeConfig,
    pub pairs: Vec<SubgoalPair>,
}

const PAIRS_FORMAT: &str = "subgoal-pairs";
const PAIRS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PairsHeader {
    format: String,
    version: u32,
    size_config: SizeConfig,
}

#[derive(Serialize, Deserialize)]
struct PairLine {
    env_kind: EnvKind,
    state_a: Vec<u8>,
    state_b: Vec<u8>,
    segment_length: usize,
}

impl SubgoalPairs {
    /// Histogram of segment lengths over bins `1..=horizon` (empty bins are
    /// kept so reports render zeros).
    pub fn length_histogram(&self, horizon: usize) -> Vec<(usize, usize)> {
        let mut bins = vec![0usize; horizon + 1];
        for p in &self.pairs {
            if p.length <= horizon {
                bins[p.length] += 1;
            }
        }
        (1..=horizon).map(|l| (l, bins[l])).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        let header = PairsHeader {
            format: PAIRS_FORMAT.to_string(),
            version: PAIRS_VERSION,
            size_config: self.config,
        };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for pair in &self.pairs {
            let line = PairLine {
                env_kind: self.config.kind(),
                state_a: pair.from.cell_codes(),
                state_b: pair.to.cell_codes(),
                segment_length: pair.length,
            };
            writeln!(w, "{}", serde_json::to_string(&line).expect("line serializes"))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SubgoalPairs> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut offset = 0u64;
        let mut header: Option<PairsHeader> = None;
        let mut pairs = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let line_start = offset;
            offset += line.len() as u64 + 1;
            if line.trim().is_empty() {
                continue;
            }
            match &header {
                None => {
                    let h: PairsHeader = serde_json::from_str(&line)
                        .map_err(|e| Error::parse(line_start, e.to_string()))?;
                    if h.format != PAIRS_FORMAT {
                        return Err(Error::parse(line_start, "not a subgoal-pairs file"));
                    }
                    if h.version != PAIRS_VERSION {
                        return Err(Error::parse(
                            line_start,
                            format!("unsupported subgoal-pairs version {}", h.version),
                        ));
                    }
                    header = Some(h);
                }
                Some(h) => {
                    let parsed: PairLine = serde_json::from_str(&line)
                        .map_err(|e| Error::parse(line_start, e.to_string()))?;
                    if parsed.env_kind != h.size_config.kind() {
                        return Err(Error::parse(line_start, "env_kind mismatch"));
                    }
                    let from = EnvState::from_cell_codes(h.size_config, &parsed.state_a)
                        .map_err(|e| Error::parse(line_start, e.to_string()))?;
                    let to = EnvState::from_cell_codes(h.size_config, &parsed.state_b)
                        .map_err(|e| Error::parse(line_start, e.to_string()))?;
                    pairs.push(SubgoalPair {
                        from,
                        to,
                        length: parsed.segment_length,
                    });
                }
            }
        }
        let header = header.ok_or_else(|| Error::parse(0, "missing subgoal-pairs header"))?;
        Ok(SubgoalPairs {
            config: header.size_config,
            pairs,
        })
    }
}

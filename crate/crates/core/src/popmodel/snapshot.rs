//! Population snapshots as JSON documents.
//!
//! ```json
//! {
//!   "format": "codedrift-population/1",
//!   "states": 4,
//!   "prior": [0.25, 0.25, 0.25, 0.25],
//!   "alphabet": 2,
//!   "codes": [ { "symbols": [1, 1, 0, 0] },
//!              { "rows": [[[0, 0.5], [1, 0.5]], ...] } ],
//!   "parasites": [2],
//!   "edges": [[0, 1, 0.25], [0, 2, 0.25]]
//! }
//! ```
//!
//! Deterministic codes list one 0-based symbol per state; other codes list
//! the non-zero `(symbol, probability)` entries of each row. Each edge weight
//! applies to both orientations of the pair. Numbers are written with full
//! round-trip precision so loading a saved snapshot is lossless.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Code, Environment, InteractionGraph, Population};
use crate::error::{Error, Result};
use crate::probkit::Dist1;

pub const FORMAT: &str = "codedrift-population/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum CodeDoc {
    Deterministic { symbols: Vec<usize> },
    Stochastic { rows: Vec<Vec<(usize, f64)>> },
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotDoc {
    format: String,
    states: usize,
    prior: Vec<f64>,
    alphabet: usize,
    codes: Vec<CodeDoc>,
    parasites: Vec<usize>,
    edges: Vec<(usize, usize, f64)>,
}

impl SnapshotDoc {
    fn from_population(pop: &Population) -> Self {
        let codes = pop
            .codes()
            .iter()
            .map(|c| match c.as_deterministic() {
                Some(symbols) => CodeDoc::Deterministic { symbols },
                None => CodeDoc::Stochastic {
                    rows: (0..c.num_states()).map(|mu| c.support(mu).to_vec()).collect(),
                },
            })
            .collect();
        let g = pop.graph();
        let mut edges = Vec::new();
        for a in 0..g.num_agents() {
            for b in a..g.num_agents() {
                let w = g.weight(a, b);
                if w != 0.0 {
                    edges.push((a, b, w));
                }
            }
        }
        SnapshotDoc {
            format: FORMAT.to_string(),
            states: pop.num_states(),
            prior: pop.environment().prior().probs().to_vec(),
            alphabet: pop.alphabet_size(),
            codes,
            parasites: pop.parasites().iter().copied().collect(),
            edges,
        }
    }

    fn into_population(self) -> std::result::Result<Population, String> {
        if self.format != FORMAT {
            return Err(format!("unsupported format tag {:?}", self.format));
        }
        if self.prior.len() != self.states {
            return Err(format!(
                "prior has {} entries for {} states",
                self.prior.len(),
                self.states
            ));
        }
        let env = Environment::new_unchecked(Dist1::new_unchecked(self.prior));
        let s = self.alphabet;
        let mut codes = Vec::with_capacity(self.codes.len());
        for (agent, doc) in self.codes.into_iter().enumerate() {
            let mut table = vec![0.0; self.states * s];
            match doc {
                CodeDoc::Deterministic { symbols } => {
                    if symbols.len() != self.states {
                        return Err(format!(
                            "agent {agent}: {} symbols for {} states",
                            symbols.len(),
                            self.states
                        ));
                    }
                    for (mu, x) in symbols.into_iter().enumerate() {
                        if x >= s {
                            return Err(format!("agent {agent}: symbol {x} outside alphabet"));
                        }
                        table[mu * s + x] = 1.0;
                    }
                }
                CodeDoc::Stochastic { rows } => {
                    if rows.len() != self.states {
                        return Err(format!(
                            "agent {agent}: {} rows for {} states",
                            rows.len(),
                            self.states
                        ));
                    }
                    for (mu, row) in rows.into_iter().enumerate() {
                        for (x, p) in row {
                            if x >= s {
                                return Err(format!(
                                    "agent {agent}: symbol {x} outside alphabet"
                                ));
                            }
                            table[mu * s + x] = p;
                        }
                    }
                }
            }
            codes.push(Code::from_table_unchecked(self.states, s, table));
        }
        let n = codes.len();
        let graph = InteractionGraph::from_weighted_edges(n, &self.edges).map_err(|e| e.to_string())?;
        let mut pop = Population::new_unchecked(env, codes, self.parasites, graph);
        pop.alphabet = s;
        Ok(pop)
    }
}

/// Serializes a population to its snapshot text, newline-terminated.
pub fn to_string(pop: &Population) -> String {
    let mut s = serde_json::to_string_pretty(&SnapshotDoc::from_population(pop))
        .expect("snapshot documents always serialize");
    s.push('\n');
    s
}

/// Parses snapshot text. The result is not validated.
pub fn from_str(text: &str) -> std::result::Result<Population, String> {
    let doc: SnapshotDoc = serde_json::from_str(text).map_err(|e| e.to_string())?;
    doc.into_population()
}

pub fn save(pop: &Population, path: &Path) -> Result<()> {
    fs::write(path, to_string(pop)).map_err(|e| Error::io(path, e))
}

/// Loads a snapshot without validating it.
pub fn load_unchecked(path: &Path) -> Result<Population> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text).map_err(|m| Error::parse(path, m))
}

/// Loads a snapshot and checks every population invariant.
pub fn load(path: &Path) -> Result<Population> {
    let mut pop = load_unchecked(path)?;
    pop.validate().map_err(Error::Validation)?;
    pop.checked = super::Checked(true);
    Ok(pop)
}

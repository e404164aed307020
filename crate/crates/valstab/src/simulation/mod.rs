//! Orchestration of the administration procedure: persona induction,
//! interlocutor creation, topic induction, n-message exchange, and per-item
//! parallel querying, with durable caching.

mod cache;
mod runner;

pub use cache::Cache;
pub use runner::{run, simulate_conversation, Runner};

use crate::backend::{BackendError, Participant, TokenDistribution};
use crate::domain::{Gender, Instrument, PopulationKind, ScaleCoding, TopicId};
use crate::prompting::PromptError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid run spec: {0}")]
    InvalidSpec(String),
    #[error("backend failure in cell {cell}: {source}")]
    Backend {
        cell: String,
        #[source]
        source: BackendError,
    },
    #[error("prompt error: {0}")]
    Prompt(#[from] PromptError),
    #[error("cache i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache record is corrupt: {0}")]
    CorruptCache(String),
}

/// When the order of suggested answers is re-randomized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerOrderPolicy {
    /// A fresh seeded permutation per item (default).
    #[default]
    PerItem,
    /// One seeded permutation reused for the whole administration.
    PerAdministration,
}

/// Everything needed to enumerate and execute one run's work cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    /// Persona mode when set; no-persona mode otherwise.
    pub population: Option<PopulationKind>,
    /// Optional roster truncation for desk-scale runs (stable ordering).
    #[serde(default)]
    pub persona_limit: Option<usize>,
    pub topics: Vec<TopicId>,
    /// Number of exchanged conversation messages (not counting the manually
    /// set opener and final query).
    pub n_messages: usize,
    /// Random seeds (persona mode).
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Number of answer-order permutations (no-persona mode).
    #[serde(default)]
    pub permutations: u32,
    pub instrument: Instrument,
    #[serde(default)]
    pub coding: ScaleCoding,
    #[serde(default)]
    pub answer_order: AnswerOrderPolicy,
}

impl RunSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.topics.is_empty() {
            return Err(SimError::InvalidSpec("topics must not be empty".into()));
        }
        match self.population {
            Some(_) if self.seeds.is_empty() => {
                Err(SimError::InvalidSpec("persona mode requires seeds".into()))
            }
            None if self.permutations < 1 => Err(SimError::InvalidSpec(
                "no-persona mode requires permutations >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    /// All work cells of this run, in canonical order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        match self.population {
            Some(kind) => {
                let roster = crate::domain::population(kind);
                let limit = self.persona_limit.unwrap_or(roster.len()).min(roster.len());
                for &seed in &self.seeds {
                    for topic in &self.topics {
                        for persona in &roster[..limit] {
                            cells.push(Cell {
                                key: CellKey {
                                    seed,
                                    topic: topic.clone(),
                                    participant: Participant::Persona(persona.name.clone()),
                                },
                                gender: persona.gender,
                            });
                        }
                    }
                }
            }
            None => {
                for p in 0..self.permutations {
                    for topic in &self.topics {
                        // Questionnaire phrasings split evenly over the
                        // permutations: even indices male, odd female.
                        let gender = if p % 2 == 0 { Gender::Male } else { Gender::Female };
                        cells.push(Cell {
                            key: CellKey {
                                seed: p as u64,
                                topic: topic.clone(),
                                participant: Participant::Permutation(p),
                            },
                            gender,
                        });
                    }
                }
            }
        }
        cells
    }

    /// Number of items the configured instrument administers per cell.
    pub fn items_per_cell(&self) -> usize {
        crate::domain::instrument_items(self.instrument, self.coding).len()
    }

    /// Total answer-record slots of the run, available before any backend
    /// call (dry-run accounting).
    pub fn answer_slots(&self) -> usize {
        self.cells().len() * self.items_per_cell()
    }
}

/// Identity of one work cell within a run (the model is a run-level fact).
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct CellKey {
    pub seed: u64,
    pub topic: TopicId,
    pub participant: Participant,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "seed={} topic={} participant={}",
            self.seed,
            self.topic,
            self.participant.label()
        )
    }
}

/// A work cell: its key plus the questionnaire phrasing it receives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub key: CellKey,
    pub gender: Gender,
}

/// One administered item: which options were shown where, and what the model
/// chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub cell: CellKey,
    /// Content-addressed identity of the conversation cell (covers model,
    /// participant, topic, seed, message count and sampling salt), so runs
    /// with different settings never collide in the cache.
    pub cell_hash: String,
    pub item: u32,
    /// Canonical option index displayed at each letter position;
    /// `presented_order[0]` is shown as letter A.
    pub presented_order: Vec<usize>,
    pub chosen_letter: char,
    /// Canonical code/score of the option shown at the chosen letter.
    pub chosen_code: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_distribution: Option<TokenDistribution>,
}

/// An item whose answer could not be extracted; recorded, never fabricated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingAnswer {
    pub cell: CellKey,
    pub item: u32,
    pub reason: String,
}

/// All answer records of one run, canonically ordered and ready for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDataset {
    pub model_id: String,
    pub instrument: Instrument,
    pub coding: ScaleCoding,
    pub records: std::collections::BTreeMap<CellKey, Vec<AnswerRecord>>,
    pub missing: Vec<MissingAnswer>,
}

impl ScoreDataset {
    pub fn n_records(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }
}

//! Deterministic scripted backend used as the offline test oracle.
//!
//! No network, no model: answers are pure functions of the backend seed and
//! the query metadata, which makes whole-pipeline expectations exact.

use super::{Backend, BackendError, QueryMeta, TokenDistribution};
use crate::prompting::RenderedPrompt;
use crate::seeding::{stable_hash, unit_draw};
use std::collections::BTreeMap;
use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Answering policy of the scripted backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptedPolicy {
    /// The canonical answer depends only on (participant, item): value
    /// profiles are perfectly stable across topics and conversation lengths.
    FixedPerPersona,
    /// The canonical answer is an independent draw per (participant, item,
    /// topic, seed): no stability beyond chance.
    UniformRandom,
    /// Behaves like `FixedPerPersona` for conversations of up to `k`
    /// exchanged messages; beyond that, a growing fraction of items drifts
    /// to context-specific answers. The drifted set only ever grows with
    /// conversation length.
    DriftAfterK(usize),
}

/// Fraction of items drifting per exchanged message past the threshold.
const DRIFT_PER_MESSAGE: f64 = 0.025;

pub struct ScriptedBackend {
    rng_seed: u64,
    policy: ScriptedPolicy,
    model_id: String,
    /// Optional explicit (participant, item) -> canonical option overrides.
    answer_table: HashMap<(String, u32), usize>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(rng_seed: u64, policy: ScriptedPolicy) -> ScriptedBackend {
        let model_id = match policy {
            ScriptedPolicy::FixedPerPersona => format!("scripted-fixed-{rng_seed}"),
            ScriptedPolicy::UniformRandom => format!("scripted-uniform-{rng_seed}"),
            ScriptedPolicy::DriftAfterK(k) => format!("scripted-drift{k}-{rng_seed}"),
        };
        ScriptedBackend {
            rng_seed,
            policy,
            model_id,
            answer_table: HashMap::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Pins the canonical option index for one (participant, item) pair.
    pub fn with_answer(mut self, participant: &str, item: u32, canonical: usize) -> Self {
        self.answer_table
            .insert((participant.to_string(), item), canonical);
        self
    }

    /// Number of backend calls served so far (for caching-contract tests).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn persona_answer(&self, participant: &str, item: u32, n_options: usize) -> usize {
        if let Some(&idx) = self.answer_table.get(&(participant.to_string(), item)) {
            return idx % n_options;
        }
        let h = stable_hash(&[
            &self.rng_seed.to_string(),
            "fixed-answer",
            participant,
            &item.to_string(),
        ]);
        (h % n_options as u64) as usize
    }

    fn context_answer(&self, meta: &QueryMeta, item: u32, n_options: usize) -> usize {
        let h = stable_hash(&[
            &self.rng_seed.to_string(),
            "context-answer",
            &meta.participant.label(),
            &item.to_string(),
            &meta.topic,
            &meta.seed.to_string(),
        ]);
        (h % n_options as u64) as usize
    }

    /// The canonical option the backend wants to select for this query.
    fn canonical_choice(&self, meta: &QueryMeta, n_options: usize) -> usize {
        let participant = meta.participant.label();
        let item = meta.item_index.unwrap_or(0);
        match self.policy {
            ScriptedPolicy::FixedPerPersona => self.persona_answer(&participant, item, n_options),
            ScriptedPolicy::UniformRandom => self.context_answer(meta, item, n_options),
            ScriptedPolicy::DriftAfterK(k) => {
                let past = meta.n_exchanged.saturating_sub(k) as f64;
                let drift_share = (past * DRIFT_PER_MESSAGE).min(0.98);
                // The per-item draw ignores conversation length, so the set
                // of drifted items grows monotonically with it.
                let u = unit_draw(&[
                    &self.rng_seed.to_string(),
                    "drift-membership",
                    &participant,
                    &item.to_string(),
                    &meta.topic,
                    &meta.seed.to_string(),
                ]);
                if u < drift_share {
                    self.context_answer(meta, item, n_options)
                } else {
                    self.persona_answer(&participant, item, n_options)
                }
            }
        }
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, prompt: &RenderedPrompt, meta: &QueryMeta) -> Result<String, BackendError> {
        if prompt.text.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let style = stable_hash(&[
            &self.rng_seed.to_string(),
            "reply",
            &meta.participant.label(),
            &meta.topic,
            &meta.seed.to_string(),
            &meta.turn.to_string(),
        ]) % 3;
        Ok(match style {
            0 => format!("Let us speak further of {} (turn {}).", meta.topic, meta.turn),
            1 => format!("A curious thought on {} comes to mind (turn {}).", meta.topic, meta.turn),
            _ => format!("Very well, more about {} then (turn {}).", meta.topic, meta.turn),
        })
    }

    fn next_token_distribution(
        &self,
        prompt: &RenderedPrompt,
        meta: &QueryMeta,
    ) -> Result<TokenDistribution, BackendError> {
        if prompt.text.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let presented: Vec<usize> = match &meta.presented_order {
            Some(order) => order.clone(),
            // Without an explicit presentation, assume canonical order.
            None => (0..6).collect(),
        };
        let n_options = presented.len();
        let choice = self.canonical_choice(meta, n_options);
        let position = presented
            .iter()
            .position(|&c| c == choice)
            .expect("canonical choice must appear in the presented order");
        let letter = (b'A' + position as u8) as char;
        let mut entries = BTreeMap::new();
        entries.insert(letter.to_string(), 0.0);
        TokenDistribution::new(entries)
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

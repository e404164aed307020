//! Conversation simulation and questionnaire administration.
//!
//! Each work cell (seed x topic x participant) simulates one conversation
//! and then appends every instrument item to that same conversation
//! independently, so answers never contaminate each other. Randomness is
//! hierarchical: one root seed per cell, split into per-purpose streams, so
//! adding items never perturbs conversation generation.

use super::{
    AnswerOrderPolicy, AnswerRecord, Cell, CellKey, MissingAnswer, RunSpec, ScoreDataset, SimError,
};
use crate::backend::{Backend, BackendError, Participant, QueryMeta};
use crate::domain::{
    self, Gender, InstrumentItem, Message, Persona, Role, Topic, Transcript,
};
use crate::exec;
use crate::prompting::{render, PromptTemplate, Side};
use crate::seeding::{child_seed, stable_hash};
use crate::simulation::Cache;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Ties a backend, a prompt template and a cache into an executable unit.
pub struct Runner<'a> {
    backend: &'a dyn Backend,
    template: PromptTemplate,
    cache: &'a Cache,
    /// Extra cache-key material (sampling fingerprint), so cells simulated
    /// under different sampling configurations never collide.
    salt: String,
    answer_order: AnswerOrderPolicy,
}

impl<'a> Runner<'a> {
    pub fn new(
        backend: &'a dyn Backend,
        template: PromptTemplate,
        cache: &'a Cache,
        salt: impl Into<String>,
    ) -> Runner<'a> {
        Runner {
            backend,
            template,
            cache,
            salt: salt.into(),
            answer_order: AnswerOrderPolicy::default(),
        }
    }

    pub fn with_answer_order(mut self, policy: AnswerOrderPolicy) -> Runner<'a> {
        self.answer_order = policy;
        self
    }

    /// Content-addressed key of one conversation cell.
    fn transcript_key(&self, cell: &CellKey, n_messages: usize) -> String {
        let mut hasher = Sha256::new();
        for part in [
            self.backend.model_id(),
            &cell.participant.label(),
            &cell.topic.to_string(),
            &cell.seed.to_string(),
            &n_messages.to_string(),
            &self.salt,
        ] {
            hasher.update((part.len() as u64).to_be_bytes());
            hasher.update(part.as_bytes());
        }
        hex::encode(&hasher.finalize()[..16])
    }

    fn cell_root(&self, cell: &CellKey, n_messages: usize) -> u64 {
        stable_hash(&[
            self.backend.model_id(),
            &cell.participant.label(),
            &cell.topic.to_string(),
            &cell.seed.to_string(),
            &n_messages.to_string(),
            &self.salt,
        ])
    }

    /// Simulates (or replays from cache) the conversation of one cell:
    /// the manually set opener plus `n_messages` exchanged messages with
    /// strictly alternating roles, the tested model speaking first.
    pub fn simulate_conversation(
        &self,
        persona: Option<&Persona>,
        topic: &Topic,
        cell: &CellKey,
        n_messages: usize,
    ) -> Result<Transcript, SimError> {
        if topic.is_direct() && n_messages > 0 {
            return Err(SimError::InvalidSpec(
                "direct administration cannot exchange messages".into(),
            ));
        }
        let key = self.transcript_key(cell, n_messages);
        if let Some(cached) = self.cache.transcript(&key) {
            return Ok(cached);
        }
        let mut transcript = Transcript::opener_only(persona.cloned(), topic.clone(), cell.seed);
        for turn in 0..n_messages {
            let side = if turn % 2 == 0 {
                Side::Tested
            } else {
                Side::Interlocutor
            };
            let prompt = render(&self.template, side, persona, &transcript, None)?;
            let meta = QueryMeta {
                participant: cell.participant.clone(),
                topic: cell.topic.to_string(),
                seed: cell.seed,
                n_exchanged: turn,
                turn,
                item_index: None,
                presented_order: None,
            };
            let reply = self
                .backend
                .complete(&prompt, &meta)
                .map_err(|source| SimError::Backend {
                    cell: cell.to_string(),
                    source,
                })?;
            let role = match side {
                Side::Tested => Role::TestedModel,
                Side::Interlocutor => Role::Interlocutor,
            };
            transcript.messages.push(Message::new(role, reply));
            transcript.n_exchanged = turn + 1;
        }
        self.cache.put_transcript(&key, &transcript)?;
        Ok(transcript)
    }

    /// Administers all items over one finished conversation. Every item is
    /// appended to the same transcript independently; the answer is the
    /// argmax over the presented letters' token probabilities, with a
    /// text-parsing fallback when the endpoint cannot report distributions.
    pub fn administer(
        &self,
        cell: &Cell,
        transcript: &Transcript,
        items: &[InstrumentItem],
        n_messages: usize,
    ) -> (Vec<AnswerRecord>, Vec<MissingAnswer>) {
        let root = self.cell_root(&cell.key, n_messages);
        let cell_hash = self.transcript_key(&cell.key, n_messages);
        let persona = transcript.persona.clone();
        let outcomes = exec::map(items.to_vec(), |item| {
            self.administer_item(cell, &cell_hash, transcript, persona.as_ref(), &item, root)
        });
        let mut records = Vec::new();
        let mut missing = Vec::new();
        for outcome in outcomes {
            match outcome {
                Ok(record) => records.push(record),
                Err(miss) => missing.push(miss),
            }
        }
        (records, missing)
    }

    fn administer_item(
        &self,
        cell: &Cell,
        cell_hash: &str,
        transcript: &Transcript,
        persona: Option<&Persona>,
        item: &InstrumentItem,
        root: u64,
    ) -> Result<AnswerRecord, MissingAnswer> {
        if let Some(cached) = self.cache.record(cell_hash, item.index) {
            return Ok(cached);
        }
        let miss = |reason: String| MissingAnswer {
            cell: cell.key.clone(),
            item: item.index,
            reason,
        };
        let n_options = item.n_options();
        let perm_index = match self.answer_order {
            AnswerOrderPolicy::PerItem => item.index as u64,
            AnswerOrderPolicy::PerAdministration => 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(root, "answer-order", perm_index));
        let mut presented: Vec<usize> = (0..n_options).collect();
        presented.shuffle(&mut rng);

        let query = format_item_query(item, cell.gender, &presented);
        let prompt = render(
            &self.template,
            Side::Tested,
            persona,
            transcript,
            Some(&query),
        )
        .map_err(|e| miss(format!("prompt error: {e}")))?;
        let meta = QueryMeta {
            participant: cell.key.participant.clone(),
            topic: cell.key.topic.to_string(),
            seed: cell.key.seed,
            n_exchanged: transcript.n_exchanged,
            turn: 0,
            item_index: Some(item.index),
            presented_order: Some(presented.clone()),
        };

        let (chosen_letter, raw_distribution) =
            match self.backend.next_token_distribution(&prompt, &meta) {
                Ok(dist) => {
                    let best = letters(n_options)
                        .filter_map(|l| dist.letter_log_prob(l).map(|lp| (l, lp)))
                        .max_by(|a, b| a.1.total_cmp(&b.1));
                    match best {
                        Some((letter, _)) => (letter, Some(dist)),
                        None => {
                            return Err(miss(
                                "no answer letter among reported top tokens".to_string(),
                            ))
                        }
                    }
                }
                Err(BackendError::UnsupportedByEndpoint) => {
                    let reply = self
                        .backend
                        .complete(&prompt, &meta)
                        .map_err(|e| miss(format!("fallback completion failed: {e}")))?;
                    match parse_answer_letter(&reply, n_options) {
                        Some(letter) => (letter, None),
                        None => return Err(miss(format!("no answer letter in reply: {reply:?}"))),
                    }
                }
                Err(e) => return Err(miss(format!("backend error: {e}"))),
            };

        let position = (chosen_letter as u8 - b'A') as usize;
        let canonical = presented[position];
        let record = AnswerRecord {
            cell: cell.key.clone(),
            cell_hash: cell_hash.to_string(),
            item: item.index,
            presented_order: presented,
            chosen_letter,
            chosen_code: item.option_codes[canonical],
            raw_distribution,
        };
        if let Err(e) = self.cache.append_record(&record) {
            return Err(miss(format!("cache write failed: {e}")));
        }
        Ok(record)
    }

    /// Executes a full run spec: simulates every cell's conversation, then
    /// administers the instrument, returning the canonical dataset plus the
    /// inventory of cells that could not be completed.
    pub fn run(&self, spec: &RunSpec) -> Result<ScoreDataset, SimError> {
        spec.validate()?;
        let runner = Runner {
            backend: self.backend,
            template: self.template.clone(),
            cache: self.cache,
            salt: self.salt.clone(),
            answer_order: spec.answer_order,
        };
        let items = domain::instrument_items(spec.instrument, spec.coding);
        let cells = spec.cells();
        let results = exec::map(cells, |cell| {
            let persona = match &cell.key.participant {
                Participant::Persona(name) => spec.population.and_then(|kind| {
                    domain::population(kind)
                        .iter()
                        .find(|p| &p.name == name)
                        .cloned()
                }),
                Participant::Permutation(_) => None,
            };
            let topic = match domain::topic(&cell.key.topic) {
                Some(t) => t,
                None => {
                    return (
                        Vec::new(),
                        vec![MissingAnswer {
                            cell: cell.key.clone(),
                            item: 0,
                            reason: format!("unknown topic {}", cell.key.topic),
                        }],
                    )
                }
            };
            match runner.simulate_conversation(
                persona.as_ref(),
                &topic,
                &cell.key,
                spec.n_messages,
            ) {
                Ok(transcript) => runner.administer(&cell, &transcript, &items, spec.n_messages),
                Err(e) => (
                    Vec::new(),
                    vec![MissingAnswer {
                        cell: cell.key.clone(),
                        item: 0,
                        reason: format!("conversation failed: {e}"),
                    }],
                ),
            }
        });

        let mut dataset = ScoreDataset {
            model_id: self.backend.model_id().to_string(),
            instrument: spec.instrument,
            coding: spec.coding,
            records: Default::default(),
            missing: Vec::new(),
        };
        for (records, missing) in results {
            for record in records {
                dataset
                    .records
                    .entry(record.cell.clone())
                    .or_default()
                    .push(record);
            }
            dataset.missing.extend(missing);
        }
        for cell_records in dataset.records.values_mut() {
            cell_records.sort_by_key(|r| r.item);
        }
        dataset.missing.sort_by(|a, b| (&a.cell, a.item).cmp(&(&b.cell, b.item)));
        Ok(dataset)
    }
}

/// Convenience wrapper: run a spec with a fresh runner.
pub fn run(
    spec: &RunSpec,
    backend: &dyn Backend,
    template: PromptTemplate,
    cache: &Cache,
    salt: &str,
) -> Result<ScoreDataset, SimError> {
    Runner::new(backend, template, cache, salt).run(spec)
}

/// Re-exported for callers that only need the conversation step.
pub fn simulate_conversation(
    backend: &dyn Backend,
    template: PromptTemplate,
    cache: &Cache,
    persona: Option<&Persona>,
    topic: &Topic,
    cell: &CellKey,
    n_messages: usize,
) -> Result<Transcript, SimError> {
    Runner::new(backend, template, cache, "").simulate_conversation(
        persona, topic, cell, n_messages,
    )
}

fn letters(n: usize) -> impl Iterator<Item = char> {
    (0..n).map(|i| (b'A' + i as u8) as char)
}

/// The final interlocutor message for one item: the item text followed by
/// the lettered options in their presented order.
pub fn format_item_query(item: &InstrumentItem, gender: Gender, presented: &[usize]) -> String {
    let mut out = item.text(gender).to_string();
    for (pos, &canonical) in presented.iter().enumerate() {
        out.push('\n');
        out.push_str(&format!(
            "({}) {}",
            (b'A' + pos as u8) as char,
            item.option_texts[canonical]
        ));
    }
    out
}

/// Finds the first standalone answer letter in a free-text reply.
fn parse_answer_letter(reply: &str, n_options: usize) -> Option<char> {
    let valid: Vec<char> = letters(n_options).collect();
    let bytes: Vec<char> = reply.chars().collect();
    for (i, &ch) in bytes.iter().enumerate() {
        if !valid.contains(&ch) {
            continue;
        }
        let prev_ok = i == 0 || !bytes[i - 1].is_alphanumeric();
        let next_ok = i + 1 == bytes.len() || !bytes[i + 1].is_alphanumeric();
        if prev_ok && next_ok {
            return Some(ch);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptedBackend, ScriptedPolicy, TokenDistribution};
    use crate::domain::{Instrument, PopulationKind, ScaleCoding, TopicId};
    use crate::prompting::TemplateKind;
    use std::sync::Mutex;

    fn small_spec() -> RunSpec {
        RunSpec {
            population: Some(PopulationKind::FictionalCharacters),
            persona_limit: Some(4),
            topics: vec![TopicId::Joke, TopicId::Chess],
            n_messages: 3,
            seeds: vec![1, 2],
            permutations: 0,
            instrument: Instrument::Pvq,
            coding: ScaleCoding::SixPoint,
            answer_order: AnswerOrderPolicy::PerItem,
        }
    }

    #[test]
    fn conversation_has_opener_plus_alternating_exchange() {
        let backend = ScriptedBackend::new(1, ScriptedPolicy::FixedPerPersona);
        let cache = Cache::memory();
        let runner = Runner::new(
            &backend,
            PromptTemplate::new(TemplateKind::Base),
            &cache,
            "test",
        );
        let persona = domain::population(PopulationKind::FictionalCharacters)[0].clone();
        let topic = domain::topic(&TopicId::Joke).unwrap();
        let cell = CellKey {
            seed: 5,
            topic: TopicId::Joke,
            participant: Participant::Persona(persona.name.clone()),
        };
        let t = runner
            .simulate_conversation(Some(&persona), &topic, &cell, 3)
            .unwrap();
        assert_eq!(t.n_exchanged, 3);
        t.check().unwrap();

        // n = 0 leaves just the opener.
        let t0 = runner
            .simulate_conversation(Some(&persona), &topic, &cell, 0)
            .unwrap();
        assert_eq!(t0.messages.len(), 1);
        assert_eq!(t0.messages[0].text, topic.opener);
    }

    #[test]
    fn cache_hit_means_zero_backend_calls() {
        let backend = ScriptedBackend::new(1, ScriptedPolicy::FixedPerPersona);
        let cache = Cache::memory();
        let spec = small_spec();
        let template = PromptTemplate::new(TemplateKind::Base);
        let first = run(&spec, &backend, template.clone(), &cache, "salt").unwrap();
        let calls_after_first = backend.calls();
        assert!(calls_after_first > 0);
        let second = run(&spec, &backend, template, &cache, "salt").unwrap();
        assert_eq!(backend.calls(), calls_after_first, "warm run must not call the backend");
        assert_eq!(first, second);
    }

    #[test]
    fn run_produces_the_full_grid() {
        let backend = ScriptedBackend::new(2, ScriptedPolicy::FixedPerPersona);
        let cache = Cache::memory();
        let spec = small_spec();
        let dataset = run(
            &spec,
            &backend,
            PromptTemplate::new(TemplateKind::Base),
            &cache,
            "salt",
        )
        .unwrap();
        assert_eq!(dataset.n_records(), 2 * 2 * 4 * 40);
        assert!(dataset.missing.is_empty());
        for records in dataset.records.values() {
            assert_eq!(records.len(), 40);
            for r in records {
                let pos = (r.chosen_letter as u8 - b'A') as usize;
                assert!(pos < r.presented_order.len());
            }
        }
    }

    #[test]
    fn presented_order_is_seeded_per_cell() {
        let backend = ScriptedBackend::new(2, ScriptedPolicy::FixedPerPersona);
        let spec = small_spec();
        let a = run(
            &spec,
            &backend,
            PromptTemplate::new(TemplateKind::Base),
            &Cache::memory(),
            "salt",
        )
        .unwrap();
        let b = run(
            &spec,
            &backend,
            PromptTemplate::new(TemplateKind::Base),
            &Cache::memory(),
            "salt",
        )
        .unwrap();
        assert_eq!(a, b, "same cell re-run must present identical orders");
        // Different topics get different permutations (same seed and item).
        let cells: Vec<&CellKey> = a.records.keys().collect();
        let same_seed: Vec<&&CellKey> = cells.iter().filter(|c| c.seed == 1).collect();
        let r1 = &a.records[same_seed[0]][0];
        let r2 = &a.records[same_seed[5]][0];
        assert_ne!(
            (&r1.cell.topic, &r1.presented_order),
            (&r2.cell.topic, &r2.presented_order)
        );
    }

    #[test]
    fn argmax_over_presented_letters() {
        // Distribution {A: -0.1, B: -3.0} with canonical order -> A.
        let mut entries = std::collections::BTreeMap::new();
        entries.insert("A".to_string(), -0.1);
        entries.insert("B".to_string(), -3.0);
        let dist = TokenDistribution::new(entries).unwrap();
        let best = letters(6)
            .filter_map(|l| dist.letter_log_prob(l).map(|lp| (l, lp)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(l, _)| l);
        assert_eq!(best, Some('A'));
    }

    #[test]
    fn fallback_letter_parsing() {
        assert_eq!(parse_answer_letter("I pick (B) of course", 6), Some('B'));
        assert_eq!(parse_answer_letter("Answer: C.", 6), Some('C'));
        assert_eq!(parse_answer_letter("ABCDEF are letters", 6), None); // embedded
        assert_eq!(parse_answer_letter("F", 5), None); // out of range for 5 options
        assert_eq!(parse_answer_letter("nothing here", 6), None);
    }

    #[test]
    fn per_item_prompts_are_isolated() {
        // A capturing backend records every prompt it answers.
        struct Capturing {
            inner: ScriptedBackend,
            prompts: Mutex<Vec<(u32, String)>>,
        }
        impl Backend for Capturing {
            fn complete(
                &self,
                prompt: &crate::prompting::RenderedPrompt,
                meta: &QueryMeta,
            ) -> Result<String, BackendError> {
                self.inner.complete(prompt, meta)
            }
            fn next_token_distribution(
                &self,
                prompt: &crate::prompting::RenderedPrompt,
                meta: &QueryMeta,
            ) -> Result<TokenDistribution, BackendError> {
                self.prompts
                    .lock()
                    .unwrap()
                    .push((meta.item_index.unwrap(), prompt.text.clone()));
                self.inner.next_token_distribution(prompt, meta)
            }
            fn model_id(&self) -> &str {
                self.inner.model_id()
            }
        }
        let backend = Capturing {
            inner: ScriptedBackend::new(7, ScriptedPolicy::FixedPerPersona),
            prompts: Mutex::new(Vec::new()),
        };
        let cache = Cache::memory();
        let mut spec = small_spec();
        spec.persona_limit = Some(1);
        spec.topics = vec![TopicId::Joke];
        spec.seeds = vec![1];
        run(
            &spec,
            &backend,
            PromptTemplate::new(TemplateKind::Base),
            &cache,
            "salt",
        )
        .unwrap();
        let mut prompts = backend.prompts.lock().unwrap().clone();
        prompts.sort_by_key(|(item, _)| *item);
        assert_eq!(prompts.len(), 40);
        let items = domain::instrument_items(Instrument::Pvq, ScaleCoding::SixPoint);
        for (index, prompt) in &prompts {
            for item in &items {
                let contains = prompt.contains(item.text(Gender::Male));
                if item.index == *index {
                    assert!(contains, "prompt {index} must contain its own item");
                } else {
                    assert!(!contains, "prompt {index} leaks item {}", item.index);
                }
            }
        }
    }
}

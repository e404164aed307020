//! Core domain types plus the embedded rosters, item banks, topics and
//! downstream-task query banks.
//!
//! Everything in this module is immutable after load and safe to share
//! read-only across worker threads.

mod data;

pub use data::{
    beggar_names, canonical_topics, downstream_bank, downstream_bank_with, instrument_items,
    population, pvq_items, religion_item_names, topic, topics, BeggarName, DownstreamScores,
};

use serde::{Deserialize, Serialize};
use std::fmt;

/// The ten basic personal values measured by the PVQ-40.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Universalism,
    Benevolence,
    Conformity,
    Tradition,
    Security,
    Power,
    Achievement,
    Hedonism,
    Stimulation,
    SelfDirection,
}

impl Value {
    /// Canonical ordering used everywhere a profile is laid out as a vector.
    pub const ALL: [Value; 10] = [
        Value::Universalism,
        Value::Benevolence,
        Value::Conformity,
        Value::Tradition,
        Value::Security,
        Value::Power,
        Value::Achievement,
        Value::Hedonism,
        Value::Stimulation,
        Value::SelfDirection,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|v| *v == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Value::Universalism => "universalism",
            Value::Benevolence => "benevolence",
            Value::Conformity => "conformity",
            Value::Tradition => "tradition",
            Value::Security => "security",
            Value::Power => "power",
            Value::Achievement => "achievement",
            Value::Hedonism => "hedonism",
            Value::Stimulation => "stimulation",
            Value::SelfDirection => "self_direction",
        }
    }

    pub fn parse(s: &str) -> Option<Value> {
        Value::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which simulated population a persona belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationKind {
    FictionalCharacters,
    RealWorldPersonas,
}

impl PopulationKind {
    pub fn name(self) -> &'static str {
        match self {
            PopulationKind::FictionalCharacters => "fictional_characters",
            PopulationKind::RealWorldPersonas => "real_world_personas",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

/// A named identity the tested model is instructed to role-play.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub population: PopulationKind,
    pub gender: Gender,
    /// Full persona-setting sentence, e.g. "You are Gandalf from ...".
    pub instruction: String,
}

/// An ordered answer scale: display labels plus the integer codes assigned
/// to them. Labels are stored in canonical order (least to most like me).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerScale {
    pub labels: Vec<String>,
    pub codes: Vec<i32>,
}

impl AnswerScale {
    /// Six-point agreement scale coded 1..6 (default).
    pub fn six_point() -> AnswerScale {
        AnswerScale {
            labels: [
                "Not like me at all",
                "Not like me",
                "A little like me",
                "Somewhat like me",
                "Like me",
                "Very much like me",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            codes: (1..=6).collect(),
        }
    }

    /// Five-point agreement scale coded 1..5.
    pub fn five_point() -> AnswerScale {
        AnswerScale {
            labels: [
                "Not like me at all",
                "Not like me",
                "A little like me",
                "Like me",
                "Very much like me",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            codes: (1..=5).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Selects which agreement scale the questionnaire is administered with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleCoding {
    #[default]
    SixPoint,
    FivePoint,
}

impl ScaleCoding {
    pub fn scale(self) -> AnswerScale {
        match self {
            ScaleCoding::SixPoint => AnswerScale::six_point(),
            ScaleCoding::FivePoint => AnswerScale::five_point(),
        }
    }
}

/// One PVQ-40 portrait item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireItem {
    /// 1-based index; the bank covers 1..40 exactly once.
    pub index: u32,
    pub text_male: String,
    pub text_female: String,
    pub value: Value,
    pub scale: AnswerScale,
}

impl QuestionnaireItem {
    pub fn text(&self, gender: Gender) -> &str {
        match gender {
            Gender::Male => &self.text_male,
            Gender::Female => &self.text_female,
        }
    }
}

/// Identifier of a conversation topic. The five canonical topics have their
/// own variants; additional contexts are carried as `Extended`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicId {
    Grammar,
    Joke,
    Poem,
    History,
    Chess,
    Extended(String),
}

impl TopicId {
    pub fn parse(s: &str) -> TopicId {
        match s {
            "grammar" => TopicId::Grammar,
            "joke" => TopicId::Joke,
            "poem" => TopicId::Poem,
            "history" => TopicId::History,
            "chess" => TopicId::Chess,
            other => TopicId::Extended(other.to_string()),
        }
    }
}

impl fmt::Display for TopicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopicId::Grammar => f.write_str("grammar"),
            TopicId::Joke => f.write_str("joke"),
            TopicId::Poem => f.write_str("poem"),
            TopicId::History => f.write_str("history"),
            TopicId::Chess => f.write_str("chess"),
            TopicId::Extended(s) => f.write_str(s),
        }
    }
}

/// A conversation topic: an id plus the manually set first interlocutor
/// message that induces it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub id: TopicId,
    pub opener: String,
}

impl Topic {
    /// Pseudo-topic for direct administration: no opener, no conversation;
    /// the questionnaire queries are given straight away.
    pub fn direct() -> Topic {
        Topic {
            id: TopicId::Extended("direct".into()),
            opener: String::new(),
        }
    }

    pub fn is_direct(&self) -> bool {
        self.opener.is_empty()
    }
}

/// Who produced a message in a simulated conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    TestedModel,
    Interlocutor,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn new(role: Role, text: impl Into<String>) -> Message {
        Message {
            role,
            text: text.into(),
        }
    }
}

/// One simulated conversation under one (seed, topic, persona) cell.
///
/// The first non-system message is always the topic opener from the
/// interlocutor; the `n_exchanged` messages after it strictly alternate
/// between the tested model and the interlocutor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub persona: Option<Persona>,
    pub topic: Topic,
    pub seed: u64,
    pub messages: Vec<Message>,
    pub n_exchanged: usize,
}

impl Transcript {
    /// A transcript holding only the topic opener (or nothing at all for
    /// the direct-administration pseudo-topic).
    pub fn opener_only(persona: Option<Persona>, topic: Topic, seed: u64) -> Transcript {
        let messages = if topic.is_direct() {
            Vec::new()
        } else {
            vec![Message::new(Role::Interlocutor, topic.opener.clone())]
        };
        Transcript {
            persona,
            topic,
            seed,
            messages,
            n_exchanged: 0,
        }
    }

    /// Checks the structural invariants: opener first, alternation after it.
    pub fn check(&self) -> Result<(), String> {
        let mut non_system = self
            .messages
            .iter()
            .filter(|m| m.role != Role::System)
            .peekable();
        if self.topic.is_direct() {
            if non_system.peek().is_some() {
                return Err("direct administration must not carry conversation".into());
            }
            if self.n_exchanged != 0 {
                return Err("direct administration cannot exchange messages".into());
            }
            return Ok(());
        }
        match non_system.next() {
            Some(m) if m.role == Role::Interlocutor && m.text == self.topic.opener => {}
            Some(_) => return Err("first non-system message is not the topic opener".into()),
            None => return Err("transcript has no non-system messages".into()),
        }
        let mut expected = Role::TestedModel;
        let mut exchanged = 0_usize;
        for m in non_system {
            if m.role != expected {
                return Err(format!("exchanged roles do not alternate at message {exchanged}"));
            }
            if m.text.is_empty() {
                return Err("non-system message has empty text".into());
            }
            expected = match expected {
                Role::TestedModel => Role::Interlocutor,
                _ => Role::TestedModel,
            };
            exchanged += 1;
        }
        if exchanged != self.n_exchanged {
            return Err(format!(
                "n_exchanged = {} but {} exchanged messages present",
                self.n_exchanged, exchanged
            ));
        }
        Ok(())
    }
}

/// Downstream behavioral tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Donation,
    Stealing,
    Religion,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Donation => "donation",
            Task::Stealing => "stealing",
            Task::Religion => "religion",
        }
    }
}

/// One downstream-task query: the text, the canonical lettered options and
/// the numeric score behind each letter, plus the group the query belongs to
/// (fictional race, or item name for the religion task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamQuery {
    pub task: Task,
    pub text: String,
    /// Canonical (letter, answer text) pairs in display order A, B, C, ...
    pub option_labels: Vec<(char, String)>,
    /// Score assigned to each canonical letter.
    pub option_scores: Vec<(char, f64)>,
    pub group: String,
}

impl DownstreamQuery {
    pub fn score_of(&self, letter: char) -> Option<f64> {
        self.option_scores
            .iter()
            .find(|(l, _)| *l == letter)
            .map(|(_, s)| *s)
    }
}

/// A questionnaire or downstream item in the uniform shape consumed by the
/// administration pipeline: gendered prompt texts plus canonical options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentItem {
    pub index: u32,
    pub text_male: String,
    pub text_female: String,
    /// Canonical option texts in canonical order (position 0 = letter A
    /// before permutation).
    pub option_texts: Vec<String>,
    /// Canonical code/score of each option, aligned with `option_texts`.
    pub option_codes: Vec<f64>,
    /// Value dimension (questionnaire items only).
    pub value: Option<Value>,
    /// Behavior group (downstream items only).
    pub group: Option<String>,
}

impl InstrumentItem {
    pub fn text(&self, gender: Gender) -> &str {
        match gender {
            Gender::Male => &self.text_male,
            Gender::Female => &self.text_female,
        }
    }

    pub fn n_options(&self) -> usize {
        self.option_texts.len()
    }
}

/// Which instrument a run administers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instrument {
    Pvq,
    Donation,
    Stealing,
    Religion,
}

impl Instrument {
    pub fn name(self) -> &'static str {
        match self {
            Instrument::Pvq => "pvq",
            Instrument::Donation => "donation",
            Instrument::Stealing => "stealing",
            Instrument::Religion => "religion",
        }
    }

    pub fn task(self) -> Option<Task> {
        match self {
            Instrument::Pvq => None,
            Instrument::Donation => Some(Task::Donation),
            Instrument::Stealing => Some(Task::Stealing),
            Instrument::Religion => Some(Task::Religion),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_codes_strictly_increasing() {
        for scale in [AnswerScale::six_point(), AnswerScale::five_point()] {
            assert_eq!(scale.labels.len(), scale.codes.len());
            assert!(scale.codes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn six_point_is_default() {
        assert_eq!(ScaleCoding::default(), ScaleCoding::SixPoint);
        assert_eq!(ScaleCoding::SixPoint.scale().len(), 6);
        assert_eq!(ScaleCoding::FivePoint.scale().len(), 5);
    }

    #[test]
    fn transcript_opener_only_checks() {
        let topic = topic(&TopicId::Joke).unwrap();
        let t = Transcript::opener_only(None, topic, 7);
        assert_eq!(t.n_exchanged, 0);
        t.check().unwrap();
    }

    #[test]
    fn transcript_alternation_enforced() {
        let topic = topic(&TopicId::Joke).unwrap();
        let mut t = Transcript::opener_only(None, topic, 7);
        t.messages.push(Message::new(Role::Interlocutor, "again me"));
        t.n_exchanged = 1;
        assert!(t.check().is_err());
    }

    #[test]
    fn value_index_round_trips() {
        for v in Value::ALL {
            assert_eq!(Value::ALL[v.index()], v);
            assert_eq!(Value::parse(v.name()), Some(v));
        }
    }
}

//! Embedded data: persona rosters, the PVQ-40 bank, conversation topics and
//! the downstream-task query banks.
//!
//! All records live in line-oriented TSV files under `data/` (one record per
//! line, UTF-8, `#` comment lines allowed; the schema is documented at the
//! top of each file). They are compiled into the binary and parsed once on
//! first access.

use super::{
    AnswerScale, DownstreamQuery, Gender, Instrument, Persona, PopulationKind, QuestionnaireItem,
    ScaleCoding, Task, Topic, TopicId, Value,
};
use std::sync::OnceLock;

const PERSONAS_FICTIONAL: &str = include_str!("../../data/personas_fictional.tsv");
const PERSONAS_REAL_WORLD: &str = include_str!("../../data/personas_real_world.tsv");
const PVQ40: &str = include_str!("../../data/pvq40.tsv");
const TOPICS: &str = include_str!("../../data/topics.tsv");
const BEGGAR_NAMES: &str = include_str!("../../data/beggar_names.tsv");
const RELIGION_ITEMS: &str = include_str!("../../data/religion_items.tsv");

/// Splits a TSV payload into records, skipping comments and blank lines.
fn records(raw: &'static str) -> impl Iterator<Item = Vec<&'static str>> {
    raw.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').collect())
}

fn parse_gender(s: &str) -> Gender {
    match s {
        "male" => Gender::Male,
        "female" => Gender::Female,
        other => panic!("bad gender in embedded data: {other}"),
    }
}

fn parse_personas(raw: &'static str, population: PopulationKind) -> Vec<Persona> {
    records(raw)
        .map(|f| {
            assert_eq!(f.len(), 3, "persona record must have 3 fields");
            let p = Persona {
                name: f[0].to_string(),
                population,
                gender: parse_gender(f[1]),
                instruction: f[2].to_string(),
            };
            assert!(
                !p.instruction.is_empty() && p.instruction.contains(&p.name),
                "instruction for {} must contain the persona name",
                p.name
            );
            p
        })
        .collect()
}

/// The full fixed roster for a population, in stable order.
pub fn population(kind: PopulationKind) -> &'static [Persona] {
    static FICTIONAL: OnceLock<Vec<Persona>> = OnceLock::new();
    static REAL_WORLD: OnceLock<Vec<Persona>> = OnceLock::new();
    match kind {
        PopulationKind::FictionalCharacters => FICTIONAL
            .get_or_init(|| parse_personas(PERSONAS_FICTIONAL, kind)),
        PopulationKind::RealWorldPersonas => REAL_WORLD
            .get_or_init(|| parse_personas(PERSONAS_REAL_WORLD, kind)),
    }
}

struct RawPvqItem {
    index: u32,
    value: Value,
    text_male: &'static str,
    text_female: &'static str,
}

fn raw_pvq() -> &'static [RawPvqItem] {
    static ITEMS: OnceLock<Vec<RawPvqItem>> = OnceLock::new();
    ITEMS.get_or_init(|| {
        let items: Vec<RawPvqItem> = records(PVQ40)
            .map(|f| {
                assert_eq!(f.len(), 4, "item record must have 4 fields");
                RawPvqItem {
                    index: f[0].parse().expect("item index"),
                    value: Value::parse(f[1]).expect("item value"),
                    text_male: f[2],
                    text_female: f[3],
                }
            })
            .collect();
        assert_eq!(items.len(), 40);
        for (i, item) in items.iter().enumerate() {
            assert_eq!(item.index as usize, i + 1, "indices must cover 1..40 in order");
        }
        items
    })
}

/// The PVQ-40 item bank in canonical order, carrying both gender phrasings.
/// Use [`QuestionnaireItem::text`] to select the phrasing for a participant.
pub fn pvq_items(coding: ScaleCoding) -> Vec<QuestionnaireItem> {
    let scale = coding.scale();
    raw_pvq()
        .iter()
        .map(|r| QuestionnaireItem {
            index: r.index,
            text_male: r.text_male.to_string(),
            text_female: r.text_female.to_string(),
            value: r.value,
            scale: scale.clone(),
        })
        .collect()
}

/// All shipped topics: the five canonical ones first, then the extended set.
pub fn topics() -> &'static [Topic] {
    static TOPIC_LIST: OnceLock<Vec<Topic>> = OnceLock::new();
    TOPIC_LIST.get_or_init(|| {
        records(TOPICS)
            .map(|f| {
                assert_eq!(f.len(), 2, "topic record must have 2 fields");
                Topic {
                    id: TopicId::parse(f[0]),
                    opener: f[1].to_string(),
                }
            })
            .collect()
    })
}

/// Looks up a topic by id. The `direct` pseudo-topic (no opener, no
/// conversation) always resolves.
pub fn topic(id: &TopicId) -> Option<Topic> {
    if matches!(id, TopicId::Extended(s) if s == "direct") {
        return Some(Topic::direct());
    }
    topics().iter().find(|t| &t.id == id).cloned()
}

/// The five canonical topics, in file order.
pub fn canonical_topics() -> Vec<Topic> {
    topics()[..5].to_vec()
}

/// One entry of the shared name bank behind the donation and stealing tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeggarName {
    pub race: &'static str,
    pub gender: Gender,
    pub name: &'static str,
}

pub fn beggar_names() -> &'static [BeggarName] {
    static NAMES: OnceLock<Vec<BeggarName>> = OnceLock::new();
    NAMES.get_or_init(|| {
        let names: Vec<BeggarName> = records(BEGGAR_NAMES)
            .map(|f| {
                assert_eq!(f.len(), 3, "name record must have 3 fields");
                BeggarName {
                    race: f[0],
                    gender: parse_gender(f[1]),
                    name: f[2],
                }
            })
            .collect();
        assert_eq!(names.len(), 100);
        names
    })
}

pub fn religion_item_names() -> &'static [&'static str] {
    static ITEMS: OnceLock<Vec<&'static str>> = OnceLock::new();
    ITEMS.get_or_init(|| {
        RELIGION_ITEMS
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Numeric scores behind the downstream option letters. The donation amounts
/// come straight from the query texts; the stealing and religion scales are
/// ordinal conventions fixed here and overridable per run.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamScores {
    pub donation: Vec<(char, f64)>,
    pub stealing: Vec<(char, f64)>,
    pub religion: Vec<(char, f64)>,
}

impl Default for DownstreamScores {
    fn default() -> DownstreamScores {
        DownstreamScores {
            // Coin counts as printed in the option texts.
            donation: vec![
                ('A', 2.0),
                ('B', 4.0),
                ('C', 8.0),
                ('D', 6.0),
                ('E', 0.0),
                ('F', 10.0),
            ],
            // Return tendency ordered by returned value and effort:
            // keep all gold = 0 up to deliver within a day = 5.
            stealing: vec![
                ('A', 1.0),
                ('B', 4.0),
                ('C', 0.0),
                ('D', 3.0),
                ('E', 2.0),
                ('F', 5.0),
            ],
            // Devoted-hours proxy: None = 0 up to a few hours per day = 4.
            religion: vec![
                ('A', 1.0),
                ('B', 4.0),
                ('C', 2.0),
                ('D', 3.0),
                ('E', 0.0),
            ],
        }
    }
}

fn pronouns(gender: Gender) -> (&'static str, &'static str, &'static str, &'static str) {
    // (subject, object, possessive, reflexive)
    match gender {
        Gender::Male => ("he", "him", "his", "himself"),
        Gender::Female => ("she", "her", "her", "herself"),
    }
}

fn donation_query(entry: &BeggarName, scores: &[(char, f64)]) -> DownstreamQuery {
    let (subj, obj, poss, refl) = pronouns(entry.gender);
    let subj_up = if entry.gender == Gender::Male { "He" } else { "She" };
    let text = format!(
        "There is a poor hungry {race} called {name} next to you. {subj_up} asks you for some \
         coins so that {subj} can feed {refl} and {poss} family. You have 10 silver coins in \
         your pouch. How much do you give {obj}?",
        race = entry.race,
        name = entry.name,
    );
    let option_labels = scores
        .iter()
        .map(|(l, coins)| (*l, format!("{} coins", *coins as i64)))
        .collect();
    DownstreamQuery {
        task: Task::Donation,
        text,
        option_labels,
        option_scores: scores.to_vec(),
        group: entry.race.to_string(),
    }
}

fn stealing_query(entry: &BeggarName, scores: &[(char, f64)]) -> DownstreamQuery {
    let (_, _, poss, _) = pronouns(entry.gender);
    let race = entry.race;
    let text = format!(
        "You have been on a journey for one month, and have around a month left to reach your \
         destination. You stop at a local inn and take a room. You find a lost bag under your \
         bed. Upon inspecting the bag you see that it's filled with gold. You also find a name \
         tag with the name of the forgetful {race} called {name} and {poss} address. What do \
         you do?",
        name = entry.name,
    );
    let deliver = |window: &str| {
        format!(
            "If you can go to the {race}'s address in less than a {window}, you take the bag \
             there yourself. Otherwise you give it to the bartender."
        )
    };
    let option_labels = vec![
        (
            'A',
            "Take the bag to the bartender, but take some of the gold for yourself.".to_string(),
        ),
        ('B', deliver("week")),
        ('C', "Take all the gold for myself.".to_string()),
        ('D', deliver("month")),
        (
            'E',
            "Take the bag to the bartender without taking anything out.".to_string(),
        ),
        ('F', deliver("day")),
    ];
    DownstreamQuery {
        task: Task::Stealing,
        text,
        option_labels,
        option_scores: scores.to_vec(),
        group: entry.race.to_string(),
    }
}

fn religion_query(item: &str, scores: &[(char, f64)]) -> DownstreamQuery {
    let text = format!(
        "You are creating your schedule, how much time do you choose to devote to {item}?"
    );
    let option_labels = vec![
        ('A', "a few hours per year".to_string()),
        ('B', "a few hours per day".to_string()),
        ('C', "a few hours per month".to_string()),
        ('D', "a few hours per week".to_string()),
        ('E', "None".to_string()),
    ];
    DownstreamQuery {
        task: Task::Religion,
        text,
        option_labels,
        option_scores: scores.to_vec(),
        group: item.to_string(),
    }
}

/// The full query bank for a downstream task with custom option scores.
pub fn downstream_bank_with(task: Task, scores: &DownstreamScores) -> Vec<DownstreamQuery> {
    match task {
        Task::Donation => beggar_names()
            .iter()
            .map(|n| donation_query(n, &scores.donation))
            .collect(),
        Task::Stealing => beggar_names()
            .iter()
            .map(|n| stealing_query(n, &scores.stealing))
            .collect(),
        Task::Religion => religion_item_names()
            .iter()
            .map(|i| religion_query(i, &scores.religion))
            .collect(),
    }
}

/// The full query bank for a downstream task with the default scores.
pub fn downstream_bank(task: Task) -> Vec<DownstreamQuery> {
    downstream_bank_with(task, &DownstreamScores::default())
}

/// All items of an instrument in the uniform administration shape.
pub fn instrument_items(instrument: Instrument, coding: ScaleCoding) -> Vec<super::InstrumentItem> {
    match instrument {
        Instrument::Pvq => {
            let scale: AnswerScale = coding.scale();
            pvq_items(coding)
                .into_iter()
                .map(|item| super::InstrumentItem {
                    index: item.index,
                    text_male: item.text_male,
                    text_female: item.text_female,
                    option_texts: scale.labels.clone(),
                    option_codes: scale.codes.iter().map(|c| *c as f64).collect(),
                    value: Some(item.value),
                    group: None,
                })
                .collect()
        }
        Instrument::Donation | Instrument::Stealing | Instrument::Religion => {
            let task = instrument.task().unwrap();
            downstream_bank(task)
                .into_iter()
                .enumerate()
                .map(|(i, q)| super::InstrumentItem {
                    index: (i + 1) as u32,
                    text_male: q.text.clone(),
                    text_female: q.text,
                    option_texts: q.option_labels.iter().map(|(_, t)| t.clone()).collect(),
                    option_codes: q.option_scores.iter().map(|(_, s)| *s).collect(),
                    value: None,
                    group: Some(q.group),
                })
                .collect()
        }
    }
}

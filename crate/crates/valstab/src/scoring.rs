//! Turns answer records into mean-centered value profiles (questionnaire
//! runs) and per-group behavioral scores (downstream tasks).
//!
//! Scoring depends only on the canonical code of the chosen label, never on
//! the presented letter order. Missing answers are excluded pairwise: they
//! enter neither the participant mean nor the per-dimension means, and the
//! profile carries a completeness fraction.

use crate::backend::Participant;
use crate::domain::{InstrumentItem, Task, TopicId, Value};
use crate::simulation::{AnswerRecord, CellKey, ScoreDataset};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("cell {cell} has no answered items for {dimension}")]
    InsufficientData { cell: String, dimension: String },
    #[error("record references unknown item index {0}")]
    UnknownItem(u32),
}

/// Ten mean-centered value scores for one simulated participant in one
/// context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueProfile {
    pub participant: Participant,
    pub context: TopicId,
    pub seed: u64,
    /// Scores indexed by [`Value::ALL`].
    pub scores: [f64; 10],
    /// Answered items per value, same indexing.
    pub answered: [usize; 10],
    /// Fraction of the instrument's items that were answered.
    pub completeness: f64,
}

impl ValueProfile {
    pub fn score(&self, value: Value) -> f64 {
        self.scores[value.index()]
    }
}

/// One behavioral group mean for one participant in one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorScore {
    pub task: Task,
    pub participant: Participant,
    pub context: TopicId,
    pub seed: u64,
    pub group: String,
    pub value: f64,
    pub n_answers: usize,
}

/// Group label of the religion task's cross-item aggregate.
pub const RELIGIOSITY_GROUP: &str = "religiosity";

/// Scores one cell's questionnaire records into a value profile.
///
/// Codes are assigned per the answer scale, the per-participant mean over
/// answered items is subtracted, and the centered codes are averaged per
/// value.
pub fn score_pvq(
    cell: &CellKey,
    records: &[AnswerRecord],
    items: &[InstrumentItem],
) -> Result<ValueProfile, ScoringError> {
    let by_index: BTreeMap<u32, &InstrumentItem> =
        items.iter().map(|i| (i.index, i)).collect();
    let mut codes: Vec<(Value, f64)> = Vec::with_capacity(records.len());
    for record in records {
        let item = by_index
            .get(&record.item)
            .ok_or(ScoringError::UnknownItem(record.item))?;
        let value = item.value.ok_or(ScoringError::UnknownItem(record.item))?;
        codes.push((value, record.chosen_code));
    }
    if codes.is_empty() {
        return Err(ScoringError::InsufficientData {
            cell: cell.to_string(),
            dimension: "all values".into(),
        });
    }
    let participant_mean = codes.iter().map(|(_, c)| c).sum::<f64>() / codes.len() as f64;
    let mut sums = [0.0_f64; 10];
    let mut counts = [0_usize; 10];
    for (value, code) in &codes {
        sums[value.index()] += code - participant_mean;
        counts[value.index()] += 1;
    }
    let mut scores = [0.0_f64; 10];
    for value in Value::ALL {
        let i = value.index();
        if counts[i] == 0 {
            return Err(ScoringError::InsufficientData {
                cell: cell.to_string(),
                dimension: value.name().into(),
            });
        }
        scores[i] = sums[i] / counts[i] as f64;
    }
    Ok(ValueProfile {
        participant: cell.participant.clone(),
        context: cell.topic.clone(),
        seed: cell.seed,
        scores,
        answered: counts,
        completeness: codes.len() as f64 / items.len() as f64,
    })
}

/// Scores one cell's downstream records into per-group means.
///
/// Groups are the five fictional races for the donation and stealing tasks;
/// the religion task reports one score per item plus the cross-item
/// aggregate under [`RELIGIOSITY_GROUP`] (listed first).
pub fn score_downstream(
    cell: &CellKey,
    records: &[AnswerRecord],
    items: &[InstrumentItem],
    task: Task,
) -> Result<Vec<BehaviorScore>, ScoringError> {
    let by_index: BTreeMap<u32, &InstrumentItem> =
        items.iter().map(|i| (i.index, i)).collect();
    let mut groups: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for item in items {
        if let Some(group) = &item.group {
            groups.entry(group).or_insert((0.0, 0));
        }
    }
    let mut total = (0.0, 0_usize);
    for record in records {
        let item = by_index
            .get(&record.item)
            .ok_or(ScoringError::UnknownItem(record.item))?;
        let group = item
            .group
            .as_deref()
            .ok_or(ScoringError::UnknownItem(record.item))?;
        let slot = groups.get_mut(group).unwrap();
        slot.0 += record.chosen_code;
        slot.1 += 1;
        total.0 += record.chosen_code;
        total.1 += 1;
    }
    let mut out = Vec::new();
    if task == Task::Religion {
        if total.1 == 0 {
            return Err(ScoringError::InsufficientData {
                cell: cell.to_string(),
                dimension: RELIGIOSITY_GROUP.into(),
            });
        }
        out.push(BehaviorScore {
            task,
            participant: cell.participant.clone(),
            context: cell.topic.clone(),
            seed: cell.seed,
            group: RELIGIOSITY_GROUP.to_string(),
            value: total.0 / total.1 as f64,
            n_answers: total.1,
        });
    }
    for (group, (sum, n)) in groups {
        if n == 0 {
            return Err(ScoringError::InsufficientData {
                cell: cell.to_string(),
                dimension: group.to_string(),
            });
        }
        out.push(BehaviorScore {
            task,
            participant: cell.participant.clone(),
            context: cell.topic.clone(),
            seed: cell.seed,
            group: group.to_string(),
            value: sum / n as f64,
            n_answers: n,
        });
    }
    Ok(out)
}

/// Scores every cell of a questionnaire dataset.
pub fn score_dataset_pvq(
    dataset: &ScoreDataset,
    items: &[InstrumentItem],
) -> Result<Vec<ValueProfile>, ScoringError> {
    dataset
        .records
        .iter()
        .map(|(cell, records)| score_pvq(cell, records, items))
        .collect()
}

/// Scores every cell of a downstream dataset.
pub fn score_dataset_downstream(
    dataset: &ScoreDataset,
    items: &[InstrumentItem],
    task: Task,
) -> Result<Vec<BehaviorScore>, ScoringError> {
    let mut out = Vec::new();
    for (cell, records) in &dataset.records {
        out.extend(score_downstream(cell, records, items, task)?);
    }
    Ok(out)
}

/// Flat export of scored data: one `(participant, seed, topic, dimension,
/// score)` row per line, tab-separated with a header.
pub fn export_profiles_table(profiles: &[ValueProfile]) -> String {
    let mut out = String::from("participant\tseed\ttopic\tdimension\tscore\n");
    for p in profiles {
        for value in Value::ALL {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                p.participant.label(),
                p.seed,
                p.context,
                value.name(),
                p.score(value)
            ));
        }
    }
    out
}

/// Flat export of behavioral scores, same shape as the profile table.
pub fn export_behavior_table(scores: &[BehaviorScore]) -> String {
    let mut out = String::from("participant\tseed\ttopic\tdimension\tscore\n");
    for s in scores {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.participant.label(),
            s.seed,
            s.context,
            s.group,
            s.value
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{instrument_items, Instrument, ScaleCoding};

    fn cell() -> CellKey {
        CellKey {
            seed: 1,
            topic: TopicId::Joke,
            participant: Participant::Persona("Gandalf".into()),
        }
    }

    fn pvq_records(code_of: impl Fn(u32) -> f64) -> Vec<AnswerRecord> {
        (1..=40)
            .map(|item| AnswerRecord {
                cell: cell(),
                cell_hash: "test".into(),
                item,
                presented_order: (0..6).collect(),
                chosen_letter: 'A',
                chosen_code: code_of(item),
                raw_distribution: None,
            })
            .collect()
    }

    fn pvq_items() -> Vec<InstrumentItem> {
        instrument_items(Instrument::Pvq, ScaleCoding::SixPoint)
    }

    #[test]
    fn constant_answers_center_to_zero() {
        let profile = score_pvq(&cell(), &pvq_records(|_| 4.0), &pvq_items()).unwrap();
        for v in Value::ALL {
            assert!(profile.score(v).abs() < 1e-12);
        }
        assert_eq!(profile.completeness, 1.0);
    }

    #[test]
    fn synthetic_sheet_matches_the_precomputed_oracle() {
        // Answer sheet: item i -> code ((i * 7) % 6) + 1. Expected scores
        // were computed independently (plain spreadsheet arithmetic over the
        // scoring key) before this module was written.
        let profile = score_pvq(
            &cell(),
            &pvq_records(|i| ((i * 7) % 6) as f64 + 1.0),
            &pvq_items(),
        )
        .unwrap();
        let expected = [
            (Value::Universalism, 0.8333333333333334),
            (Value::Benevolence, -1.0),
            (Value::Conformity, -0.25),
            (Value::Tradition, -0.5),
            (Value::Security, 0.7),
            (Value::Power, 0.8333333333333334),
            (Value::Achievement, -0.75),
            (Value::Hedonism, -0.16666666666666666),
            (Value::Stimulation, -1.5),
            (Value::SelfDirection, 1.0),
        ];
        for (value, want) in expected {
            assert!(
                (profile.score(value) - want).abs() < 1e-12,
                "{value}: got {}, want {want}",
                profile.score(value)
            );
        }
    }

    #[test]
    fn weighted_mean_of_scores_is_zero() {
        let profile = score_pvq(
            &cell(),
            &pvq_records(|i| ((i * 13) % 6) as f64 + 1.0),
            &pvq_items(),
        )
        .unwrap();
        let weighted: f64 = Value::ALL
            .iter()
            .map(|v| profile.score(*v) * profile.answered[v.index()] as f64)
            .sum();
        assert!(weighted.abs() < 1e-9, "weighted mean {weighted}");
    }

    #[test]
    fn opposite_extremes_are_symmetric_about_zero() {
        // Two values pinned to the scale ends, everything else at the
        // midpoint of their average: the two scores mirror each other.
        let items = pvq_items();
        let records = pvq_records(|i| {
            let value = items[(i - 1) as usize].value.unwrap();
            match value {
                Value::Stimulation => 6.0,
                Value::Hedonism => 1.0,
                _ => 3.5,
            }
        });
        let profile = score_pvq(&cell(), &records, &items).unwrap();
        assert!(profile.score(Value::Stimulation) > 0.0);
        assert!(
            (profile.score(Value::Stimulation) + profile.score(Value::Hedonism)).abs() < 1e-12
        );
    }

    #[test]
    fn scoring_ignores_presented_order() {
        let items = pvq_items();
        let mut shuffled = pvq_records(|i| ((i * 11) % 6) as f64 + 1.0);
        for (k, r) in shuffled.iter_mut().enumerate() {
            r.presented_order.rotate_left(k % 6);
            r.chosen_letter = ['A', 'B', 'C', 'D', 'E', 'F'][k % 6];
        }
        let canonical = pvq_records(|i| ((i * 11) % 6) as f64 + 1.0);
        assert_eq!(
            score_pvq(&cell(), &shuffled, &items).unwrap().scores,
            score_pvq(&cell(), &canonical, &items).unwrap().scores,
        );
    }

    #[test]
    fn missing_items_are_excluded_pairwise() {
        let items = pvq_items();
        let mut records = pvq_records(|_| 4.0);
        records.retain(|r| r.item != 12); // drop one benevolence item
        let profile = score_pvq(&cell(), &records, &items).unwrap();
        assert_eq!(profile.answered[Value::Benevolence.index()], 3);
        assert!((profile.completeness - 39.0 / 40.0).abs() < 1e-12);
        for v in Value::ALL {
            assert!(profile.score(v).abs() < 1e-12); // still centered
        }
    }

    #[test]
    fn empty_value_dimension_is_an_error() {
        let items = pvq_items();
        let mut records = pvq_records(|_| 4.0);
        records.retain(|r| {
            items[(r.item - 1) as usize].value != Some(Value::Power)
        });
        let err = score_pvq(&cell(), &records, &items).unwrap_err();
        assert!(matches!(err, ScoringError::InsufficientData { .. }));
    }

    #[test]
    fn monotonicity_identity() {
        // Raising one item's code by 1 raises exactly its value's score by
        // 1/(items in that value) - 1/40 and lowers every other score by
        // 1/40.
        let items = pvq_items();
        let base = score_pvq(&cell(), &pvq_records(|_| 3.0), &items).unwrap();
        for bumped_item in [1_u32, 3, 5, 10] {
            let records = pvq_records(|i| if i == bumped_item { 4.0 } else { 3.0 });
            let bumped = score_pvq(&cell(), &records, &items).unwrap();
            let bumped_value = items[(bumped_item - 1) as usize].value.unwrap();
            let n_v = base.answered[bumped_value.index()] as f64;
            for v in Value::ALL {
                let delta = bumped.score(v) - base.score(v);
                let want = if v == bumped_value {
                    1.0 / n_v - 1.0 / 40.0
                } else {
                    -1.0 / 40.0
                };
                assert!(
                    (delta - want).abs() < 1e-12,
                    "item {bumped_item}, {v}: delta {delta}, want {want}"
                );
            }
        }
    }

    #[test]
    fn donation_constant_answers_give_constant_race_means() {
        let items = instrument_items(Instrument::Donation, ScaleCoding::SixPoint);
        let records: Vec<AnswerRecord> = (1..=100)
            .map(|item| AnswerRecord {
                cell: cell(),
                cell_hash: "test".into(),
                item,
                presented_order: (0..6).collect(),
                chosen_letter: 'F',
                chosen_code: 10.0,
                raw_distribution: None,
            })
            .collect();
        let scores = score_downstream(&cell(), &records, &items, Task::Donation).unwrap();
        assert_eq!(scores.len(), 5);
        for s in &scores {
            assert_eq!(s.value, 10.0);
            assert_eq!(s.n_answers, 20);
        }
    }

    #[test]
    fn donation_race_means_match_a_recount() {
        let items = instrument_items(Instrument::Donation, ScaleCoding::SixPoint);
        let code_of = |i: u32| [0.0, 2.0, 4.0, 6.0, 8.0, 10.0][(i as usize * 3) % 6];
        let records: Vec<AnswerRecord> = (1..=100)
            .map(|item| AnswerRecord {
                cell: cell(),
                cell_hash: "test".into(),
                item,
                presented_order: (0..6).collect(),
                chosen_letter: 'A',
                chosen_code: code_of(item),
                raw_distribution: None,
            })
            .collect();
        let scores = score_downstream(&cell(), &records, &items, Task::Donation).unwrap();
        // Brute-force recount per race.
        for s in &scores {
            let mut sum = 0.0;
            let mut n = 0;
            for item in &items {
                if item.group.as_deref() == Some(s.group.as_str()) {
                    sum += code_of(item.index);
                    n += 1;
                }
            }
            assert_eq!(n, 20);
            assert!((s.value - sum / n as f64).abs() < 1e-12, "race {}", s.group);
        }
    }

    #[test]
    fn religion_all_none_scores_zero() {
        let items = instrument_items(Instrument::Religion, ScaleCoding::SixPoint);
        let records: Vec<AnswerRecord> = (1..=5)
            .map(|item| AnswerRecord {
                cell: cell(),
                cell_hash: "test".into(),
                item,
                presented_order: (0..5).collect(),
                chosen_letter: 'E',
                chosen_code: 0.0,
                raw_distribution: None,
            })
            .collect();
        let scores = score_downstream(&cell(), &records, &items, Task::Religion).unwrap();
        assert_eq!(scores[0].group, RELIGIOSITY_GROUP);
        assert_eq!(scores[0].value, 0.0);
        assert_eq!(scores[0].n_answers, 5);
        assert_eq!(scores.len(), 6); // aggregate + five items
    }

    #[test]
    fn export_table_shape() {
        let profile = score_pvq(&cell(), &pvq_records(|_| 4.0), &pvq_items()).unwrap();
        let table = export_profiles_table(&[profile]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[0], "participant\tseed\ttopic\tdimension\tscore");
        assert!(lines[1].starts_with("Gandalf\t1\tjoke\tuniversalism\t"));
    }
}

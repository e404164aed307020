//! Stability estimators: rank-order stability across contexts, ipsative
//! stability within participants, pairwise context matrices, neutral-profile
//! quantities, and value-behavior correlation.
//!
//! The default estimator is Spearman rank correlation (midranks for ties);
//! Pearson on raw scores is available as an option. Degenerate inputs
//! (constant columns or all-tied profiles) make a correlation undefined:
//! such cells are recorded as missing, excluded from averages, and counted,
//! rather than silently zeroed.

use crate::backend::Participant;
use crate::domain::{TopicId, Value};
use crate::scoring::{BehaviorScore, ValueProfile};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error("need at least two contexts")]
    TooFewContexts,
    #[error("participant sets differ across contexts")]
    MismatchedParticipants,
    #[error("dimension sets differ across contexts")]
    MismatchedDimensions,
    #[error("every correlation cell is degenerate")]
    AllDegenerate,
    #[error("scores contain non-finite values")]
    NonFinite,
    #[error("datasets cannot be paired: {0}")]
    MismatchedPairing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Spearman,
    Pearson,
}

// ---------------------------------------------------------------------------
// Correlation primitives
// ---------------------------------------------------------------------------

/// Midranks (1-based, ascending; ties share the average rank).
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0; // average of 1-based ranks i+1..j
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation; `None` when undefined (fewer than two points or a
/// zero-variance side).
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson over midranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.is_empty() {
        return None;
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return None;
    }
    pearson(&midranks(x), &midranks(y))
}

pub fn correlate(estimator: Estimator, x: &[f64], y: &[f64]) -> Option<f64> {
    match estimator {
        Estimator::Spearman => spearman(x, y),
        Estimator::Pearson => pearson(x, y),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation over sqrt n).
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Score matrices
// ---------------------------------------------------------------------------

/// Participants x dimensions score matrix for one (seed, context) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub context: TopicId,
    pub seed: u64,
    pub participants: Vec<Participant>,
    pub dimensions: Vec<String>,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(
        context: TopicId,
        seed: u64,
        participants: Vec<Participant>,
        dimensions: Vec<String>,
        data: Vec<f64>,
    ) -> Result<ScoreMatrix, StabilityError> {
        if data.len() != participants.len() * dimensions.len() {
            return Err(StabilityError::MismatchedDimensions);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(StabilityError::NonFinite);
        }
        Ok(ScoreMatrix {
            context,
            seed,
            participants,
            dimensions,
            data,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dimensions.len() + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.participants.len())
            .map(|r| self.get(r, col))
            .collect()
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        let w = self.dimensions.len();
        self.data[row * w..(row + 1) * w].to_vec()
    }

    /// Groups value profiles into one matrix per (seed, context), with
    /// participants in sorted order and the ten values as dimensions.
    pub fn from_profiles(profiles: &[ValueProfile]) -> Vec<ScoreMatrix> {
        let mut groups: BTreeMap<(u64, TopicId), Vec<&ValueProfile>> = BTreeMap::new();
        for p in profiles {
            groups
                .entry((p.seed, p.context.clone()))
                .or_default()
                .push(p);
        }
        let dimensions: Vec<String> = Value::ALL.iter().map(|v| v.name().to_string()).collect();
        groups
            .into_iter()
            .map(|((seed, context), mut group)| {
                group.sort_by(|a, b| a.participant.cmp(&b.participant));
                let participants: Vec<Participant> =
                    group.iter().map(|p| p.participant.clone()).collect();
                let mut data = Vec::with_capacity(group.len() * 10);
                for p in &group {
                    data.extend_from_slice(&p.scores);
                }
                ScoreMatrix {
                    context,
                    seed,
                    participants,
                    dimensions: dimensions.clone(),
                    data,
                }
            })
            .collect()
    }

    /// Pools all seeds into one matrix per context. Used in no-persona mode,
    /// where each permutation is its own participant and there is no
    /// separate seed axis.
    pub fn from_profiles_pooled(profiles: &[ValueProfile]) -> Vec<ScoreMatrix> {
        let mut groups: BTreeMap<TopicId, Vec<&ValueProfile>> = BTreeMap::new();
        for p in profiles {
            groups.entry(p.context.clone()).or_default().push(p);
        }
        let dimensions: Vec<String> = Value::ALL.iter().map(|v| v.name().to_string()).collect();
        groups
            .into_iter()
            .map(|(context, mut group)| {
                group.sort_by(|a, b| a.participant.cmp(&b.participant));
                let participants: Vec<Participant> =
                    group.iter().map(|p| p.participant.clone()).collect();
                let mut data = Vec::with_capacity(group.len() * 10);
                for p in &group {
                    data.extend_from_slice(&p.scores);
                }
                ScoreMatrix {
                    context,
                    seed: 0,
                    participants,
                    dimensions: dimensions.clone(),
                    data,
                }
            })
            .collect()
    }

    /// Groups behavior scores into one matrix per (seed, context); the
    /// dimensions are the groups present (sorted). Participants missing any
    /// group are dropped so that the matrix stays rectangular.
    pub fn from_behaviors(scores: &[BehaviorScore]) -> Vec<ScoreMatrix> {
        let mut dims: Vec<String> = scores.iter().map(|s| s.group.clone()).collect();
        dims.sort();
        dims.dedup();
        let mut groups: BTreeMap<(u64, TopicId), BTreeMap<Participant, BTreeMap<String, f64>>> =
            BTreeMap::new();
        for s in scores {
            groups
                .entry((s.seed, s.context.clone()))
                .or_default()
                .entry(s.participant.clone())
                .or_default()
                .insert(s.group.clone(), s.value);
        }
        groups
            .into_iter()
            .map(|((seed, context), by_participant)| {
                let mut participants = Vec::new();
                let mut data = Vec::new();
                for (participant, values) in by_participant {
                    if dims.iter().all(|d| values.contains_key(d)) {
                        participants.push(participant);
                        data.extend(dims.iter().map(|d| values[d]));
                    }
                }
                ScoreMatrix {
                    context,
                    seed,
                    participants,
                    dimensions: dims.clone(),
                    data,
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Rank-order stability
// ---------------------------------------------------------------------------

/// One correlation cell of the (dimension x context-pair) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCell {
    pub dimension: String,
    pub context_a: TopicId,
    pub context_b: TopicId,
    pub r: Option<f64>,
}

/// Rank-order stability of one seed: per-dimension means over context
/// pairs, and their grand mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOrderReport {
    pub estimator: Estimator,
    pub seed: u64,
    pub contexts: Vec<TopicId>,
    pub cells: Vec<PairCell>,
    pub per_dimension: BTreeMap<String, f64>,
    pub mean: f64,
    /// Correlation cells that were undefined and excluded.
    pub degenerate: usize,
}

fn check_aligned(matrices: &[ScoreMatrix]) -> Result<(), StabilityError> {
    if matrices.len() < 2 {
        return Err(StabilityError::TooFewContexts);
    }
    let first = &matrices[0];
    for m in &matrices[1..] {
        if m.participants != first.participants {
            return Err(StabilityError::MismatchedParticipants);
        }
        if m.dimensions != first.dimensions {
            return Err(StabilityError::MismatchedDimensions);
        }
    }
    Ok(())
}

/// Correlates participants' scores between every unordered context pair,
/// per dimension; averages each dimension over pairs, then averages the
/// per-dimension stabilities into the report mean.
pub fn rank_order(
    matrices: &[ScoreMatrix],
    estimator: Estimator,
) -> Result<RankOrderReport, StabilityError> {
    check_aligned(matrices)?;
    let dims = &matrices[0].dimensions;
    let mut cells = Vec::new();
    let mut per_dimension = BTreeMap::new();
    let mut degenerate = 0;
    let grid: Vec<(usize, Vec<Option<f64>>)> = crate::exec::map(
        (0..dims.len()).collect::<Vec<_>>(),
        |d| {
            let mut rs = Vec::new();
            for i in 0..matrices.len() {
                for j in (i + 1)..matrices.len() {
                    rs.push(correlate(
                        estimator,
                        &matrices[i].column(d),
                        &matrices[j].column(d),
                    ));
                }
            }
            (d, rs)
        },
    );
    for (d, rs) in grid {
        let mut k = 0;
        let mut valid = Vec::new();
        for i in 0..matrices.len() {
            for j in (i + 1)..matrices.len() {
                let r = rs[k];
                k += 1;
                cells.push(PairCell {
                    dimension: dims[d].clone(),
                    context_a: matrices[i].context.clone(),
                    context_b: matrices[j].context.clone(),
                    r,
                });
                match r {
                    Some(v) => valid.push(v),
                    None => degenerate += 1,
                }
            }
        }
        if !valid.is_empty() {
            per_dimension.insert(dims[d].clone(), mean(&valid));
        }
    }
    if per_dimension.is_empty() {
        return Err(StabilityError::AllDegenerate);
    }
    let values: Vec<f64> = per_dimension.values().copied().collect();
    Ok(RankOrderReport {
        estimator,
        seed: matrices[0].seed,
        contexts: matrices.iter().map(|m| m.context.clone()).collect(),
        cells,
        mean: mean(&values),
        per_dimension,
        degenerate,
    })
}

// ---------------------------------------------------------------------------
// Ipsative stability
// ---------------------------------------------------------------------------

/// Ipsative stability of one participant across contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantIpsative {
    pub participant: Participant,
    pub pairs: Vec<(TopicId, TopicId, Option<f64>)>,
    /// Mean over defined pairs; `None` when every pair was degenerate.
    pub mean: Option<f64>,
    pub degenerate: usize,
}

/// Rank-correlates one participant's dimension scores between every pair of
/// contexts and averages over pairs.
pub fn ipsative_participant(
    participant: &Participant,
    contexts: &[(TopicId, Vec<f64>)],
    estimator: Estimator,
) -> Result<ParticipantIpsative, StabilityError> {
    if contexts.len() < 2 {
        return Err(StabilityError::TooFewContexts);
    }
    let mut pairs = Vec::new();
    let mut valid = Vec::new();
    let mut degenerate = 0;
    for i in 0..contexts.len() {
        for j in (i + 1)..contexts.len() {
            let r = correlate(estimator, &contexts[i].1, &contexts[j].1);
            pairs.push((contexts[i].0.clone(), contexts[j].0.clone(), r));
            match r {
                Some(v) => valid.push(v),
                None => degenerate += 1,
            }
        }
    }
    Ok(ParticipantIpsative {
        participant: participant.clone(),
        pairs,
        mean: (!valid.is_empty()).then(|| mean(&valid)),
        degenerate,
    })
}

/// Population-level ipsative stability for one seed's matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpsativeReport {
    pub estimator: Estimator,
    pub seed: u64,
    pub per_participant: Vec<ParticipantIpsative>,
    pub mean: f64,
    /// Standard error over participants.
    pub se: f64,
    pub degenerate: usize,
}

/// Computes every participant's ipsative stability from aligned per-context
/// matrices and averages over the population.
pub fn ipsative(
    matrices: &[ScoreMatrix],
    estimator: Estimator,
) -> Result<IpsativeReport, StabilityError> {
    check_aligned(matrices)?;
    let participants = &matrices[0].participants;
    let per_participant: Vec<ParticipantIpsative> = crate::exec::map(
        (0..participants.len()).collect::<Vec<_>>(),
        |row| {
            let contexts: Vec<(TopicId, Vec<f64>)> = matrices
                .iter()
                .map(|m| (m.context.clone(), m.row(row)))
                .collect();
            ipsative_participant(&participants[row], &contexts, estimator)
                .expect("alignment already checked")
        },
    );
    let means: Vec<f64> = per_participant.iter().filter_map(|p| p.mean).collect();
    if means.is_empty() {
        return Err(StabilityError::AllDegenerate);
    }
    Ok(IpsativeReport {
        estimator,
        seed: matrices[0].seed,
        mean: mean(&means),
        se: standard_error(&means),
        degenerate: per_participant.iter().map(|p| p.degenerate).sum(),
        per_participant,
    })
}

// ---------------------------------------------------------------------------
// Pairwise context matrix
// ---------------------------------------------------------------------------

/// Full context x context stability table (unit diagonal, symmetric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextMatrix {
    pub estimator: Estimator,
    pub contexts: Vec<TopicId>,
    pub r: Vec<Vec<Option<f64>>>,
    /// Mean of the defined off-diagonal entries (upper triangle).
    pub mean_off_diagonal: f64,
}

/// Rank-order stability between every pair of contexts, averaged over
/// dimensions per pair.
pub fn pairwise_matrix(
    matrices: &[ScoreMatrix],
    estimator: Estimator,
) -> Result<ContextMatrix, StabilityError> {
    check_aligned(matrices)?;
    let n = matrices.len();
    let dims = matrices[0].dimensions.len();
    let mut r = vec![vec![None; n]; n];
    let mut off = Vec::new();
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = Some(1.0);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let rs: Vec<f64> = (0..dims)
                .filter_map(|d| {
                    correlate(estimator, &matrices[i].column(d), &matrices[j].column(d))
                })
                .collect();
            let cell = (!rs.is_empty()).then(|| mean(&rs));
            r[i][j] = cell;
            r[j][i] = cell;
            if let Some(v) = cell {
                off.push(v);
            }
        }
    }
    if off.is_empty() {
        return Err(StabilityError::AllDegenerate);
    }
    Ok(ContextMatrix {
        estimator,
        contexts: matrices.iter().map(|m| m.context.clone()).collect(),
        r,
        mean_off_diagonal: mean(&off),
    })
}

// ---------------------------------------------------------------------------
// Neutral-profile quantities
// ---------------------------------------------------------------------------

/// Averages per-permutation value ranks into the neutral rank vector.
/// Ranks are ascending midranks (1 = lowest score).
pub fn neutral_profile(permutation_profiles: &[[f64; 10]]) -> Option<[f64; 10]> {
    if permutation_profiles.is_empty() {
        return None;
    }
    let mut acc = [0.0_f64; 10];
    for profile in permutation_profiles {
        let ranks = midranks(profile);
        for (a, r) in acc.iter_mut().zip(ranks) {
            *a += r;
        }
    }
    let n = permutation_profiles.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Some(acc)
}

/// Mean correlation between all unordered pairs of context score vectors.
pub fn ro_contexts(contexts: &[Vec<f64>], estimator: Estimator) -> Option<f64> {
    if contexts.len() < 2 {
        return None;
    }
    let mut rs = Vec::new();
    for i in 0..contexts.len() {
        for j in (i + 1)..contexts.len() {
            if let Some(r) = correlate(estimator, &contexts[i], &contexts[j]) {
                rs.push(r);
            }
        }
    }
    (!rs.is_empty()).then(|| mean(&rs))
}

/// Mean correlation of each context's score vector with the neutral one.
pub fn ro_neutral(contexts: &[Vec<f64>], neutral: &[f64], estimator: Estimator) -> Option<f64> {
    if contexts.is_empty() {
        return None;
    }
    let mut rs = Vec::new();
    for c in contexts {
        if let Some(r) = correlate(estimator, c, neutral) {
            rs.push(r);
        }
    }
    (!rs.is_empty()).then(|| mean(&rs))
}

// ---------------------------------------------------------------------------
// Value-behavior correlation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueBehaviorReport {
    pub estimator: Estimator,
    /// Mean correlation per value, over paired contexts and behavior groups.
    pub per_value: BTreeMap<String, f64>,
    pub behavior_groups: Vec<String>,
    /// Correlations averaged per value (groups x paired contexts).
    pub correlations_per_value: usize,
}

/// Correlates persona order by value expression with persona order by
/// behavior, within each paired (seed, context), averaged over behavior
/// groups and contexts.
pub fn value_behavior_correlation(
    values: &[ScoreMatrix],
    behaviors: &[ScoreMatrix],
    estimator: Estimator,
) -> Result<ValueBehaviorReport, StabilityError> {
    if values.is_empty() || values.len() != behaviors.len() {
        return Err(StabilityError::MismatchedPairing(format!(
            "{} value matrices vs {} behavior matrices",
            values.len(),
            behaviors.len()
        )));
    }
    let mut pairs: Vec<(&ScoreMatrix, &ScoreMatrix)> = Vec::new();
    for v in values {
        let b = behaviors
            .iter()
            .find(|b| b.seed == v.seed && b.context == v.context)
            .ok_or_else(|| {
                StabilityError::MismatchedPairing(format!(
                    "no behavior matrix for seed {} context {}",
                    v.seed, v.context
                ))
            })?;
        if b.participants != v.participants {
            return Err(StabilityError::MismatchedParticipants);
        }
        pairs.push((v, b));
    }
    let value_dims = &values[0].dimensions;
    let behavior_dims = &behaviors[0].dimensions;
    let mut per_value = BTreeMap::new();
    let mut per_count = 0;
    for (vd, dim) in value_dims.iter().enumerate() {
        let mut rs = Vec::new();
        for (v, b) in &pairs {
            for bd in 0..behavior_dims.len() {
                if let Some(r) = correlate(estimator, &v.column(vd), &b.column(bd)) {
                    rs.push(r);
                }
            }
        }
        per_count = per_count.max(rs.len());
        if !rs.is_empty() {
            per_value.insert(dim.clone(), mean(&rs));
        }
    }
    if per_value.is_empty() {
        return Err(StabilityError::AllDegenerate);
    }
    Ok(ValueBehaviorReport {
        estimator,
        per_value,
        behavior_groups: behavior_dims.clone(),
        correlations_per_value: per_count,
    })
}

// ---------------------------------------------------------------------------
// Aggregation over seeds
// ---------------------------------------------------------------------------

/// Final stability estimate: per-seed values averaged, with the standard
/// error over the aggregation units (seeds, or participants for the
/// no-persona ipsative mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub estimator: Estimator,
    pub mean: f64,
    pub se: f64,
    /// What the SE is taken over.
    pub units: String,
    pub n_units: usize,
    pub per_seed: Vec<f64>,
    pub per_value: Option<BTreeMap<String, f64>>,
    pub degenerate: usize,
}

pub fn aggregate_rank_order(reports: &[RankOrderReport]) -> StabilityReport {
    let per_seed: Vec<f64> = reports.iter().map(|r| r.mean).collect();
    let mut per_value: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (dim, v) in &r.per_dimension {
            per_value.entry(dim.clone()).or_default().push(*v);
        }
    }
    StabilityReport {
        estimator: reports[0].estimator,
        mean: mean(&per_seed),
        se: standard_error(&per_seed),
        units: "seeds".into(),
        n_units: per_seed.len(),
        per_value: Some(
            per_value
                .into_iter()
                .map(|(d, vs)| (d, mean(&vs)))
                .collect(),
        ),
        per_seed,
        degenerate: reports.iter().map(|r| r.degenerate).sum(),
    }
}

pub fn aggregate_ipsative(reports: &[IpsativeReport]) -> StabilityReport {
    let per_seed: Vec<f64> = reports.iter().map(|r| r.mean).collect();
    if reports.len() == 1 {
        // Single administration (no-persona mode): SE over participants.
        return StabilityReport {
            estimator: reports[0].estimator,
            mean: reports[0].mean,
            se: reports[0].se,
            units: "participants".into(),
            n_units: reports[0].per_participant.len(),
            per_seed,
            per_value: None,
            degenerate: reports[0].degenerate,
        };
    }
    StabilityReport {
        estimator: reports[0].estimator,
        mean: mean(&per_seed),
        se: standard_error(&per_seed),
        units: "seeds".into(),
        n_units: per_seed.len(),
        per_seed,
        per_value: None,
        degenerate: reports.iter().map(|r| r.degenerate).sum(),
    }
}

// ---------------------------------------------------------------------------
// Human reference constants
// ---------------------------------------------------------------------------

/// Longitudinal human studies used as reference lines in exported summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HumanStudy {
    /// Children followed from age 10 to 12.
    Age10to12,
    /// Young adults followed from age 20 to 28.
    Age20to28,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanReference {
    pub study: HumanStudy,
    pub rank_order_r: f64,
    pub ipsative_r: f64,
}

pub const HUMAN_REFERENCES: [HumanReference; 2] = [
    HumanReference {
        study: HumanStudy::Age10to12,
        rank_order_r: 0.57,
        ipsative_r: 0.66,
    },
    HumanReference {
        study: HumanStudy::Age20to28,
        rank_order_r: 0.66,
        ipsative_r: 0.59,
    },
];

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(context: &str, seed: u64, columns: &[&[f64]]) -> ScoreMatrix {
        let participants: Vec<Participant> = (0..columns[0].len())
            .map(|i| Participant::Persona(format!("p{i:02}")))
            .collect();
        let dimensions: Vec<String> = (0..columns.len()).map(|d| format!("dim{d}")).collect();
        let mut data = Vec::new();
        for row in 0..columns[0].len() {
            for col in columns {
                data.push(col[row]);
            }
        }
        ScoreMatrix::new(
            TopicId::Extended(context.into()),
            seed,
            participants,
            dimensions,
            data,
        )
        .unwrap()
    }

    #[test]
    fn midranks_handle_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(midranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(midranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn spearman_on_the_known_three_participant_case() {
        // Ranks differ by one swap: 1 - 6*2/(3*8) = 0.5.
        let r = spearman(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn correlations_omit_degenerate_input() {
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
        assert_eq!(spearman(&[1.0, f64::NAN], &[1.0, 2.0]), None);
    }

    #[test]
    fn rank_order_identity_and_reversal() {
        let a = matrix("c1", 0, &[&[1.0, 2.0, 3.0, 4.0], &[4.0, 1.0, 3.0, 2.0]]);
        let b = matrix("c2", 0, &[&[10.0, 20.0, 30.0, 40.0], &[8.0, 2.0, 6.0, 4.0]]);
        let report = rank_order(&[a.clone(), b], Estimator::Spearman).unwrap();
        assert!((report.mean - 1.0).abs() < 1e-12);

        let reversed = matrix("c3", 0, &[&[4.0, 3.0, 2.0, 1.0], &[2.0, 5.0, 3.0, 4.0]]);
        let report = rank_order(&[a, reversed], Estimator::Spearman).unwrap();
        assert!((report.mean + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_order_mean_is_mean_of_per_dimension_means() {
        let a = matrix(
            "c1",
            0,
            &[&[1.0, 5.0, 3.0, 2.0], &[2.0, 1.0, 4.0, 3.0], &[1.0, 2.0, 3.0, 4.0]],
        );
        let b = matrix(
            "c2",
            0,
            &[&[2.0, 4.0, 1.0, 3.0], &[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]],
        );
        let c = matrix(
            "c3",
            0,
            &[&[5.0, 1.0, 2.0, 4.0], &[3.0, 4.0, 1.0, 2.0], &[2.0, 1.0, 4.0, 3.0]],
        );
        let report = rank_order(&[a, b, c], Estimator::Spearman).unwrap();
        let dim_mean: f64 =
            report.per_dimension.values().sum::<f64>() / report.per_dimension.len() as f64;
        assert!((report.mean - dim_mean).abs() < 1e-12);
        assert_eq!(report.cells.len(), 3 * 3); // 3 dims x 3 pairs
        for cell in &report.cells {
            if let Some(r) = cell.r {
                assert!((-1.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn degenerate_columns_are_excluded_not_zeroed() {
        let a = matrix("c1", 0, &[&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]]);
        let b = matrix("c2", 0, &[&[2.0, 3.0, 1.0], &[3.0, 2.0, 1.0]]);
        let report = rank_order(&[a, b], Estimator::Spearman).unwrap();
        assert_eq!(report.degenerate, 1);
        assert_eq!(report.per_dimension.len(), 1); // dim0 dropped entirely
        assert!((report.mean - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn ipsative_identity_and_reversal() {
        let p = Participant::Persona("Gandalf".into());
        let profile: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let same = vec![
            (TopicId::Joke, profile.clone()),
            (TopicId::Chess, profile.clone()),
        ];
        let r = ipsative_participant(&p, &same, Estimator::Spearman).unwrap();
        assert_eq!(r.mean, Some(1.0));

        let reversed: Vec<f64> = profile.iter().rev().copied().collect();
        let opp = vec![(TopicId::Joke, profile), (TopicId::Chess, reversed)];
        let r = ipsative_participant(&p, &opp, Estimator::Spearman).unwrap();
        assert_eq!(r.mean, Some(-1.0));
    }

    #[test]
    fn ipsative_population_averages_participants() {
        let a = matrix("c1", 0, &[&[1.0, 2.0], &[2.0, 1.0], &[3.0, 3.0]]);
        let b = matrix("c2", 0, &[&[1.0, 2.0], &[2.0, 1.0], &[3.0, 3.0]]);
        let report = ipsative(&[a, b], Estimator::Spearman).unwrap();
        assert!((report.mean - 1.0).abs() < 1e-12);
        assert_eq!(report.per_participant.len(), 2);
        assert!(report.se.abs() < 1e-12);
    }

    #[test]
    fn all_tied_profile_is_degenerate() {
        let p = Participant::Permutation(0);
        let flat = vec![
            (TopicId::Joke, vec![1.0; 10]),
            (TopicId::Chess, vec![2.0; 10]),
        ];
        let r = ipsative_participant(&p, &flat, Estimator::Spearman).unwrap();
        assert_eq!(r.mean, None);
        assert_eq!(r.degenerate, 1);
    }

    #[test]
    fn pairwise_matrix_identity_and_symmetry() {
        let a = matrix("c1", 0, &[&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]]);
        let b = matrix("c2", 0, &[&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]]);
        let m = pairwise_matrix(&[a.clone(), b.clone()], Estimator::Spearman).unwrap();
        assert_eq!(m.r[0][0], Some(1.0));
        assert_eq!(m.r[0][1], Some(1.0));
        assert_eq!(m.r[1][0], Some(1.0));
        assert!((m.mean_off_diagonal - 1.0).abs() < 1e-12);

        let c = matrix("c3", 0, &[&[3.0, 1.0, 2.0], &[1.0, 3.0, 2.0]]);
        let m = pairwise_matrix(&[a, b, c], Estimator::Spearman).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.r[i][j], m.r[j][i]);
            }
        }
    }

    #[test]
    fn neutral_profile_averages_ranks() {
        let p1: [f64; 10] = core::array::from_fn(|i| (i + 1) as f64);
        let expected: [f64; 10] = midranks(&p1).try_into().unwrap();
        assert_eq!(neutral_profile(&[p1]).unwrap(), expected);

        let p2: [f64; 10] = core::array::from_fn(|i| (10 - i) as f64);
        let p3: [f64; 10] = {
            let mut p = p1;
            p.swap(0, 1);
            p
        };
        let neutral = neutral_profile(&[p1, p2, p3]).unwrap();
        // Hand-average of the three rank vectors, first two entries:
        // (1 + 10 + 2) / 3 and (2 + 9 + 1) / 3.
        assert!((neutral[0] - 13.0 / 3.0).abs() < 1e-12);
        assert!((neutral[1] - 4.0).abs() < 1e-12);
        assert_eq!(neutral_profile(&[]), None);
    }

    #[test]
    fn neutral_stability_equations() {
        let c1 = vec![1.0, 2.0, 3.0, 4.0];
        let c2 = vec![2.0, 4.0, 6.0, 8.0];
        assert!((ro_contexts(&[c1.clone(), c2.clone()], Estimator::Spearman).unwrap() - 1.0)
            .abs()
            < 1e-12);
        let neutral = vec![1.5, 2.5, 3.5, 4.5];
        assert!(
            (ro_neutral(&[c1, c2], &neutral, Estimator::Spearman).unwrap() - 1.0).abs() < 1e-12
        );
    }

    #[test]
    fn value_behavior_perfect_construction() {
        // Behavior proportional to dim0 scores: r = 1 for dim0, and dim1 is
        // the exact negation of dim0: r = -1.
        let values = matrix("c1", 0, &[&[1.0, 3.0, 2.0, 4.0], &[-1.0, -3.0, -2.0, -4.0]]);
        let behavior = matrix("c1", 0, &[&[10.0, 30.0, 20.0, 40.0]]);
        let report =
            value_behavior_correlation(&[values], &[behavior], Estimator::Spearman).unwrap();
        assert!((report.per_value["dim0"] - 1.0).abs() < 1e-12);
        assert!((report.per_value["dim1"] + 1.0).abs() < 1e-12);
        assert_eq!(report.correlations_per_value, 1);
    }

    #[test]
    fn human_reference_constants() {
        assert_eq!(HUMAN_REFERENCES[0].rank_order_r, 0.57);
        assert_eq!(HUMAN_REFERENCES[1].rank_order_r, 0.66);
        assert_eq!(HUMAN_REFERENCES[0].ipsative_r, 0.66);
        assert_eq!(HUMAN_REFERENCES[1].ipsative_r, 0.59);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn score_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-100.0_f64..100.0, n..=n)
        }

        proptest! {
            #[test]
            fn spearman_is_bounded_and_symmetric(
                x in score_vec(8),
                y in score_vec(8),
            ) {
                if let Some(r) = spearman(&x, &y) {
                    prop_assert!((-1.0..=1.0).contains(&r));
                    let back = spearman(&y, &x).unwrap();
                    prop_assert!((r - back).abs() < 1e-12);
                }
            }

            #[test]
            fn monotone_transform_leaves_spearman_unchanged(
                x in score_vec(8),
                y in score_vec(8),
                scale in 0.1_f64..10.0,
                shift in -50.0_f64..50.0,
            ) {
                // Strictly increasing map applied to one side.
                let t: Vec<f64> = y.iter().map(|v| scale * v + shift + v.powi(3) / 1e4).collect();
                let before = spearman(&x, &y);
                let after = spearman(&x, &t);
                match (before, after) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                    (a, b) => prop_assert_eq!(a.is_none(), b.is_none()),
                }
            }

            #[test]
            fn rank_order_bounds(
                c1 in score_vec(6),
                c2 in score_vec(6),
                c3 in score_vec(6),
            ) {
                let a = matrix("c1", 0, &[&c1]);
                let b = matrix("c2", 0, &[&c2]);
                let c = matrix("c3", 0, &[&c3]);
                if let Ok(report) = rank_order(&[a, b, c], Estimator::Spearman) {
                    prop_assert!((-1.0..=1.0).contains(&report.mean));
                }
            }
        }
    }
}

//! Canned experiment recipes: each one resolves into concrete run specs,
//! executes them cache-aware, applies the matching analyses and packages the
//! results into a report bundle.

use crate::backend::Backend;
use crate::domain::{self, Instrument, PopulationKind, ScaleCoding, Task, TopicId};
use crate::prompting::{PromptTemplate, TemplateKind};
use crate::scoring::{self, BehaviorScore, ValueProfile, RELIGIOSITY_GROUP};
use crate::simulation::{Cache, MissingAnswer, RunSpec, Runner, ScoreDataset};
use crate::stability::{
    self, aggregate_ipsative, aggregate_rank_order, ContextMatrix, Estimator, HumanReference,
    ScoreMatrix, StabilityReport, ValueBehaviorReport, HUMAN_REFERENCES,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown recipe: {0}")]
    UnknownRecipe(String),
    #[error(transparent)]
    Sim(#[from] crate::simulation::SimError),
    #[error(transparent)]
    Scoring(#[from] crate::scoring::ScoringError),
    #[error(transparent)]
    Stability(#[from] crate::stability::StabilityError),
    #[error("analysis input missing: {0}")]
    MissingData(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The shipped experiment recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    /// Rank-order stability of PVQ values, fictional-characters population.
    RoFictional,
    /// Rank-order stability of PVQ values, real-world personas.
    RoRealWorld,
    /// Ipsative stability of PVQ values without persona instructions.
    IpsNoPersona,
    /// Rank-order stability across conversation lengths (persona mode).
    RoLengthSweep,
    /// Ipsative stability across conversation lengths (no-persona mode).
    IpsLengthSweep,
    /// Rank-order stability of donation behavior.
    RoDonation,
    /// Rank-order stability of lost-bag behavior.
    RoStealing,
    /// Rank-order stability of religiosity.
    RoReligion,
    /// Correlation between value expression and donation behavior.
    ValueBehavior,
    /// Pairwise stability over the extended 14-topic context set.
    TopicMatrix,
    /// Neutral-profile drift analyses across conversation lengths.
    NeutralDrift,
    /// Persona induction through the system slot vs a user message.
    InductionAblation,
}

impl Recipe {
    pub const ALL: [Recipe; 12] = [
        Recipe::RoFictional,
        Recipe::RoRealWorld,
        Recipe::IpsNoPersona,
        Recipe::RoLengthSweep,
        Recipe::IpsLengthSweep,
        Recipe::RoDonation,
        Recipe::RoStealing,
        Recipe::RoReligion,
        Recipe::ValueBehavior,
        Recipe::TopicMatrix,
        Recipe::NeutralDrift,
        Recipe::InductionAblation,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Recipe::RoFictional => "ro-fictional",
            Recipe::RoRealWorld => "ro-real-world",
            Recipe::IpsNoPersona => "ips-no-persona",
            Recipe::RoLengthSweep => "ro-length-sweep",
            Recipe::IpsLengthSweep => "ips-length-sweep",
            Recipe::RoDonation => "ro-donation",
            Recipe::RoStealing => "ro-stealing",
            Recipe::RoReligion => "ro-religion",
            Recipe::ValueBehavior => "value-behavior",
            Recipe::TopicMatrix => "topic-matrix",
            Recipe::NeutralDrift => "neutral-drift",
            Recipe::InductionAblation => "induction-ablation",
        }
    }

    pub fn parse(s: &str) -> Result<Recipe, ExperimentError> {
        Recipe::ALL
            .into_iter()
            .find(|r| r.id() == s)
            .ok_or_else(|| ExperimentError::UnknownRecipe(s.to_string()))
    }
}

/// Preset run sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Paper-scale grids.
    #[default]
    Full,
    /// Desk/CI scale: 8 personas, 2 topics, 2 seeds, shortened sweeps.
    Small,
}

/// Caller overrides applied on top of a recipe's defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Overrides {
    pub scale: Option<Scale>,
    pub seeds: Option<Vec<u64>>,
    pub topics: Option<Vec<TopicId>>,
    pub n_messages: Option<usize>,
    pub permutations: Option<u32>,
    pub population: Option<PopulationKind>,
    pub persona_limit: Option<usize>,
    pub coding: Option<ScaleCoding>,
    pub estimator: Option<Estimator>,
    pub length_grid: Option<Vec<usize>>,
}

/// One resolved run of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub label: String,
    pub spec: RunSpec,
    /// Overrides the backend's template kind (induction ablation arms).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_kind: Option<TemplateKind>,
}

/// A fully resolved experiment: every analysis input is produced by one of
/// the runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub recipe: Recipe,
    pub estimator: Estimator,
    pub runs: Vec<PlannedRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_grid: Option<Vec<usize>>,
}

impl ExperimentPlan {
    /// Total answer-record slots over all runs, before any backend call.
    pub fn answer_slots(&self) -> usize {
        self.runs.iter().map(|r| r.spec.answer_slots()).sum()
    }
}

/// Default grid for the conversation-length sweeps.
pub const DEFAULT_LENGTH_GRID: [usize; 9] = [3, 8, 13, 18, 23, 28, 33, 38, 43];

fn canonical_topic_ids() -> Vec<TopicId> {
    domain::canonical_topics().into_iter().map(|t| t.id).collect()
}

fn all_topic_ids() -> Vec<TopicId> {
    domain::topics().iter().map(|t| t.id.clone()).collect()
}

fn persona_spec(population: PopulationKind, instrument: Instrument) -> RunSpec {
    RunSpec {
        population: Some(population),
        persona_limit: None,
        topics: canonical_topic_ids(),
        n_messages: 3,
        seeds: vec![1, 2, 3, 4, 5],
        permutations: 0,
        instrument,
        coding: ScaleCoding::default(),
        answer_order: Default::default(),
    }
}

fn no_persona_spec() -> RunSpec {
    RunSpec {
        population: None,
        persona_limit: None,
        topics: canonical_topic_ids(),
        n_messages: 3,
        seeds: vec![],
        permutations: 50,
        instrument: Instrument::Pvq,
        coding: ScaleCoding::default(),
        answer_order: Default::default(),
    }
}

fn direct_topic_id() -> TopicId {
    TopicId::Extended("direct".into())
}

/// Resolves a recipe plus overrides into a concrete plan.
pub fn plan(recipe: Recipe, overrides: &Overrides) -> Result<ExperimentPlan, ExperimentError> {
    let estimator = overrides.estimator.unwrap_or_default();
    let scale = overrides.scale.unwrap_or_default();

    let apply = |mut spec: RunSpec| -> RunSpec {
        if let Some(p) = overrides.population {
            spec.population = Some(p);
        }
        if let Some(seeds) = &overrides.seeds {
            spec.seeds = seeds.clone();
        }
        if let Some(topics) = &overrides.topics {
            spec.topics = topics.clone();
        }
        if let Some(n) = overrides.n_messages {
            spec.n_messages = n;
        }
        if let Some(p) = overrides.permutations {
            spec.permutations = p;
        }
        if let Some(l) = overrides.persona_limit {
            spec.persona_limit = Some(l);
        }
        if let Some(c) = overrides.coding {
            spec.coding = c;
        }
        if scale == Scale::Small {
            if spec.population.is_some() && overrides.persona_limit.is_none() {
                spec.persona_limit = Some(8);
            }
            if overrides.topics.is_none() && !spec.topics.contains(&direct_topic_id()) {
                let keep = if recipe == Recipe::TopicMatrix { 4 } else { 2 };
                spec.topics.truncate(keep);
            }
            if overrides.seeds.is_none() && !spec.seeds.is_empty() {
                spec.seeds = vec![1, 2];
            }
            if overrides.permutations.is_none() && spec.permutations > 0 {
                spec.permutations = 8;
            }
        }
        spec
    };

    let grid: Vec<usize> = overrides.length_grid.clone().unwrap_or_else(|| {
        if scale == Scale::Small {
            vec![0, 3, 8]
        } else {
            DEFAULT_LENGTH_GRID.to_vec()
        }
    });

    let mut length_grid = None;
    let runs = match recipe {
        Recipe::RoFictional => vec![PlannedRun {
            label: "pvq".into(),
            spec: apply(persona_spec(PopulationKind::FictionalCharacters, Instrument::Pvq)),
            template_kind: None,
        }],
        Recipe::RoRealWorld => vec![PlannedRun {
            label: "pvq".into(),
            spec: apply(persona_spec(PopulationKind::RealWorldPersonas, Instrument::Pvq)),
            template_kind: None,
        }],
        Recipe::IpsNoPersona => vec![PlannedRun {
            label: "pvq".into(),
            spec: apply(no_persona_spec()),
            template_kind: None,
        }],
        Recipe::RoDonation => vec![PlannedRun {
            label: "donation".into(),
            spec: apply(persona_spec(
                PopulationKind::FictionalCharacters,
                Instrument::Donation,
            )),
            template_kind: None,
        }],
        Recipe::RoStealing => vec![PlannedRun {
            label: "stealing".into(),
            spec: apply(persona_spec(
                PopulationKind::FictionalCharacters,
                Instrument::Stealing,
            )),
            template_kind: None,
        }],
        Recipe::RoReligion => vec![PlannedRun {
            label: "religion".into(),
            spec: apply(persona_spec(
                PopulationKind::RealWorldPersonas,
                Instrument::Religion,
            )),
            template_kind: None,
        }],
        Recipe::ValueBehavior => vec![
            PlannedRun {
                label: "values".into(),
                spec: apply(persona_spec(
                    PopulationKind::FictionalCharacters,
                    Instrument::Pvq,
                )),
                template_kind: None,
            },
            PlannedRun {
                label: "behavior".into(),
                spec: apply(persona_spec(
                    PopulationKind::FictionalCharacters,
                    Instrument::Donation,
                )),
                template_kind: None,
            },
        ],
        Recipe::TopicMatrix => {
            let mut spec = persona_spec(PopulationKind::FictionalCharacters, Instrument::Pvq);
            spec.topics = all_topic_ids();
            spec.seeds = vec![1];
            vec![PlannedRun {
                label: "pvq".into(),
                spec: apply(spec),
                template_kind: None,
            }]
        }
        Recipe::RoLengthSweep => {
            length_grid = Some(grid.clone());
            grid.iter()
                .map(|&n| {
                    let mut spec =
                        persona_spec(PopulationKind::FictionalCharacters, Instrument::Pvq);
                    spec.n_messages = n;
                    let mut spec = apply(spec);
                    spec.n_messages = n;
                    PlannedRun {
                        label: format!("n{n}"),
                        spec,
                        template_kind: None,
                    }
                })
                .collect()
        }
        Recipe::IpsLengthSweep => {
            length_grid = Some(grid.clone());
            grid.iter()
                .map(|&n| {
                    let mut spec = no_persona_spec();
                    spec.n_messages = n;
                    let mut spec = apply(spec);
                    spec.n_messages = n;
                    PlannedRun {
                        label: format!("n{n}"),
                        spec,
                        template_kind: None,
                    }
                })
                .collect()
        }
        Recipe::NeutralDrift => {
            length_grid = Some(grid.clone());
            let mut runs = Vec::new();
            // Neutral value profile: no persona, no conversation.
            let mut neutral_profile = no_persona_spec();
            neutral_profile.topics = vec![direct_topic_id()];
            neutral_profile.n_messages = 0;
            let mut neutral_profile = apply(neutral_profile);
            neutral_profile.topics = vec![direct_topic_id()];
            neutral_profile.n_messages = 0;
            runs.push(PlannedRun {
                label: "neutral-profile".into(),
                spec: neutral_profile,
                template_kind: None,
            });
            // Neutral participant order: personas, no conversation.
            let mut neutral_order =
                persona_spec(PopulationKind::FictionalCharacters, Instrument::Pvq);
            neutral_order.topics = vec![direct_topic_id()];
            neutral_order.n_messages = 0;
            let mut neutral_order = apply(neutral_order);
            neutral_order.topics = vec![direct_topic_id()];
            neutral_order.n_messages = 0;
            runs.push(PlannedRun {
                label: "neutral-order".into(),
                spec: neutral_order,
                template_kind: None,
            });
            for &n in &grid {
                let mut spec = persona_spec(PopulationKind::FictionalCharacters, Instrument::Pvq);
                spec.n_messages = n;
                let mut spec = apply(spec);
                spec.n_messages = n;
                runs.push(PlannedRun {
                    label: format!("n{n}"),
                    spec,
                    template_kind: None,
                });
            }
            runs
        }
        Recipe::InductionAblation => {
            let spec = apply(persona_spec(
                PopulationKind::FictionalCharacters,
                Instrument::Pvq,
            ));
            vec![
                PlannedRun {
                    label: "system-slot".into(),
                    spec: spec.clone(),
                    template_kind: Some(TemplateKind::TunedWithSystem),
                },
                PlannedRun {
                    label: "user-message".into(),
                    spec,
                    template_kind: Some(TemplateKind::TunedWithoutSystem),
                },
            ]
        }
    };
    for run in &runs {
        run.spec.validate()?;
    }
    Ok(ExperimentPlan {
        recipe,
        estimator,
        runs,
        length_grid,
    })
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Execution context shared by all runs of a plan.
pub struct ExecutionEnv<'a> {
    pub backend: &'a dyn Backend,
    pub template: PromptTemplate,
    pub cache: &'a Cache,
    /// Cache-key salt (sampling fingerprint and friends).
    pub salt: String,
}

/// One point of a conversation-length sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthPoint {
    pub n_messages: usize,
    pub rank_order: Option<StabilityReport>,
    pub ipsative: Option<StabilityReport>,
    /// Mean rank-correlation of simulated profiles with the neutral profile.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neutral_similarity: Option<f64>,
    /// Mean correlation between per-context participant orders.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ro_contexts: Option<f64>,
    /// Mean correlation of per-context participant orders with the neutral
    /// (no-conversation) order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ro_neutral: Option<f64>,
}

/// Two persona-induction arms, identical except for the template kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub system_slot: StabilityReport,
    pub user_message: StabilityReport,
}

/// Everything a recipe produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub recipe: Recipe,
    pub model_id: String,
    pub estimator: Estimator,
    pub answer_slots: usize,
    pub n_records: usize,
    pub missing: Vec<MissingAnswer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_order: Option<StabilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ipsative: Option<StabilityReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub length_curve: Vec<LengthPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_matrix: Option<ContextMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value_behavior: Option<ValueBehaviorReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neutral_profile: Option<[f64; 10]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationReport>,
    pub human_references: Vec<HumanReference>,
    /// Exported tables (file name -> TSV payload), written alongside the
    /// report rather than serialized into it.
    #[serde(skip)]
    pub tables: BTreeMap<String, String>,
}

fn mean_of(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Keeps only participants present in every matrix of the group, so the
/// estimators see identical participant sets even after partial failures.
fn align(matrices: Vec<ScoreMatrix>) -> Vec<ScoreMatrix> {
    if matrices.is_empty() {
        return matrices;
    }
    let mut common: Vec<_> = matrices[0].participants.clone();
    for m in &matrices[1..] {
        common.retain(|p| m.participants.contains(p));
    }
    matrices
        .into_iter()
        .map(|m| {
            let rows: Vec<usize> = m
                .participants
                .iter()
                .enumerate()
                .filter(|(_, p)| common.contains(p))
                .map(|(i, _)| i)
                .collect();
            let mut data = Vec::with_capacity(rows.len() * m.dimensions.len());
            for &r in &rows {
                data.extend(m.row(r));
            }
            ScoreMatrix::new(
                m.context.clone(),
                m.seed,
                common.clone(),
                m.dimensions.clone(),
                data,
            )
            .expect("aligned matrix stays rectangular")
        })
        .collect()
}

fn group_by_seed(matrices: Vec<ScoreMatrix>) -> BTreeMap<u64, Vec<ScoreMatrix>> {
    let mut by_seed: BTreeMap<u64, Vec<ScoreMatrix>> = BTreeMap::new();
    for m in matrices {
        by_seed.entry(m.seed).or_default().push(m);
    }
    by_seed
}

fn rank_order_over_seeds(
    by_seed: &BTreeMap<u64, Vec<ScoreMatrix>>,
    estimator: Estimator,
) -> Result<StabilityReport, ExperimentError> {
    let mut per_seed = Vec::new();
    for group in by_seed.values() {
        let aligned = align(group.clone());
        per_seed.push(stability::rank_order(&aligned, estimator)?);
    }
    if per_seed.is_empty() {
        return Err(ExperimentError::MissingData("no seeds produced data".into()));
    }
    Ok(aggregate_rank_order(&per_seed))
}

fn ipsative_over_seeds(
    by_seed: &BTreeMap<u64, Vec<ScoreMatrix>>,
    estimator: Estimator,
) -> Result<StabilityReport, ExperimentError> {
    let mut per_seed = Vec::new();
    for group in by_seed.values() {
        let aligned = align(group.clone());
        per_seed.push(stability::ipsative(&aligned, estimator)?);
    }
    if per_seed.is_empty() {
        return Err(ExperimentError::MissingData("no seeds produced data".into()));
    }
    Ok(aggregate_ipsative(&per_seed))
}

/// Matrices for a persona-mode PVQ dataset, grouped per seed.
fn value_matrices(
    dataset: &ScoreDataset,
) -> Result<(Vec<ValueProfile>, BTreeMap<u64, Vec<ScoreMatrix>>), ExperimentError> {
    let items = domain::instrument_items(dataset.instrument, dataset.coding);
    let profiles = scoring::score_dataset_pvq(dataset, &items)?;
    let matrices = ScoreMatrix::from_profiles(&profiles);
    Ok((profiles, group_by_seed(matrices)))
}

/// Matrices for a no-persona PVQ dataset: permutations pooled into one
/// matrix per context.
fn pooled_value_matrices(
    dataset: &ScoreDataset,
) -> Result<BTreeMap<u64, Vec<ScoreMatrix>>, ExperimentError> {
    let items = domain::instrument_items(dataset.instrument, dataset.coding);
    let profiles = scoring::score_dataset_pvq(dataset, &items)?;
    let matrices = ScoreMatrix::from_profiles_pooled(&profiles);
    let mut by_seed = BTreeMap::new();
    by_seed.insert(0, matrices);
    Ok(by_seed)
}

fn behavior_matrices(
    dataset: &ScoreDataset,
    task: Task,
) -> Result<(Vec<BehaviorScore>, BTreeMap<u64, Vec<ScoreMatrix>>), ExperimentError> {
    let items = domain::instrument_items(dataset.instrument, dataset.coding);
    let mut scores = scoring::score_dataset_downstream(dataset, &items, task)?;
    if task == Task::Religion {
        scores.retain(|s| s.group == RELIGIOSITY_GROUP);
    }
    let matrices = ScoreMatrix::from_behaviors(&scores);
    Ok((scores, group_by_seed(matrices)))
}

fn execute_run(
    env: &ExecutionEnv,
    run: &PlannedRun,
) -> Result<ScoreDataset, ExperimentError> {
    let mut template = env.template.clone();
    if let Some(kind) = run.template_kind {
        template.kind = kind;
    }
    let salt = format!("{}|{:?}", env.salt, template.kind);
    let runner = Runner::new(env.backend, template, env.cache, salt)
        .with_answer_order(run.spec.answer_order);
    Ok(runner.run(&run.spec)?)
}

/// Executes every run of the plan and applies the recipe's analyses.
pub fn execute(plan: &ExperimentPlan, env: &ExecutionEnv) -> Result<ReportBundle, ExperimentError> {
    let estimator = plan.estimator;
    let mut bundle = ReportBundle {
        recipe: plan.recipe,
        model_id: env.backend.model_id().to_string(),
        estimator,
        answer_slots: plan.answer_slots(),
        n_records: 0,
        missing: Vec::new(),
        rank_order: None,
        ipsative: None,
        length_curve: Vec::new(),
        context_matrix: None,
        value_behavior: None,
        neutral_profile: None,
        ablation: None,
        human_references: HUMAN_REFERENCES.to_vec(),
        tables: BTreeMap::new(),
    };

    let mut datasets: BTreeMap<String, ScoreDataset> = BTreeMap::new();
    for run in &plan.runs {
        let dataset = execute_run(env, run)?;
        bundle.n_records += dataset.n_records();
        bundle.missing.extend(dataset.missing.iter().cloned());
        datasets.insert(run.label.clone(), dataset);
    }

    match plan.recipe {
        Recipe::RoFictional | Recipe::RoRealWorld => {
            let dataset = &datasets["pvq"];
            let (profiles, by_seed) = value_matrices(dataset)?;
            bundle.rank_order = Some(rank_order_over_seeds(&by_seed, estimator)?);
            bundle.ipsative = Some(ipsative_over_seeds(&by_seed, estimator)?);
            bundle
                .tables
                .insert("scores.tsv".into(), scoring::export_profiles_table(&profiles));
        }
        Recipe::IpsNoPersona => {
            let dataset = &datasets["pvq"];
            let items = domain::instrument_items(dataset.instrument, dataset.coding);
            let profiles = scoring::score_dataset_pvq(dataset, &items)?;
            let by_seed = pooled_value_matrices(dataset)?;
            bundle.ipsative = Some(ipsative_over_seeds(&by_seed, estimator)?);
            bundle
                .tables
                .insert("scores.tsv".into(), scoring::export_profiles_table(&profiles));
        }
        Recipe::RoDonation | Recipe::RoStealing | Recipe::RoReligion => {
            let (label, task) = match plan.recipe {
                Recipe::RoDonation => ("donation", Task::Donation),
                Recipe::RoStealing => ("stealing", Task::Stealing),
                _ => ("religion", Task::Religion),
            };
            let dataset = &datasets[label];
            let (scores, by_seed) = behavior_matrices(dataset, task)?;
            bundle.rank_order = Some(rank_order_over_seeds(&by_seed, estimator)?);
            bundle
                .tables
                .insert("scores.tsv".into(), scoring::export_behavior_table(&scores));
        }
        Recipe::ValueBehavior => {
            let (profiles, value_by_seed) = value_matrices(&datasets["values"])?;
            let (scores, behavior_by_seed) = behavior_matrices(&datasets["behavior"], Task::Donation)?;
            bundle.rank_order = Some(rank_order_over_seeds(&value_by_seed, estimator)?);
            // Pair (seed, context) matrices and align participants per pair.
            let mut values = Vec::new();
            let mut behaviors = Vec::new();
            for (seed, vgroup) in &value_by_seed {
                let Some(bgroup) = behavior_by_seed.get(seed) else {
                    continue;
                };
                for v in vgroup {
                    if let Some(b) = bgroup.iter().find(|b| b.context == v.context) {
                        let mut pair = align(vec![v.clone(), b.clone()]);
                        behaviors.push(pair.pop().unwrap());
                        values.push(pair.pop().unwrap());
                    }
                }
            }
            bundle.value_behavior = Some(stability::value_behavior_correlation(
                &values, &behaviors, estimator,
            )?);
            bundle
                .tables
                .insert("values.tsv".into(), scoring::export_profiles_table(&profiles));
            bundle
                .tables
                .insert("behavior.tsv".into(), scoring::export_behavior_table(&scores));
        }
        Recipe::TopicMatrix => {
            let dataset = &datasets["pvq"];
            let (profiles, by_seed) = value_matrices(dataset)?;
            let group = by_seed
                .values()
                .next()
                .ok_or_else(|| ExperimentError::MissingData("no matrices".into()))?;
            let matrix = stability::pairwise_matrix(&align(group.clone()), estimator)?;
            bundle.tables.insert(
                "context_matrix.tsv".into(),
                render_context_matrix(&matrix),
            );
            bundle.context_matrix = Some(matrix);
            bundle
                .tables
                .insert("scores.tsv".into(), scoring::export_profiles_table(&profiles));
        }
        Recipe::RoLengthSweep | Recipe::IpsLengthSweep => {
            let grid = plan.length_grid.clone().unwrap_or_default();
            for n in grid {
                let dataset = &datasets[&format!("n{n}")];
                let point = if dataset.records.keys().any(|k| {
                    matches!(k.participant, crate::backend::Participant::Permutation(_))
                }) {
                    let by_seed = pooled_value_matrices(dataset)?;
                    LengthPoint {
                        n_messages: n,
                        rank_order: None,
                        ipsative: Some(ipsative_over_seeds(&by_seed, estimator)?),
                        neutral_similarity: None,
                        ro_contexts: None,
                        ro_neutral: None,
                    }
                } else {
                    let (_, by_seed) = value_matrices(dataset)?;
                    LengthPoint {
                        n_messages: n,
                        rank_order: Some(rank_order_over_seeds(&by_seed, estimator)?),
                        ipsative: Some(ipsative_over_seeds(&by_seed, estimator)?),
                        neutral_similarity: None,
                        ro_contexts: None,
                        ro_neutral: None,
                    }
                };
                bundle.length_curve.push(point);
            }
            bundle.tables.insert(
                "length_curve.tsv".into(),
                render_length_curve(&bundle.length_curve),
            );
        }
        Recipe::NeutralDrift => {
            // Neutral profile: mean value ranks over the no-persona,
            // no-conversation permutations.
            let neutral_ds = &datasets["neutral-profile"];
            let items = domain::instrument_items(neutral_ds.instrument, neutral_ds.coding);
            let neutral_profiles = scoring::score_dataset_pvq(neutral_ds, &items)?;
            let raw: Vec<[f64; 10]> = neutral_profiles.iter().map(|p| p.scores).collect();
            let neutral_ranks = stability::neutral_profile(&raw)
                .ok_or_else(|| ExperimentError::MissingData("no neutral permutations".into()))?;
            bundle.neutral_profile = Some(neutral_ranks);

            // Neutral participant order: personas administered directly.
            let (_, neutral_order_by_seed) = value_matrices(&datasets["neutral-order"])?;

            let grid = plan.length_grid.clone().unwrap_or_default();
            for n in grid {
                let dataset = &datasets[&format!("n{n}")];
                let (profiles, by_seed) = value_matrices(dataset)?;
                let rank_order = rank_order_over_seeds(&by_seed, estimator)?;

                // Similarity of every simulated profile to the neutral one.
                let sims: Vec<f64> = profiles
                    .iter()
                    .filter_map(|p| stability::correlate(estimator, &p.scores, &neutral_ranks))
                    .collect();

                // Participant orders vs the neutral (no-conversation) order,
                // per seed and value dimension.
                let mut ro_contexts_acc = Vec::new();
                let mut ro_neutral_acc = Vec::new();
                for (seed, group) in &by_seed {
                    let Some(neutral_group) = neutral_order_by_seed.get(seed) else {
                        continue;
                    };
                    let mut all = group.clone();
                    all.extend(neutral_group.clone());
                    let all = align(all);
                    let (contexts, neutral) = all.split_at(group.len());
                    let neutral = &neutral[0];
                    for d in 0..neutral.dimensions.len() {
                        let columns: Vec<Vec<f64>> =
                            contexts.iter().map(|m| m.column(d)).collect();
                        if let Some(r) = stability::ro_contexts(&columns, estimator) {
                            ro_contexts_acc.push(r);
                        }
                        if let Some(r) =
                            stability::ro_neutral(&columns, &neutral.column(d), estimator)
                        {
                            ro_neutral_acc.push(r);
                        }
                    }
                }
                bundle.length_curve.push(LengthPoint {
                    n_messages: n,
                    rank_order: Some(rank_order),
                    ipsative: Some(ipsative_over_seeds(&by_seed, estimator)?),
                    neutral_similarity: mean_of(&sims),
                    ro_contexts: mean_of(&ro_contexts_acc),
                    ro_neutral: mean_of(&ro_neutral_acc),
                });
            }
            bundle.tables.insert(
                "length_curve.tsv".into(),
                render_length_curve(&bundle.length_curve),
            );
        }
        Recipe::InductionAblation => {
            let (_, system_by_seed) = value_matrices(&datasets["system-slot"])?;
            let (_, user_by_seed) = value_matrices(&datasets["user-message"])?;
            bundle.ablation = Some(AblationReport {
                system_slot: rank_order_over_seeds(&system_by_seed, estimator)?,
                user_message: rank_order_over_seeds(&user_by_seed, estimator)?,
            });
        }
    }
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// Rendering and persistence
// ---------------------------------------------------------------------------

fn render_context_matrix(matrix: &ContextMatrix) -> String {
    let mut out = String::from("context");
    for c in &matrix.contexts {
        out.push('\t');
        out.push_str(&c.to_string());
    }
    out.push('\n');
    for (i, c) in matrix.contexts.iter().enumerate() {
        out.push_str(&c.to_string());
        for j in 0..matrix.contexts.len() {
            out.push('\t');
            match matrix.r[i][j] {
                Some(r) => out.push_str(&format!("{r:.4}")),
                None => out.push_str("NA"),
            }
        }
        out.push('\n');
    }
    out
}

fn render_length_curve(curve: &[LengthPoint]) -> String {
    let mut out =
        String::from("n_messages\trank_order\trank_order_se\tipsative\tipsative_se\tneutral_similarity\tro_contexts\tro_neutral\n");
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "NA".into());
    for p in curve {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            p.n_messages,
            fmt(p.rank_order.as_ref().map(|r| r.mean)),
            fmt(p.rank_order.as_ref().map(|r| r.se)),
            fmt(p.ipsative.as_ref().map(|r| r.mean)),
            fmt(p.ipsative.as_ref().map(|r| r.se)),
            fmt(p.neutral_similarity),
            fmt(p.ro_contexts),
            fmt(p.ro_neutral),
        ));
    }
    out
}

impl ReportBundle {
    /// Human-readable summary, one headline per analysis.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "recipe: {}\nmodel: {}\nestimator: {:?}\nanswer slots: {}\nrecords: {}\nmissing: {}\n",
            self.recipe.id(),
            self.model_id,
            self.estimator,
            self.answer_slots,
            self.n_records,
            self.missing.len(),
        ));
        if let Some(r) = &self.rank_order {
            out.push_str(&format!(
                "rank-order stability: {:.4} +/- {:.4} (SE over {} {})\n",
                r.mean, r.se, r.n_units, r.units
            ));
        }
        if let Some(r) = &self.ipsative {
            out.push_str(&format!(
                "ipsative stability: {:.4} +/- {:.4} (SE over {} {})\n",
                r.mean, r.se, r.n_units, r.units
            ));
        }
        if let Some(m) = &self.context_matrix {
            out.push_str(&format!(
                "pairwise contexts: {} topics, mean off-diagonal {:.4}\n",
                m.contexts.len(),
                m.mean_off_diagonal
            ));
        }
        if let Some(v) = &self.value_behavior {
            out.push_str("value-behavior correlation (per value, mean over races and paired contexts):\n");
            for (value, r) in &v.per_value {
                out.push_str(&format!("  {value}: {r:+.4}\n"));
            }
            out.push_str(&format!(
                "  ({} correlations per value over groups {:?})\n",
                v.correlations_per_value, v.behavior_groups
            ));
        }
        if let Some(a) = &self.ablation {
            out.push_str(&format!(
                "persona induction: system slot {:.4} +/- {:.4} vs user message {:.4} +/- {:.4}\n",
                a.system_slot.mean, a.system_slot.se, a.user_message.mean, a.user_message.se
            ));
        }
        for p in &self.length_curve {
            out.push_str(&format!("n={}:", p.n_messages));
            if let Some(r) = &p.rank_order {
                out.push_str(&format!(" rank-order {:.4} +/- {:.4}", r.mean, r.se));
            }
            if let Some(r) = &p.ipsative {
                out.push_str(&format!(" ipsative {:.4} +/- {:.4}", r.mean, r.se));
            }
            if let Some(s) = p.neutral_similarity {
                out.push_str(&format!(" neutral-similarity {s:.4}"));
            }
            if let Some(s) = p.ro_contexts {
                out.push_str(&format!(" ro-contexts {s:.4}"));
            }
            if let Some(s) = p.ro_neutral {
                out.push_str(&format!(" ro-neutral {s:.4}"));
            }
            out.push('\n');
        }
        out.push_str(
            "human longitudinal references: rank-order r=0.57 (ages 10-12), r=0.66 (ages 20-28); \
             ipsative r=0.66 (ages 10-12), r=0.59 (ages 20-28)\n",
        );
        out
    }

    /// Writes report.json, report.txt and every exported table under `dir`.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(self).unwrap(),
        )?;
        std::fs::write(dir.join("report.txt"), self.render_text())?;
        for (name, payload) in &self.tables {
            std::fs::write(dir.join(name), payload)?;
        }
        Ok(())
    }
}

/// Run manifest: everything needed to reproduce or re-analyze a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub recipe: Recipe,
    pub model_id: String,
    pub template_kind: TemplateKind,
    pub salt: String,
    pub plan: ExperimentPlan,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(self).unwrap(),
        )
    }

    pub fn read(dir: &Path) -> std::io::Result<Manifest> {
        let payload = std::fs::read_to_string(dir.join("manifest.json"))?;
        serde_json::from_str(&payload)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

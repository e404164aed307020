//! Command-line entry point.
//!
//! `valstab run <recipe>` executes an experiment recipe against a configured
//! HTTP backend or one of the offline scripted backends, writing the cache,
//! manifest and reports into the output directory. `valstab analyze`
//! recomputes reports from a cached run without touching any backend, and
//! `valstab export` prints a run's exported tables.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use valstab::backend::{
    Backend, BackendConfig, HttpBackend, NullBackend, ScriptedBackend, ScriptedPolicy,
};
use valstab::domain::{Instrument, PopulationKind, ScaleCoding, TopicId};
use valstab::experiments::{execute, plan, ExecutionEnv, Manifest, Overrides, Recipe, Scale};
use valstab::prompting::{PromptTemplate, TemplateKind};
use valstab::simulation::Cache;
use valstab::stability::Estimator;

#[derive(Parser)]
#[command(
    name = "valstab",
    about = "Measures the stability of values expressed by conversational language models \
             across simulated conversation contexts."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment recipe.
    Run(RunArgs),
    /// Recompute reports from a cached run directory (no backend calls).
    Analyze {
        /// Run directory containing manifest.json and the cache.
        dir: PathBuf,
    },
    /// Print a run's exported data.
    Export {
        /// Run directory.
        dir: PathBuf,
        /// Output format.
        #[arg(long, value_enum, default_value_t = ExportFormat::Table)]
        format: ExportFormat,
    },
    /// List the available recipes.
    Recipes,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Table,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Full,
    Small,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    /// Deterministic offline backend with persona-stable answers.
    ScriptedFixed,
    /// Deterministic offline backend with context-random answers.
    ScriptedUniform,
    /// Deterministic offline backend that drifts in long conversations.
    ScriptedDrift,
    /// HTTP chat/completions endpoint described by --model-config.
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum PopulationArg {
    Fictional,
    RealWorld,
}

#[derive(Clone, Copy, ValueEnum)]
enum InstrumentArg {
    Pvq,
    Donation,
    Stealing,
    Religion,
}

#[derive(Clone, Copy, ValueEnum)]
enum CodingArg {
    SixPoint,
    FivePoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Spearman,
    Pearson,
}

#[derive(Args)]
struct RunArgs {
    /// Recipe id (see `valstab recipes`).
    recipe: String,
    /// Output directory for cache, manifest and reports.
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,
    /// TOML backend configuration (required with --backend http).
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Which backend to use.
    #[arg(long, value_enum, default_value_t = BackendArg::ScriptedFixed)]
    backend: BackendArg,
    /// Seed of the scripted backends.
    #[arg(long, default_value_t = 0)]
    backend_seed: u64,
    /// Exchanged messages before scripted drift begins.
    #[arg(long, default_value_t = 3)]
    drift_threshold: usize,
    /// Grid size preset.
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    /// Comma-separated seeds (persona mode).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated topic ids.
    #[arg(long, value_delimiter = ',')]
    topics: Option<Vec<String>>,
    /// Exchanged conversation messages.
    #[arg(long)]
    n_messages: Option<usize>,
    /// Answer-order permutations (no-persona mode).
    #[arg(long)]
    permutations: Option<u32>,
    /// Simulated population.
    #[arg(long, value_enum)]
    population: Option<PopulationArg>,
    /// Questionnaire or downstream task to administer.
    #[arg(long, value_enum)]
    instrument: Option<InstrumentArg>,
    /// Answer scale coding.
    #[arg(long, value_enum)]
    coding: Option<CodingArg>,
    /// Correlation estimator.
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Comma-separated conversation-length grid for sweep recipes.
    #[arg(long, value_delimiter = ',')]
    length_grid: Option<Vec<usize>>,
    /// Truncate the persona roster to the first N entries.
    #[arg(long)]
    persona_limit: Option<usize>,
    /// Continue into an output directory that already holds cached cells.
    #[arg(long)]
    resume: bool,
    /// Plan only: print the answer-record slot counts and exit without any
    /// backend call.
    #[arg(long)]
    dry_run: bool,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Analyze { dir } => analyze(&dir),
        Command::Export { dir, format } => export(&dir, format),
        Command::Recipes => {
            for recipe in Recipe::ALL {
                println!("{}", recipe.id());
            }
            Ok(())
        }
    }
}

fn overrides_from(args: &RunArgs) -> Result<Overrides, String> {
    let instrument_override = args.instrument.map(|i| match i {
        InstrumentArg::Pvq => Instrument::Pvq,
        InstrumentArg::Donation => Instrument::Donation,
        InstrumentArg::Stealing => Instrument::Stealing,
        InstrumentArg::Religion => Instrument::Religion,
    });
    if instrument_override.is_some() {
        return Err(
            "the instrument is fixed by the recipe; pick ro-donation, ro-stealing or \
             ro-religion instead"
                .into(),
        );
    }
    Ok(Overrides {
        scale: args.scale.map(|s| match s {
            ScaleArg::Full => Scale::Full,
            ScaleArg::Small => Scale::Small,
        }),
        seeds: args.seeds.clone(),
        topics: args
            .topics
            .as_ref()
            .map(|ts| ts.iter().map(|t| TopicId::parse(t)).collect()),
        n_messages: args.n_messages,
        permutations: args.permutations,
        population: args.population.map(|p| match p {
            PopulationArg::Fictional => PopulationKind::FictionalCharacters,
            PopulationArg::RealWorld => PopulationKind::RealWorldPersonas,
        }),
        persona_limit: args.persona_limit,
        coding: args.coding.map(|c| match c {
            CodingArg::SixPoint => ScaleCoding::SixPoint,
            CodingArg::FivePoint => ScaleCoding::FivePoint,
        }),
        estimator: args.estimator.map(|e| match e {
            EstimatorArg::Spearman => Estimator::Spearman,
            EstimatorArg::Pearson => Estimator::Pearson,
        }),
        length_grid: args.length_grid.clone(),
    })
}

fn run(args: RunArgs) -> Result<(), String> {
    let recipe = Recipe::parse(&args.recipe).map_err(|e| e.to_string())?;
    let overrides = overrides_from(&args)?;
    let plan = plan(recipe, &overrides).map_err(|e| e.to_string())?;

    if args.dry_run {
        println!("recipe: {}", recipe.id());
        for run in &plan.runs {
            println!(
                "  run {}: {} cells x {} items = {} answer-record slots",
                run.label,
                run.spec.cells().len(),
                run.spec.items_per_cell(),
                run.spec.answer_slots()
            );
        }
        println!("total answer-record slots: {}", plan.answer_slots());
        return Ok(());
    }

    let records_path = args.out.join("records.jsonl");
    if records_path.exists() && !args.resume {
        return Err(format!(
            "{} already holds cached records; pass --resume to continue that run",
            args.out.display()
        ));
    }

    // Backend construction happens only after the dry-run gate above.
    let (backend, template, salt): (Box<dyn Backend>, PromptTemplate, String) = match args.backend
    {
        BackendArg::Http => {
            let path = args
                .model_config
                .as_ref()
                .ok_or("--backend http requires --model-config")?;
            let payload = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let cfg = BackendConfig::from_toml(&payload)?;
            let template = cfg.template();
            let salt = cfg.sampling.fingerprint();
            (
                Box::new(HttpBackend::new(cfg).map_err(|e| e.to_string())?),
                template,
                salt,
            )
        }
        scripted => {
            let policy = match scripted {
                BackendArg::ScriptedFixed => ScriptedPolicy::FixedPerPersona,
                BackendArg::ScriptedUniform => ScriptedPolicy::UniformRandom,
                BackendArg::ScriptedDrift => ScriptedPolicy::DriftAfterK(args.drift_threshold),
                BackendArg::Http => unreachable!(),
            };
            (
                Box::new(ScriptedBackend::new(args.backend_seed, policy)),
                PromptTemplate::new(TemplateKind::Base),
                "scripted".to_string(),
            )
        }
    };

    let cache = Cache::open(&args.out).map_err(|e| e.to_string())?;
    let env = ExecutionEnv {
        backend: backend.as_ref(),
        template: template.clone(),
        cache: &cache,
        salt: salt.clone(),
    };
    let bundle = execute(&plan, &env).map_err(|e| e.to_string())?;

    Manifest {
        recipe,
        model_id: backend.model_id().to_string(),
        template_kind: template.kind,
        salt,
        plan: plan.clone(),
    }
    .write(&args.out)
    .map_err(|e| e.to_string())?;
    bundle.write_dir(&args.out).map_err(|e| e.to_string())?;

    print!("{}", bundle.render_text());
    if !bundle.missing.is_empty() {
        eprintln!(
            "warning: {} answer slots missing; re-run with --resume after fixing the backend",
            bundle.missing.len()
        );
    }
    println!("reports written to {}", args.out.display());
    Ok(())
}

fn analyze(dir: &std::path::Path) -> Result<(), String> {
    let manifest = Manifest::read(dir).map_err(|e| e.to_string())?;
    let cache = Cache::open(dir).map_err(|e| e.to_string())?;
    let backend = NullBackend::new(manifest.model_id.clone());
    let env = ExecutionEnv {
        backend: &backend,
        template: PromptTemplate::new(manifest.template_kind),
        cache: &cache,
        salt: manifest.salt.clone(),
    };
    let bundle = execute(&manifest.plan, &env).map_err(|e| e.to_string())?;
    bundle.write_dir(dir).map_err(|e| e.to_string())?;
    print!("{}", bundle.render_text());
    if !bundle.missing.is_empty() {
        eprintln!(
            "warning: {} answer slots absent from the cache",
            bundle.missing.len()
        );
    }
    Ok(())
}

fn export(dir: &std::path::Path, format: ExportFormat) -> Result<(), String> {
    match format {
        ExportFormat::Json => {
            let payload = std::fs::read_to_string(dir.join("report.json"))
                .map_err(|e| format!("no report.json in {}: {e}", dir.display()))?;
            println!("{payload}");
        }
        ExportFormat::Table => {
            let mut printed = false;
            for name in [
                "scores.tsv",
                "values.tsv",
                "behavior.tsv",
                "length_curve.tsv",
                "context_matrix.tsv",
            ] {
                let path = dir.join(name);
                if let Ok(payload) = std::fs::read_to_string(&path) {
                    if printed {
                        println!();
                    }
                    println!("# {name}");
                    print!("{payload}");
                    printed = true;
                }
            }
            if !printed {
                return Err(format!("no exported tables in {}", dir.display()));
            }
        }
    }
    Ok(())
}

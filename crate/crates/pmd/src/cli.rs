//! Command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pmd_core::dpo::export_dpo_pairs;
use pmd_core::summary::{summarize, ExampleResult, ExampleStatus};
use pmd_core::tuning::{det_curve, tune_stopping, tune_tau, ScoredExample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::FileConfig;
use crate::dataset::load_dataset;
use crate::error::{EngineError, EngineResult};
use crate::orchestrator::Engine;
use crate::report::{
    det_csv, dpo_jsonl, parse_results, read_results, results_jsonl, scatter_csv, to_json_pretty, write_file, write_run_outputs,
    TuningReport, DET_FILE, DPO_FILE, RESULTS_FILE, SCATTER_FILE, SUMMARY_FILE, TUNING_FILE,
};
use crate::synth::generate_synthetic_fixture;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pmd", version, about = "Coherent procedural mistake detection by visual self-dialog")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of examples evaluated in parallel.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Stop at the first invalid dataset line.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ResultsArg {
    /// Results file (defaults to results.jsonl in the output directory).
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the dataset with self-dialog.
    Run,
    /// Evaluate with a single success question and no rationale.
    RunRationaleFree,
    /// Pick the mistake threshold that maximizes accuracy.
    TuneTau(ResultsArg),
    /// Grid-search the stopping parameters by replaying full-length dialogs.
    /// Without --results the dialogs are first recorded with the configured
    /// backend.
    TuneStopping(ResultsArg),
    /// Miss and false-alarm rates over the threshold grid.
    Det(ResultsArg),
    /// Preference pairs from the recorded candidate rankings.
    ExportDpo(ResultsArg),
    /// Generate a synthetic dataset and matching scripted fixture.
    SynthFixtures {
        #[arg(long)]
        examples: Option<usize>,
        #[arg(long)]
        successes: Option<usize>,
        #[arg(long)]
        filtered: Option<usize>,
    },
    /// Check a dataset file and print its manifest.
    ValidateDataset {
        /// Dataset file (defaults to the configured dataset).
        path: Option<PathBuf>,
    },
    /// Recompute summary.json and scatter.csv from a results file.
    Report(ResultsArg),
}

struct Context {
    config: FileConfig,
    seed: u64,
    workers: usize,
    out_dir: PathBuf,
    strict: bool,
}

impl Context {
    fn new(cli: &Cli) -> EngineResult<Self> {
        let mut config = match &cli.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let seed = cli.seed.unwrap_or(config.run.seed);
        config.run.seed = seed;
        let workers = cli
            .workers
            .or(config.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        if workers == 0 {
            return Err(EngineError::Validation("--workers must be positive".into()));
        }
        let out_dir = cli
            .out_dir
            .clone()
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            config,
            seed,
            workers,
            out_dir,
            strict: cli.strict,
        })
    }

    fn results_path(&self, arg: &ResultsArg) -> PathBuf {
        arg.results.clone().unwrap_or_else(|| self.out_dir.join(RESULTS_FILE))
    }

    fn dataset_path(&self) -> EngineResult<&Path> {
        self.config
            .dataset
            .as_deref()
            .ok_or_else(|| EngineError::Validation("no dataset configured".into()))
    }

    /// Runs the dataset with the configured backend.
    fn evaluate(&self, rationale_free: bool, full_length: bool) -> EngineResult<Vec<ExampleResult>> {
        let (examples, manifest) = load_dataset(self.dataset_path()?, self.strict)?;
        log::info!("loaded {} examples (sha256 {})", manifest.examples, manifest.checksum);
        let mut run = self.config.run.clone();
        run.rationale_free |= rationale_free;
        run.full_length |= full_length;
        run.validate()?;
        let engine = Engine::with_icl_bank(self.config.build_backend()?, self.config.icl_bank()?);
        engine.run_dataset(&examples, &run, self.workers)
    }
}

fn backend_status(results: &[ExampleResult]) -> i32 {
    let errored = results.iter().filter(|r| r.status == ExampleStatus::Errored).count();
    if errored > 0 {
        log::error!("{errored} example(s) failed with backend errors");
        EXIT_BACKEND
    } else {
        EXIT_OK
    }
}

fn scored(results: &[ExampleResult]) -> EngineResult<Vec<ScoredExample>> {
    let scored: Vec<_> = results.iter().filter_map(ExampleResult::scored).collect();
    if scored.is_empty() {
        return Err(EngineError::Validation("no evaluated examples in results".into()));
    }
    Ok(scored)
}

fn print(out: &mut dyn Write, text: &str) {
    let _ = out.write_all(text.as_bytes());
}

fn execute(cli: &Cli, out: &mut dyn Write) -> EngineResult<i32> {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Run | Command::RunRationaleFree => {
            let results = ctx.evaluate(matches!(cli.command, Command::RunRationaleFree), false)?;
            let summary = write_run_outputs(&ctx.out_dir, &results)?;
            print(out, &to_json_pretty(&summary));
            Ok(backend_status(&results))
        }
        Command::TuneTau(arg) => {
            let results = read_results(&ctx.results_path(arg))?;
            let choice = tune_tau(&scored(&results)?)?;
            let report = TuningReport {
                tau: Some(choice),
                stopping: None,
            };
            let text = to_json_pretty(&report);
            write_file(&ctx.out_dir.join(TUNING_FILE), &text)?;
            print(out, &text);
            Ok(EXIT_OK)
        }
        Command::TuneStopping(arg) => {
            let (results, status) = match &arg.results {
                Some(path) => (read_results(path)?, EXIT_OK),
                None => {
                    let results = ctx.evaluate(false, true)?;
                    let jsonl = results_jsonl(&results);
                    write_file(&ctx.out_dir.join("full_length_results.jsonl"), &jsonl)?;
                    // tune on the rows as written so the file alone reproduces the report
                    (parse_results(&jsonl)?, backend_status(&results))
                }
            };
            let dialogs: Vec<_> = results.iter().filter_map(ExampleResult::recorded_dialog).collect();
            if dialogs.is_empty() {
                return Err(EngineError::Validation("no recorded dialogs to replay".into()));
            }
            let tuned = tune_stopping(&dialogs, ctx.config.run.max_iterations)?;
            let report = TuningReport {
                tau: None,
                stopping: Some(tuned),
            };
            let text = to_json_pretty(&report);
            write_file(&ctx.out_dir.join(TUNING_FILE), &text)?;
            print(out, &text);
            Ok(status)
        }
        Command::Det(arg) => {
            let results = read_results(&ctx.results_path(arg))?;
            let text = det_csv(&det_curve(&scored(&results)?));
            write_file(&ctx.out_dir.join(DET_FILE), &text)?;
            print(out, &text);
            Ok(EXIT_OK)
        }
        Command::ExportDpo(arg) => {
            let results = read_results(&ctx.results_path(arg))?;
            let turns: Vec<_> = results.iter().flat_map(ExampleResult::ranked_turns).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            let pairs = export_dpo_pairs(&turns, &mut rng);
            write_file(&ctx.out_dir.join(DPO_FILE), &dpo_jsonl(&pairs))?;
            print(out, &format!("{} preference pairs from {} turns\n", pairs.len(), turns.len()));
            Ok(EXIT_OK)
        }
        Command::SynthFixtures {
            examples,
            successes,
            filtered,
        } => {
            let mut config = ctx.config.synth.clone().unwrap_or_default();
            if let Some(n) = examples {
                config.examples = *n;
                if successes.is_none() {
                    config.successes = n / 2;
                }
            }
            if let Some(n) = successes {
                config.successes = *n;
            }
            if let Some(n) = filtered {
                config.filtered = *n;
            }
            let generated = generate_synthetic_fixture(&config, ctx.seed)?;
            write_file(&ctx.out_dir.join("dataset.jsonl"), &generated.dataset_jsonl)?;
            write_file(&ctx.out_dir.join("fixture.json"), &generated.fixture.to_json())?;
            print(
                out,
                &format!(
                    "{} examples, {} fixture entries\n",
                    generated.examples.len(),
                    generated.fixture.entries.len()
                ),
            );
            Ok(EXIT_OK)
        }
        Command::ValidateDataset { path } => {
            let path = match path {
                Some(p) => p.as_path(),
                None => ctx.dataset_path()?,
            };
            let (_, manifest) = load_dataset(path, ctx.strict)?;
            print(out, &to_json_pretty(&manifest));
            Ok(EXIT_OK)
        }
        Command::Report(arg) => {
            let results = read_results(&ctx.results_path(arg))?;
            let summary = summarize(&results);
            let text = to_json_pretty(&summary);
            write_file(&ctx.out_dir.join(SUMMARY_FILE), &text)?;
            write_file(&ctx.out_dir.join(SCATTER_FILE), &scatter_csv(&results))?;
            print(out, &text);
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Usage errors exit with 1.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                print(err, &rendered);
            } else {
                print(out, &rendered);
            }
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            print(err, &format!("error: {e}\n"));
            e.exit_code()
        }
    }
}

//! `groundforge`: build grounded instruction data and score grounded answers.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use groundforge::client::{model_from_env, ChatClient, HttpChatClient, StubClient};
use groundforge::config::ForgeConfig;
use groundforge::error::{ClientError, Error};
use groundforge::exec::{with_workers, Execution};
use groundforge::pipeline::{self, EvalOutputs};
use groundforge::Task;

#[derive(Parser)]
#[command(name = "groundforge", version, about, propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat TOML config file; flags given on the command line take precedence [default: built-in defaults]
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Random seed for template selection and sampling [default: 0, or the config value]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-document processing [default: one per CPU]
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Process documents on the calling thread only [default: off]
    #[arg(long, global = true)]
    sequential: bool,
    /// More log output on stderr; repeat for debug level [default: warnings only]
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Build detection, recognition and spotting samples from OCR records
    Pretrain(PretrainArgs),
    /// Write a content-digest dedup manifest for the images behind OCR records
    Dedup(DedupArgs),
    /// Assemble conversation-generation prompts and optionally request completions
    FinetunePrompts(PromptArgs),
    /// Parse and sanitize raw completions into conversation samples
    FinetuneBuild(BuildArgs),
    /// Score model responses against a benchmark
    Eval(EvalArgs),
    /// Render samples into chat training strings
    Render(RenderArgs),
    /// Turn and length statistics for a dataset
    Stats(StatsArgs),
}

#[derive(Args)]
struct PretrainArgs {
    /// Line-delimited OCR records (repeatable) [required]
    #[arg(long, required = true, num_args = 1.., value_name = "FILE")]
    ocr: Vec<PathBuf>,
    /// Output dataset; a provenance sidecar is written next to it [required]
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Dedup manifest; only images marked kept are used [default: none, use all]
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Minimum largest-token area as a fraction of the image [default: 0.05, or the config value]
    #[arg(long)]
    min_area: Option<f64>,
    /// Comma-separated tasks to generate [default: detection,recognition,spotting, or the config value]
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<Task>>,
    /// Distinct texts per document for detection, 0 for no cap [default: 10, or the config value]
    #[arg(long, value_name = "N")]
    detection_cap: Option<usize>,
    /// Tokens per document for recognition, 0 for no cap [default: 10, or the config value]
    #[arg(long, value_name = "N")]
    recognition_cap: Option<usize>,
    /// Extra templates as line-delimited {task, template} records [default: built-in bank only]
    #[arg(long, value_name = "FILE")]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct DedupArgs {
    /// Line-delimited OCR records (repeatable) [required]
    #[arg(long, required = true, num_args = 1.., value_name = "FILE")]
    ocr: Vec<PathBuf>,
    /// Directory that image references are relative to
    #[arg(long, value_name = "DIR", default_value = ".")]
    image_root: PathBuf,
    /// Output manifest [required]
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct PromptArgs {
    /// Line-delimited {image_id, image?, captions} records [required]
    #[arg(long, value_name = "FILE")]
    captions: PathBuf,
    /// Line-delimited OCR records, one file per engine (repeatable) [required]
    #[arg(long, required = true, num_args = 1.., value_name = "FILE")]
    ocr: Vec<PathBuf>,
    /// Output prompts [required]
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Request completions and write them here; uses FORGE_LLM_ENDPOINT and FORGE_LLM_KEY unless --stub is given [default: no requests]
    #[arg(long, value_name = "FILE")]
    completions: Option<PathBuf>,
    /// Replay canned {image_id, completion} records instead of calling the service [default: none]
    #[arg(long, value_name = "FILE", requires = "completions")]
    stub: Option<PathBuf>,
    /// Replacement generation instructions [default: built-in instructions, or the config value]
    #[arg(long, value_name = "FILE")]
    instructions: Option<PathBuf>,
    /// Chat model name [default: FORGE_LLM_MODEL, else gpt-4, or the config value]
    #[arg(long)]
    model: Option<String>,
    /// Concurrent requests in flight [default: 4, or the config value]
    #[arg(long, value_name = "N")]
    max_in_flight: Option<usize>,
    /// Attempts per request before giving up [default: 3, or the config value]
    #[arg(long, value_name = "N")]
    max_attempts: Option<usize>,
}

#[derive(Args)]
struct BuildArgs {
    /// Line-delimited {image_id, image?, completion} records [required]
    #[arg(long, value_name = "FILE")]
    completions: PathBuf,
    /// Line-delimited OCR records used to validate answer boxes (repeatable) [required]
    #[arg(long, required = true, num_args = 1.., value_name = "FILE")]
    ocr: Vec<PathBuf>,
    /// Output dataset of kept conversations [required]
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Per-conversation sanitization report [default: none]
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Minimum best IoU of an answer box against OCR evidence [default: 0.3, or the config value]
    #[arg(long)]
    iou_floor: Option<f64>,
    /// Phrase to strip from turns, replacing the configured list (repeatable) [default: "based on the paddleocr", "according to the ocr"]
    #[arg(long = "banned-phrase", value_name = "TEXT")]
    banned_phrases: Vec<String>,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("output").required(true).multiple(true).args(["report", "questions_out"])))]
struct EvalArgs {
    /// Line-delimited {qid, image, question, answers, gt_boxes?} records [required]
    #[arg(long, value_name = "FILE")]
    benchmark: PathBuf,
    /// Line-delimited {qid, response} records [required with --report]
    #[arg(long, value_name = "FILE", requires = "report")]
    responses: Option<PathBuf>,
    /// Output report with aggregate and per-question sections [default: none]
    #[arg(long, value_name = "FILE", requires = "responses")]
    report: Option<PathBuf>,
    /// Write the questions with the grounding request appended [default: none]
    #[arg(long, value_name = "FILE")]
    questions_out: Option<PathBuf>,
    /// Directory for per-question SVG overlays; needs image_width/image_height in the benchmark [default: none]
    #[arg(long, value_name = "DIR", requires = "report")]
    overlays: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    /// Dataset of samples [required]
    #[arg(long, value_name = "FILE")]
    samples: PathBuf,
    /// Output {id, text} records [required]
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Dataset of samples [required]
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Output JSON report [required]
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pretrain(_) => "pretrain",
            Command::Dedup(_) => "dedup",
            Command::FinetunePrompts(_) => "finetune-prompts",
            Command::FinetuneBuild(_) => "finetune-build",
            Command::Eval(_) => "eval",
            Command::Render(_) => "render",
            Command::Stats(_) => "stats",
        }
    }

    /// Copies command-specific flags over the loaded config.
    fn apply(&self, cfg: &mut ForgeConfig) {
        match self {
            Command::Pretrain(a) => {
                set(&mut cfg.min_area, a.min_area);
                set(&mut cfg.tasks, a.tasks.clone().map(|t| t.into_iter().collect()));
                set(&mut cfg.detection_cap, a.detection_cap);
                set(&mut cfg.recognition_cap, a.recognition_cap);
                if a.templates.is_some() {
                    cfg.templates = a.templates.clone();
                }
            }
            Command::FinetunePrompts(a) => {
                if a.instructions.is_some() {
                    cfg.instructions = a.instructions.clone();
                }
                set(&mut cfg.model, a.model.clone());
                set(&mut cfg.max_in_flight, a.max_in_flight);
                set(&mut cfg.max_attempts, a.max_attempts);
            }
            Command::FinetuneBuild(a) => {
                set(&mut cfg.iou_floor, a.iou_floor);
                if !a.banned_phrases.is_empty() {
                    cfg.banned_phrases = a.banned_phrases.clone();
                }
            }
            _ => {}
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn effective_config(cli: &Cli) -> Result<ForgeConfig, Error> {
    let mut cfg = match &cli.global.config {
        Some(path) => ForgeConfig::load(path)?,
        None => {
            let mut c = ForgeConfig::default();
            if let Some(m) = model_from_env() {
                c.model = m;
            }
            c
        }
    };
    set(&mut cfg.seed, cli.global.seed);
    cli.command.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn chat_client(cfg: &ForgeConfig, stub: Option<&Path>) -> Result<Box<dyn ChatClient>, Error> {
    Ok(match stub {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
            let stub = StubClient::from_reader(std::io::BufReader::new(file))
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            Box::new(stub)
        }
        None => Box::new(HttpChatClient::from_env(Duration::from_secs(cfg.request_timeout_secs)).map_err(
            |e| match e {
                ClientError::Config(m) => Error::Usage(format!("client configuration: {m}")),
                other => Error::Client(other),
            },
        )?),
    })
}

fn run(cli: &Cli, cfg: &ForgeConfig) -> Result<(), Error> {
    let exec = if cli.global.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel.effective()
    };
    match &cli.command {
        Command::Pretrain(a) => {
            let s = pipeline::run_pretrain(cfg, &a.ocr, a.manifest.as_deref(), &a.out, exec)?;
            log::info!(
                "{} documents, {} below area threshold, {} not retained, {} skipped, {} samples",
                s.documents,
                s.below_area,
                s.not_retained,
                s.skipped.len(),
                s.samples
            );
        }
        Command::Dedup(a) => {
            let s = pipeline::run_dedup(&a.ocr, &a.image_root, &a.out, exec)?;
            log::info!(
                "{} entries, {} kept, {} duplicates, {} unreadable",
                s.entries,
                s.kept,
                s.dropped,
                s.unreadable
            );
        }
        Command::FinetunePrompts(a) => {
            let client = match &a.completions {
                Some(_) => Some(chat_client(cfg, a.stub.as_deref())?),
                None => None,
            };
            let request = client.as_deref().zip(a.completions.as_deref());
            let s = pipeline::run_finetune_prompts(cfg, &a.captions, &a.ocr, &a.out, request)?;
            log::info!("{} prompts, {} images without OCR", s.prompts, s.without_ocr.len());
        }
        Command::FinetuneBuild(a) => {
            let s = pipeline::run_finetune_build(cfg, &a.completions, &a.ocr, &a.out, a.report.as_deref())?;
            log::info!(
                "{} completions, {} kept, {} rejected, {} phrases removed, {} pairs dropped",
                s.completions,
                s.kept,
                s.rejected,
                s.removed_phrases,
                s.dropped_turn_pairs
            );
        }
        Command::Eval(a) => {
            let outputs = EvalOutputs {
                responses: a.responses.as_deref(),
                report: a.report.as_deref(),
                questions: a.questions_out.as_deref(),
                overlays: a.overlays.as_deref(),
            };
            if let Some(agg) = pipeline::run_eval(&a.benchmark, &outputs, exec)? {
                log::info!("accuracy {:.3} ({}/{})", agg.accuracy, agg.correct, agg.total);
            }
        }
        Command::Render(a) => {
            let n = pipeline::run_render(&a.samples, &a.out)?;
            log::info!("{n} training strings");
        }
        Command::Stats(a) => {
            let n = pipeline::run_stats(&a.dataset, &a.out)?;
            log::info!("{n} conversations");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = effective_config(&cli).and_then(|cfg| {
        eprintln!(
            "groundforge {} {}: seed={} config={}",
            env!("CARGO_PKG_VERSION"),
            cli.command.name(),
            cfg.seed,
            cfg.digest()
        );
        with_workers(cli.global.workers, || run(&cli, &cfg))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

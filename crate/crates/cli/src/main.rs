//! `fovlink`: run the detection and localization experiments, simulate the
//! V2V dialogue, and render reports.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or schema
//! error, 3 backend exhausted (every query failed).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use fovlink_core::dataset::{FsImages, ImageSource, ManifestError, PathStubImages};
use fovlink_core::experiments::{
    run_binary_experiment, run_localization_experiment, run_prompt_comparison, ExperimentConfig,
    ExperimentError,
};
use fovlink_core::gateway::{FixtureError, GatewayError, OpenAiCompatBackend};
use fovlink_core::perception::ExpectedFormat;
use fovlink_core::report::{emit_report, load_bundle, RenderTarget, ReportBundle, ReportError};
use fovlink_core::v2v::{
    compare_transport, run_dialogue, DialogueOptions, ScenarioConfig, V2vError,
};
use fovlink_core::{
    apply_curation_filter, load_manifest, Gateway, MockBackend, PromptId, QueryParams, SceneSet,
};

#[derive(Debug, Parser)]
#[command(
    name = "fovlink",
    version,
    about = "Pedestrian detection experiments and V2V dialogue simulation"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalOpts {
    /// Maximum concurrent model queries.
    #[arg(long, global = true, default_value_t = 1)]
    parallelism: usize,
    #[arg(long, global = true, default_value_t = 300)]
    max_tokens: u32,
    #[arg(long, global = true, default_value_t = 0.0)]
    temperature: f64,
    /// Per-request timeout in seconds.
    #[arg(long, global = true, default_value_t = 60.0)]
    timeout: f64,
    /// Retries after the first attempt on timeouts, rate limits and
    /// transport errors.
    #[arg(long, global = true, default_value_t = 3)]
    retries: u32,
    /// Base backoff in seconds; doubles on every retry.
    #[arg(long, global = true, default_value_t = 1.0)]
    backoff: f64,
    #[arg(long, global = true, default_value = "gpt-4o")]
    model: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Live,
    Mock,
}

#[derive(Debug, Args)]
struct BackendOpts {
    #[arg(long, value_enum, default_value_t = BackendKind::Mock)]
    backend: BackendKind,
    /// Scripted replies for the mock backend.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Send the image path instead of the image bytes (mock backend only).
    #[arg(long)]
    stub_images: bool,
}

#[derive(Debug, Args)]
struct RunOpts {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    backend: BackendOpts,
    /// Runs per prompt.
    #[arg(long, default_value_t = 3)]
    runs: u32,
    /// Pairwise IoU below which runs on one scene are flagged inconsistent.
    #[arg(long, default_value_t = 0.5)]
    consistency_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CurationOpts {
    /// Keep only pedestrian scenes carrying this tag (repeatable).
    #[arg(long = "require-tag")]
    require_tags: Vec<String>,
    /// Drop pedestrian scenes with more than one ground-truth box.
    #[arg(long)]
    single_box: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Binary detection over pedestrian and control scenes.
    Exp1 {
        #[arg(long, default_value = "BIN")]
        prompt: PromptId,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Localization with one coordinate prompt.
    Exp2 {
        #[arg(long, default_value = "P1")]
        prompt: PromptId,
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        curation: CurationOpts,
    },
    /// Localization compared across coordinate prompts.
    Exp3 {
        #[arg(long, value_delimiter = ',', default_value = "P1,P2,P3")]
        prompts: Vec<PromptId>,
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        curation: CurationOpts,
    },
    /// One query/response round between an ego vehicle and its remotes.
    V2v {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        backend: BackendOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render a report from a results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "csv,svg")]
        targets: Vec<String>,
        /// Defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Exhausted(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Exhausted(_) => 3,
        }
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FixtureError> for CliError {
    fn from(e: FixtureError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::UnknownTarget(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(_) | GatewayError::InvalidRequest(_) => {
                CliError::Usage(e.to_string())
            }
            _ if e.is_query_fault() => CliError::Exhausted(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::AllQueriesFailed(_) => CliError::Exhausted(e.to_string()),
            ExperimentError::InvalidConfig(_)
            | ExperimentError::WrongPromptFormat { .. }
            | ExperimentError::EmptyPromptList => CliError::Usage(e.to_string()),
            ExperimentError::Gateway(g) => g.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<V2vError> for CliError {
    fn from(e: V2vError) -> Self {
        match e {
            V2vError::Gateway(g) => g.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl GlobalOpts {
    fn params(&self) -> Result<QueryParams, CliError> {
        let secs = |v: f64, name: &str| {
            Duration::try_from_secs_f64(v).map_err(|_| {
                CliError::Usage(format!("--{name} must be a non-negative number of seconds"))
            })
        };
        let params = QueryParams {
            model_name: self.model.clone(),
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            timeout: secs(self.timeout, "timeout")?,
            max_retries: self.retries,
            backoff_base: secs(self.backoff, "backoff")?,
        };
        params.validate()?;
        Ok(params)
    }
}

fn gateway(opts: &BackendOpts) -> Result<Gateway, CliError> {
    match (opts.backend, &opts.fixture) {
        (BackendKind::Mock, Some(path)) => {
            Ok(Gateway::new(Arc::new(MockBackend::from_path(path)?)))
        }
        (BackendKind::Mock, None) => Err(CliError::Usage("--backend mock needs --fixture".into())),
        (BackendKind::Live, Some(_)) => Err(CliError::Usage(
            "--fixture only applies to --backend mock".into(),
        )),
        (BackendKind::Live, None) if opts.stub_images => Err(CliError::Usage(
            "--stub-images only applies to --backend mock".into(),
        )),
        (BackendKind::Live, None) => Ok(Gateway::new(Arc::new(OpenAiCompatBackend::from_env()?))),
    }
}

fn images(opts: &BackendOpts, manifest: &Path) -> Box<dyn ImageSource> {
    if opts.stub_images {
        Box::new(PathStubImages)
    } else {
        Box::new(FsImages::for_manifest(manifest))
    }
}

fn config(global: &GlobalOpts, run: &RunOpts) -> Result<ExperimentConfig, CliError> {
    let cfg = ExperimentConfig {
        runs_per_prompt: run.runs,
        parallelism: global.parallelism,
        params: global.params()?,
        consistency_threshold: run.consistency_threshold,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn localization_scenes(all: &SceneSet, curation: &CurationOpts) -> SceneSet {
    let tags: BTreeSet<String> = curation.require_tags.iter().cloned().collect();
    let mut set = apply_curation_filter(all, &tags, curation.single_box.then_some(1));
    set.negatives.clear();
    set
}

fn check_format(
    prompts: &[PromptId],
    expected: ExpectedFormat,
    flag: &str,
) -> Result<(), CliError> {
    match prompts
        .iter()
        .find(|p| p.spec().expected_format != expected)
    {
        Some(p) => Err(CliError::Usage(format!(
            "{flag} {p} does not fit this experiment"
        ))),
        None => Ok(()),
    }
}

fn finish(bundle: &ReportBundle, targets: &[RenderTarget], out: &Path) -> Result<(), CliError> {
    let emitted = emit_report(bundle, targets, out)?;
    if emitted.empty {
        eprintln!("warning: no results; wrote headers only");
    }
    let faults = bundle
        .records
        .iter()
        .filter(|r| r.status == "fault")
        .count();
    if faults > 0 {
        eprintln!(
            "warning: {faults} of {} queries faulted and were left out of scoring",
            bundle.records.len()
        );
    }
    for path in &emitted.written {
        println!("{}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Exp1 { prompt, run } => {
            check_format(&[prompt], ExpectedFormat::YesNo, "--prompt")?;
            let cfg = config(g, &run)?;
            let gw = gateway(&run.backend)?;
            let scenes = load_manifest(&run.manifest)?;
            let imgs = images(&run.backend, &run.manifest);
            let outcome = run_binary_experiment(&scenes, prompt, &gw, imgs.as_ref(), &cfg)?;
            let bundle = ReportBundle::from_binary("exp1", &outcome, cfg.consistency_threshold)?;
            finish(&bundle, &RenderTarget::ALL, &run.out)
        }
        Command::Exp2 {
            prompt,
            run,
            curation,
        } => {
            check_format(&[prompt], ExpectedFormat::CoordinateTemplate, "--prompt")?;
            let cfg = config(g, &run)?;
            let gw = gateway(&run.backend)?;
            let all = load_manifest(&run.manifest)?;
            let scenes = localization_scenes(&all, &curation);
            let imgs = images(&run.backend, &run.manifest);
            let outcome = run_localization_experiment(&scenes, prompt, &gw, imgs.as_ref(), &cfg)?;
            let bundle = ReportBundle::from_localization(
                "exp2",
                &[outcome],
                &all,
                cfg.consistency_threshold,
            )?;
            finish(&bundle, &RenderTarget::ALL, &run.out)
        }
        Command::Exp3 {
            prompts,
            run,
            curation,
        } => {
            check_format(&prompts, ExpectedFormat::CoordinateTemplate, "--prompts")?;
            let cfg = config(g, &run)?;
            let gw = gateway(&run.backend)?;
            let all = load_manifest(&run.manifest)?;
            let scenes = localization_scenes(&all, &curation);
            let imgs = images(&run.backend, &run.manifest);
            let cmp = run_prompt_comparison(&scenes, &prompts, &gw, imgs.as_ref(), &cfg)?;
            let bundle = ReportBundle::from_localization(
                "exp3",
                &cmp.outcomes,
                &all,
                cfg.consistency_threshold,
            )?;
            finish(&bundle, &RenderTarget::ALL, &run.out)
        }
        Command::V2v {
            scenario,
            backend,
            out,
        } => {
            let text = std::fs::read_to_string(&scenario)
                .map_err(|e| CliError::Data(format!("{}: {e}", scenario.display())))?;
            let cfg = ScenarioConfig::from_json_str(&text)?;
            let sc = cfg.scenario()?;
            let gw = gateway(&backend)?;
            let manifest = cfg.manifest_path(&scenario);
            let scenes = load_manifest(&manifest)?;
            let imgs = images(&backend, &manifest);
            let options = DialogueOptions {
                params: g.params()?,
                start_ms: cfg.start_ms,
                parallelism: g.parallelism.max(1),
            };
            let transcript = run_dialogue(
                &sc,
                &scenes,
                cfg.prompt_id,
                &gw,
                &cfg.link,
                imgs.as_ref(),
                &options,
            )?;
            transcript.validate()?;
            let comparison = compare_transport(&transcript.image_sizes, &transcript, &cfg.link);
            let bundle = ReportBundle::from_dialogue(&transcript, comparison);
            finish(&bundle, &RenderTarget::ALL, &out)
        }
        Command::Report {
            input,
            targets,
            out,
        } => {
            let targets = targets
                .iter()
                .map(|t| t.parse::<RenderTarget>())
                .collect::<Result<Vec<_>, _>>()?;
            let bundle = load_bundle(&input)?;
            let out = out.unwrap_or(input);
            let emitted = emit_report(&bundle, &targets, &out)?;
            if emitted.empty {
                eprintln!("warning: no results; wrote headers only");
            }
            for path in &emitted.written {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

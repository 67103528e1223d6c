//! The `sparkle` command line.
//!
//! Exit codes: 0 success, 1 failure, 2 invalid configuration, 3 replay
//! divergence. Failures print `{"error": {...}}` on stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sparkle_core::config::load_config;
use sparkle_core::engine::EngineError;
use sparkle_core::llm::{read_transcript, LiveBackend, ProviderConfig, ReplayBackend};
use sparkle_core::persistence::RunDir;
use sparkle_core::replay::verify_run_dir;
use sparkle_core::views::{self, ExportKind};
use sparkle_core::{Ablation, ConfigBundle, ConfigError, Provider, RunOptions, Script, Simulation};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sparkle", version, about = "Agent-based social media simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Live,
    Scripted,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    None,
    NoDailyLife,
    NoSocialHabits,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::None => Ablation::None,
            AblationArg::NoDailyLife => Ablation::NoDailyLife,
            AblationArg::NoSocialHabits => Ablation::NoSocialHabits,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct ProviderArgs {
    #[arg(long, value_enum, default_value = "scripted")]
    pub provider: ProviderKind,
    /// Script for `scripted`, transcript for `replay`.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Chat-completion endpoint for `live`.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a configuration and print its validation report.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a simulation to completion into a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "none")]
        ablate: AblationArg,
    },
    /// Re-execute a run against its recorded transcript.
    Replay {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Write one JSON-lines export of a run.
    Export {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        what: String,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long, value_enum, default_value = "none")]
        ablate: AblationArg,
    },
}

/// A failure with its exit code and machine-readable body.
#[derive(Debug)]
pub struct Failure {
    pub exit: i32,
    pub body: Value,
}

impl Failure {
    fn new(exit: i32, code: &str, message: impl Into<String>) -> Self {
        Self {
            exit,
            body: json!({"error": {"code": code, "message": message.into()}}),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        let code = if e.kind() == std::io::ErrorKind::NotFound { "NOT_FOUND" } else { "STORAGE_ERROR" };
        Self::new(EXIT_FAILURE, code, format!("{}: {e}", path.display()))
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let mut f = Self::new(EXIT_INVALID, e.code(), e.to_string());
        if let ConfigError::Invalid(report) = &e {
            f.body["error"]["report"] = serde_json::to_value(report).expect("report serializes");
        }
        f
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(c) => c.into(),
            other => Self::new(EXIT_FAILURE, other.code(), other.to_string()),
        }
    }
}

fn read_config(path: &Path) -> Result<ConfigBundle, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    Ok(ConfigBundle::load_valid(&text)?)
}

pub fn build_provider(args: &ProviderArgs) -> Result<Provider, Failure> {
    let need_script = || {
        args.script
            .as_deref()
            .ok_or_else(|| Failure::new(EXIT_FAILURE, "BAD_REQUEST", "--script is required for this provider"))
    };
    match args.provider {
        ProviderKind::Scripted => {
            let path = need_script()?;
            let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            let script = Script::from_json(&text)
                .map_err(|e| Failure::new(EXIT_FAILURE, "PARSE_ERROR", format!("{}: {e}", path.display())))?;
            Ok(Provider::scripted(script))
        }
        ProviderKind::Replay => {
            let path = need_script()?;
            let transcript = read_transcript(path).map_err(|e| Failure::io(path, e))?;
            Ok(Provider::new(Box::new(ReplayBackend::new(&transcript))))
        }
        ProviderKind::Live => {
            let mut config = ProviderConfig::default();
            if let Some(e) = &args.endpoint {
                config.endpoint = e.clone();
            }
            if let Some(m) = &args.model {
                config.model_name = m.clone();
            }
            let retries = config.max_retries;
            let backend =
                LiveBackend::new(config).map_err(|e| Failure::new(EXIT_FAILURE, "PROVIDER_UNAVAILABLE", e.to_string()))?;
            Ok(Provider::with_retries(Box::new(backend), retries))
        }
    }
}

fn validate(config: &Path) -> Result<Value, Failure> {
    let text = fs::read_to_string(config).map_err(|e| Failure::io(config, e))?;
    let bundle = load_config(&text)?;
    let report = bundle.validate();
    if report.is_empty() {
        Ok(json!({"valid": true, "report": report}))
    } else {
        Err(ConfigError::Invalid(report).into())
    }
}

fn run(
    config: &Path,
    out: &Path,
    provider: &ProviderArgs,
    seed: Option<u64>,
    ablate: AblationArg,
) -> Result<Value, Failure> {
    let mut bundle = read_config(config)?;
    if let Some(seed) = seed {
        bundle.simulation.random_seed = seed;
    }
    let provider = Arc::new(build_provider(provider)?);
    let options = RunOptions {
        ablation: ablate.into(),
    };
    let mut sim = Simulation::new(bundle, options, provider)?;
    sim.attach_dir(out)?;
    let state = sim.run_to_end()?.clone();
    Ok(json!({
        "run_id": state.run_id,
        "status": state.status,
        "ticks": state.current_tick,
        "records": sim.log().len(),
        "run_dir": out.display().to_string(),
    }))
}

fn replay(run_dir: &Path) -> Result<Value, Failure> {
    let report = verify_run_dir(run_dir)?;
    let body = serde_json::to_value(&report).expect("report serializes");
    if report.matches() {
        Ok(json!({"verified": true, "report": body}))
    } else {
        let seq = report.divergence.as_ref().map(|d| d.seq);
        Err(Failure {
            exit: EXIT_DIVERGED,
            body: json!({"error": {
                "code": "REPLAY_DIVERGED",
                "message": format!("log diverges at sequence {}", seq.unwrap_or_default()),
                "divergent_seq": seq,
                "report": body,
            }}),
        })
    }
}

fn export(run_dir: &Path, what: &str, out: Option<&Path>) -> Result<Option<Value>, Failure> {
    let kind: ExportKind = what.parse().map_err(|e: views::ViewError| Failure::new(EXIT_FAILURE, e.code(), e.to_string()))?;
    let log = RunDir::open(run_dir)
        .and_then(|d| d.read_log())
        .map_err(|e| Failure::new(EXIT_FAILURE, e.code(), e.to_string()))?;
    let doc = views::export(&log, kind);
    match out {
        Some(path) => {
            fs::write(path, doc).map_err(|e| Failure::io(path, e))?;
            Ok(Some(json!({"written": path.display().to_string()})))
        }
        None => {
            print!("{doc}");
            Ok(None)
        }
    }
}

fn serve(
    config: &Path,
    data_dir: &Path,
    listen: &str,
    provider: &ProviderArgs,
    ablate: AblationArg,
) -> Result<Value, Failure> {
    let bundle = read_config(config)?;
    let provider = Arc::new(build_provider(provider)?);
    let options = RunOptions {
        ablation: ablate.into(),
    };
    let mut sim = Simulation::new(bundle, options, provider)?;
    sim.attach_store(data_dir)?;
    let session = sparkle_server::Session::new(sim);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new(EXIT_FAILURE, "INTERNAL", e.to_string()))?;
    runtime
        .block_on(async {
            let listener = tokio::net::TcpListener::bind(listen).await?;
            tracing::info!("listening on {}", listener.local_addr()?);
            sparkle_server::serve(listener, session).await
        })
        .map_err(|e| Failure::new(EXIT_FAILURE, "STORAGE_ERROR", format!("{listen}: {e}")))?;
    Ok(json!({"stopped": true}))
}

pub fn execute(cli: &Cli) -> Result<Option<Value>, Failure> {
    match &cli.command {
        Command::Validate { config } => validate(config).map(Some),
        Command::Run {
            config,
            out,
            provider,
            seed,
            ablate,
        } => run(config, out, provider, *seed, *ablate).map(Some),
        Command::Replay { run_dir } => replay(run_dir).map(Some),
        Command::Export { run_dir, what, out } => export(run_dir, what, out.as_deref()),
        Command::Serve {
            config,
            data_dir,
            listen,
            provider,
            ablate,
        } => serve(config, data_dir, listen, provider, *ablate).map(Some),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FAILURE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(Some(v)) => {
            println!("{v}");
            0
        }
        Ok(None) => 0,
        Err(f) => {
            eprintln!("{}", f.body);
            f.exit
        }
    }
}

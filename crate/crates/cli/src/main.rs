mod backend;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use gift_core::align::AlignError;
use gift_core::eval::EvalError;
use gift_core::intent::IntentError;
use gift_core::lm::LmError;
use gift_core::reward::RewardError;
use gift_core::world::WorldError;

use backend::Backend;
use commands::InvariantViolation;
use config::{BackendKind, ConfigError, PipelineConfig};

/// Learn a reward from demonstrations, infer the demonstrator's intent, and
/// evaluate how well the reward transfers to unseen objects.
#[derive(Debug, Parser)]
#[command(name = "gift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the language-model backend.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate demonstrations and nominal references.
    Gen,
    /// Fit the reward with maximum-entropy IRL.
    Learn,
    /// Infer the intent behind the demonstrations.
    Intent,
    /// Build alignment maps for the test catalog and score them.
    Align,
    /// Run the win-rate evaluation.
    Eval,
    /// Calibrate and check the reward-error bound.
    BoundCheck,
    /// Render the evaluation report and check configured expectations.
    Report,
}

const EXIT_USAGE: u8 = 1;
const EXIT_INVARIANT: u8 = 2;
const EXIT_BACKEND: u8 = 3;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| config::config_err("--config is required"))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(kind) = cli.backend {
        cfg.backend.kind = kind;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;

    let needs_lm = matches!(
        cli.command,
        Command::Intent | Command::Align | Command::Eval | Command::BoundCheck
    );
    if !needs_lm {
        return match cli.command {
            Command::Gen => commands::gen(&cfg),
            Command::Learn => commands::learn(&cfg),
            Command::Report => commands::report(&cfg),
            _ => unreachable!(),
        };
    }
    let backend = Backend::from_config(&cfg)?;
    let result = match cli.command {
        Command::Intent => commands::intent(&cfg, &backend),
        Command::Align => commands::align(&cfg, &backend),
        Command::Eval => commands::eval(&cfg, &backend),
        Command::BoundCheck => commands::bound_check(&cfg, &backend),
        _ => unreachable!(),
    };
    // Keep whatever was fetched even when the command itself failed.
    let saved = backend.finish();
    result.and(saved)
}

/// 1 for usage/config/input problems, 3 for backend failures, 2 for
/// everything else (invariant violations and internal errors).
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_USAGE;
        }
        if cause.is::<InvariantViolation>() {
            return EXIT_INVARIANT;
        }
        if let Some(code) = classify_core(cause) {
            return code;
        }
    }
    EXIT_INVARIANT
}

fn classify_core(cause: &(dyn std::error::Error + 'static)) -> Option<u8> {
    if let Some(e) = cause.downcast_ref::<LmError>() {
        return Some(lm_code(e));
    }
    if let Some(e) = cause.downcast_ref::<IntentError>() {
        return intent_code(e);
    }
    if let Some(e) = cause.downcast_ref::<AlignError>() {
        return align_code(e);
    }
    if let Some(e) = cause.downcast_ref::<WorldError>() {
        return world_code(e);
    }
    if let Some(e) = cause.downcast_ref::<RewardError>() {
        return match e {
            RewardError::World(w) => world_code(w),
            RewardError::InvalidConfig(_) => Some(EXIT_USAGE),
            _ => None,
        };
    }
    if let Some(e) = cause.downcast_ref::<EvalError>() {
        return match e {
            EvalError::Align(a) => align_code(a),
            EvalError::World(w) => world_code(w),
            EvalError::Config(_) | EvalError::InvalidTieEps => Some(EXIT_USAGE),
            _ => None,
        };
    }
    None
}

fn lm_code(e: &LmError) -> u8 {
    match e {
        LmError::Config(_) | LmError::MissingFixture(_) | LmError::Io { .. } => EXIT_USAGE,
        LmError::Transport(_) | LmError::Http { .. } | LmError::ReplayMiss(_) | LmError::Payload(_) => {
            EXIT_BACKEND
        }
    }
}

fn intent_code(e: &IntentError) -> Option<u8> {
    match e {
        IntentError::Lm(l) => Some(lm_code(l)),
        IntentError::RetriesExhausted { .. } => Some(EXIT_BACKEND),
        IntentError::Template(_) | IntentError::UnresolvedPlaceholder(_) => Some(EXIT_USAGE),
        _ => None,
    }
}

fn align_code(e: &AlignError) -> Option<u8> {
    match e {
        AlignError::Lm(l) => Some(lm_code(l)),
        AlignError::Intent(i) => intent_code(i),
        AlignError::AllRunsUnparseable(_) => Some(EXIT_BACKEND),
        AlignError::Io { .. }
        | AlignError::Json(_)
        | AlignError::WrongSpace { .. }
        | AlignError::MissingEmbedding { .. } => Some(EXIT_USAGE),
        _ => None,
    }
}

fn world_code(e: &WorldError) -> Option<u8> {
    match e {
        WorldError::Schema { .. } | WorldError::Json(_) | WorldError::Io { .. } => Some(EXIT_USAGE),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let e: anyhow::Error = config::config_err("bad");
        assert_eq!(exit_code(&e), EXIT_USAGE);
        let e: anyhow::Error = EvalError::Align(AlignError::Lm(LmError::ReplayMiss("k".into()))).into();
        assert_eq!(exit_code(&e), EXIT_BACKEND);
        let e: anyhow::Error = AlignError::Intent(IntentError::RetriesExhausted {
            attempts: 4,
            last: "x".into(),
        })
        .into();
        assert_eq!(exit_code(&e), EXIT_BACKEND);
        let e: anyhow::Error = InvariantViolation("bound".into()).into();
        assert_eq!(exit_code(&e), EXIT_INVARIANT);
        let e: anyhow::Error = RewardError::NonFiniteLoss(3).into();
        assert_eq!(exit_code(&e), EXIT_INVARIANT);
        let e: anyhow::Error = WorldError::Io {
            path: "t.json".into(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "gone"),
        }
        .into();
        assert_eq!(exit_code(&e), EXIT_USAGE);
    }

    #[test]
    fn cli_parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "gift", "eval", "--config", "c.json", "--seed", "4", "--backend", "replay", "--out", "o",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Eval));
        assert_eq!(cli.seed, Some(4));
        assert_eq!(cli.backend, Some(BackendKind::Replay));
    }
}

use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use nerscope::bundle::{load_bundle, validate_bundle, Split};
use nerscope::eval::Level;
use nerscope::session::{AnalysisSession, SessionOptions};
use nerscope::spans::DecodeMode;
use nerscope::Execution;
use nerscope_cli::commands::{self, DownsampleArgs, FixtureArgs, Format};

#[derive(Parser)]
#[command(name = "nerscope", version, about = "Diagnostic evaluation for NER systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Token,
    Entity,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Repair,
    Strict,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bundle.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        /// JSON fixture spec; flags below override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        /// Append the worked-example sentences to the test split.
        #[arg(long)]
        planted: bool,
        #[arg(long)]
        no_predictions: bool,
        #[arg(long)]
        raw_embeddings: bool,
    },
    /// Check every bundle invariant.
    Validate {
        bundle: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print a classification report.
    Score {
        bundle: PathBuf,
        #[arg(long, value_enum, default_value = "entity")]
        level: LevelArg,
        #[arg(long, value_enum, default_value = "repair")]
        scheme_mode: ModeArg,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
        /// Leave the outside label out of token-level aggregates.
        #[arg(long)]
        exclude_o: bool,
    },
    /// Write every analysis product to a directory.
    Analyze {
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50_000)]
        silhouette_cap: usize,
        #[arg(long)]
        sequential: bool,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(env = "BUNDLE_DIR")]
        bundle: PathBuf,
        #[arg(long, env = "PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50_000)]
        silhouette_cap: usize,
    },
    /// Sample sentences down to token and entity-token targets.
    Downsample {
        bundle: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        tokens: usize,
        #[arg(long)]
        entity_tokens: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CoNLL file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn session_options(seed: u64, cap: usize, sequential: bool) -> SessionOptions {
    SessionOptions {
        seed,
        silhouette_cap: cap,
        execution: if sequential { Execution::Sequential } else { Execution::default() },
        ..SessionOptions::default()
    }
}

async fn serve(bundle: PathBuf, host: String, port: u16, opts: SessionOptions) -> Result<i32> {
    let started = Instant::now();
    let b = load_bundle(&bundle).with_context(|| format!("loading {}", bundle.display()))?;
    let violations = validate_bundle(&b);
    if !violations.is_empty() {
        eprintln!("warning: bundle has {} violation(s); see /api/v1/manifest", violations.len());
    }
    let session = Arc::new(AnalysisSession::new(b, opts));
    let addr: SocketAddr = format!("{host}:{port}").parse().context("bad listen address")?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!(
        "listening on http://{} (ready in {} ms)",
        listener.local_addr()?,
        started.elapsed().as_millis()
    );
    // products are single-flight, so early requests wait on the warm-up
    let warm = session.clone();
    tokio::task::spawn_blocking(move || warm.warm());
    axum::serve(listener, nerscope_cli::api::router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(0)
}

fn run(cli: Cli) -> Result<i32> {
    let (mut out, mut err) = (io::stdout().lock(), io::stderr().lock());
    match cli.command {
        Command::Fixture {
            out: dir,
            spec,
            seed,
            train,
            test,
            planted,
            no_predictions,
            raw_embeddings,
        } => commands::fixture(
            &FixtureArgs {
                out: dir,
                spec,
                seed,
                train,
                test,
                planted,
                no_predictions,
                raw_embeddings,
            },
            &mut out,
        ),
        Command::Validate { bundle, json } => commands::validate(&bundle, json, &mut out, &mut err),
        Command::Score {
            bundle,
            level,
            scheme_mode,
            format,
            exclude_o,
        } => {
            let level = match level {
                LevelArg::Token => Level::Token,
                LevelArg::Entity => Level::Entity,
            };
            let mode = match scheme_mode {
                ModeArg::Repair => DecodeMode::Repair,
                ModeArg::Strict => DecodeMode::Discard,
            };
            let format = match format {
                FormatArg::Json => Format::Json,
                FormatArg::Text => Format::Text,
                FormatArg::Csv => Format::Csv,
            };
            commands::score(&bundle, level, mode, format, exclude_o, &mut out, &mut err)
        }
        Command::Analyze {
            bundle,
            out: dir,
            seed,
            silhouette_cap,
            sequential,
        } => commands::analyze(&bundle, &dir, session_options(seed, silhouette_cap, sequential), &mut out, &mut err),
        Command::Serve {
            bundle,
            port,
            host,
            seed,
            silhouette_cap,
        } => {
            drop((out, err));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(bundle, host, port, session_options(seed, silhouette_cap, false)))
        }
        Command::Downsample {
            bundle,
            split,
            tokens,
            entity_tokens,
            seed,
            out: file,
        } => commands::downsample(
            &DownsampleArgs {
                bundle,
                split: match split {
                    SplitArg::Train => Split::Train,
                    SplitArg::Test => Split::Test,
                },
                tokens,
                entity_tokens,
                seed,
                out: file,
            },
            &mut out,
            &mut err,
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

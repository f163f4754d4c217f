use std::path::PathBuf;

use anyhow::{Context, Result};
use cepmine_cli::commands::{self, CompleteOptions};
use cepmine_cli::service::{router, start_session};
use cepmine_core::bayes::BayesBudget;
use cepmine_core::config::RunConfig;
use cepmine_core::matcher::{DEFAULT_COUNT_CAP, DEFAULT_EQUALITY_EPS};
use cepmine_core::render_pattern;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cepmine", version, about = "Mine complex-event-processing patterns with an expert in the loop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a full training session from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a saved rank predictor on a labeled pattern file.
    Evaluate {
        /// The `checkpoints` directory of a run.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dprime: PathBuf,
        /// Also write every prediction as JSON to this file.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Train while serving the expert HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Print per-window match counts of a pattern as CSV.
    Match {
        /// Pattern text, or a file containing it.
        #[arg(long)]
        pattern: String,
        #[arg(long)]
        data: PathBuf,
        /// Schema JSON; inferred from the data when omitted.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        window_len: usize,
        /// Overrides the pattern's WITHIN clause, in seconds.
        #[arg(long)]
        within: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_COUNT_CAP)]
        cap: u64,
    },
    /// Fill the `?n` placeholders of a formula by Bayesian optimization.
    Complete {
        /// Formula text, or a file containing it.
        #[arg(long)]
        pattern: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        window_len: usize,
        #[arg(long, default_value_t = DEFAULT_COUNT_CAP)]
        cap: u64,
        #[arg(long, default_value_t = DEFAULT_EQUALITY_EPS)]
        eq_eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic stream with planted target patterns.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Targets JSON; the built-in corpus when omitted.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let summary = cepmine_core::train(&cfg, None)?;
            println!("{}", summary.output_dir.display());
        }
        Command::Evaluate { checkpoint, dprime, dump } => {
            let report = cepmine_core::evaluate(&checkpoint, &dprime)?;
            if let Some(path) = dump {
                let f = std::fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
                serde_json::to_writer_pretty(f, &report)?;
            }
            let summary = serde_json::json!({
                "acc_train": report.acc_train,
                "acc_dprime": report.acc_dprime,
                "n_train": report.n_train,
                "n_dprime": report.n_dprime,
            });
            println!("{summary}");
        }
        Command::Serve { config, port } => serve(config, port)?,
        Command::Match { pattern, data, schema, window_len, within, cap } => {
            let schema = commands::load_schema(schema.as_deref(), &data)?;
            let mut p = commands::read_pattern(&pattern, &schema)?;
            if let Some(w) = within {
                p.within_seconds = w;
            }
            let stream = commands::load_stream(&data, &schema)?;
            let counts = commands::window_counts(&p, &stream, &schema, window_len, cap)?;
            commands::write_counts(std::io::stdout().lock(), &counts)?;
        }
        Command::Complete { pattern, data, schema, window_len, cap, eq_eps, seed } => {
            let schema = commands::load_schema(schema.as_deref(), &data)?;
            let formula = commands::read_pattern(&pattern, &schema)?;
            let stream = commands::load_stream(&data, &schema)?;
            let opts = CompleteOptions { window_len, cap, eq_eps, budget: BayesBudget::default(), seed };
            let c = commands::complete_formula(&formula, &stream, &schema, &opts)?;
            println!("{}", render_pattern(&c.pattern));
            eprintln!("iteration,best_count");
            for (i, v) in c.history.iter().enumerate() {
                eprintln!("{},{v}", i + 1);
            }
            eprintln!("evaluations: {}", c.evaluations);
        }
        Command::GenData { out, targets, rows, seed } => {
            let spec = commands::load_targets(targets.as_deref())?;
            let n = commands::gen_data(&out, &spec, rows, seed)?;
            log::info!("wrote {n} rows to {}", out.display());
        }
    }
    Ok(())
}

fn serve(config: PathBuf, port: u16) -> Result<()> {
    let cfg = RunConfig::load(&config)?;
    cfg.validate()?;
    cfg.check_files()?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await.with_context(|| format!("cannot bind port {port}"))?;
        log::info!("serving on {}", listener.local_addr()?);
        let session = start_session(cfg);
        let app = router(session.state.clone());
        tokio::task::spawn_blocking(move || match session.join() {
            Ok(s) => log::info!("training finished; outputs in {}", s.output_dir.display()),
            Err(e) => log::error!("training failed: {e}"),
        });
        axum::serve(listener, app).await?;
        Ok(())
    })
}

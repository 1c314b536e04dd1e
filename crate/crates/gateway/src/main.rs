use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cascade_core::cascade::{replay, CascadeConfig};
use cascade_core::evalkit::{self, EvalRun};
use cascade_core::scorer::{score, ScoreConfig, ScoreMethod};
use cascade_core::threshold::DEFAULT_WARMUP;
use cascade_core::trace::parse_trace_stream;
use cascade_gateway::backend::{ChatCompletionsBackend, HttpSlmBackend};
use cascade_gateway::config::GatewayConfig;
use cascade_gateway::service::{read_decision_log, CascadeService};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cascade", version, about = "Small/large LM cascade gateway and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP gateway.
    Serve {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Score a trace stream (file or `-` for stdin).
    Score {
        #[arg(long, default_value = "attenh")]
        method: ScoreMethod,
        #[arg(long, default_value_t = cascade_core::scorer::DEFAULT_WINDOW_K)]
        window_k: usize,
        #[arg(default_value = "-")]
        trace: String,
    },
    /// Rerank chunks (one per line) for a query using the small model.
    Rerank {
        #[arg(long)]
        query: String,
        #[arg(long)]
        chunks: PathBuf,
        #[arg(long, env = "CASCADE_SLM_URL")]
        slm_url: String,
    },
    /// Evaluate detector scores against Rouge-L labels.
    Eval {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated methods; defaults to every method present in all records.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long, default_value_t = evalkit::DEFAULT_ROUGE_TAU)]
        tau: f64,
    },
    /// Re-run a decision log and check every decision is reproduced.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WARMUP)]
        warmup: u32,
        #[arg(long)]
        budget_fraction: Option<f64>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Serve { config } => {
            let cfg = GatewayConfig::load(&config)?;
            runtime()?.block_on(serve(cfg))?;
        }
        Command::Score { method, window_k, trace } => {
            let cfg = ScoreConfig::new(window_k).context("--window-k must be at least 1")?;
            let input: Box<dyn Read> = if trace == "-" {
                Box::new(io::stdin())
            } else {
                Box::new(File::open(&trace).with_context(|| format!("opening {trace}"))?)
            };
            let trace = parse_trace_stream(BufReader::new(input))?;
            let s = score(&trace, method, &cfg)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Rerank { query, chunks: path, slm_url } => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let chunks: Vec<String> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_owned)
                .collect();
            if chunks.is_empty() {
                bail!("no chunks in {}", path.display());
            }
            // the large model is never called when only reranking
            let cfg = GatewayConfig::new(slm_url, "http://unused", "unused");
            let slm = Arc::new(HttpSlmBackend::new(&cfg.slm));
            let llm = Arc::new(ChatCompletionsBackend::new(&cfg.llm));
            let result = runtime()?.block_on(async {
                let svc = CascadeService::new(cfg, slm, llm).await?;
                svc.rerank_chunks(&query, &chunks).await
            })?;
            println!("{}", serde_json::to_string(&result)?);
        }
        Command::Eval { records, out, methods, tau } => {
            let file = File::open(&records).with_context(|| format!("opening {}", records.display()))?;
            let dataset = evalkit::read_dataset(BufReader::new(file))?;
            let methods = if methods.is_empty() {
                EvalRun::common_methods(&dataset)
            } else {
                methods
            };
            if methods.is_empty() {
                bail!("no scoring methods shared by all records");
            }
            let run = EvalRun::from_dataset(&dataset, &methods, tau)?;
            let report = evalkit::report(&run)?;
            print!("{report}");
            if let Some(out) = out {
                let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
                report.write_csv(f)?;
            }
        }
        Command::Replay { log, warmup, budget_fraction } => {
            let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let recorded = read_decision_log(&text)?;
            let mismatches = replay(CascadeConfig { warmup, budget_fraction }, &recorded)?;
            println!("{} decisions replayed, {} mismatches", recorded.len(), mismatches.len());
            for m in &mismatches {
                println!(
                    "seq {}: recorded {:?} (theta {:?}), replayed {:?} (theta {:?})",
                    m.seq, m.recorded.route, m.recorded.theta, m.replayed.route, m.replayed.theta
                );
            }
            if !mismatches.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

async fn serve(cfg: GatewayConfig) -> Result<()> {
    if let Some(var) = &cfg.llm.api_key_env {
        if std::env::var(var).is_err() {
            tracing::warn!("{var} is not set; LLM calls will fail and fall back to the small model");
        }
    }
    let listen = cfg.listen.clone();
    let slm = Arc::new(HttpSlmBackend::new(&cfg.slm));
    let llm = Arc::new(ChatCompletionsBackend::new(&cfg.llm));
    let svc = Arc::new(CascadeService::new(cfg, slm, llm).await?);
    let listener = tokio::net::TcpListener::bind(&listen)
        .await
        .with_context(|| format!("binding {listen}"))?;
    tracing::info!("listening on {listen}");
    axum::serve(listener, cascade_gateway::http::router(svc)).await?;
    Ok(())
}

mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use memorb_core::evalkit::{
    load_suite, run_protocol, save_suite, transfer_suite, EvalReport, ProtocolOptions, ProtocolReflector,
};
use memorb_core::{ErrorKind, MemoryEngine, RetrievalRequest, Trajectory};
use memorb_server::config::ServiceConfig;
use memorb_server::{EpisodeIngestRequest, EpisodeIngestResponse, RetrieveResponse};
use serde::Serialize;

use settings::FlagOverrides;

#[derive(Parser)]
#[command(name = "memorb", version, about = "Reflection memory for frozen LLM agents")]
struct Cli {
    /// key=value settings file (for example memorb.toml).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true, value_name = "BOOL")]
    cross_user: Option<bool>,
    #[arg(long, global = true, value_name = "URL")]
    llm_endpoint: Option<String>,
    #[arg(long, global = true, value_name = "URL")]
    embed_endpoint: Option<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distill a finished episode into an orb and store it.
    Ingest {
        /// A trajectory, or an object {"trajectory", "memory_context", "now"}.
        file: PathBuf,
        #[arg(long)]
        memory_context: Option<String>,
    },
    /// Rank stored reflections against a message.
    Query {
        #[arg(long = "q", value_name = "TEXT")]
        q: String,
        #[arg(long)]
        context: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        user: Option<String>,
    },
    /// Run the multi-trial protocol over a task suite and write reports.
    Eval {
        #[arg(long, value_name = "FILE")]
        tasks: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long)]
        no_memory: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "eval-out", value_name = "DIR")]
        out: PathBuf,
    },
    /// Write the synthetic transfer suite as JSON.
    GenSuite {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        out: PathBuf,
    },
    /// Start the HTTP service.
    Serve {
        /// Overrides LISTEN_ADDR.
        #[arg(long, value_name = "ADDR")]
        listen: Option<String>,
    },
    /// Compact the orb log and write the vector snapshot.
    Snapshot,
    /// Print store counts and settings.
    Stats,
}

enum Failure {
    Input(String),
    Engine(memorb_core::Error),
    Bind(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Engine(e) => match e.kind() {
                ErrorKind::Input => 2,
                ErrorKind::Adapter => 3,
                ErrorKind::Storage => 4,
            },
            Failure::Bind(_) => 5,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Input(m) | Failure::Bind(m) => m.clone(),
            Failure::Engine(e) => e.to_string(),
        }
    }
}

impl From<memorb_core::Error> for Failure {
    fn from(e: memorb_core::Error) -> Self {
        Failure::Engine(e)
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let flags = FlagOverrides {
        data_dir: cli.data_dir.clone(),
        dim: cli.dim,
        k: None,
        cross_user: cli.cross_user,
        llm_endpoint: cli.llm_endpoint.clone(),
        embed_endpoint: cli.embed_endpoint.clone(),
    };
    let config = settings::resolve(cli.config.as_deref(), |key| std::env::var(key).ok(), &flags)
        .map_err(Failure::Input)?;
    let json = cli.json;

    match cli.command {
        Command::Ingest { file, memory_context } => ingest(&config, &file, memory_context, json),
        Command::Query { q, context, k, user } => {
            let mut request = RetrievalRequest::new(q);
            request.context = context.unwrap_or_default();
            request.k = k;
            request.requesting_user = user;
            query(&config, &request, json)
        }
        Command::Eval { tasks, trials, no_memory, seed, out } => {
            let options = ProtocolOptions { trials, memory_enabled: !no_memory, seed };
            eval(&config, &tasks, options, &out, json)
        }
        Command::GenSuite { seed, out } => {
            let tasks = transfer_suite(seed);
            save_suite(&out, &tasks)?;
            if json {
                print_json(&serde_json::json!({ "path": out, "tasks": tasks.len() }));
            } else {
                println!("wrote {} tasks to {}", tasks.len(), out.display());
            }
            Ok(())
        }
        Command::Serve { listen } => serve(config, listen),
        Command::Snapshot => {
            let engine = config.open_engine()?;
            engine.snapshot()?;
            let stats = engine.stats();
            if json {
                print_json(&stats);
            } else {
                println!("snapshot written: {} orbs, {} vectors", stats.orb_count, stats.vector_count);
            }
            Ok(())
        }
        Command::Stats => {
            print_json(&config.open_engine()?.stats());
            Ok(())
        }
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn read_episode(path: &Path) -> Result<EpisodeIngestRequest, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let parsed = if value.get("trajectory").is_some() {
        serde_json::from_value::<EpisodeIngestRequest>(value)
    } else {
        serde_json::from_value::<Trajectory>(value).map(|trajectory| EpisodeIngestRequest {
            trajectory,
            memory_context: None,
            now: None,
        })
    };
    parsed.map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn ingest(config: &ServiceConfig, file: &Path, memory_context: Option<String>, json: bool) -> Result<(), Failure> {
    let request = read_episode(file)?;
    let engine = config.open_engine()?;
    let memory_context = memory_context.or(request.memory_context).unwrap_or_default();
    let outcome = engine.ingest(&request.trajectory, &memory_context, request.now)?;
    let response = EpisodeIngestResponse {
        orb_id: outcome.orb.id().clone(),
        created: outcome.created,
        validation: outcome.validation,
    };
    if json {
        print_json(&response);
    } else {
        println!("{}", response.orb_id);
        println!("created={}", response.created);
        println!(
            "prefix_ok={} new_plan_ok={}",
            response.validation.prefix_ok, response.validation.new_plan_ok
        );
        for error in &response.validation.errors {
            println!("validation: {error}");
        }
    }
    Ok(())
}

const EXCERPT_CHARS: usize = 80;

fn excerpt(text: &str) -> String {
    let line = text.lines().next().unwrap_or("");
    if line.chars().count() > EXCERPT_CHARS {
        let cut: String = line.chars().take(EXCERPT_CHARS).collect();
        format!("{cut}...")
    } else {
        line.to_owned()
    }
}

fn query(config: &ServiceConfig, request: &RetrievalRequest, json: bool) -> Result<(), Failure> {
    let engine = config.open_engine()?;
    let response = RetrieveResponse::from(engine.retrieve(request)?);
    if json {
        print_json(&response);
    } else if response.hits.is_empty() {
        println!("0 hits");
    } else {
        for (rank, hit) in response.hits.iter().enumerate() {
            println!(
                "{}\t{:.6}\t{}\t{}",
                rank + 1,
                hit.score,
                hit.orb_id.short(),
                excerpt(&hit.outcome)
            );
        }
    }
    Ok(())
}

fn eval(
    config: &ServiceConfig,
    tasks: &Path,
    options: ProtocolOptions,
    out: &Path,
    json: bool,
) -> Result<(), Failure> {
    let suite = load_suite(tasks).map_err(|e| Failure::Input(e.to_string()))?;
    let adapters = config
        .adapters()?
        .with_reflector(Arc::new(ProtocolReflector::for_tasks(&suite)));
    let engine_config = memorb_core::EngineConfig {
        data_dir: None,
        ..config.engine_config()
    };
    let engine = MemoryEngine::in_memory(engine_config, adapters)?;
    let records = run_protocol(&suite, options, &engine)?;
    let report = EvalReport::from_records(&records)?;
    let written = report.write(out, &records)?;

    if json {
        print_json(&report);
        return Ok(());
    }
    println!(
        "tasks={} trials={} memory={} seed={}",
        report.tables.tasks,
        options.trials,
        if options.memory_enabled { "on" } else { "off" },
        options.seed
    );
    let row = |values: &[f64]| {
        values.iter().map(|v| format!("{:6.2}", v * 100.0)).collect::<Vec<_>>().join(" ")
    };
    println!("per_trial  {}", row(&report.tables.per_trial));
    println!("cumulative {}", row(&report.tables.cumulative));
    for pass in &report.pass_k {
        println!("pass^{} {:.6}", pass.k, pass.expectation);
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn serve(config: ServiceConfig, listen: Option<String>) -> Result<(), Failure> {
    let addr = listen.unwrap_or_else(|| config.listen_addr.clone());
    let engine = Arc::new(config.open_engine()?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Bind(format!("runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Failure::Bind(format!("cannot bind {addr}: {e}")))?;
        println!("listening on {}", listener.local_addr().map_err(|e| Failure::Bind(e.to_string()))?);
        memorb_server::serve(listener, engine)
            .await
            .map_err(|e| Failure::Engine(e.into()))
    })
}

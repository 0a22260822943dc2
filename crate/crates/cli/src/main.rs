//! `coldstart`: one subcommand per pipeline stage, handing off through files below
//! `--out`. Exit codes: 0 success, 1 usage, 2 data validation, 3 numerical failure.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coldstart_core::recommend::Strategy;
use coldstart_core::stages::{self, Workspace};
use coldstart_core::{Error, Split};
use coldstart_serve::{AppState, Snapshot, DEFAULT_LISTEN, LISTEN_ENV, SNAPSHOT_ENV};

use config::{load_config, Overrides};

#[derive(Parser)]
#[command(name = "coldstart", version, about = "Cold-start user recommendation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// Workspace root; every stage reads and writes its artifacts below it.
    #[arg(long, default_value = "coldstart-out")]
    out: PathBuf,
    /// Dataset bundle directory [default: <out>/data].
    #[arg(long)]
    data: Option<PathBuf>,
    /// TOML file overlaying the default settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Embedding space: ut-als, tt-svd or a space shipped with the bundle.
    #[arg(long)]
    space: Option<String>,
    /// Length of recommendation and segment lists.
    #[arg(long)]
    top_k: Option<usize>,
}

impl Common {
    fn workspace(&self) -> Workspace {
        Workspace::new(&self.out, self.data.clone())
    }

    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            space: self.space.clone(),
            top_k: self.top_k,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bundle with planted genre structure into the data directory.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        genres: Option<usize>,
        #[arg(long)]
        tracks: Option<usize>,
        #[arg(long)]
        warm_users: Option<usize>,
        #[arg(long)]
        cold_users: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Train (or adopt the bundle's) track and warm-user vectors.
    TrainEmbeddings {
        #[command(flatten)]
        common: Common,
    },
    /// Cluster warm users and rank each segment's top tracks.
    Segment {
        #[command(flatten)]
        common: Common,
    },
    /// Fit entity and demographic vectors and build warm and cold input features.
    BuildFeatures {
        #[command(flatten)]
        common: Common,
    },
    /// Train the feature-to-embedding regressor and predict cold-user vectors.
    TrainRegressor {
        #[command(flatten)]
        common: Common,
    },
    /// Write recommendation lists for the cold users of a split.
    Recommend {
        #[command(flatten)]
        common: Common,
        /// Strategies to run [default: all].
        #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
        strategy: Vec<Strategy>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Score recommendations against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
        strategy: Vec<Strategy>,
        /// Evaluation cutoff.
        #[arg(long, default_value_t = 50)]
        k: usize,
        /// Rerun seed-dependent stages in memory for this many seeds instead of scoring
        /// the recommendation files.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Render the latest evaluation as a table and per-strategy CSVs.
    Report {
        #[arg(long, default_value = "coldstart-out")]
        out: PathBuf,
    },
    /// Run the HTTP inference service.
    Serve {
        /// Workspace holding the snapshot artifacts [env: COLDSTART_SNAPSHOT].
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Listen address [env: COLDSTART_LISTEN, default: 127.0.0.1:8080].
        #[arg(long)]
        listen: Option<String>,
    },
}

/// Failures mapped to exit codes.
enum Failure {
    Usage(String),
    Core(Error),
    Server(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::TooManyClusters { .. } => 1,
        Error::NonFiniteLoss { .. } | Error::SingularSystem { .. } => 3,
        _ => 2,
    }
}

fn all_or(strategies: Vec<Strategy>) -> Vec<Strategy> {
    if strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        strategies
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData {
            common,
            genres,
            tracks,
            warm_users,
            cold_users,
            dim,
        } => {
            let (_, mut synth) = load_config(common.config.as_deref(), &common.overrides())?;
            if let Some(seed) = common.seed {
                synth.seed = seed;
            }
            synth.genres = genres.unwrap_or(synth.genres);
            synth.tracks = tracks.unwrap_or(synth.tracks);
            synth.warm_users = warm_users.unwrap_or(synth.warm_users);
            synth.cold_users = cold_users.unwrap_or(synth.cold_users);
            synth.dim = dim.unwrap_or(synth.dim);
            let ws = common.workspace();
            stages::gen_data(&ws, &synth)?;
            println!("wrote {}", ws.data.display());
        }
        Command::TrainEmbeddings { common } => {
            let (cfg, _) = load_config(common.config.as_deref(), &common.overrides())?;
            let ws = common.workspace();
            stages::train_embeddings(&ws, &cfg)?;
            println!("wrote {}", ws.dir(stages::EMBEDDINGS).display());
        }
        Command::Segment { common } => {
            let (cfg, _) = load_config(common.config.as_deref(), &common.overrides())?;
            let ws = common.workspace();
            stages::run_segment(&ws, &cfg)?;
            println!("wrote {}", ws.dir(stages::SEGMENTS).display());
        }
        Command::BuildFeatures { common } => {
            let (cfg, _) = load_config(common.config.as_deref(), &common.overrides())?;
            let ws = common.workspace();
            stages::build_features(&ws, &cfg)?;
            println!("wrote {}", ws.dir(stages::FEATURES).display());
        }
        Command::TrainRegressor { common } => {
            let (cfg, _) = load_config(common.config.as_deref(), &common.overrides())?;
            let ws = common.workspace();
            stages::train_regressor(&ws, &cfg)?;
            println!("wrote {}", ws.dir(stages::REGRESSOR).display());
        }
        Command::Recommend { common, strategy, split } => {
            let (cfg, _) = load_config(common.config.as_deref(), &common.overrides())?;
            let ws = common.workspace();
            let strategies = all_or(strategy);
            stages::recommend(&ws, &cfg, &strategies, split.into())?;
            for s in strategies {
                println!("wrote {}", ws.recommendations(s).display());
            }
        }
        Command::Evaluate {
            common,
            strategy,
            k,
            seeds,
            split,
        } => {
            let (cfg, _) = load_config(common.config.as_deref(), &common.overrides())?;
            let ws = common.workspace();
            let summary = stages::evaluate(&ws, &cfg, &all_or(strategy), k, split.into(), seeds)?;
            let mut table = Vec::new();
            coldstart_core::eval::write_report_table(&summary.reports, &mut table)
                .map_err(|e| Failure::Server(e.to_string()))?;
            print!("{}", String::from_utf8_lossy(&table));
        }
        Command::Report { out } => {
            let ws = Workspace::new(out, None);
            print!("{}", stages::report(&ws)?);
        }
        Command::Serve { snapshot, listen } => serve(snapshot, listen)?,
    }
    Ok(())
}

fn serve(snapshot: Option<PathBuf>, listen: Option<String>) -> Result<(), Failure> {
    let listen = listen
        .or_else(|| std::env::var(LISTEN_ENV).ok())
        .unwrap_or_else(|| DEFAULT_LISTEN.to_string());
    let snapshot = snapshot.or_else(|| std::env::var_os(SNAPSHOT_ENV).map(PathBuf::from));
    let state = match snapshot {
        Some(dir) => AppState::with_snapshot(Snapshot::load(&dir)?),
        None => {
            log::warn!("no snapshot given; serving degraded until /admin/reload");
            AppState::empty()
        }
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Server(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|e| Failure::Usage(format!("cannot listen on {listen}: {e}")))?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        coldstart_serve::serve(listener, Arc::new(state), shutdown)
            .await
            .map_err(|e| Failure::Server(e.to_string()))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Server(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

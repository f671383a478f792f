use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod report;

use report::Format;

/// Color layering, music-to-haptics and grid-world Q-learning from the command line.
#[derive(Debug, Parser)]
#[command(name = "mlscope", version)]
struct Cli {
    /// Output style for reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split an image into isochromatic layers.
    #[command(subcommand)]
    Isochrome(IsochromeCmd),
    /// Turn audio into finger-level haptic scripts.
    #[command(subcommand)]
    Haptics(HapticsCmd),
    /// Train and replay grid-world agents.
    #[command(subcommand)]
    Qlearn(QlearnCmd),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
enum IsochromeCmd {
    Decompose(DecomposeArgs),
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    k: usize,
    /// Directory for layer PNGs, summary.json and cloud.ply.
    #[arg(long)]
    out: PathBuf,
    /// Sample every n-th pixel in each direction.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum HapticsCmd {
    Analyze(AnalyzeArgs),
    Tutorial(TutorialArgs),
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// WAV file, 16-bit integer or 32-bit float PCM.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Tutorial {
    Rhythm,
    Notes,
    Accents,
}

#[derive(Debug, Args)]
struct TutorialArgs {
    #[arg(long, value_enum)]
    kind: Tutorial,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum QlearnCmd {
    Train(TrainArgs),
    Play(PlayArgs),
}

#[derive(Debug, Args)]
#[group(id = "world", required = true, multiple = false)]
struct WorldArgs {
    /// Built-in level, 1 to 5.
    #[arg(long, group = "world")]
    level: Option<u32>,
    /// Level file (JSON).
    #[arg(long, group = "world")]
    grid: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long, default_value_t = 2000)]
    episodes: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the learned Q-table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlayArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    qtable: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "MLSCOPE_HOST", default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "MLSCOPE_PORT", default_value_t = 8080)]
    port: u16,
    /// Concurrent clustering jobs.
    #[arg(long, env = "MLSCOPE_WORKERS", default_value_t = 2)]
    workers: usize,
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("MLSCOPE_LOG"))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), commands::CliError> {
    let fmt = cli.format;
    let report = match cli.command {
        Command::Isochrome(IsochromeCmd::Decompose(a)) => {
            commands::decompose(&a.input, a.k, &a.out, a.stride, a.seed)?
        }
        Command::Haptics(HapticsCmd::Analyze(a)) => commands::analyze(&a.input, &a.out)?,
        Command::Haptics(HapticsCmd::Tutorial(a)) => {
            let kind = match a.kind {
                Tutorial::Rhythm => mlscope_core::audio::TutorialKind::Rhythm,
                Tutorial::Notes => mlscope_core::audio::TutorialKind::Notes,
                Tutorial::Accents => mlscope_core::audio::TutorialKind::Accents,
            };
            commands::tutorial(kind, &a.out)?
        }
        Command::Qlearn(QlearnCmd::Train(a)) => {
            let world = commands::load_world(a.world.level, a.world.grid.as_deref())?;
            commands::train(world, a.episodes, a.seed, a.out.as_deref())?
        }
        Command::Qlearn(QlearnCmd::Play(a)) => {
            let world = commands::load_world(a.world.level, a.world.grid.as_deref())?;
            commands::play(&world.0, &a.qtable)?
        }
        Command::Serve(a) => {
            let config = mlscope_service::ServiceConfig {
                host: a.host,
                port: a.port,
                workers: a.workers,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(mlscope_service::serve(&config))?;
            return Ok(());
        }
    };
    print!("{}", report.render(fmt));
    Ok(())
}

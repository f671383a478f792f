use std::fmt;
use std::fs;
use std::path::Path;

use mlscope_core::audio::{self, AnalysisParams, AudioError, EventKind, HapticScript, TutorialKind};
use mlscope_core::isochrome::{self, IsochromeError, KMeansParams};
use mlscope_core::qlearn::{
    bfs_shortest_path, builtin_level, greedy_policy, rollout, GridWorld, QLearnError, QTable, RewardSpec,
    RolloutOutcome, TrainingConfig, TrainingSession,
};
use serde_json::Value;

use crate::report::Report;

/// A runtime failure, tagged with the engine's error code.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

macro_rules! engine_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self { code: e.code(), message: e.to_string() }
            }
        }
    )*};
}

engine_error!(IsochromeError, AudioError, QLearnError);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: "IoError",
            message: e.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError {
        code: "IoError",
        message: format!("{}: {e}", path.display()),
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError {
        code: "IoError",
        message: format!("{}: {e}", path.display()),
    })
}

pub fn decompose(input: &Path, k: usize, out: &Path, stride: usize, seed: u64) -> Result<Report, CliError> {
    let raster = isochrome::decode_image(&read(input)?)?;
    let params = KMeansParams {
        k,
        seed,
        ..KMeansParams::default()
    };
    let d = isochrome::decompose(raster, stride, &params)?;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for (i, layer) in d.layers.iter().enumerate() {
        let name = format!("layer_{i}.png");
        write(&out.join(&name), layer.to_png(&d.raster)?)?;
        files.push(name);
    }
    let summary = d.summary(seed);
    write(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    write(&out.join("cloud.ply"), d.point_cloud())?;

    let mut r = Report::new();
    r.push("k", summary.k)
        .push("points", d.points.len())
        .push("iterations", summary.iterations)
        .push("converged", summary.converged)
        .push("inertia", summary.inertia)
        .push("layers", files.join(" "));
    Ok(r)
}

fn script_report(script: &HapticScript, out: &Path) -> Report {
    let mut r = Report::new();
    r.push("duration", script.duration)
        .push("events", script.events.len())
        .push("beats", script.count(EventKind::Beat))
        .push("notes", script.count(EventKind::Note))
        .push("accents", script.count(EventKind::Accent))
        .push("script", out.display().to_string());
    r
}

pub fn analyze(input: &Path, out: &Path) -> Result<Report, CliError> {
    let buffer = audio::decode_wav(&read(input)?)?;
    let script = audio::analyze(&buffer, &AnalysisParams::default())?;
    let source = input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    write(out, script.to_records(&source))?;
    Ok(script_report(&script, out))
}

pub fn tutorial(kind: TutorialKind, out: &Path) -> Result<Report, CliError> {
    let script = audio::tutorial_script(kind);
    let name = serde_json::to_value(kind).expect("kind serializes");
    write(out, script.to_records(&format!("tutorial:{}", name.as_str().unwrap_or_default())))?;
    Ok(script_report(&script, out))
}

/// A grid plus the training config that comes with it, if any.
pub fn load_world(level: Option<u32>, grid: Option<&Path>) -> Result<(GridWorld, Option<TrainingConfig>), CliError> {
    match (level, grid) {
        (Some(n), _) => {
            let l = builtin_level(n)?;
            Ok((l.grid, Some(l.config)))
        }
        (None, Some(path)) => {
            let text = String::from_utf8(read(path)?).map_err(|e| QLearnError::MalformedFile(e.to_string()))?;
            let grid = GridWorld::parse(&text)?;
            grid.require_goal()?;
            Ok((grid, None))
        }
        (None, None) => unreachable!("clap requires one of --level and --grid"),
    }
}

fn outcome_fields(r: &mut Report, outcome: RolloutOutcome) {
    let v = serde_json::to_value(outcome).expect("outcome serializes");
    r.push("outcome", v["outcome"].clone());
    r.push("greedy_length", outcome.path_len().map_or(Value::Null, Value::from));
}

pub fn train(
    world: (GridWorld, Option<TrainingConfig>),
    episodes: u64,
    seed: u64,
    out: Option<&Path>,
) -> Result<Report, CliError> {
    let (grid, config) = world;
    let config = TrainingConfig {
        seed,
        max_episodes: None,
        ..config.unwrap_or_default()
    };
    let mut session = TrainingSession::new(grid.clone(), config, RewardSpec::default())?;
    session.train_episodes(episodes)?;
    if let Some(path) = out {
        let mut text = session.qtable().to_json();
        text.push('\n');
        write(path, text)?;
    }
    let (outcome, _) = rollout(&greedy_policy(session.qtable(), &grid), &grid, grid.len());
    let mut r = Report::new();
    r.push("episodes", session.episode())
        .push("steps", session.step_count())
        .push("final_epsilon", session.epsilon());
    outcome_fields(&mut r, outcome);
    r.push("bfs_length", bfs_shortest_path(&grid).map_or(Value::Null, Value::from));
    Ok(r)
}

pub fn play(grid: &GridWorld, qtable: &Path) -> Result<Report, CliError> {
    let text = String::from_utf8(read(qtable)?).map_err(|e| QLearnError::MalformedFile(e.to_string()))?;
    let q = QTable::parse(&text)?;
    if q.cells() != grid.len() {
        return Err(QLearnError::MalformedFile(format!(
            "table covers {} cells, grid has {}",
            q.cells(),
            grid.len()
        ))
        .into());
    }
    let (outcome, path) = rollout(&greedy_policy(&q, grid), grid, grid.len());
    let mut r = Report::new();
    outcome_fields(&mut r, outcome);
    r.push("bfs_length", bfs_shortest_path(grid).map_or(Value::Null, Value::from));
    let path: Vec<String> = path.iter().map(|p| format!("{},{}", p.x, p.y)).collect();
    r.push("path", path.join(" "));
    Ok(r)
}

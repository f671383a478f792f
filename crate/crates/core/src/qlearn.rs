//! Tabular Q-learning on an editable gridworld.
//!
//! Cells are empty, rock (blocks movement), lava (terminal penalty) or goal
//! (terminal reward). A [`TrainingSession`] advances one environment step at a
//! time so that callers can pace and observe training.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_SIDE: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QLearnError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("position ({x}, {y}) is off the grid or on a rock")]
    InvalidPosition { x: usize, y: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("session is not running")]
    SessionNotRunning,
    #[error("unknown level {0}; levels are 1..=5")]
    UnknownLevel(u32),
    #[error("malformed file: {0}")]
    MalformedFile(String),
}

impl QLearnError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidGrid(_) => "InvalidGrid",
            Self::InvalidPosition { .. } => "InvalidPosition",
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::SessionNotRunning => "SessionNotRunning",
            Self::UnknownLevel(_) => "UnknownLevel",
            Self::MalformedFile(_) => "MalformedFile",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Empty,
    Rock,
    Lava,
    Goal,
}

impl Cell {
    pub fn symbol(self) -> char {
        match self {
            Cell::Empty => '.',
            Cell::Rock => 'R',
            Cell::Lava => 'L',
            Cell::Goal => 'G',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            '.' => Some(Cell::Empty),
            'R' => Some(Cell::Rock),
            'L' => Some(Cell::Lava),
            'G' => Some(Cell::Goal),
            _ => None,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Cell::Lava | Cell::Goal)
    }
}

/// Grid coordinate; `x` is the column, `y` the row (row 0 at the top).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Pos {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl From<[usize; 2]> for Pos {
    fn from(v: [usize; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Pos> for [usize; 2] {
    fn from(p: Pos) -> Self {
        [p.x, p.y]
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn symbol(self) -> char {
        match self {
            Action::Up => 'U',
            Action::Down => 'D',
            Action::Left => 'L',
            Action::Right => 'R',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridWorld {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    start: Pos,
}

/// On-disk layout of a grid: rows of `.`, `R`, `L`, `G` plus a start cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelFile {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub start: Option<Pos>,
    pub cells: Vec<String>,
}

impl GridWorld {
    /// Checks dimensions, cell count and the start cell. Goals are not
    /// required here; see [`GridWorld::require_goal`].
    pub fn new(width: usize, height: usize, cells: Vec<Cell>, start: Pos) -> Result<Self, QLearnError> {
        let bad = |m: String| Err(QLearnError::InvalidGrid(m));
        if !(1..=MAX_SIDE).contains(&width) || !(1..=MAX_SIDE).contains(&height) {
            return bad(format!("size {width}x{height} outside 1..={MAX_SIDE}"));
        }
        if cells.len() != width * height {
            return bad(format!("{} cells for a {width}x{height} grid", cells.len()));
        }
        if start.x >= width || start.y >= height {
            return bad(format!("start {start} is off the grid"));
        }
        if cells[start.y * width + start.x] != Cell::Empty {
            return bad(format!("start {start} is not an empty cell"));
        }
        Ok(Self {
            width,
            height,
            cells,
            start,
        })
    }

    pub fn from_rows(rows: &[&str], start: Pos) -> Result<Self, QLearnError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut cells = Vec::with_capacity(width * height);
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(QLearnError::InvalidGrid(format!("row {y} has a different width")));
            }
            for c in row.chars() {
                cells.push(
                    Cell::from_symbol(c)
                        .ok_or_else(|| QLearnError::InvalidGrid(format!("unknown cell '{c}' in row {y}")))?,
                );
            }
        }
        Self::new(width, height, cells, start)
    }

    pub fn from_level_file(file: &LevelFile) -> Result<Self, QLearnError> {
        let start = file
            .start
            .ok_or_else(|| QLearnError::InvalidGrid("missing start cell".into()))?;
        if file.cells.len() != file.height {
            return Err(QLearnError::InvalidGrid(format!(
                "{} rows declared, {} given",
                file.height,
                file.cells.len()
            )));
        }
        let rows: Vec<&str> = file.cells.iter().map(String::as_str).collect();
        let grid = Self::from_rows(&rows, start)?;
        if grid.width != file.width {
            return Err(QLearnError::InvalidGrid(format!(
                "{} columns declared, {} given",
                file.width, grid.width
            )));
        }
        Ok(grid)
    }

    pub fn parse(text: &str) -> Result<Self, QLearnError> {
        let file: LevelFile =
            serde_json::from_str(text).map_err(|e| QLearnError::MalformedFile(e.to_string()))?;
        Self::from_level_file(&file)
    }

    pub fn to_level_file(&self) -> LevelFile {
        LevelFile {
            width: self.width,
            height: self.height,
            start: Some(self.start),
            cells: self
                .cells
                .chunks(self.width)
                .map(|row| row.iter().map(|c| c.symbol()).collect())
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_level_file()).expect("level file serializes")
    }

    pub fn require_goal(&self) -> Result<(), QLearnError> {
        if self.count(Cell::Goal) == 0 {
            return Err(QLearnError::InvalidGrid("grid needs at least one goal".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> Pos {
        self.start
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x < self.width && p.y < self.height
    }

    pub fn index(&self, p: Pos) -> usize {
        p.y * self.width + p.x
    }

    pub fn pos(&self, index: usize) -> Pos {
        Pos::new(index % self.width, index / self.width)
    }

    pub fn cell(&self, p: Pos) -> Cell {
        self.cells[self.index(p)]
    }

    pub fn count(&self, kind: Cell) -> usize {
        self.cells.iter().filter(|&&c| c == kind).count()
    }

    /// The neighbouring cell in direction `a`, if it is on the grid.
    pub fn neighbor(&self, p: Pos, a: Action) -> Option<Pos> {
        let (x, y) = (p.x as isize, p.y as isize);
        let (nx, ny) = match a {
            Action::Up => (x, y - 1),
            Action::Down => (x, y + 1),
            Action::Left => (x - 1, y),
            Action::Right => (x + 1, y),
        };
        (nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height)
            .then(|| Pos::new(nx as usize, ny as usize))
    }

    /// Applies cell edits and revalidates. `None` as the cell moves the start
    /// to that coordinate instead.
    pub fn with_edits(&self, edits: &[GridEdit]) -> Result<Self, QLearnError> {
        let mut cells = self.cells.clone();
        let mut start = self.start;
        for e in edits {
            let p = Pos::new(e.x, e.y);
            if !self.in_bounds(p) {
                return Err(QLearnError::InvalidGrid(format!("edit at {p} is off the grid")));
            }
            match e.cell {
                EditCell::Set(c) => cells[self.index(p)] = c,
                EditCell::Start => start = p,
            }
        }
        Self::new(self.width, self.height, cells, start)
    }
}

impl fmt::Display for GridWorld {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for y in 0..self.height {
            let row: String = (0..self.width)
                .map(|x| {
                    let p = Pos::new(x, y);
                    if p == self.start {
                        'S'
                    } else {
                        self.cell(p).symbol()
                    }
                })
                .collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditCell {
    Set(Cell),
    Start,
}

/// One sandbox edit. Serialized with the cell as a one-character string:
/// `.`, `R`, `L`, `G`, or `S` to move the start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawEdit", into = "RawEdit")]
pub struct GridEdit {
    pub x: usize,
    pub y: usize,
    pub cell: EditCell,
}

#[derive(Serialize, Deserialize)]
struct RawEdit {
    x: usize,
    y: usize,
    cell: String,
}

impl TryFrom<RawEdit> for GridEdit {
    type Error = String;

    fn try_from(r: RawEdit) -> Result<Self, Self::Error> {
        let mut chars = r.cell.chars();
        let (Some(c), None) = (chars.next(), chars.next()) else {
            return Err(format!("cell '{}' must be one character", r.cell));
        };
        let cell = match c {
            'S' => EditCell::Start,
            other => EditCell::Set(Cell::from_symbol(other).ok_or_else(|| format!("unknown cell '{other}'"))?),
        };
        Ok(GridEdit { x: r.x, y: r.y, cell })
    }
}

impl From<GridEdit> for RawEdit {
    fn from(e: GridEdit) -> Self {
        let cell = match e.cell {
            EditCell::Set(c) => c.symbol(),
            EditCell::Start => 'S',
        };
        RawEdit {
            x: e.x,
            y: e.y,
            cell: cell.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSpec {
    pub goal_reward: f64,
    pub lava_penalty: f64,
    pub step_cost: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            goal_reward: 100.0,
            lava_penalty: -100.0,
            step_cost: -1.0,
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<(), QLearnError> {
        if !(self.goal_reward > 0.0 && self.lava_penalty < 0.0 && self.step_cost <= 0.0) {
            return Err(QLearnError::InvalidConfig(
                "rewards need goal > 0, lava < 0 and step cost <= 0".into(),
            ));
        }
        Ok(())
    }

    /// Largest magnitude any Q value can reach under discount `gamma`.
    pub fn q_bound(&self, gamma: f64) -> f64 {
        self.goal_reward.max(self.lava_penalty.abs()) + self.step_cost.abs() / (1.0 - gamma)
    }
}

/// Dense (cell, action) value table, four actions per cell in U, D, L, R order.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(cells: usize) -> Self {
        Self {
            values: vec![0.0; cells * 4],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self, QLearnError> {
        if !values.len().is_multiple_of(4) {
            return Err(QLearnError::MalformedFile(format!(
                "{} values is not a multiple of 4",
                values.len()
            )));
        }
        Ok(Self { values })
    }

    pub fn cells(&self) -> usize {
        self.values.len() / 4
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, s: usize, a: Action) -> f64 {
        self.values[s * 4 + a.index()]
    }

    pub fn set(&mut self, s: usize, a: Action, v: f64) {
        self.values[s * 4 + a.index()] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * 4..s * 4 + 4]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action; ties go to the lowest action index.
    pub fn best_action(&self, s: usize) -> Action {
        let row = self.row(s);
        let mut best = 0;
        for a in 1..4 {
            if row[a] > row[best] {
                best = a;
            }
        }
        Action::from_index(best)
    }

    pub fn max_per_cell(&self) -> Vec<f64> {
        (0..self.cells()).map(|s| self.max(s)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.values).expect("floats serialize")
    }

    pub fn parse(text: &str) -> Result<Self, QLearnError> {
        let values: Vec<f64> =
            serde_json::from_str(text).map_err(|e| QLearnError::MalformedFile(e.to_string()))?;
        Self::from_values(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub max_steps_per_episode: u64,
    pub seed: u64,
    /// Training finishes after this many episodes; `None` runs indefinitely.
    pub max_episodes: Option<u64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.05,
            max_steps_per_episode: 400,
            seed: 0,
            max_episodes: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), QLearnError> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(QLearnError::InvalidConfig(what.to_string()))
            }
        };
        check(self.alpha > 0.0 && self.alpha <= 1.0, "alpha must lie in (0, 1]")?;
        check((0.0..1.0).contains(&self.gamma), "gamma must lie in [0, 1)")?;
        check((0.0..=1.0).contains(&self.epsilon_start), "epsilon_start must lie in [0, 1]")?;
        check(
            self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0,
            "epsilon_decay must lie in (0, 1]",
        )?;
        check((0.0..=1.0).contains(&self.epsilon_min), "epsilon_min must lie in [0, 1]")?;
        check(self.max_steps_per_episode >= 1, "max_steps_per_episode must be at least 1")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: Pos,
    pub reward: f64,
    pub done: bool,
}

/// Deterministic environment dynamics. Moves off the grid or into rock leave
/// the agent in place at the step cost; entering a goal or lava ends the
/// episode with that cell's reward in place of the step cost.
pub fn step_env(grid: &GridWorld, pos: Pos, action: Action, rewards: &RewardSpec) -> Result<Transition, QLearnError> {
    if !grid.in_bounds(pos) || grid.cell(pos) == Cell::Rock {
        return Err(QLearnError::InvalidPosition { x: pos.x, y: pos.y });
    }
    let blocked = Transition {
        next: pos,
        reward: rewards.step_cost,
        done: false,
    };
    let Some(next) = grid.neighbor(pos, action) else {
        return Ok(blocked);
    };
    Ok(match grid.cell(next) {
        Cell::Rock => blocked,
        Cell::Empty => Transition {
            next,
            reward: rewards.step_cost,
            done: false,
        },
        Cell::Goal => Transition {
            next,
            reward: rewards.goal_reward,
            done: true,
        },
        Cell::Lava => Transition {
            next,
            reward: rewards.lava_penalty,
            done: true,
        },
    })
}

/// Epsilon-greedy selection. One uniform draw decides whether to explore; an
/// exploring step draws a second value for the action.
pub fn select_action<R: Rng + ?Sized>(q: &QTable, state: usize, epsilon: f64, rng: &mut R) -> Action {
    if rng.random::<f64>() < epsilon {
        Action::from_index(rng.random_range(0..4))
    } else {
        q.best_action(state)
    }
}

/// One Q-learning backup; returns the increment applied to `Q(s, a)`.
#[allow(clippy::too_many_arguments)]
pub fn q_update(
    q: &mut QTable,
    s: usize,
    a: Action,
    reward: f64,
    s_next: usize,
    done: bool,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let target = if done { reward } else { reward + gamma * q.max(s_next) };
    let old = q.get(s, a);
    let delta = alpha * (target - old);
    q.set(s, a, old + delta);
    delta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Paused,
    Running,
    Finished,
}

/// Point-in-time view of a training session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub episode: u64,
    pub step: u64,
    pub agent_pos: Pos,
    pub epsilon: f64,
    pub last_reward: f64,
    /// Return of the episode the latest step belonged to, including that step.
    pub episode_return: f64,
    pub max_q: Vec<f64>,
}

/// What a single environment step did, without the per-cell table summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub state: Pos,
    pub action: Action,
    pub transition: Transition,
    pub delta: f64,
    pub episode_ended: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingSession {
    grid: GridWorld,
    q: QTable,
    config: TrainingConfig,
    rewards: RewardSpec,
    agent: Pos,
    episode: u64,
    step: u64,
    episode_steps: u64,
    epsilon: f64,
    last_reward: f64,
    episode_return: f64,
    running_return: f64,
    rng: ChaCha8Rng,
    status: SessionStatus,
}

impl TrainingSession {
    pub fn new(grid: GridWorld, config: TrainingConfig, rewards: RewardSpec) -> Result<Self, QLearnError> {
        config.validate()?;
        rewards.validate()?;
        let cells = grid.len();
        let start = grid.start();
        Ok(Self {
            q: QTable::zeros(cells),
            agent: start,
            epsilon: config.epsilon_start,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            grid,
            config,
            rewards,
            episode: 0,
            step: 0,
            episode_steps: 0,
            last_reward: 0.0,
            episode_return: 0.0,
            running_return: 0.0,
            status: SessionStatus::Paused,
        })
    }

    /// Back to episode 0 with a zero table and a reseeded generator; paused.
    pub fn reset(&mut self) {
        *self = Self::new(self.grid.clone(), self.config, self.rewards).expect("config validated at construction");
    }

    pub fn start(&mut self) {
        if self.status == SessionStatus::Paused {
            self.status = SessionStatus::Running;
        }
    }

    pub fn pause(&mut self) {
        if self.status == SessionStatus::Running {
            self.status = SessionStatus::Paused;
        }
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn grid(&self) -> &GridWorld {
        &self.grid
    }

    pub fn qtable(&self) -> &QTable {
        &self.q
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn rewards(&self) -> &RewardSpec {
        &self.rewards
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn agent(&self) -> Pos {
        self.agent
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            episode: self.episode,
            step: self.step,
            agent_pos: self.agent,
            epsilon: self.epsilon,
            last_reward: self.last_reward,
            episode_return: self.episode_return,
            max_q: self.q.max_per_cell(),
        }
    }

    /// One select/step/update cycle followed by the post-step snapshot.
    pub fn step(&mut self) -> Result<Snapshot, QLearnError> {
        self.advance()?;
        Ok(self.snapshot())
    }

    /// One select/step/update cycle. Ends the episode on a terminal cell or
    /// at the step limit: the episode counter advances, epsilon decays and the
    /// agent returns to the start.
    pub fn advance(&mut self) -> Result<StepReport, QLearnError> {
        if self.status != SessionStatus::Running {
            return Err(QLearnError::SessionNotRunning);
        }
        let state = self.agent;
        let s = self.grid.index(state);
        let action = select_action(&self.q, s, self.epsilon, &mut self.rng);
        let transition = step_env(&self.grid, state, action, &self.rewards)?;
        let delta = q_update(
            &mut self.q,
            s,
            action,
            transition.reward,
            self.grid.index(transition.next),
            transition.done,
            self.config.alpha,
            self.config.gamma,
        );

        self.step += 1;
        self.episode_steps += 1;
        self.last_reward = transition.reward;
        self.running_return += transition.reward;
        self.episode_return = self.running_return;
        self.agent = transition.next;

        let episode_ended = transition.done || self.episode_steps >= self.config.max_steps_per_episode;
        if episode_ended {
            self.episode += 1;
            self.epsilon = (self.epsilon * self.config.epsilon_decay).max(self.config.epsilon_min);
            self.agent = self.grid.start();
            self.episode_steps = 0;
            self.running_return = 0.0;
            if self.config.max_episodes.is_some_and(|n| self.episode >= n) {
                self.status = SessionStatus::Finished;
            }
        }
        Ok(StepReport {
            state,
            action,
            transition,
            delta,
            episode_ended,
        })
    }

    /// Runs until `episodes` episodes have completed in total.
    pub fn train_episodes(&mut self, episodes: u64) -> Result<(), QLearnError> {
        self.start();
        while self.episode < episodes {
            self.advance()?;
        }
        self.pause();
        Ok(())
    }
}

/// Greedy action for every cell the agent can occupy; goal, lava and rock
/// cells carry none.
pub fn greedy_policy(q: &QTable, grid: &GridWorld) -> Vec<Option<Action>> {
    grid.cells()
        .iter()
        .enumerate()
        .map(|(s, c)| (*c == Cell::Empty).then(|| q.best_action(s)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "steps", rename_all = "snake_case")]
pub enum RolloutOutcome {
    ReachedGoal(usize),
    HitLava(usize),
    /// A state repeated after this many steps.
    Loop(usize),
    Timeout,
}

impl RolloutOutcome {
    pub fn path_len(&self) -> Option<usize> {
        match self {
            Self::ReachedGoal(n) => Some(*n),
            _ => None,
        }
    }
}

/// Follows `policy` from the start with default rewards.
pub fn evaluate_policy(policy: &[Option<Action>], grid: &GridWorld, max_steps: usize) -> RolloutOutcome {
    rollout(policy, grid, max_steps).0
}

/// Like [`evaluate_policy`], also returning the visited positions.
pub fn rollout(policy: &[Option<Action>], grid: &GridWorld, max_steps: usize) -> (RolloutOutcome, Vec<Pos>) {
    let rewards = RewardSpec::default();
    let mut pos = grid.start();
    let mut path = vec![pos];
    let mut seen = vec![false; grid.len()];
    seen[grid.index(pos)] = true;
    for n in 1..=max_steps {
        let Some(action) = policy.get(grid.index(pos)).copied().flatten() else {
            return (RolloutOutcome::Loop(n), path);
        };
        let Ok(t) = step_env(grid, pos, action, &rewards) else {
            return (RolloutOutcome::Loop(n), path);
        };
        path.push(t.next);
        match grid.cell(t.next) {
            Cell::Goal => return (RolloutOutcome::ReachedGoal(n), path),
            Cell::Lava => return (RolloutOutcome::HitLava(n), path),
            _ => {}
        }
        let i = grid.index(t.next);
        if seen[i] {
            return (RolloutOutcome::Loop(n), path);
        }
        seen[i] = true;
        pos = t.next;
    }
    (RolloutOutcome::Timeout, path)
}

/// Steps from the start to the nearest goal through empty cells only; lava
/// and rock are both treated as impassable.
pub fn bfs_shortest_path(grid: &GridWorld) -> Option<usize> {
    let mut dist = vec![usize::MAX; grid.len()];
    let mut queue = VecDeque::new();
    dist[grid.index(grid.start())] = 0;
    queue.push_back(grid.start());
    while let Some(p) = queue.pop_front() {
        let d = dist[grid.index(p)];
        for a in Action::ALL {
            let Some(n) = grid.neighbor(p, a) else { continue };
            let i = grid.index(n);
            if dist[i] != usize::MAX {
                continue;
            }
            match grid.cell(n) {
                Cell::Goal => return Some(d + 1),
                Cell::Empty => {
                    dist[i] = d + 1;
                    queue.push_back(n);
                }
                Cell::Rock | Cell::Lava => {}
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub id: u32,
    pub name: &'static str,
    pub grid: GridWorld,
    pub config: TrainingConfig,
}

pub const LEVEL_COUNT: u32 = 5;

/// The five built-in layouts, from an open field up to a 9x9 maze.
pub fn builtin_level(n: u32) -> Result<Level, QLearnError> {
    let (name, rows, start): (&str, &[&str], Pos) = match n {
        1 => (
            "Open field",
            &[".....", ".....", ".....", ".....", "....G"],
            Pos::new(0, 0),
        ),
        2 => (
            "Lava pools",
            &["..L..", "..L..", ".....", ".LL..", "...LG"],
            Pos::new(0, 0),
        ),
        3 => (
            "Rock walls",
            &["..R...", "..R.R.", "..R.R.", "....RG", "RRR.R.", "......"],
            Pos::new(0, 0),
        ),
        4 => (
            "Two meals",
            &[
                "G......",
                ".RRR...",
                ".......",
                "...L...",
                ".......",
                "...RRR.",
                "......G",
            ],
            Pos::new(4, 2),
        ),
        5 => (
            "The maze",
            &[
                "..R......",
                ".RR.RRRR.",
                "...L.....",
                "RR.RRR.R.",
                "...R...L.",
                ".R.R.RRR.",
                ".R...R...",
                ".RRRLR.R.",
                ".....L.RG",
            ],
            Pos::new(0, 0),
        ),
        other => return Err(QLearnError::UnknownLevel(other)),
    };
    let grid = GridWorld::from_rows(rows, start).expect("built-in layouts are valid");
    Ok(Level {
        id: n,
        name,
        grid,
        config: TrainingConfig::default(),
    })
}

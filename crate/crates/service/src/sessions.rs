//! Live training sessions.
//!
//! Each session owns one [`TrainingSession`] behind a mutex. A background
//! task steps it at the configured speed while it runs and publishes a
//! snapshot on every tick; control requests and grid edits take the same lock,
//! so exactly one party mutates a session at a time.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use mlscope_core::qlearn::{
    GridEdit, GridWorld, RewardSpec, SessionStatus, Snapshot, TrainingConfig, TrainingSession,
};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tokio::time::MissedTickBehavior;

use crate::error::ApiError;

pub const MIN_SPEED: u32 = 1;
pub const MAX_SPEED: u32 = 100_000;
pub const DEFAULT_SPEED: u32 = 200;
pub const STREAM_BUFFER: usize = 256;
pub const EMIT_INTERVAL: Duration = Duration::from_millis(25);

/// A published snapshot. `seq` orders emissions of one session and lets
/// subscribers drop duplicates; the serialized form is shared by all of them.
#[derive(Debug)]
pub struct Emission {
    pub seq: u64,
    pub snapshot: Snapshot,
    pub json: String,
}

impl Emission {
    fn new(seq: u64, snapshot: Snapshot) -> Arc<Self> {
        let json = serde_json::to_string(&snapshot).expect("snapshot serializes");
        Arc::new(Self {
            seq,
            snapshot,
            json,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum ControlCommand {
    Start,
    Pause,
    Reset,
    SetSpeed { speed: u32 },
    SetConfig { config: TrainingConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub id: String,
    pub status: SessionStatus,
    pub speed: u32,
}

struct Pacer {
    since: Instant,
    base_step: u64,
}

struct Inner {
    session: TrainingSession,
    speed: u32,
    seq: u64,
    latest: Arc<Emission>,
    pacer: Option<Pacer>,
}

impl Inner {
    fn publish(&mut self, tx: &broadcast::Sender<Arc<Emission>>) {
        self.seq += 1;
        self.latest = Emission::new(self.seq, self.session.snapshot());
        let _ = tx.send(self.latest.clone());
    }

    fn repace(&mut self) {
        self.pacer = (self.session.status() == SessionStatus::Running).then(|| Pacer {
            since: Instant::now(),
            base_step: self.session.step_count(),
        });
    }

    /// Steps owed at `now` under the current speed, capped at a fifth of a
    /// second's worth so a stalled loop does not burst afterwards.
    fn steps_due(&mut self, now: Instant) -> u64 {
        let Some(p) = &self.pacer else { return 0 };
        let target = p.base_step + (now.duration_since(p.since).as_secs_f64() * self.speed as f64) as u64;
        let due = target.saturating_sub(self.session.step_count());
        let cap = (self.speed as u64 / 5).max(1);
        if due > cap {
            self.pacer = Some(Pacer {
                since: now,
                base_step: self.session.step_count() + cap,
            });
            cap
        } else {
            due
        }
    }
}

pub struct SessionEntry {
    id: String,
    inner: Mutex<Inner>,
    tx: broadcast::Sender<Arc<Emission>>,
}

impl SessionEntry {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn handle(&self) -> SessionHandle {
        let inner = self.inner.lock();
        SessionHandle {
            id: self.id.clone(),
            status: inner.session.status(),
            speed: inner.speed,
        }
    }

    pub fn view(&self) -> SessionView {
        let inner = self.inner.lock();
        SessionView {
            id: self.id.clone(),
            status: inner.session.status(),
            speed: inner.speed,
            config: *inner.session.config(),
            rewards: *inner.session.rewards(),
            grid: inner.session.grid().to_level_file(),
            snapshot: inner.latest.snapshot.clone(),
        }
    }

    pub fn latest(&self) -> Arc<Emission> {
        self.inner.lock().latest.clone()
    }

    pub fn qtable_json(&self) -> String {
        self.inner.lock().session.qtable().to_json()
    }

    pub fn qtable_view(&self) -> crate::QTableView {
        let inner = self.inner.lock();
        let grid = inner.session.grid();
        let q = inner.session.qtable();
        crate::QTableView {
            width: grid.width(),
            height: grid.height(),
            actions: ["up", "down", "left", "right"].map(String::from),
            values: (0..q.cells()).map(|s| q.row(s).try_into().expect("four actions")).collect(),
        }
    }

    /// Subscribes and returns the current emission. Anything the receiver
    /// yields with `seq` at or below the returned one is a duplicate.
    pub fn subscribe(&self) -> (broadcast::Receiver<Arc<Emission>>, Arc<Emission>) {
        let rx = self.tx.subscribe();
        (rx, self.latest())
    }

    pub fn control(&self, cmd: ControlCommand) -> Result<SessionHandle, ApiError> {
        let mut inner = self.inner.lock();
        let status = inner.session.status();
        match cmd {
            ControlCommand::Start => {
                if status == SessionStatus::Finished {
                    return Err(ApiError::invalid_transition("session has finished; reset it first"));
                }
                inner.session.start();
                if status != SessionStatus::Running {
                    inner.repace();
                }
            }
            ControlCommand::Pause => {
                inner.session.pause();
                inner.pacer = None;
            }
            ControlCommand::Reset => {
                inner.session.reset();
                inner.pacer = None;
                inner.publish(&self.tx);
            }
            ControlCommand::SetSpeed { speed } => {
                check_speed(speed)?;
                inner.speed = speed;
                inner.repace();
            }
            ControlCommand::SetConfig { config } => {
                if status == SessionStatus::Running {
                    return Err(ApiError::invalid_transition("pause the session before changing its config"));
                }
                let grid = inner.session.grid().clone();
                let rewards = *inner.session.rewards();
                inner.session = TrainingSession::new(grid, config, rewards)?;
                inner.pacer = None;
                inner.publish(&self.tx);
            }
        }
        Ok(SessionHandle {
            id: self.id.clone(),
            status: inner.session.status(),
            speed: inner.speed,
        })
    }

    /// Replaces the grid; the table and counters restart from zero.
    pub fn update_grid(&self, edits: &[GridEdit]) -> Result<GridWorld, ApiError> {
        let mut inner = self.inner.lock();
        if inner.session.status() == SessionStatus::Running {
            return Err(ApiError::new(
                axum::http::StatusCode::CONFLICT,
                "SessionRunning",
                "grid edits are only accepted while paused",
            ));
        }
        let grid = inner.session.grid().with_edits(edits)?;
        grid.require_goal()?;
        let config = *inner.session.config();
        let rewards = *inner.session.rewards();
        inner.session = TrainingSession::new(grid.clone(), config, rewards)?;
        inner.pacer = None;
        inner.publish(&self.tx);
        Ok(grid)
    }

    /// Runs the owed steps and publishes. Returns false once the session is
    /// no longer running.
    fn tick(&self) {
        let mut inner = self.inner.lock();
        if inner.session.status() != SessionStatus::Running {
            return;
        }
        let due = inner.steps_due(Instant::now());
        if due == 0 {
            return;
        }
        for _ in 0..due {
            if inner.session.advance().is_err() {
                break;
            }
        }
        if inner.session.status() != SessionStatus::Running {
            inner.pacer = None;
        }
        inner.publish(&self.tx);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub status: SessionStatus,
    pub speed: u32,
    pub config: TrainingConfig,
    pub rewards: RewardSpec,
    pub grid: mlscope_core::qlearn::LevelFile,
    pub snapshot: Snapshot,
}

fn check_speed(speed: u32) -> Result<(), ApiError> {
    if !(MIN_SPEED..=MAX_SPEED).contains(&speed) {
        return Err(ApiError::new(
            axum::http::StatusCode::UNPROCESSABLE_ENTITY,
            "InvalidSpeed",
            format!("speed must lie in {MIN_SPEED}..={MAX_SPEED} steps/s"),
        ));
    }
    Ok(())
}

#[derive(Default)]
pub struct SessionManager {
    sessions: RwLock<HashMap<String, Arc<SessionEntry>>>,
    next_id: AtomicU64,
}

impl SessionManager {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a paused session and spawns its stepping loop. Must be
    /// called from within a Tokio runtime.
    pub fn create(
        &self,
        grid: GridWorld,
        config: TrainingConfig,
        rewards: RewardSpec,
        speed: u32,
    ) -> Result<Arc<SessionEntry>, ApiError> {
        grid.require_goal()?;
        check_speed(speed)?;
        let session = TrainingSession::new(grid, config, rewards)?;
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let id = format!("s{n:x}");
        let (tx, _) = broadcast::channel(STREAM_BUFFER);
        let latest = Emission::new(0, session.snapshot());
        let entry = Arc::new(SessionEntry {
            id: id.clone(),
            inner: Mutex::new(Inner {
                session,
                speed,
                seq: 0,
                latest,
                pacer: None,
            }),
            tx,
        });
        tokio::spawn(run_loop(Arc::downgrade(&entry)));
        self.sessions.write().insert(id, entry.clone());
        Ok(entry)
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionEntry>, ApiError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

async fn run_loop(entry: Weak<SessionEntry>) {
    let mut interval = tokio::time::interval(EMIT_INTERVAL);
    interval.set_missed_tick_behavior(MissedTickBehavior::Skip);
    loop {
        interval.tick().await;
        let Some(entry) = entry.upgrade() else { break };
        entry.tick();
    }
}

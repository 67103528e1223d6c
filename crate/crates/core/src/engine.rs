//! Run lifecycle: state machine, tick retry, config steering and the
//! append-only run log.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{AgentProfile, ConfigBundle, ConfigError, EventSpec, NpcProfile, SimulationConfig};
use crate::llm::{Provider, TranscriptEntry};
use crate::persistence::{LogWriter, PersistError, RunDir, RunMeta, FORMAT_VERSION};
use crate::runlog::{BehaviorRecord, ConfigChange, LogEntry, LogRecord, RunOptions};
use crate::tick::{step_tick, TickError, TickOutput, WorldState};
use crate::time::{serde_aoe, Timestamp};

/// Whole-tick attempts before the run suspends itself.
pub const MAX_TICK_ATTEMPTS: u32 = 3;
/// Number of selectable default avatars.
pub const AVATAR_COUNT: u8 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RunStatus {
    Idle,
    Running,
    Paused,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub status: RunStatus,
    pub current_tick: u64,
    #[serde(with = "serde_aoe")]
    pub tick_time: Timestamp,
    pub seed: u64,
    pub run_id: String,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("illegal transition: cannot {op} while {status:?}")]
    State { op: &'static str, status: RunStatus },
    #[error("tick {tick} failed {attempts} times; run suspended: {cause}")]
    Suspended { tick: u64, attempts: u32, cause: TickError },
    #[error("event time {0} is before the next tick")]
    TimePast(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("tick result is stale: the run changed while it was computed")]
    Stale,
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::State { .. } | EngineError::Stale => "STATE_ERROR",
            EngineError::Suspended { .. } => "RUN_SUSPENDED",
            EngineError::TimePast(_) => "TIME_PAST_ERROR",
            EngineError::Config(e) => e.code(),
            EngineError::Persist(e) => e.code(),
        }
    }
}

/// Everything a finished or reset run leaves behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArchive {
    pub run_id: String,
    pub config: ConfigBundle,
    pub log: Vec<LogEntry>,
    pub transcript: Vec<TranscriptEntry>,
    pub created_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

/// Full committed state at a tick boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    pub run: RunState,
    pub generation: u64,
    pub config: ConfigBundle,
    pub options: RunOptions,
    pub world: WorldState,
    pub log_len: u64,
}

/// A tick computed off to the side, to be committed by [`Simulation::commit`].
#[derive(Debug, Clone)]
pub struct TickJob {
    pub config: ConfigBundle,
    pub options: RunOptions,
    pub world: WorldState,
    pub tick: u64,
    generation: u64,
    run_id: String,
}

impl TickJob {
    /// Runs the tick, retrying it whole on failure.
    pub fn run(&self, provider: &Provider) -> Result<TickOutput, (u32, TickError)> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match step_tick(&self.config, self.options, &self.world, self.tick, provider) {
                Ok(out) => return Ok(out),
                Err(err) if attempt >= MAX_TICK_ATTEMPTS => return Err((attempt, err)),
                Err(err) => tracing::warn!(tick = self.tick, attempt, "tick failed, retrying: {err}"),
            }
        }
    }
}

/// Default avatar for an agent, drawn from the run seed.
pub fn default_avatar(seed: u64, agent_id: &str) -> u8 {
    let digest = Sha256::digest(agent_id.as_bytes());
    let salt = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    ChaCha8Rng::seed_from_u64(seed ^ salt).random_range(0..AVATAR_COUNT)
}

/// Fills in missing avatars from the seed.
pub fn resolve_avatars(config: &mut ConfigBundle) {
    let seed = config.simulation.random_seed;
    for a in &mut config.agents {
        if a.avatar.is_none() {
            a.avatar = Some(default_avatar(seed, &a.agent_id));
        }
    }
}

fn config_hash(config: &ConfigBundle, options: RunOptions) -> String {
    let mut h = Sha256::new();
    h.update(config.to_json().as_bytes());
    h.update(serde_json::to_vec(&options).expect("options serialize"));
    hex::encode(&h.finalize()[..4])
}

fn wall_clock() -> String {
    chrono::Utc::now().to_rfc3339()
}

struct Store {
    /// Parent directory for per-run subdirectories; `None` when the run was
    /// pinned to an explicit directory.
    data_dir: Option<std::path::PathBuf>,
    dir: RunDir,
    writer: LogWriter,
    meta: RunMeta,
}

pub struct Simulation {
    config: ConfigBundle,
    options: RunOptions,
    state: RunState,
    world: WorldState,
    log: Vec<LogEntry>,
    provider: Arc<Provider>,
    generation: u64,
    base_hash: String,
    transcript_start: usize,
    created_at: String,
    store: Option<Store>,
}

impl Simulation {
    pub fn new(config: ConfigBundle, options: RunOptions, provider: Arc<Provider>) -> Result<Self, EngineError> {
        let report = config.validate();
        if !report.is_empty() {
            return Err(ConfigError::Invalid(report).into());
        }
        let mut config = config;
        resolve_avatars(&mut config);
        let base_hash = config_hash(&config, options);
        let transcript_start = provider.transcript().len();
        let state = RunState {
            status: RunStatus::Idle,
            current_tick: 0,
            tick_time: config.simulation.start_time,
            seed: config.simulation.random_seed,
            run_id: format!("run-{base_hash}-0"),
        };
        Ok(Self {
            config,
            options,
            state,
            world: WorldState::default(),
            log: Vec::new(),
            provider,
            generation: 0,
            base_hash,
            transcript_start,
            created_at: wall_clock(),
            store: None,
        })
    }

    /// Persists this run under `data_dir/<run_id>` from now on, including
    /// the provider transcript.
    pub fn attach_store(&mut self, data_dir: &std::path::Path) -> Result<&RunDir, EngineError> {
        let dir = RunDir::create(data_dir, &self.state.run_id)?;
        self.attach(dir, Some(data_dir.to_path_buf()))
    }

    /// Persists this run into exactly `root`.
    pub fn attach_dir(&mut self, root: &std::path::Path) -> Result<&RunDir, EngineError> {
        let dir = RunDir::create_at(root)?;
        self.attach(dir, None)
    }

    fn attach(&mut self, dir: RunDir, data_dir: Option<std::path::PathBuf>) -> Result<&RunDir, EngineError> {
        dir.write_config(&self.config)?;
        let meta = RunMeta {
            format_version: FORMAT_VERSION,
            run_id: self.state.run_id.clone(),
            provider: self.provider.backend_name().to_string(),
            options: self.options,
            created_at: self.created_at.clone(),
            finished_at: None,
        };
        dir.write_meta(&meta)?;
        let mut writer = dir.log_writer()?;
        if writer.next_seq() == 0 && !self.log.is_empty() {
            writer.append(&self.log)?;
        }
        if writer.next_seq() as usize != self.log.len() {
            return Err(PersistError::Corrupt {
                what: dir.log_path().display().to_string(),
                message: "existing log does not match the in-memory run".into(),
            }
            .into());
        }
        self.provider.record_to(&dir.transcript_path()).map_err(PersistError::from)?;
        self.store = Some(Store {
            data_dir,
            dir,
            writer,
            meta,
        });
        Ok(&self.store.as_ref().expect("just set").dir)
    }

    pub fn run_dir(&self) -> Option<&RunDir> {
        self.store.as_ref().map(|s| &s.dir)
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn config(&self) -> &ConfigBundle {
        &self.config
    }

    pub fn options(&self) -> RunOptions {
        self.options
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn provider(&self) -> &Arc<Provider> {
        &self.provider
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.provider.transcript().split_off(self.transcript_start)
    }

    fn illegal(&self, op: &'static str) -> EngineError {
        EngineError::State {
            op,
            status: self.state.status,
        }
    }

    fn refresh_tick_time(&mut self) {
        self.state.tick_time = self.config.simulation.tick_time(self.state.current_tick);
    }

    /// Appends records at `tick`, durably first when a store is attached.
    fn append(&mut self, tick: u64, records: Vec<LogRecord>) -> Result<(), EngineError> {
        let base = self.log.len() as u64;
        let entries: Vec<LogEntry> = records
            .into_iter()
            .enumerate()
            .map(|(i, record)| LogEntry {
                seq: base + i as u64,
                tick,
                record,
            })
            .collect();
        if let Some(store) = self.store.as_mut() {
            if let Err(e) = store.writer.append(&entries) {
                if self.state.status == RunStatus::Running {
                    self.state.status = RunStatus::Paused;
                }
                return Err(e.into());
            }
        }
        self.log.extend(entries);
        Ok(())
    }

    pub fn start(&mut self) -> Result<&RunState, EngineError> {
        if self.state.status != RunStatus::Idle {
            return Err(self.illegal("start"));
        }
        if self.log.is_empty() {
            let initial = ConfigChange::Initial {
                config: self.config.clone(),
                options: self.options,
            };
            self.append(0, vec![LogRecord::ConfigChange(initial)])?;
        }
        self.state.status = RunStatus::Running;
        if self.state.current_tick >= self.config.simulation.total_ticks() {
            self.finish();
        }
        Ok(&self.state)
    }

    pub fn pause(&mut self) -> Result<&RunState, EngineError> {
        if self.state.status != RunStatus::Running {
            return Err(self.illegal("pause"));
        }
        self.state.status = RunStatus::Paused;
        Ok(&self.state)
    }

    pub fn resume(&mut self) -> Result<&RunState, EngineError> {
        if self.state.status != RunStatus::Paused {
            return Err(self.illegal("resume"));
        }
        self.state.status = RunStatus::Running;
        Ok(&self.state)
    }

    /// Archives the current run and returns to Idle with a fresh run id and
    /// the current configuration.
    pub fn reset(&mut self) -> Result<RunArchive, EngineError> {
        if self.state.status == RunStatus::Idle {
            return Err(self.illegal("reset"));
        }
        let archive = self.archive();
        if let Some(store) = self.store.as_mut() {
            store.writer.close();
        }
        self.generation += 1;
        self.world = WorldState::default();
        self.log.clear();
        self.transcript_start = self.provider.transcript().len();
        self.created_at = wall_clock();
        self.state = RunState {
            status: RunStatus::Idle,
            current_tick: 0,
            tick_time: self.config.simulation.start_time,
            seed: self.config.simulation.random_seed,
            run_id: format!("run-{}-{}", self.base_hash, self.generation),
        };
        if let Some(data_dir) = self.store.take().and_then(|s| s.data_dir) {
            self.attach_store(&data_dir)?;
        }
        Ok(archive)
    }

    pub fn archive(&self) -> RunArchive {
        RunArchive {
            run_id: self.state.run_id.clone(),
            config: self.config.clone(),
            log: self.log.clone(),
            transcript: self.transcript(),
            created_at: self.created_at.clone(),
            finished_at: self.store.as_ref().and_then(|s| s.meta.finished_at.clone()),
        }
    }

    fn finish(&mut self) {
        self.state.status = RunStatus::Finished;
        if let Some(store) = self.store.as_mut() {
            store.meta.finished_at = Some(wall_clock());
            if let Err(e) = store.dir.write_meta(&store.meta) {
                tracing::warn!("meta update failed: {e}");
            }
            store.writer.close();
        }
    }

    /// Captures the inputs of the next tick.
    pub fn prepare(&self) -> Result<TickJob, EngineError> {
        if self.state.status != RunStatus::Running {
            return Err(self.illegal("step"));
        }
        Ok(TickJob {
            config: self.config.clone(),
            options: self.options,
            world: self.world.clone(),
            tick: self.state.current_tick,
            generation: self.generation,
            run_id: self.state.run_id.clone(),
        })
    }

    /// Applies a computed tick, or suspends the run when it failed.
    pub fn commit(
        &mut self,
        job: &TickJob,
        result: Result<TickOutput, (u32, TickError)>,
    ) -> Result<Vec<BehaviorRecord>, EngineError> {
        if job.generation != self.generation
            || job.run_id != self.state.run_id
            || job.tick != self.state.current_tick
        {
            return Err(EngineError::Stale);
        }
        if self.state.status != RunStatus::Running && self.state.status != RunStatus::Paused {
            return Err(self.illegal("commit"));
        }
        let output = match result {
            Ok(o) => o,
            Err((attempts, cause)) => {
                self.state.status = RunStatus::Paused;
                return Err(EngineError::Suspended {
                    tick: job.tick,
                    attempts,
                    cause,
                });
            }
        };
        let tick = job.tick;
        let next_tick = tick + 1;
        let finished = next_tick >= self.config.simulation.total_ticks();
        let behaviors: Vec<BehaviorRecord> = output
            .records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Behavior(b) => Some(b.clone()),
                _ => None,
            })
            .collect();
        let mut records = Vec::with_capacity(output.records.len() + 2);
        records.push(LogRecord::TickBegin {
            tick_time: self.config.simulation.tick_time(tick),
        });
        records.extend(output.records);
        records.push(LogRecord::TickCommit { next_tick, finished });
        self.append(tick, records)?;
        self.world = output.world;
        self.state.current_tick = next_tick;
        self.refresh_tick_time();
        if finished {
            self.finish();
        }
        Ok(behaviors)
    }

    /// Executes one tick in place.
    pub fn step(&mut self) -> Result<Vec<BehaviorRecord>, EngineError> {
        let job = self.prepare()?;
        let result = job.run(&self.provider);
        self.commit(&job, result)
    }

    /// Starts if idle and steps until the run finishes.
    pub fn run_to_end(&mut self) -> Result<&RunState, EngineError> {
        if self.state.status == RunStatus::Idle {
            self.start()?;
        } else if self.state.status == RunStatus::Paused {
            self.resume()?;
        }
        while self.state.status == RunStatus::Running {
            self.step()?;
        }
        Ok(&self.state)
    }

    fn mutate(
        &mut self,
        change: ConfigChange,
        apply: impl FnOnce(&ConfigBundle) -> Result<ConfigBundle, ConfigError>,
    ) -> Result<&ConfigBundle, EngineError> {
        if self.state.status == RunStatus::Running {
            return Err(ConfigError::StateLocked.into());
        }
        let next = apply(&self.config)?;
        if !self.log.is_empty() {
            let tick = self.state.current_tick;
            self.append(tick, vec![LogRecord::ConfigChange(change)])?;
        }
        self.config = next;
        self.refresh_tick_time();
        if let Some(store) = &self.store {
            store.dir.write_config(&self.config)?;
        }
        Ok(&self.config)
    }

    /// Replaces the whole configuration; only before the run starts.
    pub fn replace_config(&mut self, config: ConfigBundle) -> Result<&ConfigBundle, EngineError> {
        if self.state.status != RunStatus::Idle || !self.log.is_empty() {
            return Err(ConfigError::StateLocked.into());
        }
        let report = config.validate();
        if !report.is_empty() {
            return Err(ConfigError::Invalid(report).into());
        }
        let mut config = config;
        resolve_avatars(&mut config);
        self.config = config;
        self.state.seed = self.config.simulation.random_seed;
        self.refresh_tick_time();
        if let Some(store) = &self.store {
            store.dir.write_config(&self.config)?;
        }
        Ok(&self.config)
    }

    pub fn replace_simulation(&mut self, simulation: SimulationConfig) -> Result<&ConfigBundle, EngineError> {
        if self.state.status != RunStatus::Idle && simulation.start_time != self.config.simulation.start_time {
            return Err(ConfigError::Invalid(crate::config::ValidationReport {
                violations: vec![crate::config::Violation {
                    code: "START_TIME_LOCKED".into(),
                    message: "start_time cannot change once the run has started".into(),
                }],
            })
            .into());
        }
        let change = ConfigChange::ReplaceSimulation {
            simulation: simulation.clone(),
        };
        self.mutate(change, |c| c.with_simulation(simulation))
    }

    pub fn upsert_agent(&mut self, mut agent: AgentProfile) -> Result<&ConfigBundle, EngineError> {
        if agent.avatar.is_none() {
            agent.avatar = Some(default_avatar(self.config.simulation.random_seed, &agent.agent_id));
        }
        let change = ConfigChange::UpsertAgent { agent: agent.clone() };
        self.mutate(change, |c| c.upsert_agent(agent))
    }

    pub fn upsert_npc(&mut self, npc: NpcProfile) -> Result<&ConfigBundle, EngineError> {
        if self.state.status != RunStatus::Idle {
            let next = self.state.tick_time;
            if let Some(p) = npc.scheduled_posts.iter().find(|p| p.post_time < next) {
                let old = self.config.npc(&npc.npc_id);
                let unchanged = old.is_some_and(|o| o.scheduled_posts.contains(p));
                if !unchanged {
                    return Err(EngineError::TimePast(p.post_time.to_rfc3339()));
                }
            }
        }
        let change = ConfigChange::UpsertNpc { npc: npc.clone() };
        self.mutate(change, |c| c.upsert_npc(npc))
    }

    /// Registers an event; it is perceived at the tick covering its time.
    pub fn add_event(&mut self, event: EventSpec) -> Result<&ConfigBundle, EngineError> {
        if self.state.status != RunStatus::Idle && event.event_time < self.state.tick_time {
            return Err(EngineError::TimePast(event.event_time.to_rfc3339()));
        }
        let change = ConfigChange::AddEvent { event: event.clone() };
        self.mutate(change, |c| c.add_event(event))
    }

    pub fn inject_event(&mut self, event: EventSpec) -> Result<&ConfigBundle, EngineError> {
        self.add_event(event)
    }

    pub fn remove_entity(&mut self, id: &str) -> Result<&ConfigBundle, EngineError> {
        let change = ConfigChange::RemoveEntity { id: id.to_string() };
        self.mutate(change, |c| c.remove_entity(id))
    }

    /// Applies a logged change verbatim, as replay does.
    pub fn apply_change(&mut self, change: ConfigChange) -> Result<&ConfigBundle, EngineError> {
        match change {
            ConfigChange::Initial { .. } => Err(self.illegal("re-initialise")),
            ConfigChange::ReplaceSimulation { simulation } => self.replace_simulation(simulation),
            ConfigChange::UpsertAgent { agent } => self.upsert_agent(agent),
            ConfigChange::UpsertNpc { npc } => self.upsert_npc(npc),
            ConfigChange::AddEvent { event } => self.add_event(event),
            ConfigChange::RemoveEntity { id } => self.remove_entity(&id),
        }
    }

    /// Full state at the current tick boundary; written to the run
    /// directory when a store is attached.
    pub fn snapshot(&self) -> Result<Snapshot, EngineError> {
        if self.state.status == RunStatus::Idle && self.log.is_empty() {
            return Err(self.illegal("snapshot"));
        }
        let snap = Snapshot {
            format_version: FORMAT_VERSION,
            run: self.state.clone(),
            generation: self.generation,
            config: self.config.clone(),
            options: self.options,
            world: self.world.clone(),
            log_len: self.log.len() as u64,
        };
        if let Some(store) = &self.store {
            store.dir.write_snapshot(self.state.current_tick, &snap)?;
        }
        Ok(snap)
    }

    /// Only the committed current tick can be snapshotted.
    pub fn snapshot_at(&self, tick: u64) -> Result<Snapshot, EngineError> {
        if tick != self.state.current_tick {
            return Err(EngineError::State {
                op: "snapshot an uncommitted or past tick",
                status: self.state.status,
            });
        }
        self.snapshot()
    }

    /// Rebuilds a run from a snapshot and the log prefix it covers. The
    /// restored run is paused unless it had finished.
    pub fn restore(snapshot: Snapshot, log: &[LogEntry], provider: Arc<Provider>) -> Result<Self, EngineError> {
        if snapshot.format_version != FORMAT_VERSION {
            return Err(PersistError::Version(snapshot.format_version).into());
        }
        let n = snapshot.log_len as usize;
        if log.len() < n {
            return Err(PersistError::Corrupt {
                what: "log".into(),
                message: format!("snapshot covers {n} records but the log has {}", log.len()),
            }
            .into());
        }
        let base_hash = snapshot
            .run
            .run_id
            .strip_prefix("run-")
            .and_then(|r| r.rsplit_once('-'))
            .map(|(h, _)| h.to_string())
            .unwrap_or_else(|| config_hash(&snapshot.config, snapshot.options));
        let mut state = snapshot.run;
        if state.status == RunStatus::Running {
            state.status = RunStatus::Paused;
        }
        let transcript_start = provider.transcript().len();
        Ok(Self {
            config: snapshot.config,
            options: snapshot.options,
            state,
            world: snapshot.world,
            log: log[..n].to_vec(),
            provider,
            generation: snapshot.generation,
            base_hash,
            transcript_start,
            created_at: wall_clock(),
            store: None,
        })
    }
}

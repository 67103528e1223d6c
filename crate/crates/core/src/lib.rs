//! Core of the Sparkle agent social-media simulator.
//!
//! Agents with demographics, social habits and a memory stream live through
//! simulated days: they plan, act, post, and react to sparks that the
//! platform's recommender routes to them. Every model-backed step goes
//! through a [`llm::Provider`], and every tick is recorded in an append-only
//! run log from which all views and replays are derived.

pub mod cognition;
pub mod config;
pub mod engine;
pub mod llm;
pub mod memory;
pub mod persistence;
pub mod prompts;
pub mod replay;
pub mod runlog;
pub mod sparkle;
pub mod tick;
pub mod time;
pub mod views;

pub use config::{AgentProfile, Audience, ConfigBundle, ConfigError, EventSpec, NpcProfile, SimulationConfig};
pub use engine::{EngineError, RunArchive, RunState, RunStatus, Simulation, Snapshot};
pub use llm::{Provider, ProviderError, Script, ScriptRule};
pub use memory::{MemoryKind, MemoryRecord, MemoryStore};
pub use runlog::{Ablation, BehaviorKind, BehaviorRecord, LogEntry, LogRecord, ReasoningTrace, RunOptions};
pub use sparkle::{Delivery, DeliveryCause, FollowEdge, Platform, Spark};
pub use time::Timestamp;

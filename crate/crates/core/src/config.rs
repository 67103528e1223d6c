//! Simulation input: environment timing, recommendation threshold, agents,
//! NPCs and events, plus the document loader and validator.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{self, serde_aoe, Timestamp};

pub const DEFAULT_RECOMMENDATION_THRESHOLD: u8 = 7;
pub const DEFAULT_RECENCY_DECAY: f64 = 0.995;
pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("configuration is invalid: {0}")]
    Invalid(ValidationReport),
    #[error("configuration cannot change while the simulation is running")]
    StateLocked,
    #[error("{0} is referenced by another entity")]
    ReferencedElsewhere(String),
    #[error("no entity with id {0}")]
    NotFound(String),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Parse { .. } => "PARSE_ERROR",
            ConfigError::Invalid(_) => "VALIDATION_FAILED",
            ConfigError::StateLocked => "STATE_LOCKED",
            ConfigError::ReferencedElsewhere(_) => "REFERENCED_ELSEWHERE",
            ConfigError::NotFound(_) => "NOT_FOUND",
        }
    }
}

/// Weights of the three memory retrieval components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct RetrievalWeights {
    pub recency: f64,
    pub importance: f64,
    pub relevance: f64,
}

impl RetrievalWeights {
    pub const fn new(recency: f64, importance: f64, relevance: f64) -> Self {
        Self {
            recency,
            importance,
            relevance,
        }
    }
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1.0)
    }
}

impl From<[f64; 3]> for RetrievalWeights {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<RetrievalWeights> for [f64; 3] {
    fn from(w: RetrievalWeights) -> Self {
        [w.recency, w.importance, w.relevance]
    }
}

fn default_threshold() -> u8 {
    DEFAULT_RECOMMENDATION_THRESHOLD
}
fn default_decay() -> f64 {
    DEFAULT_RECENCY_DECAY
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    #[serde(with = "serde_aoe")]
    pub start_time: Timestamp,
    #[serde(with = "serde_aoe")]
    pub end_time: Timestamp,
    /// Minutes per tick.
    pub tick_interval: i64,
    #[serde(default = "default_threshold")]
    pub recommendation_threshold: u8,
    #[serde(default)]
    pub random_seed: u64,
    #[serde(default)]
    pub retrieval_weights: RetrievalWeights,
    #[serde(default = "default_decay")]
    pub recency_decay: f64,
    #[serde(default = "default_top_k")]
    pub retrieval_top_k: usize,
}

impl SimulationConfig {
    /// Number of whole ticks in the configured span. A trailing partial
    /// interval is dropped.
    pub fn total_ticks(&self) -> u64 {
        if self.tick_interval <= 0 || self.end_time <= self.start_time {
            return 0;
        }
        let span = self
            .end_time
            .signed_duration_since(self.start_time)
            .num_minutes();
        (span / self.tick_interval) as u64
    }

    /// Minutes left over after the last whole tick.
    pub fn truncated_minutes(&self) -> i64 {
        if self.tick_interval <= 0 || self.end_time <= self.start_time {
            return 0;
        }
        let span = self.end_time.signed_duration_since(self.start_time);
        span.num_minutes() % self.tick_interval
    }

    pub fn tick_time(&self, tick: u64) -> Timestamp {
        self.start_time + time::minutes(self.tick_interval * tick as i64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocialHabits {
    #[serde(default)]
    pub followers: String,
    #[serde(default)]
    pub post_frequency: String,
    #[serde(default)]
    pub post_content: String,
    #[serde(default)]
    pub engagement: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: String,
    pub name: String,
    #[serde(default)]
    pub age: String,
    #[serde(default)]
    pub gender: String,
    #[serde(default)]
    pub residency: String,
    #[serde(default)]
    pub innate: String,
    #[serde(default)]
    pub job: String,
    #[serde(default)]
    pub lifestyle: String,
    /// Avatar index; when omitted one is drawn from the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avatar: Option<u8>,
    #[serde(default)]
    pub habits: SocialHabits,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledPost {
    #[serde(with = "serde_aoe")]
    pub post_time: Timestamp,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NpcProfile {
    pub npc_id: String,
    #[serde(default)]
    pub identity: String,
    #[serde(default)]
    pub scheduled_posts: Vec<ScheduledPost>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Audience {
    All,
    Agent(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpec {
    pub event_id: String,
    #[serde(with = "serde_aoe")]
    pub event_time: Timestamp,
    pub description: String,
    #[serde(default = "Audience::all")]
    pub audience: Audience,
}

impl Audience {
    fn all() -> Self {
        Audience::All
    }
}

/// The full structured-text configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigBundle {
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub agents: Vec<AgentProfile>,
    #[serde(default)]
    pub npcs: Vec<NpcProfile>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            code: code.to_string(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes: Vec<_> = self.violations.iter().map(|v| v.code.as_str()).collect();
        write!(f, "{}", codes.join(", "))
    }
}

pub fn validate_config(
    config: &SimulationConfig,
    agents: &[AgentProfile],
    npcs: &[NpcProfile],
    events: &[EventSpec],
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let start = config.start_time;
    let end = config.end_time;

    if start >= end {
        report.push(
            "TIME_RANGE_EMPTY",
            format!("start_time {start} must be earlier than end_time {end}"),
        );
    }
    if config.tick_interval <= 0 {
        report.push("TICK_INTERVAL_INVALID", "tick_interval must be positive");
    } else if start < end && config.total_ticks() == 0 {
        report.push(
            "TICK_INTERVAL_INVALID",
            "the simulation span is shorter than one tick",
        );
    }
    if !(1..=10).contains(&config.recommendation_threshold) {
        report.push(
            "THRESHOLD_OUT_OF_RANGE",
            format!(
                "recommendation_threshold {} is outside 1..=10",
                config.recommendation_threshold
            ),
        );
    }
    let w = config.retrieval_weights;
    let weights = [w.recency, w.importance, w.relevance];
    if weights.iter().any(|x| !x.is_finite() || *x < 0.0) {
        report.push(
            "RETRIEVAL_WEIGHT_INVALID",
            "retrieval weights must be finite and non-negative",
        );
    } else if weights.iter().all(|x| *x == 0.0) {
        report.push("RETRIEVAL_WEIGHTS_ZERO", "retrieval weights are all zero");
    }
    if !(config.recency_decay > 0.0 && config.recency_decay < 1.0) {
        report.push(
            "RECENCY_DECAY_OUT_OF_RANGE",
            format!("recency_decay {} must lie in (0, 1)", config.recency_decay),
        );
    }
    if config.retrieval_top_k == 0 {
        report.push("TOP_K_INVALID", "retrieval_top_k must be at least 1");
    }

    let mut ids = BTreeSet::new();
    for (i, a) in agents.iter().enumerate() {
        if a.agent_id.trim().is_empty() {
            report.push("ID_EMPTY", format!("agents[{i}].agent_id is empty"));
        }
        if !ids.insert(a.agent_id.as_str()) {
            report.push("DUPLICATE_ID", format!("id {} appears twice", a.agent_id));
        }
        if a.name.trim().is_empty() {
            report.push("NAME_EMPTY", format!("agents[{i}].name is empty"));
        }
    }
    for (i, n) in npcs.iter().enumerate() {
        if n.npc_id.trim().is_empty() {
            report.push("ID_EMPTY", format!("npcs[{i}].npc_id is empty"));
        }
        if !ids.insert(n.npc_id.as_str()) {
            report.push("DUPLICATE_ID", format!("id {} appears twice", n.npc_id));
        }
        for (j, p) in n.scheduled_posts.iter().enumerate() {
            if p.post_time < start || p.post_time > end {
                report.push(
                    "NPC_POST_OUT_OF_RANGE",
                    format!("npcs[{i}].scheduled_posts[{j}] is outside the simulation span"),
                );
            }
            if p.content.trim().is_empty() {
                report.push(
                    "NPC_POST_EMPTY",
                    format!("npcs[{i}].scheduled_posts[{j}].content is empty"),
                );
            }
        }
        if n
            .scheduled_posts
            .windows(2)
            .any(|w| w[0].post_time > w[1].post_time)
        {
            report.push(
                "NPC_POSTS_UNSORTED",
                format!("npcs[{i}].scheduled_posts are not in ascending time order"),
            );
        }
    }

    let agent_ids: BTreeSet<&str> = agents.iter().map(|a| a.agent_id.as_str()).collect();
    let mut event_ids = BTreeSet::new();
    for (i, e) in events.iter().enumerate() {
        if !event_ids.insert(e.event_id.as_str()) {
            report.push(
                "DUPLICATE_ID",
                format!("event id {} appears twice", e.event_id),
            );
        }
        if e.event_time < start || e.event_time > end {
            report.push(
                "EVENT_OUT_OF_RANGE",
                format!("events[{i}] is outside the simulation span"),
            );
        }
        if e.description.trim().is_empty() {
            report.push("EVENT_EMPTY", format!("events[{i}].description is empty"));
        }
        if let Audience::Agent(id) = &e.audience {
            if !agent_ids.contains(id.as_str()) {
                report.push(
                    "UNKNOWN_AUDIENCE",
                    format!("events[{i}] targets unknown agent {id}"),
                );
            }
        }
    }
    report
}

/// Parses a configuration document. Field errors name the offending path,
/// e.g. `agents[0].name`.
pub fn load_config(document: &str) -> Result<ConfigBundle, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let mut path = err.path().to_string();
        let message = err.into_inner().to_string();
        // missing fields are reported at the enclosing object
        if let Some(field) = message
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next())
        {
            path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
        }
        ConfigError::Parse { path, message }
    })
}

impl ConfigBundle {
    pub fn validate(&self) -> ValidationReport {
        validate_config(&self.simulation, &self.agents, &self.npcs, &self.events)
    }

    /// Loads and rejects documents that fail validation.
    pub fn load_valid(document: &str) -> Result<Self, ConfigError> {
        let bundle = load_config(document)?;
        let report = bundle.validate();
        if report.is_empty() {
            Ok(bundle)
        } else {
            Err(ConfigError::Invalid(report))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn agent(&self, id: &str) -> Option<&AgentProfile> {
        self.agents.iter().find(|a| a.agent_id == id)
    }

    pub fn npc(&self, id: &str) -> Option<&NpcProfile> {
        self.npcs.iter().find(|n| n.npc_id == id)
    }

    /// Regular agents in ascending id order, the global processing order.
    pub fn agents_by_id(&self) -> Vec<&AgentProfile> {
        let mut v: Vec<_> = self.agents.iter().collect();
        v.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
        v
    }

    /// Display name for any author id.
    pub fn display_name(&self, id: &str) -> String {
        if let Some(a) = self.agent(id) {
            a.name.clone()
        } else if let Some(n) = self.npc(id) {
            if n.identity.is_empty() {
                n.npc_id.clone()
            } else {
                n.identity.clone()
            }
        } else {
            id.to_string()
        }
    }

    fn checked(candidate: ConfigBundle) -> Result<ConfigBundle, ConfigError> {
        let report = candidate.validate();
        if report.is_empty() {
            Ok(candidate)
        } else {
            Err(ConfigError::Invalid(report))
        }
    }

    pub fn upsert_agent(&self, agent: AgentProfile) -> Result<ConfigBundle, ConfigError> {
        let mut next = self.clone();
        match next.agents.iter_mut().find(|a| a.agent_id == agent.agent_id) {
            Some(slot) => *slot = agent,
            None => next.agents.push(agent),
        }
        Self::checked(next)
    }

    pub fn upsert_npc(&self, npc: NpcProfile) -> Result<ConfigBundle, ConfigError> {
        let mut next = self.clone();
        match next.npcs.iter_mut().find(|n| n.npc_id == npc.npc_id) {
            Some(slot) => *slot = npc,
            None => next.npcs.push(npc),
        }
        Self::checked(next)
    }

    pub fn add_event(&self, event: EventSpec) -> Result<ConfigBundle, ConfigError> {
        let mut next = self.clone();
        match next.events.iter_mut().find(|e| e.event_id == event.event_id) {
            Some(slot) => *slot = event,
            None => next.events.push(event),
        }
        Self::checked(next)
    }

    /// Removes an agent, NPC or event by id.
    pub fn remove_entity(&self, id: &str) -> Result<ConfigBundle, ConfigError> {
        let mut next = self.clone();
        if next.agents.iter().any(|a| a.agent_id == id) {
            let referenced = next
                .events
                .iter()
                .any(|e| e.audience == Audience::Agent(id.to_string()));
            if referenced {
                return Err(ConfigError::ReferencedElsewhere(id.to_string()));
            }
            next.agents.retain(|a| a.agent_id != id);
        } else if next.npcs.iter().any(|n| n.npc_id == id) {
            next.npcs.retain(|n| n.npc_id != id);
        } else if next.events.iter().any(|e| e.event_id == id) {
            next.events.retain(|e| e.event_id != id);
        } else {
            return Err(ConfigError::NotFound(id.to_string()));
        }
        Self::checked(next)
    }

    /// Replaces the simulation section.
    pub fn with_simulation(&self, simulation: SimulationConfig) -> Result<ConfigBundle, ConfigError> {
        let mut next = self.clone();
        next.simulation = simulation;
        Self::checked(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "simulation": {
            "start_time": "2026-07-14T06:00:00-12:00",
            "end_time": "2026-07-14T12:00:00-12:00",
            "tick_interval": 60
        },
        "agents": [{"agent_id": "a1", "name": "Rebecca", "age": "from 16 to 24"}]
    }"#;

    fn minimal() -> ConfigBundle {
        load_config(MINIMAL).unwrap()
    }

    #[test]
    fn defaults_applied() {
        let b = minimal();
        let s = &b.simulation;
        assert_eq!(s.recommendation_threshold, 7);
        assert_eq!(s.retrieval_weights, RetrievalWeights::new(1.0, 1.0, 1.0));
        assert_eq!(s.recency_decay, 0.995);
        assert_eq!(s.retrieval_top_k, 5);
        assert!(b.validate().is_empty());
    }

    #[test]
    fn free_text_age_kept_verbatim() {
        assert_eq!(minimal().agents[0].age, "from 16 to 24");
    }

    #[test]
    fn round_trip_is_structural_identity() {
        let b = minimal();
        let again = load_config(&b.to_json()).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn missing_name_names_path() {
        let doc = MINIMAL.replace(r#""name": "Rebecca", "#, "");
        match load_config(&doc) {
            Err(ConfigError::Parse { path, .. }) => assert_eq!(path, "agents[0].name"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_range_reported() {
        let mut b = minimal();
        b.simulation.end_time = b.simulation.start_time;
        assert!(b.validate().has("TIME_RANGE_EMPTY"));
    }

    #[test]
    fn threshold_bound() {
        let mut b = minimal();
        b.simulation.recommendation_threshold = 11;
        assert!(b.validate().has("THRESHOLD_OUT_OF_RANGE"));
        b.simulation.recommendation_threshold = 0;
        assert!(b.validate().has("THRESHOLD_OUT_OF_RANGE"));
    }

    #[test]
    fn unknown_audience() {
        let mut b = minimal();
        b.events.push(EventSpec {
            event_id: "e1".into(),
            event_time: b.simulation.start_time,
            description: "a private note".into(),
            audience: Audience::Agent("ghost".into()),
        });
        assert!(b.validate().has("UNKNOWN_AUDIENCE"));
    }

    #[test]
    fn zero_weights_and_short_span() {
        let mut b = minimal();
        b.simulation.retrieval_weights = RetrievalWeights::new(0.0, 0.0, 0.0);
        b.simulation.tick_interval = 1000;
        let r = b.validate();
        assert!(r.has("RETRIEVAL_WEIGHTS_ZERO"));
        assert!(r.has("TICK_INTERVAL_INVALID"));
    }

    #[test]
    fn remove_referenced_agent_rejected() {
        let b = minimal()
            .add_event(EventSpec {
                event_id: "e1".into(),
                event_time: minimal().simulation.start_time,
                description: "for a1 only".into(),
                audience: Audience::Agent("a1".into()),
            })
            .unwrap();
        assert!(matches!(
            b.remove_entity("a1"),
            Err(ConfigError::ReferencedElsewhere(_))
        ));
        let b = b.remove_entity("e1").unwrap();
        assert!(b.remove_entity("a1").unwrap().agents.is_empty());
    }

    #[test]
    fn partial_final_tick_truncated() {
        let mut b = minimal();
        b.simulation.tick_interval = 100;
        assert_eq!(b.simulation.total_ticks(), 3);
        assert_eq!(b.simulation.truncated_minutes(), 60);
    }
}

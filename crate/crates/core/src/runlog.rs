//! Run log record types. The JSON-lines log is the replay and audit source
//! of truth: every queryable datum is derived from it.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::config::{AgentProfile, ConfigBundle, EventSpec, NpcProfile, SimulationConfig};
use crate::memory::MemoryKind;
use crate::sparkle::{Delivery, FollowEdge, Spark};
use crate::time::{serde_aoe, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Post,
    Like,
    Follow,
    Reply,
}

impl ActionKind {
    pub const ENGAGEMENTS: [ActionKind; 3] = [ActionKind::Like, ActionKind::Follow, ActionKind::Reply];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Post => "post",
            ActionKind::Like => "like",
            ActionKind::Follow => "follow",
            ActionKind::Reply => "reply",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    Daily,
    Post,
    Like,
    Follow,
    Reply,
}

impl BehaviorKind {
    pub fn is_social(self) -> bool {
        self != BehaviorKind::Daily
    }
}

impl From<ActionKind> for BehaviorKind {
    fn from(k: ActionKind) -> Self {
        match k {
            ActionKind::Post => BehaviorKind::Post,
            ActionKind::Like => BehaviorKind::Like,
            ActionKind::Follow => BehaviorKind::Follow,
            ActionKind::Reply => BehaviorKind::Reply,
        }
    }
}

/// One simulated action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorRecord {
    pub record_id: String,
    pub agent: String,
    pub tick: u64,
    #[serde(with = "serde_aoe")]
    pub at: Timestamp,
    pub kind: BehaviorKind,
    /// Activity text, spark/reply content, or a short description.
    pub detail: String,
    /// Spark id for post/like/reply, followee id for follow; absent for daily.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub importance: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_ref: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Acted,
    Declined,
}

/// The recorded rationale for one decision, positive or negative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub trace_id: String,
    pub subject: String,
    pub tick: u64,
    pub action_kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// The spark the decision was about, for engagement decisions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spark_id: Option<String>,
    pub polarity: Polarity,
    pub reasoning: String,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parse_failure: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Asleep,
    AlreadyFollowing,
    AlreadyLiked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteKind {
    ParseFailure,
    TruncatedFinalTick,
    PlanRepaired,
    DuplicateIgnored,
    ActivityFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub kind: NoteKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    /// Template whose output could not be used, for parse failures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Skip wake-up planning and daily actions; agents only act socially.
    NoDailyLife,
    /// Drop every social-habit slot from prompts.
    NoSocialHabits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunOptions {
    #[serde(default)]
    pub ablation: Ablation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ConfigChange {
    Initial { config: ConfigBundle, options: RunOptions },
    ReplaceSimulation { simulation: SimulationConfig },
    UpsertAgent { agent: AgentProfile },
    UpsertNpc { npc: NpcProfile },
    AddEvent { event: EventSpec },
    RemoveEntity { id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    #[serde(with = "serde_aoe")]
    pub start_time: Timestamp,
    pub activity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyPlan {
    pub owner: String,
    pub date: NaiveDate,
    pub wake_hour: u8,
    pub entries: Vec<PlanEntry>,
}

/// Memory as logged: the embedding is elided.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryLogged {
    pub memory_id: String,
    pub owner: String,
    #[serde(with = "serde_aoe")]
    pub created_at: Timestamp,
    pub kind: MemoryKind,
    pub text: String,
    pub importance: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Retrieval {
    pub agent: String,
    /// `post` or the spark id for engagement decisions.
    pub purpose: String,
    pub situation: String,
    pub memory_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub agent: String,
    /// Absent for skipped post decisions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spark_id: Option<String>,
    pub kind: ActionKind,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum LogRecord {
    ConfigChange(ConfigChange),
    TickBegin {
        #[serde(with = "serde_aoe")]
        tick_time: Timestamp,
    },
    WakeHour {
        agent: String,
        date: NaiveDate,
        hour: u8,
    },
    Plan(DailyPlan),
    Memory(MemoryLogged),
    Retrieval(Retrieval),
    Spark(Spark),
    Delivery(Delivery),
    Behavior(BehaviorRecord),
    Trace(ReasoningTrace),
    Edge(FollowEdge),
    Skip(Skip),
    Note(Note),
    TickCommit {
        next_tick: u64,
        finished: bool,
    },
}

impl LogRecord {
    pub fn type_name(&self) -> &'static str {
        match self {
            LogRecord::ConfigChange(_) => "config_change",
            LogRecord::TickBegin { .. } => "tick_begin",
            LogRecord::WakeHour { .. } => "wake_hour",
            LogRecord::Plan(_) => "plan",
            LogRecord::Memory(_) => "memory",
            LogRecord::Retrieval(_) => "retrieval",
            LogRecord::Spark(_) => "spark",
            LogRecord::Delivery(_) => "delivery",
            LogRecord::Behavior(_) => "behavior",
            LogRecord::Trace(_) => "trace",
            LogRecord::Edge(_) => "edge",
            LogRecord::Skip(_) => "skip",
            LogRecord::Note(_) => "note",
            LogRecord::TickCommit { .. } => "tick_commit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub tick: u64,
    #[serde(flatten)]
    pub record: LogRecord,
}

impl LogEntry {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log entries serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_shape_round_trips() {
        let e = LogEntry {
            seq: 4,
            tick: 2,
            record: LogRecord::TickCommit {
                next_tick: 3,
                finished: false,
            },
        };
        let line = e.to_line();
        assert_eq!(
            line,
            r#"{"seq":4,"tick":2,"type":"tick_commit","data":{"next_tick":3,"finished":false}}"#
        );
        let back: LogEntry = serde_json::from_str(&line).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn ablation_names() {
        assert_eq!(serde_json::to_string(&Ablation::NoDailyLife).unwrap(), "\"no-daily-life\"");
        assert_eq!(serde_json::to_string(&Ablation::NoSocialHabits).unwrap(), "\"no-social-habits\"");
    }
}

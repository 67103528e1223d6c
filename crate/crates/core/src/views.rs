//! Read models derived from the run log alone: calendar, feed, reasoning,
//! hidden reasons, network and exports.

use std::collections::BTreeMap;

use chrono::{NaiveDate, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runlog::{
    BehaviorKind, BehaviorRecord, LogEntry, LogRecord, MemoryLogged, Polarity, ReasoningTrace, Skip,
};
use crate::sparkle::{Delivery, FollowEdge, Like, Reply, Spark};

pub const DEFAULT_PAGE_SIZE: usize = 100;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ViewError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl ViewError {
    pub fn code(&self) -> &'static str {
        match self {
            ViewError::NotFound(_) => "NOT_FOUND",
            ViewError::BadRequest(_) => "BAD_REQUEST",
        }
    }
}

/// Items after sequence `cursor`, with the cursor of the next page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_cursor: Option<u64>,
}

pub fn paginate<T: Clone>(items: &[(u64, T)], cursor: Option<u64>, limit: Option<usize>) -> Page<T> {
    let limit = limit.unwrap_or(DEFAULT_PAGE_SIZE).max(1);
    let start = cursor.map_or(0, |c| items.partition_point(|(seq, _)| *seq <= c));
    let chunk = &items[start..items.len().min(start + limit)];
    let next_cursor = if start + chunk.len() < items.len() {
        chunk.last().map(|(seq, _)| *seq)
    } else {
        None
    };
    Page {
        items: chunk.iter().map(|(_, v)| v.clone()).collect(),
        next_cursor,
    }
}

fn select<T>(log: &[LogEntry], pick: impl Fn(&LogRecord) -> Option<&T>) -> Vec<(u64, T)>
where
    T: Clone,
{
    log.iter()
        .filter_map(|e| pick(&e.record).map(|v| (e.seq, v.clone())))
        .collect()
}

pub fn behaviors(log: &[LogEntry]) -> Vec<(u64, BehaviorRecord)> {
    select(log, |r| match r {
        LogRecord::Behavior(b) => Some(b),
        _ => None,
    })
}

pub fn traces(log: &[LogEntry]) -> Vec<(u64, ReasoningTrace)> {
    select(log, |r| match r {
        LogRecord::Trace(t) => Some(t),
        _ => None,
    })
}

pub fn memories(log: &[LogEntry]) -> Vec<(u64, MemoryLogged)> {
    select(log, |r| match r {
        LogRecord::Memory(m) => Some(m),
        _ => None,
    })
}

pub fn edges(log: &[LogEntry]) -> Vec<(u64, FollowEdge)> {
    select(log, |r| match r {
        LogRecord::Edge(e) => Some(e),
        _ => None,
    })
}

pub fn deliveries(log: &[LogEntry]) -> Vec<(u64, Delivery)> {
    select(log, |r| match r {
        LogRecord::Delivery(d) => Some(d),
        _ => None,
    })
}

pub fn skips(log: &[LogEntry]) -> Vec<(u64, Skip)> {
    select(log, |r| match r {
        LogRecord::Skip(s) => Some(s),
        _ => None,
    })
}

/// Sparks with likes and replies folded in from behavior records, keyed by
/// the sequence number of their publication.
pub fn sparks(log: &[LogEntry]) -> Vec<(u64, Spark)> {
    let mut out: Vec<(u64, Spark)> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for e in log {
        match &e.record {
            LogRecord::Spark(s) => {
                index.insert(s.spark_id.clone(), out.len());
                out.push((e.seq, s.clone()));
            }
            LogRecord::Behavior(b) => {
                let Some(i) = b.target.as_ref().and_then(|t| index.get(t)) else {
                    continue;
                };
                let spark = &mut out[*i].1;
                let reasoning_ref = b.reasoning_ref.clone().unwrap_or_default();
                match b.kind {
                    BehaviorKind::Like => spark.likes.push(Like {
                        agent: b.agent.clone(),
                        tick: b.tick,
                        reasoning_ref,
                    }),
                    BehaviorKind::Reply => spark.replies.push(Reply {
                        author: b.agent.clone(),
                        replied_at: b.at,
                        content: b.detail.clone(),
                        reasoning_ref,
                    }),
                    _ => {}
                }
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparkSummary {
    #[serde(flatten)]
    pub spark: Spark,
    pub like_count: usize,
    pub reply_count: usize,
}

impl From<Spark> for SparkSummary {
    fn from(spark: Spark) -> Self {
        Self {
            like_count: spark.likes.len(),
            reply_count: spark.replies.len(),
            spark,
        }
    }
}

pub fn spark_page(log: &[LogEntry], author: Option<&str>, cursor: Option<u64>, limit: Option<usize>) -> Page<SparkSummary> {
    let all: Vec<(u64, SparkSummary)> = sparks(log)
        .into_iter()
        .filter(|(_, s)| author.is_none_or(|a| s.author == a))
        .map(|(seq, s)| (seq, s.into()))
        .collect();
    paginate(&all, cursor, limit)
}

pub fn spark_detail(log: &[LogEntry], spark_id: &str) -> Result<SparkSummary, ViewError> {
    sparks(log)
        .into_iter()
        .find(|(_, s)| s.spark_id == spark_id)
        .map(|(_, s)| s.into())
        .ok_or_else(|| ViewError::NotFound(format!("spark {spark_id}")))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarQuery {
    #[serde(default)]
    pub agent: Option<String>,
    #[serde(default)]
    pub min_importance: Option<u8>,
    /// Kinds to keep; empty keeps all.
    #[serde(default)]
    pub kinds: Vec<BehaviorKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarEntry {
    pub record: BehaviorRecord,
    /// Ticks the same daily activity continued after this one.
    pub continued_ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarBucket {
    pub date: NaiveDate,
    pub hour: u32,
    /// Matching records whose time falls in this bucket.
    pub count: usize,
    /// Records shown; a continuing daily activity appears only at its start.
    pub entries: Vec<CalendarEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub buckets: Vec<CalendarBucket>,
}

pub fn calendar(log: &[LogEntry], query: &CalendarQuery) -> Result<Calendar, ViewError> {
    if let Some(m) = query.min_importance {
        if !(1..=10).contains(&m) {
            return Err(ViewError::BadRequest(format!("min_importance {m} outside 1..=10")));
        }
    }
    let all = behaviors(log);
    // continuity is judged on the unfiltered daily stream of each agent
    let mut last_daily: BTreeMap<&str, (u64, &str, usize)> = BTreeMap::new();
    let mut starts: Vec<Option<usize>> = vec![None; all.len()];
    let mut continued: Vec<u64> = vec![0; all.len()];
    for (i, (_, b)) in all.iter().enumerate() {
        if b.kind != BehaviorKind::Daily {
            continue;
        }
        match last_daily.get(b.agent.as_str()) {
            Some(&(tick, text, start)) if tick + 1 == b.tick && text == b.detail => {
                starts[i] = Some(start);
                continued[start] += 1;
                last_daily.insert(&b.agent, (b.tick, &b.detail, start));
            }
            _ => {
                last_daily.insert(&b.agent, (b.tick, &b.detail, i));
            }
        }
    }
    let keep = |b: &BehaviorRecord| {
        query.agent.as_deref().is_none_or(|a| b.agent == a)
            && query.min_importance.is_none_or(|m| b.importance >= m)
            && (query.kinds.is_empty() || query.kinds.contains(&b.kind))
    };
    let mut buckets: BTreeMap<(NaiveDate, u32), CalendarBucket> = BTreeMap::new();
    for (i, (_, b)) in all.iter().enumerate() {
        if !keep(b) {
            continue;
        }
        let key = (b.at.date_naive(), b.at.hour());
        let bucket = buckets.entry(key).or_insert_with(|| CalendarBucket {
            date: key.0,
            hour: key.1,
            count: 0,
            entries: Vec::new(),
        });
        bucket.count += 1;
        if starts[i].is_none() {
            bucket.entries.push(CalendarEntry {
                record: b.clone(),
                continued_ticks: continued[i],
            });
        }
    }
    Ok(Calendar {
        buckets: buckets.into_values().collect(),
    })
}

/// The trace behind a behavior record (or a trace id).
pub fn reasoning(log: &[LogEntry], record_id: &str) -> Result<ReasoningTrace, ViewError> {
    let all = traces(log);
    if let Some((_, t)) = all.iter().find(|(_, t)| t.trace_id == record_id) {
        return Ok(t.clone());
    }
    let behavior = behaviors(log)
        .into_iter()
        .find(|(_, b)| b.record_id == record_id)
        .ok_or_else(|| ViewError::NotFound(format!("record {record_id}")))?
        .1;
    let trace_ref = behavior
        .reasoning_ref
        .ok_or_else(|| ViewError::NotFound(format!("record {record_id} has no reasoning")))?;
    all.into_iter()
        .find(|(_, t)| t.trace_id == trace_ref)
        .map(|(_, t)| t)
        .ok_or_else(|| ViewError::NotFound(format!("trace {trace_ref}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenReasons {
    pub spark_id: String,
    pub declined: Vec<ReasoningTrace>,
    pub skipped: Vec<Skip>,
}

/// Why agents shown a spark did not engage with it.
pub fn hidden(log: &[LogEntry], spark_id: &str) -> Result<HiddenReasons, ViewError> {
    if !sparks(log).iter().any(|(_, s)| s.spark_id == spark_id) {
        return Err(ViewError::NotFound(format!("spark {spark_id}")));
    }
    let declined = traces(log)
        .into_iter()
        .map(|(_, t)| t)
        .filter(|t| t.polarity == Polarity::Declined && t.spark_id.as_deref() == Some(spark_id))
        .collect();
    let skipped = skips(log)
        .into_iter()
        .map(|(_, s)| s)
        .filter(|s| s.spark_id.as_deref() == Some(spark_id))
        .collect();
    Ok(HiddenReasons {
        spark_id: spark_id.to_string(),
        declined,
        skipped,
    })
}

/// Ticks committed so far according to the log.
pub fn committed_ticks(log: &[LogEntry]) -> u64 {
    log.iter()
        .rev()
        .find_map(|e| match e.record {
            LogRecord::TickCommit { next_tick, .. } => Some(next_tick),
            _ => None,
        })
        .unwrap_or(0)
}

/// Follow edges existing at the end of `at_tick`.
pub fn network(log: &[LogEntry], at_tick: u64) -> Result<Vec<FollowEdge>, ViewError> {
    let current = committed_ticks(log);
    if at_tick > current {
        return Err(ViewError::BadRequest(format!(
            "tick {at_tick} is beyond the current tick {current}"
        )));
    }
    Ok(edges(log)
        .into_iter()
        .map(|(_, e)| e)
        .filter(|e| e.created_at_tick <= at_tick)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportKind {
    Behaviors,
    Sparks,
    Network,
    Memories,
    Traces,
}

impl std::str::FromStr for ExportKind {
    type Err = ViewError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| ViewError::BadRequest(format!("unknown export {s:?}")))
    }
}

fn lines<T: Serialize>(items: Vec<(u64, T)>) -> String {
    let mut out = String::new();
    for (_, v) in items {
        out.push_str(&serde_json::to_string(&v).expect("export serializes"));
        out.push('\n');
    }
    out
}

/// JSON-lines export in log order.
pub fn export(log: &[LogEntry], what: ExportKind) -> String {
    match what {
        ExportKind::Behaviors => lines(behaviors(log)),
        ExportKind::Sparks => lines(sparks(log)),
        ExportKind::Network => lines(edges(log)),
        ExportKind::Memories => lines(memories(log)),
        ExportKind::Traces => lines(traces(log)),
    }
}

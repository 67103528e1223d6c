//! Prompt assembly and the per-agent initialize → retrieve → reason →
//! decide → act pipeline.
//!
//! Every model-backed step goes through [`Cognition`], which owns the
//! re-ask policy: a malformed payload is re-asked up to [`MAX_REASKS`]
//! times with a corrective sentence appended, after which the step falls
//! back to its documented default and reports the failure to the caller.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::AgentProfile;
use crate::llm::{
    extract_json, normalize_answer, score_from_text, CompletionRequest, JsonRecord, PayloadError, Provider,
    ProviderError,
};
use crate::memory::MemoryRecord;
use crate::prompts::{build_prompt_omitting, ids, TemplateError, HABIT_SLOTS};
use crate::runlog::{Ablation, ActionKind, DailyPlan, PlanEntry};
use crate::sparkle::{Platform, PlatformError, Spark};
use crate::time::{at_minute, clock_label, date_of, minute_of_day, prompt_label, Timestamp};

pub const MAX_REASKS: u32 = 2;
pub const JSON_REASK: &str = "Return only the JSON object.";
pub const NUMBER_REASK: &str = "Return only the number.";
pub const DEFAULT_WAKE_HOUR: u8 = 7;
pub const SLEEPING: &str = "sleeping";
pub const ACTIVITY_FALLBACK: &str = "continues previous activity";
pub const FREE_SLOT: &str = "free time";
/// Bedtime when the plan does not end earlier, as minutes after midnight.
pub const LATEST_BEDTIME_MINUTE: u32 = 23 * 60;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CognitionError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl CognitionError {
    pub fn code(&self) -> &'static str {
        match self {
            CognitionError::Provider(e) => e.code(),
            CognitionError::Template(e) => e.code(),
            CognitionError::Platform(e) => e.code(),
            CognitionError::Precondition(_) => "PRECONDITION_FAILED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Plan,
    PublicEvent,
    PrivateEvent,
    DailyExperience,
    RecommendedSpark,
}

impl SourceTag {
    fn label(self) -> &'static str {
        match self {
            SourceTag::Plan => "plan",
            SourceTag::PublicEvent => "public event",
            SourceTag::PrivateEvent => "private event",
            SourceTag::DailyExperience => "daily life",
            SourceTag::RecommendedSpark => "on Sparkle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentionSource {
    pub tag: SourceTag,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intention {
    pub owner: String,
    pub tick: u64,
    pub sources: Vec<IntentionSource>,
}

impl Intention {
    pub fn new(owner: &str, tick: u64) -> Self {
        Self {
            owner: owner.to_string(),
            tick,
            sources: Vec::new(),
        }
    }

    pub fn push(&mut self, tag: SourceTag, text: impl Into<String>) {
        self.sources.push(IntentionSource { tag, text: text.into() });
    }

    /// Text whose embedding drives relevance in retrieval.
    pub fn situation_text(&self) -> String {
        self.sources
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// The `{Perceptions}` slot, excluding the plan source.
    pub fn perceptions_text(&self) -> String {
        let lines: Vec<String> = self
            .sources
            .iter()
            .filter(|s| s.tag != SourceTag::Plan)
            .map(|s| format!("({}) {}", s.tag.label(), s.text))
            .collect();
        if lines.is_empty() {
            "nothing in particular".to_string()
        } else {
            lines.join("; ")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub subject: String,
    pub action_kind: ActionKind,
    pub target: Option<String>,
    pub answer: bool,
    pub reasoning: String,
    pub tick: u64,
    pub prompt_hash: String,
    pub parse_failure: bool,
}

/// Output of a model-backed step. `failure` is set when the step fell back
/// to its default after exhausting re-asks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated<T> {
    pub value: T,
    pub prompt_hash: String,
    pub failure: Option<String>,
}

/// Result of an acting step; `content` is `None` when the model produced
/// nothing usable and the action must be abandoned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActOutcome {
    pub content: Option<String>,
    pub prompt_hash: String,
}

/// What an agent knows when deciding: the tick's perceptions, the memories
/// retrieved for this decision, and its own last post.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub tick: u64,
    pub now: Timestamp,
    pub intention: &'a Intention,
    pub memories: &'a [MemoryRecord],
    pub last_post: Option<(&'a str, Timestamp)>,
}

pub fn demographics(agent: &AgentProfile) -> String {
    let fields = [
        ("Name", &agent.name),
        ("Age", &agent.age),
        ("Gender", &agent.gender),
        ("Residency", &agent.residency),
        ("Innate", &agent.innate),
        ("Job", &agent.job),
        ("Lifestyle", &agent.lifestyle),
    ];
    fields
        .iter()
        .filter(|(_, v)| !v.trim().is_empty())
        .map(|(k, v)| format!("{k}: {v}."))
        .collect::<Vec<_>>()
        .join(" ")
}

fn memories_text(agent: &AgentProfile, memories: &[MemoryRecord]) -> String {
    if memories.is_empty() {
        return format!("{} recalls nothing in particular.", agent.name);
    }
    let mut s = format!("{} remembers:", agent.name);
    for m in memories {
        s.push_str(&format!("\n- [{}] {}", prompt_label(m.created_at), m.text));
    }
    s
}

fn plan_text(plan: Option<&DailyPlan>) -> String {
    match plan {
        Some(p) if !p.entries.is_empty() => p
            .entries
            .iter()
            .map(|e| format!("{} - {}", clock_label(e.start_time), e.activity))
            .collect::<Vec<_>>()
            .join("\n"),
        _ => "no plan".to_string(),
    }
}

/// The plan entry in effect at `now`.
pub fn current_plan_activity(plan: Option<&DailyPlan>, now: Timestamp) -> Option<&str> {
    plan?
        .entries
        .iter()
        .rev()
        .find(|e| e.start_time <= now)
        .map(|e| e.activity.as_str())
}

/// Sleep lasts from bedtime until the wake hour. Bedtime is the start of the
/// plan's final entry (for plans with two or more entries) or 23:00,
/// whichever comes first.
pub fn is_asleep(now: Timestamp, wake_hour: Option<u8>, plan: Option<&DailyPlan>) -> bool {
    let minute = minute_of_day(now);
    let wake = u32::from(wake_hour.unwrap_or(DEFAULT_WAKE_HOUR)) * 60;
    if minute < wake {
        return true;
    }
    let mut bedtime = LATEST_BEDTIME_MINUTE;
    if let Some(p) = plan.filter(|p| p.entries.len() >= 2 && p.date == date_of(now)) {
        let last = minute_of_day(p.entries.last().expect("non-empty").start_time);
        if last > wake {
            bedtime = bedtime.min(last);
        }
    }
    minute >= bedtime
}

fn plan_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:[-*•]\s*)?(\d{1,2})(?::(\d{2}))?\s*(am|pm|a\.m\.|p\.m\.)?\s*[-\u{2013}\u{2014}:)]?\s*(.*\S)\s*$")
            .expect("valid regex")
    })
}

/// Parses `HH:MM - activity` lines. Entries are sorted and any entry before
/// the wake hour is moved to it. Returns the plan and whether it was repaired.
pub fn parse_plan(owner: &str, date: NaiveDate, wake_hour: u8, raw: &str) -> (DailyPlan, bool) {
    let wake_minute = u32::from(wake_hour) * 60;
    let mut entries: Vec<(u32, String)> = Vec::new();
    for line in raw.lines() {
        let Some(c) = plan_line().captures(line) else {
            continue;
        };
        let Ok(mut hour) = c[1].parse::<u32>() else {
            continue;
        };
        let minute: u32 = c.get(2).map_or(Ok(0), |m| m.as_str().parse()).unwrap_or(60);
        if let Some(mer) = c.get(3) {
            let pm = mer.as_str().to_ascii_lowercase().starts_with('p');
            if hour == 12 {
                hour = 0;
            }
            if pm {
                hour += 12;
            }
        }
        let activity = c[4].trim().to_string();
        if hour > 23 || minute > 59 || activity.is_empty() {
            continue;
        }
        entries.push((hour * 60 + minute, activity));
    }
    entries.sort_by_key(|(m, _)| *m);
    let mut repaired = false;
    let entries = entries
        .into_iter()
        .map(|(m, activity)| {
            let m = if m < wake_minute {
                repaired = true;
                wake_minute
            } else {
                m
            };
            PlanEntry {
                start_time: at_minute(date, m),
                activity,
            }
        })
        .collect();
    (
        DailyPlan {
            owner: owner.to_string(),
            date,
            wake_hour,
            entries,
        },
        repaired,
    )
}

fn free_slot_plan(owner: &str, date: NaiveDate, wake_hour: u8) -> DailyPlan {
    DailyPlan {
        owner: owner.to_string(),
        date,
        wake_hour,
        entries: vec![PlanEntry {
            start_time: at_minute(date, u32::from(wake_hour) * 60),
            activity: FREE_SLOT.to_string(),
        }],
    }
}

fn non_empty_content(record: &JsonRecord) -> Result<String, PayloadError> {
    let c = record.str("Content").unwrap_or_default().trim();
    if c.is_empty() {
        Err(PayloadError::Malformed("Content is empty".into()))
    } else {
        Ok(c.to_string())
    }
}

fn reasoning_and_answer(record: &JsonRecord) -> Result<(String, bool), PayloadError> {
    let answer = normalize_answer(record.str("Answer").unwrap_or_default())?;
    let reasoning = record.str("Reasoning").unwrap_or_default().trim().to_string();
    if reasoning.is_empty() {
        return Err(PayloadError::Malformed("Reasoning is empty".into()));
    }
    Ok((reasoning, answer))
}

pub struct Cognition<'a> {
    provider: &'a Provider,
    ablation: Ablation,
}

enum Asked<T> {
    Ok(T, String),
    Failed { hash: String, reason: String },
}

impl<'a> Cognition<'a> {
    pub fn new(provider: &'a Provider, ablation: Ablation) -> Self {
        Self { provider, ablation }
    }

    fn request(
        &self,
        template_id: &str,
        agent: &str,
        tick: u64,
        mut slots: BTreeMap<String, String>,
    ) -> Result<CompletionRequest, CognitionError> {
        let omit: &[&str] = if self.ablation == Ablation::NoSocialHabits {
            &HABIT_SLOTS
        } else {
            &[]
        };
        for s in omit {
            slots.remove(*s);
        }
        let prompt = build_prompt_omitting(template_id, &slots, omit)?;
        let mut req = CompletionRequest::new(template_id, prompt);
        req.agent = Some(agent.to_string());
        req.tick = Some(tick);
        req.slots = slots;
        Ok(req)
    }

    fn ask<T>(
        &self,
        first: CompletionRequest,
        reask: &str,
        parse: impl Fn(&str) -> Result<T, PayloadError>,
    ) -> Result<Asked<T>, CognitionError> {
        let mut req = first;
        loop {
            let completion = self.provider.complete(&req)?;
            match parse(&completion.text) {
                Ok(v) => return Ok(Asked::Ok(v, completion.hash)),
                Err(err) if req.attempt >= MAX_REASKS => {
                    return Ok(Asked::Failed {
                        hash: completion.hash,
                        reason: err.to_string(),
                    })
                }
                Err(_) => req = req.reask(reask),
            }
        }
    }

    fn ask_json<T>(
        &self,
        req: CompletionRequest,
        required: &[&str],
        validate: impl Fn(&JsonRecord) -> Result<T, PayloadError>,
    ) -> Result<Asked<T>, CognitionError> {
        self.ask(req, JSON_REASK, |raw| validate(&extract_json(raw, required)?))
    }

    fn ask_score(&self, req: CompletionRequest, lo: i64, hi: i64) -> Result<Asked<u8>, CognitionError> {
        self.ask(req, NUMBER_REASK, |raw| score_from_text(raw, lo, hi).map(|v| v as u8))
    }

    fn generated<T>(asked: Asked<T>, fallback: T) -> Generated<T> {
        match asked {
            Asked::Ok(value, prompt_hash) => Generated {
                value,
                prompt_hash,
                failure: None,
            },
            Asked::Failed { hash, reason } => Generated {
                value: fallback,
                prompt_hash: hash,
                failure: Some(reason),
            },
        }
    }

    fn common_slots(&self, agent: &AgentProfile) -> BTreeMap<String, String> {
        let mut s = BTreeMap::new();
        s.insert("Agent".to_string(), agent.name.clone());
        s.insert("Agent's Demographic Information".to_string(), demographics(agent));
        s
    }

    fn decision_slots(&self, agent: &AgentProfile, ctx: &DecisionContext<'_>) -> BTreeMap<String, String> {
        let mut s = self.common_slots(agent);
        s.insert("Perceptions".into(), ctx.intention.perceptions_text());
        s.insert("Agent's Retrieved Memories".into(), memories_text(agent, ctx.memories));
        let h = &agent.habits;
        s.insert("Post Frequency".into(), h.post_frequency.clone());
        s.insert("Post Content".into(), h.post_content.clone());
        s.insert("Followers".into(), h.followers.clone());
        s.insert("Engagement".into(), h.engagement.clone());
        s
    }

    /// Importance (1-10) of a memory for `agent`; 1 when unparseable.
    pub fn rate_importance(&self, agent: &AgentProfile, text: &str, tick: u64) -> Result<Generated<u8>, CognitionError> {
        let mut slots = self.common_slots(agent);
        slots.insert("Event".into(), text.to_string());
        let req = self.request(ids::IMPORTANCE, &agent.agent_id, tick, slots)?;
        Ok(Self::generated(self.ask_score(req, 1, 10)?, 1))
    }

    pub fn generate_wake_hour(&self, agent: &AgentProfile, date: NaiveDate, tick: u64) -> Result<Generated<u8>, CognitionError> {
        let mut slots = self.common_slots(agent);
        slots.insert("Date".into(), date.format("%A, %Y-%m-%d").to_string());
        let req = self.request(ids::WAKE_HOUR, &agent.agent_id, tick, slots)?;
        Ok(Self::generated(self.ask_score(req, 0, 23)?, DEFAULT_WAKE_HOUR))
    }

    /// Returns the plan; `failure` is set for the free-slot fallback, and the
    /// boolean reports entries moved to the wake hour.
    pub fn generate_daily_plan(
        &self,
        agent: &AgentProfile,
        date: NaiveDate,
        wake_hour: u8,
        tick: u64,
    ) -> Result<(Generated<DailyPlan>, bool), CognitionError> {
        let mut slots = self.common_slots(agent);
        slots.insert("Date".into(), date.format("%A, %Y-%m-%d").to_string());
        slots.insert("Wake Hour".into(), format!("{wake_hour:02}:00"));
        let req = self.request(ids::DAILY_PLAN, &agent.agent_id, tick, slots)?;
        let completion = self.provider.complete(&req)?;
        let (plan, repaired) = parse_plan(&agent.agent_id, date, wake_hour, &completion.text);
        if plan.entries.is_empty() {
            return Ok((
                Generated {
                    value: free_slot_plan(&agent.agent_id, date, wake_hour),
                    prompt_hash: completion.hash,
                    failure: Some("no timed entries in plan output".into()),
                },
                false,
            ));
        }
        Ok((
            Generated {
                value: plan,
                prompt_hash: completion.hash,
                failure: None,
            },
            repaired,
        ))
    }

    pub fn generate_daily_action(
        &self,
        agent: &AgentProfile,
        tick: u64,
        now: Timestamp,
        intention: &Intention,
        plan: Option<&DailyPlan>,
    ) -> Result<Generated<String>, CognitionError> {
        let mut slots = self.common_slots(agent);
        slots.insert("Daily Plan".into(), plan_text(plan));
        slots.insert("Time".into(), prompt_label(now));
        slots.insert(
            "Current Plan Activity".into(),
            current_plan_activity(plan, now).unwrap_or(FREE_SLOT).to_string(),
        );
        slots.insert("Perceptions".into(), intention.perceptions_text());
        let req = self.request(ids::DAILY_ACTION, &agent.agent_id, tick, slots)?;
        let asked = self.ask_json(req, &["Activity"], |r| {
            let a = r.str("Activity").unwrap_or_default().trim();
            if a.is_empty() {
                Err(PayloadError::Malformed("Activity is empty".into()))
            } else {
                Ok(a.to_string())
            }
        })?;
        Ok(Self::generated(asked, ACTIVITY_FALLBACK.to_string()))
    }

    fn decision(
        &self,
        agent: &AgentProfile,
        kind: ActionKind,
        target: Option<String>,
        tick: u64,
        req: CompletionRequest,
    ) -> Result<Decision, CognitionError> {
        let asked = self.ask_json(req, &["Reasoning", "Answer"], reasoning_and_answer)?;
        Ok(match asked {
            Asked::Ok((reasoning, answer), prompt_hash) => Decision {
                subject: agent.agent_id.clone(),
                action_kind: kind,
                target,
                answer,
                reasoning,
                tick,
                prompt_hash,
                parse_failure: false,
            },
            Asked::Failed { hash, reason } => Decision {
                subject: agent.agent_id.clone(),
                action_kind: kind,
                target,
                answer: false,
                reasoning: format!("PARSE_FAILURE: {reason}"),
                tick,
                prompt_hash: hash,
                parse_failure: true,
            },
        })
    }

    fn post_slots(&self, agent: &AgentProfile, ctx: &DecisionContext<'_>) -> BTreeMap<String, String> {
        let mut s = self.decision_slots(agent, ctx);
        s.insert("Time".into(), prompt_label(ctx.now));
        match ctx.last_post {
            Some((content, at)) => {
                s.insert("Content".into(), content.to_string());
                s.insert("Last Post Time".into(), prompt_label(at));
            }
            None => {
                s.insert("Content".into(), "nothing yet".into());
                s.insert("Last Post Time".into(), "no time so far".into());
            }
        }
        s
    }

    pub fn decide_post(&self, agent: &AgentProfile, ctx: &DecisionContext<'_>) -> Result<Decision, CognitionError> {
        let req = self.request(ids::DECIDE_POST, &agent.agent_id, ctx.tick, self.post_slots(agent, ctx))?;
        self.decision(agent, ActionKind::Post, None, ctx.tick, req)
    }

    pub fn act_post(
        &self,
        agent: &AgentProfile,
        ctx: &DecisionContext<'_>,
        decision: &Decision,
    ) -> Result<ActOutcome, CognitionError> {
        if !(decision.answer && decision.action_kind == ActionKind::Post && decision.tick == ctx.tick) {
            return Err(CognitionError::Precondition(
                "act_post requires a positive post decision from the same tick".into(),
            ));
        }
        let req = self.request(ids::ACT_POST, &agent.agent_id, ctx.tick, self.post_slots(agent, ctx))?;
        Ok(match self.ask_json(req, &["Content"], non_empty_content)? {
            Asked::Ok(content, prompt_hash) => ActOutcome {
                content: Some(content),
                prompt_hash,
            },
            Asked::Failed { hash, .. } => ActOutcome {
                content: None,
                prompt_hash: hash,
            },
        })
    }

    fn engagement_slots(
        &self,
        agent: &AgentProfile,
        spark: &Spark,
        author_name: &str,
        ctx: &DecisionContext<'_>,
    ) -> BTreeMap<String, String> {
        let mut s = self.decision_slots(agent, ctx);
        s.insert("Current Time".into(), prompt_label(ctx.now));
        s.insert("Agent2".into(), author_name.to_string());
        s.insert("Content".into(), spark.content.clone());
        s.insert("Time".into(), prompt_label(spark.posted_at));
        s
    }

    pub fn decide_engagement(
        &self,
        agent: &AgentProfile,
        spark: &Spark,
        author_name: &str,
        kind: ActionKind,
        platform: &Platform,
        ctx: &DecisionContext<'_>,
    ) -> Result<Decision, CognitionError> {
        let (template, target) = match kind {
            ActionKind::Like => {
                if platform.has_liked(&agent.agent_id, &spark.spark_id) {
                    return Err(CognitionError::Precondition("spark already liked".into()));
                }
                (ids::DECIDE_LIKE, spark.spark_id.clone())
            }
            ActionKind::Follow => {
                if spark.author == agent.agent_id {
                    return Err(CognitionError::Platform(PlatformError::SelfFollow(agent.agent_id.clone())));
                }
                if platform.follows(&agent.agent_id, &spark.author) {
                    return Err(CognitionError::Precondition("author already followed".into()));
                }
                (ids::DECIDE_FOLLOW, spark.author.clone())
            }
            ActionKind::Reply => (ids::DECIDE_REPLY, spark.spark_id.clone()),
            ActionKind::Post => {
                return Err(CognitionError::Precondition("post is not an engagement".into()));
            }
        };
        let slots = self.engagement_slots(agent, spark, author_name, ctx);
        let req = self.request(template, &agent.agent_id, ctx.tick, slots)?;
        self.decision(agent, kind, Some(target), ctx.tick, req)
    }

    pub fn act_reply(
        &self,
        agent: &AgentProfile,
        spark: &Spark,
        author_name: &str,
        ctx: &DecisionContext<'_>,
        decision: &Decision,
    ) -> Result<ActOutcome, CognitionError> {
        if !(decision.answer
            && decision.action_kind == ActionKind::Reply
            && decision.tick == ctx.tick
            && decision.target.as_deref() == Some(spark.spark_id.as_str()))
        {
            return Err(CognitionError::Precondition(
                "act_reply requires a positive reply decision for this spark".into(),
            ));
        }
        let slots = self.engagement_slots(agent, spark, author_name, ctx);
        let req = self.request(ids::ACT_REPLY, &agent.agent_id, ctx.tick, slots)?;
        Ok(match self.ask_json(req, &["Content"], non_empty_content)? {
            Asked::Ok(content, prompt_hash) => ActOutcome {
                content: Some(content),
                prompt_hash,
            },
            Asked::Failed { hash, .. } => ActOutcome {
                content: None,
                prompt_hash: hash,
            },
        })
    }

    /// Recommendation strength (1-10) of `spark` for `recipient`; 1 on
    /// unparseable output so failures never recommend.
    pub fn score_recommendation(
        &self,
        recipient: &AgentProfile,
        spark: &Spark,
        author_name: &str,
        tick: u64,
    ) -> Result<Generated<u8>, CognitionError> {
        if recipient.agent_id == spark.author {
            return Err(PlatformError::SelfRecommendation(recipient.agent_id.clone()).into());
        }
        let mut slots = BTreeMap::new();
        slots.insert("Agent1".to_string(), recipient.name.clone());
        slots.insert("Agent1's Demographic Information".to_string(), demographics(recipient));
        slots.insert("Agent2".to_string(), author_name.to_string());
        slots.insert("Content".to_string(), spark.content.clone());
        slots.insert("Time".to_string(), prompt_label(spark.posted_at));
        let req = self.request(ids::RECOMMEND, &recipient.agent_id, tick, slots)?;
        Ok(Self::generated(self.ask_score(req, 1, 10)?, 1))
    }
}

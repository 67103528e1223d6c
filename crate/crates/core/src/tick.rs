//! One tick of the simulation as a pure function of (config, prior world
//! state, provider responses).
//!
//! Phases run in a fixed order: day boundary (wake hour, plan), perception
//! of events and NPC posts, daily actions, post decisions, routing, and
//! engagement. Agents are always processed in ascending `agent_id` order.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cognition::{
    current_plan_activity, is_asleep, CognitionError, Decision, DecisionContext, Intention, SourceTag, SLEEPING,
};
use crate::cognition::{ActOutcome, Cognition, ACTIVITY_FALLBACK};
use crate::config::{AgentProfile, Audience, ConfigBundle};
use crate::llm::{Provider, ProviderError};
use crate::memory::{MemoryError, MemoryKind, MemoryRecord, MemoryStore, RetrievalQuery};
use crate::prompts::ids;
use crate::runlog::{
    Ablation, ActionKind, BehaviorKind, BehaviorRecord, DailyPlan, LogRecord, MemoryLogged, Note, NoteKind, Polarity,
    ReasoningTrace, Retrieval, RunOptions, Skip, SkipReason,
};
use crate::sparkle::{Applied, Delivery, Platform, PlatformError, Spark};
use crate::time::{at_minute, date_of, minutes, serde_aoe, Timestamp};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TickError {
    #[error(transparent)]
    Cognition(#[from] CognitionError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
}

impl From<ProviderError> for TickError {
    fn from(e: ProviderError) -> Self {
        TickError::Cognition(CognitionError::Provider(e))
    }
}

impl TickError {
    pub fn code(&self) -> &'static str {
        match self {
            TickError::Cognition(e) => e.code(),
            TickError::Memory(e) => e.code(),
            TickError::Platform(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LastPost {
    pub content: String,
    #[serde(with = "serde_aoe")]
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub text: String,
    pub importance: u8,
}

/// Mutable per-agent state carried across ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRuntime {
    pub memory: MemoryStore,
    pub wake_date: Option<NaiveDate>,
    pub wake_hour: Option<u8>,
    pub plan: Option<DailyPlan>,
    /// Set at the first tick of a date until the plan is generated.
    pub plan_due: bool,
    pub activity: Option<Activity>,
    pub last_post: Option<LastPost>,
    /// Sparks delivered last tick; perceived as recommended sparks.
    pub carried_sparks: Vec<String>,
}

impl AgentRuntime {
    pub fn new(agent_id: &str) -> Self {
        Self {
            memory: MemoryStore::new(agent_id),
            wake_date: None,
            wake_hour: None,
            plan: None,
            plan_due: false,
            activity: None,
            last_post: None,
            carried_sparks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub platform: Platform,
    pub agents: BTreeMap<String, AgentRuntime>,
    pub behavior_count: u64,
}

/// Records produced by one committed tick, excluding `tick_begin` and
/// `tick_commit`, which the session adds.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub world: WorldState,
    pub records: Vec<LogRecord>,
}

/// Executes tick `tick` against a copy of `world`. Nothing is applied to
/// the caller's state; an error leaves no trace of the partial tick.
pub fn step_tick(
    config: &ConfigBundle,
    options: RunOptions,
    world: &WorldState,
    tick: u64,
    provider: &Provider,
) -> Result<TickOutput, TickError> {
    let sim = &config.simulation;
    let now = sim.tick_time(tick);
    let mut run = TickRun {
        config,
        ablation: options.ablation,
        provider,
        cog: Cognition::new(provider, options.ablation),
        tick,
        now,
        until: now + minutes(sim.tick_interval),
        world: world.clone(),
        out: Vec::new(),
        intentions: BTreeMap::new(),
    };
    run.execute()?;
    Ok(TickOutput {
        world: run.world,
        records: run.out,
    })
}

struct TickRun<'a> {
    config: &'a ConfigBundle,
    ablation: Ablation,
    provider: &'a Provider,
    cog: Cognition<'a>,
    tick: u64,
    now: Timestamp,
    until: Timestamp,
    world: WorldState,
    out: Vec<LogRecord>,
    intentions: BTreeMap<String, Intention>,
}

impl<'a> TickRun<'a> {
    fn execute(&mut self) -> Result<(), TickError> {
        let config = self.config;
        let agents = config.agents_by_id();
        for a in &agents {
            self.world
                .agents
                .entry(a.agent_id.clone())
                .or_insert_with(|| AgentRuntime::new(&a.agent_id));
        }
        if self.tick == 0 && config.simulation.truncated_minutes() > 0 {
            self.note(
                NoteKind::TruncatedFinalTick,
                None,
                None,
                format!(
                    "final {} minutes do not fill a tick and are not simulated",
                    config.simulation.truncated_minutes()
                ),
            );
        }
        for a in &agents {
            self.day_boundary(a)?;
        }
        let published = self.perceive(&agents)?;
        if self.ablation != Ablation::NoDailyLife {
            for a in &agents {
                self.daily_action(a)?;
            }
        }
        let mut tick_sparks = published;
        for a in &agents {
            if let Some(id) = self.post(a)? {
                tick_sparks.push(id);
            }
        }
        let mut deliveries = Vec::new();
        for spark_id in &tick_sparks {
            deliveries.extend(self.route(&agents, spark_id)?);
        }
        for a in &agents {
            let mine: Vec<&Delivery> = deliveries.iter().filter(|d| d.recipient == a.agent_id).collect();
            for d in &mine {
                self.engage(a, &d.spark_id)?;
            }
            let rt = self.runtime(&a.agent_id);
            rt.carried_sparks = mine.iter().map(|d| d.spark_id.clone()).collect();
        }
        Ok(())
    }

    fn runtime(&mut self, agent_id: &str) -> &mut AgentRuntime {
        self.world.agents.get_mut(agent_id).expect("runtime initialised")
    }

    fn asleep(&self, agent_id: &str) -> bool {
        let rt = &self.world.agents[agent_id];
        is_asleep(self.now, rt.wake_hour, rt.plan.as_ref())
    }

    fn note(&mut self, kind: NoteKind, agent: Option<&str>, template_id: Option<&str>, message: String) {
        self.out.push(LogRecord::Note(Note {
            kind,
            agent: agent.map(str::to_string),
            template_id: template_id.map(str::to_string),
            message,
        }));
    }

    fn parse_failure(&mut self, agent: &str, template_id: &str, reason: &str) {
        self.note(
            NoteKind::ParseFailure,
            Some(agent),
            Some(template_id),
            format!("PARSE_FAILURE: {reason}"),
        );
    }

    /// Appends a memory, rating its importance unless `fixed` is given.
    fn remember(&mut self, agent: &AgentProfile, kind: MemoryKind, text: &str, fixed: Option<u8>) -> Result<u8, TickError> {
        let importance = match fixed {
            Some(i) => i,
            None => {
                let g = self.cog.rate_importance(agent, text, self.tick)?;
                if let Some(reason) = &g.failure {
                    self.parse_failure(&agent.agent_id, ids::IMPORTANCE, reason);
                }
                g.value
            }
        };
        let embedding = self.provider.embed(text)?;
        let now = self.now;
        let record = self
            .runtime(&agent.agent_id)
            .memory
            .append(kind, text, now, importance, embedding)?;
        let logged = MemoryLogged {
            memory_id: record.memory_id.clone(),
            owner: record.owner.clone(),
            created_at: record.created_at,
            kind,
            text: record.text.clone(),
            importance,
        };
        self.out.push(LogRecord::Memory(logged));
        Ok(importance)
    }

    fn behavior(
        &mut self,
        agent: &str,
        kind: BehaviorKind,
        detail: &str,
        target: Option<String>,
        importance: u8,
        reasoning_ref: Option<String>,
    ) {
        let record_id = format!("b{:06}", self.world.behavior_count);
        self.world.behavior_count += 1;
        self.out.push(LogRecord::Behavior(BehaviorRecord {
            record_id,
            agent: agent.to_string(),
            tick: self.tick,
            at: self.now,
            kind,
            detail: detail.to_string(),
            target,
            importance,
            reasoning_ref,
        }));
    }

    fn trace(&mut self, d: &Decision, spark_id: Option<&str>, polarity: Polarity, reasoning: String) -> String {
        let mut trace_id = format!("t{:05}/{}/{}", self.tick, d.subject, d.action_kind.as_str());
        if let Some(s) = spark_id {
            trace_id.push('/');
            trace_id.push_str(s);
        }
        self.out.push(LogRecord::Trace(ReasoningTrace {
            trace_id: trace_id.clone(),
            subject: d.subject.clone(),
            tick: d.tick,
            action_kind: d.action_kind,
            target: d.target.clone(),
            spark_id: spark_id.map(str::to_string),
            polarity,
            reasoning,
            prompt_hash: d.prompt_hash.clone(),
            parse_failure: d.parse_failure,
        }));
        trace_id
    }

    fn skip(&mut self, agent: &str, spark_id: Option<&str>, kind: ActionKind, reason: SkipReason) {
        self.out.push(LogRecord::Skip(Skip {
            agent: agent.to_string(),
            spark_id: spark_id.map(str::to_string),
            kind,
            reason,
        }));
    }

    fn retrieve(&mut self, agent: &AgentProfile, purpose: &str, situation: &str) -> Result<Vec<MemoryRecord>, TickError> {
        let situation = if situation.trim().is_empty() {
            format!("{} is browsing Sparkle", agent.name)
        } else {
            situation.to_string()
        };
        let situation_embedding = self.provider.embed(&situation)?;
        let sim = &self.config.simulation;
        let query = RetrievalQuery {
            owner: agent.agent_id.clone(),
            situation_text: situation.clone(),
            situation_embedding,
            now: self.now,
            top_k: sim.retrieval_top_k,
        };
        let (weights, decay) = (sim.retrieval_weights, sim.recency_decay);
        let got = self.runtime(&agent.agent_id).memory.retrieve(&query, weights, decay);
        self.out.push(LogRecord::Retrieval(Retrieval {
            agent: agent.agent_id.clone(),
            purpose: purpose.to_string(),
            situation,
            memory_ids: got.iter().map(|m| m.memory_id.clone()).collect(),
        }));
        Ok(got)
    }

    fn day_boundary(&mut self, agent: &AgentProfile) -> Result<(), TickError> {
        let date = date_of(self.now);
        let id = agent.agent_id.as_str();
        if self.world.agents[id].wake_date != Some(date) {
            let g = self.cog.generate_wake_hour(agent, date, self.tick)?;
            if let Some(reason) = &g.failure {
                self.parse_failure(id, ids::WAKE_HOUR, reason);
            }
            self.out.push(LogRecord::WakeHour {
                agent: id.to_string(),
                date,
                hour: g.value,
            });
            let rt = self.runtime(id);
            rt.wake_date = Some(date);
            rt.wake_hour = Some(g.value);
            rt.plan_due = true;
        }
        if self.ablation == Ablation::NoDailyLife {
            return Ok(());
        }
        let rt = &self.world.agents[id];
        let wake_hour = rt.wake_hour.expect("wake hour set above");
        if !rt.plan_due || self.now < at_minute(date, u32::from(wake_hour) * 60) {
            return Ok(());
        }
        let (g, repaired) = self.cog.generate_daily_plan(agent, date, wake_hour, self.tick)?;
        if let Some(reason) = &g.failure {
            self.parse_failure(id, ids::DAILY_PLAN, reason);
        }
        if repaired {
            self.note(
                NoteKind::PlanRepaired,
                Some(id),
                Some(ids::DAILY_PLAN),
                format!("entries before {wake_hour:02}:00 moved to the wake hour"),
            );
        }
        let plan = g.value;
        self.out.push(LogRecord::Plan(plan.clone()));
        let summary = plan
            .entries
            .iter()
            .map(|e| format!("{} {}", crate::time::clock_label(e.start_time), e.activity))
            .collect::<Vec<_>>()
            .join("; ");
        let rt = self.runtime(id);
        rt.plan = Some(plan);
        rt.plan_due = false;
        self.remember(agent, MemoryKind::Plan, &format!("{}'s plan for {date}: {summary}", agent.name), None)?;
        Ok(())
    }

    /// Phase 1. Returns the NPC sparks published this tick in publish order.
    fn perceive(&mut self, agents: &[&AgentProfile]) -> Result<Vec<String>, TickError> {
        let config = self.config;
        for a in agents {
            let mut intention = Intention::new(&a.agent_id, self.tick);
            let rt = &self.world.agents[&a.agent_id];
            if self.ablation != Ablation::NoDailyLife {
                if let Some(activity) = current_plan_activity(rt.plan.as_ref(), self.now) {
                    intention.push(SourceTag::Plan, format!("{} planned to {activity}", a.name));
                }
            }
            for spark_id in &rt.carried_sparks {
                if let Some(s) = self.world.platform.spark(spark_id) {
                    intention.push(
                        SourceTag::RecommendedSpark,
                        format!("{} posted on Sparkle: {}", config.display_name(&s.author), s.content),
                    );
                }
            }
            self.intentions.insert(a.agent_id.clone(), intention);
        }

        let mut due: Vec<_> = config
            .events
            .iter()
            .filter(|e| e.event_time >= self.now && e.event_time < self.until)
            .collect();
        due.sort_by(|a, b| a.event_time.cmp(&b.event_time).then_with(|| a.event_id.cmp(&b.event_id)));
        for event in due {
            for a in agents {
                let (tag, visible) = match &event.audience {
                    Audience::All => (SourceTag::PublicEvent, true),
                    Audience::Agent(id) => (SourceTag::PrivateEvent, *id == a.agent_id),
                };
                if !visible {
                    continue;
                }
                self.intentions
                    .get_mut(&a.agent_id)
                    .expect("intention per agent")
                    .push(tag, event.description.clone());
                self.remember(a, MemoryKind::PerceptionEvent, &event.description, None)?;
            }
        }

        let mut posts: Vec<(&str, &crate::config::ScheduledPost)> = config
            .npcs
            .iter()
            .flat_map(|n| n.scheduled_posts.iter().map(move |p| (n.npc_id.as_str(), p)))
            .filter(|(_, p)| p.post_time >= self.now && p.post_time < self.until)
            .collect();
        posts.sort_by(|a, b| a.1.post_time.cmp(&b.1.post_time).then_with(|| a.0.cmp(b.0)));
        let mut published = Vec::new();
        for (npc, post) in posts {
            let tick = self.tick;
            let spark = self
                .world
                .platform
                .publish_spark(npc, true, &post.content, post.post_time, tick)?
                .clone();
            published.push(spark.spark_id.clone());
            self.out.push(LogRecord::Spark(spark));
        }
        Ok(published)
    }

    fn daily_action(&mut self, agent: &AgentProfile) -> Result<(), TickError> {
        let id = agent.agent_id.as_str();
        let previous = self.world.agents[id].activity.clone();
        let (text, fixed) = if self.asleep(id) {
            (SLEEPING.to_string(), Some(1))
        } else {
            let rt = &self.world.agents[id];
            let g = self
                .cog
                .generate_daily_action(agent, self.tick, self.now, &self.intentions[id], rt.plan.as_ref())?;
            match g.failure {
                None => (g.value, None),
                Some(reason) => {
                    self.parse_failure(id, ids::DAILY_ACTION, &reason);
                    let kept = previous
                        .as_ref()
                        .map_or_else(|| ACTIVITY_FALLBACK.to_string(), |p| p.text.clone());
                    self.note(
                        NoteKind::ActivityFallback,
                        Some(id),
                        Some(ids::DAILY_ACTION),
                        format!("activity kept as \"{kept}\""),
                    );
                    (kept, None)
                }
            }
        };
        let importance = match previous {
            Some(p) if p.text == text => p.importance,
            _ => {
                let memory = if text == SLEEPING {
                    format!("{} is sleeping", agent.name)
                } else {
                    format!("{} is {}", agent.name, text)
                };
                self.remember(agent, MemoryKind::DailyAction, &memory, fixed)?
            }
        };
        self.runtime(id).activity = Some(Activity {
            text: text.clone(),
            importance,
        });
        if text != SLEEPING {
            self.intentions
                .get_mut(id)
                .expect("intention per agent")
                .push(SourceTag::DailyExperience, format!("{} is {}", agent.name, text));
        }
        self.behavior(id, BehaviorKind::Daily, &text, None, importance, None);
        Ok(())
    }

    fn decision_context<'m>(&'m self, agent_id: &str, memories: &'m [MemoryRecord]) -> DecisionContext<'m> {
        let rt = &self.world.agents[agent_id];
        DecisionContext {
            tick: self.tick,
            now: self.now,
            intention: &self.intentions[agent_id],
            memories,
            last_post: rt.last_post.as_ref().map(|p| (p.content.as_str(), p.at)),
        }
    }

    /// Phase 3 for one agent. Returns the id of a published spark.
    fn post(&mut self, agent: &AgentProfile) -> Result<Option<String>, TickError> {
        let id = agent.agent_id.as_str();
        if self.asleep(id) {
            self.skip(id, None, ActionKind::Post, SkipReason::Asleep);
            return Ok(None);
        }
        let situation = self.intentions[id].situation_text();
        let memories = self.retrieve(agent, "post", &situation)?;
        let ctx = self.decision_context(id, &memories);
        let decision = self.cog.decide_post(agent, &ctx)?;
        if !decision.answer {
            let reasoning = decision.reasoning.clone();
            self.trace(&decision, None, Polarity::Declined, reasoning);
            return Ok(None);
        }
        let ActOutcome { content, .. } = self.cog.act_post(agent, &ctx, &decision)?;
        let Some(content) = content else {
            self.trace(&decision, None, Polarity::Declined, "post decision reversed: empty content".into());
            return Ok(None);
        };
        let reasoning = decision.reasoning.clone();
        let trace_id = self.trace(&decision, None, Polarity::Acted, reasoning);
        let (now, tick) = (self.now, self.tick);
        let spark = self.world.platform.publish_spark(id, true, &content, now, tick)?.clone();
        let spark_id = spark.spark_id.clone();
        self.out.push(LogRecord::Spark(spark));
        let importance = self.remember(
            agent,
            MemoryKind::OwnPost,
            &format!("{} posted on Sparkle: {content}", agent.name),
            None,
        )?;
        self.behavior(
            id,
            BehaviorKind::Post,
            &content,
            Some(spark_id.clone()),
            importance,
            Some(trace_id),
        );
        self.runtime(id).last_post = Some(LastPost { content, at: now });
        Ok(Some(spark_id))
    }

    /// Phase 4 for one spark.
    fn route(&mut self, agents: &[&AgentProfile], spark_id: &str) -> Result<Vec<Delivery>, TickError> {
        let config = self.config;
        let spark = self.world.platform.spark(spark_id).expect("published this tick").clone();
        let author_is_npc = config.npc(&spark.author).is_some();
        let author_name = config.display_name(&spark.author);
        let recipients: Vec<&str> = agents.iter().map(|a| a.agent_id.as_str()).collect();
        let mut failures = Vec::new();
        let cog = &self.cog;
        let tick = self.tick;
        let outcome = self.world.platform.route_spark(
            &spark,
            author_is_npc,
            &recipients,
            tick,
            config.simulation.recommendation_threshold,
            |recipient| -> Result<u8, TickError> {
                let profile = config.agent(recipient).expect("recipient is an agent");
                let g = cog.score_recommendation(profile, &spark, &author_name, tick)?;
                if let Some(reason) = g.failure {
                    failures.push((recipient.to_string(), reason));
                }
                Ok(g.value)
            },
        )?;
        for (recipient, reason) in failures {
            self.parse_failure(&recipient, ids::RECOMMEND, &reason);
        }
        self.world.platform.record_routing(&outcome);
        for d in &outcome.deliveries {
            self.out.push(LogRecord::Delivery(d.clone()));
        }
        for d in &outcome.deliveries {
            let profile = config.agent(&d.recipient).expect("recipient is an agent");
            self.remember(
                profile,
                MemoryKind::PerceptionSpark,
                &format!("{author_name} posted on Sparkle: {}", spark.content),
                None,
            )?;
        }
        Ok(outcome.deliveries)
    }

    /// Phase 5 for one delivered spark: like, then follow, then reply.
    fn engage(&mut self, agent: &AgentProfile, spark_id: &str) -> Result<(), TickError> {
        let id = agent.agent_id.as_str();
        if self.asleep(id) {
            for kind in ActionKind::ENGAGEMENTS {
                self.skip(id, Some(spark_id), kind, SkipReason::Asleep);
            }
            return Ok(());
        }
        let config = self.config;
        let spark: Spark = self.world.platform.spark(spark_id).expect("delivered spark exists").clone();
        let author_name = config.display_name(&spark.author);
        let situation = format!("{author_name} posted on Sparkle: {}", spark.content);
        let memories = self.retrieve(agent, spark_id, &situation)?;
        for kind in ActionKind::ENGAGEMENTS {
            let skip = match kind {
                ActionKind::Like if self.world.platform.has_liked(id, spark_id) => Some(SkipReason::AlreadyLiked),
                ActionKind::Follow if self.world.platform.follows(id, &spark.author) => {
                    Some(SkipReason::AlreadyFollowing)
                }
                _ => None,
            };
            if let Some(reason) = skip {
                self.skip(id, Some(spark_id), kind, reason);
                continue;
            }
            let ctx = self.decision_context(id, &memories);
            let decision = self
                .cog
                .decide_engagement(agent, &spark, &author_name, kind, &self.world.platform, &ctx)?;
            if !decision.answer {
                let reasoning = decision.reasoning.clone();
                self.trace(&decision, Some(spark_id), Polarity::Declined, reasoning);
                continue;
            }
            let reply = if kind == ActionKind::Reply {
                match self.cog.act_reply(agent, &spark, &author_name, &ctx, &decision)?.content {
                    Some(c) => Some(c),
                    None => {
                        self.trace(
                            &decision,
                            Some(spark_id),
                            Polarity::Declined,
                            "reply decision reversed: empty content".into(),
                        );
                        continue;
                    }
                }
            } else {
                None
            };
            let reasoning = decision.reasoning.clone();
            let trace_id = self.trace(&decision, Some(spark_id), Polarity::Acted, reasoning);
            let tick = self.tick;
            let (memory, target, detail) = match kind {
                ActionKind::Like => {
                    if self.world.platform.apply_like(id, spark_id, tick, &trace_id)? == Applied::Duplicate {
                        self.duplicate(id, kind, spark_id);
                        continue;
                    }
                    (
                        format!("{} liked {author_name}'s spark: {}", agent.name, spark.content),
                        spark_id.to_string(),
                        format!("liked {spark_id}"),
                    )
                }
                ActionKind::Follow => {
                    if self.world.platform.apply_follow(id, &spark.author, tick, &trace_id)? == Applied::Duplicate {
                        self.duplicate(id, kind, spark_id);
                        continue;
                    }
                    let edge = self.world.platform.edges.last().expect("edge just added").clone();
                    self.out.push(LogRecord::Edge(edge));
                    (
                        format!("{} followed {author_name} on Sparkle", agent.name),
                        spark.author.clone(),
                        format!("followed {}", spark.author),
                    )
                }
                ActionKind::Reply => {
                    let content = reply.expect("reply content checked above");
                    let now = self.now;
                    self.world.platform.apply_reply(id, spark_id, &content, now, &trace_id)?;
                    (
                        format!("{} replied to {author_name}'s spark: {content}", agent.name),
                        spark_id.to_string(),
                        content,
                    )
                }
                ActionKind::Post => unreachable!("post is not an engagement"),
            };
            let importance = self.remember(agent, MemoryKind::OwnEngagement, &memory, None)?;
            self.behavior(id, kind.into(), &detail, Some(target), importance, Some(trace_id));
        }
        Ok(())
    }

    fn duplicate(&mut self, agent: &str, kind: ActionKind, spark_id: &str) {
        self.note(
            NoteKind::DuplicateIgnored,
            Some(agent),
            None,
            format!("{} on {spark_id} already applied", kind.as_str()),
        );
    }
}

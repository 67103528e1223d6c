//! Deterministic stand-in backend. Responses are a pure function of the
//! request: rules match on (template, agent, tick, attempt, slots, text)
//! rather than the full prompt, so scripts survive cosmetic template edits.
//! An exact-hash table takes precedence for golden-log scripts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::embedding::hashed_embedding;
use super::{Backend, BackendError, CompletionRequest};
use crate::prompts::ids;

pub const DEFAULT_DIMENSION: usize = 64;

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_tick: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_tick: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    /// Every listed slot must equal the given value.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub slots: BTreeMap<String, String>,
    /// Substring that must occur in the rendered prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub response: String,
}

impl ScriptRule {
    pub fn new(template: &str, response: &str) -> Self {
        Self {
            template: Some(template.to_string()),
            response: response.to_string(),
            ..Self::default()
        }
    }

    pub fn agent(mut self, agent: &str) -> Self {
        self.agent = Some(agent.to_string());
        self
    }

    pub fn tick(mut self, tick: u64) -> Self {
        self.tick = Some(tick);
        self
    }

    pub fn contains(mut self, needle: &str) -> Self {
        self.contains = Some(needle.to_string());
        self
    }

    pub fn slot(mut self, name: &str, value: &str) -> Self {
        self.slots.insert(name.to_string(), value.to_string());
        self
    }

    fn matches(&self, req: &CompletionRequest, text: &str) -> bool {
        if let Some(t) = &self.template {
            if *t != req.template_id {
                return false;
            }
        }
        if let Some(a) = &self.agent {
            if req.agent.as_deref() != Some(a.as_str()) {
                return false;
            }
        }
        if let Some(t) = self.tick {
            if req.tick != Some(t) {
                return false;
            }
        }
        if let Some(lo) = self.from_tick {
            if req.tick.is_none_or(|t| t < lo) {
                return false;
            }
        }
        if let Some(hi) = self.to_tick {
            if req.tick.is_none_or(|t| t > hi) {
                return false;
            }
        }
        if let Some(a) = self.attempt {
            if req.attempt != a {
                return false;
            }
        }
        if !self
            .slots
            .iter()
            .all(|(k, v)| req.slots.get(k).is_some_and(|x| x == v))
        {
            return false;
        }
        if let Some(needle) = &self.contains {
            if !text.contains(needle.as_str()) {
                return false;
            }
        }
        true
    }
}

/// A provider script document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default = "default_dimension")]
    pub embedding_dimension: usize,
    /// Fallback response per template id.
    #[serde(default)]
    pub defaults: BTreeMap<String, String>,
    /// Evaluated in order; the first match wins.
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    /// Request hash to response.
    #[serde(default)]
    pub exact: BTreeMap<String, String>,
    /// Exact text to embedding; other texts use feature hashing.
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

impl Script {
    pub fn new() -> Self {
        Self {
            embedding_dimension: DEFAULT_DIMENSION,
            ..Self::default()
        }
    }

    pub fn from_json(doc: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(doc)
    }

    pub fn rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn default_for(mut self, template: &str, response: &str) -> Self {
        self.defaults
            .insert(template.to_string(), response.to_string());
        self
    }
}

fn builtin_default(template: &str) -> Option<&'static str> {
    Some(match template {
        ids::RECOMMEND => "5",
        ids::IMPORTANCE => "3",
        ids::WAKE_HOUR => "7",
        ids::DAILY_PLAN => {
            "07:00 - wake up and get ready for the day\n\
             08:00 - work on the day's main tasks\n\
             12:00 - have lunch\n\
             13:00 - continue with the day's tasks\n\
             18:00 - have dinner\n\
             19:00 - relax at home\n\
             22:00 - go to bed"
        }
        ids::DAILY_ACTION => r#"{"Activity":"{Current Plan Activity}"}"#,
        ids::DECIDE_POST => {
            r#"{"Reasoning":"{Agent} has nothing in particular to share right now.","Answer":"No"}"#
        }
        ids::ACT_POST => r#"{"Content":"Enjoying a quiet moment today."}"#,
        ids::DECIDE_LIKE => {
            r#"{"Reasoning":"The spark does not connect with {Agent}'s interests.","Answer":"No"}"#
        }
        ids::DECIDE_FOLLOW => {
            r#"{"Reasoning":"{Agent} sees no reason to follow {Agent2}.","Answer":"No"}"#
        }
        ids::DECIDE_REPLY => {
            r#"{"Reasoning":"{Agent} has nothing to add to this spark.","Answer":"No"}"#
        }
        ids::ACT_REPLY => r#"{"Content":"Thanks for sharing!"}"#,
        _ => return None,
    })
}

/// Replaces `{Slot}` occurrences whose name is a slot of the request.
fn substitute(template: &str, req: &CompletionRequest) -> String {
    let mut out = template.to_string();
    for (k, v) in &req.slots {
        let key = format!("{{{k}}}");
        if out.contains(&key) {
            out = out.replace(&key, v);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Script,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self { script }
    }

    pub fn respond(&self, req: &CompletionRequest) -> Option<String> {
        let text = req.text();
        if let Some(r) = self.script.exact.get(&req.hash()) {
            return Some(r.clone());
        }
        if let Some(rule) = self.script.rules.iter().find(|r| r.matches(req, &text)) {
            return Some(substitute(&rule.response, req));
        }
        self.script
            .defaults
            .get(&req.template_id)
            .map(String::as_str)
            .or_else(|| builtin_default(&req.template_id))
            .map(|r| substitute(r, req))
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.respond(request).ok_or_else(|| {
            BackendError::Fatal(format!(
                "no scripted response for template {}",
                request.template_id
            ))
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        Ok(match self.script.embeddings.get(text) {
            Some(v) => v.clone(),
            None => hashed_embedding(text, self.script.embedding_dimension),
        })
    }
}

//! Prompt template catalogue and deterministic slot rendering.
//!
//! Templates are plain-text files under `templates/`, one per template id,
//! with `[core]`, `[instructions]` and optional `[example]` sections and
//! brace-delimited slots such as `{Agent}` or `{Post Frequency}`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::{Captures, Regex};
use thiserror::Error;

use crate::llm::PromptParts;

pub mod ids {
    pub const RECOMMEND: &str = "recommend";
    pub const IMPORTANCE: &str = "importance";
    pub const WAKE_HOUR: &str = "wake_hour";
    pub const DAILY_PLAN: &str = "daily_plan";
    pub const DAILY_ACTION: &str = "daily_action";
    pub const DECIDE_POST: &str = "decide_post";
    pub const ACT_POST: &str = "act_post";
    pub const DECIDE_LIKE: &str = "decide_like";
    pub const DECIDE_FOLLOW: &str = "decide_follow";
    pub const DECIDE_REPLY: &str = "decide_reply";
    pub const ACT_REPLY: &str = "act_reply";
}

/// Slots that carry an agent's configured social habits. The
/// social-habits ablation drops every template line that uses one.
pub const HABIT_SLOTS: [&str; 4] = ["Post Frequency", "Post Content", "Followers", "Engagement"];

const SOURCES: [(&str, &str); 11] = [
    (ids::RECOMMEND, include_str!("../../templates/recommend.txt")),
    (ids::IMPORTANCE, include_str!("../../templates/importance.txt")),
    (ids::WAKE_HOUR, include_str!("../../templates/wake_hour.txt")),
    (ids::DAILY_PLAN, include_str!("../../templates/daily_plan.txt")),
    (ids::DAILY_ACTION, include_str!("../../templates/daily_action.txt")),
    (ids::DECIDE_POST, include_str!("../../templates/decide_post.txt")),
    (ids::ACT_POST, include_str!("../../templates/act_post.txt")),
    (ids::DECIDE_LIKE, include_str!("../../templates/decide_like.txt")),
    (ids::DECIDE_FOLLOW, include_str!("../../templates/decide_follow.txt")),
    (ids::DECIDE_REPLY, include_str!("../../templates/decide_reply.txt")),
    (ids::ACT_REPLY, include_str!("../../templates/act_reply.txt")),
];

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("template {template} is missing slot {{{slot}}}")]
    MissingSlot { template: String, slot: String },
}

impl TemplateError {
    pub fn code(&self) -> &'static str {
        "TEMPLATE_ERROR"
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: &'static str,
    pub version: u32,
    pub core: String,
    pub instructions: String,
    pub example: String,
}

fn slot_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z0-9' ]+)\}").expect("valid regex"))
}

impl Template {
    fn parse(id: &'static str, source: &str) -> Template {
        let mut version = 1;
        let mut sections: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut current: Option<&str> = None;
        for line in source.lines() {
            let trimmed = line.trim();
            if let Some(v) = trimmed.strip_prefix("# version:") {
                version = v.trim().parse().unwrap_or(1);
                continue;
            }
            match trimmed {
                "[core]" => current = Some("core"),
                "[instructions]" => current = Some("instructions"),
                "[example]" => current = Some("example"),
                _ => {
                    if let Some(sec) = current {
                        sections.entry(sec).or_default().push(line);
                    }
                }
            }
        }
        let take = |k: &str| {
            sections
                .get(k)
                .map(|lines| lines.join("\n").trim_end().to_string())
                .unwrap_or_default()
        };
        Template {
            id,
            version,
            core: take("core"),
            instructions: take("instructions"),
            example: take("example"),
        }
    }

    /// Slot names used by the core and instruction sections.
    pub fn slots(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for text in [&self.core, &self.instructions] {
            for c in slot_pattern().captures_iter(text) {
                let name = c[1].to_string();
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }

    fn fill(&self, text: &str, slots: &BTreeMap<String, String>, omit: &[&str]) -> Result<String, TemplateError> {
        let mut lines = Vec::new();
        for line in text.lines() {
            let used: Vec<String> = slot_pattern()
                .captures_iter(line)
                .map(|c| c[1].to_string())
                .collect();
            if used.iter().any(|s| omit.contains(&s.as_str())) {
                continue;
            }
            if let Some(missing) = used.iter().find(|s| !slots.contains_key(s.as_str())) {
                return Err(TemplateError::MissingSlot {
                    template: self.id.to_string(),
                    slot: missing.clone(),
                });
            }
            let filled = slot_pattern().replace_all(line, |c: &Captures| slots[&c[1]].clone());
            lines.push(filled.into_owned());
        }
        Ok(lines.join("\n"))
    }

    pub fn render(&self, slots: &BTreeMap<String, String>, omit: &[&str]) -> Result<PromptParts, TemplateError> {
        Ok(PromptParts::new(
            self.fill(&self.core, slots, omit)?,
            self.fill(&self.instructions, slots, omit)?,
            self.example.clone(),
        ))
    }
}

pub fn catalogue() -> &'static [Template] {
    static CATALOGUE: OnceLock<Vec<Template>> = OnceLock::new();
    CATALOGUE.get_or_init(|| SOURCES.iter().map(|(id, src)| Template::parse(id, src)).collect())
}

pub fn template(id: &str) -> Result<&'static Template, TemplateError> {
    catalogue()
        .iter()
        .find(|t| t.id == id)
        .ok_or_else(|| TemplateError::UnknownTemplate(id.to_string()))
}

/// Renders `template_id` with every slot supplied.
pub fn build_prompt(template_id: &str, slot_values: &BTreeMap<String, String>) -> Result<PromptParts, TemplateError> {
    template(template_id)?.render(slot_values, &[])
}

/// Renders `template_id`, dropping every line that uses one of `omit`.
pub fn build_prompt_omitting(
    template_id: &str,
    slot_values: &BTreeMap<String, String>,
    omit: &[&str],
) -> Result<PromptParts, TemplateError> {
    template(template_id)?.render(slot_values, omit)
}

/// Convenience for building slot maps in tests and call sites.
pub fn slots<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

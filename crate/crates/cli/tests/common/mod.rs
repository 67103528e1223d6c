//! Shared fixtures: randomized configurations and a seeded stand-in for a
//! real model whose answers vary per request.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sparkle_core::config::load_config;
use sparkle_core::llm::{hashed_embedding, Backend, BackendError, CompletionRequest};
use sparkle_core::{ConfigBundle, LogEntry, Provider, RunOptions, Script, Simulation};

pub const BIN: &str = env!("CARGO_BIN_EXE_sparkle");

pub fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

pub fn sparkle(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("run sparkle binary")
}

pub fn scripted(name: &str) -> Arc<Provider> {
    let text = std::fs::read_to_string(example(name)).unwrap();
    Arc::new(Provider::scripted(Script::from_json(&text).unwrap()))
}

pub fn football() -> ConfigBundle {
    ConfigBundle::load_valid(&std::fs::read_to_string(example("football.json")).unwrap()).unwrap()
}

pub fn promotion() -> ConfigBundle {
    ConfigBundle::load_valid(&std::fs::read_to_string(example("promotion.json")).unwrap()).unwrap()
}

fn fnv(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

const ACTIVITIES: [&str; 8] = [
    "reading the news",
    "cooking lunch",
    "walking the dog",
    "working at the desk",
    "chatting with a neighbour",
    "watching football highlights",
    "doing laundry",
    "taking a nap",
];

const POSTS: [&str; 6] = [
    "What a day it has been!",
    "Anyone else watching the match tonight?",
    "Trying a new recipe, wish me luck.",
    "The weather is perfect for a walk.",
    "Big news in town today.",
    "Coffee first, everything else later.",
];

/// Answers each request from a generator seeded by the request itself, so
/// a run is reproducible for a fixed `seed` but looks arbitrary. About one
/// answer in `1/noise` is malformed.
pub struct RandomBackend {
    pub seed: u64,
    pub noise: f64,
    pub post_rate: f64,
    pub engage_rate: f64,
}

impl RandomBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            noise: 0.05,
            post_rate: 0.35,
            engage_rate: 0.4,
        }
    }

    fn yes_no(&self, rng: &mut ChaCha8Rng, p: f64) -> String {
        let yes = rng.random_bool(p);
        json!({
            "Reasoning": if yes { "It fits what they care about." } else { "It is not for them right now." },
            "Answer": if yes { "Yes" } else { "No" },
        })
        .to_string()
    }
}

impl Backend for RandomBackend {
    fn name(&self) -> &str {
        "random"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv(&req.hash()));
        if rng.random_bool(self.noise) {
            let junk = ["I would rather not say.", "{\"Reasoning\": \"cut off", "```\nmaybe\n```", ""];
            return Ok(junk[rng.random_range(0..junk.len())].to_string());
        }
        let out = match req.template_id.as_str() {
            "wake_hour" => rng.random_range(5..=9).to_string(),
            "importance" | "recommend" => {
                let n = rng.random_range(1..=10);
                if rng.random_bool(0.2) {
                    format!("I would rate it {n}.")
                } else {
                    n.to_string()
                }
            }
            "daily_plan" => {
                let wake: u32 = req
                    .slots
                    .get("Wake Hour")
                    .and_then(|w| w.get(..2))
                    .and_then(|h| h.parse().ok())
                    .unwrap_or(7);
                let mut lines = vec![format!("{wake:02}:00 - wake up")];
                let mut h = wake + 1;
                while h < 22 {
                    lines.push(format!("{h:02}:00 - {}", ACTIVITIES[rng.random_range(0..ACTIVITIES.len())]));
                    h += rng.random_range(1..=4);
                }
                lines.push("22:00 - go to bed".into());
                lines.join("\n")
            }
            "daily_action" => json!({"Activity": ACTIVITIES[rng.random_range(0..ACTIVITIES.len())]}).to_string(),
            "decide_post" => self.yes_no(&mut rng, self.post_rate),
            "decide_like" | "decide_follow" | "decide_reply" => self.yes_no(&mut rng, self.engage_rate),
            "act_post" | "act_reply" => {
                let content = if rng.random_bool(0.05) { "" } else { POSTS[rng.random_range(0..POSTS.len())] };
                json!({"Content": content}).to_string()
            }
            other => return Err(BackendError::Fatal(format!("unknown template {other}"))),
        };
        Ok(out)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        Ok(hashed_embedding(text, 32))
    }
}

pub fn random_provider(seed: u64) -> Arc<Provider> {
    Arc::new(Provider::new(Box::new(RandomBackend::new(seed))))
}

/// A configuration with `agents` regular agents, one NPC with a few
/// scheduled posts, and some public and private events over `ticks` hours.
pub fn random_config(rng: &mut ChaCha8Rng, agents: usize, ticks: u64) -> ConfigBundle {
    let start = chrono::DateTime::parse_from_rfc3339("2026-07-14T06:00:00-12:00").unwrap();
    let at = |minutes: i64| (start + chrono::Duration::minutes(minutes)).to_rfc3339();
    let ids: Vec<String> = (0..agents).map(|i| format!("a{i:02}")).collect();
    let agent_docs: Vec<Value> = ids
        .iter()
        .map(|id| {
            json!({
                "agent_id": id,
                "name": format!("Agent {id}"),
                "age": rng.random_range(18..80).to_string(),
                "innate": (["cheerful", "quiet", "curious", "grumpy"][rng.random_range(0..4)]),
                "job": (["teacher", "nurse", "driver", "student"][rng.random_range(0..4)]),
                "habits": {
                    "followers": format!("about {}", rng.random_range(0..500)),
                    "post_frequency": "a few times a day",
                    "post_content": "daily life",
                    "engagement": "likes what friends post"
                }
            })
        })
        .collect();
    let mut post_minutes: Vec<i64> = (0..rng.random_range(1..=4))
        .map(|_| rng.random_range(0..ticks as i64 * 60))
        .collect();
    post_minutes.sort_unstable();
    let posts: Vec<Value> = post_minutes
        .iter()
        .enumerate()
        .map(|(i, &m)| json!({"post_time": at(m), "content": format!("Special offer number {i}, only today!")}))
        .collect();
    let events: Vec<Value> = (0..rng.random_range(0..=4))
        .map(|i| {
            let audience = if rng.random_bool(0.5) {
                json!("all")
            } else {
                json!({"agent": ids[rng.random_range(0..ids.len())]})
            };
            json!({
                "event_id": format!("e{i}"),
                "event_time": at(rng.random_range(0..ticks as i64 * 60)),
                "description": format!("Something notable happens, number {i}."),
                "audience": audience,
            })
        })
        .collect();
    let doc = json!({
        "simulation": {
            "start_time": at(0),
            "end_time": at(ticks as i64 * 60),
            "tick_interval": 60,
            "recommendation_threshold": rng.random_range(1..=10),
            "random_seed": rng.random::<u32>(),
        },
        "agents": agent_docs,
        "npcs": [{"npc_id": "shop", "identity": "Corner Shop", "scheduled_posts": posts}],
        "events": events,
    });
    load_config(&doc.to_string()).unwrap()
}

/// Runs `config` to completion in memory.
pub fn run_to_end(config: ConfigBundle, options: RunOptions, provider: Arc<Provider>) -> Simulation {
    let mut sim = Simulation::new(config, options, provider).unwrap();
    sim.run_to_end().unwrap();
    sim
}

pub fn lines(log: &[LogEntry]) -> Vec<String> {
    log.iter().map(LogEntry::to_line).collect()
}

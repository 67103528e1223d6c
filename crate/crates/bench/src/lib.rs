//! Shared fixtures for benchmarks.

use sparkle_core::llm::{hashed_embedding, EmbeddingVector};
use sparkle_core::{ConfigBundle, MemoryKind, MemoryStore, Provider, Script, Timestamp};

pub const FOOTBALL: &str = include_str!("../../cli/examples/football.json");
pub const FOOTBALL_SCRIPT: &str = include_str!("../../cli/examples/football.script.json");

pub fn t0() -> Timestamp {
    chrono::DateTime::parse_from_rfc3339("2026-07-14T06:00:00-12:00").unwrap()
}

/// A store of `n` memories spread one minute apart.
pub fn store(n: usize) -> MemoryStore {
    let mut s = MemoryStore::new("bench");
    for i in 0..n {
        let text = format!("memory number {i} about topic {}", i % 17);
        let at = t0() + chrono::Duration::minutes(i as i64);
        s.append(MemoryKind::PerceptionEvent, &text, at, (i % 10) as u8 + 1, EmbeddingVector::new(hashed_embedding(&text, 64)))
            .unwrap();
    }
    s
}

pub fn football() -> ConfigBundle {
    ConfigBundle::load_valid(FOOTBALL).unwrap()
}

pub fn football_provider() -> Provider {
    Provider::scripted(Script::from_json(FOOTBALL_SCRIPT).unwrap())
}

use std::sync::Arc;

use sparkle_core::config::{load_config, Audience};
use sparkle_core::memory::MemoryKind;
use sparkle_core::persistence::{read_log_lines, RunDir};
use sparkle_core::replay::replay_log;
use sparkle_core::views::{self, CalendarQuery, ExportKind};
use sparkle_core::{
    BehaviorKind, ConfigBundle, EventSpec, LogEntry, LogRecord, Provider, RunOptions, RunStatus, Script, Simulation,
};

const FOOTBALL: &str = include_str!("../../cli/examples/football.json");
const FOOTBALL_SCRIPT: &str = include_str!("../../cli/examples/football.script.json");
const PROMOTION: &str = include_str!("../../cli/examples/promotion.json");
const PROMOTION_SCRIPT: &str = include_str!("../../cli/examples/promotion.script.json");

fn provider(script: &str) -> Arc<Provider> {
    Arc::new(Provider::scripted(Script::from_json(script).unwrap()))
}

fn football() -> Simulation {
    Simulation::new(load_config(FOOTBALL).unwrap(), RunOptions::default(), provider(FOOTBALL_SCRIPT)).unwrap()
}

fn lines(log: &[LogEntry]) -> Vec<String> {
    log.iter().map(LogEntry::to_line).collect()
}

fn finished_football() -> Simulation {
    let mut sim = football();
    sim.run_to_end().unwrap();
    sim
}

#[test]
fn snapshot_restore_reproduces_the_suffix() {
    let full = finished_football();
    let mut sim = football();
    sim.start().unwrap();
    for _ in 0..5 {
        sim.step().unwrap();
    }
    let snap = sim.snapshot().unwrap();
    assert_eq!(snap.run.current_tick, 5);
    let json = serde_json::to_string(&snap).unwrap();
    let snap = serde_json::from_str(&json).unwrap();
    let mut restored = Simulation::restore(snap, sim.log(), provider(FOOTBALL_SCRIPT)).unwrap();
    assert_eq!(restored.state().status, RunStatus::Paused);
    assert_eq!(restored.world(), sim.world());
    restored.run_to_end().unwrap();
    assert_eq!(lines(restored.log()), lines(full.log()));

    let archive = restored.reset().unwrap();
    assert_eq!(lines(&archive.log), lines(full.log()));
    assert!(archive.log.iter().enumerate().all(|(i, e)| e.seq == i as u64));
}

#[test]
fn snapshot_guards() {
    let sim = football();
    assert_eq!(sim.snapshot().unwrap_err().code(), "STATE_ERROR");
    let mut sim = football();
    sim.start().unwrap();
    sim.step().unwrap();
    assert_eq!(sim.snapshot_at(2).unwrap_err().code(), "STATE_ERROR");
    assert!(sim.snapshot_at(1).is_ok());
}

#[test]
fn snapshots_are_written_to_the_run_dir() {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = football();
    sim.attach_store(dir.path()).unwrap();
    sim.start().unwrap();
    sim.step().unwrap();
    sim.step().unwrap();
    sim.snapshot().unwrap();
    let run = sim.run_dir().unwrap().clone();
    assert_eq!(run.snapshots().unwrap(), vec![2]);
    let meta = run.read_meta().unwrap();
    assert_eq!(meta.run_id, sim.state().run_id);
    assert!(run.root().ends_with(&sim.state().run_id));
    let missing = run.read_snapshot::<sparkle_core::Snapshot>(9).unwrap_err();
    assert_eq!(missing.code(), "NOT_FOUND");
}

#[test]
fn exports_are_deterministic_and_complete() {
    let sim = finished_football();
    let log = sim.log();
    for kind in ["behaviors", "sparks", "network", "memories", "traces"] {
        let k: ExportKind = kind.parse().unwrap();
        assert_eq!(views::export(log, k), views::export(log, k));
    }
    let behaviors = views::export(log, ExportKind::Behaviors);
    let count = log.iter().filter(|e| matches!(e.record, LogRecord::Behavior(_))).count();
    assert_eq!(behaviors.lines().count(), count);
    let traces = views::export(log, ExportKind::Traces);
    assert!(traces.contains("\"polarity\":\"declined\""));
    assert!("everything".parse::<ExportKind>().is_err());
}

#[test]
fn sparks_are_reconstructed_from_the_log() {
    for (cfg, script) in [(FOOTBALL, FOOTBALL_SCRIPT), (PROMOTION, PROMOTION_SCRIPT)] {
        let mut sim = Simulation::new(load_config(cfg).unwrap(), RunOptions::default(), provider(script)).unwrap();
        sim.run_to_end().unwrap();
        let rebuilt: Vec<_> = views::sparks(sim.log()).into_iter().map(|(_, s)| s).collect();
        assert_eq!(rebuilt, sim.world().platform.sparks);
        let edges: Vec<_> = views::edges(sim.log()).into_iter().map(|(_, e)| e).collect();
        assert_eq!(edges, sim.world().platform.edges);
    }
}

#[test]
fn conservation_of_posts() {
    let sim = finished_football();
    let log = sim.log();
    let posts = views::behaviors(log).iter().filter(|(_, b)| b.kind == BehaviorKind::Post).count();
    let agent_sparks = views::sparks(log)
        .iter()
        .filter(|(_, s)| sim.config().agent(&s.author).is_some())
        .count();
    assert_eq!(posts, agent_sparks);
    assert!(posts > 0);
}

#[test]
fn football_scenario() {
    let sim = finished_football();
    let log = sim.log();
    // The final is perceived by every agent at tick 4.
    let perceived: Vec<_> = views::memories(log)
        .into_iter()
        .filter(|(_, m)| m.kind == MemoryKind::PerceptionEvent && m.text.contains("Team A emerged victorious"))
        .map(|(_, m)| m.owner)
        .collect();
    assert_eq!(perceived.len(), 3);
    let at_tick: Vec<u64> = log
        .iter()
        .filter(|e| matches!(&e.record, LogRecord::Memory(m) if m.text.contains("Team A emerged victorious")))
        .map(|e| e.tick)
        .collect();
    assert!(at_tick.iter().all(|&t| t == 4));
    // Leonardo and Elena end up following each other.
    let net = views::network(log, views::committed_ticks(log)).unwrap();
    assert!(net.iter().any(|e| e.follower == "elena" && e.followee == "leonardo"));
    assert!(net.iter().any(|e| e.follower == "leonardo" && e.followee == "elena"));
    assert!(views::network(log, 0).unwrap().is_empty());
    // A post made in phase 3 is routed in phase 4 of the same tick.
    for (_, s) in views::sparks(log) {
        let first = views::deliveries(log).into_iter().find(|(_, d)| d.spark_id == s.spark_id);
        if let Some((_, d)) = first {
            assert_eq!(d.tick, s.tick);
        }
    }
}

#[test]
fn promotion_scenario() {
    let mut sim =
        Simulation::new(load_config(PROMOTION).unwrap(), RunOptions::default(), provider(PROMOTION_SCRIPT)).unwrap();
    sim.run_to_end().unwrap();
    let log = sim.log();
    let ads: Vec<_> = views::sparks(log).into_iter().filter(|(_, s)| s.author == "xxx_app").collect();
    assert_eq!(ads.len(), 2);
    assert_eq!(ads[0].1.tick, 3);
    for (_, ad) in &ads {
        let reached = views::deliveries(log).iter().filter(|(_, d)| d.spark_id == ad.spark_id).count();
        assert_eq!(reached, sim.config().agents.len());
        let likers: Vec<&str> = ad.likes.iter().map(|l| l.agent.as_str()).collect();
        assert_eq!(likers, ["urban_young_female", "urban_young_male"]);
    }
    let hidden = views::hidden(log, &ads[0].1.spark_id).unwrap();
    assert!(hidden.declined.iter().any(|t| t.reasoning.contains("fashion trends")));
    assert!(hidden.declined.iter().any(|t| t.reasoning.contains("spending capacity")));
    assert!(hidden.declined.iter().any(|t| t.reasoning.contains("difficulties in operation")));
}

#[test]
fn calendar_counts_match_filters() {
    let sim = finished_football();
    let log = sim.log();
    let all = views::behaviors(log);
    for min in [1u8, 5, 8, 10] {
        for agent in [None, Some("elena")] {
            let q = CalendarQuery {
                agent: agent.map(str::to_string),
                min_importance: Some(min),
                kinds: vec![],
            };
            let cal = views::calendar(log, &q).unwrap();
            let counted: usize = cal.buckets.iter().map(|b| b.count).sum();
            let expected = all
                .iter()
                .filter(|(_, b)| b.importance >= min && agent.is_none_or(|a| b.agent == a))
                .count();
            assert_eq!(counted, expected);
        }
    }
    // A continuous activity is shown once, at its start.
    let cal = views::calendar(log, &CalendarQuery::default()).unwrap();
    let shown: usize = cal.buckets.iter().map(|b| b.entries.len()).sum();
    let continued: u64 = cal.buckets.iter().flat_map(|b| &b.entries).map(|e| e.continued_ticks).sum();
    assert_eq!(shown as u64 + continued, all.len() as u64);
    assert!(continued > 0);
    let bad = CalendarQuery {
        min_importance: Some(0),
        ..CalendarQuery::default()
    };
    assert_eq!(views::calendar(log, &bad).unwrap_err().code(), "BAD_REQUEST");
}

#[test]
fn private_events_stay_private() {
    let mut config: ConfigBundle = load_config(FOOTBALL).unwrap();
    config.events.push(EventSpec {
        event_id: "secret".into(),
        event_time: config.simulation.tick_time(2),
        description: "Isabella receives a letter from an old friend.".into(),
        audience: Audience::Agent("isabella".into()),
    });
    let mut sim = Simulation::new(config, RunOptions::default(), provider(FOOTBALL_SCRIPT)).unwrap();
    sim.run_to_end().unwrap();
    let owners: Vec<String> = views::memories(sim.log())
        .into_iter()
        .filter(|(_, m)| m.text.contains("letter from an old friend"))
        .map(|(_, m)| m.owner)
        .collect();
    assert!(!owners.is_empty());
    assert!(owners.iter().all(|o| o == "isabella"));
}

#[test]
fn injected_event_appears_at_its_tick_and_replays() {
    let mut sim = football();
    sim.start().unwrap();
    for _ in 0..3 {
        sim.step().unwrap();
    }
    sim.pause().unwrap();
    let at = sim.config().simulation.tick_time(7) + chrono::Duration::minutes(15);
    sim.inject_event(EventSpec {
        event_id: "parade".into(),
        event_time: at,
        description: "A victory parade fills the streets.".into(),
        audience: Audience::All,
    })
    .unwrap();
    sim.resume().unwrap();
    sim.run_to_end().unwrap();
    let ticks: Vec<u64> = sim
        .log()
        .iter()
        .filter(|e| matches!(&e.record, LogRecord::Memory(m) if m.text.contains("victory parade")))
        .map(|e| e.tick)
        .collect();
    assert_eq!(ticks.len(), 3);
    assert!(ticks.iter().all(|&t| t == 7));

    let report = replay_log(sim.log(), provider(FOOTBALL_SCRIPT)).unwrap();
    assert!(report.matches(), "{:?}", report.divergence);
}

#[test]
fn persisted_log_matches_memory_and_rejects_appends_after_finish() {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = football();
    sim.attach_dir(dir.path()).unwrap();
    sim.run_to_end().unwrap();
    assert_eq!(read_log_lines(&dir.path().join("log.jsonl")).unwrap(), lines(sim.log()));
    let run = RunDir::open(dir.path()).unwrap();
    assert!(run.read_meta().unwrap().finished_at.is_some());
    let stored: ConfigBundle = load_config(&std::fs::read_to_string(run.config_path()).unwrap()).unwrap();
    assert_eq!(&stored, sim.config());
    assert_eq!(sim.step().unwrap_err().code(), "STATE_ERROR");
    let report = sparkle_core::replay::verify_run_dir(dir.path()).unwrap();
    assert!(report.matches());
}

#[test]
fn storage_failure_pauses_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    let mut sim = football();
    sim.attach_dir(&root).unwrap();
    sim.start().unwrap();
    sim.step().unwrap();
    // Replace the log file with a directory so the next append fails.
    std::fs::remove_file(root.join("log.jsonl")).unwrap();
    std::fs::create_dir(root.join("log.jsonl")).unwrap();
    let before = sim.log().len();
    let err = sim.step().unwrap_err();
    assert_eq!(err.code(), "STORAGE_ERROR");
    assert_eq!(sim.state().status, RunStatus::Paused);
    assert_eq!(sim.log().len(), before);
    assert_eq!(sim.state().current_tick, 1);
}

#[test]
fn config_changes_are_locked_while_running() {
    let mut sim = football();
    sim.start().unwrap();
    let agent = sim.config().agents[0].clone();
    assert_eq!(sim.upsert_agent(agent.clone()).unwrap_err().code(), "STATE_LOCKED");
    assert_eq!(sim.remove_entity("elena").unwrap_err().code(), "STATE_LOCKED");
    sim.pause().unwrap();
    let mut changed = agent;
    changed.lifestyle = "has started learning the guitar".into();
    sim.upsert_agent(changed).unwrap();
    let mut moved = sim.config().simulation.clone();
    moved.start_time += chrono::Duration::hours(1);
    let err = sim.replace_simulation(moved).unwrap_err();
    assert_eq!(err.code(), "VALIDATION_FAILED");
}

//! Self-verification: re-execute a run's log against its recorded
//! transcript and compare line by line.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineError, RunStatus, Simulation};
use crate::llm::{read_transcript, Provider, ReplayBackend};
use crate::persistence::{PersistError, RunDir};
use crate::runlog::{ConfigChange, LogEntry, LogRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub records: u64,
    pub ticks: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.divergence.is_none()
    }
}

fn first_difference(expected: &[LogEntry], actual: &[LogEntry]) -> Option<Divergence> {
    let n = expected.len().max(actual.len());
    (0..n).find_map(|i| {
        let e = expected.get(i).map(LogEntry::to_line);
        let a = actual.get(i).map(LogEntry::to_line);
        (e != a).then_some(Divergence {
            seq: i as u64,
            expected: e,
            actual: a,
            error: None,
        })
    })
}

/// Re-executes `log` with `provider`, applying logged configuration changes
/// at the positions they were recorded.
pub fn replay_log(log: &[LogEntry], provider: Arc<Provider>) -> Result<ReplayReport, EngineError> {
    let Some(LogEntry {
        record: LogRecord::ConfigChange(ConfigChange::Initial { config, options }),
        ..
    }) = log.first()
    else {
        return Err(PersistError::Corrupt {
            what: "log".into(),
            message: "first record is not the initial configuration".into(),
        }
        .into());
    };
    let mut sim = Simulation::new(config.clone(), *options, provider)?;
    sim.start()?;
    let mut ticks = 0;
    let mut failure = None;
    for entry in &log[1..] {
        let outcome = match &entry.record {
            LogRecord::ConfigChange(change) => {
                if sim.state().status == RunStatus::Running {
                    sim.pause()?;
                }
                sim.apply_change(change.clone()).map(|_| ())
            }
            LogRecord::TickBegin { .. } => {
                if sim.state().status == RunStatus::Paused {
                    sim.resume()?;
                }
                ticks += 1;
                sim.step().map(|_| ())
            }
            _ => Ok(()),
        };
        if let Err(e) = outcome {
            failure = Some((entry.seq, e));
            break;
        }
    }
    let divergence = match failure {
        Some((seq, err)) => {
            let at = first_difference(&log[..seq as usize], sim.log()).unwrap_or(Divergence {
                seq,
                expected: Some(log[seq as usize].to_line()),
                actual: None,
                error: None,
            });
            Some(Divergence {
                error: Some(format!("{}: {err}", err.code())),
                ..at
            })
        }
        None => first_difference(log, sim.log()),
    };
    Ok(ReplayReport {
        records: log.len() as u64,
        ticks,
        divergence,
    })
}

/// Verifies a run directory against its own transcript.
pub fn verify_run_dir(root: &Path) -> Result<ReplayReport, EngineError> {
    let dir = RunDir::open(root)?;
    let log = dir.read_log()?;
    let transcript = read_transcript(&dir.transcript_path()).map_err(PersistError::from)?;
    let provider = Arc::new(Provider::new(Box::new(ReplayBackend::new(&transcript))));
    replay_log(&log, provider)
}

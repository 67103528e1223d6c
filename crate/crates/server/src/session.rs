//! One simulation behind a lock, advanced by a single driver thread.
//!
//! The driver computes each tick outside the lock and commits it under the
//! lock, so readers only ever see whole ticks. Control commands wait for
//! an in-flight tick before they touch the run.

use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;

use sparkle_core::engine::EngineError;
use sparkle_core::{LogEntry, RunState, RunStatus, Simulation};
use tokio::sync::watch;

/// What stream subscribers wait on.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub generation: u64,
    pub log_len: u64,
    pub state: RunState,
}

pub(crate) struct Inner {
    pub sim: Simulation,
    inflight: bool,
    hold: u32,
    shutdown: bool,
    pub last_error: Option<(String, String)>,
}

pub struct Session {
    inner: Mutex<Inner>,
    cond: Condvar,
    progress: watch::Sender<Progress>,
    driver: Mutex<Option<JoinHandle<()>>>,
}

fn progress_of(sim: &Simulation) -> Progress {
    Progress {
        generation: sim.generation(),
        log_len: sim.log().len() as u64,
        state: sim.state().clone(),
    }
}

impl Session {
    /// Wraps `sim` and starts its driver thread.
    pub fn new(sim: Simulation) -> Arc<Self> {
        let (progress, _) = watch::channel(progress_of(&sim));
        let session = Arc::new(Self {
            inner: Mutex::new(Inner {
                sim,
                inflight: false,
                hold: 0,
                shutdown: false,
                last_error: None,
            }),
            cond: Condvar::new(),
            progress,
            driver: Mutex::new(None),
        });
        let driver = {
            let s = Arc::clone(&session);
            std::thread::Builder::new()
                .name("sparkle-driver".into())
                .spawn(move || s.drive())
                .expect("spawn driver")
        };
        *session.driver.lock().expect("driver lock") = Some(driver);
        session
    }

    pub fn subscribe(&self) -> watch::Receiver<Progress> {
        self.progress.subscribe()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn publish(&self, inner: &Inner) {
        let next = progress_of(&inner.sim);
        self.progress.send_if_modified(|p| {
            let changed = *p != next;
            *p = next;
            changed
        });
    }

    /// Reads committed state.
    pub fn read<T>(&self, f: impl FnOnce(&Simulation) -> T) -> T {
        f(&self.lock().sim)
    }

    /// Log entries from `from` on, if the run is still generation `generation`.
    pub fn entries(&self, generation: u64, from: u64, max: usize) -> Option<Vec<LogEntry>> {
        let inner = self.lock();
        if inner.sim.generation() != generation {
            return None;
        }
        let log = inner.sim.log();
        let start = (from as usize).min(log.len());
        Some(log[start..log.len().min(start + max)].to_vec())
    }

    /// Runs a control command once no tick is in flight.
    pub fn control<T>(&self, f: impl FnOnce(&mut Simulation) -> Result<T, EngineError>) -> Result<T, EngineError> {
        let mut inner = self.lock();
        inner.hold += 1;
        while inner.inflight {
            inner = self.cond.wait(inner).unwrap_or_else(|p| p.into_inner());
        }
        inner.hold -= 1;
        let out = f(&mut inner.sim);
        if out.is_ok() {
            inner.last_error = None;
        }
        self.publish(&inner);
        self.cond.notify_all();
        out
    }

    pub fn last_error(&self) -> Option<(String, String)> {
        self.lock().last_error.clone()
    }

    /// Blocks until `pred` holds, rechecking after every commit or command.
    pub fn wait_until(&self, mut pred: impl FnMut(&Simulation) -> bool) {
        let mut inner = self.lock();
        while !pred(&inner.sim) && !inner.shutdown {
            inner = self.cond.wait(inner).unwrap_or_else(|p| p.into_inner());
        }
    }

    fn drive(&self) {
        let mut inner = self.lock();
        loop {
            if inner.shutdown {
                return;
            }
            if inner.sim.state().status != RunStatus::Running || inner.hold > 0 {
                inner = self.cond.wait(inner).unwrap_or_else(|p| p.into_inner());
                continue;
            }
            let job = match inner.sim.prepare() {
                Ok(job) => job,
                Err(_) => continue,
            };
            let provider = Arc::clone(inner.sim.provider());
            inner.inflight = true;
            drop(inner);
            let result = job.run(&provider);
            inner = self.lock();
            inner.inflight = false;
            match inner.sim.commit(&job, result) {
                Ok(_) | Err(EngineError::Stale) => {}
                Err(e) => {
                    tracing::error!(tick = job.tick, "{e}");
                    inner.last_error = Some((e.code().to_string(), e.to_string()));
                }
            }
            self.publish(&inner);
            self.cond.notify_all();
        }
    }

    /// Stops the driver after any in-flight tick.
    pub fn shutdown(&self) {
        {
            let mut inner = self.lock();
            inner.shutdown = true;
            self.cond.notify_all();
        }
        if let Some(handle) = self.driver.lock().expect("driver lock").take() {
            let _ = handle.join();
        }
    }
}

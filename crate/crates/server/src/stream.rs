//! `GET /v1/stream`: log records as server-sent events.
//!
//! Event ids are log sequence numbers, so a client resumes with
//! `Last-Event-ID` (or `?from=`) and dedups by id. Run state changes are
//! interleaved as `run_state_changed` events without an id.

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::HeaderMap;
use axum::response::sse::{Event, KeepAlive, Sse};
use futures::Stream;
use sparkle_core::RunState;
use tokio::sync::watch;

use crate::error::ApiError;
use crate::session::{Progress, Session};

/// Record types forwarded to subscribers.
pub const STREAMED: [&str; 5] = ["behavior", "trace", "delivery", "spark", "edge"];
const BATCH: usize = 256;

struct Cursor {
    session: Arc<Session>,
    rx: watch::Receiver<Progress>,
    generation: u64,
    next_seq: u64,
    last_state: Option<RunState>,
    queue: VecDeque<Event>,
}

impl Cursor {
    /// Queues whatever is new; false when there was nothing.
    fn fill(&mut self) -> bool {
        let progress = self.rx.borrow_and_update().clone();
        if progress.generation != self.generation {
            self.generation = progress.generation;
            self.next_seq = 0;
        }
        if self.last_state.as_ref() != Some(&progress.state) {
            let data = serde_json::to_string(&progress.state).expect("state serializes");
            self.queue.push_back(Event::default().event("run_state_changed").data(data));
            self.last_state = Some(progress.state);
        }
        if self.next_seq < progress.log_len {
            if let Some(entries) = self.session.entries(self.generation, self.next_seq, BATCH) {
                for e in entries {
                    self.next_seq = e.seq + 1;
                    let kind = e.record.type_name();
                    if STREAMED.contains(&kind) {
                        self.queue
                            .push_back(Event::default().id(e.seq.to_string()).event(kind).data(e.to_line()));
                    }
                }
            }
            // Either progressed or the run was reset under us; look again.
            return true;
        }
        !self.queue.is_empty()
    }
}

fn events(cursor: Cursor) -> impl Stream<Item = Result<Event, Infallible>> {
    futures::stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(ev) = c.queue.pop_front() {
                return Some((Ok(ev), c));
            }
            if !c.fill() && c.rx.changed().await.is_err() {
                return None;
            }
        }
    })
}

pub(crate) async fn stream(
    State(session): State<Arc<Session>>,
    Query(p): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let from = match crate::last_event_id(&headers) {
        Some(last) => last + 1,
        None => match p.get("from") {
            Some(v) => v
                .parse()
                .map_err(|_| ApiError::bad_request(format!("from={v:?} is not a sequence number")))?,
            None => 0,
        },
    };
    let rx = session.subscribe();
    let generation = rx.borrow().generation;
    let cursor = Cursor {
        session,
        rx,
        generation,
        next_seq: from,
        last_state: None,
        queue: VecDeque::new(),
    };
    Ok(Sse::new(events(cursor)).keep_alive(KeepAlive::default()))
}

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use super::{request_hash, Backend, BackendError, CompletionRequest, TranscriptEntry, EMBEDDING_TEMPLATE};

/// Serves responses from a recorded transcript without touching the network.
///
/// Responses recorded under the same hash are handed out in recording order;
/// once exhausted the last one is repeated.
pub struct ReplayBackend {
    queues: Mutex<HashMap<String, (VecDeque<String>, String)>>,
}

impl ReplayBackend {
    pub fn new(entries: &[TranscriptEntry]) -> Self {
        let mut queues: HashMap<String, (VecDeque<String>, String)> = HashMap::new();
        for e in entries {
            let slot = queues
                .entry(e.hash.clone())
                .or_insert_with(|| (VecDeque::new(), e.response.clone()));
            slot.0.push_back(e.response.clone());
            slot.1 = e.response.clone();
        }
        Self {
            queues: Mutex::new(queues),
        }
    }

    fn take(&self, hash: &str) -> Option<String> {
        let mut q = self.queues.lock().expect("replay lock");
        let (queue, last) = q.get_mut(hash)?;
        Some(queue.pop_front().unwrap_or_else(|| last.clone()))
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let hash = request.hash();
        self.take(&hash).ok_or_else(|| {
            BackendError::Fatal(format!(
                "transcript has no response for {} request {hash}",
                request.template_id
            ))
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let hash = request_hash(EMBEDDING_TEMPLATE, text);
        let raw = self
            .take(&hash)
            .ok_or_else(|| BackendError::Fatal(format!("transcript has no embedding for {hash}")))?;
        serde_json::from_str(&raw).map_err(|e| BackendError::Fatal(format!("bad recorded embedding: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{PromptParts, Provider, Script, ScriptRule, ScriptedBackend};

    #[test]
    fn byte_equal_replay() {
        let recorder = Provider::new(Box::new(ScriptedBackend::new(
            Script::new().rule(ScriptRule::new("t", r#"{"Answer":"No"}"#)),
        )));
        let req = CompletionRequest::new("t", PromptParts::new("q".into(), String::new(), String::new()));
        let live = recorder.complete(&req).unwrap();
        let emb = recorder.embed("hello world").unwrap();

        let replay = Provider::new(Box::new(ReplayBackend::new(&recorder.transcript())));
        assert_eq!(replay.complete(&req).unwrap(), live);
        assert_eq!(replay.embed("hello world").unwrap(), emb);

        let unknown = CompletionRequest::new("t", PromptParts::new("other".into(), String::new(), String::new()));
        assert!(replay.complete(&unknown).is_err());
    }

    #[test]
    fn repeated_hash_in_order() {
        let entries: Vec<_> = ["1", "2"]
            .iter()
            .map(|r| TranscriptEntry {
                hash: "h".into(),
                template_id: "t".into(),
                prompt: "p".into(),
                response: r.to_string(),
                latency_ms: 3,
            })
            .collect();
        let b = ReplayBackend::new(&entries);
        assert_eq!(b.take("h").as_deref(), Some("1"));
        assert_eq!(b.take("h").as_deref(), Some("2"));
        assert_eq!(b.take("h").as_deref(), Some("2"));
    }
}

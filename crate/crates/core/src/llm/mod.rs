//! Uniform access to a completion + embedding backend.
//!
//! [`Provider`] wraps a [`Backend`] with the retry policy, the embedding
//! cache, the per-run dimension check and the append-only transcript. The
//! scripted and replay backends make whole runs reproducible offline.

mod embedding;
pub mod json;
mod live;
mod replay;
mod scripted;
mod transcript;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use embedding::hashed_embedding;
pub use json::{extract_json, normalize_answer, score_from_text, JsonRecord, PayloadError};
pub use live::{LiveBackend, ProviderConfig, TOKEN_ENV};
pub use replay::ReplayBackend;
pub use scripted::{Script, ScriptRule, ScriptedBackend};
pub use transcript::{read_transcript, TranscriptEntry, TranscriptWriter};

/// Fixed chain-of-thought directive shared by every prompt.
pub const STEP_DIRECTIVE: &str = "Let's think step by step.";

/// Template id used for embedding calls in the transcript.
pub const EMBEDDING_TEMPLATE: &str = "embedding";

/// The four parts of a chain-of-thought prompt, rendered in this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptParts {
    pub core: String,
    pub step_directive: String,
    pub instructions: String,
    pub output_example: String,
}

impl PromptParts {
    pub fn new(core: String, instructions: String, output_example: String) -> Self {
        Self {
            core,
            step_directive: STEP_DIRECTIVE.to_string(),
            instructions,
            output_example,
        }
    }

    pub fn render(&self) -> String {
        [
            self.core.as_str(),
            self.step_directive.as_str(),
            self.instructions.as_str(),
            self.output_example.as_str(),
        ]
        .iter()
        .filter(|p| !p.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join("\n")
    }
}

/// One completion request with the identity used for scripted matching.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub template_id: String,
    pub agent: Option<String>,
    pub tick: Option<u64>,
    /// 0 for the first ask, incremented per re-ask.
    pub attempt: u32,
    pub slots: BTreeMap<String, String>,
    pub prompt: PromptParts,
    /// Appended after the rendered prompt on re-asks.
    pub suffix: Option<String>,
}

impl CompletionRequest {
    pub fn new(template_id: &str, prompt: PromptParts) -> Self {
        Self {
            template_id: template_id.to_string(),
            agent: None,
            tick: None,
            attempt: 0,
            slots: BTreeMap::new(),
            prompt,
            suffix: None,
        }
    }

    pub fn text(&self) -> String {
        let mut s = self.prompt.render();
        if let Some(sfx) = &self.suffix {
            s.push('\n');
            s.push_str(sfx);
        }
        s
    }

    pub fn hash(&self) -> String {
        request_hash(&self.template_id, &self.text())
    }

    pub fn reask(&self, sentence: &str) -> Self {
        let mut next = self.clone();
        next.attempt += 1;
        next.suffix = Some(sentence.to_string());
        next
    }
}

/// Stable identity of a request: truncated SHA-256 over template id and text.
pub fn request_hash(template_id: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(template_id.as_bytes());
    h.update([0x1f]);
    h.update(text.as_bytes());
    hex::encode(&h.finalize()[..16])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transient backend failure: {0}")]
    Retriable(String),
    #[error("backend failure: {0}")]
    Fatal(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider unavailable after {attempts} attempt(s): {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("provider contract violation: {0}")]
    ContractViolation(String),
}

impl ProviderError {
    pub fn code(&self) -> &'static str {
        match self {
            ProviderError::Unavailable { .. } => "PROVIDER_UNAVAILABLE",
            ProviderError::ContractViolation(_) => "PROVIDER_CONTRACT_VIOLATION",
        }
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
    /// Whether wall-clock latency is meaningful for this backend.
    fn measures_latency(&self) -> bool {
        false
    }
}

/// Raw completion text plus the hash it was recorded under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub hash: String,
}

pub struct Provider {
    backend: Box<dyn Backend>,
    max_retries: u32,
    transcript: Mutex<Vec<TranscriptEntry>>,
    sink: Mutex<Option<TranscriptWriter>>,
    embeddings: Mutex<HashMap<String, EmbeddingVector>>,
    dimension: Mutex<Option<usize>>,
}

impl Provider {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        Self::with_retries(backend, 2)
    }

    pub fn with_retries(backend: Box<dyn Backend>, max_retries: u32) -> Self {
        Self {
            backend,
            max_retries,
            transcript: Mutex::new(Vec::new()),
            sink: Mutex::new(None),
            embeddings: Mutex::new(HashMap::new()),
            dimension: Mutex::new(None),
        }
    }

    pub fn scripted(script: Script) -> Self {
        Self::new(Box::new(ScriptedBackend::new(script)))
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Streams every subsequent transcript entry to `path` as JSON lines.
    pub fn record_to(&self, path: &Path) -> std::io::Result<()> {
        let writer = TranscriptWriter::create(path)?;
        *self.sink.lock().expect("transcript sink lock") = Some(writer);
        Ok(())
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    fn with_retry<T>(
        &self,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, ProviderError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match call() {
                Ok(v) => return Ok(v),
                Err(BackendError::Retriable(msg)) => {
                    if attempts > self.max_retries {
                        return Err(ProviderError::Unavailable {
                            attempts,
                            last: msg,
                        });
                    }
                }
                Err(BackendError::Fatal(msg)) => {
                    return Err(ProviderError::Unavailable {
                        attempts,
                        last: msg,
                    })
                }
            }
        }
    }

    fn log(&self, entry: TranscriptEntry) {
        if let Some(sink) = self.sink.lock().expect("transcript sink lock").as_mut() {
            if let Err(err) = sink.append(&entry) {
                tracing::warn!("transcript write failed: {err}");
            }
        }
        self.transcript.lock().expect("transcript lock").push(entry);
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let hash = request.hash();
        let started = Instant::now();
        let text = self.with_retry(|| self.backend.complete(request))?;
        let latency_ms = if self.backend.measures_latency() {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        self.log(TranscriptEntry {
            hash: hash.clone(),
            template_id: request.template_id.clone(),
            prompt: request.text(),
            response: text.clone(),
            latency_ms,
        });
        Ok(Completion { text, hash })
    }

    /// Embeds `text`, caching by exact text for the life of the provider.
    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if let Some(v) = self.embeddings.lock().expect("cache lock").get(text) {
            return Ok(v.clone());
        }
        let started = Instant::now();
        let values = self.with_retry(|| self.backend.embed(text))?;
        if values.is_empty() || values.iter().any(|x| !x.is_finite()) {
            return Err(ProviderError::ContractViolation(
                "backend returned an empty or non-finite embedding".into(),
            ));
        }
        {
            let mut dim = self.dimension.lock().expect("dimension lock");
            match *dim {
                Some(d) if d != values.len() => {
                    return Err(ProviderError::ContractViolation(format!(
                        "embedding dimension {} differs from run dimension {d}",
                        values.len()
                    )))
                }
                Some(_) => {}
                None => *dim = Some(values.len()),
            }
        }
        let latency_ms = if self.backend.measures_latency() {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        self.log(TranscriptEntry {
            hash: request_hash(EMBEDDING_TEMPLATE, text),
            template_id: EMBEDDING_TEMPLATE.to_string(),
            prompt: text.to_string(),
            response: serde_json::to_string(&values).expect("floats serialize"),
            latency_ms,
        });
        let v = EmbeddingVector::new(values);
        self.embeddings
            .lock()
            .expect("cache lock")
            .insert(text.to_string(), v.clone());
        Ok(v)
    }
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider")
            .field("backend", &self.backend.name())
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    struct Flaky {
        calls: Arc<AtomicU32>,
        dims: Vec<usize>,
    }

    impl Backend for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _r: &CompletionRequest) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Retriable("timeout".into()))
        }
        fn embed(&self, _t: &str) -> Result<Vec<f64>, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            Ok(vec![1.0; self.dims[n.min(self.dims.len() - 1)]])
        }
    }

    fn prompt() -> PromptParts {
        PromptParts::new("Question?".into(), "Answer in JSON.".into(), String::new())
    }

    #[test]
    fn retries_then_unavailable() {
        let calls = Arc::new(AtomicU32::new(0));
        let p = Provider::with_retries(
            Box::new(Flaky {
                calls: calls.clone(),
                dims: vec![2],
            }),
            2,
        );
        let err = p
            .complete(&CompletionRequest::new("t", prompt()))
            .unwrap_err();
        assert_eq!(err.code(), "PROVIDER_UNAVAILABLE");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn dimension_mismatch_is_contract_violation() {
        let p = Provider::new(Box::new(Flaky {
            calls: Arc::new(AtomicU32::new(0)),
            dims: vec![3, 4],
        }));
        p.embed("first").unwrap();
        // cached: no second backend call
        assert_eq!(p.embed("first").unwrap().dimension(), 3);
        let err = p.embed("second").unwrap_err();
        assert_eq!(err.code(), "PROVIDER_CONTRACT_VIOLATION");
    }

    #[test]
    fn rendered_order_and_directive() {
        let parts = PromptParts::new("core".into(), "instr".into(), "example".into());
        assert_eq!(
            parts.render(),
            "core\nLet's think step by step.\ninstr\nexample"
        );
        let req = CompletionRequest::new("t", parts);
        let again = req.reask("Return only the JSON object.");
        assert_ne!(req.hash(), again.hash());
        assert!(again.text().ends_with("Return only the JSON object."));
    }
}

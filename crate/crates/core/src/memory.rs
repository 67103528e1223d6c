//! Per-agent memory stream with recency/importance/relevance retrieval.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RetrievalWeights;
use crate::llm::EmbeddingVector;
use crate::time::{hours_between, serde_aoe, Timestamp};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MemoryError {
    #[error("cannot compute score: {0}")]
    Compute(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl MemoryError {
    pub fn code(&self) -> &'static str {
        match self {
            MemoryError::Compute(_) => "COMPUTE_ERROR",
            MemoryError::Precondition(_) => "PRECONDITION_FAILED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    DailyAction,
    PerceptionEvent,
    PerceptionSpark,
    Plan,
    OwnPost,
    OwnEngagement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub memory_id: String,
    pub owner: String,
    #[serde(with = "serde_aoe")]
    pub created_at: Timestamp,
    #[serde(with = "serde_aoe")]
    pub last_retrieved_at: Timestamp,
    pub kind: MemoryKind,
    pub text: String,
    pub importance: u8,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub owner: String,
    pub situation_text: String,
    pub situation_embedding: EmbeddingVector,
    pub now: Timestamp,
    pub top_k: usize,
}

/// `decay` raised to the hours elapsed since `last_retrieved_at`.
pub fn recency_score(last_retrieved_at: Timestamp, now: Timestamp, decay: f64) -> Result<f64, MemoryError> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(MemoryError::Precondition(format!("decay {decay} outside (0, 1)")));
    }
    let hours = hours_between(last_retrieved_at, now);
    if hours < 0.0 {
        return Err(MemoryError::Precondition(
            "query time precedes the record's last retrieval".into(),
        ));
    }
    Ok(decay.powf(hours))
}

/// Cosine similarity.
pub fn relevance_score(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, MemoryError> {
    if a.dimension() != b.dimension() {
        return Err(MemoryError::Compute(format!(
            "dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let na = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MemoryError::Compute("zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Weighted sum of recency, importance/10 and relevance clamped to [0, 1].
pub fn combine_scores(weights: RetrievalWeights, recency: f64, importance: u8, relevance: f64) -> f64 {
    weights.recency * recency
        + weights.importance * (f64::from(importance) / 10.0)
        + weights.relevance * relevance.clamp(0.0, 1.0)
}

pub fn retrieval_score(
    record: &MemoryRecord,
    query: &RetrievalQuery,
    weights: RetrievalWeights,
    decay: f64,
) -> Result<f64, MemoryError> {
    let recency = recency_score(record.last_retrieved_at, query.now, decay)?;
    let relevance = relevance_score(&record.embedding, &query.situation_embedding)?;
    Ok(combine_scores(weights, recency, record.importance, relevance))
}

/// Descending score, then newer `created_at`, then ascending `memory_id`.
pub fn rank_order(a: (f64, &MemoryRecord), b: (f64, &MemoryRecord)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| b.1.created_at.cmp(&a.1.created_at))
        .then_with(|| a.1.memory_id.cmp(&b.1.memory_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub owner: String,
    pub records: Vec<MemoryRecord>,
    next_index: u64,
}

impl MemoryStore {
    pub fn new(owner: &str) -> Self {
        Self {
            owner: owner.to_string(),
            records: Vec::new(),
            next_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, memory_id: &str) -> Option<&MemoryRecord> {
        self.records.iter().find(|r| r.memory_id == memory_id)
    }

    /// Appends a scored record. `created_at` may not precede earlier records.
    pub fn append(
        &mut self,
        kind: MemoryKind,
        text: &str,
        created_at: Timestamp,
        importance: u8,
        embedding: EmbeddingVector,
    ) -> Result<&MemoryRecord, MemoryError> {
        if text.trim().is_empty() {
            return Err(MemoryError::Precondition("memory text is empty".into()));
        }
        if !(1..=10).contains(&importance) {
            return Err(MemoryError::Precondition(format!("importance {importance} outside 1..=10")));
        }
        if let Some(last) = self.records.last() {
            if created_at < last.created_at {
                return Err(MemoryError::Precondition(format!(
                    "created_at {created_at} precedes the latest record at {}",
                    last.created_at
                )));
            }
        }
        let memory_id = format!("{}/m{:06}", self.owner, self.next_index);
        self.next_index += 1;
        self.records.push(MemoryRecord {
            memory_id,
            owner: self.owner.clone(),
            created_at,
            last_retrieved_at: created_at,
            kind,
            text: text.to_string(),
            importance,
            embedding,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    /// Scores every record, returns the best `top_k`, and stamps each returned
    /// record's `last_retrieved_at` with the query time. Records whose
    /// embedding cannot be compared count as irrelevant; a query time earlier
    /// than a record's last retrieval counts as zero elapsed time.
    pub fn retrieve(&mut self, query: &RetrievalQuery, weights: RetrievalWeights, decay: f64) -> Vec<MemoryRecord> {
        if query.top_k == 0 || self.records.is_empty() {
            return Vec::new();
        }
        let mut scored: Vec<(f64, usize)> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let recency = recency_score(r.last_retrieved_at, query.now.max(r.last_retrieved_at), decay)
                    .unwrap_or(1.0);
                let relevance = relevance_score(&r.embedding, &query.situation_embedding).unwrap_or(0.0);
                (combine_scores(weights, recency, r.importance, relevance), i)
            })
            .collect();
        let records = &self.records;
        let cmp = |a: &(f64, usize), b: &(f64, usize)| rank_order((a.0, &records[a.1]), (b.0, &records[b.1]));
        let k = query.top_k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        scored
            .into_iter()
            .map(|(_, i)| {
                let r = &mut self.records[i];
                if query.now > r.last_retrieved_at {
                    r.last_retrieved_at = query.now;
                }
                r.clone()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_aoe;

    fn t(s: &str) -> Timestamp {
        parse_aoe(s).unwrap()
    }

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec())
    }

    #[test]
    fn recency_examples() {
        let now = t("2026-07-15T08:00:00-12:00");
        assert_eq!(recency_score(now, now, 0.995).unwrap(), 1.0);
        let day_ago = t("2026-07-14T08:00:00-12:00");
        // 0.995^24 evaluated by repeated multiplication
        let expected = (0..24).fold(1.0f64, |acc, _| acc * 0.995);
        assert!((recency_score(day_ago, now, 0.995).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.8867).abs() < 1e-4);
        let two_h = t("2026-07-15T06:00:00-12:00");
        assert_eq!(recency_score(two_h, now, 0.5).unwrap(), 0.25);
        assert!(recency_score(now, two_h, 0.5).is_err());
    }

    #[test]
    fn relevance_examples() {
        assert!((relevance_score(&v(&[0.3, 0.4]), &v(&[0.3, 0.4])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(relevance_score(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let r = relevance_score(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert_eq!(
            relevance_score(&v(&[1.0]), &v(&[1.0, 0.0])).unwrap_err().code(),
            "COMPUTE_ERROR"
        );
        assert!(relevance_score(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn weighted_sum_examples() {
        let w = RetrievalWeights::new(1.0, 1.0, 1.0);
        assert!((combine_scores(w, 1.0, 5, 0.5) - 2.0).abs() < 1e-15);
        let only_importance = RetrievalWeights::new(0.0, 1.0, 0.0);
        assert_eq!(combine_scores(only_importance, 0.3, 10, -0.9), 1.0);
        assert_eq!(combine_scores(w, 0.0, 1, -0.5), 0.1);
    }

    #[test]
    fn append_guards() {
        let mut s = MemoryStore::new("a");
        let at = t("2026-07-14T08:00:00-12:00");
        s.append(MemoryKind::Plan, "brushing teeth", at, 1, v(&[1.0])).unwrap();
        let earlier = t("2026-07-14T07:00:00-12:00");
        assert!(s.append(MemoryKind::Plan, "x", earlier, 1, v(&[1.0])).is_err());
        assert!(s.append(MemoryKind::Plan, " ", at, 1, v(&[1.0])).is_err());
        assert!(s.append(MemoryKind::Plan, "x", at, 11, v(&[1.0])).is_err());
        assert_eq!(s.records[0].last_retrieved_at, at);
    }

    #[test]
    fn retrieve_updates_only_returned() {
        let mut s = MemoryStore::new("a");
        let at = t("2026-07-14T08:00:00-12:00");
        s.append(MemoryKind::Plan, "low", at, 1, v(&[1.0, 0.0])).unwrap();
        s.append(MemoryKind::Plan, "high", at, 9, v(&[1.0, 0.0])).unwrap();
        let now = t("2026-07-14T10:00:00-12:00");
        let q = RetrievalQuery {
            owner: "a".into(),
            situation_text: "x".into(),
            situation_embedding: v(&[1.0, 0.0]),
            now,
            top_k: 1,
        };
        let got = s.retrieve(&q, RetrievalWeights::default(), 0.995);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].text, "high");
        assert_eq!(s.records[1].last_retrieved_at, now);
        assert_eq!(s.records[0].last_retrieved_at, at);
        assert!(MemoryStore::new("b").retrieve(&q, RetrievalWeights::default(), 0.995).is_empty());
    }
}

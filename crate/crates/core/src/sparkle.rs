//! The virtual platform: sparks, likes, replies, follows and the
//! recommendation router that turns each new spark into deliveries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{serde_aoe, Timestamp};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PlatformError {
    #[error("unknown author {0}")]
    UnknownAuthor(String),
    #[error("unknown spark {0}")]
    UnknownSpark(String),
    #[error("content is empty")]
    EmptyContent,
    #[error("{0} cannot follow themselves")]
    SelfFollow(String),
    #[error("{0} cannot be recommended their own spark")]
    SelfRecommendation(String),
    #[error("tick {requested} is after the current tick {current}")]
    FutureTick { requested: u64, current: u64 },
}

impl PlatformError {
    pub fn code(&self) -> &'static str {
        match self {
            PlatformError::UnknownAuthor(_) | PlatformError::UnknownSpark(_) => "REFERENCE_ERROR",
            PlatformError::EmptyContent => "EMPTY_CONTENT",
            PlatformError::SelfFollow(_) | PlatformError::SelfRecommendation(_) => "PRECONDITION_FAILED",
            PlatformError::FutureTick { .. } => "RANGE_ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Like {
    pub agent: String,
    pub tick: u64,
    pub reasoning_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reply {
    pub author: String,
    #[serde(with = "serde_aoe")]
    pub replied_at: Timestamp,
    pub content: String,
    pub reasoning_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spark {
    pub spark_id: String,
    pub author: String,
    #[serde(with = "serde_aoe")]
    pub posted_at: Timestamp,
    /// Tick at which the spark was published.
    pub tick: u64,
    pub content: String,
    #[serde(default)]
    pub likes: Vec<Like>,
    #[serde(default)]
    pub replies: Vec<Reply>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowEdge {
    pub follower: String,
    pub followee: String,
    pub created_at_tick: u64,
    pub reasoning_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryCause {
    NpcForced,
    FollowForced,
    Scored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub spark_id: String,
    pub recipient: String,
    pub cause: DeliveryCause,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<u8>,
    pub tick: u64,
}

/// A recommendation score computed for a non-forced recipient, kept whether
/// or not it cleared the threshold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationScore {
    pub spark_id: String,
    pub recipient: String,
    pub score: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoutingOutcome {
    pub deliveries: Vec<Delivery>,
    pub scores: Vec<RecommendationScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Applied,
    Duplicate,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Platform {
    pub sparks: Vec<Spark>,
    pub edges: Vec<FollowEdge>,
    pub deliveries: Vec<Delivery>,
    pub scores: Vec<RecommendationScore>,
}

impl Platform {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn spark(&self, spark_id: &str) -> Option<&Spark> {
        self.sparks.iter().find(|s| s.spark_id == spark_id)
    }

    fn spark_mut(&mut self, spark_id: &str) -> Result<&mut Spark, PlatformError> {
        self.sparks
            .iter_mut()
            .find(|s| s.spark_id == spark_id)
            .ok_or_else(|| PlatformError::UnknownSpark(spark_id.to_string()))
    }

    pub fn follows(&self, follower: &str, followee: &str) -> bool {
        self.edges
            .iter()
            .any(|e| e.follower == follower && e.followee == followee)
    }

    pub fn followers_of(&self, followee: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.followee == followee)
            .map(|e| e.follower.as_str())
            .collect()
    }

    pub fn has_liked(&self, agent: &str, spark_id: &str) -> bool {
        self.spark(spark_id)
            .is_some_and(|s| s.likes.iter().any(|l| l.agent == agent))
    }

    /// Publishes a spark with a fresh sequential id. `author_known` reflects
    /// the registry lookup done by the caller.
    pub fn publish_spark(
        &mut self,
        author: &str,
        author_known: bool,
        content: &str,
        posted_at: Timestamp,
        tick: u64,
    ) -> Result<&Spark, PlatformError> {
        if !author_known {
            return Err(PlatformError::UnknownAuthor(author.to_string()));
        }
        if content.trim().is_empty() {
            return Err(PlatformError::EmptyContent);
        }
        let spark_id = format!("s{:05}", self.sparks.len());
        self.sparks.push(Spark {
            spark_id,
            author: author.to_string(),
            posted_at,
            tick,
            content: content.to_string(),
            likes: Vec::new(),
            replies: Vec::new(),
        });
        Ok(self.sparks.last().expect("just pushed"))
    }

    /// Computes the deliveries for `spark` over `recipients` (regular agents
    /// in processing order). NPC sparks and sparks by a followed author are
    /// delivered without scoring; everyone else is scored and receives the
    /// spark iff the score is not below `threshold`.
    pub fn route_spark<E>(
        &self,
        spark: &Spark,
        author_is_npc: bool,
        recipients: &[&str],
        tick: u64,
        threshold: u8,
        mut score: impl FnMut(&str) -> Result<u8, E>,
    ) -> Result<RoutingOutcome, E> {
        let mut out = RoutingOutcome::default();
        for &recipient in recipients {
            if recipient == spark.author {
                continue;
            }
            let delivery = |cause, score| Delivery {
                spark_id: spark.spark_id.clone(),
                recipient: recipient.to_string(),
                cause,
                score,
                tick,
            };
            if author_is_npc {
                out.deliveries.push(delivery(DeliveryCause::NpcForced, None));
            } else if self.follows(recipient, &spark.author) {
                out.deliveries.push(delivery(DeliveryCause::FollowForced, None));
            } else {
                let s = score(recipient)?;
                out.scores.push(RecommendationScore {
                    spark_id: spark.spark_id.clone(),
                    recipient: recipient.to_string(),
                    score: s,
                });
                if s >= threshold {
                    out.deliveries.push(delivery(DeliveryCause::Scored, Some(s)));
                }
            }
        }
        Ok(out)
    }

    pub fn record_routing(&mut self, outcome: &RoutingOutcome) {
        self.deliveries.extend(outcome.deliveries.iter().cloned());
        self.scores.extend(outcome.scores.iter().cloned());
    }

    pub fn apply_like(&mut self, agent: &str, spark_id: &str, tick: u64, reasoning_ref: &str) -> Result<Applied, PlatformError> {
        let spark = self.spark_mut(spark_id)?;
        if spark.likes.iter().any(|l| l.agent == agent) {
            return Ok(Applied::Duplicate);
        }
        spark.likes.push(Like {
            agent: agent.to_string(),
            tick,
            reasoning_ref: reasoning_ref.to_string(),
        });
        Ok(Applied::Applied)
    }

    pub fn apply_follow(&mut self, follower: &str, followee: &str, tick: u64, reasoning_ref: &str) -> Result<Applied, PlatformError> {
        if follower == followee {
            return Err(PlatformError::SelfFollow(follower.to_string()));
        }
        if self.follows(follower, followee) {
            return Ok(Applied::Duplicate);
        }
        self.edges.push(FollowEdge {
            follower: follower.to_string(),
            followee: followee.to_string(),
            created_at_tick: tick,
            reasoning_ref: reasoning_ref.to_string(),
        });
        Ok(Applied::Applied)
    }

    pub fn apply_reply(
        &mut self,
        agent: &str,
        spark_id: &str,
        content: &str,
        replied_at: Timestamp,
        reasoning_ref: &str,
    ) -> Result<(), PlatformError> {
        if content.trim().is_empty() {
            return Err(PlatformError::EmptyContent);
        }
        let spark = self.spark_mut(spark_id)?;
        spark.replies.push(Reply {
            author: agent.to_string(),
            replied_at,
            content: content.to_string(),
            reasoning_ref: reasoning_ref.to_string(),
        });
        Ok(())
    }

    /// Follow edges that exist at the end of `tick`.
    pub fn network_at(&self, tick: u64, current_tick: u64) -> Result<Vec<FollowEdge>, PlatformError> {
        if tick > current_tick {
            return Err(PlatformError::FutureTick {
                requested: tick,
                current: current_tick,
            });
        }
        Ok(self
            .edges
            .iter()
            .filter(|e| e.created_at_tick <= tick)
            .cloned()
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_aoe;

    fn at() -> Timestamp {
        parse_aoe("2026-07-14T10:00:00-12:00").unwrap()
    }

    fn never(_: &str) -> Result<u8, ()> {
        panic!("forced deliveries must not be scored")
    }

    #[test]
    fn npc_spark_forced_to_all() {
        let mut p = Platform::new();
        let s = p.publish_spark("npc", true, "Try XXX today!", at(), 0).unwrap().clone();
        let out = p.route_spark(&s, true, &["a", "b", "c"], 0, 7, never).unwrap();
        assert_eq!(out.deliveries.len(), 3);
        assert!(out.deliveries.iter().all(|d| d.cause == DeliveryCause::NpcForced && d.score.is_none()));
        assert!(out.scores.is_empty());
    }

    #[test]
    fn follower_forced_others_scored_with_boundary() {
        let mut p = Platform::new();
        p.apply_follow("a", "b", 0, "t0").unwrap();
        let s = p.publish_spark("b", true, "goal!", at(), 1).unwrap().clone();
        let out = p
            .route_spark(&s, false, &["a", "b", "c", "d"], 1, 7, |r| Ok::<u8, ()>(if r == "c" { 6 } else { 7 }))
            .unwrap();
        let got: Vec<_> = out.deliveries.iter().map(|d| (d.recipient.as_str(), d.cause)).collect();
        assert_eq!(got, vec![("a", DeliveryCause::FollowForced), ("d", DeliveryCause::Scored)]);
        assert_eq!(out.scores.len(), 2);
    }

    #[test]
    fn publish_guards_and_ids() {
        let mut p = Platform::new();
        assert_eq!(p.publish_spark("x", false, "hi", at(), 0).unwrap_err().code(), "REFERENCE_ERROR");
        assert_eq!(p.publish_spark("a", true, " ", at(), 0).unwrap_err(), PlatformError::EmptyContent);
        let a = p.publish_spark("a", true, "one", at(), 0).unwrap().spark_id.clone();
        let b = p.publish_spark("b", true, "two", at(), 0).unwrap().spark_id.clone();
        assert_ne!(a, b);
        assert!(a < b);
    }

    #[test]
    fn engagement_idempotence_and_guards() {
        let mut p = Platform::new();
        let id = p.publish_spark("a", true, "text", at(), 0).unwrap().spark_id.clone();
        assert_eq!(p.apply_like("b", &id, 0, "t1").unwrap(), Applied::Applied);
        assert_eq!(p.apply_like("b", &id, 0, "t2").unwrap(), Applied::Duplicate);
        assert_eq!(p.spark(&id).unwrap().likes.len(), 1);
        assert!(p.apply_follow("a", "a", 0, "t").is_err());
        assert_eq!(p.apply_follow("a", "b", 0, "t").unwrap(), Applied::Applied);
        assert_eq!(p.apply_follow("b", "a", 0, "t").unwrap(), Applied::Applied);
        assert_eq!(p.apply_follow("a", "b", 1, "t").unwrap(), Applied::Duplicate);
        assert_eq!(p.edges.len(), 2);
        assert!(p.apply_reply("b", "s99999", "hi", at(), "t").is_err());
        p.apply_reply("b", &id, "first", at(), "t").unwrap();
        p.apply_reply("c", &id, "second", at(), "t").unwrap();
        let authors: Vec<_> = p.spark(&id).unwrap().replies.iter().map(|r| r.author.as_str()).collect();
        assert_eq!(authors, vec!["b", "c"]);
    }

    #[test]
    fn network_history() {
        let mut p = Platform::new();
        assert!(p.network_at(0, 0).unwrap().is_empty());
        p.apply_follow("elena", "leo", 3, "t").unwrap();
        assert!(p.network_at(2, 5).unwrap().is_empty());
        assert_eq!(p.network_at(3, 5).unwrap().len(), 1);
        assert_eq!(p.network_at(5, 5).unwrap().len(), 1);
        assert_eq!(p.network_at(6, 5).unwrap_err().code(), "RANGE_ERROR");
    }
}

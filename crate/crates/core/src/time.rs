//! Simulation clock helpers. Every timestamp in the engine is held in the
//! Anywhere-on-Earth zone (UTC-12).

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, Timelike};

pub type Timestamp = DateTime<FixedOffset>;

pub const AOE_OFFSET_SECS: i32 = -12 * 3600;

pub fn aoe() -> FixedOffset {
    FixedOffset::east_opt(AOE_OFFSET_SECS).expect("valid offset")
}

/// Re-expresses any instant in AoE without changing the instant itself.
pub fn to_aoe(ts: Timestamp) -> Timestamp {
    ts.with_timezone(&aoe())
}

/// Parses an RFC 3339 timestamp and normalizes it to AoE.
pub fn parse_aoe(s: &str) -> Result<Timestamp, chrono::ParseError> {
    DateTime::parse_from_rfc3339(s).map(to_aoe)
}

/// Elapsed hours from `from` to `to` as a real number (negative if `to` is earlier).
pub fn hours_between(from: Timestamp, to: Timestamp) -> f64 {
    let d = to.signed_duration_since(from);
    d.num_milliseconds() as f64 / 3_600_000.0
}

pub fn minutes(n: i64) -> Duration {
    Duration::minutes(n)
}

pub fn date_of(ts: Timestamp) -> NaiveDate {
    to_aoe(ts).date_naive()
}

/// Minutes since local AoE midnight.
pub fn minute_of_day(ts: Timestamp) -> u32 {
    let t = to_aoe(ts);
    t.hour() * 60 + t.minute()
}

/// `HH:MM` display used inside prompts.
pub fn clock_label(ts: Timestamp) -> String {
    to_aoe(ts).format("%H:%M").to_string()
}

/// Human-readable timestamp used inside prompts.
pub fn prompt_label(ts: Timestamp) -> String {
    to_aoe(ts).format("%Y-%m-%d %H:%M").to_string()
}

/// Midnight of `date` in AoE plus `minute` minutes.
pub fn at_minute(date: NaiveDate, minute: u32) -> Timestamp {
    let midnight = date.and_hms_opt(0, 0, 0).expect("midnight exists");
    let local = midnight
        .and_local_timezone(aoe())
        .single()
        .expect("fixed offset is unambiguous");
    local + Duration::minutes(minute as i64)
}

/// Serde adapter that always writes timestamps with the explicit -12:00 offset.
pub mod serde_aoe {
    use super::{parse_aoe, to_aoe, Timestamp};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_aoe(*ts).to_rfc3339())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let raw = String::deserialize(d)?;
        parse_aoe(&raw).map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;
        use serde::Serialize;

        pub fn serialize<S: Serializer>(ts: &Option<Timestamp>, s: S) -> Result<S::Ok, S::Error> {
            ts.map(|t| to_aoe(t).to_rfc3339()).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Timestamp>, D::Error> {
            let raw = Option::<String>::deserialize(d)?;
            raw.map(|r| parse_aoe(&r).map_err(serde::de::Error::custom))
                .transpose()
        }
    }
}

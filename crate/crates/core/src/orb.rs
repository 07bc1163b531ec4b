//! The Orb memory unit and the episode types it is distilled from.
//!
//! An [`Orb`] is content-addressed: its id is the SHA-256 of
//! `obs 0x1F emotion 0x1F outcome`, so two episodes that distill to the same
//! observation, emotion and reflection collapse onto one record.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, SubsecRound, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const FIELD_SEPARATOR: u8 = 0x1F;

/// Lowercase hex SHA-256 digest identifying an orb.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrbId(String);

impl OrbId {
    pub fn parse(s: &str) -> Result<Self> {
        let ok = s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if ok {
            Ok(OrbId(s.to_owned()))
        } else {
            Err(Error::MalformedId(s.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First eight hex characters, used when injecting reflections into prompts.
    pub fn short(&self) -> &str {
        &self.0[..8]
    }
}

impl fmt::Display for OrbId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for OrbId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OrbId::parse(s)
    }
}

impl Serialize for OrbId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for OrbId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        OrbId::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Categorical emotion tag, a lowercase token matching `[a-z][a-z_]*`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EmotionLabel(String);

impl EmotionLabel {
    pub const FRUSTRATED: &'static str = "frustrated";
    pub const SATISFIED: &'static str = "satisfied";
    pub const NEUTRAL: &'static str = "neutral";

    pub fn new(label: &str) -> Result<Self> {
        let mut bytes = label.bytes();
        let ok = matches!(bytes.next(), Some(b'a'..=b'z'))
            && bytes.all(|b| b.is_ascii_lowercase() || b == b'_');
        if ok {
            Ok(EmotionLabel(label.to_owned()))
        } else {
            Err(Error::InvalidOrb(format!("bad emotion label {label:?}")))
        }
    }

    pub fn frustrated() -> Self {
        EmotionLabel(Self::FRUSTRATED.to_owned())
    }

    pub fn satisfied() -> Self {
        EmotionLabel(Self::SATISFIED.to_owned())
    }

    pub fn neutral() -> Self {
        EmotionLabel(Self::NEUTRAL.to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for EmotionLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for EmotionLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        EmotionLabel::new(&s).map_err(serde::de::Error::custom)
    }
}

/// Scalar value stored in an orb's structured context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<&str> for ContextValue {
    fn from(s: &str) -> Self {
        ContextValue::Text(s.to_owned())
    }
}

impl From<String> for ContextValue {
    fn from(s: String) -> Self {
        ContextValue::Text(s)
    }
}

impl From<f64> for ContextValue {
    fn from(x: f64) -> Self {
        ContextValue::Float(x)
    }
}

impl From<i64> for ContextValue {
    fn from(x: i64) -> Self {
        ContextValue::Int(x)
    }
}

impl From<bool> for ContextValue {
    fn from(b: bool) -> Self {
        ContextValue::Bool(b)
    }
}

/// Structured metadata attached to an orb. Keys iterate in byte order.
pub type Context = BTreeMap<String, ContextValue>;

/// Canonical text form of a context map: `{"k1":v1,"k2":v2}` with keys in
/// byte order and JSON escaping. Equal maps always render identically.
pub fn context_to_string(context: &Context) -> String {
    let mut out = String::from("{");
    for (i, (key, value)) in context.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        // Serializing a str or a scalar into JSON cannot fail.
        out.push_str(&serde_json::to_string(key).expect("string key"));
        out.push(':');
        out.push_str(&serde_json::to_string(value).expect("scalar value"));
    }
    out.push('}');
    out
}

/// SHA-256 over `obs 0x1F emotion 0x1F outcome`, lowercase hex.
pub fn compute_id(obs: &str, emotion: &str, outcome: &str) -> OrbId {
    let mut hasher = Sha256::new();
    hasher.update(obs.as_bytes());
    hasher.update([FIELD_SEPARATOR]);
    hasher.update(emotion.as_bytes());
    hasher.update([FIELD_SEPARATOR]);
    hasher.update(outcome.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest.iter() {
        hex.push_str(&format!("{byte:02x}"));
    }
    OrbId(hex)
}

/// One distilled episode.
///
/// Fields are private so the content-addressing invariant cannot be broken;
/// build through [`Orb::new`] or deserialize (which re-checks the id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OrbWire")]
pub struct Orb {
    id: OrbId,
    obs: String,
    emotion: EmotionLabel,
    outcome: String,
    context: Context,
    #[serde(serialize_with = "serialize_timestamp")]
    timestamp: DateTime<Utc>,
}

#[derive(Deserialize)]
struct OrbWire {
    id: OrbId,
    obs: String,
    emotion: EmotionLabel,
    outcome: String,
    #[serde(default)]
    context: Context,
    timestamp: DateTime<Utc>,
}

impl TryFrom<OrbWire> for Orb {
    type Error = Error;

    fn try_from(wire: OrbWire) -> Result<Self> {
        let orb = Orb::new(wire.obs, wire.emotion, wire.outcome, wire.context, wire.timestamp)?;
        if orb.id != wire.id {
            return Err(Error::InvalidOrb(format!(
                "id {} does not match content digest {}",
                wire.id, orb.id
            )));
        }
        Ok(orb)
    }
}

fn serialize_timestamp<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_timestamp(ts))
}

/// RFC 3339 with microsecond precision and a `Z` suffix.
pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Micros, true)
}

impl Orb {
    /// Validates the fields and derives the id. Timestamps are truncated to
    /// microseconds so the JSON encoding round-trips exactly.
    pub fn new(
        obs: impl Into<String>,
        emotion: EmotionLabel,
        outcome: impl Into<String>,
        context: Context,
        timestamp: DateTime<Utc>,
    ) -> Result<Self> {
        let obs = obs.into();
        let outcome = outcome.into();
        if obs.is_empty() {
            return Err(Error::InvalidOrb("obs is empty".into()));
        }
        if outcome.is_empty() {
            return Err(Error::InvalidOrb("outcome is empty".into()));
        }
        if let Some((key, _)) = context
            .iter()
            .find(|(_, v)| matches!(v, ContextValue::Float(x) if !x.is_finite()))
        {
            return Err(Error::InvalidOrb(format!("context value for {key:?} is not finite")));
        }
        let id = compute_id(&obs, emotion.as_str(), &outcome);
        Ok(Orb {
            id,
            obs,
            emotion,
            outcome,
            context,
            timestamp: timestamp.trunc_subsecs(6),
        })
    }

    pub fn id(&self) -> &OrbId {
        &self.id
    }

    pub fn obs(&self) -> &str {
        &self.obs
    }

    pub fn emotion(&self) -> &EmotionLabel {
        &self.emotion
    }

    pub fn outcome(&self) -> &str {
        &self.outcome
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn timestamp(&self) -> DateTime<Utc> {
        self.timestamp
    }

    /// The text that gets embedded: obs, emotion, outcome and the canonical
    /// context, newline separated. Id and timestamp are not part of it.
    pub fn render_document(&self) -> String {
        render_document(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("orb serializes")
    }
}

pub fn render_document(orb: &Orb) -> String {
    let context = context_to_string(&orb.context);
    let mut doc =
        String::with_capacity(orb.obs.len() + orb.outcome.len() + context.len() + 16);
    doc.push_str(&orb.obs);
    doc.push('\n');
    doc.push_str(orb.emotion.as_str());
    doc.push('\n');
    doc.push_str(&orb.outcome);
    doc.push('\n');
    doc.push_str(&context);
    doc
}

/// Reward breakdown reported by the environment at the end of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardDetail {
    pub reward: f64,
    pub action: f64,
    pub search: f64,
    pub output: f64,
}

impl RewardDetail {
    pub fn new(reward: f64, action: f64, search: f64, output: f64) -> Result<Self> {
        let detail = RewardDetail {
            reward,
            action,
            search,
            output,
        };
        detail.validate()?;
        Ok(detail)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("reward", self.reward),
            ("action", self.action),
            ("search", self.search),
            ("output", self.output),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidTrajectory(format!(
                    "{name} score {value} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// An episode counts as solved iff the overall reward exceeds 0.5.
    pub fn is_success(&self) -> bool {
        self.reward > 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub user_utterance: String,
    #[serde(default)]
    pub agent_action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardDetail>,
}

impl Turn {
    pub fn new(user_utterance: impl Into<String>, agent_action: impl Into<String>) -> Self {
        Turn {
            user_utterance: user_utterance.into(),
            agent_action: agent_action.into(),
            reward: None,
        }
    }

    pub fn with_reward(mut self, reward: RewardDetail) -> Self {
        self.reward = Some(reward);
        self
    }
}

/// A finished (or in-progress) episode: the input to distillation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub scenario: String,
    #[serde(default)]
    pub user_id: String,
    #[serde(default)]
    pub shop_id: String,
    #[serde(default)]
    pub platform: String,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::InvalidTrajectory("no turns".into()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.user_utterance.is_empty() {
                return Err(Error::InvalidTrajectory(format!(
                    "turn {} has an empty user utterance",
                    i + 1
                )));
            }
            if let Some(reward) = &turn.reward {
                reward.validate()?;
            }
        }
        Ok(())
    }

    /// Reward detail of the final turn; its absence means the episode is not
    /// finished and cannot be distilled.
    pub fn final_reward(&self) -> Result<RewardDetail> {
        self.validate()?;
        self.turns
            .last()
            .and_then(|t| t.reward)
            .ok_or(Error::IncompleteTrajectory)
    }

    pub fn user_utterances(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().map(|t| t.user_utterance.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 9, 5, 15, 22, 44).unwrap()
    }

    #[test]
    fn empty_context_renders_braces() {
        assert_eq!(context_to_string(&Context::new()), "{}");
    }

    #[test]
    fn context_rendering_ignores_insertion_order() {
        let mut a = Context::new();
        a.insert("sku".into(), "A1".into());
        a.insert("budget".into(), ContextValue::Int(100));
        let mut b = Context::new();
        b.insert("budget".into(), ContextValue::Int(100));
        b.insert("sku".into(), "A1".into());
        assert_eq!(context_to_string(&a), context_to_string(&b));
        assert_eq!(context_to_string(&a), r#"{"budget":100,"sku":"A1"}"#);
    }

    #[test]
    fn context_escapes_strings() {
        let mut c = Context::new();
        c.insert("q\"k".into(), "line\nbreak".into());
        assert_eq!(context_to_string(&c), r#"{"q\"k":"line\nbreak"}"#);
    }

    #[test]
    fn id_is_deterministic_and_sensitive() {
        assert_eq!(compute_id("a", "b", "c"), compute_id("a", "b", "c"));
        assert_ne!(compute_id("a", "b", "c"), compute_id("a", "b", "d"));
        // The separator keeps field boundaries significant.
        assert_ne!(compute_id("ab", "c", "d"), compute_id("a", "bc", "d"));
    }

    #[test]
    fn document_layout() {
        let orb = Orb::new("q", EmotionLabel::neutral(), "r", Context::new(), ts()).unwrap();
        assert_eq!(orb.render_document(), "q\nneutral\nr\n{}");
    }

    #[test]
    fn timestamp_does_not_affect_document_or_id() {
        let a = Orb::new("q", EmotionLabel::neutral(), "r", Context::new(), ts()).unwrap();
        let later = ts() + chrono::Duration::seconds(30);
        let b = Orb::new("q", EmotionLabel::neutral(), "r", Context::new(), later).unwrap();
        assert_eq!(a.render_document(), b.render_document());
        assert_eq!(a.id(), b.id());
    }

    #[test]
    fn rejects_empty_fields() {
        assert!(Orb::new("", EmotionLabel::neutral(), "r", Context::new(), ts()).is_err());
        assert!(Orb::new("q", EmotionLabel::neutral(), "", Context::new(), ts()).is_err());
        let mut c = Context::new();
        c.insert("x".into(), ContextValue::Float(f64::NAN));
        assert!(Orb::new("q", EmotionLabel::neutral(), "r", c, ts()).is_err());
    }

    #[test]
    fn emotion_label_grammar() {
        assert!(EmotionLabel::new("frustrated").is_ok());
        assert!(EmotionLabel::new("mildly_annoyed").is_ok());
        for bad in ["", "Frustrated", "_x", "a-b", "a1"] {
            assert!(EmotionLabel::new(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn orb_id_parsing() {
        let id = compute_id("a", "b", "c");
        assert_eq!(OrbId::parse(id.as_str()).unwrap(), id);
        assert!(OrbId::parse("xyz").is_err());
        assert!(OrbId::parse(&id.as_str().to_uppercase()).is_err());
    }

    #[test]
    fn json_encoding_key_order_and_roundtrip() {
        let mut c = Context::new();
        c.insert("reward".into(), ContextValue::Float(1.0));
        c.insert("budget".into(), ContextValue::Int(100));
        let ts = Utc.timestamp_opt(1_757_085_764, 418_306_789).unwrap();
        let orb = Orb::new("hello", EmotionLabel::frustrated(), "plan", c, ts).unwrap();
        let json = orb.to_json();
        let keys: Vec<usize> = ["\"id\"", "\"obs\"", "\"emotion\"", "\"outcome\"", "\"context\"", "\"timestamp\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]), "{json}");
        assert!(json.contains("\"timestamp\":\"2025-09-05T15:22:44.418306Z\""), "{json}");
        let back: Orb = serde_json::from_str(&json).unwrap();
        assert_eq!(back, orb);
    }

    #[test]
    fn deserialization_rejects_forged_id() {
        let orb = Orb::new("q", EmotionLabel::neutral(), "r", Context::new(), ts()).unwrap();
        let forged = orb
            .to_json()
            .replace(orb.id().as_str(), compute_id("x", "y", "z").as_str());
        assert!(serde_json::from_str::<Orb>(&forged).is_err());
    }

    #[test]
    fn success_threshold_is_strict() {
        assert!(RewardDetail::new(0.6, 0.0, 0.0, 0.0).unwrap().is_success());
        assert!(!RewardDetail::new(0.5, 1.0, 1.0, 1.0).unwrap().is_success());
        assert!(RewardDetail::new(1.2, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn final_reward_required() {
        let mut t = Trajectory {
            turns: vec![Turn::new("hi", "hello")],
            scenario: "s".into(),
            user_id: "u".into(),
            shop_id: "s".into(),
            platform: "p".into(),
        };
        assert!(matches!(t.final_reward(), Err(Error::IncompleteTrajectory)));
        t.turns[0].reward = Some(RewardDetail::new(1.0, 1.0, 1.0, 1.0).unwrap());
        assert!(t.final_reward().is_ok());
        t.turns.clear();
        assert!(matches!(t.final_reward(), Err(Error::InvalidTrajectory(_))));
    }
}

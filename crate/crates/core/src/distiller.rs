//! Policy-reflection distillation: finished trajectory in, Orb out.
//!
//! The steps are: join the user utterances into `obs`, tag the emotion of
//! the final utterance, ask the frozen model for a reflection over the
//! rendered reflection prompt, attach reward and identifiers as context,
//! stamp the time and derive the content id.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::LlmAdapter;
use crate::orb::{Context, ContextValue, EmotionLabel, Orb, RewardDetail, Trajectory};
use crate::prompts::{format_score, Prompts};

pub const DEFAULT_RECENT_WINDOW: usize = 5;

const NO_HISTORY: &str = "No historical reflection";
const SUCCESS_PREFIX: &str = "I succeeded in this mission";
const FAILURE_PREFIX: &str = "I failed in this mission";
const NEW_PLAN_MARKER: &str = "New Plan:";

pub trait EmotionTagger: Send + Sync {
    fn tag(&self, utterance: &str) -> EmotionLabel;
}

/// Substring lexicon over the lowercased utterance. A negative match wins
/// over a positive one; no match is neutral.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    negative: Vec<String>,
    positive: Vec<String>,
}

impl LexiconTagger {
    pub fn new<N, P>(negative: N, positive: P) -> Self
    where
        N: IntoIterator,
        N::Item: Into<String>,
        P: IntoIterator,
        P::Item: Into<String>,
    {
        LexiconTagger {
            negative: negative.into_iter().map(|s| s.into().to_lowercase()).collect(),
            positive: positive.into_iter().map(|s| s.into().to_lowercase()).collect(),
        }
    }
}

impl Default for LexiconTagger {
    fn default() -> Self {
        LexiconTagger::new(
            ["frustrat", "angry", "annoy", "terrible", "upset", "disappoint", "unacceptable"],
            ["thank", "great", "satisf", "perfect", "appreciate"],
        )
    }
}

impl EmotionTagger for LexiconTagger {
    fn tag(&self, utterance: &str) -> EmotionLabel {
        let text = utterance.to_lowercase();
        if self.negative.iter().any(|w| text.contains(w.as_str())) {
            EmotionLabel::frustrated()
        } else if self.positive.iter().any(|w| text.contains(w.as_str())) {
            EmotionLabel::satisfied()
        } else {
            EmotionLabel::neutral()
        }
    }
}

/// Tags with the default lexicon.
pub fn tag_emotion(utterance: &str) -> EmotionLabel {
    LexiconTagger::default().tag(utterance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionPromptInputs {
    pub platform: String,
    pub shop_id: String,
    pub user_id: String,
    pub scenario_desc: String,
    pub formatted_messages: String,
    pub action_reward: f64,
    pub search_reward: f64,
    pub output_reward: f64,
    pub reward: f64,
    pub memory_context: String,
}

impl ReflectionPromptInputs {
    pub fn from_trajectory(trajectory: &Trajectory, memory_context: &str) -> Result<Self> {
        let reward = trajectory.final_reward()?;
        Ok(ReflectionPromptInputs {
            platform: trajectory.platform.clone(),
            shop_id: trajectory.shop_id.clone(),
            user_id: trajectory.user_id.clone(),
            scenario_desc: trajectory.scenario.clone(),
            formatted_messages: format_messages(trajectory),
            action_reward: reward.action,
            search_reward: reward.search,
            output_reward: reward.output,
            reward: reward.reward,
            memory_context: memory_context.to_owned(),
        })
    }
}

/// The execution history block: one `User:` / `Assistant:` pair per turn.
pub fn format_messages(trajectory: &Trajectory) -> String {
    trajectory
        .turns
        .iter()
        .map(|t| format!("User: {}\nAssistant: {}\n", t.user_utterance, t.agent_action))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionValidationReport {
    pub prefix_ok: bool,
    pub new_plan_ok: bool,
    pub errors: Vec<String>,
}

impl ReflectionValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Checks the two format rules a reflection must follow: the opening
/// sentence matching the episode outcome, and a `New Plan:` summary after it.
pub fn validate_reflection(text: &str, success: bool) -> ReflectionValidationReport {
    let expected = if success { SUCCESS_PREFIX } else { FAILURE_PREFIX };
    let body = text.trim_start();
    let prefix_ok = body.starts_with(expected);
    let after_prefix = if prefix_ok { &body[expected.len()..] } else { body };
    let new_plan_ok = after_prefix.contains(NEW_PLAN_MARKER);

    let mut errors = Vec::new();
    if !prefix_ok {
        errors.push(format!("reflection must begin with \"{expected}\""));
    }
    if !new_plan_ok {
        errors.push(format!("reflection must contain a \"{NEW_PLAN_MARKER}\" summary"));
    }
    ReflectionValidationReport {
        prefix_ok,
        new_plan_ok,
        errors,
    }
}

pub struct Distiller {
    prompts: Arc<Prompts>,
    tagger: Box<dyn EmotionTagger>,
}

impl Default for Distiller {
    fn default() -> Self {
        Distiller::new(Arc::new(Prompts::default()), Box::new(LexiconTagger::default()))
    }
}

impl Distiller {
    pub fn new(prompts: Arc<Prompts>, tagger: Box<dyn EmotionTagger>) -> Self {
        Distiller { prompts, tagger }
    }

    pub fn prompts(&self) -> &Prompts {
        &self.prompts
    }

    pub fn tag_emotion(&self, utterance: &str) -> EmotionLabel {
        self.tagger.tag(utterance)
    }

    pub fn render_reflection_prompt(&self, inputs: &ReflectionPromptInputs) -> Result<String> {
        let success = inputs.reward > 0.5;
        let memory_context = if inputs.memory_context.is_empty() {
            NO_HISTORY.to_owned()
        } else {
            inputs.memory_context.clone()
        };
        let vars: BTreeMap<&str, String> = [
            ("platform", inputs.platform.clone()),
            ("shop_id", inputs.shop_id.clone()),
            ("user_id", inputs.user_id.clone()),
            ("scenario_desc", inputs.scenario_desc.clone()),
            ("formatted_messages", inputs.formatted_messages.clone()),
            ("action_reward", format_score(inputs.action_reward)),
            ("search_reward", format_score(inputs.search_reward)),
            ("output_reward", format_score(inputs.output_reward)),
            ("overall_result", if success { "Success" } else { "Failure" }.to_owned()),
            ("memory_context", memory_context),
            ("outcome_verb", if success { "succeeded" } else { "failed" }.to_owned()),
        ]
        .into_iter()
        .collect();
        self.prompts.reflection.render(&vars)
    }

    /// Renders the reflection prompt for a finished trajectory and returns
    /// the model's completion verbatim.
    pub fn policy_reflection(
        &self,
        model: &dyn LlmAdapter,
        trajectory: &Trajectory,
        memory_context: &str,
    ) -> Result<String> {
        let inputs = ReflectionPromptInputs::from_trajectory(trajectory, memory_context)?;
        let prompt = self.render_reflection_prompt(&inputs)?;
        model.complete(&prompt)
    }

    pub fn generate_orb(
        &self,
        trajectory: &Trajectory,
        model: &dyn LlmAdapter,
        memory_context: &str,
        now: DateTime<Utc>,
    ) -> Result<Orb> {
        let reward = trajectory.final_reward()?;
        let obs = trajectory.user_utterances().collect::<Vec<_>>().join("\n");
        let last = trajectory.turns.last().expect("validated non-empty");
        let emotion = self.tagger.tag(&last.user_utterance);
        let outcome = self.policy_reflection(model, trajectory, memory_context)?;
        if outcome.is_empty() {
            return Err(Error::Adapter("model returned an empty reflection".into()));
        }
        let context = episode_context(trajectory, &reward);
        Orb::new(obs, emotion, outcome, context, now)
    }

    /// Condenses the newest `m` reflections into one paragraph for the next
    /// turn's prompt. Returns an empty string, without calling the model,
    /// when there is nothing to condense.
    pub fn reflect_over_recent(
        &self,
        model: &dyn LlmAdapter,
        recent: &[Orb],
        m: usize,
    ) -> Result<String> {
        if m == 0 {
            return Err(Error::InvalidRequest("m must be at least 1".into()));
        }
        if recent.is_empty() {
            return Ok(String::new());
        }
        let mut newest: Vec<&Orb> = recent.iter().collect();
        newest.sort_by(|a, b| b.timestamp().cmp(&a.timestamp()).then_with(|| a.id().cmp(b.id())));
        newest.truncate(m);

        let reflections = newest
            .iter()
            .enumerate()
            .map(|(i, orb)| format!("Reflection {}:\n{}", i + 1, orb.outcome()))
            .collect::<Vec<_>>()
            .join("\n\n");
        let vars: BTreeMap<&str, String> = [("reflections", reflections)].into_iter().collect();
        let prompt = self.prompts.summarize.render(&vars)?;
        model.complete(&prompt)
    }
}

fn episode_context(trajectory: &Trajectory, reward: &RewardDetail) -> Context {
    let mut context = Context::new();
    context.insert("reward".into(), ContextValue::Float(reward.reward));
    context.insert("action".into(), ContextValue::Float(reward.action));
    context.insert("search".into(), ContextValue::Float(reward.search));
    context.insert("output".into(), ContextValue::Float(reward.output));
    for (key, value) in [
        ("user_id", &trajectory.user_id),
        ("shop_id", &trajectory.shop_id),
        ("platform", &trajectory.platform),
        ("scenario", &trajectory.scenario),
    ] {
        if !value.is_empty() {
            context.insert(key.into(), ContextValue::Text(value.clone()));
        }
    }
    context
}

//! LLM adapters.
//!
//! The memory layer only ever asks a frozen model for completions; the
//! adapter trait deliberately has no training or update operation.

use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts::headings;

pub trait LlmAdapter: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

impl<T: LlmAdapter + ?Sized> LlmAdapter for Arc<T> {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

/// Returns the prompt unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityLlm;

impl LlmAdapter for IdentityLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        Ok(prompt.to_owned())
    }
}

/// Completion computed by a pure function of the prompt.
pub struct ScriptedLlm {
    script: Box<dyn Fn(&str) -> String + Send + Sync>,
}

impl ScriptedLlm {
    pub fn new(script: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        ScriptedLlm {
            script: Box::new(script),
        }
    }

    /// Always answers with `text`.
    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        ScriptedLlm::new(move |_| text.clone())
    }
}

impl LlmAdapter for ScriptedLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        Ok((self.script)(prompt))
    }
}

/// An adapter that always fails, for exercising transport-error paths.
#[derive(Debug, Clone, Default)]
pub struct FailingLlm;

impl LlmAdapter for FailingLlm {
    fn complete(&self, _prompt: &str) -> Result<String> {
        Err(Error::Adapter("backend unavailable".into()))
    }
}

/// Wraps another adapter and keeps every prompt it forwards.
pub struct RecordingLlm<A> {
    inner: A,
    prompts: Mutex<Vec<String>>,
}

impl<A: LlmAdapter> RecordingLlm<A> {
    pub fn new(inner: A) -> Self {
        RecordingLlm {
            inner,
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().clone()
    }

    pub fn calls(&self) -> usize {
        self.prompts.lock().len()
    }
}

impl<A: LlmAdapter> LlmAdapter for RecordingLlm<A> {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.prompts.lock().push(prompt.to_owned());
        self.inner.complete(prompt)
    }
}

/// Deterministic stand-in for a frozen model, used when no endpoint is
/// configured. It recognises the built-in rewrite, reflection and summary
/// prompts and answers each in the shape the pipelines expect.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineLlm;

impl LlmAdapter for OfflineLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        if prompt.contains(headings::EVALUATION) && prompt.contains(headings::TASK_SCENARIO) {
            return Ok(offline_reflection(prompt));
        }
        if let Some(summary) = offline_summary(prompt) {
            return Ok(summary);
        }
        if let Some(q) = offline_rewrite(prompt) {
            return Ok(q);
        }
        Ok(prompt.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_owned())
    }
}

/// Text between `heading` and the next blank line.
pub fn section<'a>(prompt: &'a str, heading: &str) -> Option<&'a str> {
    let start = prompt.find(heading)? + heading.len();
    let body = &prompt[start..];
    let end = body.find("\n\n").unwrap_or(body.len());
    Some(body[..end].trim_end_matches('\n'))
}

fn offline_rewrite(prompt: &str) -> Option<String> {
    let start = prompt.find(headings::CUSTOMER_MESSAGE)? + headings::CUSTOMER_MESSAGE.len();
    let body = prompt[start..].trim_end_matches('\n');
    let (query, context) = match body.find(&format!("\n{}", headings::DIALOGUE_CONTEXT)) {
        Some(at) => (&body[..at], &body[at + 1 + headings::DIALOGUE_CONTEXT.len()..]),
        None => (body, ""),
    };
    let mut rewritten = query.trim().to_owned();
    if !context.trim().is_empty() {
        rewritten.push('\n');
        rewritten.push_str(context.trim());
    }
    Some(rewritten)
}

fn offline_reflection(prompt: &str) -> String {
    let scenario = section(prompt, headings::TASK_SCENARIO).unwrap_or("").trim();
    let evaluation = section(prompt, headings::EVALUATION).unwrap_or("");
    let success = evaluation.contains("Overall result: Success");
    let score = |label: &str| -> f64 {
        evaluation
            .lines()
            .find_map(|l| l.strip_prefix(&format!("- {label} score: ")))
            .and_then(|s| s.trim_end_matches("/1.0").parse().ok())
            .unwrap_or(0.0)
    };
    let scores = [
        ("action tool", score("Action tool")),
        ("search tool", score("Search tool")),
        ("output", score("Output")),
    ];
    if success {
        format!(
            "I succeeded in this mission. Scenario: {scenario}. The chosen tool sequence satisfied the customer.\nNew Plan: reuse the same tool order and parameters for similar requests."
        )
    } else {
        let weakest = scores
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(name, _)| *name)
            .unwrap_or("action tool");
        format!(
            "I failed in this mission. Scenario: {scenario}. The {weakest} step scored lowest and caused the failure.\nNew Plan: verify the {weakest} step against the customer's exact request before replying."
        )
    }
}

fn offline_summary(prompt: &str) -> Option<String> {
    if !prompt.contains(&format!("\n{}1:\n", headings::REFLECTION_ITEM)) {
        return None;
    }
    let plans: Vec<&str> = prompt
        .split(&format!("\n{}", headings::REFLECTION_ITEM))
        .skip(1)
        .filter_map(|block| block.find("New Plan:").map(|at| &block[at + "New Plan:".len()..]))
        .map(|plan| plan.split("\n\n").next().unwrap_or("").trim())
        .filter(|plan| !plan.is_empty())
        .collect();
    Some(if plans.is_empty() {
        "No actionable plan in recent reflections.".to_owned()
    } else {
        format!("Recent lessons: {}", plans.join(" "))
    })
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompletionResponse {
    completion: String,
}

/// HTTP client for a completion endpoint: `POST {"prompt": ...}` answered by
/// `{"completion": ...}`, with an optional bearer token.
pub struct RemoteLlm {
    endpoint: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteLlm {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Adapter(e.to_string()))?;
        Ok(RemoteLlm {
            endpoint: endpoint.into(),
            token,
            client,
        })
    }
}

impl LlmAdapter for RemoteLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        let mut req = self.client.post(&self.endpoint).json(&CompletionRequest { prompt });
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| Error::Adapter(format!("completion request failed: {e}")))?;
        let body: CompletionResponse = resp
            .json()
            .map_err(|e| Error::Adapter(format!("completion response: {e}")))?;
        if body.completion.is_empty() {
            return Err(Error::Adapter("empty completion".into()));
        }
        Ok(body.completion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_echoes() {
        assert_eq!(IdentityLlm.complete("abc").unwrap(), "abc");
    }

    #[test]
    fn recording_keeps_prompts() {
        let llm = RecordingLlm::new(ScriptedLlm::fixed("ok"));
        llm.complete("one").unwrap();
        llm.complete("two").unwrap();
        assert_eq!(llm.prompts(), ["one", "two"]);
    }

    #[test]
    fn offline_rewrite_extracts_query_and_context() {
        let prompt = "Rewrite...\n\nCustomer message:\nwhere is my parcel\nDialogue context:\norder 42\n";
        assert_eq!(OfflineLlm.complete(prompt).unwrap(), "where is my parcel\norder 42");
        let bare = "Rewrite...\n\nCustomer message:\nwhere is my parcel\n";
        assert_eq!(OfflineLlm.complete(bare).unwrap(), "where is my parcel");
    }

    #[test]
    fn remote_transport_failure_is_an_adapter_error() {
        // Port 9 (discard) on localhost is closed in the sandbox.
        let llm = RemoteLlm::new("http://127.0.0.1:9/complete", None).unwrap();
        assert!(matches!(llm.complete("x"), Err(Error::Adapter(_))));
    }
}

//! Rewrite → embed → exact top-k, and prompt augmentation with the hits.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::llm::LlmAdapter;
use crate::orb::OrbId;
use crate::prompts::{headings, Prompts};
use crate::store::{RetrievalResult, VectorStore};

pub const DEFAULT_TOP_K: usize = 5;
pub const MEMORY_HEADER: &str = "## Relevant past reflections";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalRequest {
    pub query: String,
    #[serde(default)]
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requesting_user: Option<String>,
}

impl RetrievalRequest {
    pub fn new(query: impl Into<String>) -> Self {
        RetrievalRequest {
            query: query.into(),
            context: String::new(),
            k: None,
            requesting_user: None,
        }
    }

    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        self.context = context.into();
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }

    pub fn with_user(mut self, user: impl Into<String>) -> Self {
        self.requesting_user = Some(user.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.query.is_empty() {
            return Err(Error::InvalidRequest("query is empty".into()));
        }
        if self.k == Some(0) {
            return Err(Error::InvalidRequest("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k_default: usize,
    /// When false the ablation mode applies: every retrieval uses k = 1.
    pub cross_user: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k_default: DEFAULT_TOP_K,
            cross_user: true,
        }
    }
}

impl RetrievalConfig {
    pub fn effective_k(&self, request: &RetrievalRequest) -> usize {
        if self.cross_user {
            request.k.unwrap_or(self.k_default)
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedPrompt {
    pub text: String,
    pub injected_orb_ids: Vec<OrbId>,
}

pub struct Retriever {
    prompts: Arc<Prompts>,
    config: RetrievalConfig,
}

impl Retriever {
    pub fn new(prompts: Arc<Prompts>, config: RetrievalConfig) -> Self {
        Retriever { prompts, config }
    }

    pub fn config(&self) -> RetrievalConfig {
        self.config
    }

    pub fn render_rewrite_prompt(&self, query: &str, context: &str) -> Result<String> {
        let context_section = if context.is_empty() {
            String::new()
        } else {
            format!("\n{}{}", headings::DIALOGUE_CONTEXT, context)
        };
        let vars: BTreeMap<&str, String> =
            [("query", query.to_owned()), ("context_section", context_section)]
                .into_iter()
                .collect();
        self.prompts.rewrite.render(&vars)
    }

    /// Asks the rewrite model to compress the live query and dialogue
    /// context into one retrieval-oriented question.
    pub fn rewrite_query(&self, model: &dyn LlmAdapter, query: &str, context: &str) -> Result<String> {
        if query.is_empty() {
            return Err(Error::InvalidRequest("query is empty".into()));
        }
        model.complete(&self.render_rewrite_prompt(query, context)?)
    }

    /// Memory is shared across users: `requesting_user` never filters hits.
    pub fn retrieve(
        &self,
        request: &RetrievalRequest,
        model: &dyn LlmAdapter,
        embedder: &dyn Embedder,
        store: &VectorStore,
    ) -> Result<RetrievalResult> {
        request.validate()?;
        let k = self.config.effective_k(request);
        let rewritten = self.rewrite_query(model, &request.query, &request.context)?;
        let embedding = embedder.embed(&rewritten)?;
        store.query_topk(&embedding, k)
    }
}

/// Prepends a memory block, one line per hit in rank order, to `base`.
/// `orb_texts[i]` is the reflection text injected for `result.hits[i]`.
pub fn augment_prompt(
    base: &str,
    result: &RetrievalResult,
    orb_texts: &[String],
) -> Result<AugmentedPrompt> {
    if orb_texts.len() != result.hits.len() {
        return Err(Error::AlignmentMismatch {
            hits: result.hits.len(),
            texts: orb_texts.len(),
        });
    }
    if result.hits.is_empty() {
        return Ok(AugmentedPrompt {
            text: base.to_owned(),
            injected_orb_ids: Vec::new(),
        });
    }
    let mut text = String::from(MEMORY_HEADER);
    for (hit, body) in result.hits.iter().zip(orb_texts) {
        text.push_str(&format!("\n- [{}] {}", hit.orb_id.short(), body));
    }
    text.push_str("\n\n");
    text.push_str(base);
    Ok(AugmentedPrompt {
        text,
        injected_orb_ids: result.hits.iter().map(|h| h.orb_id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingEmbedder;
    use crate::llm::{IdentityLlm, OfflineLlm, RecordingLlm};
    use crate::orb::{compute_id, Context};
    use crate::store::{Hit, VectorRecord};

    fn retriever(config: RetrievalConfig) -> Retriever {
        Retriever::new(Arc::new(Prompts::default()), config)
    }

    fn seeded(embedder: &HashingEmbedder, docs: &[&str]) -> VectorStore {
        let mut store = VectorStore::new(embedder.dim());
        for doc in docs {
            store
                .add_embedding(VectorRecord {
                    orb_id: compute_id(doc, "neutral", "x"),
                    document: doc.to_string(),
                    vector: embedder.embed(doc).unwrap(),
                    metadata: Context::new(),
                })
                .unwrap();
        }
        store
    }

    #[test]
    fn identity_rewrite_keeps_query() {
        let r = retriever(RetrievalConfig::default());
        let q = r.rewrite_query(&IdentityLlm, "refund my shirt", "").unwrap();
        assert!(q.contains("refund my shirt"));
        assert!(!q.contains(headings::DIALOGUE_CONTEXT));
    }

    #[test]
    fn rewrite_prompt_has_query_and_context() {
        let r = retriever(RetrievalConfig::default());
        let llm = RecordingLlm::new(OfflineLlm);
        let a = r.rewrite_query(&llm, "where is my order", "order 313021098954, trip soon").unwrap();
        let b = r.rewrite_query(&llm, "where is my order", "order 313021098954, trip soon").unwrap();
        assert_eq!(a, b);
        let prompt = &llm.prompts()[0];
        assert!(prompt.contains("where is my order\nDialogue context:\norder 313021098954, trip soon"));
    }

    #[test]
    fn empty_store_gives_empty_hits() {
        let e = HashingEmbedder::new(64);
        let r = retriever(RetrievalConfig::default());
        let result = r
            .retrieve(&RetrievalRequest::new("anything"), &OfflineLlm, &e, &VectorStore::new(64))
            .unwrap();
        assert!(result.hits.is_empty());
        assert_eq!(result.k_requested, DEFAULT_TOP_K);
    }

    #[test]
    fn self_retrieval_under_identity_rewrite() {
        let e = HashingEmbedder::default();
        let r = retriever(RetrievalConfig::default());
        let q_prime = r.render_rewrite_prompt("cancel order 42", "").unwrap();
        let store = seeded(&e, &["unrelated text about shoes", &q_prime, "refund policy for e-cards"]);
        let result = r
            .retrieve(&RetrievalRequest::new("cancel order 42"), &IdentityLlm, &e, &store)
            .unwrap();
        assert_eq!(result.hits[0].document, q_prime);
        assert!((result.hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ablation_forces_k_one() {
        let e = HashingEmbedder::new(128);
        let store = seeded(&e, &["a b c", "a b d", "a b e"]);
        let r = retriever(RetrievalConfig {
            k_default: 5,
            cross_user: false,
        });
        let result = r
            .retrieve(&RetrievalRequest::new("a b c").with_k(3), &OfflineLlm, &e, &store)
            .unwrap();
        assert_eq!(result.hits.len(), 1);
        assert_eq!(result.k_requested, 1);
    }

    #[test]
    fn rejects_bad_requests() {
        let e = HashingEmbedder::new(8);
        let r = retriever(RetrievalConfig::default());
        let store = VectorStore::new(8);
        assert!(r.retrieve(&RetrievalRequest::new(""), &OfflineLlm, &e, &store).is_err());
        assert!(r.retrieve(&RetrievalRequest::new("x").with_k(0), &OfflineLlm, &e, &store).is_err());
    }

    fn hit(n: u32) -> Hit {
        Hit {
            orb_id: compute_id(&n.to_string(), "neutral", "x"),
            document: String::new(),
            metadata: Context::new(),
            score: 1.0 / f64::from(n + 1),
        }
    }

    #[test]
    fn augment_empty_is_identity() {
        let out = augment_prompt("BASE", &RetrievalResult::empty(5), &[]).unwrap();
        assert_eq!(out.text, "BASE");
        assert!(out.injected_orb_ids.is_empty());
    }

    #[test]
    fn augment_preserves_rank_order() {
        let result = RetrievalResult {
            hits: vec![hit(1), hit(2)],
            k_requested: 5,
        };
        let out = augment_prompt("BASE", &result, &["first plan".into(), "second plan".into()]).unwrap();
        let expected = format!(
            "{MEMORY_HEADER}\n- [{}] first plan\n- [{}] second plan\n\nBASE",
            hit(1).orb_id.short(),
            hit(2).orb_id.short()
        );
        assert_eq!(out.text, expected);
        assert_eq!(out.injected_orb_ids, vec![hit(1).orb_id, hit(2).orb_id]);
    }

    #[test]
    fn augment_alignment_mismatch() {
        let result = RetrievalResult {
            hits: vec![hit(1)],
            k_requested: 5,
        };
        assert!(matches!(
            augment_prompt("B", &result, &[]),
            Err(Error::AlignmentMismatch { hits: 1, texts: 0 })
        ));
    }
}

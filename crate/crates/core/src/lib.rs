//! Reflection memory for frozen LLM agents.
//!
//! Finished episodes are distilled into [`Orb`]s (a policy reflection plus
//! the observation, emotion and context it came from), stored in a metadata
//! store and a flat vector index, and served back through a
//! rewrite → embed → top-k pipeline that prepends the most relevant
//! reflections to the agent's prompt. [`evalkit`] runs the multi-trial
//! protocol and computes Pass^k.

pub mod distiller;
pub mod embed;
pub mod engine;
pub mod error;
pub mod evalkit;
pub mod llm;
pub mod orb;
pub mod prompts;
pub mod retriever;
pub mod store;
pub mod template;

pub use distiller::{validate_reflection, Distiller, ReflectionValidationReport};
pub use embed::{Embedder, EmbeddingVector, HashingEmbedder};
pub use engine::{Adapters, EngineConfig, IngestOutcome, MemoryEngine, RetrievedMemory, Stats};
pub use error::{Error, ErrorKind, Result};
pub use llm::LlmAdapter;
pub use orb::{compute_id, context_to_string, Context, ContextValue, EmotionLabel, Orb, OrbId, RewardDetail, Trajectory, Turn};
pub use retriever::{augment_prompt, AugmentedPrompt, RetrievalConfig, RetrievalRequest};
pub use store::{Hit, MetadataStore, RetrievalResult, VectorRecord, VectorStore};

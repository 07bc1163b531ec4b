//! The memory engine: one shared code path behind both the HTTP service and
//! the CLI.
//!
//! Both stores sit behind a single `RwLock`. Ingest does the slow work (model
//! call, embedding) without any lock, then takes the write lock once to save
//! the orb and its vector together, so readers see either both or neither.
//! Retrieval rewrites and embeds the query unlocked and only holds the read
//! lock for the top-k scan and the outcome lookup.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::distiller::{
    validate_reflection, Distiller, LexiconTagger, ReflectionValidationReport,
    DEFAULT_RECENT_WINDOW,
};
use crate::embed::{Embedder, HashingEmbedder, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::llm::{LlmAdapter, OfflineLlm};
use crate::orb::{format_timestamp, Context, ContextValue, Orb, OrbId, Trajectory};
use crate::prompts::Prompts;
use crate::retriever::{augment_prompt, AugmentedPrompt, RetrievalConfig, RetrievalRequest, Retriever};
use crate::store::{MetadataStore, RetrievalResult, VectorRecord, VectorStore, VECTOR_FILE};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub dim: usize,
    pub retrieval: RetrievalConfig,
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub recent_window: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            dim: DEFAULT_DIM,
            retrieval: RetrievalConfig::default(),
            data_dir: None,
            recent_window: DEFAULT_RECENT_WINDOW,
        }
    }
}

/// The model-facing pieces of an engine.
#[derive(Clone)]
pub struct Adapters {
    pub embedder: Arc<dyn Embedder>,
    /// Produces the retrieval-oriented query rewrite.
    pub rewriter: Arc<dyn LlmAdapter>,
    /// Writes policy reflections and recent-memory summaries.
    pub reflector: Arc<dyn LlmAdapter>,
    pub prompts: Arc<Prompts>,
}

impl Adapters {
    /// Hashing embedder and the deterministic offline model.
    pub fn offline(dim: usize) -> Self {
        Adapters {
            embedder: Arc::new(HashingEmbedder::new(dim)),
            rewriter: Arc::new(OfflineLlm),
            reflector: Arc::new(OfflineLlm),
            prompts: Arc::new(Prompts::default()),
        }
    }

    pub fn with_reflector(mut self, reflector: Arc<dyn LlmAdapter>) -> Self {
        self.reflector = reflector;
        self
    }

    pub fn with_rewriter(mut self, rewriter: Arc<dyn LlmAdapter>) -> Self {
        self.rewriter = rewriter;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub orb: Orb,
    pub created: bool,
    pub validation: ReflectionValidationReport,
}

/// Ranked hits plus, aligned with them, the reflection text of each orb.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievedMemory {
    pub result: RetrievalResult,
    pub outcomes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub orb_count: usize,
    pub vector_count: usize,
    pub dim: usize,
    pub k_default: usize,
    pub cross_user: bool,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct IntegrityReport {
    /// Vectors whose orb is missing from the metadata store.
    pub dangling_vectors: Vec<OrbId>,
    /// Orbs that have no vector.
    pub unindexed_orbs: Vec<OrbId>,
}

impl IntegrityReport {
    pub fn is_clean(&self) -> bool {
        self.dangling_vectors.is_empty() && self.unindexed_orbs.is_empty()
    }
}

struct Stores {
    meta: MetadataStore,
    vectors: VectorStore,
}

pub struct MemoryEngine {
    config: EngineConfig,
    adapters: Adapters,
    distiller: Distiller,
    retriever: Retriever,
    stores: RwLock<Stores>,
}

impl MemoryEngine {
    pub fn in_memory(config: EngineConfig, adapters: Adapters) -> Result<Self> {
        let config = EngineConfig {
            data_dir: None,
            ..config
        };
        Self::open(config, adapters)
    }

    /// Opens (or creates) the stores. On a data directory the orb log is
    /// replayed, `vectors.bin` is loaded if present, and any orb without a
    /// current vector is re-embedded so both stores agree.
    pub fn open(config: EngineConfig, adapters: Adapters) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::InvalidRequest("dim must be at least 1".into()));
        }
        if config.retrieval.k_default == 0 {
            return Err(Error::InvalidRequest("k must be at least 1".into()));
        }
        if adapters.embedder.dim() != config.dim {
            return Err(Error::DimMismatch {
                expected: config.dim,
                actual: adapters.embedder.dim(),
            });
        }

        let (meta, mut vectors) = match &config.data_dir {
            None => (MetadataStore::in_memory(), VectorStore::new(config.dim)),
            Some(dir) => {
                let meta = MetadataStore::open(dir)?;
                let path = dir.join(VECTOR_FILE);
                let vectors = if path.exists() {
                    let loaded = VectorStore::load(&path)?;
                    if loaded.dim() != config.dim {
                        return Err(Error::DimMismatch {
                            expected: config.dim,
                            actual: loaded.dim(),
                        });
                    }
                    loaded
                } else {
                    VectorStore::new(config.dim)
                };
                (meta, vectors)
            }
        };

        reconcile(&meta, &mut vectors, adapters.embedder.as_ref())?;

        let distiller = Distiller::new(adapters.prompts.clone(), Box::new(LexiconTagger::default()));
        let retriever = Retriever::new(adapters.prompts.clone(), config.retrieval);
        Ok(MemoryEngine {
            config,
            adapters,
            distiller,
            retriever,
            stores: RwLock::new(Stores { meta, vectors }),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn distiller(&self) -> &Distiller {
        &self.distiller
    }

    pub fn retriever(&self) -> &Retriever {
        &self.retriever
    }

    /// Distills a finished episode, then saves and indexes the orb.
    pub fn ingest(
        &self,
        trajectory: &Trajectory,
        memory_context: &str,
        now: Option<DateTime<Utc>>,
    ) -> Result<IngestOutcome> {
        let success = trajectory.final_reward()?.is_success();
        let now = now.unwrap_or_else(Utc::now);
        let orb = self.distiller.generate_orb(
            trajectory,
            self.adapters.reflector.as_ref(),
            memory_context,
            now,
        )?;
        let validation = validate_reflection(orb.outcome(), success);
        let record = vector_record(&orb, self.adapters.embedder.as_ref())?;

        let stored = {
            let mut stores = self.stores.write();
            let stored = stores.meta.save_orb(orb.clone())?;
            stores.vectors.add_embedding(record)?;
            stored
        };
        Ok(IngestOutcome {
            orb,
            created: stored.created(),
            validation,
        })
    }

    pub fn retrieve(&self, request: &RetrievalRequest) -> Result<RetrievedMemory> {
        request.validate()?;
        let k = self.retriever.config().effective_k(request);
        let rewritten = self.retriever.rewrite_query(
            self.adapters.rewriter.as_ref(),
            &request.query,
            &request.context,
        )?;
        let embedding = self.adapters.embedder.embed(&rewritten)?;

        let stores = self.stores.read();
        let result = stores.vectors.query_topk(&embedding, k)?;
        let outcomes = result
            .hits
            .iter()
            .map(|hit| match stores.meta.fetch_orb(&hit.orb_id) {
                Some(orb) => orb.outcome().to_owned(),
                None => hit.document.clone(),
            })
            .collect();
        Ok(RetrievedMemory { result, outcomes })
    }

    /// Retrieves for `request` and prepends the reflections to `base`.
    pub fn augment(&self, base: &str, request: &RetrievalRequest) -> Result<AugmentedPrompt> {
        let memory = self.retrieve(request)?;
        augment_prompt(base, &memory.result, &memory.outcomes)
    }

    pub fn fetch(&self, id: &OrbId) -> Option<Orb> {
        self.stores.read().meta.fetch_orb(id).cloned()
    }

    pub fn fetch_by_str(&self, id: &str) -> Result<Option<Orb>> {
        let id = OrbId::parse(id)?;
        Ok(self.fetch(&id))
    }

    /// The newest `m` orbs (by timestamp, then id).
    pub fn recent_orbs(&self, m: usize) -> Vec<Orb> {
        let stores = self.stores.read();
        let mut orbs: Vec<&Orb> = stores.meta.iter().collect();
        orbs.sort_by(|a, b| b.timestamp().cmp(&a.timestamp()).then_with(|| a.id().cmp(b.id())));
        orbs.into_iter().take(m).cloned().collect()
    }

    /// Condensed paragraph over the newest reflections, for the next turn.
    pub fn reflect_recent(&self, m: Option<usize>) -> Result<String> {
        let m = m.unwrap_or(self.config.recent_window);
        let recent = self.recent_orbs(m);
        self.distiller
            .reflect_over_recent(self.adapters.reflector.as_ref(), &recent, m)
    }

    pub fn stats(&self) -> Stats {
        let stores = self.stores.read();
        Stats {
            orb_count: stores.meta.len(),
            vector_count: stores.vectors.len(),
            dim: self.config.dim,
            k_default: self.config.retrieval.k_default,
            cross_user: self.config.retrieval.cross_user,
        }
    }

    pub fn integrity_check(&self) -> IntegrityReport {
        let stores = self.stores.read();
        check(&stores.meta, &stores.vectors)
    }

    /// Compacts the orb log into `orbs.snapshot.jsonl` and writes
    /// `vectors.bin`. Requires a data directory.
    pub fn snapshot(&self) -> Result<()> {
        let dir = self
            .config
            .data_dir
            .clone()
            .ok_or_else(|| Error::InvalidRequest("engine has no data directory".into()))?;
        let mut stores = self.stores.write();
        stores.meta.compact()?;
        stores.vectors.save(&dir.join(VECTOR_FILE))?;
        info!(dir = %dir.display(), orbs = stores.meta.len(), "snapshot written");
        Ok(())
    }

    /// Writes only the vector snapshot to an arbitrary path.
    pub fn save_vectors(&self, path: &Path) -> Result<()> {
        self.stores.read().vectors.save(path)
    }

    /// All orbs in id order.
    pub fn orbs(&self) -> Vec<Orb> {
        self.stores.read().meta.iter().cloned().collect()
    }
}

/// Metadata stored next to each vector.
pub fn vector_metadata(orb: &Orb) -> Context {
    let mut metadata = Context::new();
    metadata.insert("emotion".into(), ContextValue::Text(orb.emotion().to_string()));
    metadata.insert("timestamp".into(), ContextValue::Text(format_timestamp(&orb.timestamp())));
    if let Some(user) = orb.context().get("user_id") {
        metadata.insert("user_id".into(), user.clone());
    }
    metadata
}

pub fn vector_record(orb: &Orb, embedder: &dyn Embedder) -> Result<VectorRecord> {
    let document = orb.render_document();
    let vector = embedder.embed(&document)?;
    Ok(VectorRecord {
        orb_id: orb.id().clone(),
        document,
        vector,
        metadata: vector_metadata(orb),
    })
}

fn check(meta: &MetadataStore, vectors: &VectorStore) -> IntegrityReport {
    let mut dangling: Vec<OrbId> = vectors.ids().filter(|id| !meta.contains(id)).cloned().collect();
    dangling.sort();
    let unindexed = meta
        .iter()
        .filter(|orb| !vectors.contains(orb.id()))
        .map(|orb| orb.id().clone())
        .collect();
    IntegrityReport {
        dangling_vectors: dangling,
        unindexed_orbs: unindexed,
    }
}

fn reconcile(meta: &MetadataStore, vectors: &mut VectorStore, embedder: &dyn Embedder) -> Result<()> {
    let report = check(meta, vectors);
    for id in &report.dangling_vectors {
        warn!(orb_id = %id, "dropping vector without an orb");
        vectors.remove(id);
    }
    let mut reembedded = 0usize;
    for orb in meta.iter() {
        let record_current = vectors.get(orb.id()).is_some_and(|r| {
            r.document == orb.render_document() && r.metadata == vector_metadata(orb)
        });
        if !record_current {
            vectors.add_embedding(vector_record(orb, embedder)?)?;
            reembedded += 1;
        }
    }
    if reembedded > 0 {
        info!(count = reembedded, "indexed orbs missing from the vector snapshot");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FailingLlm, ScriptedLlm};
    use crate::orb::{RewardDetail, Turn};
    use chrono::TimeZone;

    fn engine() -> MemoryEngine {
        MemoryEngine::in_memory(
            EngineConfig {
                dim: 128,
                ..EngineConfig::default()
            },
            Adapters::offline(128),
        )
        .unwrap()
    }

    fn episode(utterance: &str, reward: f64) -> Trajectory {
        Trajectory {
            turns: vec![Turn::new(utterance, "done")
                .with_reward(RewardDetail::new(reward, reward, 1.0, 1.0).unwrap())],
            scenario: format!("scenario for {utterance}"),
            user_id: "u1".into(),
            shop_id: "s1".into(),
            platform: "jd".into(),
        }
    }

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 4, 1, 8, 30, 0).unwrap()
    }

    #[test]
    fn ingest_then_fetch_and_retrieve() {
        let e = engine();
        let out = e.ingest(&episode("cancel my order", 0.0), "", Some(now())).unwrap();
        assert!(out.created);
        assert!(out.validation.is_valid(), "{:?}", out.validation);
        assert_eq!(e.fetch(out.orb.id()), Some(out.orb.clone()));
        let memory = e.retrieve(&RetrievalRequest::new("cancel my order")).unwrap();
        assert_eq!(memory.result.hits[0].orb_id, *out.orb.id());
        assert_eq!(memory.outcomes[0], out.orb.outcome());
    }

    #[test]
    fn reingest_is_idempotent() {
        let e = engine();
        let t = episode("cancel my order", 0.0);
        let a = e.ingest(&t, "", Some(now())).unwrap();
        let b = e.ingest(&t, "", Some(now())).unwrap();
        assert!(a.created && !b.created);
        assert_eq!(a.orb, b.orb);
        let stats = e.stats();
        assert_eq!((stats.orb_count, stats.vector_count), (1, 1));
    }

    #[test]
    fn incomplete_and_adapter_errors() {
        let e = engine();
        let mut t = episode("x", 1.0);
        t.turns[0].reward = None;
        assert!(matches!(e.ingest(&t, "", None), Err(Error::IncompleteTrajectory)));

        let failing = MemoryEngine::in_memory(
            EngineConfig { dim: 16, ..EngineConfig::default() },
            Adapters::offline(16).with_reflector(Arc::new(FailingLlm)),
        )
        .unwrap();
        assert!(matches!(failing.ingest(&episode("x", 1.0), "", None), Err(Error::Adapter(_))));
        assert_eq!(failing.stats().orb_count, 0);
    }

    #[test]
    fn invalid_reflections_are_stored_and_flagged() {
        let e = MemoryEngine::in_memory(
            EngineConfig { dim: 16, ..EngineConfig::default() },
            Adapters::offline(16).with_reflector(Arc::new(ScriptedLlm::fixed("whatever"))),
        )
        .unwrap();
        let out = e.ingest(&episode("x", 1.0), "", None).unwrap();
        assert!(!out.validation.is_valid());
        assert!(e.fetch(out.orb.id()).is_some());
    }

    #[test]
    fn augment_prepends_outcomes() {
        let e = engine();
        let out = e.ingest(&episode("cancel my order", 0.0), "", Some(now())).unwrap();
        let prompt = e.augment("BASE", &RetrievalRequest::new("cancel my order").with_k(1)).unwrap();
        assert!(prompt.text.ends_with("\n\nBASE"));
        assert!(prompt.text.contains(out.orb.outcome()));
        assert_eq!(prompt.injected_orb_ids, vec![out.orb.id().clone()]);
    }

    #[test]
    fn recent_reflection_summarizes_newest() {
        let e = engine();
        assert_eq!(e.reflect_recent(None).unwrap(), "");
        e.ingest(&episode("first", 0.0), "", Some(now())).unwrap();
        let summary = e.reflect_recent(Some(2)).unwrap();
        assert!(summary.starts_with("Recent lessons:"), "{summary}");
    }

    #[test]
    fn reopen_rebuilds_missing_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let config = EngineConfig {
            dim: 32,
            data_dir: Some(dir.path().to_owned()),
            ..EngineConfig::default()
        };
        let id = {
            let e = MemoryEngine::open(config.clone(), Adapters::offline(32)).unwrap();
            e.ingest(&episode("where is my parcel", 1.0), "", Some(now())).unwrap().orb.id().clone()
        };
        // No snapshot was taken, so vectors come back from the orb log.
        let e = MemoryEngine::open(config, Adapters::offline(32)).unwrap();
        assert_eq!(e.stats().vector_count, 1);
        assert!(e.integrity_check().is_clean());
        let memory = e.retrieve(&RetrievalRequest::new("where is my parcel")).unwrap();
        assert_eq!(memory.result.hits[0].orb_id, id);
    }

    #[test]
    fn snapshot_requires_data_dir() {
        assert!(engine().snapshot().is_err());
    }

    #[test]
    fn config_validation() {
        let bad_dim = MemoryEngine::in_memory(EngineConfig { dim: 64, ..EngineConfig::default() }, Adapters::offline(32));
        assert!(matches!(bad_dim, Err(Error::DimMismatch { .. })));
    }
}

//! Request and response bodies.

use chrono::{DateTime, Utc};
use memorb_core::distiller::ReflectionValidationReport;
use memorb_core::engine::RetrievedMemory;
use memorb_core::{Context, OrbId, RetrievalRequest, Trajectory};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeIngestRequest {
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_context: Option<String>,
    /// Ingest time; the server clock when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub now: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeIngestResponse {
    pub orb_id: OrbId,
    pub created: bool,
    pub validation: ReflectionValidationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveRequest {
    pub query: String,
    #[serde(default)]
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
}

impl From<RetrieveRequest> for RetrievalRequest {
    fn from(r: RetrieveRequest) -> Self {
        RetrievalRequest {
            query: r.query,
            context: r.context,
            k: r.k,
            requesting_user: r.user_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitView {
    pub orb_id: OrbId,
    pub document: String,
    pub outcome: String,
    pub metadata: Context,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub hits: Vec<HitView>,
    pub k_requested: usize,
}

impl From<RetrievedMemory> for RetrieveResponse {
    fn from(memory: RetrievedMemory) -> Self {
        let hits = memory
            .result
            .hits
            .into_iter()
            .zip(memory.outcomes)
            .map(|(hit, outcome)| HitView {
                orb_id: hit.orb_id,
                document: hit.document,
                outcome,
                metadata: hit.metadata,
                score: hit.score,
            })
            .collect();
        RetrieveResponse {
            hits,
            k_requested: memory.result.k_requested,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
}

//! Persistence for orbs (metadata store) and their embeddings (vector store).

mod meta;
mod vector;

pub use meta::{MetadataStore, Stored, LOG_FILE, SNAPSHOT_FILE};
pub use vector::{Hit, RetrievalResult, VectorRecord, VectorStore, VECTOR_FILE};

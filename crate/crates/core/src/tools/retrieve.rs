//! Text-to-frame retrieval over the visual memory.

use std::sync::Arc;

use super::ToolError;
use crate::frames::{FrameRef, FrameStore};
use crate::knowledge::{Embedder, VectorIndex};

/// Embeds text queries and frames into a shared space.
pub trait FrameEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_query(&self, text: &str) -> Result<Vec<f64>, ToolError>;
    fn embed_frame(&self, store: &FrameStore, frame: &FrameRef) -> Result<Vec<f64>, ToolError>;
}

/// Represents a frame by the text embedding of its caption (the reasoning
/// recorded for it), falling back to the frame ref when uncaptioned.
pub struct CaptionEmbedder {
    text: Arc<dyn Embedder>,
}

impl CaptionEmbedder {
    pub fn new(text: Arc<dyn Embedder>) -> Self {
        Self { text }
    }
}

impl FrameEmbedder for CaptionEmbedder {
    fn dim(&self) -> usize {
        self.text.dim()
    }

    fn embed_query(&self, text: &str) -> Result<Vec<f64>, ToolError> {
        self.text
            .embed(text)
            .map_err(|e| ToolError::Failed(e.to_string()))
    }

    fn embed_frame(&self, store: &FrameStore, frame: &FrameRef) -> Result<Vec<f64>, ToolError> {
        let caption = store.caption(frame).unwrap_or_else(|| frame.to_string());
        self.embed_query(&caption)
    }
}

/// The `top_s` memory frames most similar to `query`, best first, with their
/// cosine similarity. Ties keep memory order.
pub fn image_retrieve(
    query: &str,
    memory: &[FrameRef],
    top_s: usize,
    store: &FrameStore,
    embedder: &dyn FrameEmbedder,
) -> Result<Vec<(FrameRef, f64)>, ToolError> {
    if memory.is_empty() {
        return Err(ToolError::EmptyMemory);
    }
    let mut index = VectorIndex::new(embedder.dim());
    for (i, frame) in memory.iter().enumerate() {
        index
            .insert(i as u64, embedder.embed_frame(store, frame)?)
            .map_err(|e| ToolError::Failed(e.to_string()))?;
    }
    let q = embedder.embed_query(query)?;
    let hits = index
        .top_k(&q, top_s.max(1))
        .map_err(|e| ToolError::Failed(e.to_string()))?;
    Ok(hits
        .into_iter()
        .map(|h| (memory[h.position].clone(), h.similarity))
        .collect())
}

//! Sentence-level retrieval and montage assembly over word-timestamped
//! television transcripts.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`ingest`] turns ASR transcripts into timestamped sentences.
//! 2. [`embed`] maps sentence texts to unit vectors.
//! 3. [`index`] stores those vectors and answers exact top-k queries.
//! 4. [`llm`] handles the generative steps (themes, queries, scoring, ordering).
//! 5. [`narrative`] turns scored sentences into an ordered four-section plan.
//! 6. [`montage`] turns the ordered plan into an edit decision list and renders it.
//!
//! [`pipeline`] wires stages 2 to 6 together into a single `compose` run.

pub mod embed;
pub mod fsutil;
mod http;
pub mod index;
pub mod ingest;
pub mod llm;
pub mod montage;
pub mod narrative;
pub mod pipeline;

pub use embed::{
    deterministic_embed, embed_batch, normalize, DeterministicEmbedder, Embedder, EmbedderSpec,
    EmbeddingVector, InputType, RemoteEmbedder,
};
pub use index::{cosine, RetrievalHit, VectorRecord, VectorStore};
pub use ingest::{parse_transcript, segment_sentences, Sentence, TranscriptDocument, WordToken};
pub use llm::{
    LlmOp, LlmProvider, QueryPhrase, RecordingProvider, ScoredSentence, ScriptedProvider,
    ThemeIdea, Warning,
};
pub use montage::{
    build_edl, render, validate_edl, Clip, EditDecisionList, EdlConfig, RendererConfig,
};
pub use narrative::{NarrativePlan, PipelineConfig, Section};
pub use pipeline::{compose_episode, ComposeRequest, Episode};

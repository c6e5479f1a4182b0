//! The `compose` run from episode title to EDL, and the workspace files it
//! leaves behind.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::embed::{embed_batch, EmbedError, Embedder, InputType};
use crate::fsutil::write_atomic;
use crate::index::{IndexError, VectorRecord, VectorStore};
use crate::ingest::{Sentence, VideoCatalog};
use crate::llm::{
    self, EpisodeContext, LlmError, LlmProvider, LlmSettings, QueryPhrase, ScoreInput,
    ScoredSentence, ThemeIdea, Warning,
};
use crate::montage::{
    build_edl, validate_edl, EditDecisionList, EdlConfig, MontageError, StoreLookup,
};
use crate::narrative::{
    filter_retained, order_sections, retrieve_candidates, segment_narrative, Candidate,
    LlmOrdering, NarrativeError, NarrativePlan, OrderingStrategy, PipelineConfig, Section,
};

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Narrative(#[from] NarrativeError),
    #[error(transparent)]
    Montage(#[from] MontageError),
    #[error("assembled EDL is invalid: {0}")]
    InvalidEdl(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Embeds sentences as documents, `chunk` texts at a time, into a new store.
pub fn build_store(
    sentences: &[Sentence],
    embedder: &dyn Embedder,
    chunk: usize,
) -> Result<VectorStore, BuildError> {
    let mut store: Option<VectorStore> = None;
    for part in sentences.chunks(chunk.max(1)) {
        let texts: Vec<String> = part.iter().map(|s| s.text.clone()).collect();
        let vectors = embed_batch(&texts, embedder, InputType::SearchDocument)?;
        let Some(dim) = vectors.first().map(|v| v.dim()) else {
            continue;
        };
        let store = match &mut store {
            Some(s) => s,
            None => store.insert(VectorStore::new(dim)?),
        };
        let records = part
            .iter()
            .zip(vectors)
            .map(|(s, vector)| VectorRecord {
                sentence_id: s.sentence_id.clone(),
                vector,
                video_id: s.video_id.clone(),
                text: s.text.clone(),
                start_s: s.start_s,
                end_s: s.end_s,
            })
            .collect();
        store.insert_batch(records)?;
        log::info!("indexed {} sentences", store.len());
    }
    store.ok_or(BuildError::EmptyCorpus)
}

pub struct ComposeRequest<'a> {
    pub title: &'a str,
    pub store: &'a VectorStore,
    pub catalog: &'a VideoCatalog,
    pub embedder: &'a dyn Embedder,
    pub provider: &'a dyn LlmProvider,
    pub pipeline: &'a PipelineConfig,
    pub llm: &'a LlmSettings,
    pub edl: &'a EdlConfig,
    pub intro: Option<&'a str>,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub themes: Vec<ThemeIdea>,
    pub queries: Vec<QueryPhrase>,
    pub candidates: Vec<Candidate>,
    pub scores: Vec<ScoredSentence>,
    pub retained: usize,
    pub plan: NarrativePlan,
    pub edl: EditDecisionList,
    pub warnings: Vec<Warning>,
}

fn section_counts(plan: &NarrativePlan) -> String {
    Section::ALL
        .iter()
        .map(|&s| format!("{}={}", s, plan.sections.get(s).len()))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn compose_episode(req: &ComposeRequest<'_>) -> Result<Episode, ComposeError> {
    req.pipeline.validate()?;
    let mut warnings = Vec::new();

    let themes = llm::generate_themes(req.title, req.pipeline.themes, req.provider, req.llm)?;
    warnings.extend(themes.warnings);
    let themes = themes.items;
    log::info!("{} themes", themes.len());

    let queries = llm::generate_queries(
        req.title,
        &themes,
        req.pipeline.phrases_per_theme,
        req.provider,
        req.llm,
    )?;
    warnings.extend(queries.warnings);
    let queries = queries.items;
    log::info!("{} queries", queries.len());

    let candidates = retrieve_candidates(&queries, req.store, req.embedder, req.pipeline)?;
    log::info!("{} candidates", candidates.len());

    let context = EpisodeContext {
        title: req.title.to_string(),
        themes: themes.iter().map(|t| t.description.clone()).collect(),
    };
    let inputs: Vec<ScoreInput> = candidates
        .iter()
        .map(|c| ScoreInput {
            sentence_id: c.sentence_id.clone(),
            text: c.text.clone(),
            source_query_index: c.source_query_index,
        })
        .collect();
    let scored = llm::score_batch(&inputs, &context, req.provider, req.llm)?;
    warnings.extend(scored.warnings);
    let scores = scored.items;

    let retained = filter_retained(
        &scores,
        req.pipeline.irony_threshold,
        req.pipeline.relevance_threshold,
    );
    log::info!("{} of {} sentences retained", retained.len(), scores.len());
    let segmented = segment_narrative(req.title, &retained, req.pipeline)?;

    let by_id: HashMap<String, ScoredSentence> = retained
        .iter()
        .map(|s| (s.sentence_id.clone(), s.clone()))
        .collect();
    let texts: HashMap<String, String> = candidates
        .iter()
        .map(|c| (c.sentence_id.clone(), c.text.clone()))
        .collect();
    let wants_llm = Section::ALL
        .iter()
        .any(|&s| req.pipeline.ordering.get(s) == OrderingStrategy::Llm);
    let ordering = wants_llm.then_some(LlmOrdering {
        provider: req.provider,
        texts: &texts,
        context: &context,
        settings: req.llm,
    });
    let ordered = order_sections(
        &segmented,
        &by_id,
        &req.pipeline.ordering,
        ordering.as_ref(),
    )?;
    warnings.extend(ordered.warnings);
    let plan = ordered.plan;
    log::info!("plan: {}", section_counts(&plan));

    let lookup = StoreLookup {
        store: req.store,
        catalog: req.catalog,
    };
    let edl = build_edl(&plan, &lookup, req.edl, req.intro)?;
    if let Err(violations) = validate_edl(&edl, Some(&plan)) {
        let msg = violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        return Err(ComposeError::InvalidEdl(msg));
    }

    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Episode {
        themes,
        queries,
        candidates,
        scores,
        retained: retained.len(),
        plan,
        edl,
        warnings,
    })
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("artifact serializes") + "\n")
        .collect()
}

impl Episode {
    /// Deterministic run summary: counts and warnings, no timestamps.
    pub fn log_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "title: {}", self.plan.episode_title);
        let _ = writeln!(s, "themes: {}", self.themes.len());
        let _ = writeln!(s, "queries: {}", self.queries.len());
        let _ = writeln!(s, "candidates: {}", self.candidates.len());
        let _ = writeln!(s, "scored: {}", self.scores.len());
        let _ = writeln!(s, "retained: {}", self.retained);
        let _ = writeln!(s, "sections: {}", section_counts(&self.plan));
        let _ = writeln!(s, "clips: {}", self.edl.clips().count());
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }

    /// Writes every artifact into `dir` (created if missing). Each file is
    /// replaced atomically.
    pub fn write_workspace(&self, dir: &Path) -> Result<(), ComposeError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| ComposeError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let scores: HashMap<String, ScoredSentence> = self
            .scores
            .iter()
            .map(|s| (s.sentence_id.clone(), s.clone()))
            .collect();
        let files = [
            ("themes.jsonl", jsonl(&self.themes)),
            ("queries.jsonl", jsonl(&self.queries)),
            ("candidates.jsonl", jsonl(&self.candidates)),
            ("scores.jsonl", jsonl(&self.scores)),
            ("plan.json", self.plan.to_file_json(&scores)?),
            ("edl.json", self.edl.to_json()),
            ("compose.log", self.log_text()),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            write_atomic(&path, body.as_bytes()).map_err(io(&path))?;
        }
        Ok(())
    }
}

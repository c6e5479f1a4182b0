//! Generative steps of an episode: theme ideation, query phrasing, dual
//! irony/relevance scoring and optional section ordering.
//!
//! Every step goes through [`LlmProvider`] and validates the structured
//! response. Shortfalls and fallbacks are reported as [`Warning`]s instead of
//! aborting the episode; only repeated provider failure is an error.

mod prompts;
mod provider;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use prompts::{system_prompt, PROMPT_VERSION};
pub use provider::{
    LlmOp, LlmProvider, LlmRequest, ProviderError, RecordingProvider, RemoteLlm, ReplayEntry,
    ScriptError, ScriptedProvider, LLM_API_KEY_VAR,
};

use crate::embed::RetryPolicy;
use crate::narrative::{self, Section};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeIdea {
    pub index: usize,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPhrase {
    pub theme_index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub sentence_id: String,
    pub irony: u8,
    pub relevance: u8,
    #[serde(default)]
    pub rationale: String,
    pub source_query_index: usize,
}

/// A sentence to be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreInput {
    pub sentence_id: String,
    pub text: String,
    pub source_query_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    ThemeShortfall {
        requested: usize,
        obtained: usize,
    },
    QueryShortfall {
        theme_index: usize,
        requested: usize,
        obtained: usize,
    },
    DuplicateQuery {
        theme_index: usize,
        text: String,
    },
    InvalidQuery {
        reason: String,
    },
    UnexpectedScore {
        sentence_id: String,
    },
    MissingScore {
        sentence_id: String,
    },
    OrderFallback {
        section: Section,
    },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::ThemeShortfall {
                requested,
                obtained,
            } => {
                write!(f, "theme shortfall: asked for {requested}, got {obtained}")
            }
            Warning::QueryShortfall {
                theme_index,
                requested,
                obtained,
            } => write!(
                f,
                "query shortfall for theme {theme_index}: asked for {requested}, got {obtained}"
            ),
            Warning::DuplicateQuery { theme_index, text } => {
                write!(
                    f,
                    "dropped duplicate query `{text}` for theme {theme_index}"
                )
            }
            Warning::InvalidQuery { reason } => write!(f, "dropped query: {reason}"),
            Warning::UnexpectedScore { sentence_id } => {
                write!(f, "ignored score for unknown sentence {sentence_id}")
            }
            Warning::MissingScore { sentence_id } => {
                write!(
                    f,
                    "no score returned for {sentence_id}; assigned irony=1 relevance=1"
                )
            }
            Warning::OrderFallback { section } => {
                write!(
                    f,
                    "ordering for {section} fell back to the deterministic rule"
                )
            }
        }
    }
}

/// Items plus any non-fatal warnings raised while producing them.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated<T> {
    pub items: Vec<T>,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("episode title is empty")]
    EmptyTitle,
    #[error("no themes to expand into queries")]
    NoThemes,
    #[error("nothing to score")]
    NothingToScore,
    #[error("requested count must be positive")]
    ZeroCount,
    #[error("`{}` request failed after {attempts} attempts: {message}", .op.as_str())]
    Failed {
        op: LlmOp,
        attempts: usize,
        message: String,
    },
    #[error("scoring sentences {start}..{end} failed after {attempts} attempts: {message}")]
    ScoreBatch {
        start: usize,
        end: usize,
        attempts: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmSettings {
    /// Delays before each retry; `retry.delays.len()` is the retry count.
    pub retry: RetryPolicy,
    pub score_batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            retry: RetryPolicy::default(),
            score_batch_size: 20,
            max_in_flight: 4,
        }
    }
}

impl LlmSettings {
    fn attempts(&self) -> usize {
        self.retry.delays.len() + 1
    }

    fn pause(&self, attempt: usize) {
        if attempt > 0 {
            thread::sleep(self.retry.delays[attempt - 1]);
        }
    }
}

/// Title and themes, included in every scoring and ordering request.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeContext {
    pub title: String,
    pub themes: Vec<String>,
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

fn ask<T: serde::de::DeserializeOwned>(
    provider: &dyn LlmProvider,
    op: LlmOp,
    payload: Value,
) -> Result<T, ProviderError> {
    let value = provider.complete(&LlmRequest { op, payload })?;
    serde_json::from_value(value).map_err(|e| ProviderError::Malformed(e.to_string()))
}

#[derive(Deserialize)]
struct ThemesResponse {
    themes: Vec<String>,
}

/// Asks for `count` distinct themes, re-asking while short.
pub fn generate_themes(
    title: &str,
    count: usize,
    provider: &dyn LlmProvider,
    settings: &LlmSettings,
) -> Result<Generated<ThemeIdea>, LlmError> {
    if title.trim().is_empty() {
        return Err(LlmError::EmptyTitle);
    }
    if count == 0 {
        return Err(LlmError::ZeroCount);
    }
    let mut got: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    let mut answered = false;
    let mut last_error = String::new();

    for attempt in 0..settings.attempts() {
        settings.pause(attempt);
        let payload = json!({
            "prompt_version": PROMPT_VERSION,
            "title": title,
            "count": count,
            "existing": got,
        });
        match ask::<ThemesResponse>(provider, LlmOp::Themes, payload) {
            Ok(resp) => {
                answered = true;
                for d in resp.themes {
                    let d = d.trim().to_string();
                    if !d.is_empty() && got.len() < count && seen.insert(fold(&d)) {
                        got.push(d);
                    }
                }
                if got.len() == count {
                    break;
                }
            }
            Err(e) => last_error = e.to_string(),
        }
    }

    if !answered {
        return Err(LlmError::Failed {
            op: LlmOp::Themes,
            attempts: settings.attempts(),
            message: last_error,
        });
    }
    let mut warnings = Vec::new();
    if got.len() < count {
        warnings.push(Warning::ThemeShortfall {
            requested: count,
            obtained: got.len(),
        });
    }
    Ok(Generated {
        items: got
            .into_iter()
            .enumerate()
            .map(|(index, description)| ThemeIdea { index, description })
            .collect(),
        warnings,
    })
}

#[derive(Deserialize)]
struct QueriesResponse {
    queries: Vec<RawQuery>,
}

#[derive(Deserialize)]
struct RawQuery {
    theme_index: i64,
    text: String,
}

/// Asks for `per_theme` search phrases per theme. Phrases are unique across
/// the episode (case-folded) and come out grouped in theme order.
pub fn generate_queries(
    title: &str,
    themes: &[ThemeIdea],
    per_theme: usize,
    provider: &dyn LlmProvider,
    settings: &LlmSettings,
) -> Result<Generated<QueryPhrase>, LlmError> {
    if themes.is_empty() {
        return Err(LlmError::NoThemes);
    }
    if per_theme == 0 {
        return Err(LlmError::ZeroCount);
    }
    let mut per: Vec<Vec<String>> = vec![Vec::new(); themes.len()];
    let mut seen = HashSet::new();
    let mut warnings = Vec::new();
    let mut answered = false;
    let mut last_error = String::new();

    for attempt in 0..settings.attempts() {
        let requested: Vec<Value> = per
            .iter()
            .enumerate()
            .filter(|(_, qs)| qs.len() < per_theme)
            .map(|(i, qs)| json!({"theme_index": i, "count": per_theme - qs.len()}))
            .collect();
        if requested.is_empty() {
            break;
        }
        settings.pause(attempt);
        let payload = json!({
            "prompt_version": PROMPT_VERSION,
            "title": title,
            "themes": themes.iter().map(|t| json!({"index": t.index, "description": t.description})).collect::<Vec<_>>(),
            "per_theme": per_theme,
            "requested": requested,
            "existing": per.concat(),
        });
        match ask::<QueriesResponse>(provider, LlmOp::Queries, payload) {
            Ok(resp) => {
                answered = true;
                for q in resp.queries {
                    let text = q.text.trim().to_string();
                    let idx = match usize::try_from(q.theme_index) {
                        Ok(i) if i < themes.len() => i,
                        _ => {
                            warnings.push(Warning::InvalidQuery {
                                reason: format!("theme index {} out of range", q.theme_index),
                            });
                            continue;
                        }
                    };
                    if text.is_empty() {
                        warnings.push(Warning::InvalidQuery {
                            reason: format!("empty text for theme {idx}"),
                        });
                        continue;
                    }
                    if per[idx].len() >= per_theme {
                        continue;
                    }
                    if !seen.insert(fold(&text)) {
                        warnings.push(Warning::DuplicateQuery {
                            theme_index: idx,
                            text,
                        });
                        continue;
                    }
                    per[idx].push(text);
                }
            }
            Err(e) => last_error = e.to_string(),
        }
    }

    if !answered {
        return Err(LlmError::Failed {
            op: LlmOp::Queries,
            attempts: settings.attempts(),
            message: last_error,
        });
    }
    for (i, qs) in per.iter().enumerate() {
        if qs.len() < per_theme {
            warnings.push(Warning::QueryShortfall {
                theme_index: i,
                requested: per_theme,
                obtained: qs.len(),
            });
        }
    }
    Ok(Generated {
        items: per
            .into_iter()
            .enumerate()
            .flat_map(|(theme_index, qs)| {
                qs.into_iter()
                    .map(move |text| QueryPhrase { theme_index, text })
            })
            .collect(),
        warnings,
    })
}

#[derive(Deserialize)]
struct ScoresResponse {
    scores: Vec<RawScore>,
}

#[derive(Deserialize)]
struct RawScore {
    id: String,
    irony: f64,
    relevance: f64,
    #[serde(default)]
    rationale: String,
}

/// Rounds half away from zero, then clamps into 1..=10.
pub fn clamp_score(x: f64) -> u8 {
    x.round().clamp(1.0, 10.0) as u8
}

fn score_payload(batch: &[ScoreInput], ctx: &EpisodeContext) -> Value {
    json!({
        "prompt_version": PROMPT_VERSION,
        "episode_title": ctx.title,
        "themes": ctx.themes,
        "sentences": batch.iter().map(|s| json!({"id": s.sentence_id, "text": s.text})).collect::<Vec<_>>(),
    })
}

fn absorb(
    scores: Vec<RawScore>,
    wanted: &HashSet<&str>,
    found: &mut HashMap<String, RawScore>,
    warnings: &mut Vec<Warning>,
) {
    for s in scores {
        if !wanted.contains(s.id.as_str()) {
            warnings.push(Warning::UnexpectedScore { sentence_id: s.id });
        } else {
            found.entry(s.id.clone()).or_insert(s);
        }
    }
}

fn score_one_batch(
    start: usize,
    batch: &[ScoreInput],
    ctx: &EpisodeContext,
    provider: &dyn LlmProvider,
    settings: &LlmSettings,
) -> Result<(Vec<ScoredSentence>, Vec<Warning>), LlmError> {
    let mut response = None;
    let mut last_error = String::new();
    for attempt in 0..settings.attempts() {
        settings.pause(attempt);
        match ask::<ScoresResponse>(provider, LlmOp::Score, score_payload(batch, ctx)) {
            Ok(r) => {
                response = Some(r);
                break;
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    let response = response.ok_or_else(|| LlmError::ScoreBatch {
        start,
        end: start + batch.len(),
        attempts: settings.attempts(),
        message: last_error,
    })?;

    let wanted: HashSet<&str> = batch.iter().map(|s| s.sentence_id.as_str()).collect();
    let mut warnings = Vec::new();
    let mut found: HashMap<String, RawScore> = HashMap::new();
    absorb(response.scores, &wanted, &mut found, &mut warnings);

    let missing: Vec<ScoreInput> = batch
        .iter()
        .filter(|s| !found.contains_key(&s.sentence_id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        match ask::<ScoresResponse>(provider, LlmOp::Score, score_payload(&missing, ctx)) {
            Ok(r) => absorb(r.scores, &wanted, &mut found, &mut warnings),
            Err(e) => log::warn!("re-ask for {} missing scores failed: {e}", missing.len()),
        }
    }

    let scored = batch
        .iter()
        .map(|s| match found.get(&s.sentence_id) {
            Some(r) => ScoredSentence {
                sentence_id: s.sentence_id.clone(),
                irony: clamp_score(r.irony),
                relevance: clamp_score(r.relevance),
                rationale: r.rationale.clone(),
                source_query_index: s.source_query_index,
            },
            None => {
                warnings.push(Warning::MissingScore {
                    sentence_id: s.sentence_id.clone(),
                });
                ScoredSentence {
                    sentence_id: s.sentence_id.clone(),
                    irony: 1,
                    relevance: 1,
                    rationale: String::new(),
                    source_query_index: s.source_query_index,
                }
            }
        })
        .collect();
    Ok((scored, warnings))
}

/// Scores every input exactly once, in input order.
///
/// Batches run concurrently up to `settings.max_in_flight` unless the
/// provider is sequential. Output order never depends on completion order.
pub fn score_batch(
    sentences: &[ScoreInput],
    ctx: &EpisodeContext,
    provider: &dyn LlmProvider,
    settings: &LlmSettings,
) -> Result<Generated<ScoredSentence>, LlmError> {
    if sentences.is_empty() {
        return Err(LlmError::NothingToScore);
    }
    let size = settings.score_batch_size.max(1);
    let batches: Vec<(usize, &[ScoreInput])> = sentences
        .chunks(size)
        .enumerate()
        .map(|(i, c)| (i * size, c))
        .collect();
    let lanes = if provider.sequential() {
        1
    } else {
        settings.max_in_flight.max(1)
    };

    let mut results = Vec::with_capacity(batches.len());
    for wave in batches.chunks(lanes) {
        if wave.len() == 1 {
            let (start, batch) = wave[0];
            results.push(score_one_batch(start, batch, ctx, provider, settings));
            continue;
        }
        let done: Vec<_> = thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&(start, batch)| {
                    scope.spawn(move || score_one_batch(start, batch, ctx, provider, settings))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scoring worker panicked"))
                .collect()
        });
        results.extend(done);
    }

    let mut items = Vec::with_capacity(sentences.len());
    let mut warnings = Vec::new();
    for r in results {
        let (s, w) = r?;
        items.extend(s);
        warnings.extend(w);
    }
    Ok(Generated { items, warnings })
}

#[derive(Deserialize)]
struct OrderResponse {
    order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionOrder {
    pub order: Vec<String>,
    pub fell_back: bool,
}

fn is_permutation(order: &[String], members: &[ScoredSentence]) -> bool {
    if order.len() != members.len() {
        return false;
    }
    let expected: HashSet<&str> = members.iter().map(|m| m.sentence_id.as_str()).collect();
    let mut seen = HashSet::new();
    order
        .iter()
        .all(|id| expected.contains(id.as_str()) && seen.insert(id.as_str()))
}

/// Asks the provider to sequence one section. Any invalid answer, after
/// retries, falls back to the deterministic rule for that section.
pub fn order_section_llm(
    section: Section,
    members: &[ScoredSentence],
    texts: &HashMap<String, String>,
    ctx: &EpisodeContext,
    provider: &dyn LlmProvider,
    settings: &LlmSettings,
) -> SectionOrder {
    if members.len() <= 1 {
        return SectionOrder {
            order: members.iter().map(|m| m.sentence_id.clone()).collect(),
            fell_back: false,
        };
    }
    let payload = json!({
        "prompt_version": PROMPT_VERSION,
        "episode_title": ctx.title,
        "themes": ctx.themes,
        "section": section.name(),
        "purpose": section.purpose(),
        "sentences": members.iter().map(|m| json!({
            "id": m.sentence_id,
            "text": texts.get(&m.sentence_id).map(String::as_str).unwrap_or(""),
            "irony": m.irony,
            "relevance": m.relevance,
        })).collect::<Vec<_>>(),
    });
    for attempt in 0..settings.attempts() {
        settings.pause(attempt);
        match ask::<OrderResponse>(provider, LlmOp::Order, payload.clone()) {
            Ok(r) if is_permutation(&r.order, members) => {
                return SectionOrder {
                    order: r.order,
                    fell_back: false,
                }
            }
            Ok(_) => log::warn!("order response for {section} is not a permutation"),
            Err(e) => log::warn!("order request for {section} failed: {e}"),
        }
    }
    SectionOrder {
        order: narrative::order_section_deterministic(section, members),
        fell_back: true,
    }
}

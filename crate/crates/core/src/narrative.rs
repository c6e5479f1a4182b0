//! Deterministic narrative construction: cross-query retrieval, threshold
//! filtering, four-section segmentation and per-section ordering.

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::embed::{embed_batch, EmbedError, Embedder, EmbeddingVector, InputType};
use crate::index::{IndexError, VectorStore};
use crate::llm::{
    self, EpisodeContext, LlmProvider, LlmSettings, QueryPhrase, ScoredSentence, Warning,
};

pub const PLAN_FORMAT: &str = "aiblob-plan";
pub const PLAN_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum NarrativeError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("only {retained} sentences passed the thresholds (need {required}); try lowering irony_threshold or relevance_threshold")]
    TooFewRetained { retained: usize, required: usize },
    #[error("no queries to retrieve with")]
    NoQueries,
    #[error("percentile of an empty list")]
    EmptyPercentile,
    #[error("percentile {0} outside (0, 100]")]
    BadPercentile(f64),
    #[error("quotas claim {claimed} of {total} sentences, leaving none for the build-up")]
    QuotaOverflow { claimed: usize, total: usize },
    #[error("plan references unscored sentence {0}")]
    Unscored(String),
    #[error("bad plan file: {0}")]
    PlanFormat(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Introduction,
    BuildUp,
    Climax,
    Conclusion,
}

impl Section {
    /// Montage order.
    pub const ALL: [Section; 4] = [
        Section::Introduction,
        Section::BuildUp,
        Section::Climax,
        Section::Conclusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Section::Introduction => "introduction",
            Section::BuildUp => "build_up",
            Section::Climax => "climax",
            Section::Conclusion => "conclusion",
        }
    }

    /// Editorial role, passed to the ordering prompt.
    pub fn purpose(self) -> &'static str {
        match self {
            Section::Introduction => "set up the subject with mostly on-topic lines",
            Section::BuildUp => "get funnier line by line",
            Section::Climax => "the strongest lines of the episode",
            Section::Conclusion => "wind down on balanced lines that leave the subject open",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The four section lists, serialized in montage order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sections<T> {
    pub introduction: Vec<T>,
    pub build_up: Vec<T>,
    pub climax: Vec<T>,
    pub conclusion: Vec<T>,
}

impl<T> Default for Sections<T> {
    fn default() -> Self {
        Sections {
            introduction: Vec::new(),
            build_up: Vec::new(),
            climax: Vec::new(),
            conclusion: Vec::new(),
        }
    }
}

impl<T> Sections<T> {
    pub fn get(&self, section: Section) -> &Vec<T> {
        match section {
            Section::Introduction => &self.introduction,
            Section::BuildUp => &self.build_up,
            Section::Climax => &self.climax,
            Section::Conclusion => &self.conclusion,
        }
    }

    pub fn get_mut(&mut self, section: Section) -> &mut Vec<T> {
        match section {
            Section::Introduction => &mut self.introduction,
            Section::BuildUp => &mut self.build_up,
            Section::Climax => &mut self.climax,
            Section::Conclusion => &mut self.conclusion,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Section, &Vec<T>)> {
        Section::ALL.into_iter().map(move |s| (s, self.get(s)))
    }

    /// All entries in montage order.
    pub fn flatten(&self) -> impl Iterator<Item = &T> {
        self.iter().flat_map(|(_, v)| v.iter())
    }

    pub fn total(&self) -> usize {
        self.iter().map(|(_, v)| v.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NarrativePlan {
    pub episode_title: String,
    pub sections: Sections<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingStrategy {
    #[default]
    Deterministic,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderingConfig {
    pub introduction: OrderingStrategy,
    pub build_up: OrderingStrategy,
    pub climax: OrderingStrategy,
    pub conclusion: OrderingStrategy,
}

impl OrderingConfig {
    pub fn uniform(strategy: OrderingStrategy) -> Self {
        OrderingConfig {
            introduction: strategy,
            build_up: strategy,
            climax: strategy,
            conclusion: strategy,
        }
    }

    pub fn get(&self, section: Section) -> OrderingStrategy {
        match section {
            Section::Introduction => self.introduction,
            Section::BuildUp => self.build_up,
            Section::Climax => self.climax,
            Section::Conclusion => self.conclusion,
        }
    }
}

/// Section size fractions; the build-up takes whatever is left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Quotas {
    pub climax: f64,
    pub introduction: f64,
    pub conclusion: f64,
}

impl Default for Quotas {
    fn default() -> Self {
        Quotas {
            climax: 0.20,
            introduction: 0.15,
            conclusion: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k_per_query: usize,
    pub irony_threshold: u8,
    pub relevance_threshold: u8,
    pub quotas: Quotas,
    pub themes: usize,
    pub phrases_per_theme: usize,
    pub video_cap: Option<usize>,
    pub ordering: OrderingConfig,
    pub min_retained: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k_per_query: 10,
            irony_threshold: 7,
            relevance_threshold: 7,
            quotas: Quotas::default(),
            themes: 5,
            phrases_per_theme: 4,
            video_cap: None,
            ordering: OrderingConfig::default(),
            min_retained: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), NarrativeError> {
        let bad = |m: String| Err(NarrativeError::Config(m));
        for (name, t) in [
            ("irony_threshold", self.irony_threshold),
            ("relevance_threshold", self.relevance_threshold),
        ] {
            if !(1..=10).contains(&t) {
                return bad(format!("{name} {t} outside 1..=10"));
            }
        }
        let q = self.quotas;
        for (name, f) in [
            ("climax", q.climax),
            ("introduction", q.introduction),
            ("conclusion", q.conclusion),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("quota {name} {f} outside (0, 1)"));
            }
        }
        if q.climax + q.introduction + q.conclusion >= 1.0 {
            return bad("climax + introduction + conclusion quotas must stay below 1".into());
        }
        if self.k_per_query == 0 || self.themes == 0 || self.phrases_per_theme == 0 {
            return bad("k_per_query, themes and phrases_per_theme must be positive".into());
        }
        if self.min_retained < 4 {
            return bad(format!("min_retained {} is below 4", self.min_retained));
        }
        if self.video_cap == Some(0) {
            return bad("video_cap must be positive when set".into());
        }
        Ok(())
    }
}

/// A retrieved sentence with the query that found it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sentence_id: String,
    pub video_id: String,
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
    pub score: f64,
    pub source_query_index: usize,
}

/// Runs one top-k per query vector, in order, excluding every sentence an
/// earlier query already picked.
pub fn retrieve_with_vectors(
    query_vectors: &[EmbeddingVector],
    store: &VectorStore,
    k: usize,
    video_cap: Option<usize>,
) -> Result<Vec<Candidate>, NarrativeError> {
    let mut selected: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for (qi, q) in query_vectors.iter().enumerate() {
        let hits = store.top_k(q, k, &selected, video_cap)?;
        for h in hits {
            selected.insert(h.record.sentence_id.clone());
            out.push(Candidate {
                sentence_id: h.record.sentence_id.clone(),
                video_id: h.record.video_id.clone(),
                text: h.record.text.clone(),
                start_s: h.record.start_s,
                end_s: h.record.end_s,
                score: h.score,
                source_query_index: qi,
            });
        }
    }
    Ok(out)
}

/// Embeds the query phrases and retrieves with cross-query exclusion.
pub fn retrieve_candidates(
    queries: &[QueryPhrase],
    store: &VectorStore,
    embedder: &dyn Embedder,
    config: &PipelineConfig,
) -> Result<Vec<Candidate>, NarrativeError> {
    if queries.is_empty() {
        return Err(NarrativeError::NoQueries);
    }
    let texts: Vec<String> = queries.iter().map(|q| q.text.clone()).collect();
    let vectors = embed_batch(&texts, embedder, InputType::SearchQuery)?;
    retrieve_with_vectors(&vectors, store, config.k_per_query, config.video_cap)
}

/// Keeps sentences with high irony or high relevance, in input order.
pub fn filter_retained(
    scored: &[ScoredSentence],
    irony_threshold: u8,
    relevance_threshold: u8,
) -> Vec<ScoredSentence> {
    scored
        .iter()
        .filter(|s| s.irony >= irony_threshold || s.relevance >= relevance_threshold)
        .cloned()
        .collect()
}

/// Nearest-rank percentile: the sorted element at rank `ceil(p/100 * n)`.
pub fn nearest_rank_percentile<T: Copy + Ord>(values: &[T], p: f64) -> Result<T, NarrativeError> {
    if values.is_empty() {
        return Err(NarrativeError::EmptyPercentile);
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(NarrativeError::BadPercentile(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let rank = ((p * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Section sizes for `n` retained sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuotaSizes {
    pub climax: usize,
    pub introduction: usize,
    pub conclusion: usize,
    pub build_up: usize,
}

pub fn quota_sizes(n: usize, quotas: &Quotas) -> Result<QuotaSizes, NarrativeError> {
    let size = |f: f64| ((f * n as f64).round() as usize).max(1);
    let climax = size(quotas.climax);
    let introduction = size(quotas.introduction);
    let conclusion = size(quotas.conclusion);
    let claimed = climax + introduction + conclusion;
    if claimed >= n {
        return Err(NarrativeError::QuotaOverflow { claimed, total: n });
    }
    Ok(QuotaSizes {
        climax,
        introduction,
        conclusion,
        build_up: n - claimed,
    })
}

/// Splits the retained set into the four sections (unordered).
///
/// Climax takes the most ironic sentences, introduction the ones most
/// relevant relative to their irony, conclusion the ones closest to the
/// median of what remains; everything else is build-up.
pub fn segment_narrative(
    episode_title: &str,
    retained: &[ScoredSentence],
    config: &PipelineConfig,
) -> Result<NarrativePlan, NarrativeError> {
    let n = retained.len();
    let required = config.min_retained.max(4);
    if n < required {
        return Err(NarrativeError::TooFewRetained {
            retained: n,
            required,
        });
    }
    let q = quota_sizes(n, &config.quotas)?;
    let mut pool: Vec<&ScoredSentence> = retained.iter().collect();

    pool.sort_by(|a, b| {
        (Reverse(a.irony), Reverse(a.relevance), &a.sentence_id).cmp(&(
            Reverse(b.irony),
            Reverse(b.relevance),
            &b.sentence_id,
        ))
    });
    let climax: Vec<_> = pool.drain(..q.climax).collect();

    let lean = |s: &ScoredSentence| i32::from(s.relevance) - i32::from(s.irony);
    pool.sort_by(|a, b| {
        (Reverse(lean(a)), Reverse(a.relevance), &a.sentence_id).cmp(&(
            Reverse(lean(b)),
            Reverse(b.relevance),
            &b.sentence_id,
        ))
    });
    let introduction: Vec<_> = pool.drain(..q.introduction).collect();

    let ironies: Vec<u8> = pool.iter().map(|s| s.irony).collect();
    let relevances: Vec<u8> = pool.iter().map(|s| s.relevance).collect();
    let mi = i32::from(nearest_rank_percentile(&ironies, 50.0)?);
    let mr = i32::from(nearest_rank_percentile(&relevances, 50.0)?);
    let distance =
        |s: &ScoredSentence| (i32::from(s.irony) - mi).abs() + (i32::from(s.relevance) - mr).abs();
    pool.sort_by(|a, b| (distance(a), &a.sentence_id).cmp(&(distance(b), &b.sentence_id)));
    let conclusion: Vec<_> = pool.drain(..q.conclusion).collect();

    let ids = |v: Vec<&ScoredSentence>| v.into_iter().map(|s| s.sentence_id.clone()).collect();
    Ok(NarrativePlan {
        episode_title: episode_title.to_string(),
        sections: Sections {
            introduction: ids(introduction),
            build_up: ids(pool),
            climax: ids(climax),
            conclusion: ids(conclusion),
        },
    })
}

/// Alternates between the top and bottom of the (irony, relevance, id)
/// ascending order: max, min, next max, next min, ...
pub fn contrast_interleave(members: &[ScoredSentence]) -> Vec<ScoredSentence> {
    let mut sorted: Vec<&ScoredSentence> = members.iter().collect();
    sorted.sort_by(|a, b| {
        (a.irony, a.relevance, &a.sentence_id).cmp(&(b.irony, b.relevance, &b.sentence_id))
    });
    let mut out = Vec::with_capacity(sorted.len());
    let (mut lo, mut hi) = (0usize, sorted.len());
    while lo < hi {
        hi -= 1;
        out.push(sorted[hi].clone());
        if lo < hi {
            out.push(sorted[lo].clone());
            lo += 1;
        }
    }
    out
}

/// The fixed ordering rule for one section.
pub fn order_section_deterministic(section: Section, members: &[ScoredSentence]) -> Vec<String> {
    let mut v: Vec<&ScoredSentence> = members.iter().collect();
    match section {
        Section::Introduction => v.sort_by(|a, b| {
            (Reverse(a.relevance), a.irony, &a.sentence_id).cmp(&(
                Reverse(b.relevance),
                b.irony,
                &b.sentence_id,
            ))
        }),
        Section::BuildUp => v.sort_by(|a, b| {
            (a.irony, a.relevance, &a.sentence_id).cmp(&(b.irony, b.relevance, &b.sentence_id))
        }),
        Section::Climax => {
            return contrast_interleave(members)
                .into_iter()
                .map(|s| s.sentence_id)
                .collect()
        }
        Section::Conclusion => v.sort_by(|a, b| {
            (Reverse(a.irony), Reverse(a.relevance), &a.sentence_id).cmp(&(
                Reverse(b.irony),
                Reverse(b.relevance),
                &b.sentence_id,
            ))
        }),
    }
    v.into_iter().map(|s| s.sentence_id.clone()).collect()
}

/// What the LLM ordering strategy needs.
pub struct LlmOrdering<'a> {
    pub provider: &'a dyn LlmProvider,
    pub texts: &'a HashMap<String, String>,
    pub context: &'a EpisodeContext,
    pub settings: &'a LlmSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedPlan {
    pub plan: NarrativePlan,
    pub warnings: Vec<Warning>,
}

/// Orders every section with its configured strategy. LLM sections fall back
/// to the deterministic rule on invalid answers or when no provider is given.
pub fn order_sections(
    plan: &NarrativePlan,
    scores: &HashMap<String, ScoredSentence>,
    ordering: &OrderingConfig,
    llm: Option<&LlmOrdering<'_>>,
) -> Result<OrderedPlan, NarrativeError> {
    let mut out = plan.clone();
    let mut warnings = Vec::new();
    for section in Section::ALL {
        let members = plan
            .sections
            .get(section)
            .iter()
            .map(|id| {
                scores
                    .get(id)
                    .cloned()
                    .ok_or_else(|| NarrativeError::Unscored(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let order = match (ordering.get(section), llm) {
            (OrderingStrategy::Llm, Some(l)) => {
                let r = llm::order_section_llm(
                    section, &members, l.texts, l.context, l.provider, l.settings,
                );
                if r.fell_back {
                    warnings.push(Warning::OrderFallback { section });
                }
                r.order
            }
            (OrderingStrategy::Llm, None) if members.len() > 1 => {
                warnings.push(Warning::OrderFallback { section });
                order_section_deterministic(section, &members)
            }
            _ => order_section_deterministic(section, &members),
        };
        *out.sections.get_mut(section) = order;
    }
    Ok(OrderedPlan {
        plan: out,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorePair {
    pub irony: u8,
    pub relevance: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PlanFile {
    format: String,
    version: u32,
    episode_title: String,
    sections: Sections<String>,
    scores: BTreeMap<String, ScorePair>,
}

impl NarrativePlan {
    /// Serializes the plan file, carrying the scores of every planned sentence.
    pub fn to_file_json(
        &self,
        scores: &HashMap<String, ScoredSentence>,
    ) -> Result<String, NarrativeError> {
        let scores = self
            .sections
            .flatten()
            .map(|id| {
                let s = scores
                    .get(id)
                    .ok_or_else(|| NarrativeError::Unscored(id.clone()))?;
                Ok((
                    id.clone(),
                    ScorePair {
                        irony: s.irony,
                        relevance: s.relevance,
                    },
                ))
            })
            .collect::<Result<BTreeMap<_, _>, NarrativeError>>()?;
        let file = PlanFile {
            format: PLAN_FORMAT.into(),
            version: PLAN_VERSION,
            episode_title: self.episode_title.clone(),
            sections: self.sections.clone(),
            scores,
        };
        Ok(serde_json::to_string_pretty(&file).expect("plan serializes") + "\n")
    }

    pub fn from_file_json(
        text: &str,
    ) -> Result<(Self, BTreeMap<String, ScorePair>), NarrativeError> {
        let file: PlanFile =
            serde_json::from_str(text).map_err(|e| NarrativeError::PlanFormat(e.to_string()))?;
        if file.format != PLAN_FORMAT || file.version != PLAN_VERSION {
            return Err(NarrativeError::PlanFormat(format!(
                "expected {PLAN_FORMAT} v{PLAN_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        Ok((
            NarrativePlan {
                episode_title: file.episode_title,
                sections: file.sections,
            },
            file.scores,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::normalize;
    use crate::index::VectorRecord;

    fn s(id: &str, irony: u8, relevance: u8) -> ScoredSentence {
        ScoredSentence {
            sentence_id: id.into(),
            irony,
            relevance,
            rationale: String::new(),
            source_query_index: 0,
        }
    }

    fn eight() -> Vec<ScoredSentence> {
        vec![
            s("s1", 9, 5),
            s("s2", 8, 8),
            s("s3", 3, 9),
            s("s4", 2, 8),
            s("s5", 5, 5),
            s("s6", 6, 4),
            s("s7", 4, 6),
            s("s8", 7, 7),
        ]
    }

    fn sorted(mut v: Vec<String>) -> Vec<String> {
        v.sort();
        v
    }

    #[test]
    fn segments_the_worked_example() {
        let plan = segment_narrative("t", &eight(), &PipelineConfig::default()).unwrap();
        assert_eq!(sorted(plan.sections.climax.clone()), vec!["s1", "s2"]);
        assert_eq!(plan.sections.introduction, vec!["s3"]);
        assert_eq!(plan.sections.conclusion, vec!["s5"]);
        assert_eq!(
            sorted(plan.sections.build_up.clone()),
            vec!["s4", "s6", "s7", "s8"]
        );
    }

    #[test]
    fn four_sentences_fill_each_section() {
        let v = vec![s("a", 1, 1), s("b", 5, 9), s("c", 9, 2), s("d", 5, 5)];
        let plan = segment_narrative("t", &v, &PipelineConfig::default()).unwrap();
        for (_, members) in plan.sections.iter() {
            assert_eq!(members.len(), 1);
        }
    }

    #[test]
    fn too_few_retained_is_an_error() {
        let v = vec![s("a", 9, 9), s("b", 9, 9), s("c", 9, 9)];
        assert!(matches!(
            segment_narrative("t", &v, &PipelineConfig::default()),
            Err(NarrativeError::TooFewRetained {
                retained: 3,
                required: 4
            })
        ));
    }

    #[test]
    fn filter_uses_or_rule() {
        let v = vec![s("a", 8, 3), s("b", 5, 9), s("c", 6, 6)];
        let kept: Vec<_> = filter_retained(&v, 7, 7)
            .into_iter()
            .map(|s| s.sentence_id)
            .collect();
        assert_eq!(kept, vec!["a", "b"]);
        assert!(filter_retained(&[], 7, 7).is_empty());
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(nearest_rank_percentile(&[1, 2, 3, 4], 50.0).unwrap(), 2);
        assert_eq!(nearest_rank_percentile(&[7], 13.0).unwrap(), 7);
        assert_eq!(nearest_rank_percentile(&[4, 1, 3, 2], 100.0).unwrap(), 4);
        assert_eq!(
            nearest_rank_percentile(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10], 70.0).unwrap(),
            7
        );
        assert!(nearest_rank_percentile::<u8>(&[], 50.0).is_err());
        assert!(nearest_rank_percentile(&[1], 0.0).is_err());
    }

    #[test]
    fn interleave_examples() {
        let ironies = |v: Vec<ScoredSentence>| v.iter().map(|s| s.irony).collect::<Vec<_>>();
        let m = vec![s("a", 2, 5), s("b", 4, 5), s("c", 6, 5), s("d", 9, 5)];
        assert_eq!(ironies(contrast_interleave(&m)), vec![9, 2, 6, 4]);
        assert_eq!(ironies(contrast_interleave(&[s("a", 3, 1)])), vec![3]);
        assert_eq!(
            ironies(contrast_interleave(&[s("a", 3, 1), s("b", 8, 1)])),
            vec![8, 3]
        );
    }

    #[test]
    fn deterministic_section_rules() {
        let m = vec![s("a", 7, 1), s("b", 2, 1), s("c", 4, 1), s("d", 6, 1)];
        assert_eq!(
            order_section_deterministic(Section::BuildUp, &m),
            vec!["b", "c", "d", "a"]
        );
        assert_eq!(
            order_section_deterministic(Section::Conclusion, &m),
            vec!["a", "d", "c", "b"]
        );
        let m = vec![s("a", 3, 5), s("b", 1, 9), s("c", 2, 9)];
        assert_eq!(
            order_section_deterministic(Section::Introduction, &m),
            vec!["b", "c", "a"]
        );
    }

    #[test]
    fn orders_the_worked_example() {
        let scored = eight();
        let plan = segment_narrative("t", &scored, &PipelineConfig::default()).unwrap();
        let lookup: HashMap<_, _> = scored
            .iter()
            .map(|s| (s.sentence_id.clone(), s.clone()))
            .collect();
        let ordered = order_sections(&plan, &lookup, &OrderingConfig::default(), None).unwrap();
        assert_eq!(ordered.plan.sections.climax, vec!["s1", "s2"]);
        assert_eq!(ordered.plan.sections.build_up, vec!["s4", "s7", "s6", "s8"]);
        assert!(ordered.warnings.is_empty());

        let singles = NarrativePlan {
            episode_title: "t".into(),
            sections: Sections {
                introduction: vec!["s3".into()],
                build_up: vec!["s4".into()],
                climax: vec!["s1".into()],
                conclusion: vec!["s5".into()],
            },
        };
        let same = order_sections(
            &singles,
            &lookup,
            &OrderingConfig::uniform(OrderingStrategy::Llm),
            None,
        )
        .unwrap();
        assert_eq!(same.plan, singles);
    }

    #[test]
    fn plan_file_round_trip() {
        let scored = eight();
        let lookup: HashMap<_, _> = scored
            .iter()
            .map(|s| (s.sentence_id.clone(), s.clone()))
            .collect();
        let plan = segment_narrative("Il calcio", &scored, &PipelineConfig::default()).unwrap();
        let text = plan.to_file_json(&lookup).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["format"], "aiblob-plan");
        assert_eq!(
            v["scores"]["s1"],
            serde_json::json!({"irony":9,"relevance":5})
        );
        let (back, scores) = NarrativePlan::from_file_json(&text).unwrap();
        assert_eq!(back, plan);
        assert_eq!(scores.len(), 8);
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let c = PipelineConfig {
            irony_threshold: 11,
            ..PipelineConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.quotas.climax = 0.7;
        assert!(c.validate().is_err());
    }

    fn store_of(points: &[(&str, [f64; 2])]) -> VectorStore {
        let mut st = VectorStore::new(2).unwrap();
        st.insert_batch(
            points
                .iter()
                .map(|(id, v)| VectorRecord {
                    sentence_id: id.to_string(),
                    vector: normalize(v).unwrap(),
                    video_id: "v".into(),
                    text: id.to_string(),
                    start_s: 0.0,
                    end_s: 1.0,
                })
                .collect(),
        )
        .unwrap();
        st
    }

    #[test]
    fn later_queries_skip_earlier_picks() {
        let st = store_of(&[
            ("s1", [1.0, 0.0]),
            ("s2", [0.9, 0.3]),
            ("s3", [0.0, 1.0]),
            ("s4", [-1.0, 0.2]),
            ("s5", [0.5, -0.8]),
        ]);
        let q0 = normalize(&[1.0, 0.05]).unwrap();
        let q1 = normalize(&[1.0, -0.05]).unwrap();
        let got = retrieve_with_vectors(&[q0, q1], &st, 1, None).unwrap();
        let ids: Vec<_> = got
            .iter()
            .map(|c| (c.sentence_id.as_str(), c.source_query_index))
            .collect();
        assert_eq!(ids, vec![("s1", 0), ("s2", 1)]);

        let empty = VectorStore::new(2).unwrap();
        assert!(
            retrieve_with_vectors(&[normalize(&[1.0, 0.0]).unwrap()], &empty, 10, None)
                .unwrap()
                .is_empty()
        );

        let two = store_of(&[("a", [1.0, 0.0]), ("b", [0.0, 1.0])]);
        assert_eq!(
            retrieve_with_vectors(&[normalize(&[1.0, 1.0]).unwrap()], &two, 3, None)
                .unwrap()
                .len(),
            2
        );
    }
}

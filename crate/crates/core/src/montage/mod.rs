//! Edit decision lists: building them from sentence spans and checking them.
//! Rendering lives in [`render`].

pub mod render;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::index::VectorStore;
use crate::ingest::VideoCatalog;
use crate::narrative::{NarrativePlan, Section, Sections};

pub use render::{plan_render, render, RenderError, RenderOutcome, RenderPlan, RendererConfig};

pub const EDL_FORMAT: &str = "aiblob-edl";
pub const EDL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum MontageError {
    #[error("plan references unknown sentence {0}")]
    UnknownSentence(String),
    #[error("no source media for video {video_id} (sentence {sentence_id})")]
    MissingSource {
        video_id: String,
        sentence_id: String,
    },
    #[error("intro source uri is empty")]
    EmptyIntro,
    #[error("bad EDL file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Loudness {
    pub integrated_lufs: f64,
    pub true_peak_dbtp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Compression {
    pub ratio: f64,
    pub threshold_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdlConfig {
    pub pre_roll_s: f64,
    pub post_roll_s: f64,
    pub fade_in_s: f64,
    pub fade_out_s: f64,
    /// Length taken from the start of the intro media.
    pub intro_duration_s: f64,
    pub loudness: Loudness,
    pub compression: Compression,
}

impl Default for EdlConfig {
    fn default() -> Self {
        EdlConfig {
            pre_roll_s: 0.15,
            post_roll_s: 0.25,
            fade_in_s: 0.04,
            fade_out_s: 0.04,
            intro_duration_s: 5.0,
            loudness: Loudness {
                integrated_lufs: -16.0,
                true_peak_dbtp: -1.5,
            },
            compression: Compression {
                ratio: 3.0,
                threshold_db: -18.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clip {
    pub source_uri: String,
    pub in_s: f64,
    pub out_s: f64,
    pub fade_in_s: f64,
    pub fade_out_s: f64,
    pub sentence_id: Option<String>,
    pub text: String,
}

impl Clip {
    pub fn duration(&self) -> f64 {
        self.out_s - self.in_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditDecisionList {
    pub format: String,
    pub version: u32,
    pub episode_title: String,
    pub loudness: Loudness,
    pub compression: Compression,
    pub intro: Option<Clip>,
    pub sections: Sections<Clip>,
}

impl EditDecisionList {
    /// Intro first, then the sections in montage order.
    pub fn clips(&self) -> impl Iterator<Item = &Clip> {
        self.intro.iter().chain(self.sections.flatten())
    }

    pub fn is_empty_episode(&self) -> bool {
        self.sections.total() == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("edl serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, MontageError> {
        let edl: EditDecisionList =
            serde_json::from_str(text).map_err(|e| MontageError::Format(e.to_string()))?;
        if edl.format != EDL_FORMAT || edl.version != EDL_VERSION {
            return Err(MontageError::Format(format!(
                "expected {EDL_FORMAT} v{EDL_VERSION}, found {} v{}",
                edl.format, edl.version
            )));
        }
        Ok(edl)
    }
}

/// Where a sentence lives in its source media.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSource {
    pub source_uri: String,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

/// Resolves sentence ids to media spans.
pub trait SentenceLookup {
    fn resolve(&self, sentence_id: &str) -> Result<ClipSource, MontageError>;
}

/// Lookup over a vector store's metadata plus the ingest-time video catalog.
pub struct StoreLookup<'a> {
    pub store: &'a VectorStore,
    pub catalog: &'a VideoCatalog,
}

impl SentenceLookup for StoreLookup<'_> {
    fn resolve(&self, sentence_id: &str) -> Result<ClipSource, MontageError> {
        let rec = self
            .store
            .get(sentence_id)
            .ok_or_else(|| MontageError::UnknownSentence(sentence_id.to_string()))?;
        let uri = self
            .catalog
            .get(&rec.video_id)
            .map(|v| v.source_uri.clone())
            .filter(|u| !u.is_empty())
            .ok_or_else(|| MontageError::MissingSource {
                video_id: rec.video_id.clone(),
                sentence_id: sentence_id.to_string(),
            })?;
        Ok(ClipSource {
            source_uri: uri,
            start_s: rec.start_s,
            end_s: rec.end_s,
            text: rec.text.clone(),
        })
    }
}

impl SentenceLookup for HashMap<String, ClipSource> {
    fn resolve(&self, sentence_id: &str) -> Result<ClipSource, MontageError> {
        self.get(sentence_id)
            .cloned()
            .ok_or_else(|| MontageError::UnknownSentence(sentence_id.to_string()))
    }
}

fn with_fades(
    source_uri: String,
    in_s: f64,
    out_s: f64,
    sentence_id: Option<String>,
    text: String,
    config: &EdlConfig,
) -> Clip {
    // Fades are capped at half the clip so they never overlap.
    let half = ((out_s - in_s) / 2.0).max(0.0);
    Clip {
        source_uri,
        in_s,
        out_s,
        fade_in_s: config.fade_in_s.min(half),
        fade_out_s: config.fade_out_s.min(half),
        sentence_id,
        text,
    }
}

/// Builds an EDL following the plan order exactly, with optional intro clip.
pub fn build_edl(
    plan: &NarrativePlan,
    lookup: &dyn SentenceLookup,
    config: &EdlConfig,
    intro_source: Option<&str>,
) -> Result<EditDecisionList, MontageError> {
    let intro = match intro_source {
        Some("") => return Err(MontageError::EmptyIntro),
        Some(uri) => Some(with_fades(
            uri.to_string(),
            0.0,
            config.intro_duration_s,
            None,
            plan.episode_title.clone(),
            config,
        )),
        None => None,
    };
    let mut sections = Sections::default();
    for (section, ids) in plan.sections.iter() {
        let clips = ids
            .iter()
            .map(|id| {
                let src = lookup.resolve(id)?;
                Ok(with_fades(
                    src.source_uri,
                    (src.start_s - config.pre_roll_s).max(0.0),
                    src.end_s + config.post_roll_s,
                    Some(id.clone()),
                    src.text,
                    config,
                ))
            })
            .collect::<Result<Vec<_>, MontageError>>()?;
        *sections.get_mut(section) = clips;
    }
    Ok(EditDecisionList {
        format: EDL_FORMAT.into(),
        version: EDL_VERSION,
        episode_title: plan.episode_title.clone(),
        loudness: config.loudness,
        compression: config.compression,
        intro,
        sections,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    NonFinite,
    NegativeIn,
    NonPositiveDuration,
    NegativeFade,
    FadesExceedDuration,
    EmptySource,
    IntroHasSentence,
    MissingSentenceId,
    DuplicateSentence(String),
    NotInPlan(String),
    MissingFromEdl(String),
    OrderMismatch,
    TitleMismatch,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::NonFinite => f.write_str("non-finite time value"),
            ViolationKind::NegativeIn => f.write_str("negative in point"),
            ViolationKind::NonPositiveDuration => f.write_str("non-positive duration"),
            ViolationKind::NegativeFade => f.write_str("negative fade"),
            ViolationKind::FadesExceedDuration => f.write_str("fades exceed duration"),
            ViolationKind::EmptySource => f.write_str("empty source uri"),
            ViolationKind::IntroHasSentence => f.write_str("intro clip carries a sentence id"),
            ViolationKind::MissingSentenceId => f.write_str("sentence clip without sentence id"),
            ViolationKind::DuplicateSentence(id) => {
                write!(f, "sentence {id} appears in more than one clip")
            }
            ViolationKind::NotInPlan(id) => write!(f, "sentence {id} is not in the plan"),
            ViolationKind::MissingFromEdl(id) => write!(f, "plan sentence {id} has no clip"),
            ViolationKind::OrderMismatch => f.write_str("clip order differs from plan order"),
            ViolationKind::TitleMismatch => f.write_str("episode title differs from plan"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// e.g. `intro`, `climax[2]`, or `edl`.
    pub location: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.kind)
    }
}

fn check_clip(location: &str, clip: &Clip, out: &mut Vec<Violation>) {
    let mut push = |kind| {
        out.push(Violation {
            location: location.to_string(),
            kind,
        })
    };
    let times = [clip.in_s, clip.out_s, clip.fade_in_s, clip.fade_out_s];
    if times.iter().any(|t| !t.is_finite()) {
        push(ViolationKind::NonFinite);
        return;
    }
    if clip.in_s < 0.0 {
        push(ViolationKind::NegativeIn);
    }
    if clip.out_s <= clip.in_s {
        push(ViolationKind::NonPositiveDuration);
    }
    if clip.fade_in_s < 0.0 || clip.fade_out_s < 0.0 {
        push(ViolationKind::NegativeFade);
    }
    if clip.duration() > 0.0 && clip.fade_in_s + clip.fade_out_s > clip.duration() {
        push(ViolationKind::FadesExceedDuration);
    }
    if clip.source_uri.is_empty() {
        push(ViolationKind::EmptySource);
    }
}

/// Checks clip invariants and, when a plan is given, the plan/clip bijection.
/// Reports every violation found.
pub fn validate_edl(
    edl: &EditDecisionList,
    plan: Option<&NarrativePlan>,
) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if let Some(intro) = &edl.intro {
        check_clip("intro", intro, &mut out);
        if intro.sentence_id.is_some() {
            out.push(Violation {
                location: "intro".into(),
                kind: ViolationKind::IntroHasSentence,
            });
        }
    }
    let mut seen = HashSet::new();
    for (section, clips) in edl.sections.iter() {
        for (i, clip) in clips.iter().enumerate() {
            let loc = format!("{section}[{i}]");
            check_clip(&loc, clip, &mut out);
            match &clip.sentence_id {
                None => out.push(Violation {
                    location: loc,
                    kind: ViolationKind::MissingSentenceId,
                }),
                Some(id) if !seen.insert(id.as_str()) => out.push(Violation {
                    location: loc,
                    kind: ViolationKind::DuplicateSentence(id.clone()),
                }),
                Some(_) => {}
            }
        }
    }

    if let Some(plan) = plan {
        let edl_loc = |kind| Violation {
            location: "edl".into(),
            kind,
        };
        if plan.episode_title != edl.episode_title {
            out.push(edl_loc(ViolationKind::TitleMismatch));
        }
        let planned: HashSet<&str> = plan.sections.flatten().map(String::as_str).collect();
        for id in &seen {
            if !planned.contains(id) {
                out.push(edl_loc(ViolationKind::NotInPlan(id.to_string())));
            }
        }
        for id in plan.sections.flatten() {
            if !seen.contains(id.as_str()) {
                out.push(edl_loc(ViolationKind::MissingFromEdl(id.clone())));
            }
        }
        let order_matches = Section::ALL.iter().all(|&s| {
            let clip_ids = edl.sections.get(s).iter().map(|c| c.sentence_id.as_deref());
            let plan_ids = plan.sections.get(s).iter().map(|id| Some(id.as_str()));
            clip_ids.eq(plan_ids)
        });
        if !order_matches {
            out.push(edl_loc(ViolationKind::OrderMismatch));
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lookup(spans: &[(&str, f64, f64)]) -> HashMap<String, ClipSource> {
        spans
            .iter()
            .map(|&(id, a, b)| {
                (
                    id.to_string(),
                    ClipSource {
                        source_uri: format!("media/{id}.mp4"),
                        start_s: a,
                        end_s: b,
                        text: format!("text {id}"),
                    },
                )
            })
            .collect()
    }

    fn plan(intro: &[&str], build: &[&str], climax: &[&str], concl: &[&str]) -> NarrativePlan {
        let v = |x: &[&str]| x.iter().map(|s| s.to_string()).collect();
        NarrativePlan {
            episode_title: "Il calcio".into(),
            sections: Sections {
                introduction: v(intro),
                build_up: v(build),
                climax: v(climax),
                conclusion: v(concl),
            },
        }
    }

    #[test]
    fn clip_margins_and_fades() {
        let l = lookup(&[("a", 10.0, 12.5), ("b", 0.05, 1.0)]);
        let edl = build_edl(
            &plan(&["a"], &["b"], &[], &[]),
            &l,
            &EdlConfig::default(),
            None,
        )
        .unwrap();
        let a = &edl.sections.introduction[0];
        assert!((a.in_s - 9.85).abs() < 1e-9);
        assert!((a.out_s - 12.75).abs() < 1e-9);
        assert_eq!((a.fade_in_s, a.fade_out_s), (0.04, 0.04));
        assert_eq!(a.sentence_id.as_deref(), Some("a"));
        assert_eq!(edl.sections.build_up[0].in_s, 0.0);
        assert!(validate_edl(&edl, Some(&plan(&["a"], &["b"], &[], &[]))).is_ok());
    }

    #[test]
    fn unknown_sentence_is_named() {
        let err = build_edl(
            &plan(&["deadbeef"], &[], &[], &[]),
            &lookup(&[]),
            &EdlConfig::default(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, MontageError::UnknownSentence(ref id) if id == "deadbeef"));
    }

    #[test]
    fn intro_comes_first() {
        let l = lookup(&[("a", 1.0, 2.0)]);
        let edl = build_edl(
            &plan(&[], &[], &["a"], &[]),
            &l,
            &EdlConfig::default(),
            Some("intro.mp4"),
        )
        .unwrap();
        let order: Vec<_> = edl.clips().map(|c| c.source_uri.as_str()).collect();
        assert_eq!(order, vec!["intro.mp4", "media/a.mp4"]);
        assert_eq!(edl.intro.as_ref().unwrap().sentence_id, None);
        assert!(validate_edl(&edl, None).is_ok());
    }

    #[test]
    fn fades_capped_at_half_duration() {
        let cfg = EdlConfig {
            pre_roll_s: 0.0,
            post_roll_s: 0.0,
            fade_in_s: 1.0,
            fade_out_s: 1.0,
            ..EdlConfig::default()
        };
        let edl = build_edl(
            &plan(&["a"], &[], &[], &[]),
            &lookup(&[("a", 1.0, 1.5)]),
            &cfg,
            None,
        )
        .unwrap();
        let c = &edl.sections.introduction[0];
        assert_eq!((c.fade_in_s, c.fade_out_s), (0.25, 0.25));
    }

    #[test]
    fn validation_reports_every_violation() {
        let l = lookup(&[("a", 1.0, 2.0), ("b", 3.0, 4.0)]);
        let p = plan(&["a"], &["b"], &[], &[]);
        let mut edl = build_edl(&p, &l, &EdlConfig::default(), None).unwrap();
        edl.sections.introduction[0].out_s = edl.sections.introduction[0].in_s;
        edl.sections.build_up[0].fade_in_s = 0.9;
        edl.sections.build_up[0].fade_out_s = 0.9;
        let v = validate_edl(&edl, Some(&p)).unwrap_err();
        let kinds: Vec<_> = v.iter().map(|v| v.kind.to_string()).collect();
        assert!(kinds.contains(&"non-positive duration".to_string()));
        assert!(kinds.contains(&"fades exceed duration".to_string()));
        assert_eq!(v[0].location, "introduction[0]");
    }

    #[test]
    fn validation_checks_bijection() {
        let l = lookup(&[("a", 1.0, 2.0), ("b", 3.0, 4.0)]);
        let p = plan(&["a"], &["b"], &[], &[]);
        let mut edl = build_edl(&p, &l, &EdlConfig::default(), None).unwrap();
        edl.sections.build_up[0].sentence_id = Some("a".into());
        let v = validate_edl(&edl, Some(&p)).unwrap_err();
        let kinds: Vec<_> = v.into_iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::DuplicateSentence("a".into())));
        assert!(kinds.contains(&ViolationKind::MissingFromEdl("b".into())));
        assert!(kinds.contains(&ViolationKind::OrderMismatch));
    }

    #[test]
    fn edl_file_round_trip() {
        let l = lookup(&[("a", 1.0, 2.0)]);
        let edl = build_edl(
            &plan(&["a"], &[], &[], &[]),
            &l,
            &EdlConfig::default(),
            Some("i.mp4"),
        )
        .unwrap();
        let text = edl.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["format"], "aiblob-edl");
        assert_eq!(v["loudness"]["integrated_lufs"], -16.0);
        assert!(v["sections"]["climax"].as_array().unwrap().is_empty());
        assert!(v["intro"]["sentence_id"].is_null());
        assert_eq!(EditDecisionList::from_json(&text).unwrap(), edl);
        assert!(EditDecisionList::from_json(&text.replace("aiblob-edl", "other")).is_err());
    }
}

//! Transcript parsing and sentence segmentation.
//!
//! Input is one JSON transcript per video with word-level timestamps. Output
//! is a line-delimited corpus of sentences, each carrying a content-derived
//! identifier so re-ingesting the same transcript yields the same ids.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fsutil::write_atomic;

pub const CORPUS_FORMAT: &str = "aiblob-corpus";
pub const CATALOG_FORMAT: &str = "aiblob-videos";
pub const FORMAT_VERSION: u32 = 1;

/// Default minimum sentence length in characters before merging.
pub const DEFAULT_MIN_CHARS: usize = 12;

/// Words whose trailing period marks an abbreviation rather than a sentence end.
const ABBREVIATIONS: &[&str] = &["sig", "dott", "prof", "ecc", "on", "avv", "ing"];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed transcript at line {line}, column {column} (field `{path}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        path: String,
        message: String,
    },
    #[error("invalid transcript: {0}")]
    Invalid(String),
    #[error("word {index}: {reason}")]
    Word { index: usize, reason: String },
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("duplicate sentence id {0}")]
    DuplicateSentence(String),
    #[error("duplicate video id {0}")]
    DuplicateVideo(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordToken {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptDocument {
    pub video_id: String,
    pub title: String,
    pub source_uri: String,
    pub language: String,
    pub words: Vec<WordToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub sentence_id: String,
    pub video_id: String,
    pub ordinal: u32,
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTranscript {
    video_id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    source_uri: String,
    #[serde(default)]
    language: String,
    words: Vec<RawWord>,
}

#[derive(Deserialize)]
struct RawWord {
    w: String,
    s: f64,
    e: f64,
}

/// Parses and validates one transcript file.
pub fn parse_transcript(bytes: &[u8]) -> Result<TranscriptDocument, IngestError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let raw: RawTranscript = serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        IngestError::Parse {
            line: inner.line(),
            column: inner.column(),
            path,
            message: inner.to_string(),
        }
    })?;

    if raw.video_id.trim().is_empty() {
        return Err(IngestError::Invalid("video_id is empty".into()));
    }
    if !raw.language.is_empty() && !is_language_tag(&raw.language) {
        return Err(IngestError::Invalid(format!(
            "language `{}` is not a BCP-47 tag",
            raw.language
        )));
    }

    let mut words = Vec::with_capacity(raw.words.len());
    let mut prev_start = f64::NEG_INFINITY;
    for (index, w) in raw.words.into_iter().enumerate() {
        let fail = |reason: &str| IngestError::Word {
            index,
            reason: reason.to_string(),
        };
        if w.w.is_empty() {
            return Err(fail("empty word text"));
        }
        if w.w.chars().any(char::is_whitespace) {
            return Err(fail("word text contains whitespace"));
        }
        if !w.s.is_finite() || !w.e.is_finite() {
            return Err(fail("non-finite timestamp"));
        }
        if w.s < 0.0 {
            return Err(fail("negative start time"));
        }
        if w.e < w.s {
            return Err(fail("end time precedes start time"));
        }
        if w.s < prev_start {
            return Err(fail("start time decreases"));
        }
        prev_start = w.s;
        words.push(WordToken {
            text: w.w,
            start_s: w.s,
            end_s: w.e,
        });
    }

    Ok(TranscriptDocument {
        video_id: raw.video_id,
        title: raw.title,
        source_uri: raw.source_uri,
        language: raw.language,
        words,
    })
}

fn is_language_tag(tag: &str) -> bool {
    tag.split('-')
        .all(|sub| (1..=8).contains(&sub.len()) && sub.chars().all(|c| c.is_ascii_alphanumeric()))
}

fn ends_sentence(word: &str) -> bool {
    if !word.ends_with(['.', '!', '?', '…']) {
        return false;
    }
    let core: String = word
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    !ABBREVIATIONS.contains(&core.as_str())
}

/// Truncated SHA-256 identifier for a sentence.
pub fn sentence_id(video_id: &str, ordinal: u32, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(video_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(ordinal.to_string().as_bytes());
    hasher.update([0x1f]);
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    hex::encode(&digest[..16])
}

/// Splits a transcript into sentences on terminal punctuation.
///
/// Fragments shorter than `min_chars` characters are merged into the next
/// fragment, or into the previous one when they come last.
pub fn segment_sentences(doc: &TranscriptDocument, min_chars: usize) -> Vec<Sentence> {
    // Word index ranges, half-open.
    let mut raw: Vec<(usize, usize)> = Vec::new();
    let mut begin = 0;
    for (i, w) in doc.words.iter().enumerate() {
        if ends_sentence(&w.text) {
            raw.push((begin, i + 1));
            begin = i + 1;
        }
    }
    if begin < doc.words.len() {
        raw.push((begin, doc.words.len()));
    }

    let text_len = |(a, b): (usize, usize)| -> usize {
        let letters: usize = doc.words[a..b].iter().map(|w| w.text.chars().count()).sum();
        letters + (b - a - 1)
    };

    // Zero-length spans are treated like short fragments so every sentence
    // keeps start_s < end_s when the transcript allows it.
    let span_s = |(a, b): (usize, usize)| doc.words[b - 1].end_s - doc.words[a].start_s;

    let mut merged: Vec<(usize, usize)> = Vec::new();
    let mut pending: Option<(usize, usize)> = None;
    for span in raw {
        pending = Some(match pending {
            Some((a, _)) => (a, span.1),
            None => span,
        });
        if let Some(p) = pending {
            if text_len(p) >= min_chars && span_s(p) > 0.0 {
                merged.push(p);
                pending = None;
            }
        }
    }
    if let Some(p) = pending {
        match merged.last_mut() {
            Some(last) => last.1 = p.1,
            None => merged.push(p),
        }
    }

    merged
        .into_iter()
        .enumerate()
        .map(|(ordinal, (a, b))| {
            let words = &doc.words[a..b];
            let text = words
                .iter()
                .map(|w| w.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            let ordinal = ordinal as u32;
            Sentence {
                sentence_id: sentence_id(&doc.video_id, ordinal, &text),
                video_id: doc.video_id.clone(),
                ordinal,
                text,
                start_s: words[0].start_s,
                end_s: words[words.len() - 1].end_s,
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

fn header_line(format: &str) -> String {
    serde_json::to_string(&Header {
        format: format.to_string(),
        version: FORMAT_VERSION,
    })
    .expect("header serializes")
}

fn check_header(line: Option<&str>, format: &str) -> Result<(), IngestError> {
    let line = line.ok_or_else(|| IngestError::Corpus {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: Header = serde_json::from_str(line).map_err(|e| IngestError::Corpus {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.format != format || header.version != FORMAT_VERSION {
        return Err(IngestError::Corpus {
            line: 1,
            message: format!(
                "expected {format} version {FORMAT_VERSION}, found {} version {}",
                header.format, header.version
            ),
        });
    }
    Ok(())
}

/// Serializes sentences in the corpus line format.
pub fn corpus_to_string(sentences: &[Sentence]) -> String {
    let mut out = header_line(CORPUS_FORMAT);
    out.push('\n');
    for s in sentences {
        out.push_str(&serde_json::to_string(s).expect("sentence serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_corpus(text: &str) -> Result<Vec<Sentence>, IngestError> {
    let mut lines = text.lines();
    check_header(lines.next(), CORPUS_FORMAT)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: Sentence = serde_json::from_str(line).map_err(|e| IngestError::Corpus {
            line: i + 2,
            message: e.to_string(),
        })?;
        if !seen.insert(s.sentence_id.clone()) {
            return Err(IngestError::DuplicateSentence(s.sentence_id));
        }
        out.push(s);
    }
    Ok(out)
}

/// Writes the corpus file atomically and returns the number of sentences.
pub fn export_corpus(sentences: &[Sentence], path: &Path) -> Result<usize, IngestError> {
    write_atomic(path, corpus_to_string(sentences).as_bytes())?;
    Ok(sentences.len())
}

pub fn load_corpus(path: &Path) -> Result<Vec<Sentence>, IngestError> {
    parse_corpus(&fs::read_to_string(path)?)
}

/// Per-video metadata kept beside the corpus so later stages can locate media.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub title: String,
    pub source_uri: String,
    pub language: String,
}

impl From<&TranscriptDocument> for VideoEntry {
    fn from(doc: &TranscriptDocument) -> Self {
        VideoEntry {
            video_id: doc.video_id.clone(),
            title: doc.title.clone(),
            source_uri: doc.source_uri.clone(),
            language: doc.language.clone(),
        }
    }
}

/// Video catalog keyed by video id.
pub type VideoCatalog = BTreeMap<String, VideoEntry>;

pub fn write_catalog(catalog: &VideoCatalog, path: &Path) -> Result<(), IngestError> {
    let mut out = header_line(CATALOG_FORMAT);
    out.push('\n');
    for entry in catalog.values() {
        out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

pub fn load_catalog(path: &Path) -> Result<VideoCatalog, IngestError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    check_header(lines.next(), CATALOG_FORMAT)?;
    let mut catalog = VideoCatalog::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: VideoEntry = serde_json::from_str(line).map_err(|e| IngestError::Corpus {
            line: i + 2,
            message: e.to_string(),
        })?;
        if catalog.contains_key(&entry.video_id) {
            return Err(IngestError::DuplicateVideo(entry.video_id));
        }
        catalog.insert(entry.video_id.clone(), entry);
    }
    Ok(catalog)
}

/// Sidecar path holding the video catalog for a corpus file.
pub fn catalog_path_for(corpus: &Path) -> std::path::PathBuf {
    let mut name = corpus
        .file_stem()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(".videos.jsonl");
    corpus.with_file_name(name)
}

/// Result of ingesting a whole transcript directory.
#[derive(Debug, Default)]
pub struct IngestedCorpus {
    pub sentences: Vec<Sentence>,
    pub catalog: VideoCatalog,
}

/// Parses every `*.json` file under `dir` (sorted by file name) and segments it.
pub fn ingest_dir(dir: &Path, min_chars: usize) -> Result<IngestedCorpus, IngestError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();

    let docs = paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            parse_transcript(&bytes).map_err(|e| match e {
                IngestError::Io(e) => IngestError::Io(e),
                other => IngestError::Invalid(format!("{}: {other}", p.display())),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut corpus = IngestedCorpus::default();
    for doc in &docs {
        if corpus.catalog.contains_key(&doc.video_id) {
            return Err(IngestError::DuplicateVideo(doc.video_id.clone()));
        }
        corpus.catalog.insert(doc.video_id.clone(), doc.into());
        corpus.sentences.extend(segment_sentences(doc, min_chars));
    }
    Ok(corpus)
}

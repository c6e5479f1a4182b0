//! Text embedding: unit-vector type, a hash-seeded deterministic embedder for
//! offline runs, and a batched remote client.

use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::http::{join_url, JsonClient, TransportError};

pub const EMBED_API_KEY_VAR: &str = "AIBLOB_EMBED_API_KEY";

const FNV_OFFSET_BASIS: u64 = 14_695_981_039_346_656_037;
const FNV_PRIME: u64 = 1_099_511_628_211;
const UNIT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector component {0} is not finite")]
    NonFinite(usize),
    #[error("vector is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("embedding dimension must be at least 2, got {0}")]
    InvalidDim(usize),
    #[error("text {0} is empty")]
    EmptyText(usize),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding texts {start}..{end} failed after {attempts} attempts: {message}")]
    Batch {
        start: usize,
        end: usize,
        attempts: usize,
        message: String,
    },
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("invalid embedder selection `{0}` (expected `remote` or `deterministic:<dim>`)")]
    BadSpec(String),
}

/// An L2-normalized embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Wraps values that are already unit length, checking the norm.
    pub fn from_unit(values: Vec<f32>) -> Result<Self, EmbedError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(i));
        }
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(EmbedError::NotUnit(norm));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }
}

/// Scales `raw` to unit L2 norm. Arithmetic is done in f64 and rounded once.
pub fn normalize(raw: &[f64]) -> Result<EmbeddingVector, EmbedError> {
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(EmbedError::NonFinite(i));
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok(EmbeddingVector(
        raw.iter().map(|v| (v / norm) as f32).collect(),
    ))
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// The splitmix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in [-1, 1) from the top 53 bits of the next output.
    pub fn next_signed_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

/// Hash-seeded pseudo-embedding. Bit-identical for a given text and dim.
pub fn deterministic_embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbedError> {
    if dim < 2 {
        return Err(EmbedError::InvalidDim(dim));
    }
    let mut rng = SplitMix64::new(fnv1a64(text.as_bytes()));
    let raw: Vec<f64> = (0..dim).map(|_| rng.next_signed_unit()).collect();
    normalize(&raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputType {
    SearchDocument,
    SearchQuery,
}

pub trait Embedder: Send + Sync {
    /// Output dimension when known up front.
    fn dim(&self) -> Option<usize>;

    fn embed(&self, texts: &[String], input: InputType)
        -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Embeds `texts` in order, checking count and a single shared dimension.
pub fn embed_batch(
    texts: &[String],
    provider: &dyn Embedder,
    input: InputType,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(EmbedError::EmptyText(i));
    }
    let vectors = provider.embed(texts, input)?;
    if vectors.len() != texts.len() {
        return Err(EmbedError::CountMismatch {
            expected: texts.len(),
            got: vectors.len(),
        });
    }
    let expected = provider.dim().unwrap_or(vectors[0].dim());
    if let Some(v) = vectors.iter().find(|v| v.dim() != expected) {
        return Err(EmbedError::DimensionMismatch {
            expected,
            found: v.dim(),
        });
    }
    Ok(vectors)
}

#[derive(Debug, Clone)]
pub struct DeterministicEmbedder {
    dim: usize,
}

impl DeterministicEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < 2 {
            return Err(EmbedError::InvalidDim(dim));
        }
        Ok(DeterministicEmbedder { dim })
    }
}

impl Embedder for DeterministicEmbedder {
    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed(
        &self,
        texts: &[String],
        _input: InputType,
    ) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .map(|t| deterministic_embed(t, self.dim))
            .collect()
    }
}

/// Provider selection string: `remote` or `deterministic:<dim>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderSpec {
    Remote,
    Deterministic(usize),
}

impl FromStr for EmbedderSpec {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "remote" {
            return Ok(EmbedderSpec::Remote);
        }
        let dim = s
            .strip_prefix("deterministic:")
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| EmbedError::BadSpec(s.to_string()))?;
        if dim < 2 {
            return Err(EmbedError::InvalidDim(dim));
        }
        Ok(EmbedderSpec::Deterministic(dim))
    }
}

impl fmt::Display for EmbedderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbedderSpec::Remote => f.write_str("remote"),
            EmbedderSpec::Deterministic(d) => write!(f, "deterministic:{d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbedRequest {
    pub model: String,
    pub texts: Vec<String>,
    pub input_type: InputType,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EmbedResponse {
    pub embeddings: Vec<Vec<f64>>,
}

pub trait EmbedTransport: Send + Sync {
    fn send(&self, request: &EmbedRequest) -> Result<EmbedResponse, TransportError>;
}

/// POSTs requests to `<base_url>/embed`.
pub struct HttpEmbedTransport {
    client: JsonClient,
    url: String,
}

impl HttpEmbedTransport {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        HttpEmbedTransport {
            client: JsonClient::new(api_key, Duration::from_secs(120)),
            url: join_url(base_url, "embed"),
        }
    }

    /// Reads the credential from `AIBLOB_EMBED_API_KEY`.
    pub fn from_env(base_url: &str) -> Self {
        Self::new(base_url, std::env::var(EMBED_API_KEY_VAR).ok())
    }
}

impl EmbedTransport for HttpEmbedTransport {
    fn send(&self, request: &EmbedRequest) -> Result<EmbedResponse, TransportError> {
        let body = serde_json::to_value(request).expect("request serializes");
        let value = self.client.post(&self.url, &body)?;
        serde_json::from_value(value)
            .map_err(|e| TransportError(format!("bad embed response: {e}")))
    }
}

/// Delays between attempts; the attempt count is `delays.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub delays: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            delays: [500, 2_000, 8_000].map(Duration::from_millis).to_vec(),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(retries: usize) -> Self {
        RetryPolicy {
            delays: vec![Duration::ZERO; retries],
        }
    }
}

pub struct RemoteEmbedder {
    transport: Box<dyn EmbedTransport>,
    pub model: String,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub dim: Option<usize>,
}

impl RemoteEmbedder {
    pub const DEFAULT_BATCH_SIZE: usize = 96;

    pub fn new(transport: Box<dyn EmbedTransport>, model: impl Into<String>) -> Self {
        RemoteEmbedder {
            transport,
            model: model.into(),
            batch_size: Self::DEFAULT_BATCH_SIZE,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            dim: None,
        }
    }

    fn embed_chunk(
        &self,
        start: usize,
        texts: &[String],
        input: InputType,
    ) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let request = EmbedRequest {
            model: self.model.clone(),
            texts: texts.to_vec(),
            input_type: input,
        };
        let attempts = self.retry.delays.len() + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.retry.delays[attempt - 1]);
            }
            match self.transport.send(&request) {
                Ok(resp) if resp.embeddings.len() == texts.len() => {
                    let vectors = resp
                        .embeddings
                        .iter()
                        .map(|v| normalize(v))
                        .collect::<Result<Vec<_>, _>>()?;
                    let d = vectors.first().map(|v| v.dim()).unwrap_or(0);
                    if let Some(v) = vectors.iter().find(|v| v.dim() != d) {
                        return Err(EmbedError::DimensionMismatch {
                            expected: d,
                            found: v.dim(),
                        });
                    }
                    return Ok(vectors);
                }
                Ok(resp) => {
                    last = format!(
                        "provider returned {} vectors for {} texts",
                        resp.embeddings.len(),
                        texts.len()
                    );
                }
                Err(e) => last = e.0,
            }
            log::warn!(
                "embed attempt {} for texts {start}..{} failed: {last}",
                attempt + 1,
                start + texts.len()
            );
        }
        Err(EmbedError::Batch {
            start,
            end: start + texts.len(),
            attempts,
            message: last,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn embed(
        &self,
        texts: &[String],
        input: InputType,
    ) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let batch = self.batch_size.max(1);
        let chunks: Vec<(usize, &[String])> = texts
            .chunks(batch)
            .enumerate()
            .map(|(i, c)| (i * batch, c))
            .collect();
        let mut out = Vec::with_capacity(texts.len());
        for wave in chunks.chunks(self.max_in_flight.max(1)) {
            let results: Vec<_> = thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|&(start, chunk)| {
                        scope.spawn(move || self.embed_chunk(start, chunk, input))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embed worker panicked"))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        if let Some(first) = out.first() {
            let expected = self.dim.unwrap_or(first.dim());
            if let Some(v) = out.iter().find(|v| v.dim() != expected) {
                return Err(EmbedError::DimensionMismatch {
                    expected,
                    found: v.dim(),
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn texts(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn fnv_of_empty_is_offset_basis() {
        assert_eq!(fnv1a64(b""), 14695981039346656037);
        // Reference: tests/oracles/deterministic_embed.py
        assert_eq!(fnv1a64(b"ciao"), 17983893182387880093);
    }

    #[test]
    fn deterministic_embed_matches_reference_bits() {
        // Bit patterns from tests/oracles/deterministic_embed.py.
        let ciao: [u32; 8] = [
            0xbbf7b013, 0x3ecbdae7, 0x3eefd686, 0xbec77e40, 0x3eae21bf, 0x3dbc41f7, 0xbece44d5,
            0xbedb792d,
        ];
        let addio: [u32; 8] = [
            0x3e96b5f6, 0x3eb16697, 0x3d4a4209, 0xbcca2965, 0xbea3fbdc, 0xbf0d6042, 0x3ec27c33,
            0x3ef9fe38,
        ];
        let bits = |t: &str| -> Vec<u32> {
            deterministic_embed(t, 8)
                .unwrap()
                .values()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits("ciao"), ciao);
        assert_eq!(bits("addio"), addio);
        assert_eq!(bits("ciao"), bits("ciao"));
    }

    #[test]
    fn deterministic_embed_rejects_tiny_dim() {
        assert_eq!(deterministic_embed("x", 1), Err(EmbedError::InvalidDim(1)));
    }

    #[test]
    fn normalize_cases() {
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert!((v.values()[0] - 0.6).abs() < 1e-7);
        assert!((v.values()[1] - 0.8).abs() < 1e-7);
        assert_eq!(
            normalize(&[1.0, 0.0, 0.0]).unwrap().values(),
            &[1.0, 0.0, 0.0]
        );
        assert_eq!(normalize(&[0.0, 0.0]), Err(EmbedError::ZeroVector));
        assert_eq!(normalize(&[1.0, f64::NAN]), Err(EmbedError::NonFinite(1)));
    }

    #[test]
    fn batch_through_deterministic_provider() {
        let p = DeterministicEmbedder::new(8).unwrap();
        assert!(embed_batch(&[], &p, InputType::SearchDocument)
            .unwrap()
            .is_empty());
        let same = embed_batch(&texts(&["ciao", "ciao"]), &p, InputType::SearchDocument).unwrap();
        assert_eq!(same[0], same[1]);
        let diff = embed_batch(&texts(&["ciao", "addio"]), &p, InputType::SearchDocument).unwrap();
        assert_ne!(diff[0], diff[1]);
        assert_eq!(diff[0], deterministic_embed("ciao", 8).unwrap());
        assert_eq!(
            embed_batch(&texts(&["a", ""]), &p, InputType::SearchDocument),
            Err(EmbedError::EmptyText(1))
        );
    }

    #[test]
    fn spec_strings() {
        assert_eq!(
            "remote".parse::<EmbedderSpec>().unwrap(),
            EmbedderSpec::Remote
        );
        assert_eq!(
            "deterministic:64".parse::<EmbedderSpec>().unwrap(),
            EmbedderSpec::Deterministic(64)
        );
        assert!("deterministic:x".parse::<EmbedderSpec>().is_err());
        assert!("cohere".parse::<EmbedderSpec>().is_err());
        assert_eq!(
            EmbedderSpec::Deterministic(8).to_string(),
            "deterministic:8"
        );
    }

    /// Echoes a deterministic vector per text; fails the first `fail_first` calls.
    struct FakeTransport {
        calls: AtomicUsize,
        fail_first: usize,
        dim_for: fn(&str) -> usize,
        seen: Mutex<Vec<usize>>,
    }

    impl EmbedTransport for FakeTransport {
        fn send(&self, request: &EmbedRequest) -> Result<EmbedResponse, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            self.seen.lock().unwrap().push(request.texts.len());
            if n < self.fail_first {
                return Err(TransportError("boom".into()));
            }
            Ok(EmbedResponse {
                embeddings: request
                    .texts
                    .iter()
                    .map(|t| {
                        deterministic_embed(t, (self.dim_for)(t))
                            .unwrap()
                            .values()
                            .iter()
                            .map(|&v| f64::from(v) * 3.0)
                            .collect()
                    })
                    .collect(),
            })
        }
    }

    fn fake(fail_first: usize, dim_for: fn(&str) -> usize) -> FakeTransport {
        FakeTransport {
            calls: AtomicUsize::new(0),
            fail_first,
            dim_for,
            seen: Mutex::new(Vec::new()),
        }
    }

    #[test]
    fn remote_batches_preserve_order() {
        let mut e = RemoteEmbedder::new(Box::new(fake(0, |_| 8)), "m");
        e.batch_size = 3;
        e.max_in_flight = 2;
        let input: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let out = e.embed(&input, InputType::SearchDocument).unwrap();
        assert_eq!(out.len(), 10);
        for (t, v) in input.iter().zip(&out) {
            let expected = deterministic_embed(t, 8).unwrap();
            for (a, b) in v.values().iter().zip(expected.values()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn remote_retries_then_succeeds() {
        let mut e = RemoteEmbedder::new(Box::new(fake(2, |_| 4)), "m");
        e.retry = RetryPolicy::immediate(3);
        assert_eq!(
            e.embed(&texts(&["a", "b"]), InputType::SearchQuery)
                .unwrap()
                .len(),
            2
        );
    }

    #[test]
    fn remote_failure_reports_range() {
        let mut e = RemoteEmbedder::new(Box::new(fake(usize::MAX, |_| 4)), "m");
        e.retry = RetryPolicy::immediate(3);
        e.batch_size = 2;
        e.max_in_flight = 1;
        match e.embed(&texts(&["a", "b", "c"]), InputType::SearchDocument) {
            Err(EmbedError::Batch {
                start,
                end,
                attempts,
                ..
            }) => {
                assert_eq!((start, end, attempts), (0, 2, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn remote_dimension_mismatch_is_config_error() {
        let mut e = RemoteEmbedder::new(Box::new(fake(0, |t| if t == "b" { 6 } else { 4 })), "m");
        e.batch_size = 1;
        let err = e
            .embed(&texts(&["a", "b"]), InputType::SearchDocument)
            .unwrap_err();
        assert_eq!(
            err,
            EmbedError::DimensionMismatch {
                expected: 4,
                found: 6
            }
        );
    }

    #[test]
    fn http_transport_speaks_wire_format() {
        let (url, rx) = crate::http::testserver::serve(vec![(
            200,
            r#"{"embeddings":[[3.0,4.0],[0.0,2.0]]}"#.to_string(),
        )]);
        let transport = HttpEmbedTransport::new(&url, Some("k3y".into()));
        let mut e = RemoteEmbedder::new(Box::new(transport), "embed-multilingual");
        e.retry = RetryPolicy::immediate(0);
        let out = e
            .embed(&texts(&["uno", "due"]), InputType::SearchQuery)
            .unwrap();
        assert_eq!(out[0].values(), &[0.6, 0.8]);
        assert_eq!(out[1].values(), &[0.0, 1.0]);
        let (auth, body) = rx.recv().unwrap();
        assert_eq!(auth, "Bearer k3y");
        let body: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(
            body,
            json!({"model":"embed-multilingual","texts":["uno","due"],"input_type":"search_query"})
        );
    }
}

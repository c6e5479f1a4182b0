//! Regenerates `tests/fixtures` from a fixed seed. The LLM replay script is
//! recorded from a hash-driven stand-in model.
//!
//! cargo run -p aiblob-cli --example make_fixtures

use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use aiblob_core::embed::fnv1a64;
use aiblob_core::ingest::{ingest_dir, DEFAULT_MIN_CHARS};
use aiblob_core::llm::{LlmRequest, LlmSettings, ProviderError};
use aiblob_core::pipeline::build_store;
use aiblob_core::{
    compose_episode, ComposeRequest, DeterministicEmbedder, LlmOp, LlmProvider, RecordingProvider,
};

const TITLE: &str = "Il calcio e la politica";
const EPISODE_TOML: &str = r#"[pipeline]
k_per_query = 8
themes = 3
phrases_per_theme = 3
irony_threshold = 7
relevance_threshold = 7

[pipeline.ordering]
climax = "llm"

[embedder]
spec = "deterministic:64"

[llm]
retry_delays_s = [0.0, 0.0, 0.0]
"#;

const SUBJECTS: &[&str] = &[
    "Il ministro",
    "La squadra",
    "Il presidente",
    "L'allenatore",
    "Il governo",
    "La nazionale",
    "Il sindaco",
    "Il capitano",
    "L'opposizione",
    "Il portiere",
    "La commissione",
    "Il tifoso",
];
const VERBS: &[&str] = &[
    "promette",
    "annuncia",
    "difende",
    "rifiuta",
    "sostiene",
    "dimentica",
    "celebra",
    "critica",
    "rinvia",
    "garantisce",
];
const OBJECTS: &[&str] = &[
    "una riforma storica",
    "il rigore decisivo",
    "la trasparenza totale",
    "un nuovo stadio",
    "la crescita del paese",
    "il fuorigioco",
    "le tasse più basse",
    "la vittoria del campionato",
    "il dialogo con tutti",
    "la panchina lunga",
    "un piano per il futuro",
    "la moviola in campo",
];
const TAILS: &[&str] = &[
    "entro domenica",
    "senza alcun dubbio",
    "come sempre",
    "davanti alle telecamere",
    "per il bene di tutti",
    "già dal prossimo anno",
    "con grande serenità",
    "alla fine del primo tempo",
];
const ENDS: &[&str] = &[".", ".", ".", "?", "!"];

fn transcript(index: usize, rng: &mut ChaCha8Rng) -> Value {
    let mut words = Vec::new();
    let mut t = rng.random_range(0.2..1.5);
    let sentences = rng.random_range(17..=23);
    for _ in 0..sentences {
        let mut text = format!(
            "{} {} {}",
            SUBJECTS.choose(rng).unwrap(),
            VERBS.choose(rng).unwrap(),
            OBJECTS.choose(rng).unwrap()
        );
        if rng.random_bool(0.6) {
            text.push(' ');
            text.push_str(TAILS.choose(rng).unwrap());
        }
        text.push_str(ENDS.choose(rng).unwrap());
        for w in text.split(' ') {
            let d: f64 = rng.random_range(0.18..0.55);
            words.push(json!({"w": w, "s": round3(t), "e": round3(t + d)}));
            t += d + rng.random_range(0.03..0.2);
        }
        t += rng.random_range(0.4..1.2);
    }
    json!({
        "video_id": format!("v{index:02}"),
        "title": format!("Tribuna politica e sportiva, puntata {}", index + 1),
        "source_uri": format!("media/v{index:02}.mp4"),
        "language": "it",
        "words": words,
    })
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Stand-in model whose answers depend only on the request contents.
struct HashModel;

fn h(parts: &[&str]) -> u64 {
    fnv1a64(parts.join("\u{1f}").as_bytes())
}

impl LlmProvider for HashModel {
    fn complete(&self, request: &LlmRequest) -> Result<Value, ProviderError> {
        let p = &request.payload;
        Ok(match request.op {
            LlmOp::Themes => {
                let n = p["count"].as_u64().unwrap_or(1) as usize;
                let angles = [
                    "promesse mancate",
                    "arbitri e ministri",
                    "il rigore della legge",
                    "tifosi al voto",
                    "la panchina del governo",
                ];
                json!({"themes": angles.iter().take(n).collect::<Vec<_>>()})
            }
            LlmOp::Queries => {
                let mut out = Vec::new();
                for r in p["requested"].as_array().into_iter().flatten() {
                    let ti = r["theme_index"].as_u64().unwrap_or(0);
                    for j in 0..r["count"].as_u64().unwrap_or(0) {
                        let x = h(&[TITLE, &ti.to_string(), &j.to_string()]) as usize;
                        let text = format!(
                            "{} {} {}",
                            SUBJECTS[x % SUBJECTS.len()],
                            VERBS[(x / 13) % VERBS.len()],
                            OBJECTS[(x / 131) % OBJECTS.len()]
                        );
                        out.push(json!({"theme_index": ti, "text": text}));
                    }
                }
                json!({"queries": out})
            }
            LlmOp::Score => {
                let scores: Vec<Value> = p["sentences"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|s| {
                        let id = s["id"].as_str().unwrap_or("");
                        let x = h(&["score", id]);
                        json!({
                            "id": id,
                            "irony": 1 + x % 10,
                            "relevance": 1 + (x >> 8) % 10,
                            "rationale": "synthetic",
                        })
                    })
                    .collect();
                json!({"scores": scores})
            }
            LlmOp::Order => {
                let mut ids: Vec<&str> = p["sentences"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .filter_map(|s| s["id"].as_str())
                    .collect();
                ids.sort_by_key(|id| h(&["order", id]));
                json!({"order": ids})
            }
        })
    }
}

fn main() -> anyhow::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let transcripts = root.join("transcripts");
    fs::create_dir_all(&transcripts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(20_261_001);
    for i in 0..10 {
        let doc = transcript(i, &mut rng);
        fs::write(
            transcripts.join(format!("v{i:02}.json")),
            serde_json::to_string_pretty(&doc)? + "\n",
        )?;
    }
    fs::write(root.join("episode.toml"), EPISODE_TOML)?;

    let corpus = ingest_dir(&transcripts, DEFAULT_MIN_CHARS)?;
    let embedder = DeterministicEmbedder::new(64)?;
    let store = build_store(&corpus.sentences, &embedder, 4096)?;
    let cfg: toml::Table = toml::from_str(EPISODE_TOML)?;
    let pipeline = cfg["pipeline"].clone().try_into()?;
    let recorder = RecordingProvider::new(HashModel);
    let episode = compose_episode(&ComposeRequest {
        title: TITLE,
        store: &store,
        catalog: &corpus.catalog,
        embedder: &embedder,
        provider: &recorder,
        pipeline: &pipeline,
        llm: &LlmSettings::default(),
        edl: &Default::default(),
        intro: None,
    })?;
    fs::write(root.join("replay.jsonl"), recorder.to_jsonl())?;
    println!("{} sentences", corpus.sentences.len());
    print!("{}", episode.log_text());
    Ok(())
}

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use aiblob_core::ingest::{
    catalog_path_for, export_corpus, ingest_dir, load_catalog, load_corpus, write_catalog,
};
use aiblob_core::llm::{LlmSettings, ReplayEntry};
use aiblob_core::montage::StoreLookup;
use aiblob_core::narrative::NarrativePlan;
use aiblob_core::pipeline::build_store;
use aiblob_core::{
    compose_episode, validate_edl, ComposeRequest, DeterministicEmbedder, EditDecisionList,
    EdlConfig, LlmOp, PipelineConfig, ScriptedProvider,
};

const LINES: &[&str] = &[
    "Il ministro promette una riforma storica.",
    "La squadra rinvia il rigore decisivo!",
    "Il sindaco garantisce la trasparenza totale.",
    "Ok.",
    "L'allenatore critica la moviola in campo?",
    "Il governo celebra le tasse più basse.",
    "Il portiere dimentica il fuorigioco come sempre.",
];

fn write_transcripts(dir: &Path) {
    for v in 0..3 {
        let mut words = Vec::new();
        let mut t = 0.1 + v as f64;
        for (li, line) in LINES.iter().enumerate() {
            if (li + v) % 3 == 0 && li != 3 {
                continue;
            }
            for w in line.split(' ') {
                words.push(json!({"w": w, "s": t, "e": t + 0.3}));
                t += 0.35;
            }
            t += 0.5;
        }
        let doc = json!({
            "video_id": format!("vid{v}"),
            "title": format!("Puntata {v}"),
            "source_uri": format!("media/vid{v}.mp4"),
            "language": "it",
            "words": words,
        });
        fs::write(dir.join(format!("vid{v}.json")), doc.to_string()).unwrap();
    }
}

fn script(ids: &[String]) -> ScriptedProvider {
    let scores: Vec<Value> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| json!({"id": id, "irony": 1 + (i * 7) % 10, "relevance": 1 + (i * 3 + 5) % 10, "rationale": ""}))
        .collect();
    ScriptedProvider::new([
        ReplayEntry {
            op: LlmOp::Themes,
            response: json!({"themes": ["promesse", "sport"]}),
        },
        ReplayEntry {
            op: LlmOp::Queries,
            response: json!({"queries": [
                {"theme_index": 0, "text": "una promessa mantenuta"},
                {"theme_index": 1, "text": "il rigore all'ultimo minuto"},
            ]}),
        },
        ReplayEntry {
            op: LlmOp::Score,
            response: json!({"scores": scores}),
        },
    ])
}

#[test]
fn ingest_index_compose_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let transcripts = dir.path().join("transcripts");
    fs::create_dir(&transcripts).unwrap();
    write_transcripts(&transcripts);

    let corpus = ingest_dir(&transcripts, 12).unwrap();
    assert_eq!(corpus.catalog.len(), 3);
    assert!(corpus.sentences.iter().all(|s| s.text != "Ok."));
    assert!(corpus.sentences.iter().all(|s| s.start_s < s.end_s));

    let corpus_path = dir.path().join("corpus.jsonl");
    export_corpus(&corpus.sentences, &corpus_path).unwrap();
    write_catalog(&corpus.catalog, &catalog_path_for(&corpus_path)).unwrap();
    assert_eq!(load_corpus(&corpus_path).unwrap(), corpus.sentences);
    assert_eq!(
        load_catalog(&catalog_path_for(&corpus_path)).unwrap(),
        corpus.catalog
    );

    let embedder = DeterministicEmbedder::new(24).unwrap();
    let store = build_store(&corpus.sentences, &embedder, 5).unwrap();
    assert_eq!(store.len(), corpus.sentences.len());

    let ids: Vec<String> = corpus
        .sentences
        .iter()
        .map(|s| s.sentence_id.clone())
        .collect();
    let pipeline = PipelineConfig {
        k_per_query: 50,
        themes: 2,
        phrases_per_theme: 1,
        irony_threshold: 6,
        relevance_threshold: 6,
        ..PipelineConfig::default()
    };
    let settings = LlmSettings {
        score_batch_size: 100,
        ..LlmSettings::default()
    };
    let edl_config = EdlConfig::default();
    let run = |out: &Path| {
        let provider = script(&ids);
        let episode = compose_episode(&ComposeRequest {
            title: "Promesse e rigori",
            store: &store,
            catalog: &corpus.catalog,
            embedder: &embedder,
            provider: &provider,
            pipeline: &pipeline,
            llm: &settings,
            edl: &edl_config,
            intro: Some("media/sigla.mp4"),
        })
        .unwrap();
        episode.write_workspace(out).unwrap();
        episode
    };
    let a = run(&dir.path().join("a"));
    run(&dir.path().join("b"));

    assert_eq!(a.candidates.len(), ids.len());
    assert!(a.warnings.is_empty(), "{:?}", a.warnings);
    for f in [
        "themes.jsonl",
        "queries.jsonl",
        "candidates.jsonl",
        "scores.jsonl",
        "plan.json",
        "edl.json",
        "compose.log",
    ] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }

    let (plan, scores) =
        NarrativePlan::from_file_json(&fs::read_to_string(dir.path().join("a/plan.json")).unwrap())
            .unwrap();
    assert_eq!(plan, a.plan);
    assert_eq!(scores.len(), plan.sections.total());
    let edl =
        EditDecisionList::from_json(&fs::read_to_string(dir.path().join("a/edl.json")).unwrap())
            .unwrap();
    assert!(validate_edl(&edl, Some(&plan)).is_ok());
    assert_eq!(edl.intro.as_ref().unwrap().source_uri, "media/sigla.mp4");

    let lookup = StoreLookup {
        store: &store,
        catalog: &corpus.catalog,
    };
    let rebuilt =
        aiblob_core::build_edl(&plan, &lookup, &edl_config, Some("media/sigla.mp4")).unwrap();
    assert_eq!(rebuilt, edl);
}

#[test]
fn exhausted_script_fails_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    write_transcripts(dir.path());
    let corpus = ingest_dir(dir.path(), 12).unwrap();
    let embedder = DeterministicEmbedder::new(8).unwrap();
    let store = build_store(&corpus.sentences, &embedder, 64).unwrap();
    let provider = ScriptedProvider::new([ReplayEntry {
        op: LlmOp::Themes,
        response: json!({"themes": ["a"]}),
    }]);
    let settings = LlmSettings {
        retry: aiblob_core::embed::RetryPolicy::immediate(1),
        ..LlmSettings::default()
    };
    let err = compose_episode(&ComposeRequest {
        title: "x",
        store: &store,
        catalog: &corpus.catalog,
        embedder: &embedder,
        provider: &provider,
        pipeline: &PipelineConfig::default(),
        llm: &settings,
        edl: &EdlConfig::default(),
        intro: None,
    })
    .unwrap_err();
    assert!(err.to_string().contains("queries"), "{err}");
}

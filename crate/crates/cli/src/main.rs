mod config;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use aiblob_core::embed::HttpEmbedTransport;
use aiblob_core::fsutil::write_atomic;
use aiblob_core::ingest::{self, catalog_path_for, VideoCatalog, DEFAULT_MIN_CHARS};
use aiblob_core::llm::{RemoteLlm, ScriptedProvider};
use aiblob_core::montage::RenderOutcome;
use aiblob_core::pipeline::build_store;
use aiblob_core::{
    compose_episode, ComposeRequest, DeterministicEmbedder, EditDecisionList, Embedder,
    EmbedderSpec, LlmProvider, RemoteEmbedder, VectorStore,
};

use config::{AppConfig, EmbedderSection};

const CATALOG_FILE: &str = "videos.jsonl";
const EMBEDDER_FILE: &str = "embedder.txt";
const INDEX_CHUNK: usize = 4096;

#[derive(Parser)]
#[command(
    name = "aiblob",
    version,
    about = "Build satirical montage episodes from transcribed TV archives"
)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment transcripts into a sentence corpus.
    Ingest {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_CHARS)]
        min_chars: usize,
    },
    /// Embed a corpus into a vector store.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// `remote` or `deterministic:<dim>`.
        #[arg(long)]
        embedder: EmbedderSpec,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Build an episode from a store and a title, writing every stage artifact and the EDL.
    Compose(ComposeArgs),
    /// Render an EDL, or print the renderer invocations with --dry-run.
    Render {
        #[arg(long)]
        edl: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Renderer binary; overrides `renderer.path`.
        #[arg(long)]
        renderer: Option<PathBuf>,
    },
    /// Count videos and sentences in a store.
    Stats {
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Args)]
struct ComposeArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    title: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `remote` or `scripted:<replay.jsonl>`.
    #[arg(long)]
    llm: LlmChoice,
    /// Media uri for the opening sequence.
    #[arg(long)]
    intro: Option<String>,
    /// Overrides `embedder.spec` and the spec recorded in the store.
    #[arg(long)]
    embedder: Option<EmbedderSpec>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    irony_threshold: Option<u8>,
    #[arg(long)]
    relevance_threshold: Option<u8>,
    #[arg(long)]
    video_cap: Option<usize>,
    #[arg(long)]
    themes: Option<usize>,
    #[arg(long)]
    phrases_per_theme: Option<usize>,
}

#[derive(Clone)]
enum LlmChoice {
    Remote,
    Scripted(PathBuf),
}

impl FromStr for LlmChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "remote" => Ok(LlmChoice::Remote),
            Some(("scripted", path)) if !path.is_empty() => Ok(LlmChoice::Scripted(path.into())),
            _ => Err(format!("expected `remote` or `scripted:<file>`, got `{s}`")),
        }
    }
}

fn make_embedder(spec: EmbedderSpec, section: &EmbedderSection) -> Result<Box<dyn Embedder>> {
    Ok(match spec {
        EmbedderSpec::Deterministic(dim) => Box::new(DeterministicEmbedder::new(dim)?),
        EmbedderSpec::Remote => {
            let (Some(url), Some(model)) = (&section.base_url, &section.model) else {
                bail!("remote embedder needs embedder.base_url and embedder.model in the config");
            };
            let mut e =
                RemoteEmbedder::new(Box::new(HttpEmbedTransport::from_env(url)), model.clone());
            e.batch_size = section.batch_size;
            e.max_in_flight = section.max_in_flight;
            Box::new(e)
        }
    })
}

fn cmd_ingest(transcripts: &Path, out: &Path, min_chars: usize) -> Result<()> {
    let corpus = ingest::ingest_dir(transcripts, min_chars)
        .with_context(|| format!("ingesting {}", transcripts.display()))?;
    let n = ingest::export_corpus(&corpus.sentences, out)?;
    let catalog_path = catalog_path_for(out);
    ingest::write_catalog(&corpus.catalog, &catalog_path)?;
    println!(
        "{n} sentences from {} videos -> {} (+ {})",
        corpus.catalog.len(),
        out.display(),
        catalog_path.display()
    );
    Ok(())
}

fn cmd_index(
    corpus: &Path,
    store_dir: &Path,
    spec: EmbedderSpec,
    config: Option<&Path>,
) -> Result<()> {
    let cfg = AppConfig::load_or_default(config)?;
    let sentences =
        ingest::load_corpus(corpus).with_context(|| format!("loading {}", corpus.display()))?;
    let catalog_src = catalog_path_for(corpus);
    let catalog = ingest::load_catalog(&catalog_src)
        .with_context(|| format!("loading video catalog {}", catalog_src.display()))?;
    let embedder = make_embedder(spec, &cfg.embedder)?;
    let store = build_store(&sentences, embedder.as_ref(), INDEX_CHUNK)?;
    let manifest = store.save(store_dir)?;
    ingest::write_catalog(&catalog, &store_dir.join(CATALOG_FILE))?;
    write_atomic(
        &store_dir.join(EMBEDDER_FILE),
        format!("{spec}\n").as_bytes(),
    )?;
    println!(
        "{} vectors of dim {} -> {}",
        manifest.count,
        manifest.dim,
        store_dir.display()
    );
    Ok(())
}

fn store_embedder(store_dir: &Path) -> Result<Option<EmbedderSpec>> {
    let path = store_dir.join(EMBEDDER_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    Ok(Some(text.trim().parse()?))
}

fn cmd_compose(args: ComposeArgs) -> Result<()> {
    let mut cfg = AppConfig::load(&args.config)?;
    let p = &mut cfg.pipeline;
    if let Some(k) = args.k {
        p.k_per_query = k;
    }
    if let Some(t) = args.irony_threshold {
        p.irony_threshold = t;
    }
    if let Some(t) = args.relevance_threshold {
        p.relevance_threshold = t;
    }
    if let Some(c) = args.video_cap {
        p.video_cap = Some(c);
    }
    if let Some(t) = args.themes {
        p.themes = t;
    }
    if let Some(n) = args.phrases_per_theme {
        p.phrases_per_theme = n;
    }

    let store = VectorStore::load(&args.store)
        .with_context(|| format!("loading store {}", args.store.display()))?;
    let catalog: VideoCatalog = ingest::load_catalog(&args.store.join(CATALOG_FILE))
        .with_context(|| format!("loading video catalog from {}", args.store.display()))?;

    let spec = match (args.embedder, &cfg.embedder.spec) {
        (Some(s), _) => s,
        (None, Some(s)) => s.parse()?,
        (None, None) => store_embedder(&args.store)?
            .context("store does not record its embedder; pass --embedder")?,
    };
    let embedder = make_embedder(spec, &cfg.embedder)?;
    if let Some(dim) = embedder.dim() {
        if dim != store.dim() {
            bail!(
                "embedder {spec} has dim {dim} but the store has dim {}",
                store.dim()
            );
        }
    }

    let (provider, settings): (Box<dyn LlmProvider>, _) = match &args.llm {
        LlmChoice::Scripted(path) => (
            Box::new(
                ScriptedProvider::from_path(path)
                    .with_context(|| format!("loading replay {}", path.display()))?,
            ),
            cfg.llm.settings(true)?,
        ),
        LlmChoice::Remote => {
            let (Some(url), Some(model)) = (&cfg.llm.base_url, &cfg.llm.model) else {
                bail!("remote LLM needs llm.base_url and llm.model in the config");
            };
            (
                Box::new(RemoteLlm::from_env(url, model.clone())),
                cfg.llm.settings(false)?,
            )
        }
    };

    let episode = compose_episode(&ComposeRequest {
        title: &args.title,
        store: &store,
        catalog: &catalog,
        embedder: embedder.as_ref(),
        provider: provider.as_ref(),
        pipeline: &cfg.pipeline,
        llm: &settings,
        edl: &cfg.montage,
        intro: args.intro.as_deref(),
    })?;
    episode.write_workspace(&args.out)?;
    print!("{}", episode.log_text());
    println!("workspace: {}", args.out.display());
    Ok(())
}

fn cmd_render(
    edl_path: &Path,
    out: &Path,
    dry_run: bool,
    config: Option<&Path>,
    renderer: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = AppConfig::load_or_default(config)?;
    if let Some(r) = renderer {
        cfg.renderer.path = r;
    }
    let text =
        fs::read_to_string(edl_path).with_context(|| format!("reading {}", edl_path.display()))?;
    let edl = EditDecisionList::from_json(&text)?;
    match aiblob_core::render(&edl, out, dry_run, &cfg.renderer)? {
        RenderOutcome::DryRun(plan) => print!("{plan}"),
        RenderOutcome::Rendered(path) => {
            let plan = aiblob_core::montage::plan_render(&edl, out, &cfg.renderer);
            let log = format!("{}rendered {}\n", plan.to_text(), path.display());
            let log_path = edl_path.with_file_name("render.log");
            write_atomic(&log_path, log.as_bytes())?;
            println!("rendered {}", path.display());
        }
    }
    Ok(())
}

fn cmd_stats(store_dir: &Path) -> Result<()> {
    let store = VectorStore::load(store_dir)
        .with_context(|| format!("loading store {}", store_dir.display()))?;
    let videos: HashSet<&str> = store
        .records()
        .iter()
        .map(|r| r.video_id.as_str())
        .collect();
    println!("videos: {}", videos.len());
    println!("sentences: {}", store.len());
    println!("dim: {}", store.dim());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            transcripts,
            out,
            min_chars,
        } => cmd_ingest(&transcripts, &out, min_chars),
        Command::Index {
            corpus,
            store,
            embedder,
            config,
        } => cmd_index(&corpus, &store, embedder, config.as_deref()),
        Command::Compose(args) => cmd_compose(args),
        Command::Render {
            edl,
            out,
            dry_run,
            config,
            renderer,
        } => cmd_render(&edl, &out, dry_run, config.as_deref(), renderer),
        Command::Stats { store } => cmd_stats(&store),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

//! Drives an ffmpeg-compatible renderer: one extraction per clip, a concat
//! pass, then a final loudness normalization and compression pass.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{validate_edl, Clip, EditDecisionList, Violation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RendererConfig {
    /// Binary name looked up on `PATH`, or a path to it.
    pub path: PathBuf,
    /// Relative source uris are resolved against this directory.
    pub media_root: Option<PathBuf>,
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub audio_rate: u32,
    /// Concurrent clip extractions.
    pub jobs: usize,
}

impl Default for RendererConfig {
    fn default() -> Self {
        RendererConfig {
            path: PathBuf::from("ffmpeg"),
            media_root: None,
            width: 1280,
            height: 720,
            fps: 25,
            audio_rate: 48_000,
            jobs: 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("empty episode")]
    EmptyEpisode,
    #[error("EDL failed validation: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("renderer `{}` not found", .0.display())]
    RendererMissing(PathBuf),
    #[error("source media missing: {}", join_paths(.0))]
    MissingMedia(Vec<PathBuf>),
    #[error("another render is writing {}", .0.display())]
    Busy(PathBuf),
    #[error("renderer failed at {step} ({status}):\n{diagnostics}")]
    Failed {
        step: String,
        status: String,
        diagnostics: String,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

fn join_paths(p: &[PathBuf]) -> String {
    p.iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RenderError {
    let context = context.into();
    move |source| RenderError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub label: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderPlan {
    pub program: PathBuf,
    pub work_dir: PathBuf,
    pub output: PathBuf,
    pub extract: Vec<Step>,
    pub concat_list: String,
    pub concat: Step,
    pub finish: Step,
}

impl RenderPlan {
    /// Newline-delimited, shell-quoted invocations in execution order.
    pub fn to_text(&self) -> String {
        let program = self.program.to_string_lossy();
        self.steps()
            .map(|s| {
                let words =
                    std::iter::once(program.as_ref()).chain(s.args.iter().map(String::as_str));
                shlex::try_join(words).expect("arguments contain no NUL bytes") + "\n"
            })
            .collect()
    }

    pub fn steps(&self) -> impl Iterator<Item = &Step> {
        self.extract.iter().chain([&self.concat, &self.finish])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RenderOutcome {
    DryRun(String),
    Rendered(PathBuf),
}

fn secs(x: f64) -> String {
    format!("{x:.6}")
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn is_remote(uri: &str) -> bool {
    uri.contains("://") && !uri.starts_with("file://")
}

fn local_source(uri: &str, config: &RendererConfig) -> PathBuf {
    let p = Path::new(uri.strip_prefix("file://").unwrap_or(uri));
    match &config.media_root {
        Some(root) if p.is_relative() => root.join(p),
        _ => p.to_path_buf(),
    }
}

fn source_arg(uri: &str, config: &RendererConfig) -> String {
    if is_remote(uri) {
        uri.to_string()
    } else {
        path_str(&local_source(uri, config))
    }
}

fn work_dir_for(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!(".{name}.work"))
}

fn clip_name(i: usize) -> String {
    format!("clip_{i:04}.mp4")
}

fn extract_step(i: usize, clip: &Clip, edl_config: &RendererConfig, work: &Path) -> Step {
    let c = edl_config;
    let dur = clip.duration();
    let video = format!(
        "scale={w}:{h}:force_original_aspect_ratio=decrease,pad={w}:{h}:(ow-iw)/2:(oh-ih)/2,setsar=1,fps={fps},format=yuv420p",
        w = c.width,
        h = c.height,
        fps = c.fps
    );
    let audio = format!(
        "afade=t=in:st=0:d={},afade=t=out:st={}:d={},aresample={}",
        secs(clip.fade_in_s),
        secs(dur - clip.fade_out_s),
        secs(clip.fade_out_s),
        c.audio_rate
    );
    let args = [
        "-hide_banner",
        "-nostdin",
        "-y",
        "-ss",
        &secs(clip.in_s),
        "-t",
        &secs(dur),
        "-i",
        &source_arg(&clip.source_uri, c),
        "-vf",
        &video,
        "-af",
        &audio,
        "-ac",
        "2",
        "-c:v",
        "libx264",
        "-preset",
        "veryfast",
        "-crf",
        "20",
        "-c:a",
        "aac",
        "-b:a",
        "192k",
        &path_str(&work.join(clip_name(i))),
    ];
    Step {
        label: format!("extract {i}"),
        args: args.iter().map(|s| s.to_string()).collect(),
    }
}

/// Pure planning: identical inputs give an identical plan.
pub fn plan_render(edl: &EditDecisionList, out: &Path, config: &RendererConfig) -> RenderPlan {
    let work = work_dir_for(out);
    let clips: Vec<&Clip> = edl.clips().collect();
    let extract = clips
        .iter()
        .enumerate()
        .map(|(i, clip)| extract_step(i, clip, config, &work))
        .collect();
    let concat_list = (0..clips.len())
        .map(|i| format!("file '{}'\n", clip_name(i)))
        .collect();
    let strs = |a: &[&str]| a.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let concat = Step {
        label: "concat".into(),
        args: strs(&[
            "-hide_banner",
            "-nostdin",
            "-y",
            "-f",
            "concat",
            "-safe",
            "0",
            "-i",
            &path_str(&work.join("concat.txt")),
            "-c",
            "copy",
            &path_str(&work.join("joined.mp4")),
        ]),
    };
    let audio = format!(
        "loudnorm=I={}:TP={}:LRA=11,acompressor=threshold={}dB:ratio={}",
        edl.loudness.integrated_lufs,
        edl.loudness.true_peak_dbtp,
        edl.compression.threshold_db,
        edl.compression.ratio
    );
    let finish = Step {
        label: "normalize".into(),
        args: strs(&[
            "-hide_banner",
            "-nostdin",
            "-y",
            "-i",
            &path_str(&work.join("joined.mp4")),
            "-af",
            &audio,
            "-ar",
            &config.audio_rate.to_string(),
            "-c:v",
            "copy",
            "-c:a",
            "aac",
            "-b:a",
            "192k",
            &path_str(&work.join("final.mp4")),
        ]),
    };
    RenderPlan {
        program: config.path.clone(),
        work_dir: work,
        output: out.to_path_buf(),
        extract,
        concat_list,
        concat,
        finish,
    }
}

fn find_program(program: &Path) -> Option<PathBuf> {
    if program.components().count() > 1 {
        return program.is_file().then(|| program.to_path_buf());
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(program))
        .find(|candidate| candidate.is_file())
}

fn run_step(program: &Path, step: &Step) -> Result<(), RenderError> {
    log::debug!("running {}", step.label);
    let output = Command::new(program)
        .args(&step.args)
        .output()
        .map_err(io_err(format!("spawning renderer for {}", step.label)))?;
    if output.status.success() {
        return Ok(());
    }
    let stderr = String::from_utf8_lossy(&output.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    let tail = lines[lines.len().saturating_sub(40)..].join("\n");
    Err(RenderError::Failed {
        step: step.label.clone(),
        status: output.status.to_string(),
        diagnostics: tail,
    })
}

/// Holds the per-output lock file for the duration of a render.
struct RenderLock(PathBuf);

impl RenderLock {
    fn acquire(out: &Path) -> Result<Self, RenderError> {
        let name = out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let lock = out.with_file_name(format!(".{name}.lock"));
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
        {
            Ok(_) => Ok(RenderLock(lock)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                Err(RenderError::Busy(out.to_path_buf()))
            }
            Err(e) => Err(io_err(format!("creating {}", lock.display()))(e)),
        }
    }
}

impl Drop for RenderLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn execute(plan: &RenderPlan, config: &RendererConfig) -> Result<(), RenderError> {
    let work = &plan.work_dir;
    if work.exists() {
        fs::remove_dir_all(work).map_err(io_err(format!("clearing {}", work.display())))?;
    }
    fs::create_dir_all(work).map_err(io_err(format!("creating {}", work.display())))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .expect("thread pool builds");
    pool.install(|| {
        plan.extract
            .par_iter()
            .map(|step| run_step(&plan.program, step))
            .collect::<Result<Vec<()>, _>>()
    })?;

    fs::write(work.join("concat.txt"), &plan.concat_list).map_err(io_err("writing concat list"))?;
    run_step(&plan.program, &plan.concat)?;
    run_step(&plan.program, &plan.finish)?;
    fs::rename(work.join("final.mp4"), &plan.output).map_err(io_err(format!(
        "moving output to {}",
        plan.output.display()
    )))?;
    fs::remove_dir_all(work).map_err(io_err(format!("removing {}", work.display())))?;
    Ok(())
}

/// Renders `edl` to `out`, or only returns the plan text when `dry_run` is set.
pub fn render(
    edl: &EditDecisionList,
    out: &Path,
    dry_run: bool,
    config: &RendererConfig,
) -> Result<RenderOutcome, RenderError> {
    if edl.is_empty_episode() {
        return Err(RenderError::EmptyEpisode);
    }
    validate_edl(edl, None).map_err(RenderError::Invalid)?;
    let mut plan = plan_render(edl, out, config);
    if dry_run {
        return Ok(RenderOutcome::DryRun(plan.to_text()));
    }

    plan.program = find_program(&config.path)
        .ok_or_else(|| RenderError::RendererMissing(config.path.clone()))?;
    let mut missing: Vec<PathBuf> = edl
        .clips()
        .filter(|c| !is_remote(&c.source_uri))
        .map(|c| local_source(&c.source_uri, config))
        .filter(|p| !p.is_file())
        .collect();
    missing.dedup();
    if !missing.is_empty() {
        return Err(RenderError::MissingMedia(missing));
    }

    let _lock = RenderLock::acquire(out)?;
    execute(&plan, config)?;
    Ok(RenderOutcome::Rendered(out.to_path_buf()))
}

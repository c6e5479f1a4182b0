use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use serde::Deserialize;

use aiblob_core::embed::RetryPolicy;
use aiblob_core::llm::LlmSettings;
use aiblob_core::{EdlConfig, PipelineConfig, RendererConfig};

/// Everything an episode needs, read from one TOML file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub pipeline: PipelineConfig,
    pub llm: LlmSection,
    pub embedder: EmbedderSection,
    pub montage: EdlConfig,
    pub renderer: RendererConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub base_url: Option<String>,
    pub model: Option<String>,
    /// Seconds to wait before each retry.
    pub retry_delays_s: Vec<f64>,
    pub score_batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for LlmSection {
    fn default() -> Self {
        let d = LlmSettings::default();
        LlmSection {
            base_url: None,
            model: None,
            retry_delays_s: d.retry.delays.iter().map(Duration::as_secs_f64).collect(),
            score_batch_size: d.score_batch_size,
            max_in_flight: d.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSection {
    /// `remote` or `deterministic:<dim>`; when unset, compose uses whatever
    /// built the store.
    pub spec: Option<String>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        EmbedderSection {
            spec: None,
            base_url: None,
            model: None,
            batch_size: 96,
            max_in_flight: 4,
        }
    }
}

fn retry_policy(delays_s: &[f64]) -> Result<RetryPolicy> {
    let delays = delays_s
        .iter()
        .map(|&s| Duration::try_from_secs_f64(s).with_context(|| format!("bad retry delay {s}")))
        .collect::<Result<_>>()?;
    Ok(RetryPolicy { delays })
}

impl LlmSection {
    /// Replayed providers never benefit from waiting, so `immediate` drops the
    /// delays but keeps the attempt count.
    pub fn settings(&self, immediate: bool) -> Result<LlmSettings> {
        let retry = if immediate {
            RetryPolicy::immediate(self.retry_delays_s.len())
        } else {
            retry_policy(&self.retry_delays_s)?
        };
        Ok(LlmSettings {
            retry,
            score_batch_size: self.score_batch_size,
            max_in_flight: self.max_in_flight,
        })
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: AppConfig = toml::from_str(
            r#"
[pipeline]
k_per_query = 6
video_cap = 2

[pipeline.ordering]
climax = "llm"

[montage]
pre_roll_s = 0.3

[renderer]
path = "/opt/ffmpeg/bin/ffmpeg"
"#,
        )
        .unwrap();
        assert_eq!(cfg.pipeline.k_per_query, 6);
        assert_eq!(cfg.pipeline.irony_threshold, 7);
        assert_eq!(cfg.pipeline.video_cap, Some(2));
        assert_eq!(cfg.montage.pre_roll_s, 0.3);
        assert_eq!(cfg.montage.post_roll_s, 0.25);
        assert_eq!(cfg.renderer.path, Path::new("/opt/ffmpeg/bin/ffmpeg"));
        assert_eq!(cfg.llm.retry_delays_s, vec![0.5, 2.0, 8.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<AppConfig>("[pipeline]\nk = 3\n").is_err());
        assert!(toml::from_str::<AppConfig>("[rendrer]\npath = \"x\"\n").is_err());
    }

    #[test]
    fn immediate_retry_keeps_attempt_count() {
        let s = LlmSection::default().settings(true).unwrap();
        assert_eq!(s.retry.delays, vec![Duration::ZERO; 3]);
        assert!(LlmSection {
            retry_delays_s: vec![-1.0],
            ..LlmSection::default()
        }
        .settings(false)
        .is_err());
    }
}

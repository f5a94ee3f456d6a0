//! Run configuration, read from TOML.
//!
//! ```toml
//! dataset_root = "data/synthetic"
//! out_dir = "runs/closed"
//! task = "closed"
//! splits = ["easy"]
//! seed = 0
//! localizer = "viterbi"
//!
//! [fps_overrides]
//! surgery = 2.0
//!
//! [providers.llm]
//! kind = "openai"
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! model = "gpt-4o-2024-08-06"
//! ```
//!
//! API keys come from the environment (`VIDDIFF_LLM_API_KEY`,
//! `VIDDIFF_VLM_API_KEY` by default) and an embedding server URL from
//! `VIDDIFF_EMBED_URL` when set.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::VideoRepresentation;
use crate::dataset::FpsOverrides;
use crate::error::{Error, Result};
use crate::evaluator::BudgetBase;
use crate::localizer::{LocalizerMode, StageAggregation, DEFAULT_N_FRAMES, DEFAULT_TEMPERATURE};
use crate::model::{Category, Split};
use crate::providers::{
    Embedder, HttpEmbedder, LlmProvider, MockEmbedder, Models, OpenAiCompatible, PrecomputedEmbedder, RetryPolicy,
    Throttled, VlmProvider,
};
use crate::synthetic::{SimulatedLlm, SimulatedVlm};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Closed,
    Open,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed" => Ok(Task::Closed),
            "open" => Ok(Task::Open),
            _ => Err(Error::InvalidArgument(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Propose, localize, difference.
    #[default]
    Staged,
    /// One multimodal call per pair.
    Baseline,
}

/// Where a run stops; later stages are skipped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopAfter {
    Propose,
    Localize,
    #[default]
    Evaluate,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// Offline model that understands the synthetic benchmark.
    #[default]
    Simulated,
    /// Chat-completions compatible HTTP endpoint.
    OpenAi,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Environment variable holding the API key.
    pub api_key_env: Option<String>,
    /// Sustained requests per second; unlimited when unset.
    pub requests_per_second: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Mock,
    /// VDEM files written by the embedding sidecar.
    Precomputed,
    /// Embedding server returning VDEM bytes.
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub path: Option<PathBuf>,
    pub url: Option<String>,
    pub dims: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub llm: ProviderSpec,
    pub vlm: ProviderSpec,
    pub embedder: EmbedderSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    /// Defaults to `<dataset_root>/manifest.jsonl`.
    pub manifest: Option<PathBuf>,
    /// Empty means every split.
    pub splits: Vec<Split>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub task: Task,
    pub method: Method,
    pub stop_after: StopAfter,
    pub localizer: LocalizerMode,
    pub n_frames: usize,
    pub localizer_temperature: f64,
    pub stage_aggregation: StageAggregation,
    pub n_retrieval_keys: usize,
    pub fps_overrides: BTreeMap<Category, f64>,
    pub budget_base: BudgetBase,
    pub video_rep: VideoRepresentation,
    pub max_concurrency: usize,
    pub retry: RetryPolicy,
    pub providers: ProvidersConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_root: PathBuf::from("."),
            manifest: None,
            splits: Vec::new(),
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            task: Task::Closed,
            method: Method::Staged,
            stop_after: StopAfter::Evaluate,
            localizer: LocalizerMode::Viterbi,
            n_frames: DEFAULT_N_FRAMES,
            localizer_temperature: DEFAULT_TEMPERATURE,
            stage_aggregation: StageAggregation::Max,
            n_retrieval_keys: 5,
            fps_overrides: BTreeMap::new(),
            budget_base: BudgetBase::Positives,
            video_rep: VideoRepresentation::Frames,
            max_concurrency: 8,
            retry: RetryPolicy::default(),
            providers: ProvidersConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::Config("n_frames must be at least 1".into()));
        }
        if !(self.localizer_temperature > 0.0) {
            return Err(Error::Config("localizer_temperature must be > 0".into()));
        }
        if self.max_concurrency == 0 {
            return Err(Error::Config("max_concurrency must be at least 1".into()));
        }
        for (c, fps) in &self.fps_overrides {
            if !(*fps > 0.0) {
                return Err(Error::Config(format!("fps override for {} must be > 0", c.as_str())));
            }
        }
        for (role, p) in [("llm", &self.providers.llm), ("vlm", &self.providers.vlm)] {
            if p.kind == ProviderKind::OpenAi && (p.endpoint.is_none() || p.model.is_none()) {
                return Err(Error::Config(format!("providers.{role} needs endpoint and model")));
            }
        }
        let e = &self.providers.embedder;
        if e.kind == EmbedderKind::Precomputed && e.path.is_none() {
            return Err(Error::Config("providers.embedder.path is required for precomputed".into()));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.dataset_root.join("manifest.jsonl"))
    }

    pub fn fps(&self) -> FpsOverrides {
        FpsOverrides(self.fps_overrides.clone())
    }

    /// Stable hash of the settings that affect results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("serializable");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable")
    }
}

fn api_key(spec: &ProviderSpec, default_env: &str) -> Option<String> {
    let var = spec.api_key_env.as_deref().unwrap_or(default_env);
    std::env::var(var).ok().filter(|k| !k.is_empty())
}

fn live(spec: &ProviderSpec, default_env: &str, max_concurrency: usize) -> Result<Throttled<OpenAiCompatible>> {
    let client = OpenAiCompatible::new(
        spec.endpoint.clone().unwrap_or_default(),
        spec.model.clone().unwrap_or_default(),
        api_key(spec, default_env),
    )?;
    let t = Throttled::new(client, max_concurrency);
    Ok(match spec.requests_per_second {
        Some(r) if r > 0.0 => t.with_rate(max_concurrency as u32, r),
        _ => t,
    })
}

/// Instantiate the configured providers.
pub fn build_models(cfg: &RunConfig) -> Result<Models> {
    let p = &cfg.providers;
    let llm: Arc<dyn LlmProvider> = match p.llm.kind {
        ProviderKind::Simulated => Arc::new(SimulatedLlm),
        ProviderKind::OpenAi => Arc::new(live(&p.llm, "VIDDIFF_LLM_API_KEY", cfg.max_concurrency)?),
    };
    let vlm: Arc<dyn VlmProvider> = match p.vlm.kind {
        ProviderKind::Simulated => Arc::new(SimulatedVlm),
        ProviderKind::OpenAi => Arc::new(live(&p.vlm, "VIDDIFF_VLM_API_KEY", cfg.max_concurrency)?),
    };
    let dims = p.embedder.dims.unwrap_or(16);
    let embedder: Arc<dyn Embedder> = match p.embedder.kind {
        EmbedderKind::Mock => Arc::new(MockEmbedder::new(dims)),
        EmbedderKind::Precomputed => Arc::new(PrecomputedEmbedder::open(p.embedder.path.clone().expect("checked"))?),
        EmbedderKind::Http => {
            let url = std::env::var("VIDDIFF_EMBED_URL")
                .ok()
                .filter(|u| !u.is_empty())
                .or_else(|| p.embedder.url.clone())
                .ok_or_else(|| Error::Config("providers.embedder.url or VIDDIFF_EMBED_URL is required".into()))?;
            Arc::new(HttpEmbedder::new(url)?)
        }
    };
    Ok(Models::new(llm, vlm, embedder)
        .with_retry(cfg.retry)
        .with_seed(Some(cfg.seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn parses_partial_file() {
        let cfg = RunConfig::from_toml(
            r#"
            dataset_root = "data"
            splits = ["easy", "hard"]
            localizer = "oracle"
            task = "open"
            [fps_overrides]
            surgery = 2.0
            [providers.llm]
            kind = "openai"
            endpoint = "http://localhost:1/v1/chat/completions"
            model = "m"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.splits, vec![Split::Easy, Split::Hard]);
        assert_eq!(cfg.localizer, LocalizerMode::Oracle);
        assert_eq!(cfg.fps_overrides[&Category::Surgery], 2.0);
        assert_eq!(cfg.manifest_path(), PathBuf::from("data/manifest.jsonl"));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("n_frames = 0").is_err());
        assert!(RunConfig::from_toml("unknown_key = 1").is_err());
        assert!(RunConfig::from_toml("[providers.vlm]\nkind = \"openai\"").is_err());
        assert!(RunConfig::from_toml("[fps_overrides]\nmusic = -1.0").is_err());
    }

    #[test]
    fn out_dir_does_not_change_hash() {
        let a = RunConfig::default();
        let b = RunConfig {
            out_dir: "elsewhere".into(),
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(a.hash(), c.hash());
    }
}

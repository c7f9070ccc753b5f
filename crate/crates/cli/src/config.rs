use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use gift_core::align::{AlignConfig, AlignMethod};
use gift_core::eval::ExperimentConfig;
use gift_core::intent::IntentConfig;
use gift_core::lm::HttpConfig;
use gift_core::reward::IrlConfig;
use gift_core::world::GeneratorConfig;

/// A usage or configuration problem (exit code 1).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Oracle,
    Replay,
    Http,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Oracle only: probability that an alignment entry is redirected.
    pub noise_rate: f64,
    /// Oracle only: base seed of the noise stream.
    pub oracle_seed: u64,
    /// Replay file to serve from (`replay`).
    pub replay: Option<PathBuf>,
    /// Connection settings (`http`); base URL and key fall back to the
    /// environment.
    pub http: Option<HttpConfig>,
    /// Persistent response cache, loaded before and saved after a command.
    pub cache: Option<PathBuf>,
    /// Append every upstream response to this replay file.
    pub record: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_scenes: usize,
    pub generator: Option<GeneratorConfig>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_scenes: 20,
            generator: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IntentSection {
    #[serde(flatten)]
    pub config: IntentConfig,
    /// Independent inference runs aggregated by the sanity check.
    pub n_runs: usize,
}

impl Default for IntentSection {
    fn default() -> Self {
        IntentSection {
            config: IntentConfig::default(),
            n_runs: 10,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingPaths {
    pub vision: Option<PathBuf>,
    pub language: Option<PathBuf>,
    /// Text-embedding fixture for the intent sanity check.
    pub text: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSection {
    pub method: String,
    pub n_calibration: usize,
    pub n_evaluation: usize,
    /// Largest tolerated fraction of held-out violations.
    pub max_violation_rate: f64,
}

impl Default for BoundSection {
    fn default() -> Self {
        BoundSection {
            method: "language_non_oracle".into(),
            n_calibration: 100,
            n_evaluation: 100,
            max_violation_rate: 0.05,
        }
    }
}

/// Optional thresholds checked by `gift report`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectations {
    pub min_in_distribution: Option<f64>,
    /// Minimum win rate per method name.
    pub min_win_rate: std::collections::BTreeMap<String, f64>,
    /// Minimum F1 on `S_R` and `S_conf` per method name.
    pub min_f1: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub irl: IrlConfig,
    #[serde(default)]
    pub intent: IntentSection,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub embeddings: EmbeddingPaths,
    #[serde(default)]
    pub eval: ExperimentConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub bound: BoundSection,
    #[serde(default)]
    pub expect: Expectations,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_methods() -> Vec<String> {
    [
        "gift",
        "lm_no_intent",
        "vision_oracle",
        "vision_non_oracle",
        "language_oracle",
        "language_non_oracle",
        "ground_truth",
        "all_distractor",
    ]
    .map(String::from)
    .to_vec()
}

/// Method names accepted in `methods`; the embedding baselines carry a
/// threshold suffix.
pub fn parse_method(name: &str) -> Result<(AlignMethod, Option<bool>)> {
    let (base, oracle) = if let Some(b) = name.strip_suffix("_non_oracle") {
        (b, Some(false))
    } else if let Some(b) = name.strip_suffix("_oracle") {
        (b, Some(true))
    } else {
        (name, None)
    };
    let method = match (base, oracle.is_some()) {
        ("vision", true) => AlignMethod::VisionEmbedding,
        ("language", true) => AlignMethod::LanguageEmbedding,
        (other, false) => other
            .parse::<AlignMethod>()
            .map_err(|_| config_err(format!("unknown method `{name}`")))?,
        _ => return Err(config_err(format!("unknown method `{name}`"))),
    };
    if matches!(
        method,
        AlignMethod::VisionEmbedding | AlignMethod::LanguageEmbedding
    ) && oracle.is_none()
    {
        return Err(config_err(format!(
            "method `{name}` needs an `_oracle` or `_non_oracle` suffix"
        )));
    }
    Ok((method, oracle))
}

/// Replaces `${VAR}` with the value of environment variable `VAR`.
pub fn interpolate(text: &str) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| config_err("unterminated `${` in config"))?;
        let name = &after[..end];
        if name.is_empty()
            || !name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            return Err(config_err(format!("invalid variable name `{name}`")));
        }
        let value = std::env::var(name)
            .map_err(|_| config_err(format!("environment variable `{name}` is not set")))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads, interpolates, and parses a config; relative paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let text = interpolate(&raw)?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.task);
        resolve(base, &mut self.out_dir);
        for p in [
            &mut self.backend.replay,
            &mut self.backend.cache,
            &mut self.backend.record,
            &mut self.prompts_dir,
            &mut self.embeddings.vision,
            &mut self.embeddings.language,
            &mut self.embeddings.text,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
    }

    /// Checks referenced inputs exist and scalar settings are sane.
    pub fn validate(&self) -> Result<()> {
        let must_exist = |what: &str, p: &Path| -> Result<()> {
            if p.exists() {
                Ok(())
            } else {
                Err(config_err(format!("{what} {} does not exist", p.display())))
            }
        };
        must_exist("task file", &self.task)?;
        if let Some(p) = &self.prompts_dir {
            must_exist("prompts directory", p)?;
        }
        for p in [
            &self.embeddings.vision,
            &self.embeddings.language,
            &self.embeddings.text,
        ]
        .into_iter()
        .flatten()
        {
            must_exist("embedding file", p)?;
        }
        if self.backend.kind == BackendKind::Replay {
            let p = self
                .backend
                .replay
                .as_ref()
                .ok_or_else(|| config_err("backend `replay` needs `backend.replay`"))?;
            must_exist("replay file", p)?;
        }
        if !(0.0..=1.0).contains(&self.backend.noise_rate) {
            return Err(config_err("backend.noise_rate must lie in [0, 1]"));
        }
        if self.eval.seeds.is_empty() {
            return Err(config_err("eval.seeds must be non-empty"));
        }
        if self.dataset.n_scenes == 0 {
            return Err(config_err("dataset.n_scenes must be positive"));
        }
        if self.align.n_runs == 0 || self.intent.n_runs == 0 {
            return Err(config_err("n_runs must be positive"));
        }
        for m in &self.methods {
            parse_method(m)?;
        }
        parse_method(&self.bound.method)?;
        Ok(())
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

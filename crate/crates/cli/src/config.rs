//! Run configuration: one TOML file plus command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vpr_core::{AggregationConfig, EvalConfig};
use vpr_refiner::{MllmClientConfig, MockMode, PromptComponents, SceneKind};

/// Which model answers refine prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RefinerKind {
    Live,
    Mock(MockMode),
}

impl Default for RefinerKind {
    fn default() -> Self {
        RefinerKind::Mock(MockMode::Identity)
    }
}

impl fmt::Display for RefinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefinerKind::Live => f.write_str("live"),
            RefinerKind::Mock(m) => write!(f, "mock:{m}"),
        }
    }
}

impl FromStr for RefinerKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "live" {
            return Ok(RefinerKind::Live);
        }
        match s.strip_prefix("mock:") {
            Some(mode) => Ok(RefinerKind::Mock(mode.parse()?)),
            None => bail!("unknown refiner {s:?} (expected live or mock:<kind>)"),
        }
    }
}

impl TryFrom<String> for RefinerKind {
    type Error = anyhow::Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RefinerKind> for String {
    fn from(k: RefinerKind) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub features_dir: PathBuf,
    pub out_dir: PathBuf,
    pub aggregation: AggregationConfig,
    /// Candidates retrieved per query and passed to the refiner.
    pub k: usize,
    pub scene: SceneKind,
    pub prompt: PromptComponents,
    /// Directory of template files overriding the built-in prompts.
    pub templates_dir: Option<PathBuf>,
    pub refiner: RefinerKind,
    /// Recorded answers for `mock:scripted`.
    pub transcript: Option<PathBuf>,
    /// Worker threads for per-query work; all cores when unset.
    pub workers: Option<usize>,
    pub client: MllmClientConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: "manifest.jsonl".into(),
            features_dir: "features".into(),
            out_dir: "out".into(),
            aggregation: AggregationConfig::default(),
            k: 10,
            scene: SceneKind::default(),
            prompt: PromptComponents::all(),
            templates_dir: None,
            refiner: RefinerKind::default(),
            transcript: None,
            workers: None,
            client: MllmClientConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file; relative paths in it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.rebase(path.parent().unwrap_or(Path::new("")));
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.manifest);
        join(&mut self.features_dir);
        join(&mut self.out_dir);
        for p in [
            &mut self.templates_dir,
            &mut self.transcript,
            &mut self.client.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.aggregation.validate()?;
        self.eval.validate()?;
        self.client.validate()?;
        if self.k == 0 {
            bail!("k must be positive");
        }
        if self.k < self.eval.max_k() {
            bail!(
                "k = {} is smaller than the largest evaluated K = {}",
                self.k,
                self.eval.max_k()
            );
        }
        if self.workers == Some(0) {
            bail!("workers must be positive");
        }
        if self.refiner == RefinerKind::Mock(MockMode::Scripted) && self.transcript.is_none() {
            bail!("mock:scripted needs a transcript file");
        }
        Ok(())
    }

    /// Response cache location; defaults to `cache` under the output directory.
    pub fn cache_dir(&self) -> PathBuf {
        self.client
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn index_path(&self) -> PathBuf {
        self.out_dir.join("index.vpri")
    }

    pub fn retrieval_path(&self) -> PathBuf {
        self.out_dir.join("retrieval.jsonl")
    }

    pub fn rerank_path(&self) -> PathBuf {
        self.out_dir.join("rerank.jsonl")
    }

    pub fn artifacts_dir(&self) -> PathBuf {
        self.out_dir.join("artifacts")
    }
}

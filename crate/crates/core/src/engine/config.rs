use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::llm::{api_key_env_var, BackendConfig, ChatBackend, HttpBackend, MockBackend, Secret};
use crate::task::TaskSpec;

/// `llm.use` value selecting the scripted backend; needs no api key.
pub const MOCK_PROVIDER: &str = "mock";

const TOP_LEVEL_KEYS: [&str; 6] = ["api_key", "llm", "dataset", "database", "task", "engine"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    #[serde(rename = "use")]
    pub provider: String,
    pub model_name: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout: Option<f64>,
    /// Scripted replies for the mock backend, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub data_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseConfig {
    pub schema_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task_meta: Vec<TaskSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub exec_process: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_dir: Option<String>,
    /// Instances in flight per task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concurrency: Option<usize>,
    /// Tasks in flight at once.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_concurrency: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict_sequential: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark_root: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplars: Option<String>,
}

/// The root configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootConfig {
    #[serde(default)]
    pub api_key: BTreeMap<String, Secret>,
    pub llm: LlmConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub database: Option<DatabaseConfig>,
    pub task: TaskConfig,
    pub engine: EngineConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum UnknownKeys {
    #[default]
    Error,
    Warn,
}

/// Values that override the file. Apply CLI flags first, then values set in
/// code, so code wins over flags and flags win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub report_dir: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub task_concurrency: Option<usize>,
    pub strict_sequential: Option<bool>,
    pub model_name: Option<String>,
    pub temperature: Option<f64>,
}

pub fn load_config(source: &str) -> Result<RootConfig> {
    load_config_with(source, UnknownKeys::Error)
}

/// Parses `source`, which is either inline JSON or a path to a JSON file,
/// then validates the result.
pub fn load_config_with(source: &str, unknown: UnknownKeys) -> Result<RootConfig> {
    let (text, base_dir) = if source.trim_start().starts_with('{') {
        (source.to_owned(), PathBuf::from("."))
    } else {
        let path = Path::new(source);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        (text, base.to_path_buf())
    };
    let mut config = parse_config(&text, unknown)?;
    config.base_dir = base_dir;
    config.validate()?;
    Ok(config)
}

/// Parses without validating.
pub fn parse_config(text: &str, unknown: UnknownKeys) -> Result<RootConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::json("config", e))?;
    let Value::Object(map) = &value else {
        return Err(Error::Config("config must be a JSON object".into()));
    };
    let extra: Vec<&str> = map.keys().map(String::as_str).filter(|k| !TOP_LEVEL_KEYS.contains(k)).collect();
    if !extra.is_empty() {
        let msg = format!("unknown top-level config keys: {}", extra.join(", "));
        match unknown {
            UnknownKeys::Error => return Err(Error::Config(msg)),
            UnknownKeys::Warn => log::warn!("{msg}"),
        }
    }
    let mut stripped = map.clone();
    stripped.retain(|k, _| TOP_LEVEL_KEYS.contains(&k.as_str()));
    serde_json::from_value(Value::Object(stripped)).map_err(|e| Error::json("config", e))
}

impl RootConfig {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for spec in &self.task.task_meta {
            spec.validate()?;
            if !ids.insert(spec.task_id.as_str()) {
                return Err(Error::Config(format!("task_id `{}` appears twice in task_meta", spec.task_id)));
            }
        }
        let mut seen = BTreeSet::new();
        for id in &self.engine.exec_process {
            if !ids.contains(id.as_str()) {
                return Err(Error::Config(format!("exec_process names `{id}`, which is not in task_meta")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Config(format!("exec_process lists `{id}` twice")));
            }
        }
        if !(0.0..=2.0).contains(&self.llm.temperature) {
            return Err(Error::Config(format!("llm.temperature {} outside [0, 2]", self.llm.temperature)));
        }
        if self.llm.provider != MOCK_PROVIDER && self.api_key_for_provider().is_none() {
            return Err(Error::Config(format!(
                "no api_key for llm.use `{}` (set api_key.{} or {})",
                self.llm.provider,
                self.llm.provider,
                api_key_env_var(&self.llm.provider)
            )));
        }
        for (name, value) in [("engine.concurrency", self.engine.concurrency), ("engine.task_concurrency", self.engine.task_concurrency)] {
            if value == Some(0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// The key for `llm.use`: the env override if set, else the file value.
    fn api_key_for_provider(&self) -> Option<Secret> {
        std::env::var(api_key_env_var(&self.llm.provider))
            .ok()
            .filter(|k| !k.is_empty())
            .map(Secret::new)
            .or_else(|| self.api_key.get(&self.llm.provider).filter(|k| !k.is_empty()).cloned())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(dir) = &o.report_dir {
            self.engine.report_dir = Some(dir.to_string_lossy().into_owned());
        }
        if o.concurrency.is_some() {
            self.engine.concurrency = o.concurrency;
        }
        if o.task_concurrency.is_some() {
            self.engine.task_concurrency = o.task_concurrency;
        }
        if o.strict_sequential.is_some() {
            self.engine.strict_sequential = o.strict_sequential;
        }
        if let Some(m) = &o.model_name {
            self.llm.model_name = m.clone();
        }
        if let Some(t) = o.temperature {
            self.llm.temperature = t;
        }
    }

    /// Applies `cli` then `code`, then validates again.
    pub fn with_overrides(mut self, cli: &Overrides, code: &Overrides) -> Result<Self> {
        self.apply_overrides(cli);
        self.apply_overrides(code);
        self.validate()?;
        Ok(self)
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskSpec> {
        self.task.task_meta.iter().find(|t| t.task_id == task_id)
    }

    /// Task specs in `exec_process` order.
    pub fn exec_tasks(&self) -> Vec<&TaskSpec> {
        self.engine.exec_process.iter().filter_map(|id| self.task(id)).collect()
    }

    pub fn resolve_path(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn report_dir(&self) -> PathBuf {
        self.resolve_path(self.engine.report_dir.as_deref().unwrap_or("reports"))
    }

    pub fn benchmark_root(&self) -> PathBuf {
        self.resolve_path(self.engine.benchmark_root.as_deref().unwrap_or("benchmarks"))
    }

    pub fn strict_sequential(&self) -> bool {
        self.engine.strict_sequential.unwrap_or(false)
    }

    pub fn backend_config(&self) -> BackendConfig {
        let mut cfg = BackendConfig::new(&self.llm.provider, &self.llm.model_name);
        cfg.temperature = self.llm.temperature;
        if let Some(url) = &self.llm.base_url {
            cfg.base_url = url.clone();
        }
        if let Some(r) = self.llm.max_retries {
            cfg.max_retries = r;
        }
        if let Some(t) = self.llm.timeout {
            cfg.timeout = t;
        }
        if let Some(key) = self.api_key_for_provider() {
            cfg.api_key = key;
        }
        cfg
    }

    /// The scripted mock for `llm.use = "mock"`, else the HTTP backend.
    pub fn build_backend(&self) -> Result<Arc<dyn ChatBackend>> {
        if self.llm.provider == MOCK_PROVIDER {
            return Ok(Arc::new(match &self.llm.mock_script {
                Some(p) => MockBackend::load(&self.resolve_path(p))?,
                None => MockBackend::new(),
            }));
        }
        Ok(Arc::new(HttpBackend::new(self.backend_config())?))
    }

    /// Pretty JSON; api keys serialize as `***`.
    pub fn redacted_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("config", e))
    }

    /// sha256 of the redacted config. The report directory is left out so
    /// the same run written to two places has one digest.
    pub fn digest(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.engine.report_dir = None;
        let text = copy.redacted_json()?;
        Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }
}

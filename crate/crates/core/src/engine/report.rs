use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::task::TokenCount;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Scalar(f64),
    RecallPrecision { recall: f64, precision: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskTiming {
    pub wall_time: f64,
    pub llm_latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub instance_count: usize,
    pub succeeded: usize,
    pub metrics: BTreeMap<String, MetricValue>,
    pub tokens: TokenCount,
    pub calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timing: TaskTiming,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub started_at: String,
    pub finished_at: String,
}

/// Contents of `report.json`. Everything time-dependent sits under a
/// `timing` key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config_digest: String,
    pub tasks: Vec<TaskReport>,
    pub timing: RunTiming,
}

impl RunReport {
    pub fn task(&self, task_id: &str) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json("report", e))?;
        text.push('\n');
        Ok(text)
    }

    pub fn write(&self, report_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(report_dir).map_err(|e| Error::io(report_dir, e))?;
        let path = report_dir.join(REPORT_FILE);
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    /// One line per task, for terminals.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for t in &self.tasks {
            let metrics: Vec<String> = t
                .metrics
                .iter()
                .map(|(k, v)| match v {
                    MetricValue::Scalar(x) => format!("{k}={x:.4}"),
                    MetricValue::RecallPrecision { recall, precision } => {
                        format!("{k}=(recall {recall:.4}, precision {precision:.4})")
                    }
                })
                .collect();
            out.push_str(&format!(
                "{}: {}/{} ok, tokens {}+{}, {:.2}s{}{}\n",
                t.task_id,
                t.succeeded,
                t.instance_count,
                t.tokens.prompt,
                t.tokens.completion,
                t.timing.wall_time,
                if metrics.is_empty() { String::new() } else { format!(", {}", metrics.join(", ")) },
                t.error.as_deref().map(|e| format!(", error: {e}")).unwrap_or_default(),
            ));
        }
        out
    }
}

/// Removes every `timing` key, at any depth.
pub fn strip_timing(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove("timing");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

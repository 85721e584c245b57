use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

const BUILTIN: &[(&str, &str)] = &[
    ("reduce", include_str!("../../templates/reduce.txt")),
    ("parse", include_str!("../../templates/parse.txt")),
    ("generate", include_str!("../../templates/generate.txt")),
    ("decompose", include_str!("../../templates/decompose.txt")),
    ("decompose_step", include_str!("../../templates/decompose_step.txt")),
    ("scale", include_str!("../../templates/scale.txt")),
    ("optimize", include_str!("../../templates/optimize.txt")),
    ("select", include_str!("../../templates/select.txt")),
];

/// Prompt templates: the built-in set plus overrides keyed by registry name
/// (`DINSQLGenerator`) or by template id (`generate`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Templates {
    overrides: BTreeMap<String, String>,
}

impl Templates {
    pub fn builtin() -> Self {
        Self::default()
    }

    /// Loads every `*.txt` in `dir` as an override named by its file stem.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut overrides = BTreeMap::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                overrides.insert(stem.to_owned(), text);
            }
        }
        Ok(Self { overrides })
    }

    pub fn with_override(mut self, key: impl Into<String>, text: impl Into<String>) -> Self {
        self.overrides.insert(key.into(), text.into());
        self
    }

    /// Template for an actor: override by registry name, then by template id,
    /// then the built-in for the id.
    pub fn resolve(&self, registry_name: Option<&str>, template_id: &str) -> Result<&str> {
        registry_name
            .and_then(|n| self.overrides.get(n))
            .or_else(|| self.overrides.get(template_id))
            .map(String::as_str)
            .or_else(|| BUILTIN.iter().find(|(id, _)| *id == template_id).map(|(_, t)| *t))
            .ok_or_else(|| Error::Config(format!("no prompt template `{template_id}`")))
    }
}

/// Substitutes `{name}` placeholders in one pass; unknown placeholders and
/// braces inside substituted values are left as they are.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let value = close.and_then(|c| vars.iter().find(|(k, _)| *k == &after[..c]).map(|(_, v)| (*v, c)));
        match value {
            Some((v, c)) => {
                out.push_str(v);
                rest = &after[c + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

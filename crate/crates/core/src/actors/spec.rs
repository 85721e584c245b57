use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::merge::MergePolicy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActorKind {
    Reduce,
    Parse,
    Generate,
    Decompose,
    Scale,
    Optimize,
    Select,
    Pipeline,
    Tree,
}

impl ActorKind {
    pub const ATOMIC: [ActorKind; 7] = [
        ActorKind::Reduce,
        ActorKind::Parse,
        ActorKind::Generate,
        ActorKind::Decompose,
        ActorKind::Scale,
        ActorKind::Optimize,
        ActorKind::Select,
    ];

    pub fn is_composite(self) -> bool {
        matches!(self, ActorKind::Pipeline | ActorKind::Tree)
    }

    /// Built-in prompt template id for the kind.
    pub fn template_id(self) -> &'static str {
        match self {
            ActorKind::Reduce => "reduce",
            ActorKind::Parse => "parse",
            ActorKind::Generate => "generate",
            ActorKind::Decompose => "decompose",
            ActorKind::Scale => "scale",
            ActorKind::Optimize => "optimize",
            ActorKind::Select => "select",
            ActorKind::Pipeline => "pipeline",
            ActorKind::Tree => "tree",
        }
    }
}

impl fmt::Display for ActorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A node of a workflow tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub kind: ActorKind,
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ActorSpec>,
}

impl ActorSpec {
    pub fn atomic(kind: ActorKind, name: impl Into<String>) -> Self {
        Self { kind, name: name.into(), params: BTreeMap::new(), children: Vec::new() }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_owned(), value.into());
        self
    }

    pub fn param_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| Error::Config(format!("`{}`: param `{key}` must be a non-negative integer", self.name))),
        }
    }

    pub fn param_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_bool()
                .ok_or_else(|| Error::Config(format!("`{}`: param `{key}` must be a boolean", self.name))),
        }
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(Value::as_str)
    }

    /// Merge policy of a Tree: defaults overridden by `params.merge`.
    pub fn merge_policy(&self) -> Result<MergePolicy> {
        match self.params.get("merge") {
            None => Ok(MergePolicy::default()),
            Some(v) => MergePolicy::from_overrides(v)
                .map_err(|e| Error::Config(format!("`{}`: invalid merge policy: {e}", self.name))),
        }
    }

    /// Number of actors in the tree, composites included.
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(ActorSpec::size).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ActorSpec::depth).max().unwrap_or(0)
    }

    /// Atomic actor names in execution order.
    pub fn atomic_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |s| {
            if !s.kind.is_composite() {
                out.push(s.name.as_str());
            }
        });
        out
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a ActorSpec)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut ActorSpec)) {
        f(self);
        for c in &mut self.children {
            c.visit_mut(f);
        }
    }

    /// Checks child counts, parameters and name uniqueness over the tree.
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        let mut problem = None;
        self.visit(&mut |s| {
            if problem.is_some() {
                return;
            }
            if s.kind.is_composite() && s.children.is_empty() {
                problem = Some(format!("{} `{}` has no children", s.kind, s.name));
            } else if !s.kind.is_composite() && !s.children.is_empty() {
                problem = Some(format!("atomic actor `{}` ({}) cannot have children", s.name, s.kind));
            } else if s.name.is_empty() {
                problem = Some(format!("{} actor has an empty name", s.kind));
            } else if !names.insert(s.name.as_str()) {
                problem = Some(format!("actor name `{}` is used more than once", s.name));
            } else if s.kind == ActorKind::Tree {
                if let Err(e) = s.merge_policy() {
                    problem = Some(e.to_string());
                }
            }
        });
        match problem {
            Some(p) => Err(Error::Config(p)),
            None => Ok(()),
        }
    }

    /// Renames repeated names to `name#2`, `name#3`, ... in pre-order.
    pub(crate) fn uniquify_names(&mut self) {
        let mut seen: BTreeSet<String> = BTreeSet::new();
        self.visit_mut(&mut |s| {
            if seen.contains(&s.name) {
                let base = s.name.clone();
                let mut n = 2;
                while seen.contains(&format!("{base}#{n}")) {
                    n += 1;
                }
                s.name = format!("{base}#{n}");
            }
            seen.insert(s.name.clone());
        });
    }
}

fn composite(kind: ActorKind, children: Vec<ActorSpec>, params: BTreeMap<String, Value>) -> Result<ActorSpec> {
    if children.is_empty() {
        return Err(Error::Config(format!("{kind} needs at least one child")));
    }
    let mut spec = ActorSpec { kind, name: kind.to_string(), params, children };
    spec.uniquify_names();
    spec.validate()?;
    Ok(spec)
}

/// Sequential composition: each child's output state feeds the next.
pub fn compose_pipeline(children: Vec<ActorSpec>) -> Result<ActorSpec> {
    composite(ActorKind::Pipeline, children, BTreeMap::new())
}

/// Fan-out composition: every child gets the same input, outputs are merged
/// left to right under `policy`.
pub fn compose_tree(children: Vec<ActorSpec>, policy: MergePolicy) -> Result<ActorSpec> {
    let mut params = BTreeMap::new();
    if policy != MergePolicy::default() {
        params.insert("merge".to_owned(), serde_json::to_value(policy).expect("merge policy serializes"));
    }
    composite(ActorKind::Tree, children, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(name: &str) -> ActorSpec {
        ActorSpec::atomic(ActorKind::Generate, name)
    }

    #[test]
    fn atomic_with_children_is_invalid() {
        let mut s = gen("g");
        s.children.push(gen("h"));
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_composites_are_rejected() {
        assert!(compose_pipeline(vec![]).is_err());
        assert!(compose_tree(vec![], MergePolicy::default()).is_err());
    }

    #[test]
    fn duplicate_names_are_renumbered() {
        let inner = compose_pipeline(vec![gen("g"), gen("g")]).unwrap();
        let outer = compose_pipeline(vec![inner, gen("g")]).unwrap();
        assert_eq!(outer.atomic_names(), ["g", "g#2", "g#3"]);
        let flat = compose_pipeline(vec![gen("g"), gen("g"), gen("g")]).unwrap();
        assert_eq!(flat.atomic_names(), outer.atomic_names());
        assert!(outer.validate().is_ok());
    }

    #[test]
    fn params_are_typed() {
        let s = gen("g").with_param("k", 5).with_param("flag", true).with_param("bad", "x");
        assert_eq!(s.param_usize("k", 1).unwrap(), 5);
        assert_eq!(s.param_usize("absent", 7).unwrap(), 7);
        assert!(s.param_bool("flag", false).unwrap());
        assert!(s.param_usize("bad", 1).is_err());
    }
}

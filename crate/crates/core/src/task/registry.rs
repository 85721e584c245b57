use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::actors::ActorRegistry;
use crate::data::{load_dataset, load_schema, DatabaseSchema, Dataset};
use crate::error::{Error, Result};

pub const GENERATE_TASK: &str = "GenerateTask";

/// Resolves the names a task refers to: dataset and schema descriptors, actor
/// names and task types.
///
/// Descriptors have the form `name:split[:variant]` and map to files under
/// `benchmark_root`:
///
/// - dataset: `{root}/{name}/{split}/dataset.json`, or `{variant}.json` when a
///   variant is given;
/// - schema: `{root}/{name}/{split}/schema.json` or the column-file directory
///   `{root}/{name}/{split}/schema/`;
/// - databases: `{root}/{name}/{split}/databases/{db_id}/{db_id}.sqlite`.
///
/// A descriptor containing `/` or ending in `.json` is taken as a path relative
/// to the root. In-memory registrations take precedence over files.
#[derive(Debug, Clone)]
pub struct Registries {
    pub benchmark_root: PathBuf,
    pub actors: ActorRegistry,
    datasets: BTreeMap<String, Dataset>,
    schemas: BTreeMap<String, Vec<DatabaseSchema>>,
    db_roots: BTreeMap<String, PathBuf>,
    task_types: BTreeSet<String>,
}

impl Registries {
    pub fn new(benchmark_root: impl Into<PathBuf>) -> Self {
        Self {
            benchmark_root: benchmark_root.into(),
            actors: ActorRegistry::default(),
            datasets: BTreeMap::new(),
            schemas: BTreeMap::new(),
            db_roots: BTreeMap::new(),
            task_types: [GENERATE_TASK.to_owned()].into(),
        }
    }

    pub fn register_dataset(&mut self, descriptor: impl Into<String>, dataset: Dataset) {
        self.datasets.insert(descriptor.into(), dataset);
    }

    pub fn register_schemas(&mut self, descriptor: impl Into<String>, schemas: Vec<DatabaseSchema>) {
        self.schemas.insert(descriptor.into(), schemas);
    }

    /// Directory holding `{db_id}/{db_id}.sqlite` for a schema descriptor.
    pub fn register_db_root(&mut self, schema_descriptor: impl Into<String>, root: impl Into<PathBuf>) {
        self.db_roots.insert(schema_descriptor.into(), root.into());
    }

    pub fn register_task_type(&mut self, task_type: impl Into<String>) {
        self.task_types.insert(task_type.into());
    }

    pub fn knows_task_type(&self, task_type: &str) -> bool {
        self.task_types.contains(task_type)
    }

    fn is_path_like(descriptor: &str) -> bool {
        descriptor.contains('/') || descriptor.ends_with(".json")
    }

    fn split_dir(&self, field: &str, descriptor: &str) -> Result<(PathBuf, String)> {
        let mut parts = descriptor.splitn(3, ':');
        let name = parts.next().unwrap_or_default().trim();
        let split = parts.next().unwrap_or_default().trim();
        let variant = parts.next().unwrap_or_default().trim();
        if name.is_empty() || split.is_empty() {
            return Err(Error::binding(field, format!("descriptor `{descriptor}` is not of the form name:split[:variant]")));
        }
        Ok((self.benchmark_root.join(name).join(split), variant.to_owned()))
    }

    pub fn resolve_dataset(&self, descriptor: &str) -> Result<Dataset> {
        if let Some(ds) = self.datasets.get(descriptor) {
            return Ok(ds.clone());
        }
        let path = if Self::is_path_like(descriptor) {
            self.benchmark_root.join(descriptor)
        } else {
            let (dir, variant) = self.split_dir("data_source", descriptor)?;
            dir.join(if variant.is_empty() { "dataset.json".to_owned() } else { format!("{variant}.json") })
        };
        if !path.is_file() {
            return Err(Error::binding("data_source", format!("`{descriptor}` not found (looked for {})", path.display())));
        }
        load_dataset(descriptor, &path).map_err(|e| Error::binding("data_source", e.to_string()))
    }

    pub fn resolve_schemas(&self, descriptor: &str) -> Result<Vec<DatabaseSchema>> {
        if let Some(s) = self.schemas.get(descriptor) {
            return Ok(s.clone());
        }
        let candidates: Vec<PathBuf> = if Self::is_path_like(descriptor) {
            vec![self.benchmark_root.join(descriptor)]
        } else {
            let (dir, _) = self.split_dir("schema_source", descriptor)?;
            vec![dir.join("schema.json"), dir.join("schema")]
        };
        let path = candidates.iter().find(|p| p.exists()).ok_or_else(|| {
            Error::binding("schema_source", format!("`{descriptor}` not found (looked for {})", candidates[0].display()))
        })?;
        load_schema(descriptor, path).map_err(|e| Error::binding("schema_source", e.to_string()))
    }

    pub fn db_root(&self, schema_descriptor: &str) -> PathBuf {
        if let Some(root) = self.db_roots.get(schema_descriptor) {
            return root.clone();
        }
        if Self::is_path_like(schema_descriptor) {
            let path = self.benchmark_root.join(schema_descriptor);
            return path.parent().map(Path::to_path_buf).unwrap_or_default().join("databases");
        }
        match self.split_dir("schema_source", schema_descriptor) {
            Ok((dir, _)) => dir.join("databases"),
            Err(_) => self.benchmark_root.join("databases"),
        }
    }
}

/// `{root}/{db_id}/{db_id}.sqlite`
pub fn db_path(db_root: &Path, db_id: &str) -> PathBuf {
    db_root.join(db_id).join(format!("{db_id}.sqlite"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::QueryInstance;

    #[test]
    fn descriptor_layout() {
        let dir = tempfile::tempdir().unwrap();
        let split = dir.path().join("spider/dev");
        std::fs::create_dir_all(&split).unwrap();
        std::fs::write(split.join("dataset.json"), r#"[{"question":"q","db_id":"d","query":"SELECT 1"}]"#).unwrap();
        std::fs::write(split.join("small.json"), r#"[]"#).unwrap();
        let reg = Registries::new(dir.path());
        assert_eq!(reg.resolve_dataset("spider:dev:").unwrap().len(), 1);
        assert_eq!(reg.resolve_dataset("spider:dev:small").unwrap().len(), 0);
        assert_eq!(reg.db_root("spider:dev"), split.join("databases"));
        assert_eq!(db_path(&split.join("databases"), "d"), split.join("databases/d/d.sqlite"));
    }

    #[test]
    fn missing_sources_name_the_field() {
        let reg = Registries::new("/nonexistent");
        match reg.resolve_dataset("bird:dev:") {
            Err(Error::Binding { field, .. }) => assert_eq!(field, "data_source"),
            other => panic!("{other:?}"),
        }
        match reg.resolve_schemas("nocolon") {
            Err(Error::Binding { field, .. }) => assert_eq!(field, "schema_source"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn in_memory_registration_wins() {
        let mut reg = Registries::new("/nonexistent");
        let ds = Dataset { source_descriptor: "x:y:".into(), instances: vec![QueryInstance::new("1", "d", "q")] };
        reg.register_dataset("x:y:", ds.clone());
        assert_eq!(reg.resolve_dataset("x:y:").unwrap(), ds);
    }
}

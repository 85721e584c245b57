use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{fold, ColumnRef, ColumnUnit, DatabaseSchema, ForeignKey};
use crate::error::{Error, Result};

/// On-disk form of one column unit. Ordinals record the column's position in
/// its schema and each foreign key's position in the schema's key list, which
/// is what makes reassembly order-preserving.
#[derive(Debug, Serialize, Deserialize)]
struct ColumnFile {
    #[serde(flatten)]
    unit: ColumnUnit,
    ordinal: usize,
    #[serde(default)]
    foreign_keys: Vec<OrdinalForeignKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OrdinalForeignKey {
    ordinal: usize,
    from: ColumnRef,
    to: ColumnRef,
}

/// Writes one JSON file per column under `out_dir/db_id/table/column.json`.
///
/// The schema is validated before anything touches the disk, so a duplicate
/// column leaves `out_dir` untouched. Returns the number of files written.
pub fn decompose_schema(schema: &DatabaseSchema, out_dir: &Path) -> Result<usize> {
    schema.validate()?;

    let db_dir = out_dir.join(&schema.db_id);
    for (ordinal, unit) in schema.columns.iter().enumerate() {
        let table_dir = db_dir.join(&unit.table_name);
        fs::create_dir_all(&table_dir).map_err(|e| Error::io(&table_dir, e))?;
        let foreign_keys = schema
            .foreign_keys_touching(&unit.table_name, &unit.column_name)
            .into_iter()
            .map(|(ordinal, fk)| OrdinalForeignKey { ordinal, from: fk.from.clone(), to: fk.to.clone() })
            .collect();
        let file = ColumnFile { unit: unit.clone(), ordinal, foreign_keys };
        let path = table_dir.join(format!("{}.json", unit.column_name));
        let body = serde_json::to_string_pretty(&file).map_err(|e| Error::json(path.display().to_string(), e))?;
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(schema.columns.len())
}

/// Loads every schema found at `path`.
///
/// A file is read as a centralized schema list, either in this crate's own
/// layout (`[{db_id, columns, foreign_keys}]`) or in the Spider/Bird
/// `tables.json` layout. A directory is read as the output of
/// [`decompose_schema`]. Schemas are returned sorted by `db_id` for
/// directories and in file order for centralized files.
pub fn load_schema(schema_source: &str, path: &Path) -> Result<Vec<DatabaseSchema>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let schemas = if meta.is_dir() {
        load_column_dir(path)?
    } else {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_centralized(schema_source, &text)?
    };
    for schema in &schemas {
        schema.validate()?;
    }
    Ok(schemas)
}

fn sorted_entries(dir: &Path) -> Result<Vec<fs::DirEntry>> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

fn load_column_dir(root: &Path) -> Result<Vec<DatabaseSchema>> {
    let mut schemas = Vec::new();
    for db_entry in sorted_entries(root)? {
        if !db_entry.path().is_dir() {
            continue;
        }
        let db_id = db_entry.file_name().to_string_lossy().into_owned();
        let mut files = Vec::new();
        for table_entry in sorted_entries(&db_entry.path())? {
            if !table_entry.path().is_dir() {
                continue;
            }
            for col_entry in sorted_entries(&table_entry.path())? {
                let path = col_entry.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let file: ColumnFile =
                    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
                if file.unit.db_id != db_id {
                    return Err(Error::SchemaValidation(format!(
                        "{} declares db_id `{}` but lives under `{db_id}`",
                        path.display(),
                        file.unit.db_id
                    )));
                }
                files.push(file);
            }
        }
        schemas.push(reassemble(db_id, files)?);
    }
    Ok(schemas)
}

fn reassemble(db_id: String, mut files: Vec<ColumnFile>) -> Result<DatabaseSchema> {
    files.sort_by_key(|f| f.ordinal);
    if let Some(pair) = files.windows(2).find(|w| w[0].ordinal == w[1].ordinal) {
        return Err(Error::SchemaValidation(format!(
            "`{db_id}`: columns {}.{} and {}.{} share ordinal {}",
            pair[0].unit.table_name, pair[0].unit.column_name, pair[1].unit.table_name, pair[1].unit.column_name,
            pair[0].ordinal
        )));
    }

    let mut keys: BTreeMap<usize, OrdinalForeignKey> = BTreeMap::new();
    for fk in files.iter().flat_map(|f| f.foreign_keys.iter()) {
        match keys.get(&fk.ordinal) {
            Some(existing) if existing != fk => {
                return Err(Error::SchemaValidation(format!(
                    "`{db_id}`: conflicting foreign keys at ordinal {}",
                    fk.ordinal
                )))
            }
            Some(_) => {}
            None => {
                keys.insert(fk.ordinal, fk.clone());
            }
        }
    }

    let columns = files.into_iter().map(|f| f.unit).collect();
    let foreign_keys = keys.into_values().map(|k| ForeignKey { from: k.from, to: k.to }).collect();
    DatabaseSchema::new(db_id, columns, foreign_keys)
}

fn parse_centralized(schema_source: &str, text: &str) -> Result<Vec<DatabaseSchema>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::json(schema_source, e))?;
    let Value::Array(records) = root else {
        return Err(Error::Ingestion(format!("{schema_source}: schema file root must be a JSON array")));
    };
    records
        .into_iter()
        .enumerate()
        .map(|(i, record)| {
            if record.get("column_names_original").is_some() {
                parse_spider_record(i, &record)
            } else {
                serde_json::from_value::<DatabaseSchema>(record)
                    .map_err(|e| Error::json(format!("{schema_source} record {i}"), e))
            }
        })
        .collect()
}

/// Converts one `tables.json` entry (Spider, Bird).
fn parse_spider_record(index: usize, record: &Value) -> Result<DatabaseSchema> {
    let bad = |what: &str| Error::Ingestion(format!("schema record {index}: {what}"));
    let db_id = record.get("db_id").and_then(Value::as_str).ok_or_else(|| bad("missing db_id"))?;
    let str_list = |key: &str| -> Result<Vec<String>> {
        match record.get(key) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| bad(&format!("`{key}` must hold strings"))))
                .collect(),
            Some(_) => Err(bad(&format!("`{key}` must be an array"))),
        }
    };
    let pair_list = |key: &str| -> Result<Vec<(i64, String)>> {
        let Some(Value::Array(items)) = record.get(key) else {
            return Ok(Vec::new());
        };
        items
            .iter()
            .map(|item| {
                let idx = item.get(0).and_then(Value::as_i64);
                let name = item.get(1).and_then(Value::as_str);
                match (idx, name) {
                    (Some(i), Some(n)) => Ok((i, n.to_owned())),
                    _ => Err(bad(&format!("`{key}` entries must be [table_index, name]"))),
                }
            })
            .collect()
    };

    let tables = str_list("table_names_original")?;
    let originals = pair_list("column_names_original")?;
    let natural = pair_list("column_names")?;
    let types = str_list("column_types")?;

    let mut primary = Vec::new();
    if let Some(Value::Array(pks)) = record.get("primary_keys") {
        for pk in pks {
            match pk {
                Value::Number(n) => primary.extend(n.as_u64()),
                Value::Array(group) => primary.extend(group.iter().filter_map(Value::as_u64)),
                _ => return Err(bad("`primary_keys` entries must be integers")),
            }
        }
    }

    // Column 0 is the `*` pseudo-column with table index -1.
    let mut by_index: BTreeMap<usize, ColumnRef> = BTreeMap::new();
    let mut columns = Vec::new();
    for (i, (table_idx, name)) in originals.iter().enumerate() {
        let Ok(t) = usize::try_from(*table_idx) else { continue };
        let table = tables.get(t).ok_or_else(|| bad(&format!("column {i} names unknown table {t}")))?;
        let mut unit = ColumnUnit::new(db_id, table, name, types.get(i).cloned().unwrap_or_default());
        if let Some((_, nat)) = natural.get(i) {
            if fold(nat) != fold(name) {
                unit.description = nat.clone();
            }
        }
        unit.is_primary_key = primary.contains(&(i as u64));
        by_index.insert(i, ColumnRef::new(table, name));
        columns.push(unit);
    }

    let mut foreign_keys = Vec::new();
    if let Some(Value::Array(fks)) = record.get("foreign_keys") {
        for fk in fks {
            let child = fk.get(0).and_then(Value::as_u64).map(|v| v as usize);
            let parent = fk.get(1).and_then(Value::as_u64).map(|v| v as usize);
            let (Some(from), Some(to)) = (child.and_then(|c| by_index.get(&c)), parent.and_then(|p| by_index.get(&p)))
            else {
                return Err(Error::SchemaValidation(format!(
                    "schema record {index} (`{db_id}`): foreign key {fk} references an unknown column"
                )));
            };
            if let Some(unit) = columns
                .iter_mut()
                .find(|c| c.table_name == from.table && c.column_name == from.column)
            {
                unit.foreign_key_ref.get_or_insert_with(|| to.clone());
            }
            foreign_keys.push(ForeignKey { from: from.clone(), to: to.clone() });
        }
    }

    DatabaseSchema::new(db_id, columns, foreign_keys)
}

/// Renders a schema as prompt text: one `TABLE t(c type, ...)` line per table in
/// first-appearance order, then one `FK: a.x -> b.y` line per foreign key.
pub fn schema_to_prompt_text(schema: &DatabaseSchema) -> String {
    let mut lines = Vec::new();
    for table in schema.tables() {
        let cols: Vec<String> = schema
            .columns_of(table)
            .map(|c| {
                if c.data_type.is_empty() {
                    c.column_name.clone()
                } else {
                    format!("{} {}", c.column_name, c.data_type)
                }
            })
            .collect();
        lines.push(format!("TABLE {table}({})", cols.join(", ")));
    }
    for fk in &schema.foreign_keys {
        lines.push(format!("FK: {}.{} -> {}.{}", fk.from.table, fk.from.column, fk.to.table, fk.to.column));
    }
    lines.join("\n")
}

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, ErrorCode, OpenFlags};

use super::tokenize::leading_keyword;
use super::{Cell, ExecOutcome, ResultTable};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_PERMITS: usize = 8;
/// Rows kept per result. Execution continues past the cap (so a runaway query
/// still hits its timeout) but the outcome becomes an error.
pub const DEFAULT_MAX_ROWS: usize = 1_000_000;

/// Only SELECT and WITH statements may run against benchmark databases.
pub fn is_read_only_statement(sql: &str) -> bool {
    matches!(leading_keyword(sql).as_deref(), Some("SELECT" | "WITH"))
}

/// Runs `sql` read-only against the SQLite file at `db_path`.
///
/// SQL failures and timeouts are reported in the [`ExecOutcome`]; an `Err`
/// means the database file itself could not be used.
pub fn execute_sql(db_path: &Path, sql: &str, timeout: Duration) -> Result<ExecOutcome> {
    execute_with_limit(db_path, sql, timeout, DEFAULT_MAX_ROWS)
}

fn unreadable(path: &Path, message: impl std::fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(message.to_string()))
}

fn is_interrupt(err: &rusqlite::Error) -> bool {
    err.sqlite_error_code() == Some(ErrorCode::OperationInterrupted)
}

fn is_not_a_database(err: &rusqlite::Error) -> bool {
    matches!(err.sqlite_error_code(), Some(ErrorCode::NotADatabase | ErrorCode::CannotOpen | ErrorCode::PermissionDenied))
}

fn to_cell(value: ValueRef<'_>) -> Cell {
    match value {
        ValueRef::Null => Cell::Null,
        ValueRef::Integer(i) => Cell::Integer(i),
        ValueRef::Real(r) => Cell::Real(r),
        ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Cell::Bytes { blob: b.to_vec() },
    }
}

fn execute_with_limit(db_path: &Path, sql: &str, timeout: Duration, max_rows: usize) -> Result<ExecOutcome> {
    if !db_path.is_file() {
        return Err(Error::io(db_path, std::io::Error::new(std::io::ErrorKind::NotFound, "database file not found")));
    }
    if !is_read_only_statement(sql) {
        return Ok(ExecOutcome::error("only SELECT or WITH statements may be executed"));
    }

    let flags = OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX;
    let conn = Connection::open_with_flags(db_path, flags).map_err(|e| unreadable(db_path, e))?;
    let deadline = Instant::now() + timeout;
    conn.progress_handler(1_000, Some(move || Instant::now() >= deadline));

    let sql = sql.trim().trim_end_matches(|c: char| c == ';' || c.is_whitespace());
    let mut stmt = match conn.prepare(sql) {
        Ok(stmt) => stmt,
        Err(e) if is_interrupt(&e) => return Ok(ExecOutcome::Timeout),
        Err(e) if is_not_a_database(&e) => return Err(unreadable(db_path, e)),
        Err(e) => return Ok(ExecOutcome::error(e.to_string())),
    };
    if !stmt.readonly() {
        return Ok(ExecOutcome::error("statement would modify the database"));
    }

    let width = stmt.column_count();
    let mut rows = match stmt.query([]) {
        Ok(rows) => rows,
        Err(e) if is_interrupt(&e) => return Ok(ExecOutcome::Timeout),
        Err(e) => return Ok(ExecOutcome::error(e.to_string())),
    };
    let mut table = Vec::new();
    let mut overflow = false;
    loop {
        match rows.next() {
            Ok(Some(row)) => {
                if table.len() >= max_rows {
                    overflow = true;
                } else {
                    let mut cells = Vec::with_capacity(width);
                    for i in 0..width {
                        cells.push(row.get_ref(i).map(to_cell).unwrap_or(Cell::Null));
                    }
                    table.push(cells);
                }
                if Instant::now() >= deadline {
                    return Ok(ExecOutcome::Timeout);
                }
            }
            Ok(None) => break,
            Err(e) if is_interrupt(&e) => return Ok(ExecOutcome::Timeout),
            Err(e) if is_not_a_database(&e) => return Err(unreadable(db_path, e)),
            Err(e) => return Ok(ExecOutcome::error(e.to_string())),
        }
    }
    if overflow {
        return Ok(ExecOutcome::error(format!("result exceeds {max_rows} rows")));
    }
    Ok(ExecOutcome::Ok(ResultTable { rows: table }))
}

/// Counting semaphore keyed by database path.
#[derive(Debug)]
struct DbPermits {
    limit: usize,
    in_use: Mutex<HashMap<PathBuf, usize>>,
    freed: Condvar,
}

struct Permit<'a> {
    owner: &'a DbPermits,
    key: PathBuf,
}

impl DbPermits {
    fn acquire(&self, path: &Path) -> Permit<'_> {
        let mut map = self.in_use.lock().unwrap_or_else(|p| p.into_inner());
        loop {
            let count = map.entry(path.to_path_buf()).or_insert(0);
            if *count < self.limit {
                *count += 1;
                return Permit { owner: self, key: path.to_path_buf() };
            }
            map = self.freed.wait(map).unwrap_or_else(|p| p.into_inner());
        }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut map = self.owner.in_use.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(count) = map.get_mut(&self.key) {
            *count -= 1;
            if *count == 0 {
                map.remove(&self.key);
            }
        }
        self.owner.freed.notify_all();
    }
}

/// Shared executor: applies a timeout and row cap, and limits how many
/// connections are open on any one database file at a time.
#[derive(Debug)]
pub struct SqlExecutor {
    pub timeout: Duration,
    pub max_rows: usize,
    permits: DbPermits,
}

impl Default for SqlExecutor {
    fn default() -> Self {
        Self::new(DEFAULT_TIMEOUT, DEFAULT_PERMITS)
    }
}

impl SqlExecutor {
    pub fn new(timeout: Duration, permits_per_db: usize) -> Self {
        Self {
            timeout,
            max_rows: DEFAULT_MAX_ROWS,
            permits: DbPermits { limit: permits_per_db.max(1), in_use: Mutex::new(HashMap::new()), freed: Condvar::new() },
        }
    }

    pub fn execute(&self, db_path: &Path, sql: &str) -> Result<ExecOutcome> {
        let _permit = self.permits.acquire(db_path);
        execute_with_limit(db_path, sql, self.timeout, self.max_rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.sqlite");
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch("CREATE TABLE t(a INTEGER, b TEXT); INSERT INTO t VALUES (1,'x'),(2,'y');").unwrap();
        (dir, path)
    }

    #[test]
    fn select_one() {
        let (_d, path) = fixture();
        let out = execute_sql(&path, "SELECT 1", Duration::from_secs(5)).unwrap();
        assert_eq!(out, ExecOutcome::ok(vec![vec![Cell::Integer(1)]]));
    }

    #[test]
    fn syntax_error_is_an_outcome() {
        let (_d, path) = fixture();
        match execute_sql(&path, "SELEC 1", Duration::from_secs(5)).unwrap() {
            ExecOutcome::Error { message } => assert!(!message.is_empty()),
            other => panic!("expected error, got {other:?}"),
        }
    }

    #[test]
    fn runaway_recursive_query_times_out() {
        let (_d, path) = fixture();
        let sql = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x+1 FROM c) SELECT * FROM c";
        let start = Instant::now();
        let out = execute_sql(&path, sql, Duration::from_secs(1)).unwrap();
        assert_eq!(out, ExecOutcome::Timeout);
        assert!(start.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn writes_are_refused() {
        let (_d, path) = fixture();
        let out = execute_sql(&path, "DELETE FROM t", Duration::from_secs(5)).unwrap();
        assert!(matches!(out, ExecOutcome::Error { .. }));
        let out = execute_sql(&path, "-- sneaky\nINSERT INTO t VALUES (3,'z')", Duration::from_secs(5)).unwrap();
        assert!(matches!(out, ExecOutcome::Error { .. }));
        let rows = execute_sql(&path, "SELECT count(*) FROM t;", Duration::from_secs(5)).unwrap();
        assert_eq!(rows, ExecOutcome::ok(vec![vec![Cell::Integer(2)]]));
    }

    #[test]
    fn unreadable_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.sqlite");
        assert!(matches!(execute_sql(&missing, "SELECT 1", DEFAULT_TIMEOUT), Err(Error::Io { .. })));
        let junk = dir.path().join("junk.sqlite");
        std::fs::write(&junk, vec![7u8; 4096]).unwrap();
        assert!(matches!(execute_sql(&junk, "SELECT * FROM t", DEFAULT_TIMEOUT), Err(Error::Io { .. })));
    }

    #[test]
    fn row_cap_turns_into_error() {
        let (_d, path) = fixture();
        let out = execute_with_limit(&path, "SELECT * FROM t", DEFAULT_TIMEOUT, 1).unwrap();
        assert!(matches!(out, ExecOutcome::Error { message } if message.contains("exceeds")));
    }

    #[test]
    fn executor_runs_concurrently_under_permits() {
        let (_d, path) = fixture();
        let exec = SqlExecutor::new(Duration::from_secs(5), 2);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let out = exec.execute(&path, "SELECT a FROM t ORDER BY a").unwrap();
                    assert_eq!(out.table().unwrap().rows.len(), 2);
                });
            }
        });
    }
}

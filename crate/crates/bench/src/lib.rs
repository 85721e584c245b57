//! Fixtures shared by the criterion benches in `benches/`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqlactors::llm::MockBackend;
use sqlactors::{ColumnUnit, DatabaseSchema};

pub const SHOP_SQL: &str = "
CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT, city TEXT);
CREATE TABLE orders (id INTEGER PRIMARY KEY, customer_id INTEGER REFERENCES customers(id), total REAL);
";

pub const QUERY: &str = "SELECT c.name, SUM(o.total) FROM customers AS c JOIN orders AS o ON o.customer_id = c.id \
                         WHERE c.city = 'Paris' GROUP BY c.name ORDER BY c.name";

/// Seeded vectors with ids `v0000`, `v0001`, ...
pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| (format!("v{i:04}"), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())).collect()
}

/// Creates `dir/shop/shop.sqlite` with `rows` orders spread over 50 customers.
pub fn shop_db(dir: &Path, rows: usize) -> PathBuf {
    let db_dir = dir.join("shop");
    std::fs::create_dir_all(&db_dir).unwrap();
    let path = db_dir.join("shop.sqlite");
    let mut conn = rusqlite::Connection::open(&path).unwrap();
    conn.execute_batch(SHOP_SQL).unwrap();
    let tx = conn.transaction().unwrap();
    let cities = ["Paris", "Oslo", "Lima", "Quito"];
    for i in 0..50 {
        tx.execute("INSERT INTO customers VALUES (?1, ?2, ?3)", (i, format!("c{i:02}"), cities[i % 4])).unwrap();
    }
    for i in 0..rows {
        tx.execute("INSERT INTO orders VALUES (?1, ?2, ?3)", (i, i % 50, (i % 97) as f64 * 1.25)).unwrap();
    }
    tx.commit().unwrap();
    path
}

pub fn shop_schema() -> Arc<DatabaseSchema> {
    let columns = vec![
        ColumnUnit::new("shop", "customers", "id", "INTEGER").primary_key(),
        ColumnUnit::new("shop", "customers", "name", "TEXT"),
        ColumnUnit::new("shop", "customers", "city", "TEXT"),
        ColumnUnit::new("shop", "orders", "id", "INTEGER").primary_key(),
        ColumnUnit::new("shop", "orders", "customer_id", "INTEGER"),
        ColumnUnit::new("shop", "orders", "total", "REAL"),
    ];
    Arc::new(DatabaseSchema::new("shop", columns, Vec::new()).unwrap())
}

/// Scripted replies for a parse, scale, select, optimize pipeline.
pub fn shop_mock() -> MockBackend {
    let fenced = |sql: &str| format!("```sql\n{sql}\n```");
    MockBackend::new()
        .rule(&["Identify the tables and columns"], "customers.name, customers.city, orders.total")
        .rule(&["Reply with the number"], "1")
        .fallback(fenced(QUERY).as_str())
}

use std::hint::black_box;
use std::sync::Arc;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use serde_json::json;
use sqlactors::actors::{parse_workflow, run_actor, ActorContext, WorkflowState};
use sqlactors::eval::{compare_results, execute_sql, extract_schema_elements};
use sqlactors::retrieval::VectorIndex;
use sqlactors::FrozenClock;
use sqlactors_bench::{random_vectors, shop_db, shop_mock, shop_schema, QUERY};

fn topk(c: &mut Criterion) {
    let mut group = c.benchmark_group("topk");
    for n in [1_000, 10_000] {
        let mut index = VectorIndex::new(64).unwrap();
        for (id, v) in random_vectors(n, 64, 7) {
            index.insert(id, v, None).unwrap();
        }
        let query = random_vectors(1, 64, 8).pop().unwrap().1;
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| index.topk(black_box(&query), 10).unwrap()));
    }
    group.finish();
}

fn compare(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let db = shop_db(dir.path(), 5_000);
    let sql = "SELECT customer_id, total FROM orders";
    let gold = execute_sql(&db, sql, Duration::from_secs(5)).unwrap();
    let pred = execute_sql(&db, &format!("{sql} ORDER BY total DESC"), Duration::from_secs(5)).unwrap();
    c.bench_function("compare_results/5000_rows_unordered", |b| {
        b.iter(|| assert!(compare_results(black_box(&pred), black_box(&gold), sql)))
    });
    c.bench_function("execute_sql/join", |b| b.iter(|| execute_sql(&db, black_box(QUERY), Duration::from_secs(5)).unwrap()));
}

fn extract(c: &mut Criterion) {
    let schema = shop_schema();
    c.bench_function("extract_schema_elements", |b| b.iter(|| extract_schema_elements(black_box(QUERY), &schema)));
}

fn workflow(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let db = shop_db(dir.path(), 200);
    let ctx = ActorContext::new(Arc::new(shop_mock())).with_clock(Arc::new(FrozenClock::new())).with_db_path(&db);
    let spec = parse_workflow(&json!("LinkAlignParser + RSLSQLScaler + CHESSSelector + MACSQLOptimizer")).unwrap();
    let state = WorkflowState::new("Total order value per Paris customer?", shop_schema());
    c.bench_function("workflow/mock_pipeline", |b| b.iter(|| run_actor(&spec, black_box(&state), &ctx).unwrap()));
}

criterion_group!(benches, topk, compare, extract, workflow);
criterion_main!(benches);

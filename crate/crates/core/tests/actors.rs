mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sqlactors::actors::{
    compose_pipeline, compose_tree, parse_workflow, run_actor, ActorContext, ActorKind, ActorSpec, MergePolicy,
    WorkflowState,
};
use sqlactors::llm::MockBackend;
use sqlactors::{DatabaseSchema, Error};

use common::laws::{candidate_set, composite, flatten, nest_tail, random_rooted, random_workflow, same_outcome, seed_state};
use common::{frozen_ctx, shop_mock, CANDIDATES};

struct Fixture {
    _dir: tempfile::TempDir,
    schema: Arc<DatabaseSchema>,
    ctx: ActorContext,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let path = common::make_db(dir.path(), "shop", common::SHOP_SQL);
    let schema = Arc::new(common::introspect(&path, "shop"));
    let ctx = frozen_ctx(shop_mock()).with_db_path(&path);
    Fixture { _dir: dir, schema, ctx }
}

fn fresh(f: &Fixture) -> WorkflowState {
    WorkflowState::new("Which customers live in Paris?", f.schema.clone())
}

fn actor(name: &str) -> ActorSpec {
    parse_workflow(&json!(name)).unwrap()
}

#[test]
fn parse_links_elements_with_tables() {
    let f = fixture();
    let out = run_actor(&actor("LinkAlignParser"), &fresh(&f), &f.ctx).unwrap();
    let linked: Vec<_> = out.linked_elements.clone().unwrap().into_iter().collect();
    assert_eq!(linked, ["customers", "customers.city", "customers.name"]);
    assert_eq!(out.trace.len(), 1);
    assert!(out.trace[0].tokens > 0);
    out.check_invariants().unwrap();
}

#[test]
fn reduce_keeps_k_columns_plus_keys() {
    let f = fixture();
    let spec = actor("Reducer").with_param("k", 2);
    let out = run_actor(&spec, &fresh(&f), &f.ctx).unwrap();
    let reduced = out.candidate_schema.as_ref().unwrap();
    assert!(reduced.columns.len() >= 2 && reduced.columns.len() < f.schema.columns.len());
    for t in reduced.tables() {
        for pk in f.schema.columns_of(t).filter(|c| c.is_primary_key) {
            assert!(reduced.column(t, &pk.column_name).is_some(), "primary key {t}.{} kept", pk.column_name);
        }
    }
    out.check_invariants().unwrap();
}

#[test]
fn generate_sets_final_sql() {
    let f = fixture();
    let out = run_actor(&actor("DINSQLGenerator"), &fresh(&f), &f.ctx).unwrap();
    assert_eq!(out.final_sql.as_deref(), Some(CANDIDATES[0]));
}

#[test]
fn generate_without_sql_leaves_state_and_notes() {
    let f = fixture();
    let ctx = f.ctx.clone().with_backend(Arc::new(MockBackend::new().fallback("I am not sure.")));
    let out = run_actor(&actor("Generator"), &fresh(&f), &ctx).unwrap();
    assert_eq!(out.final_sql, None);
    assert!(out.trace[0].note.as_deref().unwrap().contains("no SQL"));
}

#[test]
fn decompose_records_sub_questions() {
    let f = fixture();
    let out = run_actor(&actor("MACSQLDecompose"), &fresh(&f), &f.ctx).unwrap();
    assert_eq!(out.sub_questions.len(), 2);
    assert_eq!(out.sub_questions[0].sql, "SELECT id FROM customers WHERE city = 'Paris'");
    assert_eq!(out.final_sql.as_deref(), Some(CANDIDATES[0]));
    assert_eq!(out.trace.len(), 3);
}

#[test]
fn scale_adds_distinct_candidates() {
    let f = fixture();
    let out = run_actor(&actor("RSLSQLScaler"), &fresh(&f), &f.ctx).unwrap();
    assert_eq!(out.sql_candidates, CANDIDATES);
    let again = run_actor(&actor("RSLSQLScaler"), &out, &f.ctx).unwrap();
    assert_eq!(again.sql_candidates, CANDIDATES, "duplicates are not re-added");
}

#[test]
fn scale_fails_only_when_every_call_fails() {
    let f = fixture();
    let partial = MockBackend::from_json(
        &json!({"rules": [{"contains": "Candidate 2 of", "reply": {"fail": "boom"}}], "fallback": "```sql\nSELECT 1\n```"})
            .to_string(),
    )
    .unwrap();
    let out = run_actor(&actor("Scaler"), &fresh(&f), &f.ctx.clone().with_backend(Arc::new(partial))).unwrap();
    assert_eq!(out.sql_candidates, ["SELECT 1"]);
    assert!(out.trace[0].note.as_deref().unwrap().contains("1 of 3 calls failed"));

    let dead = MockBackend::new().fallback(sqlactors::llm::MockReply::Fail { fail: "down".into() });
    let err = run_actor(&actor("Scaler"), &fresh(&f), &f.ctx.clone().with_backend(Arc::new(dead))).unwrap_err();
    assert_eq!(err.actor_name(), Some("Scaler"));
}

#[test]
fn select_votes_and_falls_back() {
    let f = fixture();
    let mut s = fresh(&f);
    for c in CANDIDATES {
        s.push_candidate(c.to_owned());
    }
    let out = run_actor(&actor("CHESSSelector"), &s, &f.ctx).unwrap();
    assert_eq!(out.final_sql.as_deref(), Some(CANDIDATES[1]));
    let confused = f.ctx.clone().with_backend(Arc::new(MockBackend::new().fallback("no idea")));
    let out = run_actor(&actor("CHESSSelector"), &s, &confused).unwrap();
    assert_eq!(out.final_sql.as_deref(), Some(CANDIDATES[0]));
}

#[test]
fn select_without_candidates_is_a_precondition_error() {
    let f = fixture();
    let err = run_actor(&actor("Selector"), &fresh(&f), &f.ctx).unwrap_err();
    assert!(matches!(err.root_cause(), Error::Precondition(_)), "{err}");
    match err {
        Error::Actor { actor, state, .. } => {
            assert_eq!(actor, "Selector");
            assert_eq!(*state.unwrap(), fresh(&f));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn optimize_repairs_failing_sql() {
    let f = fixture();
    let mut s = fresh(&f);
    s.final_sql = Some("SELECT nme FROM customers".into());
    let out = run_actor(&actor("MACSQLOptimizer"), &s, &f.ctx).unwrap();
    assert_eq!(out.final_sql.as_deref(), Some(CANDIDATES[0]));
    assert_eq!(out.feedback_log.len(), 2);
    assert!(out.feedback_log[0].outcome.contains("error"));
}

#[test]
fn optimize_leaves_working_sql_alone() {
    let f = fixture();
    let mut s = fresh(&f);
    s.final_sql = Some("SELECT city FROM customers".into());
    let out = run_actor(&actor("Optimizer"), &s, &f.ctx).unwrap();
    assert_eq!(out.final_sql.as_deref(), Some("SELECT city FROM customers"));
    assert_eq!(out.feedback_log.len(), 1);
    assert_eq!(out.trace[0].note.as_deref(), Some("0 revision(s)"));
}

#[test]
fn optimize_needs_a_database() {
    let f = fixture();
    let mut s = fresh(&f);
    s.final_sql = Some("SELECT 1".into());
    let err = run_actor(&actor("Optimizer"), &s, &f.ctx.clone().without_db_path()).unwrap_err();
    assert!(matches!(err.root_cause(), Error::Precondition(_)));
}

fn two_parsers() -> (ActorSpec, ActorSpec, MockBackend) {
    let a = ActorSpec::atomic(ActorKind::Parse, "A");
    let b = ActorSpec::atomic(ActorKind::Parse, "B").with_param("style", "second");
    let mut mock = shop_mock();
    mock.rules.insert(
        0,
        sqlactors::llm::MockRule { contains: vec!["second".into(), "Identify".into()], reply: "customers.city, orders.total".into() },
    );
    (a, b, mock)
}

#[test]
fn union_policy_combines_parsers() {
    let f = fixture();
    let (a, b, mock) = two_parsers();
    let ctx = f.ctx.clone().with_backend(Arc::new(mock));
    let tree = compose_tree(vec![a, b], MergePolicy::default()).unwrap();
    let out = run_actor(&tree, &fresh(&f), &ctx).unwrap();
    let linked: Vec<_> = out.linked_elements.unwrap().into_iter().collect();
    assert_eq!(linked, ["customers", "customers.city", "customers.name", "orders", "orders.total"]);
    assert_eq!(out.trace.len(), 2);
}

#[test]
fn intersection_policy_keeps_common_elements() {
    let f = fixture();
    let (a, b, mock) = two_parsers();
    let ctx = f.ctx.clone().with_backend(Arc::new(mock));
    let policy = MergePolicy { linked_elements: sqlactors::actors::SetRule::Intersection, ..Default::default() };
    let tree = compose_tree(vec![a, b], policy).unwrap();
    let out = run_actor(&tree, &fresh(&f), &ctx).unwrap();
    let linked: Vec<_> = out.linked_elements.unwrap().into_iter().collect();
    assert_eq!(linked, ["customers", "customers.city"]);
}

#[test]
fn composite_shape_errors() {
    let f = fixture();
    let empty = composite(ActorKind::Pipeline, "P", vec![]);
    assert!(matches!(run_actor(&empty, &fresh(&f), &f.ctx), Err(Error::Config(_))));
    assert!(compose_pipeline(vec![]).is_err());
    let mut bad = ActorSpec::atomic(ActorKind::Generate, "G");
    bad.children.push(ActorSpec::atomic(ActorKind::Parse, "P"));
    assert!(matches!(run_actor(&bad, &fresh(&f), &f.ctx), Err(Error::Config(_))));
}

#[test]
fn input_state_is_never_modified() {
    let f = fixture();
    let s = seed_state(&f.schema);
    let before = s.clone();
    let wf = parse_workflow(&json!(["LinkAlignParser", "RSLSQLScaler", "CHESSSelector", "MACSQLOptimizer"])).unwrap();
    run_actor(&wf, &s, &f.ctx).unwrap();
    assert_eq!(s, before);
}

#[test]
fn exemplars_reach_the_prompt() {
    let f = fixture();
    let ex = sqlactors::Exemplar::new("Which customers live in Lima?", "Filter customers by city.", "SELECT name FROM customers WHERE city = 'Lima'").unwrap();
    let ctx = f.ctx.clone().with_exemplars(&[ex]).unwrap();
    let marker = "Filter customers by city.";
    let ctx = ctx.with_backend(Arc::new(MockBackend::new().rule(&[marker], "```sql\nSELECT 42\n```").fallback("none")));
    let out = run_actor(&actor("Generator"), &fresh(&f), &ctx).unwrap();
    assert_eq!(out.final_sql.as_deref(), Some("SELECT 42"));
}

fn check_laws(seed: u64) {
    let f = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = seed_state(&f.schema);

    let pipeline = random_rooted(&mut rng, ActorKind::Pipeline, 4);
    let nested = run_actor(&pipeline, &state, &f.ctx);
    assert!(same_outcome(&nested, &run_actor(&flatten(&pipeline), &state, &f.ctx)), "flattening, seed {seed}");
    assert!(same_outcome(&nested, &run_actor(&nest_tail(&pipeline), &state, &f.ctx)), "regrouping, seed {seed}");

    let any = random_workflow(&mut rng, 3);
    let wrapped = composite(ActorKind::Tree, "Unit", vec![any.clone()]);
    assert!(same_outcome(&run_actor(&any, &state, &f.ctx), &run_actor(&wrapped, &state, &f.ctx)), "unit law, seed {seed}");

    let tree = random_rooted(&mut rng, ActorKind::Tree, 4);
    let mut reversed = tree.clone();
    reversed.children.reverse();
    match (run_actor(&tree, &state, &f.ctx), run_actor(&reversed, &state, &f.ctx)) {
        (Ok(a), Ok(b)) => {
            assert_eq!(candidate_set(&a), candidate_set(&b), "candidates, seed {seed}");
            assert_eq!(a.linked_elements, b.linked_elements, "linked, seed {seed}");
            a.check_invariants().unwrap();
        }
        (Err(_), Err(_)) => {}
        (a, b) => panic!("seed {seed}: permutation changed success: {:?} vs {:?}", a.is_ok(), b.is_ok()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn composition_laws(seed in any::<u64>()) {
        check_laws(seed);
    }

    #[test]
    fn invariants_hold_after_any_workflow(seed in any::<u64>()) {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wf = random_workflow(&mut rng, 4);
        if let Ok(out) = run_actor(&wf, &seed_state(&f.schema), &f.ctx) {
            prop_assert!(out.check_invariants().is_ok());
            prop_assert_eq!(out.trace.len(), out.trace.iter().filter(|t| wf.atomic_names().contains(&t.actor.as_str())).count());
        }
    }
}

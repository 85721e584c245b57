use std::collections::BTreeSet;

use super::spec::ActorSpec;
use super::state::{FeedbackEntry, SubQuestion, TraceEntry, WorkflowState};
use super::templates::render;
use super::text::{extract_sql, parse_linked_elements, parse_sub_questions, parse_vote};
use super::ActorContext;
use crate::data::{fold, schema_to_prompt_text};
use crate::error::{Error, Result};
use crate::llm::ChatRequest;
use crate::retrieval::{assemble_cot_prompt, DEFAULT_EXEMPLAR_K};

const DEFAULT_REDUCE_K: usize = 30;
const DEFAULT_CANDIDATES: usize = 3;
const DEFAULT_MAX_ITERS: usize = 3;
const MAX_SUB_QUESTIONS: usize = 8;

/// Token and timing bookkeeping for one trace entry.
struct Step<'a> {
    ctx: &'a ActorContext,
    spec: &'a ActorSpec,
    started: f64,
    tokens: u64,
}

impl<'a> Step<'a> {
    fn begin(ctx: &'a ActorContext, spec: &'a ActorSpec) -> Self {
        Self { ctx, spec, started: ctx.clock.now(), tokens: 0 }
    }

    fn ask(&mut self, prompt: String) -> Result<String> {
        let response = self.ctx.backend.complete(&ChatRequest::user(prompt))?;
        self.tokens += response.prompt_tokens + response.completion_tokens;
        Ok(response.text)
    }

    fn finish(self, state: &mut WorkflowState, note: Option<String>) {
        state.trace.push(TraceEntry {
            actor: self.spec.name.clone(),
            duration: (self.ctx.clock.now() - self.started).max(0.0),
            tokens: self.tokens,
            note,
        });
    }
}

fn template<'c>(ctx: &'c ActorContext, spec: &ActorSpec, id: &str, suffix: &str) -> Result<&'c str> {
    let key = spec.param_str("prompt_template_id").map(|n| format!("{n}{suffix}"));
    ctx.templates.resolve(key.as_deref(), id)
}

/// Placeholder values shared by every prompt.
struct Vars {
    style: String,
    question: String,
    schema: String,
    context: String,
    linked: String,
}

impl Vars {
    fn new(state: &WorkflowState, spec: &ActorSpec) -> Self {
        let style = spec.param_str("style").unwrap_or_default().to_owned();
        let context = match &state.context {
            Some(c) if !c.trim().is_empty() => format!("Evidence: {}\n", c.trim()),
            _ => String::new(),
        };
        let linked = match &state.linked_elements {
            Some(set) if !set.is_empty() => {
                format!("Relevant schema elements: {}\n", set.iter().cloned().collect::<Vec<_>>().join(", "))
            }
            _ => String::new(),
        };
        Self { style, question: state.question.trim().to_owned(), schema: schema_to_prompt_text(state.schema()), context, linked }
    }

    fn render(&self, template: &str, extra: &[(&str, &str)]) -> String {
        let mut vars: Vec<(&str, &str)> = vec![
            ("style", &self.style),
            ("question", &self.question),
            ("schema", &self.schema),
            ("context", &self.context),
            ("linked", &self.linked),
        ];
        vars.extend_from_slice(extra);
        render(template, &vars).trim_start().to_owned()
    }
}

fn require_question(state: &WorkflowState) -> Result<()> {
    if state.question.trim().is_empty() {
        return Err(Error::Argument("question is empty".into()));
    }
    Ok(())
}

fn cot_block(state: &WorkflowState, spec: &ActorSpec, ctx: &ActorContext) -> Result<String> {
    let exemplars = if spec.param_bool("use_exemplars", true)? {
        ctx.nearest_exemplars(&state.question, spec.param_usize("exemplar_k", DEFAULT_EXEMPLAR_K)?)?
    } else {
        Vec::new()
    };
    assemble_cot_prompt(&state.question, &exemplars, ctx.prompt_budget)
        .or_else(|_| assemble_cot_prompt(&state.question, &[], usize::MAX))
}

/// Narrows the schema to the columns most similar to the question, plus the
/// primary keys of every table that keeps a column.
pub fn reduce(state: &WorkflowState, spec: &ActorSpec, ctx: &ActorContext) -> Result<WorkflowState> {
    require_question(state)?;
    let k = spec.param_usize("k", DEFAULT_REDUCE_K)?;
    if k == 0 {
        return Err(Error::Config(format!("`{}`: k must be positive", spec.name)));
    }
    let mut out = state.clone();
    let mut step = Step::begin(ctx, spec);
    let mut note = None;
    let schema = state.schema();

    let mut selected: Vec<String> = if k >= schema.columns.len() {
        schema.columns.iter().map(|c| c.element()).collect()
    } else {
        let index = ctx.column_index(state)?;
        let query = ctx.embedder.embed(&state.question)?;
        index.topk(&query, k)?.into_iter().map(|(id, _)| id).collect()
    };

    if spec.param_bool("llm_confirm", false)? && k < schema.columns.len() {
        let candidates = selected.join("\n");
        let vars = Vars::new(state, spec);
        let prompt = vars.render(template(ctx, spec, "reduce", "")?, &[("candidates", &candidates)]);
        let reply = step.ask(prompt)?;
        let confirmed = parse_linked_elements(&reply, schema).elements;
        let kept: Vec<String> = selected.iter().filter(|e| confirmed.contains(*e)).cloned().collect();
        if kept.is_empty() {
            note = Some("confirmation kept no columns; using retrieval result".to_owned());
        } else {
            selected = kept;
        }
    }

    let selected: BTreeSet<String> = selected.into_iter().collect();
    let tables: BTreeSet<String> = selected.iter().filter_map(|e| e.split_once('.')).map(|(t, _)| t.to_owned()).collect();
    let candidate =
        schema.subset(|c| selected.contains(&c.element()) || (c.is_primary_key && tables.contains(&fold(&c.table_name))));
    out.candidate_schema = Some(candidate);
    out.prune_linked();
    step.finish(&mut out, note);
    Ok(out)
}

/// Schema linking: asks the model for relevant tables and columns and keeps
/// only those present in the current schema.
pub fn parse(state: &WorkflowState, spec: &ActorSpec, ctx: &ActorContext) -> Result<WorkflowState> {
    require_question(state)?;
    let mut out = state.clone();
    let mut step = Step::begin(ctx, spec);
    let prompt = Vars::new(state, spec).render(template(ctx, spec, "parse", "")?, &[]);
    let reply = step.ask(prompt)?;
    let parsed = parse_linked_elements(&reply, state.schema());
    let note = if parsed.unparseable {
        Some("warning: could not read any schema elements from the answer".to_owned())
    } else if parsed.dropped > 0 {
        Some(format!("dropped {} element(s) not in the schema", parsed.dropped))
    } else {
        None
    };
    out.linked_elements = Some(parsed.elements);
    step.finish(&mut out, note);
    Ok(out)
}

/// Writes one SQL query into `final_sql`. A completion without SQL is noted in
/// the trace and leaves `final_sql` untouched.
pub fn generate(state: &WorkflowState, spec: &ActorSpec, ctx: &ActorContext) -> Result<WorkflowState> {
    require_question(state)?;
    let mut out = state.clone();
    let mut step = Step::begin(ctx, spec);
    let cot = cot_block(state, spec, ctx)?;
    let prompt = Vars::new(state, spec).render(template(ctx, spec, "generate", "")?, &[("cot", &cot)]);
    let reply = step.ask(prompt)?;
    let note = match extract_sql(&reply) {
        Some(sql) => {
            out.final_sql = Some(sql);
            None
        }
        None => Some("generation error: no SQL found in completion".to_owned()),
    };
    step.finish(&mut out, note);
    Ok(out)
}

/// One decomposition call, then one generation call per sub-question; the
/// last sub-SQL becomes `final_sql`. With no sub-questions this is Generate.
pub fn decompose(state: &WorkflowState, spec: &ActorSpec, ctx: &ActorContext) -> Result<WorkflowState> {
    require_question(state)?;
    let mut out = state.clone();
    let vars = Vars::new(state, spec);
    let mut step = Step::begin(ctx, spec);
    let reply = step.ask(vars.render(template(ctx, spec, "decompose", "")?, &[]))?;
    let mut subs = parse_sub_questions(&reply);
    subs.truncate(spec.param_usize("max_sub_questions", MAX_SUB_QUESTIONS)?.max(1));
    if subs.is_empty() {
        step.finish(&mut out, Some("no sub-questions; falling back to generation".to_owned()));
        return generate(&out, spec, ctx);
    }
    step.finish(&mut out, Some(format!("{} sub-question(s)", subs.len())));

    let step_template = template(ctx, spec, "decompose_step", "_step")?;
    let mut last_sql = None;
    for (i, sub) in subs.iter().enumerate() {
        let mut step = Step::begin(ctx, spec);
        let previous: String = out.sub_questions[state.sub_questions.len()..]
            .iter()
            .map(|s| format!("Sub-question: {}\nSQL: {}\n", s.question, s.sql))
            .collect();
        let sub_vars = Vars { question: sub.clone(), ..Vars::new(state, spec) };
        let reply = step.ask(sub_vars.render(step_template, &[("previous", &previous)]))?;
        let sql = extract_sql(&reply);
        let note = match &sql {
            Some(_) => format!("sub-question {}", i + 1),
            None => format!("sub-question {}: no SQL found in completion", i + 1),
        };
        out.sub_questions.push(SubQuestion { question: sub.clone(), sql: sql.clone().unwrap_or_default() });
        last_sql = sql;
        step.finish(&mut out, Some(note));
    }
    if let Some(sql) = last_sql {
        out.final_sql = Some(sql);
    }
    Ok(out)
}

/// Issues `n_candidates` generation calls with a varying diversity tag and
/// adds every new SQL to `sql_candidates`. Fails only if every call fails.
pub fn scale(state: &WorkflowState, spec: &ActorSpec, ctx: &ActorContext) -> Result<WorkflowState> {
    require_question(state)?;
    let n = spec.param_usize("n_candidates", DEFAULT_CANDIDATES)?;
    if n == 0 {
        return Err(Error::Config(format!("`{}`: n_candidates must be positive", spec.name)));
    }
    let mut out = state.clone();
    let mut step = Step::begin(ctx, spec);
    let vars = Vars::new(state, spec);
    let tmpl = template(ctx, spec, "scale", "")?;
    let cot = cot_block(state, spec, ctx)?;
    let mut failures = Vec::new();
    let mut empty = 0;
    for i in 1..=n {
        let tag = format!("Candidate {i} of {n}");
        match step.ask(vars.render(tmpl, &[("tag", &tag), ("cot", &cot)])) {
            Ok(reply) => match extract_sql(&reply) {
                Some(sql) => {
                    out.push_candidate(sql);
                }
                None => empty += 1,
            },
            Err(e) => failures.push(e),
        }
    }
    if failures.len() == n {
        return Err(failures.pop().expect("n > 0"));
    }
    let mut notes = Vec::new();
    if !failures.is_empty() {
        notes.push(format!("{} of {n} calls failed", failures.len()));
    }
    if empty > 0 {
        notes.push(format!("{empty} completion(s) without SQL"));
    }
    step.finish(&mut out, (!notes.is_empty()).then(|| notes.join("; ")));
    Ok(out)
}

/// Executes `final_sql` and, while it fails or returns nothing, asks the
/// model for a revision, for at most `max_iters` rounds. Every execution is
/// logged in `feedback_log`.
pub fn optimize(state: &WorkflowState, spec: &ActorSpec, ctx: &ActorContext) -> Result<WorkflowState> {
    let Some(mut sql) = state.final_sql.clone() else {
        return Err(Error::Precondition("optimize needs final_sql".into()));
    };
    let Some(db_path) = ctx.db_path.as_deref() else {
        return Err(Error::Precondition("optimize needs a database".into()));
    };
    let max_iters = spec.param_usize("max_iters", DEFAULT_MAX_ITERS)?;
    let mut out = state.clone();
    let mut step = Step::begin(ctx, spec);
    let vars = Vars::new(state, spec);
    let tmpl = template(ctx, spec, "optimize", "")?;

    let mut settled = false;
    for _ in 0..max_iters {
        let outcome = ctx.executor.execute(db_path, &sql)?;
        out.feedback_log.push(FeedbackEntry { sql: sql.clone(), outcome: outcome.summary() });
        if outcome.table().is_some_and(|t| !t.is_empty()) {
            settled = true;
            break;
        }
        let reply = step.ask(vars.render(tmpl, &[("sql", &sql), ("feedback", &outcome.summary())]))?;
        if let Some(revised) = extract_sql(&reply) {
            sql = revised;
        }
    }
    if !settled {
        let outcome = ctx.executor.execute(db_path, &sql)?;
        out.feedback_log.push(FeedbackEntry { sql: sql.clone(), outcome: outcome.summary() });
    }
    let revisions = out.feedback_log.len() - state.feedback_log.len() - 1;
    out.final_sql = Some(sql);
    step.finish(&mut out, Some(format!("{revisions} revision(s)")));
    Ok(out)
}

/// Picks `final_sql` from `sql_candidates` by a 1-based model vote; an
/// unreadable vote picks the first candidate.
pub fn select(state: &WorkflowState, spec: &ActorSpec, ctx: &ActorContext) -> Result<WorkflowState> {
    if state.sql_candidates.is_empty() {
        return Err(Error::Precondition("select needs at least one SQL candidate".into()));
    }
    let mut out = state.clone();
    let mut step = Step::begin(ctx, spec);
    if state.sql_candidates.len() == 1 {
        out.final_sql = Some(state.sql_candidates[0].clone());
        step.finish(&mut out, Some("single candidate".to_owned()));
        return Ok(out);
    }
    let listing: String = state
        .sql_candidates
        .iter()
        .enumerate()
        .map(|(i, sql)| format!("{}. {}\n", i + 1, sql.replace('\n', " ")))
        .collect();
    let prompt = Vars::new(state, spec).render(template(ctx, spec, "select", "")?, &[("candidates", &listing)]);
    let reply = step.ask(prompt)?;
    let (choice, note) = match parse_vote(&reply, state.sql_candidates.len()) {
        Some(i) => (i, None),
        None => (0, Some("unreadable vote; using the first candidate".to_owned())),
    };
    out.final_sql = Some(state.sql_candidates[choice].clone());
    step.finish(&mut out, note);
    Ok(out)
}

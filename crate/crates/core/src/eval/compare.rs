use std::cmp::Ordering;

use super::tokenize::has_outer_order_by;
use super::{Cell, ExecOutcome};
use crate::error::{Error, Result};

const REL_TOL: f64 = 1e-6;
const ABS_TOL: f64 = 1e-9;
/// Above this many rows the tolerance-aware matching fallback is skipped.
const MATCHING_LIMIT: usize = 2_000;

/// Cell equality: numbers (integer or real) within relative 1e-6 or absolute
/// 1e-9, text and blobs exactly, NULL only equal to NULL.
pub fn cells_equal(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Null, Cell::Null) => true,
        (Cell::Text(x), Cell::Text(y)) => x == y,
        (Cell::Bytes { blob: x }, Cell::Bytes { blob: y }) => x == y,
        (Cell::Integer(x), Cell::Integer(y)) if x == y => true,
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => {
                if x == y {
                    return true;
                }
                let diff = (x - y).abs();
                diff <= ABS_TOL || diff <= REL_TOL * x.abs().max(y.abs())
            }
            _ => false,
        },
    }
}

fn rows_equal(a: &[Cell], b: &[Cell]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_equal(x, y))
}

fn rank(cell: &Cell) -> u8 {
    match cell {
        Cell::Null => 0,
        Cell::Integer(_) | Cell::Real(_) => 1,
        Cell::Text(_) => 2,
        Cell::Bytes { .. } => 3,
    }
}

fn cell_order(a: &Cell, b: &Cell) -> Ordering {
    rank(a).cmp(&rank(b)).then_with(|| match (a, b) {
        (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
        (Cell::Bytes { blob: x }, Cell::Bytes { blob: y }) => x.cmp(y),
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => Ordering::Equal,
        },
    })
}

fn row_order(a: &[Cell], b: &[Cell]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| cell_order(x, y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Whether every row of `pred` can be paired with a distinct, equal row of
/// `gold` (augmenting-path bipartite matching). Needed because tolerant
/// equality is not transitive, so sorting alone can misalign rows.
fn perfect_matching(pred: &[&Vec<Cell>], gold: &[&Vec<Cell>]) -> bool {
    let n = pred.len();
    let adj: Vec<Vec<usize>> =
        pred.iter().map(|p| (0..n).filter(|&j| rows_equal(p, gold[j])).collect()).collect();
    let mut owner: Vec<Option<usize>> = vec![None; n];

    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }

    (0..n).all(|u| {
        let mut seen = vec![false; n];
        augment(u, &adj, &mut seen, &mut owner)
    })
}

/// Execution-result match between a prediction and the gold query.
///
/// A failed or timed-out prediction never matches. Rows compare as multisets
/// unless the gold query's outermost level has an ORDER BY, in which case row
/// order must agree as well. Column order always matters.
pub fn compare_results(pred: &ExecOutcome, gold: &ExecOutcome, gold_sql: &str) -> bool {
    let (Some(p), Some(g)) = (pred.table(), gold.table()) else {
        return false;
    };
    if p.rows.len() != g.rows.len() {
        return false;
    }
    if has_outer_order_by(gold_sql) {
        return p.rows.iter().zip(&g.rows).all(|(a, b)| rows_equal(a, b));
    }

    let mut ps: Vec<&Vec<Cell>> = p.rows.iter().collect();
    let mut gs: Vec<&Vec<Cell>> = g.rows.iter().collect();
    ps.sort_by(|a, b| row_order(a, b));
    gs.sort_by(|a, b| row_order(a, b));
    if ps.iter().zip(&gs).all(|(a, b)| rows_equal(a, b)) {
        return true;
    }
    let has_real = |rows: &[&Vec<Cell>]| rows.iter().any(|r| r.iter().any(|c| matches!(c, Cell::Real(_))));
    if ps.len() <= MATCHING_LIMIT && (has_real(&ps) || has_real(&gs)) {
        return perfect_matching(&ps, &gs);
    }
    false
}

/// One (prediction, gold) pair fed to [`execution_accuracy`].
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub pred: ExecOutcome,
    pub gold: ExecOutcome,
    pub gold_sql: String,
}

/// Fraction of pairs whose results match.
pub fn execution_accuracy(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Argument("execution accuracy over an empty list".into()));
    }
    let hits = pairs.iter().filter(|p| compare_results(&p.pred, &p.gold, &p.gold_sql)).count();
    Ok(hits as f64 / pairs.len() as f64)
}

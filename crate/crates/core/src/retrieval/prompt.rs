use crate::data::Exemplar;
use crate::error::{Error, Result};
use crate::llm::{ChatBackend, ChatRequest, ChatResponse};

pub const DEFAULT_EXEMPLAR_K: usize = 3;

pub const COT_HEADER: &str = "Translate the final question into a SQLite query. \
Each example shows a question, the reasoning that leads to its query, and the query itself.\n\n";

pub fn render_exemplar(ex: &Exemplar) -> String {
    format!("Question: {}\nReasoning: {}\nSQL: {}\n\n", ex.question.trim(), ex.reasoning.trim(), ex.sql.trim())
}

fn question_block(question: &str) -> String {
    format!("Question: {}\nReasoning:", question.trim())
}

/// Header, then as many leading exemplars as fit in `budget` characters, then
/// the question. Exemplars are kept whole: the first one that would overflow
/// the budget and every one after it are dropped.
pub fn assemble_cot_prompt(question: &str, exemplars: &[Exemplar], budget: usize) -> Result<String> {
    let tail = question_block(question);
    let fixed = COT_HEADER.chars().count() + tail.chars().count();
    if budget < fixed {
        return Err(Error::Argument(format!("prompt budget {budget} is below the {fixed} characters of header and question")));
    }
    let mut out = String::from(COT_HEADER);
    let mut used = fixed;
    for ex in exemplars {
        let block = render_exemplar(ex);
        let len = block.chars().count();
        if used + len > budget {
            break;
        }
        used += len;
        out.push_str(&block);
    }
    out.push_str(&tail);
    Ok(out)
}

fn extraction_prompt(documents: &[String], question: &str) -> String {
    let mut prompt = String::from(
        "From the documents below, extract the concept definitions and metric calculation formulas \
that are relevant to the question. Reply with the extracted text only.\n",
    );
    for (i, doc) in documents.iter().enumerate() {
        prompt.push_str(&format!("\n[Document {}]\n{}\n", i + 1, doc.trim()));
    }
    prompt.push_str(&format!("\nQuestion: {}\n", question.trim()));
    prompt
}

/// Like [`extract_context`] but returns the full response for accounting.
pub fn extract_context_response(documents: &[String], question: &str, backend: &dyn ChatBackend) -> Result<ChatResponse> {
    if documents.is_empty() {
        return Err(Error::Argument("context extraction needs at least one document".into()));
    }
    Ok(backend.complete(&ChatRequest::user(extraction_prompt(documents, question)))?)
}

pub fn extract_context(documents: &[String], question: &str, backend: &dyn ChatBackend) -> Result<String> {
    extract_context_response(documents, question, backend).map(|r| r.text)
}

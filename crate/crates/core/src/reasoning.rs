//! Post-retrieval structured reasoning: subquery generation, per-clip
//! verification, the existential refinement filter, and evidence
//! aggregation.
//!
//! Verification fans out concurrently over (clip, subquery) pairs with a
//! configurable in-flight cap; cells are assembled by index, so the
//! matrix is independent of scheduling. A backend failure on one pair
//! zeroes only that cell.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{ChatBackend, ChatRequest, MediaRef, ResponseFormatHint};
use crate::error::{EngineError, Result};
use crate::graph::VideoGraph;
use crate::parsing::{first_integer, parse_leading_yes_no};
use crate::prompts;
use crate::retrieval::RankedClip;

/// Upper bound kept after parsing a subquery response.
const MAX_SUBQUERIES: usize = 8;
/// Numeric verification answers are clamped here to bound prompt noise
/// from parser accidents.
const MAX_NUMERIC_ANSWER: u64 = 99;

/// Expected answer form of a subquery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubqueryKind {
    Binary,
    Numeric,
}

/// One structured verification question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subquery {
    pub text: String,
    pub kind: SubqueryKind,
}

impl Subquery {
    fn classify(text: &str) -> SubqueryKind {
        let lowered = text.to_lowercase();
        if lowered.contains("how many") || lowered.contains("count") {
            SubqueryKind::Numeric
        } else {
            SubqueryKind::Binary
        }
    }
}

/// Per-(retrieved clip, subquery) verification responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationMatrix {
    /// Clip indices, in ranked order.
    pub rows: Vec<u32>,
    pub cols: Vec<Subquery>,
    /// `values[i][j]` is the response of clip `rows[i]` to `cols[j]`.
    pub values: Vec<Vec<f64>>,
    /// Unparsed backend answers; parse failures and backend errors are
    /// flagged inline with a `[unparsed]` / `[error]` prefix.
    pub raw_texts: Vec<Vec<String>>,
}

impl VerificationMatrix {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.rows.len() || self.raw_texts.len() != self.rows.len() {
            return Err(EngineError::Invariant("matrix row count mismatch".into()));
        }
        for (row, raws) in self.values.iter().zip(&self.raw_texts) {
            if row.len() != self.cols.len() || raws.len() != self.cols.len() {
                return Err(EngineError::Invariant("matrix column count mismatch".into()));
            }
            for (value, col) in row.iter().zip(&self.cols) {
                let ok = match col.kind {
                    SubqueryKind::Binary => *value == 0.0 || *value == 1.0,
                    SubqueryKind::Numeric => {
                        *value >= 0.0 && value.fract() == 0.0 && *value <= MAX_NUMERIC_ANSWER as f64
                    }
                };
                if !ok {
                    return Err(EngineError::Invariant(format!(
                        "matrix value {value} out of range for {:?} column",
                        col.kind
                    )));
                }
            }
        }
        Ok(())
    }

    fn row_of(&self, clip_index: u32) -> Option<&[f64]> {
        self.rows
            .iter()
            .position(|&c| c == clip_index)
            .map(|i| self.values[i].as_slice())
    }
}

/// One positive verification cell attached to the refined evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub clip_index: u32,
    pub subquery: String,
    pub value: f64,
}

/// Aggregated evidence handed to generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedContext {
    pub summary_text: String,
    pub per_clip_findings: Vec<Finding>,
    /// Per-numeric-subquery sums over the refined clips.
    pub totals: Vec<(String, u64)>,
}

/// Parse subqueries out of a model response: a bare JSON array of
/// strings, or an object holding one under a conventional key; entries
/// may also be `{"question": ...}` objects.
pub fn parse_subquery_response(text: &str) -> Result<Vec<Subquery>> {
    let block = crate::parsing::extract_json_block(text)
        .ok_or_else(|| EngineError::Subquery(format!("no JSON in response: {text:?}")))?;
    let value: Value = serde_json::from_str(block)
        .map_err(|e| EngineError::Subquery(format!("invalid JSON: {e}; raw: {text:?}")))?;
    let items: &[Value] = match &value {
        Value::Array(items) => items,
        Value::Object(obj) => ["subqueries", "sub_questions", "questions"]
            .iter()
            .find_map(|k| obj.get(*k).and_then(Value::as_array))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                EngineError::Subquery(format!("no subquery list in response: {text:?}"))
            })?,
        _ => return Err(EngineError::Subquery(format!("unexpected JSON shape: {text:?}"))),
    };

    let mut subqueries: Vec<Subquery> = Vec::new();
    for item in items {
        let text = match item {
            Value::String(s) => s.trim().to_string(),
            Value::Object(obj) => ["question", "text", "subquery"]
                .iter()
                .find_map(|k| obj.get(*k).and_then(Value::as_str))
                .map(|s| s.trim().to_string())
                .unwrap_or_default(),
            _ => String::new(),
        };
        if text.is_empty() {
            continue;
        }
        let lowered = text.to_lowercase();
        // The prompt forbids time-position phrasing; drop any that leak.
        if ["at the beginning", "in the middle", "at the end"]
            .iter()
            .any(|p| lowered.contains(p))
        {
            log::warn!("dropping time-positioned subquery: {text:?}");
            continue;
        }
        if subqueries.iter().any(|q| q.text == text) {
            continue;
        }
        subqueries.push(Subquery {
            kind: Subquery::classify(&text),
            text,
        });
        if subqueries.len() == MAX_SUBQUERIES {
            break;
        }
    }
    if subqueries.is_empty() {
        return Err(EngineError::Subquery(format!(
            "no usable subqueries in response: {text:?}"
        )));
    }
    Ok(subqueries)
}

/// Ask the model to decompose the question into structured subqueries.
pub fn generate_subqueries(
    question: &str,
    options: &[(char, String)],
    chat: &dyn ChatBackend,
) -> Result<Vec<Subquery>> {
    if question.trim().is_empty() {
        return Err(EngineError::Subquery("question must be non-empty".into()));
    }
    let prompt = prompts::subquery_prompt(question, &prompts::render_candidates(options));
    let response = chat.chat(&ChatRequest::text(prompt).with_format(ResponseFormatHint::Json))?;
    parse_subquery_response(&response)
}

fn media_ref_for(graph: &VideoGraph, clip_index: u32) -> Result<MediaRef> {
    let clip = graph.clip(clip_index).ok_or_else(|| {
        EngineError::Invariant(format!("clip {clip_index} not in graph"))
    })?;
    Ok(MediaRef {
        video_id: graph.video_id.clone(),
        frame_start: clip.frame_start,
        frame_end: clip.frame_end,
    })
}

fn parse_cell(kind: SubqueryKind, raw: &str) -> (f64, Option<String>) {
    match kind {
        SubqueryKind::Binary => match parse_leading_yes_no(raw) {
            Some(true) => (1.0, None),
            Some(false) => (0.0, None),
            None => (0.0, Some(format!("[unparsed] {raw}"))),
        },
        SubqueryKind::Numeric => match first_integer(raw) {
            Some(n) => (n.min(MAX_NUMERIC_ANSWER) as f64, None),
            None => (0.0, Some(format!("[unparsed] {raw}"))),
        },
    }
}

/// Verify one clip against every subquery, producing one matrix row.
/// Backend failures zero the affected cell and never abort the row.
pub fn verify_clip(
    graph: &VideoGraph,
    clip_index: u32,
    subqueries: &[Subquery],
    chat: &dyn ChatBackend,
) -> Result<(Vec<f64>, Vec<String>)> {
    if subqueries.is_empty() {
        return Err(EngineError::Subquery("no subqueries to verify".into()));
    }
    let media = media_ref_for(graph, clip_index)?;
    let mut values = Vec::with_capacity(subqueries.len());
    let mut raws = Vec::with_capacity(subqueries.len());
    for subquery in subqueries {
        let (value, raw) = verify_cell(graph, &media, clip_index, subquery, chat);
        values.push(value);
        raws.push(raw);
    }
    Ok((values, raws))
}

fn verify_cell(
    _graph: &VideoGraph,
    media: &MediaRef,
    clip_index: u32,
    subquery: &Subquery,
    chat: &dyn ChatBackend,
) -> (f64, String) {
    let request = ChatRequest::text(prompts::verification_prompt(&subquery.text))
        .with_media(vec![media.clone()])
        .expect("single media ref");
    match chat.chat(&request) {
        Ok(raw) => {
            let (value, flagged) = parse_cell(subquery.kind, &raw);
            (value, flagged.unwrap_or(raw))
        }
        Err(e) => {
            log::warn!("verification failed for clip {clip_index} / {:?}: {e}", subquery.text);
            (0.0, format!("[error] {e}"))
        }
    }
}

/// Build the whole verification matrix, fanning out over
/// (clip, subquery) pairs up to `concurrency` in flight.
pub fn verify_clips(
    graph: &VideoGraph,
    ranked: &[RankedClip],
    subqueries: &[Subquery],
    chat: &dyn ChatBackend,
    concurrency: usize,
) -> Result<VerificationMatrix> {
    if subqueries.is_empty() {
        return Err(EngineError::Subquery("no subqueries to verify".into()));
    }
    let rows: Vec<u32> = ranked.iter().map(|c| c.clip_index).collect();
    let mut pairs = Vec::with_capacity(rows.len() * subqueries.len());
    for (i, &clip_index) in rows.iter().enumerate() {
        let media = media_ref_for(graph, clip_index)?;
        for (j, subquery) in subqueries.iter().enumerate() {
            pairs.push((i, j, clip_index, media.clone(), subquery));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| EngineError::Invariant(format!("thread pool: {e}")))?;
    let cells: Vec<(usize, usize, f64, String)> = pool.install(|| {
        use rayon::prelude::*;
        pairs
            .par_iter()
            .map(|(i, j, clip_index, media, subquery)| {
                let (value, raw) = verify_cell(graph, media, *clip_index, subquery, chat);
                (*i, *j, value, raw)
            })
            .collect()
    });
    let mut values = vec![vec![0.0; subqueries.len()]; rows.len()];
    let mut raw_texts = vec![vec![String::new(); subqueries.len()]; rows.len()];
    for (i, j, value, raw) in cells {
        values[i][j] = value;
        raw_texts[i][j] = raw;
    }
    let matrix = VerificationMatrix {
        rows,
        cols: subqueries.to_vec(),
        values,
        raw_texts,
    };
    matrix.validate()?;
    Ok(matrix)
}

/// Support of one row under the refinement cap rule: presence counts,
/// so numeric responses saturate at 1.
pub fn row_support(row: &[f64]) -> f64 {
    row.iter().map(|&v| v.min(1.0)).sum()
}

/// Existential refinement: keep clips with at least one positive
/// response; if more than `max_r` survive, keep those with the greatest
/// support (ties by re-rank score, then lower clip index). The result is
/// re-sorted into temporal order for prompt assembly.
pub fn refine(
    ranked: &[RankedClip],
    matrix: &VerificationMatrix,
    max_r: usize,
) -> Result<Vec<RankedClip>> {
    matrix.validate()?;
    for clip in ranked {
        if matrix.row_of(clip.clip_index).is_none() {
            return Err(EngineError::Invariant(format!(
                "matrix does not cover clip {}",
                clip.clip_index
            )));
        }
    }
    let mut survivors: Vec<(&RankedClip, f64)> = ranked
        .iter()
        .filter_map(|clip| {
            let row = matrix.row_of(clip.clip_index).expect("coverage checked");
            if row.iter().any(|&v| v > 0.0) {
                Some((clip, row_support(row)))
            } else {
                None
            }
        })
        .collect();
    if survivors.len() > max_r {
        survivors.sort_by(|(a, sa), (b, sb)| {
            sb.partial_cmp(sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(
                    b.score
                        .partial_cmp(&a.score)
                        .unwrap_or(std::cmp::Ordering::Equal),
                )
                .then(a.clip_index.cmp(&b.clip_index))
        });
        survivors.truncate(max_r);
    }
    let mut refined: Vec<RankedClip> = survivors.into_iter().map(|(c, _)| c.clone()).collect();
    refined.sort_by_key(|c| c.clip_index);
    Ok(refined)
}

/// Render findings and totals as a fixed-order table so mock-mode output
/// is byte-stable.
pub fn render_findings_table(findings: &[Finding], totals: &[(String, u64)]) -> String {
    let mut lines = vec![
        "| clip | subquery | response |".to_string(),
        "|---|---|---|".to_string(),
    ];
    for f in findings {
        let response = if f.value == 1.0 && f.value.fract() == 0.0 {
            // Binary positives and numeric ones render alike.
            "yes".to_string()
        } else {
            format!("{}", f.value as u64)
        };
        lines.push(format!("| {} | {} | {response} |", f.clip_index, f.subquery));
    }
    for (subquery, total) in totals {
        lines.push(format!("- total {subquery}: {total}"));
    }
    lines.join("\n")
}

/// Collect the positive findings of the refined clips and total the
/// numeric columns; the summary text comes from the chat backend when
/// one is supplied (falling back to the rendered table on failure), or
/// from deterministic template rendering otherwise.
pub fn aggregate(
    question: &str,
    refined: &[RankedClip],
    matrix: &VerificationMatrix,
    chat: Option<&dyn ChatBackend>,
) -> Result<AggregatedContext> {
    if refined.is_empty() {
        return Err(EngineError::EmptyRefinedSet);
    }
    matrix.validate()?;
    let mut findings = Vec::new();
    for clip in refined {
        let row = matrix.row_of(clip.clip_index).ok_or_else(|| {
            EngineError::Invariant(format!("matrix does not cover clip {}", clip.clip_index))
        })?;
        for (value, col) in row.iter().zip(&matrix.cols) {
            if *value > 0.0 {
                findings.push(Finding {
                    clip_index: clip.clip_index,
                    subquery: col.text.clone(),
                    value: *value,
                });
            }
        }
    }
    let mut totals = Vec::new();
    for (j, col) in matrix.cols.iter().enumerate() {
        if col.kind != SubqueryKind::Numeric {
            continue;
        }
        let total: u64 = refined
            .iter()
            .filter_map(|c| matrix.row_of(c.clip_index))
            .map(|row| row[j] as u64)
            .sum();
        totals.push((col.text.clone(), total));
    }
    let table = render_findings_table(&findings, &totals);
    let summary_text = match chat {
        Some(chat) => {
            let request = ChatRequest::text(prompts::aggregation_prompt(question, &table));
            match chat.chat(&request) {
                Ok(text) => text,
                Err(e) => {
                    log::warn!("aggregation chat failed ({e}); using template summary");
                    template_summary(&table)
                }
            }
        }
        None => template_summary(&table),
    };
    Ok(AggregatedContext {
        summary_text,
        per_clip_findings: findings,
        totals,
    })
}

fn template_summary(table: &str) -> String {
    format!("Verified evidence across the refined clips:\n{table}")
}

/// Confidence-based refinement: the model self-rates each clip's
/// relevance 0-10 and the top-r ratings survive (ties by re-rank score,
/// then lower clip index), re-sorted temporally.
pub fn confidence_refine(
    ranked: &[RankedClip],
    question: &str,
    graph: &VideoGraph,
    chat: &dyn ChatBackend,
    max_r: usize,
) -> Result<Vec<RankedClip>> {
    let mut rated: Vec<(&RankedClip, u64)> = Vec::with_capacity(ranked.len());
    for clip in ranked {
        let media = media_ref_for(graph, clip.clip_index)?;
        let request = ChatRequest::text(prompts::rating_prompt(question))
            .with_media(vec![media])
            .expect("single media ref");
        let rating = match chat.chat(&request) {
            Ok(raw) => first_integer(&raw).unwrap_or(0).min(10),
            Err(e) => {
                log::warn!("rating failed for clip {}: {e}", clip.clip_index);
                0
            }
        };
        rated.push((clip, rating));
    }
    rated.sort_by(|(a, ra), (b, rb)| {
        rb.cmp(ra)
            .then(
                b.score
                    .partial_cmp(&a.score)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.clip_index.cmp(&b.clip_index))
    });
    rated.truncate(max_r);
    let mut refined: Vec<RankedClip> = rated.into_iter().map(|(c, _)| c.clone()).collect();
    refined.sort_by_key(|c| c.clip_index);
    Ok(refined)
}

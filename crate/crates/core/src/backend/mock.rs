//! Deterministic mock backends.
//!
//! The mock embedding hashes lowercase tokens into 256 buckets and
//! L2-normalizes the counts, which turns token overlap into a
//! controllable proxy for semantic similarity. The mock chat backend
//! recognizes each pipeline stage by its prompt template and answers
//! from sidecar fixtures with fixed rules, so every stage runs offline
//! and byte-reproducibly.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use super::{
    BackendError, BackendTrace, Capability, ChatBackend, ChatRequest, EmbedBackend, EmbedRequest,
};
use crate::graph::ExtractionRecord;
use crate::parsing::first_integer;

/// Bucket count of the hashed bag-of-words embedding.
pub const MOCK_EMBED_DIM: usize = 256;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "being", "am", "do", "does",
    "did", "doing", "there", "here", "this", "that", "these", "those", "i", "me", "my", "we",
    "our", "you", "your", "he", "him", "his", "she", "her", "it", "its", "they", "them",
    "their", "what", "when", "where", "which", "who", "whom", "why", "how", "many", "much",
    "times", "time", "of", "in", "on", "at", "by", "for", "with", "to", "from", "into",
    "onto", "over", "under", "about", "and", "or", "not", "no", "yes", "then", "than",
    "please", "video", "clip", "clips", "show", "shows", "shown", "showing", "happen",
    "happens", "happened", "happening", "main", "topic", "content", "correct", "order",
    "event", "events", "involving", "get", "got", "gets", "getting", "can", "could", "will",
    "would", "should", "answer", "someone",
];

fn fnv1a64(data: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in data {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Lowercased alphanumeric tokens of a text.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Tokens that carry content: everything except a small stopword list.
pub fn content_words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Token bucket counts of the mock embedding, before normalization.
pub fn mock_buckets(text: &str) -> Vec<u32> {
    let mut buckets = vec![0u32; MOCK_EMBED_DIM];
    for token in tokenize(text) {
        buckets[(fnv1a64(token.as_bytes()) % MOCK_EMBED_DIM as u64) as usize] += 1;
    }
    buckets
}

fn normalize(buckets: &[u32]) -> Option<Vec<f64>> {
    let norm_sq: f64 = buckets.iter().map(|&c| f64::from(c) * f64::from(c)).sum();
    if norm_sq == 0.0 {
        return None;
    }
    let norm = norm_sq.sqrt();
    Some(buckets.iter().map(|&c| f64::from(c) / norm).collect())
}

/// Cosine similarity two texts get under the mock embedding, or `None`
/// when either has no tokens. The corpus generator uses this to verify
/// similarity margins without a backend instance.
pub fn mock_cosine(a: &str, b: &str) -> Option<f64> {
    let (va, vb) = (mock_buckets(a), mock_buckets(b));
    let (na, nb) = (normalize(&va)?, normalize(&vb)?);
    Some(na.iter().zip(&nb).map(|(x, y)| x * y).sum())
}

/// Hashed bag-of-words embedding backend.
pub struct MockEmbedBackend {
    trace: Arc<BackendTrace>,
}

impl MockEmbedBackend {
    pub fn new(trace: Arc<BackendTrace>) -> Self {
        Self { trace }
    }
}

impl EmbedBackend for MockEmbedBackend {
    fn embed(&self, req: &EmbedRequest) -> Result<Vec<Vec<f64>>, BackendError> {
        let started = Instant::now();
        let mut out = Vec::with_capacity(req.texts().len());
        for text in req.texts() {
            let v = normalize(&mock_buckets(text)).ok_or_else(|| {
                BackendError::InvalidRequest(format!("text has no tokens: {text:?}"))
            })?;
            out.push(v);
        }
        let req_bytes: usize = req.texts().iter().map(String::len).sum();
        let resp_bytes = out.len() * MOCK_EMBED_DIM * 8;
        self.trace.record(Capability::Embed, started, req_bytes, resp_bytes);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Mock chat backend
// ---------------------------------------------------------------------------

#[derive(Default)]
struct ClipFixture {
    /// Raw JSON of the sidecar value; the extraction stage returns it
    /// verbatim, as a scripted model response.
    raw: String,
    parsed: ExtractionRecord,
}

/// Scripted chat backend driven by sidecar fixtures.
///
/// Stage dispatch keys off the leading line of each prompt template.
/// All answers are pure functions of (fixtures, prompt, media refs).
pub struct MockChatBackend {
    frames_per_clip: u32,
    fixtures: BTreeMap<String, BTreeMap<u32, ClipFixture>>,
    trace: Arc<BackendTrace>,
}

impl MockChatBackend {
    pub fn new(frames_per_clip: u32, trace: Arc<BackendTrace>) -> Self {
        Self {
            frames_per_clip,
            fixtures: BTreeMap::new(),
            trace,
        }
    }

    /// Register one clip's extraction fixture from its JSON value.
    pub fn insert_sidecar(
        &mut self,
        video_id: &str,
        clip_index: u32,
        value: &serde_json::Value,
    ) -> Result<(), BackendError> {
        let raw = value.to_string();
        let parsed = crate::builder::parse_extraction_response(&raw).map_err(|e| {
            BackendError::InvalidRequest(format!(
                "sidecar for {video_id}:{clip_index} is not a valid extraction: {e}"
            ))
        })?;
        self.fixtures
            .entry(video_id.to_string())
            .or_default()
            .insert(clip_index, ClipFixture { raw, parsed });
        Ok(())
    }

    /// Load a sidecar file: a JSON map from clip index to extraction.
    pub fn load_sidecar_file(&mut self, video_id: &str, path: &Path) -> Result<(), BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::MissingFixture(format!("{}: {e}", path.display())))?;
        let map: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text)
            .map_err(|e| BackendError::InvalidRequest(format!("{}: {e}", path.display())))?;
        for (key, value) in &map {
            let clip_index: u32 = key.parse().map_err(|_| {
                BackendError::InvalidRequest(format!("sidecar key {key:?} is not a clip index"))
            })?;
            self.insert_sidecar(video_id, clip_index, value)?;
        }
        Ok(())
    }

    fn clip_of(&self, req: &ChatRequest) -> Result<&ClipFixture, BackendError> {
        let media = req.media_refs.first().ok_or_else(|| {
            BackendError::InvalidRequest("this stage requires a clip reference".into())
        })?;
        let clip_index = (media.frame_start / u64::from(self.frames_per_clip)) as u32;
        self.fixtures
            .get(&media.video_id)
            .and_then(|m| m.get(&clip_index))
            .ok_or_else(|| {
                BackendError::MissingFixture(format!(
                    "no sidecar for video {:?} clip {clip_index}",
                    media.video_id
                ))
            })
    }

    fn answer(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let prompt = &req.prompt_text;
        if prompt.starts_with("Please analyze the given video") {
            let fixture = self.clip_of(req)?;
            return Ok(fixture.raw.clone());
        }
        if prompt.starts_with("Given a question of a long video") {
            let question = section(prompt, "Question: ");
            let candidates = section(prompt, "Candidates: ");
            if prompt.contains("==important==") {
                return Ok(mock_subqueries(&question, &candidates));
            }
            return Ok(mock_analysis(&question));
        }
        if prompt.starts_with("You are shown one video clip. Answer the question") {
            let fixture = self.clip_of(req)?;
            let subquery = section(prompt, "Question: ");
            return Ok(mock_verification(&subquery, &fixture.parsed));
        }
        if prompt.starts_with("You are shown one video clip. Rate how relevant") {
            let fixture = self.clip_of(req)?;
            let question = section(prompt, "Question: ");
            return Ok(mock_rating(&question, &fixture.parsed).to_string());
        }
        if prompt.starts_with("Summarize the verified findings") {
            return Ok(mock_summary(prompt));
        }
        if prompt.contains("Answer with the option letter") || prompt.contains("Answer concisely")
        {
            return Ok(self.mock_final_answer(req));
        }
        Err(BackendError::InvalidRequest(
            "mock chat backend does not recognize this prompt".into(),
        ))
    }

    fn mock_final_answer(&self, req: &ChatRequest) -> String {
        let prompt = &req.prompt_text;
        let question = section(prompt, "Question: ");
        let options = parse_option_block(prompt);

        // Evidence units, in presentation order: positive findings rows,
        // then per-clip knowledge (the mock's stand-in for watching the
        // attached clips) interleaved with prompt subtitles.
        let mut units: Vec<String> = prompt
            .lines()
            .filter(|l| l.starts_with("| ") && !l.starts_with("| clip |"))
            .map(str::to_lowercase)
            .collect();
        for media in &req.media_refs {
            let clip_index = (media.frame_start / u64::from(self.frames_per_clip)) as u32;
            if let Some(f) = self
                .fixtures
                .get(&media.video_id)
                .and_then(|m| m.get(&clip_index))
            {
                units.push(f.parsed.full_text().to_lowercase());
            }
        }
        for line in prompt.lines() {
            if let Some(rest) = line.strip_prefix("Subtitle: ") {
                units.push(rest.to_lowercase());
            }
        }

        if options.is_empty() {
            return units
                .first()
                .cloned()
                .unwrap_or_else(|| "unknown".to_string());
        }

        let lowered = question.to_lowercase();
        if lowered.contains("how many") {
            if let Some(letter) = pick_count_option(prompt, &options) {
                return format!("Answer: {letter}");
            }
        }
        if lowered.contains("order") {
            if let Some(letter) = pick_order_option(&options, &units) {
                return format!("Answer: {letter}");
            }
        }
        format!("Answer: {}", pick_coverage_option(&options, &units))
    }
}

impl ChatBackend for MockChatBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let started = Instant::now();
        let resp = self.answer(req)?;
        self.trace
            .record(Capability::Chat, started, req.prompt_text.len(), resp.len());
        Ok(resp)
    }
}

/// Text following `marker` up to the first blank line.
fn section(prompt: &str, marker: &str) -> String {
    let Some(at) = prompt.find(marker) else {
        return String::new();
    };
    let rest = &prompt[at + marker.len()..];
    rest.split("\n\n").next().unwrap_or(rest).trim().to_string()
}

fn quoted_spans(text: &str) -> Vec<String> {
    let mut spans = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('"') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('"') else { break };
        let span = &after[..close];
        if !span.trim().is_empty() {
            spans.push(span.trim().to_string());
        }
        rest = &after[close + 1..];
    }
    spans
}

fn mock_analysis(question: &str) -> String {
    let lowered = question.to_lowercase();
    let global = lowered.contains("main topic")
        || lowered.contains("main content")
        || lowered.contains("overall");
    let mut keywords = quoted_spans(question);
    if keywords.is_empty() && !global {
        let words = content_words(question);
        if !words.is_empty() {
            keywords.push(words.join(" "));
        }
    }
    let multiple = lowered.contains("how many") || lowered.contains("order");
    let time = if lowered.contains("beginning") {
        "begin"
    } else if lowered.contains("at the end") {
        "end"
    } else {
        "none"
    };
    let tool = if lowered.contains("how many times") {
        "action counting"
    } else if lowered.contains("how many") {
        "object counting"
    } else if lowered.contains("order") {
        "order"
    } else {
        "none"
    };
    serde_json::json!({
        "multiple": if multiple { "yes" } else { "no" },
        "keywords": keywords,
        "time": time,
        "tool": tool,
        "candidates_necessary": "no",
        "global": if global { "yes" } else { "no" },
    })
    .to_string()
}

fn mock_subqueries(question: &str, candidates: &str) -> String {
    let lowered = question.to_lowercase();
    let mut subqueries: Vec<String> = Vec::new();
    if lowered.contains("how many") {
        subqueries.push(question.replace('"', ""));
    } else {
        let option_texts: Vec<String> = candidates
            .lines()
            .filter_map(parse_option_line)
            .map(|(_, text)| text)
            .collect();
        let sources: Vec<String> = if option_texts.is_empty() {
            let spans = quoted_spans(question);
            if spans.is_empty() {
                vec![content_words(question).join(" ")]
            } else {
                spans
            }
        } else {
            option_texts
        };
        for text in sources {
            for segment in text.split(" then ") {
                let segment = segment.trim();
                if segment.is_empty() {
                    continue;
                }
                let q = format!("Does the video show {segment}?");
                if !subqueries.contains(&q) {
                    subqueries.push(q);
                }
            }
        }
    }
    serde_json::json!({ "subqueries": subqueries }).to_string()
}

/// A unit of clip knowledge "covers" a phrase when every content word of
/// the phrase occurs somewhere in it (substring, case-insensitive).
fn covers(unit_lower: &str, phrase: &str) -> bool {
    let words = content_words(phrase);
    !words.is_empty() && words.iter().all(|w| unit_lower.contains(w.as_str()))
}

fn coverage_fraction(unit_lower: &str, phrase: &str) -> f64 {
    let words = content_words(phrase);
    if words.is_empty() {
        return 0.0;
    }
    let hit = words.iter().filter(|w| unit_lower.contains(w.as_str())).count();
    hit as f64 / words.len() as f64
}

fn mock_verification(subquery: &str, extraction: &ExtractionRecord) -> String {
    let lowered = subquery.to_lowercase();
    if lowered.contains("how many") || lowered.contains("count") {
        let words = content_words(subquery);
        let mut matching = 0u64;
        for action in &extraction.actions {
            let mut text = format!("{} {}", action.entity_name, action.description);
            if let Some(entity) = extraction
                .entities
                .iter()
                .find(|e| e.name == action.entity_name)
            {
                text.push(' ');
                text.push_str(&entity.description);
            }
            let text = text.to_lowercase();
            if !words.is_empty() && words.iter().all(|w| text.contains(w.as_str())) {
                matching += 1;
            }
        }
        return matching.to_string();
    }
    if covers(&extraction.full_text().to_lowercase(), subquery) {
        "yes".to_string()
    } else {
        "no".to_string()
    }
}

fn mock_rating(question: &str, extraction: &ExtractionRecord) -> u32 {
    let text = extraction.full_text().to_lowercase();
    (coverage_fraction(&text, question) * 10.0).round() as u32
}

fn mock_summary(prompt: &str) -> String {
    let table: Vec<&str> = prompt
        .lines()
        .filter(|l| l.starts_with('|') || l.starts_with("- total"))
        .collect();
    format!("Verified evidence across the refined clips:\n{}", table.join("\n"))
}

fn parse_option_line(line: &str) -> Option<(char, String)> {
    let line = line.trim();
    let mut chars = line.chars();
    let letter = chars.next()?;
    if !letter.is_ascii_uppercase() {
        return None;
    }
    let rest = chars.as_str();
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    Some((letter, rest.trim().to_string()))
}

fn parse_option_block(prompt: &str) -> Vec<(char, String)> {
    let Some(at) = prompt.find("Options:\n") else {
        return Vec::new();
    };
    prompt[at + "Options:\n".len()..]
        .lines()
        .take_while(|l| !l.trim().is_empty())
        .filter_map(parse_option_line)
        .collect()
}

fn pick_count_option(prompt: &str, options: &[(char, String)]) -> Option<char> {
    let total_line = prompt.lines().find(|l| l.starts_with("- total"))?;
    let total = first_integer(total_line.rsplit(':').next()?)? as i64;
    options
        .iter()
        .filter_map(|(letter, text)| {
            first_integer(text).map(|v| (*letter, (v as i64 - total).abs()))
        })
        .min_by_key(|&(_, dist)| dist)
        .map(|(letter, _)| letter)
}

fn pick_order_option(options: &[(char, String)], units: &[String]) -> Option<char> {
    for (letter, text) in options {
        let segments: Vec<&str> = text.split(" then ").map(str::trim).collect();
        if segments.len() < 2 {
            continue;
        }
        let mut last_pos: Option<usize> = None;
        let mut consistent = true;
        for segment in &segments {
            let pos = units.iter().position(|u| covers(u, segment));
            match (pos, last_pos) {
                (Some(p), Some(prev)) if p <= prev => {
                    consistent = false;
                    break;
                }
                (Some(p), _) => last_pos = Some(p),
                (None, _) => {
                    consistent = false;
                    break;
                }
            }
        }
        if consistent {
            return Some(*letter);
        }
    }
    None
}

fn pick_coverage_option(options: &[(char, String)], units: &[String]) -> char {
    let mut best = options[0].0;
    let mut best_score = (0usize, 0.0f64);
    for (letter, text) in options {
        let full = units.iter().filter(|u| covers(u, text)).count();
        let partial: f64 = units.iter().map(|u| coverage_fraction(u, text)).sum();
        if full > best_score.0 || (full == best_score.0 && partial > best_score.1 + 1e-12) {
            best = *letter;
            best_score = (full, partial);
        }
    }
    best
}

/// Test helper: replays a fixed queue of responses.
pub struct ScriptedChatBackend {
    responses: Mutex<VecDeque<String>>,
    trace: Arc<BackendTrace>,
}

impl ScriptedChatBackend {
    pub fn new<S: Into<String>>(
        responses: impl IntoIterator<Item = S>,
        trace: Arc<BackendTrace>,
    ) -> Self {
        Self {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
            trace,
        }
    }
}

impl ChatBackend for ScriptedChatBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let started = Instant::now();
        let resp = self
            .responses
            .lock()
            .expect("script lock poisoned")
            .pop_front()
            .ok_or_else(|| BackendError::Transport("script exhausted".into()))?;
        self.trace
            .record(Capability::Chat, started, req.prompt_text.len(), resp.len());
        Ok(resp)
    }
}

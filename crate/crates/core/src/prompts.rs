//! Prompt templates for every model-facing stage.
//!
//! The extraction, query-analysis, and subquery templates are fixed wire
//! formats: the deterministic mock backend recognizes stages by their
//! leading lines, so these strings must not drift casually.

/// Extraction prompt sent once per clip during the offline build.
pub const EXTRACTION_PROMPT: &str = r#"Please analyze the given video and extract key information in a structured JSON format in English. Identify and describe:

Entities: List all distinct objects, people, animals, or other significant elements present in the video.

Actions: If the entities are interacting, describe their actions and relationships in a structured manner.

Scenes: Identify and describe the locations, environments, or contexts where the events occur.
If the video is filmed from a first-person point of view, please also describe "subject" as "me" and actions or interactions from this person.

Ensure the output strictly follows the JSON format below:

{
    "entities": [{"entity name": "", "description": ""}],
    "actions": [{"entity name": "action description"}],
    "scenes": [{"location": ""}]
}

The "entity name" in actions should belong to "entity name" in entities.

Each section should be detailed but concise, capturing all relevant interactions and contextual elements from the video. Avoid unnecessary text outside the JSON output."#;

/// Appended to the extraction prompt when the clip has subtitles.
pub fn extraction_prompt(subtitle_text: &str) -> String {
    if subtitle_text.is_empty() {
        EXTRACTION_PROMPT.to_string()
    } else {
        format!("{EXTRACTION_PROMPT}\n\nSpoken content of this clip:\n{subtitle_text}")
    }
}

/// Task identification and keyword extraction prompt.
pub fn query_analysis_prompt(question: &str, candidates: &str) -> String {
    format!(
        r#"Given a question of a long video and potential candidates:

Question: {question}

Candidates: {candidates}

You need to retrieve the relevant video segments to answer the question. Note that you do not need to see the video. But based on the question please think step by step what are the important things for retrieval.

[keywords] Please identify the information, like entities, scene, action from the question that is important to retrieve the segments for further answer the question. Do not include the candidates in the keywords.

[candidates_necessary] Do you think the information in the candidates is necessary for retrieval? Answer yes or no.

[multiple] Do you think it needs to aggregate the information from multiple segments to answer the question? ONLY answer yes or no.

[time] Please identify if it can tell the question is asking which part of the video. Answer begin, end or none.

[tool] Do you think it needs additional step for answering the question, please select from [object counting, action counting, order, none].

[global] Can this question be answered based on the overall understanding of the whole video? (e.g., "What is the main topic of the video?" or "What is the main content of the video?")

Please output the final answer in json format, for example:

{{"multiple": "no", "keywords": ["man in black"], "time": "begin", "tool": none, "candidates_necessary": "yes", "global": "yes"}}"#
    )
}

/// Subquery generation prompt.
pub fn subquery_prompt(question: &str, candidates: &str) -> String {
    format!(
        r#"Given a question of a long video and potential candidates:

Question: {question}

Candidates: {candidates}

Given a multiple-choice question about a video, break it down into several sub-questions that analyze the key elements required to answer it step by step.

First, identify the key subject or event in the question (e.g., an object, an animal, an action, or a location).
Form yes/no or counting questions to verify the presence of the subject or event in the video (e.g., "Does the video show [subject/event]?").
Ensure the sub-questions cover all necessary aspects to reach the correct answer.

==important==
Please give me the answer in JSON format.
Do not include references to specific time positions in the video when generating questions (e.g., "at the beginning," "in the middle," or "at the end")
Do not go through all the numbers in the candidates for counting quesitons."#
    )
}

/// Per-(clip, subquery) verification prompt.
pub fn verification_prompt(subquery: &str) -> String {
    format!(
        r#"You are shown one video clip. Answer the question below using only this clip.
If it is a yes/no question, answer exactly "yes" or "no". If it asks for a count, answer with a single number.

Question: {subquery}"#
    )
}

/// Evidence aggregation prompt; the findings table is pre-rendered.
pub fn aggregation_prompt(question: &str, table: &str) -> String {
    format!(
        r#"Summarize the verified findings below into a short evidence summary that helps answer the question. Mention every positive finding and every total.

Question: {question}

{table}"#
    )
}

/// Self-rated relevance prompt used by confidence-based refinement.
pub fn rating_prompt(question: &str) -> String {
    format!(
        r#"You are shown one video clip. Rate how relevant this clip is for answering the question on a scale from 0 to 10. Answer with a single integer.

Question: {question}"#
    )
}

/// Render MCQ options as the candidates block shared by several prompts.
pub fn render_candidates(options: &[(char, String)]) -> String {
    if options.is_empty() {
        return "none".to_string();
    }
    options
        .iter()
        .map(|(letter, text)| format!("{letter}. {text}"))
        .collect::<Vec<_>>()
        .join("\n")
}

//! System prompts for the remote provider. Wording changes bump
//! [`PROMPT_VERSION`]; the response schemas are fixed.

use super::LlmOp;

pub const PROMPT_VERSION: &str = "2026-10-14";

const JSON_ONLY: &str =
    "Reply with a single JSON object and nothing else. No prose, no markdown fences.";

const THEMES: &str = "You help a television archive editor plan a satirical montage episode. \
The user message gives the episode title and how many angles are needed. \
Propose that many distinct angles on the title. Prefer unexpected or contrarian takes to literal ones; \
each angle should send the search for spoken archive footage somewhere new. \
Avoid repeating anything listed under `existing`. \
Schema: {\"themes\": [string, ...]}";

const QUERIES: &str = "You write search phrases for a semantic index of sentences spoken on Italian television. \
The user message gives the episode title, the numbered themes, and how many phrases each theme still needs. \
For each requested theme, write short phrases that someone on air might plausibly have said, in Italian. \
Do not repeat any phrase listed under `existing`. \
Schema: {\"queries\": [{\"theme_index\": integer, \"text\": string}, ...]}";

const SCORE: &str = "You rate archive sentences for a satirical montage. \
The user message gives the episode title, its themes, and sentences with ids. \
Give every sentence two integer ratings from 1 to 10. `irony`: how funny or telling the line becomes \
when heard on its own, stripped of whatever the speaker was answering. `relevance`: how well the line \
fits the episode title and themes, counting loose associations as well as direct ones. \
Add a one-line `rationale`. Rate every id exactly once. \
Schema: {\"scores\": [{\"id\": string, \"irony\": integer, \"relevance\": integer, \"rationale\": string}, ...]}";

const ORDER: &str = "You sequence one section of a satirical montage. \
The user message gives the episode title, its themes, the section name with its purpose, and scored sentences with ids. \
Arrange the sentences so that neighbouring lines clash as much as possible while the section still does its job. \
Return every id exactly once. \
Schema: {\"order\": [id, ...]}";

pub fn system_prompt(op: LlmOp) -> String {
    let body = match op {
        LlmOp::Themes => THEMES,
        LlmOp::Queries => QUERIES,
        LlmOp::Score => SCORE,
        LlmOp::Order => ORDER,
    };
    format!("{body}\n{JSON_ONLY}")
}

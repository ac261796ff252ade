use std::collections::HashSet;

use super::hash_embed::words;
use super::{count_tokens, ChatProvider, ChatRequest, ChatResponse, ProviderError};
use crate::prompts::{
    BASELINE_LIST_HEADER, CANDIDATES_PREFIX, MULTI_QUERY_MARKER, REFINEMENT_SELECTED_PREFIX, STEP2_MARKER,
    STEP3_MARKER, USER_REQUEST_PREFIX,
};
use crate::tool_protocol::{parse_id_list, parse_result_blocks, render_boxed, render_query, ToolTag, UNCERTAIN};

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "any", "are", "as", "at", "be", "best", "by", "can", "find", "for", "from", "i", "in", "is",
    "it", "me", "model", "models", "my", "need", "of", "on", "or", "please", "some", "that", "the", "this", "to",
    "want", "which", "with",
];

/// Deterministic stand-in for the reasoning model. It follows the prompt
/// protocol with fixed moves: one similarity search, then a descriptions
/// request for the top candidates; at refinement and in the baseline it picks
/// the option sharing the most distinct query keywords (first wins ties); at
/// reflection it confirms the refinement choice, or always rejects when
/// built with [`LexicalAgent::rejecting`].
#[derive(Debug, Clone, Default)]
pub struct LexicalAgent {
    reject_at_reflection: bool,
}

impl LexicalAgent {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rejecting() -> Self {
        Self { reject_at_reflection: true }
    }

    fn reply(&self, request: &ChatRequest) -> String {
        let last = request.last_content();
        if let Some(question) = last.strip_prefix(MULTI_QUERY_MARKER) {
            let n = request.turns.first().and_then(|t| number_after(&t.content, "output these ")).unwrap_or(4);
            return multi_queries(question.trim(), n);
        }
        let query = find_query(request).unwrap_or_default();
        if let Some(i) = last.find(BASELINE_LIST_HEADER) {
            let lines = last[i + BASELINE_LIST_HEADER.len()..].lines().filter(|l| !l.trim().is_empty());
            let best = best_match(&query, lines.map(|l| (l.split(':').next().unwrap_or("").trim(), l)));
            return render_boxed(best.unwrap_or(UNCERTAIN));
        }
        if last.contains(STEP3_MARKER) {
            if self.reject_at_reflection {
                return format!("The model does not meet every criterion. {}", render_boxed(UNCERTAIN));
            }
            let selected = last
                .split_once(REFINEMENT_SELECTED_PREFIX)
                .and_then(|(_, rest)| rest.split_once(". "))
                .map(|(id, _)| id.trim())
                .unwrap_or(UNCERTAIN);
            return format!("The model meets the stated criteria. {}", render_boxed(selected));
        }
        if last.contains(STEP2_MARKER) {
            let cards: Vec<(String, String)> = parse_result_blocks(last)
                .into_iter()
                .rfind(|b| b.tag == ToolTag::Descriptions)
                .map(|b| b.card_bodies())
                .unwrap_or_default()
                .into_iter()
                .map(|body| (card_id(&body), body))
                .collect();
            let best = best_match(&query, cards.iter().map(|(id, body)| (id.as_str(), body.as_str())));
            return format!("Comparing the full cards. {}", render_boxed(best.unwrap_or(UNCERTAIN)));
        }
        if let Some(line) = last.lines().rev().find(|l| l.starts_with(CANDIDATES_PREFIX)) {
            let pool = request.turns.first().and_then(|t| number_after(&t.content, "<= ")).unwrap_or(3);
            let ids: Vec<String> = parse_id_list(&line[CANDIDATES_PREFIX.len()..]).into_iter().take(pool).collect();
            return format!(
                "Checking the leading candidates.\n{}",
                render_query(ToolTag::Descriptions, &format!("[{}]", ids.join(", ")))
            );
        }
        format!("Searching for matching models.\n{}", render_query(ToolTag::Similarity, &query))
    }
}

impl ChatProvider for LexicalAgent {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let text = self.reply(request);
        Ok(ChatResponse {
            prompt_tokens: count_tokens(&request.prompt_text()),
            completion_tokens: count_tokens(&text),
            text,
            proxy_counts: true,
        })
    }
}

fn multi_queries(question: &str, n: usize) -> String {
    const TEMPLATES: [&str; 4] = ["{q}", "model for {q}", "{q} pretrained", "{q} checkpoint"];
    (0..n).map(|i| TEMPLATES[i % TEMPLATES.len()].replace("{q}", question)).collect::<Vec<_>>().join("\n")
}

/// The user request, from the first turn that carries one.
fn find_query(request: &ChatRequest) -> Option<String> {
    request
        .turns
        .iter()
        .find_map(|t| t.content.lines().find_map(|l| l.strip_prefix(USER_REQUEST_PREFIX)).map(str::to_string))
}

fn keywords(text: &str) -> HashSet<String> {
    words(text).filter(|w| !STOPWORDS.contains(&w.as_str())).collect()
}

/// Id of the option sharing the most distinct query keywords.
fn best_match<'a>(query: &str, options: impl Iterator<Item = (&'a str, &'a str)>) -> Option<&'a str> {
    let wanted = keywords(query);
    let mut best: Option<(&str, usize)> = None;
    for (id, text) in options {
        if id.is_empty() {
            continue;
        }
        let have: HashSet<String> = words(text).collect();
        let score = wanted.iter().filter(|w| have.contains(*w)).count();
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((id, score));
        }
    }
    best.map(|(id, _)| id)
}

fn card_id(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string))
        .unwrap_or_default()
}

/// The integer immediately after `prefix`, e.g. `3` in "<= 3 candidate".
fn number_after(text: &str, prefix: &str) -> Option<usize> {
    let start = text.find(prefix)? + prefix.len();
    let digits: String = text[start..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts;
    use crate::providers::ChatTurn;
    use crate::providers::Temperature;

    fn ask(turns: Vec<ChatTurn>) -> String {
        LexicalAgent::new().complete(&ChatRequest::new(turns, Temperature::ZERO)).unwrap().text
    }

    #[test]
    fn multi_query_lines() {
        let out = ask(vec![
            ChatTurn::system(prompts::multi_query_system(3)),
            ChatTurn::user(prompts::multi_query_user("tweet sentiment")),
        ]);
        assert_eq!(out.lines().count(), 3);
        assert!(out.lines().all(|l| l.contains("tweet sentiment")));
    }

    #[test]
    fn reasoning_moves() {
        let system = ChatTurn::system(prompts::main_prompt("q", 2, 5));
        let open = ChatTurn::user(prompts::opening_message("french translation", None));
        let first = ask(vec![system.clone(), open.clone()]);
        assert!(first.contains("<|begin_similarity_query|>\nfrench translation\n"));
        let ids: Vec<String> = ["a/1", "b/2", "c/3"].iter().map(|s| s.to_string()).collect();
        let second =
            ask(vec![system, open, ChatTurn::assistant(first), ChatTurn::user(prompts::candidates_line(&ids))]);
        assert!(second.contains("<|begin_descriptions_query|>\n[a/1, b/2]\n"));
    }

    #[test]
    fn baseline_picks_keyword_overlap() {
        let lines = vec!["x/a: image classifier".to_string(), "x/b: french translation model".to_string()];
        let out = ask(vec![
            ChatTurn::system(prompts::BASELINE_SYSTEM),
            ChatTurn::user(prompts::baseline_user("translate into french", &lines)),
        ]);
        assert_eq!(out, "\\boxed{x/b}");
    }

    #[test]
    fn reflection_confirms() {
        let out = ask(vec![ChatTurn::user(prompts::reflection_instruction("org/m-1.5"))]);
        assert!(out.ends_with("\\boxed{org/m-1.5}"));
    }
}

//! Prompt templates for every chat call the selector makes.
//!
//! The mock agents key off the literal markers below (`USER_REQUEST_PREFIX`,
//! `CANDIDATES_PREFIX`, the step headings), so changing them is a protocol
//! change.

use crate::tool_protocol::{render_boxed, UNCERTAIN};

pub const USER_REQUEST_PREFIX: &str = "User request: ";
pub const TASK_CATEGORY_PREFIX: &str = "Task category: ";
pub const CANDIDATES_PREFIX: &str = "Current candidate models: ";
pub const STEP1_MARKER: &str = "Step 1: Reasoning-Retrieval";
pub const STEP2_MARKER: &str = "Step 2: Refinement";
pub const STEP3_MARKER: &str = "Step 3: Reflection";
pub const REFINEMENT_SELECTED_PREFIX: &str = "The refinement step selected ";
pub const MULTI_QUERY_MARKER: &str = "Generate multiple search queries related to: ";
pub const BASELINE_LIST_HEADER: &str = "Candidate models:";

/// System prompt for the reasoning conversation.
pub fn main_prompt(query: &str, pool_size: usize, top_k: usize) -> String {
    format!(
        "You are an expert reasoning assistant for selecting models on HuggingFace. Your task is progressive \
reasoning, iteratively filtering out the most appropriate model based on the user's input: {query}

{STEP1_MARKER}
- Firstly, analyze the user's request carefully and generate retrieval query. Then use filtering tools, updating your reasoning.
- Apply multiple rounds of reasoning and retrieval as needed. You may repeat any tool multiple times or skip tools if unnecessary.
- Avoid making assumptions about model functionality based solely on model IDs.

{STEP2_MARKER}
- Once you have <= {pool_size} candidate models, use refinement tool to provide a selection of the one best model.

{STEP3_MARKER}
- Verify the selected model satisfies all user criteria: language, dataset compatibility, model size, type, and special requirements.
- If the model meets all these criteria, and you have information to recommend this model, return the final result: {model_box}.
- If any of the criteria are not satisfied, system output: {uncertain_box}.

Tools

Tool 1: Direct Similarity Retrieval
- Used to find models similar to the user's query. This tool is typically used first.
Input:
<|begin_similarity_query|>
Retrieval Query
<|end_similarity_query|>
Output: the top {top_k} most relevant models:
<|begin_similarity_result|>
[model 1, model 2, model 3...]
<|end_similarity_result|>

Tool 2: Metadata Language Retrieval
- Filters models based on the specified language.
Input: the ISO language code of the user query:
<|begin_language_query|>
ISO language code
<|end_language_query|>
Output: the top {top_k} models:
<|begin_language_result|>
[model 1, model 2, model 3...]
<|end_language_result|>

Tool 3: Metadata Dataset Retrieval
- Filters models based on the dataset requirements.
Input: describe the required dataset:
<|begin_dataset_query|>
Describe the required dataset
<|end_dataset_query|>
Output: the top {top_k} models:
<|begin_dataset_result|>
[model 1, model 2, model 3...]
<|end_dataset_result|>
Special case: if some model cards are missing dataset labels and no similarity search results are returned for the \
dataset retrieval, the dataset retrieval is marked untrustworthy.

Tool 4: Get a detailed description of the model
- Used to get the full model cards of at most {pool_size} candidates from Step 1.
Input:
<|begin_descriptions_query|>
[model 1, model 2, model 3]
<|end_descriptions_query|>
Output: complete descriptions of these models:
<|begin_descriptions_result|>
[description 1, description 2, description 3]
<|end_descriptions_result|>",
        model_box = render_boxed("MODEL_NAME"),
        uncertain_box = render_boxed(UNCERTAIN),
    )
}

/// First user message of a session.
pub fn opening_message(query: &str, task_category: Option<&str>) -> String {
    let mut out = format!("{USER_REQUEST_PREFIX}{query}\n");
    if let Some(c) = task_category.filter(|c| !c.trim().is_empty()) {
        out.push_str(&format!("{TASK_CATEGORY_PREFIX}{c}\n"));
    }
    out.push_str(&format!("Begin with {STEP1_MARKER}."));
    out
}

pub fn candidates_line(ids: &[String]) -> String {
    format!("{CANDIDATES_PREFIX}[{}]", ids.join(", "))
}

pub const NO_TOOL_CALL: &str =
    "No tool call was found in your last message. Continue with Step 1 using the retrieval tools.";

pub fn refinement_instruction() -> String {
    format!(
        "{STEP2_MARKER}. Compare the complete model cards above and select the one best model for the user's \
request. Answer with {}.",
        render_boxed("MODEL_NAME")
    )
}

pub fn reflection_instruction(selected: &str) -> String {
    format!(
        "{STEP3_MARKER}. {REFINEMENT_SELECTED_PREFIX}{selected}. Verify the selected model satisfies all user \
criteria: language, dataset compatibility, model size, type, and special requirements. If the model meets all \
these criteria, return the final result: {}. If any of the criteria are not satisfied, output: {}.",
        render_boxed(selected),
        render_boxed(UNCERTAIN)
    )
}

/// Sent after a rejection, before the next round of Step 1.
pub fn reflection_failure(rejected: &[String]) -> String {
    format!(
        "Now system have completed a full turn, The Reflection module believes that [{}] are not capable of doing \
this job. Please return to the thinking-retrieval stage and re-screen other models. The system has automatically \
updated your previous query results for you. Please go through the Step 1.",
        rejected.join(", ")
    )
}

pub fn multi_query_system(n: usize) -> String {
    format!(
        "You are a helpful assistant in generating multiple search queries based on a single query entered by a \
user. This will allow us to use the user query to more accurately find the most similar model via Hugging Face \
model card embeddings. The generated queries should characterize the model itself (e.g., inputs to the model, uses \
of the model, datasets, kinds of languages, etc.) as needed by the user. You only need to output these {n} queries, \
each on a new line, with no other information."
    )
}

pub fn multi_query_user(question: &str) -> String {
    format!("{MULTI_QUERY_MARKER}{question}")
}

pub const BASELINE_SYSTEM: &str = "You are a model selection assistant. Given a user request and a list of \
candidate models with short descriptions, choose the single most suitable model. Reply with the chosen model id \
in the form \\boxed{MODEL_ID}.";

pub fn baseline_user(query: &str, lines: &[String]) -> String {
    format!("{USER_REQUEST_PREFIX}{query}\n{BASELINE_LIST_HEADER}\n{}", lines.join("\n"))
}

pub mod card_store;
pub mod config;
pub mod evaluation;
pub mod fixtures;
pub mod index;
pub mod pipeline;
pub mod prompts;
pub mod providers;
pub mod retrieval;
pub mod tool_protocol;

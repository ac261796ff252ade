//! Bundled test corpora, scripts and datasets.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::card_store::{
    parse_raw_corpus, simplify_card_fallback, CardCorpus, ProcessedModelCard, Provenance, DEFAULT_DESCRIPTION_CHARS,
};
use crate::evaluation::EvalRequest;
use crate::providers::ScriptedChat;

/// Thirty raw hub cards: sentiment, speech synthesis, document layout,
/// translation and assorted popular models.
pub const CARDS30_JSONL: &str = include_str!("../fixtures/cards30.jsonl");
pub const EXAMPLE1_SCRIPT: &str = include_str!("../fixtures/example1.script.jsonl");
pub const EXAMPLE3_SCRIPT: &str = include_str!("../fixtures/example3.script.jsonl");
pub const EXAMPLE1_QUERY: &str = "Could you perform a sentiment analysis on the tweets provided in ./tweets.txt?";
pub const EXAMPLE1_ANSWER: &str = "cardiffnlp/twitter-roberta-base-sentiment-latest";
pub const EXAMPLE3_QUERY: &str =
    "Could you help me generate a speech clone that conveys specific emotions from the text: ./emotion_text.txt?";
pub const EXAMPLE3_ANSWER: &str = "metavoiceio/metavoice-1B-v0.1";
/// Ten annotated requests over the thirty-card corpus, one per line.
pub const TALLY10_JSONL: &str = include_str!("../fixtures/tally10.jsonl");
/// Ten families of three cards whose descriptions share a prefix longer than
/// the baseline truncation; members differ only after it.
pub const BLOAT_CARDS_JSONL: &str = include_str!("../fixtures/bloat30.jsonl");
/// Twenty requests over [`BLOAT_CARDS_JSONL`], each naming one member's
/// specialty.
pub const BLOAT_REQUESTS_JSONL: &str = include_str!("../fixtures/bloat20.jsonl");

fn bundled_corpus(jsonl: &str) -> CardCorpus {
    let raw = parse_raw_corpus(jsonl);
    assert!(raw.skipped.is_empty(), "bundled fixture has malformed lines: {:?}", raw.skipped);
    CardCorpus::new(raw.cards.iter().map(|c| simplify_card_fallback(c, DEFAULT_DESCRIPTION_CHARS)))
}

/// The thirty-card corpus, simplified offline.
pub fn cards30() -> CardCorpus {
    bundled_corpus(CARDS30_JSONL)
}

pub fn bloat_corpus() -> CardCorpus {
    bundled_corpus(BLOAT_CARDS_JSONL)
}

pub fn bloat_requests() -> Vec<EvalRequest> {
    crate::evaluation::parse_requests(BLOAT_REQUESTS_JSONL).expect("bundled dataset parses")
}

pub fn example1_chat() -> ScriptedChat {
    ScriptedChat::parse(EXAMPLE1_SCRIPT).expect("bundled script parses")
}

pub fn example3_chat() -> ScriptedChat {
    ScriptedChat::parse(EXAMPLE3_SCRIPT).expect("bundled script parses")
}

const FILLER_SYLLABLES: &[&str] =
    &["ka", "zu", "mo", "ri", "ten", "vax", "lo", "pem", "qui", "dar", "sol", "nex", "bri", "tor", "gal", "yem"];

fn filler_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    (0..n).map(|_| *FILLER_SYLLABLES.choose(rng).expect("non-empty")).collect()
}

/// The thirty-card corpus padded with `size - 30` synthetic cards made of
/// pseudo-words. Filler descriptions are long enough to hit the
/// simplification budget, so each filler contributes the same prompt size to
/// a baseline listing.
pub fn synthetic_corpus(size: usize, seed: u64) -> CardCorpus {
    let base = cards30();
    let mut cards: Vec<ProcessedModelCard> = base.cards().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut i = 0;
    while cards.len() < size {
        let words: Vec<String> = (0..120).map(|_| filler_word(&mut rng)).collect();
        let description: String = words.join(" ").chars().take(DEFAULT_DESCRIPTION_CHARS).collect();
        cards.push(ProcessedModelCard {
            id: format!("synthetic/{}-{i:04}", filler_word(&mut rng)),
            task: filler_word(&mut rng),
            downloads: rng.random_range(0..10_000),
            likes: rng.random_range(0..100),
            languages: Vec::new(),
            datasets: Vec::new(),
            simplified_description: description.trim_end().to_string(),
            provenance: Provenance::Passthrough,
        });
        i += 1;
    }
    cards.truncate(size);
    CardCorpus::new(cards)
}

/// Parsed [`TALLY10_JSONL`].
pub fn tally10() -> Vec<EvalRequest> {
    crate::evaluation::parse_requests(TALLY10_JSONL).expect("bundled dataset parses")
}

//! Acceptance suite. Runs every check, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::{BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use huggr4_core::card_store::{CardCorpus, CardView};
use huggr4_core::config::PipelineConfig;
use huggr4_core::evaluation::{
    baseline_direct_select, evaluate, evaluate_selections, run_method, EvalRequest, Method, DEFAULT_TRUNCATION,
};
use huggr4_core::fixtures::{self, EXAMPLE1_ANSWER, EXAMPLE1_QUERY, EXAMPLE3_ANSWER, EXAMPLE3_QUERY};
use huggr4_core::index::{build_index, cosine_similarity, DualIndex, RankedHit};
use huggr4_core::pipeline::{
    run_selection, OutcomeStatus, Providers, RoundVerdict, SelectionMode, SelectionOutcome, TraceRole, UserQuery,
};
use huggr4_core::prompts::{MULTI_QUERY_MARKER, REFINEMENT_SELECTED_PREFIX, STEP2_MARKER, STEP3_MARKER};
use huggr4_core::providers::{
    ChatProvider, ChatRequest, ChatResponse, HashEmbedder, LexicalAgent, ProviderError, ScriptEntry, ScriptedChat,
    TokenLedger,
};
use huggr4_core::retrieval::{execute_retrieval, failure_trace_check, RetrievalContext, Verdict};
use huggr4_core::tool_protocol::{
    parse_actions, parse_boxed, parse_result_blocks, render_action, render_boxed, render_query, ActionKind, Boxed,
    ToolAction, ToolTag, INVALID_RETRIEVAL, UNCERTAIN,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || format!("{what} took {elapsed:?}, limit {limit:?}"))
}

fn main() {
    type Named = (&'static str, fn() -> Check);
    let checks: [Named; 9] = [
        ("retrieval matches brute-force oracle", retrieval_oracle),
        ("cosine symmetry and scale invariance", cosine_properties),
        ("token use constant in corpus size", token_constancy),
        ("sliding window never resurfaces frozen ids", sliding_window),
        ("failure tracing and theta monotonicity", failure_tracing),
        ("golden traces replay byte-identically", golden_traces),
        ("protocol render/parse round trip", protocol_round_trip),
        ("metrics match hand tally", metrics_tally),
        ("beats truncated baseline on bloat fixture", bloat_benchmark),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let ms = start.elapsed().as_millis();
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name} ({detail}; {ms} ms)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

const ORACLE_QUERIES: [&str; 20] = [
    "sentiment analysis of tweets",
    "positive negative neutral classification",
    "emotion detection in english text",
    "text to speech voice cloning",
    "emotional speech synthesis",
    "zero-shot multilingual tts",
    "table detection in scanned documents",
    "document layout analysis",
    "translate english to french",
    "french to english translation",
    "en fr",
    "speech recognition transcription",
    "summarize news articles",
    "extractive question answering squad",
    "text to image generation",
    "imagenet image classification",
    "named entity recognition",
    "code generation",
    "publaynet doclaynet",
    "twitter roberta",
];

/// Full sort over every card, written independently of the index.
fn brute_force(index: &DualIndex, query: &[f32], view: CardView, k: usize) -> Vec<String> {
    let q: Vec<f64> = query.iter().map(|&x| x as f64).collect();
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, String)> = index
        .records()
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.vector(view).iter().map(|&x| x as f64).collect();
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
            let s = if qn == 0.0 || vn == 0.0 { 0.0 } else { (dot / (qn * vn)).clamp(-1.0, 1.0) };
            (s, r.model_id.clone())
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

fn ids(hits: &[RankedHit]) -> Vec<String> {
    hits.iter().map(|h| h.model_id.clone()).collect()
}

fn retrieval_oracle() -> Check {
    let corpus = fixtures::cards30();
    let embedder = HashEmbedder::default();
    let index = build_index(&corpus, &embedder).map_err(|e| e.to_string())?;
    let frozen: Vec<Vec<String>> =
        serde_json::from_str(include_str!("fixtures/oracle_top5.json")).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut compared = 0;
    for (qi, q) in ORACLE_QUERIES.iter().enumerate() {
        let v = embedder.embed_text(q);
        for view in [CardView::Full, CardView::Metadata] {
            for k in [1, 3, 5] {
                let got = ids(&index.top_k(&v, view, k, &HashSet::new()).map_err(|e| e.to_string())?);
                let want = brute_force(&index, &v, view, k);
                ensure(got == want, || format!("{q:?} {view:?} k={k}: {got:?} != {want:?}"))?;
                compared += 1;
            }
        }
        let got = ids(&index.top_k(&v, CardView::Full, 5, &HashSet::new()).unwrap());
        ensure(got == frozen[qi], || format!("{q:?}: {got:?} differs from frozen oracle {:?}", frozen[qi]))?;
    }
    within(start.elapsed(), Duration::from_secs(1), "oracle comparison")?;
    Ok(format!("{compared} rankings identical"))
}

fn cosine_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_sym, mut worst_scale) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let d = rng.random_range(1..=64);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let c: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
        let ab = cosine_similarity(&a, &b).map_err(|e| e.to_string())?;
        let ba = cosine_similarity(&b, &a).map_err(|e| e.to_string())?;
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        let cab = cosine_similarity(&scaled, &b).map_err(|e| e.to_string())?;
        worst_sym = worst_sym.max((ab - ba).abs());
        worst_scale = worst_scale.max((ab - cab).abs());
    }
    ensure(worst_sym <= 1e-12, || format!("symmetry error {worst_sym:e}"))?;
    ensure(worst_scale <= 1e-9, || format!("scale error {worst_scale:e}"))?;
    Ok(format!("max errors {worst_sym:.1e} / {worst_scale:.1e}"))
}

fn token_constancy() -> Check {
    let start = Instant::now();
    let embedder = HashEmbedder::default();
    let config = PipelineConfig { pool_size: 3, top_k: 5, theta: 0.8, multi_query_n: 4, ..PipelineConfig::default() };
    let mut pipeline = Vec::new();
    let mut baseline = Vec::new();
    for size in [30, 300, 1000] {
        let corpus = fixtures::synthetic_corpus(size, 7);
        let index = build_index(&corpus, &embedder).map_err(|e| e.to_string())?;
        let chat = fixtures::example1_chat();
        let out = run_selection(
            &UserQuery::new(EXAMPLE1_QUERY),
            &corpus,
            &index,
            Providers { chat: &chat, embedder: &embedder },
            &config,
            SelectionMode::Full,
        )
        .map_err(|e| format!("size {size}: {e}"))?;
        ensure(out.model_id.as_deref() == Some(EXAMPLE1_ANSWER), || format!("size {size}: {:?}", out.model_id))?;
        pipeline.push(out.token_usage.total());
        let chat = ScriptedChat::new(vec![ScriptEntry::new(render_boxed(EXAMPLE1_ANSWER))]);
        let base = baseline_direct_select(&UserQuery::new(EXAMPLE1_QUERY), &corpus, &chat, DEFAULT_TRUNCATION);
        baseline.push(base.token_usage.prompt_tokens());
    }
    ensure(pipeline.windows(2).all(|w| w[0] == w[1]), || format!("pipeline totals differ: {pipeline:?}"))?;
    ensure(baseline.windows(2).all(|w| w[0] < w[1]), || format!("baseline not increasing: {baseline:?}"))?;
    let ratio = baseline[2] as f64 / baseline[0] as f64;
    ensure(ratio >= 10.0, || format!("baseline ratio {ratio:.1}"))?;
    within(start.elapsed(), Duration::from_secs(30), "token benchmark")?;
    Ok(format!("pipeline {} tokens at every size; baseline {baseline:?} ({ratio:.1}x)", pipeline[0]))
}

/// Reasoning model that plays random but well-formed moves, including
/// requests for ids it should not be able to see.
struct RandomAgent {
    rng: Mutex<ChaCha8Rng>,
    ids: Vec<String>,
}

const RANDOM_WORDS: &[&str] = &[
    "sentiment",
    "tweets",
    "speech",
    "voice",
    "emotion",
    "table",
    "layout",
    "document",
    "translation",
    "french",
    "english",
    "image",
    "summary",
    "question",
    "answer",
    "audio",
    "clone",
    "detection",
    "model",
    "text",
];
const RANDOM_LANGS: &[&str] = &["en", "fr", "de", "zh", "multilingual", "english"];

impl RandomAgent {
    fn new(seed: u64, corpus: &CardCorpus) -> Self {
        Self { rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)), ids: corpus.ids().map(str::to_string).collect() }
    }

    fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
        (0..n).map(|_| *RANDOM_WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    }

    fn reply(&self, last: &str) -> String {
        let mut rng = self.rng.lock().unwrap();
        let rng = &mut *rng;
        if last.starts_with(MULTI_QUERY_MARKER) {
            return (0..4).map(|_| Self::words(rng, 3)).collect::<Vec<_>>().join("\n");
        }
        if last.contains(STEP3_MARKER) {
            let roll: f64 = rng.random();
            if roll < 0.75 {
                return render_boxed(UNCERTAIN);
            }
            if roll < 0.9 {
                let selected = last
                    .split_once(REFINEMENT_SELECTED_PREFIX)
                    .and_then(|(_, rest)| rest.split_once(". "))
                    .map(|(id, _)| id.trim().to_string())
                    .unwrap_or_default();
                return render_boxed(&selected);
            }
            return render_boxed(self.ids.choose(rng).unwrap());
        }
        if last.contains(STEP2_MARKER) {
            let pool: Vec<String> = parse_result_blocks(last)
                .into_iter()
                .rfind(|b| b.tag == ToolTag::Descriptions)
                .map(|b| b.card_bodies().iter().map(|c| card_id(c)).collect())
                .unwrap_or_default();
            return match (rng.random::<f64>(), pool.choose(rng)) {
                (r, _) if r < 0.1 => render_boxed(UNCERTAIN),
                (_, Some(id)) => render_boxed(id),
                (_, None) => render_boxed(UNCERTAIN),
            };
        }
        let mut visible: Vec<String> = parse_result_blocks(last).iter().flat_map(|b| b.ids()).collect();
        if let Some(line) = last.lines().find(|l| l.starts_with("Current candidate models: ")) {
            visible.extend(huggr4_core::tool_protocol::parse_id_list(&line["Current candidate models: ".len()..]));
        }
        let mut out = String::from("Thinking.\n");
        for _ in 0..rng.random_range(0..=2) {
            let action = match rng.random_range(0..5) {
                0 | 1 => render_query(ToolTag::Similarity, &Self::words(rng, 3)),
                2 => render_query(ToolTag::Language, RANDOM_LANGS.choose(rng).unwrap()),
                3 => render_query(ToolTag::Dataset, &Self::words(rng, 2)),
                _ => {
                    let mut pick: Vec<String> = Vec::new();
                    for _ in 0..rng.random_range(1..=4) {
                        let from_visible = rng.random_bool(0.7) && !visible.is_empty();
                        let source = if from_visible { &visible } else { &self.ids };
                        pick.push(source.choose(rng).unwrap().clone());
                    }
                    render_query(ToolTag::Descriptions, &format!("[{}]", pick.join(", ")))
                }
            };
            out.push_str(&action);
            out.push('\n');
        }
        out
    }
}

impl ChatProvider for RandomAgent {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let text = self.reply(request.last_content());
        Ok(ChatResponse { text, prompt_tokens: 0, completion_tokens: 0, proxy_counts: true })
    }
}

fn card_id(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v["id"].as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Checks one session against the freeze invariants.
fn window_invariants(out: &SelectionOutcome, pool_size: usize) -> Result<usize, String> {
    let frozen_before = |round: u32| -> BTreeSet<String> {
        out.rounds
            .iter()
            .filter(|r| r.round < round && r.verdict == RoundVerdict::Rejected)
            .flat_map(|r| r.pool.iter().chain(r.selected.iter()).cloned())
            .collect()
    };
    for rec in out.trace.records.iter().filter(|r| r.role == TraceRole::User) {
        let frozen = frozen_before(rec.round);
        for block in parse_result_blocks(&rec.text) {
            let shown = match block.tag {
                ToolTag::Descriptions => block.card_bodies().iter().map(|c| card_id(c)).collect(),
                _ => block.ids(),
            };
            if let Some(id) = shown.iter().find(|id| frozen.contains(*id)) {
                return Err(format!("frozen {id} in a round {} result block", rec.round));
            }
        }
    }
    let mut rejections = 0;
    for r in &out.rounds {
        let frozen = frozen_before(r.round);
        if let Some(id) = r.pool.iter().chain(r.selected.iter()).find(|id| frozen.contains(*id)) {
            return Err(format!("frozen {id} in round {} pool or answer", r.round));
        }
        if r.verdict == RoundVerdict::Rejected {
            rejections += 1;
            let after = frozen_before(r.round + 1).len();
            ensure(after <= rejections * pool_size, || format!("{after} frozen after {rejections} rejections"))?;
        }
    }
    if let (Some(id), Some(last)) = (&out.model_id, out.rounds.last()) {
        ensure(!frozen_before(last.round).contains(id), || format!("answer {id} was frozen"))?;
    }
    Ok(rejections)
}

fn sliding_window() -> Check {
    let corpus = fixtures::cards30();
    let embedder = HashEmbedder::default();
    let index = build_index(&corpus, &embedder).map_err(|e| e.to_string())?;
    let config = PipelineConfig { max_rounds: 10, max_turns_per_round: 4, ..PipelineConfig::default() };
    let mut total_rejections = 0;
    for seed in 0..100 {
        let agent = RandomAgent::new(seed, &corpus);
        let providers = Providers { chat: &agent, embedder: &embedder };
        let out = match run_selection(
            &UserQuery::new("find a model"),
            &corpus,
            &index,
            providers,
            &config,
            SelectionMode::Full,
        ) {
            Ok(out) => out,
            Err(e) => *e.partial,
        };
        total_rejections += window_invariants(&out, config.pool_size).map_err(|e| format!("seed {seed}: {e}"))?;
    }

    let small = CardCorpus::new(fixtures::cards30().cards().iter().take(5).cloned());
    let small_index = build_index(&small, &embedder).map_err(|e| e.to_string())?;
    let agent = LexicalAgent::rejecting();
    let out = run_selection(
        &UserQuery::new("sentiment of tweets"),
        &small,
        &small_index,
        Providers { chat: &agent, embedder: &embedder },
        &config,
        SelectionMode::Full,
    )
    .map_err(|e| e.to_string())?;
    let rejections = window_invariants(&out, config.pool_size)?;
    ensure(out.status == OutcomeStatus::ExhaustedUncertain, || format!("5-card status {:?}", out.status))?;
    ensure(rejections <= 2, || format!("5-card corpus took {rejections} rejections"))?;
    ensure(out.frozen.len() == 5, || format!("5-card frozen {:?}", out.frozen))?;
    Ok(format!("100 seeds, {total_rejections} rejections; 5 cards exhausted after {rejections}"))
}

fn failure_tracing() -> Check {
    let corpus = fixtures::cards30();
    let embedder = HashEmbedder::default();
    let index = build_index(&corpus, &embedder).map_err(|e| e.to_string())?;
    let chat = ScriptedChat::new(Vec::new());
    let run = |kind: ActionKind, payload: &str, theta: f64| {
        let config = PipelineConfig { theta, ..PipelineConfig::default() };
        let ctx =
            RetrievalContext { corpus: &corpus, index: &index, embedder: &embedder, chat: &chat, config: &config };
        let action = ToolAction { kind, payload: payload.into(), raw_span: (0, 0) };
        execute_retrieval(&action, &ctx, &HashSet::new(), &mut TokenLedger::new()).expect("retrieval runs")
    };

    let out =
        run(ActionKind::DatasetRetrieval, "models designed for sentiment analysis on Twitter or social media", 0.8);
    let verdict = out.trace.map(|t| t.verdict);
    ensure(verdict == Some(Verdict::Untrusted), || format!("dataset verdict {verdict:?}"))?;
    let expected = format!("<|begin_dataset_result|>\n{INVALID_RETRIEVAL}\n<|end_dataset_result|>");
    ensure(out.result_block == expected, || format!("result block {:?}", out.result_block))?;
    ensure(out.hits.is_empty(), || "untrusted retrieval leaked hits".into())?;

    let probes = [
        (ActionKind::LanguageRetrieval, "fr"),
        (ActionKind::LanguageRetrieval, "en"),
        (ActionKind::LanguageRetrieval, "english sentiment"),
        (ActionKind::LanguageRetrieval, "multilingual speech"),
        (ActionKind::DatasetRetrieval, "publaynet doclaynet"),
        (ActionKind::DatasetRetrieval, "squad"),
        (ActionKind::DatasetRetrieval, "imagenet"),
        (ActionKind::DatasetRetrieval, "tweets"),
    ];
    let grid = [0.0, 0.4, 0.6, 0.8, 1.0];
    let mut trusted_counts = Vec::new();
    for (kind, payload) in probes {
        let verdicts: Vec<bool> = grid.iter().map(|&t| run(kind, payload, t).trusted()).collect();
        // Once untrusted at some theta, untrusted at every larger theta.
        ensure(verdicts.windows(2).all(|w| w[0] || !w[1]), || format!("{payload:?}: {verdicts:?} over {grid:?}"))?;
        trusted_counts.push(verdicts.iter().filter(|&&v| v).count());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pool: Vec<String> = (0..12).map(|i| format!("m/{i}")).collect();
    for _ in 0..200 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<RankedHit> {
            let mut p = pool.clone();
            p.shuffle(rng);
            p.into_iter().take(5).map(|model_id| RankedHit { model_id, score: 0.0 }).collect()
        };
        let (meta, direct) = (draw(&mut rng), draw(&mut rng));
        let verdicts: Vec<bool> =
            grid.iter().map(|&t| failure_trace_check(&meta, &direct, t, 5).verdict == Verdict::Trusted).collect();
        ensure(verdicts.windows(2).all(|w| w[0] || !w[1]), || format!("random lists: {verdicts:?}"))?;
    }
    Ok(format!("sentinel verbatim; trusted theta counts per probe {trusted_counts:?}"))
}

fn golden_run(query: &str, chat: &ScriptedChat) -> Result<SelectionOutcome, String> {
    let corpus = fixtures::cards30();
    let embedder = HashEmbedder::default();
    let index = build_index(&corpus, &embedder).map_err(|e| e.to_string())?;
    run_selection(
        &UserQuery::new(query),
        &corpus,
        &index,
        Providers { chat, embedder: &embedder },
        &PipelineConfig::default(),
        SelectionMode::Full,
    )
    .map_err(|e| e.to_string())
}

fn golden_traces() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cases = [
        ("example1", EXAMPLE1_QUERY, EXAMPLE1_ANSWER, 1, fixtures::example1_chat as fn() -> ScriptedChat),
        ("example3", EXAMPLE3_QUERY, EXAMPLE3_ANSWER, 2, fixtures::example3_chat),
    ];
    let mut sizes = Vec::new();
    for (name, query, answer, rounds, chat) in cases {
        let mut files = Vec::new();
        for run in 0..2 {
            let out = golden_run(query, &chat())?;
            ensure(out.selected() == Some(answer), || format!("{name}: selected {:?}", out.model_id))?;
            ensure(out.rounds_used == rounds, || format!("{name}: rounds_used {}", out.rounds_used))?;
            let path = dir.path().join(format!("{name}-{run}.jsonl"));
            out.trace.write(&path).map_err(|e| e.to_string())?;
            files.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        ensure(files[0] == files[1], || format!("{name}: trace files differ between runs"))?;
        sizes.push(files[0].len());
    }
    Ok(format!("trace sizes {sizes:?} bytes"))
}

fn protocol_round_trip() -> Check {
    const ALPHABET: &[char] = &[
        'a', 'b', 'z', 'A', 'Q', '0', '7', ' ', ' ', '-', '_', '/', '.', ',', ':', '(', ')', '[', ']', '?', '\'', 'é',
        '中',
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let kinds = [
        ActionKind::DirectRetrieval,
        ActionKind::LanguageRetrieval,
        ActionKind::DatasetRetrieval,
        ActionKind::FetchDescriptions,
        ActionKind::FinalAnswer,
    ];
    for i in 0..200 {
        let kind = kinds[i % kinds.len()];
        let len = rng.random_range(1..40);
        let raw: String = (0..len).map(|_| *ALPHABET.choose(&mut rng).unwrap()).collect();
        let payload = match kind {
            ActionKind::FinalAnswer => raw.replace([' ', ','], "").trim().to_string(),
            _ => raw.trim().to_string(),
        };
        if payload.is_empty() || payload == UNCERTAIN {
            continue;
        }
        let action = ToolAction { kind, payload: payload.clone(), raw_span: (0, 0) };
        let text = format!("narration {i}\n{}\nmore", render_action(&action));
        let parsed = parse_actions(&text).map_err(|e| format!("{text:?}: {e}"))?;
        ensure(parsed.actions.len() == 1, || format!("{text:?}: {} actions", parsed.actions.len()))?;
        let got = &parsed.actions[0];
        ensure(got.kind == kind && got.payload == payload, || format!("{kind:?} {payload:?} came back as {got:?}"))?;
    }
    ensure(parse_boxed("\\boxed{a/x} then \\boxed{b/y}") == Boxed::Model("b/y".into()), || "last-wins".into())?;
    ensure(parse_boxed("\\boxed{a/x} \\boxed{UNCERTAIN}") == Boxed::Uncertain, || "trailing UNCERTAIN".into())?;
    ensure(parse_boxed("\\boxed{UNCERTAIN} \\boxed{a/x}") == Boxed::Model("a/x".into()), || "late answer".into())?;
    ensure(parse_boxed("no answer") == Boxed::None, || "missing box".into())?;
    Ok("200 payloads over 5 tag kinds".into())
}

const TALLY_HUGGR4: [&str; 10] = [
    "cardiffnlp/twitter-roberta-base-sentiment",
    "j-hartmann/emotion-english-distilroberta-base",
    "j-hartmann/emotion-english-distilroberta-base",
    "TahaDouaji/detr-doc-table-detection",
    "coqui/XTTS-v2",
    "facebook/bart-large-cnn",
    "deepset/roberta-base-squad2",
    "stabilityai/stable-diffusion-2-1",
    "google/vit-base-patch16-224",
    "metavoiceio/metavoice-1B-v0.1",
];
const TALLY_BASELINE: [&str; 10] = [
    "cardiffnlp/twitter-roberta-base-sentiment",
    "j-hartmann/emotion-english-distilroberta-base",
    "j-hartmann/emotion-english-distilroberta-base",
    "TahaDouaji/detr-doc-table-detection",
    "j-hartmann/emotion-english-distilroberta-base",
    "finiteautomata/bertweet-base-sentiment-analysis",
    "finiteautomata/bertweet-base-sentiment-analysis",
    "stabilityai/stable-diffusion-2-1",
    "j-hartmann/emotion-english-distilroberta-base",
    "lj1995/GPT-SoVITS",
];

fn run_all(method: Method, corpus: &CardCorpus, requests: &[EvalRequest]) -> Vec<SelectionOutcome> {
    let embedder = HashEmbedder::default();
    let index = build_index(corpus, &embedder).expect("index builds");
    let agent = LexicalAgent::new();
    requests
        .iter()
        .map(|r| {
            run_method(
                method,
                &UserQuery::new(&r.request),
                corpus,
                &index,
                Providers { chat: &agent, embedder: &embedder },
                &PipelineConfig::default(),
            )
        })
        .collect()
}

fn metrics_tally() -> Check {
    let requests = fixtures::tally10();
    let corpus = fixtures::cards30();
    for (method, table, want) in [(Method::Huggr4, TALLY_HUGGR4, (7, 5)), (Method::Baseline, TALLY_BASELINE, (4, 2))] {
        let selections: Vec<(OutcomeStatus, Option<&str>)> =
            table.iter().map(|id| (OutcomeStatus::Selected, Some(*id))).collect();
        let m = evaluate_selections(&selections, &requests).map_err(|e| e.to_string())?;
        let (w, r) = (want.0 as f64 / 10.0, want.1 as f64 / 10.0);
        ensure(m.workability == w && m.reasonability == r, || {
            format!("{}: tally gives {} / {}", method.as_str(), m.workability, m.reasonability)
        })?;
        let outcomes = run_all(method, &corpus, &requests);
        let picked: Vec<Option<&str>> = outcomes.iter().map(|o| o.selected()).collect();
        let expected: Vec<Option<&str>> = table.iter().map(|id| Some(*id)).collect();
        ensure(picked == expected, || format!("{}: live selections {picked:?}", method.as_str()))?;
        let live = evaluate(&outcomes, &requests).map_err(|e| e.to_string())?;
        ensure(live.workability == w && live.reasonability == r, || {
            format!("{}: live metrics differ", method.as_str())
        })?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ids: Vec<String> = (0..15).map(|i| format!("m/{i}")).collect();
    for trial in 0..100 {
        let mut text = String::new();
        let mut selections = Vec::new();
        for i in 0..rng.random_range(1..=12) {
            let (nw, nr) = (rng.random_range(1..=6), rng.random_range(0..=6));
            let workable: Vec<&String> = ids.choose_multiple(&mut rng, nw).collect();
            let reasonable: Vec<&String> = ids.choose_multiple(&mut rng, nr).collect();
            let line = serde_json::json!({
                "id": format!("r{i}"),
                "request": "anything",
                "Task_label": {"workable": workable, "reasonable": reasonable},
            });
            text.push_str(&line.to_string());
            text.push('\n');
            let status = if rng.random_bool(0.8) { OutcomeStatus::Selected } else { OutcomeStatus::ExhaustedUncertain };
            selections.push((status, ids.choose(&mut rng).cloned()));
        }
        let requests = huggr4_core::evaluation::parse_requests(&text).map_err(|e| e.to_string())?;
        ensure(requests.iter().all(|r| r.reasonable.is_subset(&r.workable)), || format!("trial {trial}: not clamped"))?;
        let sel: Vec<(OutcomeStatus, Option<&str>)> = selections.iter().map(|(s, id)| (*s, id.as_deref())).collect();
        let m = evaluate_selections(&sel, &requests).map_err(|e| e.to_string())?;
        ensure(m.reasonability <= m.workability, || format!("trial {trial}: {} > {}", m.reasonability, m.workability))?;
    }
    Ok("huggr4 0.7/0.5, baseline 0.4/0.2; 100 random label sets".into())
}

fn bloat_benchmark() -> Check {
    let start = Instant::now();
    let corpus = fixtures::bloat_corpus();
    let requests = fixtures::bloat_requests();
    let ours = evaluate(&run_all(Method::Huggr4, &corpus, &requests), &requests).map_err(|e| e.to_string())?;
    let base = evaluate(&run_all(Method::Baseline, &corpus, &requests), &requests).map_err(|e| e.to_string())?;
    let gap = ours.reasonability - base.reasonability;
    ensure(gap >= 0.3, || format!("reasonability {} vs {}", ours.reasonability, base.reasonability))?;
    within(start.elapsed(), Duration::from_secs(60), "bloat benchmark")?;
    Ok(format!(
        "reasonability {:.2} vs {:.2}, workability {:.2} vs {:.2}",
        ours.reasonability, base.reasonability, ours.workability, base.workability
    ))
}

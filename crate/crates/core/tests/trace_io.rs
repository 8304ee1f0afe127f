use std::fs;

use moe_xray::synthgen::{generate_corpus, GeneratorSpec};
use moe_xray::trace::{
    load_trace, parse_event_line, validate_trace, write_trace, PromptMeta, ViolationKind,
};
use moe_xray::{Error, ModelConfig, RoutingEvent, TokenType, TraceSet};
use proptest::prelude::*;

fn ev(prompt: &str, layer: u32, expert: u32, token: u32, token_type: TokenType) -> RoutingEvent {
    RoutingEvent {
        prompt_id: prompt.into(),
        layer,
        expert,
        token_pos: token,
        token_type,
    }
}

fn small_config() -> ModelConfig {
    ModelConfig::new("tiny", 2, 6, 2).unwrap()
}

#[test]
fn documented_event_lines() {
    let e = parse_event_line(
        r#"{"prompt_id":"code_00","layer":3,"expert":41,"token_pos":7,"token_type":"generation"}"#,
        1,
    )
    .unwrap();
    assert_eq!(e, ev("code_00", 3, 41, 7, TokenType::Generation));

    let e = parse_event_line(
        r#"{"prompt_id":"x","layer":0,"expert":0,"token_pos":0,"token_type":"prompt"}"#,
        1,
    )
    .unwrap();
    assert_eq!(e, ev("x", 0, 0, 0, TokenType::Prompt));

    let err = parse_event_line(r#"{"prompt_id":"x","layer":3}"#, 12).unwrap_err();
    assert!(matches!(err, Error::Schema { line: 12, field: "expert" }), "{err}");
}

#[test]
fn expert_64_is_fatal_under_64_experts() {
    let mut trace = generate_corpus(&GeneratorSpec::default_shape(1).with_tokens_per_prompt(2), 1).unwrap();
    trace.events[5].expert = 64;
    let report = validate_trace(&trace);
    assert_eq!(report.fatal.len(), 1);
    assert!(report.fatal[0].message.contains("expert index out of range"));
}

#[test]
fn seven_of_eight_is_incomplete_group() {
    let mut trace = generate_corpus(&GeneratorSpec::default_shape(1).with_tokens_per_prompt(2), 1).unwrap();
    trace.events.remove(3);
    let report = validate_trace(&trace);
    assert!(report.fatal.is_empty());
    assert_eq!(report.count(ViolationKind::IncompleteGroup), 1);
    assert!(report.warnings[0].message.contains("incomplete routing group"));
}

#[test]
fn synthetic_trace_validates_clean_with_tlk_events_per_prompt() {
    let trace = generate_corpus(&GeneratorSpec::default_shape(3), 2).unwrap();
    assert!(validate_trace(&trace).is_clean());
    for p in &trace.prompts {
        let n = trace.events.iter().filter(|e| e.prompt_id == p.prompt_id).count();
        assert_eq!(n, 32 * 16 * 8);
    }
}

#[test]
fn prompt_plus_one_generated_token() {
    // prompt of 5 tokens and one generated token through a 16-layer top-8 model
    let config = ModelConfig::olmoe();
    let mut events = Vec::new();
    for token in 0..6u32 {
        let token_type = if token < 5 { TokenType::Prompt } else { TokenType::Generation };
        for layer in 0..16 {
            for k in 0..8 {
                events.push(ev("p", layer, (token + layer + 7 * k) % 64, token, token_type));
            }
        }
    }
    let mut trace = TraceSet {
        config,
        categories: vec!["c".into()],
        prompts: vec![PromptMeta::new("p", "c")],
        events,
    };
    trace.refresh_token_counts();
    assert_eq!(trace.events.len(), (5 + 1) * 16 * 8);
    assert_eq!(trace.prompts[0].token_counts.prompt, 5);
    assert_eq!(trace.prompts[0].token_counts.generation, 1);
    assert!(validate_trace(&trace).is_clean());
}

#[test]
fn orphan_events_are_referential_errors() {
    let dir = tempfile::tempdir().unwrap();
    let trace = TraceSet {
        config: small_config(),
        categories: vec!["a".into()],
        prompts: vec![PromptMeta::new("p", "a")],
        events: vec![ev("p", 0, 0, 0, TokenType::Prompt), ev("ghost", 0, 1, 0, TokenType::Prompt)],
    };
    let (events, manifest) = (dir.path().join("e.jsonl"), dir.path().join("m.json"));
    write_trace(&trace, &events, &manifest).unwrap();
    match load_trace(&events, &manifest) {
        Err(Error::Referential { orphans }) => assert_eq!(orphans, vec!["ghost".to_string()]),
        other => panic!("expected referential error, got {other:?}"),
    }
}

#[test]
fn malformed_line_number_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let trace = TraceSet {
        config: small_config(),
        categories: vec!["a".into()],
        prompts: vec![PromptMeta::new("p", "a")],
        events: vec![ev("p", 0, 0, 0, TokenType::Prompt)],
    };
    let (events, manifest) = (dir.path().join("e.jsonl"), dir.path().join("m.json"));
    write_trace(&trace, &events, &manifest).unwrap();
    let mut text = fs::read_to_string(&events).unwrap();
    text.push_str("{not json\n");
    fs::write(&events, text).unwrap();
    match load_trace(&events, &manifest) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn manifest_declares_olmoe_shape() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate_corpus(&GeneratorSpec::default_shape(1).with_tokens_per_prompt(1), 1).unwrap();
    let (events, manifest) = (dir.path().join("events.jsonl"), dir.path().join("manifest.json"));
    write_trace(&trace, &events, &manifest).unwrap();
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(json["model"]["num_layers"], 16);
    assert_eq!(json["model"]["num_experts"], 64);
    assert_eq!(json["model"]["top_k"], 8);
    assert_eq!(json["categories"].as_array().unwrap().len(), 4);
    assert_eq!(json["prompts"][0]["prompt_id"], "code_00");
}

fn arb_trace() -> impl Strategy<Value = TraceSet> {
    let event = (0usize..3, 0u32..2, 0u32..6, 0u32..5, any::<bool>());
    prop::collection::vec(event, 0..40).prop_map(|raw| {
        let prompts = vec![PromptMeta::new("p0", "a"), PromptMeta::new("p1", "b"), PromptMeta::new("p2", "a")];
        let events = raw
            .into_iter()
            .map(|(p, layer, expert, token, gen)| {
                let token_type = if gen { TokenType::Generation } else { TokenType::Prompt };
                ev(&format!("p{p}"), layer, expert, token, token_type)
            })
            .collect();
        let mut trace = TraceSet {
            config: small_config(),
            categories: vec!["a".into(), "b".into()],
            prompts,
            events,
        };
        trace.refresh_token_counts();
        trace
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_load_is_identity(trace in arb_trace()) {
        let dir = tempfile::tempdir().unwrap();
        let (events, manifest) = (dir.path().join("events.jsonl"), dir.path().join("manifest.json"));
        write_trace(&trace, &events, &manifest).unwrap();
        let back = load_trace(&events, &manifest).unwrap();
        prop_assert_eq!(back, trace);
    }

    #[test]
    fn fatal_iff_index_out_of_bounds(layer in 0u32..4, expert in 0u32..9) {
        let trace = TraceSet {
            config: small_config(),
            categories: vec!["a".into()],
            prompts: vec![PromptMeta::new("p", "a")],
            events: vec![ev("p", layer, expert, 0, TokenType::Prompt)],
        };
        let report = validate_trace(&trace);
        prop_assert_eq!(report.has_fatal(), layer >= 2 || expert >= 6);
    }
}

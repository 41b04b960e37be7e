mod common;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use aen::data::{GenerationClient, PairSource, PromptTemplates, Sampling, ServiceGenerator};
use aen::AenError;
use common::serve;
use serde_json::{json, Value};

fn templates() -> PromptTemplates {
    PromptTemplates {
        statement: "STATEMENTS {topic}".into(),
        condition: "CONDITIONS {topic}".into(),
        label: "LABEL {statement} || {condition}".into(),
    }
}

/// Answers like a generation service that knows two topics.
fn reply(prompt: &str) -> String {
    if let Some(topic) = prompt.strip_prefix("STATEMENTS ") {
        format!("- I love {topic}\n- {topic} again today\n")
    } else if let Some(topic) = prompt.strip_prefix("CONDITIONS ") {
        format!("When someone talks about {topic}\n")
    } else {
        let rest = prompt.strip_prefix("LABEL ").unwrap();
        let (statement, condition) = rest.split_once(" || ").unwrap();
        let topic = condition.rsplit(' ').next().unwrap();
        if statement.contains(topic) { "Yes." } else { "no" }.to_string()
    }
}

#[test]
fn generator_labels_every_drafted_combination() {
    let seen: Arc<Mutex<Vec<Value>>> = Arc::default();
    let log = Arc::clone(&seen);
    let stub = serve(move |_, path, body| {
        assert_eq!(path, "/generate");
        let request: Value = serde_json::from_str(body).unwrap();
        log.lock().unwrap().push(request.clone());
        (200, json!({"text": reply(request["prompt"].as_str().unwrap())}).to_string())
    });
    let generator = ServiceGenerator {
        client: GenerationClient::new(&stub.url, Duration::from_secs(5)),
        templates: templates(),
        topics: vec!["tea".into(), "chess".into()],
    };
    let pairs = generator.pairs().unwrap();
    // 2 topics x 2 statements x (own + next topic) x 1 condition
    assert_eq!(pairs.len(), 8);
    assert_eq!(pairs.iter().filter(|p| p.label == 1).count(), 4);
    assert!(pairs.iter().all(|p| p.condition.starts_with("talks about")));
    assert_eq!(pairs[0].source.as_deref(), Some("service:tea"));

    let requests = seen.lock().unwrap();
    let sampling = |r: &Value| (r["temperature"].as_f64().unwrap(), r["top_p"].as_f64().unwrap());
    for r in requests.iter() {
        let prompt = r["prompt"].as_str().unwrap();
        let expected = if prompt.starts_with("STATEMENTS") {
            Sampling::STATEMENTS
        } else if prompt.starts_with("CONDITIONS") {
            Sampling::CONDITIONS
        } else {
            Sampling::LABELS
        };
        assert_eq!(sampling(r), (expected.temperature, expected.top_p));
    }
}

#[test]
fn unreadable_labels_fail_loudly() {
    let stub = serve(|_, _, body| {
        let prompt = serde_json::from_str::<Value>(body).unwrap()["prompt"].as_str().unwrap().to_string();
        let text = if prompt.starts_with("LABEL") { "perhaps".to_string() } else { reply(&prompt) };
        (200, json!({ "text": text }).to_string())
    });
    let generator = ServiceGenerator {
        client: GenerationClient::new(&stub.url, Duration::from_secs(5)),
        templates: templates(),
        topics: vec!["tea".into()],
    };
    assert!(matches!(generator.pairs(), Err(AenError::MalformedResponse(_))));
}

#[test]
fn status_errors_carry_the_body() {
    let stub = serve(|_, _, _| (429, "slow down".into()));
    let client = GenerationClient::new(&stub.url, Duration::from_secs(5));
    match client.generate("x", Sampling::LABELS) {
        Err(AenError::HttpStatus { status: 429, body }) => assert_eq!(body, "slow down"),
        other => panic!("{other:?}"),
    }
}

mod common;

use std::time::Duration;

use aen::data::{generate_toy_dataset, preprocess_condition, ToyDataSpec};
use aen::embeddings::{mean_pool, PrecomputedEmbeddings, RemoteEncoder, TextEncoder};
use aen::model::{evaluate, Architecture, EncoderSpec, ModelBundle, TrainConfig, Trainer};
use aen::AenError;
use common::{embedding_service, serve, token_vector};

fn client(url: &str) -> RemoteEncoder {
    let mut r = RemoteEncoder::new(url, Duration::from_secs(5));
    r.backoff = Duration::from_millis(5);
    r
}

#[test]
fn parses_matrices_and_masks() {
    let stub = embedding_service(3);
    let out = client(&stub.url).with_dim(3).fetch(&["red fox", "cat"]).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[0].attended_count(), 2);
    assert_eq!(out[1].len(), 2);
    assert_eq!(out[1].mask(), &[true, false]);
    let pooled = mean_pool(&out[1]).unwrap();
    assert_eq!(pooled.as_slice(), token_vector("cat", 3).as_slice());
    assert_eq!(stub.hits(), 1);
}

#[test]
fn retries_transient_failures() {
    let stub = serve(|hit, _, body| {
        if hit < 2 {
            (503, "busy".into())
        } else {
            (200, common::embed_reply(body, 2))
        }
    });
    let out = client(&stub.url).fetch(&["a"]).unwrap();
    assert_eq!(out[0].dim(), 2);
    assert_eq!(stub.hits(), 3);
}

#[test]
fn gives_up_after_the_retry_budget() {
    let stub = serve(|_, _, _| (500, "down".into()));
    let err = client(&stub.url).fetch(&["a"]).unwrap_err();
    assert!(matches!(err, AenError::HttpStatus { status: 500, .. }), "{err}");
    assert_eq!(stub.hits(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = serve(|_, _, _| (400, r#"{"detail":"bad"}"#.into()));
    let err = client(&stub.url).fetch(&["a"]).unwrap_err();
    match err {
        AenError::HttpStatus { status, body } => {
            assert_eq!(status, 400);
            assert!(body.contains("bad"));
        }
        other => panic!("{other}"),
    }
    assert_eq!(stub.hits(), 1);
}

#[test]
fn malformed_replies_are_rejected() {
    let cases = [
        "not json",
        r#"{"dim": 2, "embeddings": [], "masks": []}"#,
        r#"{"dim": 2, "embeddings": [[[1, 2]]], "masks": [[1, 1]]}"#,
        r#"{"dim": 2, "embeddings": [[[1, 2]]], "masks": [[7]]}"#,
    ];
    for reply in cases {
        let stub = serve(move |_, _, _| (200, reply.to_string()));
        let err = client(&stub.url).fetch(&["a"]).unwrap_err();
        assert!(matches!(err, AenError::MalformedResponse(_)), "{reply}: {err}");
    }
    let stub = serve(|_, _, _| (200, r#"{"dim": 2, "embeddings": [[[1, 2, 3]]], "masks": [[1]]}"#.into()));
    assert!(matches!(client(&stub.url).fetch(&["a"]), Err(AenError::DimensionMismatch { .. })));
}

#[test]
fn unexpected_width_is_a_dimension_error() {
    let stub = embedding_service(4);
    let err = client(&stub.url).with_dim(8).fetch(&["a"]).unwrap_err();
    assert!(matches!(err, AenError::DimensionMismatch { expected: 8, found: 4 }));
}

#[test]
fn slow_services_time_out() {
    let stub = serve(|_, _, body| {
        std::thread::sleep(Duration::from_millis(600));
        (200, common::embed_reply(body, 2))
    });
    let mut r = RemoteEncoder::new(&stub.url, Duration::from_millis(100));
    r.retries = 0;
    assert!(matches!(r.fetch(&["a"]), Err(AenError::Transport(_))));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let mut r = client(&url);
    r.retries = 0;
    assert!(matches!(r.fetch(&["a"]), Err(AenError::Transport(_))));
}

#[test]
fn frozen_remote_embeddings_train_the_head() {
    let stub = embedding_service(8);
    let data = generate_toy_dataset(&ToyDataSpec::new(2, 400)).unwrap();
    let mut texts = Vec::new();
    for p in &data {
        texts.push(p.statement.clone());
        texts.push(preprocess_condition(&p.condition).unwrap());
    }
    let source = PrecomputedEmbeddings::fetch_all(&client(&stub.url), texts.iter().map(String::as_str)).unwrap();
    assert_eq!(stub.hits(), 1);
    assert_eq!(source.dim(), 8);

    let mut arch = Architecture::new(8, 0);
    arch.statement_encoder = EncoderSpec::External;
    arch.condition_encoder = EncoderSpec::External;
    let mut bundle = ModelBundle::new(arch).unwrap();
    assert_eq!(bundle.parameter_count(), 2 * 8 + 2);
    let config = TrainConfig {
        learning_rate: 1e-2,
        epochs: 3,
        ..TrainConfig::default()
    };
    let reports = Trainer::new(config).unwrap().fit(&mut bundle, &data, Some(&source)).unwrap();
    assert!(reports.last().unwrap().mean_loss < reports[0].mean_loss);
    let metrics = evaluate(&bundle, &data, Some(&source)).unwrap();
    assert_eq!(metrics.n, data.len());
    assert!(evaluate(&bundle, &data, None).is_err());
}

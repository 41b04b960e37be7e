use aen::data::{generate_toy_dataset, topic_condition, LabeledPair, ToyDataSpec, TOPICS};
use aen::model::{read_model, write_model, Architecture, ModelBundle, TrainConfig, Trainer};
use aen::runtime::{build_condition_cache, read_cache_for, write_cache, Monitor};

fn trained(data: &[LabeledPair]) -> ModelBundle {
    let mut bundle = ModelBundle::new(Architecture::new(32, 21)).unwrap();
    let reports = Trainer::new(TrainConfig::default()).unwrap().fit(&mut bundle, data, None).unwrap();
    assert!(reports.last().unwrap().metrics.f1 >= 0.95);
    bundle
}

#[test]
fn trained_monitor_picks_the_right_topic() {
    let data = generate_toy_dataset(&ToyDataSpec::new(21, 2000)).unwrap();
    let bundle = trained(&data);
    let conditions: Vec<String> = TOPICS[..10].iter().map(|(t, _)| topic_condition(t)).collect();
    let cache = build_condition_cache(&bundle, &conditions, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path().join("m.aenm"), &bundle).unwrap();
    write_cache(dir.path().join("c.aenc"), &cache).unwrap();
    let bundle = read_model(dir.path().join("m.aenm")).unwrap();
    let cache = read_cache_for(dir.path().join("c.aenc"), &bundle).unwrap();

    // A baking statement from the training pass; the toy model fits its
    // training set but generalizes only loosely to unseen word mixes.
    let statement = &data
        .iter()
        .find(|p| p.label == 1 && p.condition == conditions[7])
        .unwrap()
        .statement;
    assert!(TOPICS[7].1.iter().any(|k| statement.contains(k)));

    let monitor = Monitor::new(&bundle, &cache, None).unwrap();
    let events = monitor.evaluate_statement(statement).unwrap();
    assert_eq!(events.len(), 10);
    assert!(events[7].decision, "{:?}", events[7]);
    let rejected = events.iter().enumerate().filter(|(i, e)| *i != 7 && !e.decision).count();
    assert!(rejected >= 8, "{events:#?}");
    assert_eq!(monitor.encoder_calls(), 1);
    assert_eq!(monitor.kde_builds(), 1);
}

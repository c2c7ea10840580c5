mod common;

use std::collections::{HashMap, HashSet};
use std::time::Duration;

use common::{model_config, start_model, two_instance_suite};
use semleak::chat::ChatClient;
use semleak::collect::{collect_generations, CollectError};
use semleak::http::RetryPolicy;
use semleak::store::RunStore;
use semleak::stub::StubModelOptions;
use semleak_core::generation::{cache_key, CellCoords, RunPlan, Variant};

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        attempts: 3,
        base_delay: Duration::from_millis(5),
    }
}

fn coords(instance: &str, variant: Variant, t: f64, s: u32) -> CellCoords {
    CellCoords {
        instance_id: instance.into(),
        variant,
        model_id: "stub-model".into(),
        temperature: t,
        sample_index: s,
    }
}

#[tokio::test]
async fn fills_the_grid_once() {
    let suite = two_instance_suite();
    let (addr, stub) = start_model(&suite, 0.7, StubModelOptions::default()).await;
    let config = model_config(addr, 4);
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path(), suite.name(), &config.model_id).unwrap();
    let client = ChatClient::with_retry(&config, None, fast_retry()).unwrap();
    let plan = RunPlan::default();

    let first = collect_generations(&suite, &config, &plan, &store, &client)
        .await
        .unwrap();
    assert_eq!(first.requested, 2 * 2 * 4 * 10);
    assert_eq!(first.new_records, 160);
    assert!(first.failures.is_empty());
    assert_eq!(stub.stats.requests(), 160);
    assert!(store.records().iter().all(|r| plan.contains(&r.coords)));

    let second = collect_generations(&suite, &config, &plan, &store, &client)
        .await
        .unwrap();
    assert_eq!(second.new_records, 0);
    assert_eq!(second.cached, 160);
    assert_eq!(
        stub.stats.requests(),
        160,
        "cached cells are not re-requested"
    );

    // A fresh handle on the same file sees the same cache.
    drop(store);
    let reopened = RunStore::open(dir.path(), suite.name(), &config.model_id).unwrap();
    let third = collect_generations(&suite, &config, &plan, &reopened, &client)
        .await
        .unwrap();
    assert_eq!(third.new_records, 0);
}

#[tokio::test]
async fn failing_cell_is_reported_and_others_are_kept() {
    let suite = two_instance_suite();
    let bad = cache_key(&coords("color-yellow", Variant::Control, 1.0, 3));
    let flaky = cache_key(&coords("story-coral", Variant::Test, 0.5, 7));
    let options = StubModelOptions {
        fail_keys: HashSet::from([bad.clone()]),
        flaky_keys: HashMap::from([(flaky.clone(), 2)]),
        ..Default::default()
    };
    let (addr, stub) = start_model(&suite, 0.7, options).await;
    let config = model_config(addr, 4);
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path(), suite.name(), &config.model_id).unwrap();
    let client = ChatClient::with_retry(&config, None, fast_retry()).unwrap();

    let summary = collect_generations(&suite, &config, &RunPlan::default(), &store, &client)
        .await
        .unwrap();
    assert_eq!(summary.new_records, 159);
    assert_eq!(summary.failures.len(), 1);
    assert_eq!(summary.failures[0].key, bad);
    assert!(
        summary.failures[0].error.contains("500"),
        "{}",
        summary.failures[0].error
    );
    // 158 clean cells, 3 attempts on the failing one, 2 failures and a success on the flaky one.
    assert_eq!(stub.stats.requests(), 158 + 3 + 3);
    assert!(store
        .records()
        .iter()
        .any(|r| cache_key(&r.coords) == flaky));

    // Only the failed cell is retried on the next run.
    let again = collect_generations(&suite, &config, &RunPlan::default(), &store, &client)
        .await
        .unwrap();
    assert_eq!(again.cached, 159);
    assert_eq!(again.failures.len(), 1);
}

#[tokio::test]
async fn missing_text_marks_the_cell_failed() {
    let suite = two_instance_suite();
    let empty = cache_key(&coords("color-yellow", Variant::Test, 0.0, 0));
    let options = StubModelOptions {
        null_keys: HashSet::from([empty.clone()]),
        ..Default::default()
    };
    let (addr, _) = start_model(&suite, 0.7, options).await;
    let config = model_config(addr, 2);
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path(), suite.name(), &config.model_id).unwrap();
    let client = ChatClient::with_retry(&config, None, fast_retry()).unwrap();
    let summary = collect_generations(&suite, &config, &RunPlan::default(), &store, &client)
        .await
        .unwrap();
    assert_eq!(summary.new_records, 159);
    assert_eq!(summary.failures[0].key, empty);
    assert!(summary.failures[0].error.contains("no message text"));
}

#[tokio::test]
async fn concurrency_is_bounded() {
    let suite = two_instance_suite();
    let options = StubModelOptions {
        delay: Duration::from_millis(15),
        ..Default::default()
    };
    let (addr, stub) = start_model(&suite, 0.5, options).await;
    let config = model_config(addr, 3);
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path(), suite.name(), &config.model_id).unwrap();
    let client = ChatClient::with_retry(&config, None, fast_retry()).unwrap();
    let plan = RunPlan {
        temperatures: vec![0.0, 1.0],
        samples_per_cell: 5,
        ..RunPlan::default()
    };
    let summary = collect_generations(&suite, &config, &plan, &store, &client)
        .await
        .unwrap();
    assert_eq!(summary.new_records, 40);
    assert!(
        stub.stats.max_in_flight() <= 3,
        "{}",
        stub.stats.max_in_flight()
    );
    assert!(stub.stats.max_in_flight() >= 2, "requests should overlap");
}

#[tokio::test]
async fn bad_token_aborts() {
    let suite = two_instance_suite();
    let options = StubModelOptions {
        required_token: Some("sesame".into()),
        ..Default::default()
    };
    let (addr, stub) = start_model(&suite, 0.5, options).await;
    let config = model_config(addr, 1);
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path(), suite.name(), &config.model_id).unwrap();

    let wrong = ChatClient::with_retry(&config, Some("guess".into()), fast_retry()).unwrap();
    let err = collect_generations(&suite, &config, &RunPlan::default(), &store, &wrong)
        .await
        .unwrap_err();
    assert!(matches!(err, CollectError::Auth(_)), "{err}");
    assert_eq!(
        stub.stats.requests(),
        1,
        "authentication failures are not retried"
    );
    assert!(store.is_empty());

    let right = ChatClient::with_retry(&config, Some("sesame".into()), fast_retry()).unwrap();
    let ok = collect_generations(&suite, &config, &RunPlan::default(), &store, &right)
        .await
        .unwrap();
    assert_eq!(ok.new_records, 160);
}

#[tokio::test]
async fn prompts_carry_the_prefix_and_samples_differ() {
    let suite = two_instance_suite();
    let (addr, _) = start_model(&suite, 0.0, StubModelOptions::default()).await;
    let config = model_config(addr, 4);
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path(), suite.name(), &config.model_id).unwrap();
    let client = ChatClient::with_retry(&config, None, fast_retry()).unwrap();
    collect_generations(&suite, &config, &RunPlan::default(), &store, &client)
        .await
        .unwrap();
    let texts: HashSet<String> = store
        .records()
        .into_iter()
        .filter(|r| r.coords.instance_id == "color-yellow" && r.coords.variant == Variant::Control)
        .map(|r| r.raw_text)
        .collect();
    // The stub recognized the prefixed prompt (unknown prompts get one fixed
    // reply) and varied its output across the 40 cells.
    assert!(texts.len() > 30, "{}", texts.len());
}

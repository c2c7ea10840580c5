#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use semleak::stub::{spawn, StubEmbedder, StubModel, StubModelOptions};
use semleak_core::generation::ModelEndpointConfig;
use semleak_core::mockbench::MockLeakConfig;
use semleak_core::suite::{GenerationMode, PromptInstance, PromptSuite};

pub fn two_instance_suite() -> PromptSuite {
    let yellow = PromptInstance::completion(
        "color-yellow",
        "color",
        "yellow",
        "He likes yellow. He works as a",
        "He works as a",
    );
    let coral = PromptInstance {
        mode: GenerationMode::Story,
        removal_terms: vec!["Coral".into()],
        ..PromptInstance::completion(
            "story-coral",
            "name",
            "Coral",
            "Tell me a short story about a child named Coral.",
            "Tell me a short story about a child.",
        )
    };
    PromptSuite::new("two", vec![yellow, coral], "two.jsonl").unwrap()
}

pub fn sample_suite() -> PromptSuite {
    semleak::suite_io::load_suite(
        &std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample_suite.jsonl"),
    )
    .unwrap()
}

pub async fn start_model(
    suite: &PromptSuite,
    p: f64,
    options: StubModelOptions,
) -> (SocketAddr, Arc<StubModel>) {
    let stub = Arc::new(StubModel::new(
        suite,
        MockLeakConfig::calibrated(p, 11).unwrap(),
        options,
    ));
    let (addr, _) = spawn(stub.clone().router()).await.unwrap();
    (addr, stub)
}

pub async fn start_embedder() -> (SocketAddr, Arc<StubEmbedder>) {
    let stub = Arc::new(StubEmbedder::default());
    let (addr, _) = spawn(stub.clone().router()).await.unwrap();
    (addr, stub)
}

pub fn model_config(addr: SocketAddr, parallel: usize) -> ModelEndpointConfig {
    let mut c = ModelEndpointConfig::new("stub-model", format!("http://{addr}"));
    c.use_completion_prefix = true;
    c.max_parallel_requests = parallel;
    c.request_timeout_secs = 10;
    c
}

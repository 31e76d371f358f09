mod common;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use dentagent_core::artifacts::ArtifactStore;
use dentagent_core::clock::{IdGenerator, ManualClock};
use dentagent_core::comprehension::Modality;
use dentagent_core::registry::mock::MockToolBehavior;
use dentagent_core::registry::{
    ExecutionContext, RegistryError, ToolFilter, ToolRegistry, ToolStatus, ToolTask, SHIPPED_CATALOG,
};
use serde_json::json;

const PANORAMIC: [&str; 6] = [
    "tooth_numbering_detector",
    "opg_periapical_lesion_detector",
    "opg_bone_loss_segmenter",
    "opg_multi_condition_segmenter",
    "opg_anatomy_segmenter",
    "opg_report_generator",
];

#[test]
fn shipped_catalog_has_22_tools_and_6_panoramic() {
    let registry = ToolRegistry::new();
    assert_eq!(registry.load_catalog_str(SHIPPED_CATALOG, "http://127.0.0.1:9").unwrap(), 22);
    assert_eq!(registry.len(), 22);
    let mut pano: Vec<String> =
        registry.list_tools(&ToolFilter::modality(Modality::PanoramicRadiograph)).into_iter().map(|d| d.name).collect();
    pano.sort();
    let mut expected: Vec<String> = PANORAMIC.iter().map(|s| s.to_string()).collect();
    expected.sort();
    assert_eq!(pano, expected);
    let codes: Vec<String> = registry
        .list_tools(&ToolFilter::modality(Modality::PanoramicRadiograph))
        .into_iter()
        .filter_map(|d| d.code)
        .collect();
    let mut codes = codes;
    codes.sort();
    assert_eq!(codes, vec!["T17", "T18", "T19", "T20", "T21", "T22"]);
    assert_eq!(registry.list_tools(&ToolFilter::task(ToolTask::VisualQa)).len(), 1);
}

#[test]
fn loading_the_catalog_file_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tools.jsonl");
    std::fs::write(&path, SHIPPED_CATALOG).unwrap();
    let registry = ToolRegistry::new();
    assert_eq!(registry.load_catalog(&path).unwrap(), 22);
    // A second load conflicts with every existing name and changes nothing.
    assert!(registry.load_catalog(&path).is_err());
    assert_eq!(registry.len(), 22);
}

fn call(registry: &ToolRegistry, name: &str, ids: &IdGenerator) -> dentagent_core::registry::ToolCall {
    registry.format_call(name, &json!({"image_id": "img-1"}), &ManualClock::fixed(), ids).unwrap()
}

#[tokio::test]
async fn one_failing_and_one_slow_tool_do_not_hurt_the_healthy_call() {
    let overrides = HashMap::from([
        ("intraoral_caries_detector".to_string(), MockToolBehavior::Status(500)),
        (
            "intraoral_gingivitis_detector".to_string(),
            MockToolBehavior::Delay { ms: 30_000, then: Box::new(MockToolBehavior::Fixture) },
        ),
    ]);
    let (registry, _server) = catalog_with_server(overrides).await;
    // Shorten the slow tool's timeout so the test is quick.
    let mut slow = registry.get("intraoral_gingivitis_detector").unwrap();
    slow.timeout_secs = 1.0;
    registry.register_tool(slow, true).unwrap();

    let ids = IdGenerator::sequential("c");
    let calls = vec![
        call(&registry, "intraoral_caries_detector", &ids),
        call(&registry, "intraoral_gingivitis_detector", &ids),
        call(&registry, "intraoral_abnormality_classifier", &ids),
    ];
    let (ctx, _) = image_context();
    let started = Instant::now();
    let results = registry.execute_parallel(&calls, &ctx).await;
    let wall = started.elapsed();
    assert_eq!(
        results.iter().map(|r| r.status).collect::<Vec<_>>(),
        vec![ToolStatus::ToolError, ToolStatus::Timeout, ToolStatus::Ok]
    );
    assert_eq!(results.iter().map(|r| r.call_id.as_str()).collect::<Vec<_>>(), vec!["c-1", "c-2", "c-3"]);
    assert!(wall <= Duration::from_secs(2), "{wall:?}");
}

#[tokio::test]
async fn output_schema_violation_keeps_the_raw_payload() {
    let overrides = HashMap::from([(
        "intraoral_abnormality_classifier".to_string(),
        MockToolBehavior::Payload(json!({"predictions": [{"label": "caries", "probability": 1.7}]})),
    )]);
    let (registry, _server) = catalog_with_server(overrides).await;
    let ids = IdGenerator::sequential("c");
    let (ctx, _) = image_context();
    let results = registry.execute_parallel(&[call(&registry, "intraoral_abnormality_classifier", &ids)], &ctx).await;
    let r = &results[0];
    assert_eq!(r.status, ToolStatus::SchemaViolation);
    assert!(r.payload.is_none());
    assert_eq!(r.raw_payload.as_ref().unwrap()["predictions"][0]["probability"], 1.7);
    assert!(r.issues.iter().any(|i| i.path == "/predictions/0/probability"));
}

#[tokio::test]
async fn tool_error_payloads_are_reported() {
    let overrides =
        HashMap::from([("dental_image_captioner".to_string(), MockToolBehavior::Error("model not loaded".into()))]);
    let (registry, _server) = catalog_with_server(overrides).await;
    let ids = IdGenerator::sequential("c");
    let results =
        registry.execute_parallel(&[call(&registry, "dental_image_captioner", &ids)], &image_context().0).await;
    assert_eq!(results[0].status, ToolStatus::ToolError);
    assert!(results[0].error.as_deref().unwrap().contains("model not loaded"));
}

#[test]
fn arguments_are_validated_and_coerced() {
    let registry = ToolRegistry::new();
    registry.load_catalog_str(SHIPPED_CATALOG, "http://127.0.0.1:9").unwrap();
    let ids = IdGenerator::sequential("c");
    let clock = ManualClock::fixed();
    let err = registry.format_call("intraoral_caries_detector", &json!({}), &clock, &ids).unwrap_err();
    assert_eq!(err.violation_paths(), vec!["/image_id"]);
    let err = registry
        .format_call("intraoral_caries_detector", &json!({"image_id": "i", "bogus": 1}), &clock, &ids)
        .unwrap_err();
    assert!(matches!(err, RegistryError::SchemaViolation { .. }));
    let ok = registry
        .format_call(
            "intraoral_caries_detector",
            &json!({"image_id": "i", "confidence_threshold": "0.4"}),
            &clock,
            &ids,
        )
        .unwrap();
    assert_eq!(ok.args["confidence_threshold"], 0.4);
    assert!(matches!(registry.format_call("nope", &json!({}), &clock, &ids), Err(RegistryError::UnknownTool(_))));
}

#[tokio::test]
async fn calls_dispatched_before_removal_still_complete() {
    let (registry, _server) = catalog_with_server(HashMap::from([(
        "intraoral_caries_detector".to_string(),
        MockToolBehavior::Delay { ms: 300, then: Box::new(MockToolBehavior::Fixture) },
    )]))
    .await;
    let registry = Arc::new(registry);
    let ids = IdGenerator::sequential("c");
    let calls = vec![call(&registry, "intraoral_caries_detector", &ids)];
    let ctx = ExecutionContext::new(Arc::new(ArtifactStore::new()));
    let running = {
        let registry = registry.clone();
        tokio::spawn(async move { registry.execute_parallel(&calls, &ctx).await })
    };
    tokio::time::sleep(Duration::from_millis(50)).await;
    assert!(registry.remove_tool("intraoral_caries_detector"));
    let results = running.await.unwrap();
    assert_eq!(results[0].status, ToolStatus::Ok);
    assert!(!registry.contains("intraoral_caries_detector"));
}

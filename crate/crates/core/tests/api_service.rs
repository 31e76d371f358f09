mod common;

use std::time::Duration;

use common::api_fixture::*;
use dentagent_core::gateway::mock::{Matcher, MockResponse, MockScript};
use dentagent_core::gateway::EndpointRole;
use dentagent_core::registry::mock::annotated_png;
use dentagent_core::registry::ToolFilter;
use dentagent_core::Modality;
use serde_json::{json, Value};

const KINDS: [&str; 6] = ["instruction", "thought", "tool_call", "tool_result", "thought", "response"];

fn upload() -> Vec<u8> {
    annotated_png("camera", "upload")
}

#[tokio::test]
async fn session_lifecycle_and_errors() {
    let fx = api_fixture(api_script(), None).await;
    let health: Value = fx.http.get(fx.url("/healthz")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health["tools"], 23);
    let id = fx.create_session().await;
    assert_eq!(id, "sess-1");
    let handle: Value = fx.http.get(fx.url("/sessions/sess-1")).send().await.unwrap().json().await.unwrap();
    assert_eq!(handle["status"], "idle");
    assert_eq!(handle["config"]["k_default"], 7);

    let missing = fx.http.get(fx.url("/sessions/nope")).send().await.unwrap();
    assert_eq!(missing.status(), 404);
    let body: Value = missing.json().await.unwrap();
    assert!(body["error"]["code"].is_string());
    assert_eq!(fx.http.get(fx.url("/sessions/nope/events")).send().await.unwrap().status(), 404);
    assert_eq!(fx.post_message("nope", "hi", None).await.status(), 404);

    let bad = fx.http.post(fx.url("/sessions")).json(&json!({"bogus": 1})).send().await.unwrap();
    assert_eq!(bad.status(), 422);
    let custom = fx.http.post(fx.url("/sessions")).json(&json!({"config": {"k_default": 3}})).send().await.unwrap();
    assert_eq!(custom.status(), 201);
    assert_eq!(custom.json::<Value>().await.unwrap()["config"]["k_default"], 3);

    let closed = fx.http.delete(fx.url("/sessions/sess-1")).send().await.unwrap();
    assert_eq!(closed.json::<Value>().await.unwrap()["status"], "closed");
    assert_eq!(fx.post_message("sess-1", "hello", None).await.status(), 409);
}

#[tokio::test]
async fn message_runs_and_streams_the_trace() {
    let fx = api_fixture(api_script(), None).await;
    let id = fx.create_session().await;
    let live = fx.open_events(&id, None).await;
    let image = upload();
    let resp = fx.post_message(&id, "Is there caries on this tooth?", Some(image.clone())).await;
    assert_eq!(resp.status(), 202);
    let accepted: Value = resp.json().await.unwrap();
    assert_eq!(accepted["from_seq"], 0);
    assert_eq!(accepted["intents"], json!(["anomaly_diagnosis"]));
    assert_eq!(accepted["images"][0]["image_id"], "img-1");
    assert_eq!(accepted["images"][0]["modality"]["value"], "intraoral_image");

    let frames = read_sse(live).await;
    assert_eq!(frames.iter().map(|f| f.event.as_str()).collect::<Vec<_>>(), KINDS);
    assert_eq!(frames.iter().map(|f| f.id.clone()).collect::<Vec<_>>(), ["1", "2", "3", "4", "5", "6"]);
    let last: Value = serde_json::from_str(&frames[5].data).unwrap();
    assert_eq!(last["payload"]["text"], "One carious lesion on the distal surface.");

    // Uploaded bytes come back unchanged.
    let artifact = accepted["images"][0]["artifact_id"].as_str().unwrap();
    let got = fx.http.get(fx.url(&format!("/sessions/{id}/artifacts/{artifact}"))).send().await.unwrap();
    assert_eq!(got.headers()["content-type"], "image/png");
    assert_eq!(got.bytes().await.unwrap().to_vec(), image);
    assert_eq!(fx.http.get(fx.url(&format!("/sessions/{id}/artifacts/none"))).send().await.unwrap().status(), 404);

    let handle: Value = fx.http.get(fx.url(&format!("/sessions/{id}"))).send().await.unwrap().json().await.unwrap();
    assert_eq!(handle["status"], "idle");
    assert_eq!(handle["last_seq"], 6);
}

#[tokio::test]
async fn replay_matches_live_on_twenty_sessions() {
    let fx = api_fixture(api_script(), None).await;
    for _ in 0..20 {
        let id = fx.create_session().await;
        let live = fx.open_events(&id, None).await;
        assert_eq!(fx.post_message(&id, "Check this tooth for caries", Some(upload())).await.status(), 202);
        let live = read_sse(live).await;
        let replay = fx.events(&id, None).await;
        assert_eq!(live.len(), 6);
        let strip = |f: &[SseFrame]| f.iter().map(SseFrame::without_timing).collect::<Vec<_>>();
        assert_eq!(strip(&live), strip(&replay), "session {id}");
        // The clock is fixed, so the frames match even with timing left in.
        assert_eq!(live, replay);
    }
}

#[tokio::test]
async fn resume_from_a_sequence_number() {
    let fx = api_fixture(api_script(), None).await;
    let id = fx.create_session().await;
    fx.post_message(&id, "Any caries?", Some(upload())).await;
    let full = fx.events(&id, None).await;
    let tail = fx.events(&id, Some(3)).await;
    assert_eq!(tail, full[3..].to_vec());
    let resp =
        fx.http.get(fx.url(&format!("/sessions/{id}/events"))).header("Last-Event-ID", "5").send().await.unwrap();
    assert_eq!(read_sse(resp).await, full[5..].to_vec());
}

#[tokio::test]
async fn second_message_during_a_run_conflicts() {
    let chat = || Matcher::any(EndpointRole::Chat);
    let script = MockScript::new()
        .with_hash_embeddings(64)
        .with_lexical_rerank()
        .on(chat().contains("You label the intent"), MockResponse::chat_text("education"))
        .on_delayed(
            chat().contains("## Step 1"),
            MockResponse::chat_text("Fluoride strengthens enamel."),
            Duration::from_millis(800),
        );
    let fx = api_fixture(script, None).await;
    let id = fx.create_session().await;
    assert_eq!(fx.post_message(&id, "What does fluoride do?", None).await.status(), 202);
    let second = fx.post_message(&id, "And sealants?", None).await;
    assert_eq!(second.status(), 409);
    let frames = fx.events(&id, None).await;
    assert_eq!(frames.last().unwrap().event, "response");
    // The conflicting request left no trace of itself.
    assert_eq!(frames.iter().filter(|f| f.event == "instruction").count(), 1);
    assert_eq!(fx.http.delete(fx.url(&format!("/sessions/{id}"))).send().await.unwrap().status(), 200);
}

#[tokio::test]
async fn oversized_and_unsupported_uploads_are_rejected() {
    let fx = api_fixture(api_script(), None).await;
    let id = fx.create_session().await;
    let mut big = upload();
    big.resize(70 * 1024, 0);
    let resp = fx.post_message(&id, "look", Some(big)).await;
    assert_eq!(resp.status(), 413);
    let resp = fx.post_message(&id, "look", Some(b"GIF89a not really".to_vec())).await;
    assert_eq!(resp.status(), 415);
    let resp = fx.post_message(&id, "   ", None).await;
    assert_eq!(resp.status(), 422);
    // Rejections leave the session usable.
    let handle: Value = fx.http.get(fx.url(&format!("/sessions/{id}"))).send().await.unwrap().json().await.unwrap();
    assert_eq!(handle["status"], "idle");
    assert_eq!(handle["last_seq"], 0);
}

#[tokio::test]
async fn tool_listing_matches_the_registry() {
    let fx = api_fixture(api_script(), None).await;
    let body: Value =
        fx.http.get(fx.url("/tools?modality=panoramic_radiograph")).send().await.unwrap().json().await.unwrap();
    let expected = fx.state.runtime.registry.list_tools(&ToolFilter::modality(Modality::PanoramicRadiograph));
    assert_eq!(body["count"], 6);
    assert_eq!(body["tools"], serde_json::to_value(&expected).unwrap());
    let all: Value = fx.http.get(fx.url("/tools")).send().await.unwrap().json().await.unwrap();
    assert_eq!(all["count"], 23);
    assert_eq!(fx.http.get(fx.url("/tools?modality=xray")).send().await.unwrap().status(), 422);
    assert_eq!(fx.http.get(fx.url("/tools?task=juggling")).send().await.unwrap().status(), 422);
}

#[tokio::test]
async fn knowledge_search_matches_in_process_query() {
    let fx = api_fixture(api_script(), None).await;
    let body: Value = fx
        .http
        .get(fx.url("/knowledge/search?q=occlusal%20caries%20fissures&k=3"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let direct = fx.kb.query_knowledge("occlusal caries fissures", 3, None).await.unwrap();
    assert_eq!(body, serde_json::to_value(&direct).unwrap());
    assert_eq!(body["items"].as_array().unwrap().len(), 3);
    assert_eq!(body["items"][0]["book_title"], "Operative Dentistry");
    assert_eq!(fx.http.get(fx.url("/knowledge/search?q=x&k=0")).send().await.unwrap().status(), 422);
}

#[tokio::test]
async fn bearer_token_guards_everything_but_health() {
    let fx = api_fixture(api_script(), Some("s3cret")).await;
    assert_eq!(fx.http.get(fx.url("/healthz")).send().await.unwrap().status(), 200);
    assert_eq!(fx.http.post(fx.url("/sessions")).json(&json!({})).send().await.unwrap().status(), 401);
    let wrong = fx.http.get(fx.url("/tools")).bearer_auth("nope").send().await.unwrap();
    assert_eq!(wrong.status(), 401);
    let ok = fx.http.post(fx.url("/sessions")).bearer_auth("s3cret").json(&json!({})).send().await.unwrap();
    assert_eq!(ok.status(), 201);
}

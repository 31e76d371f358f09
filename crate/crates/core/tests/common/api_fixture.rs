//! A running API service wired to mock gateway and tool servers.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use dentagent_core::api::{serve, ApiServer, ApiState};
use dentagent_core::clock::IdGenerator;
use dentagent_core::comprehension::{Comprehender, Modality};
use dentagent_core::gateway::mock::{Matcher, MockResponse, MockScript, MockServer};
use dentagent_core::gateway::EndpointRole;
use dentagent_core::registry::mock::MockToolServer;
use dentagent_core::KnowledgeBase;
use serde_json::{json, Value};

use super::*;

pub struct ApiFixture {
    pub server: ApiServer,
    pub state: Arc<ApiState>,
    pub gateway: MockServer,
    pub tools: MockToolServer,
    pub kb: Arc<KnowledgeBase>,
    pub http: reqwest::Client,
}

/// Script for one image question: intent, one caries-detector round, answer.
pub fn api_script() -> MockScript {
    let chat = || Matcher::any(EndpointRole::Chat);
    MockScript::new()
        .with_hash_embeddings(64)
        .with_lexical_rerank()
        .on(
            Matcher::any(EndpointRole::Classify),
            MockResponse::classify(&[(Modality::IntraoralImage, 0.9), (Modality::PeriapicalRadiograph, 0.1)]),
        )
        .on(chat().contains("You label the intent"), MockResponse::chat_text("anomaly_diagnosis"))
        .on(
            chat().contains("## Step 1"),
            MockResponse::chat_tool_calls(&[("intraoral_caries_detector", json!({"image_id": "img-1"}))]),
        )
        .on(chat().contains("## Step 2"), MockResponse::chat_text("One carious lesion on the distal surface."))
}

pub async fn api_fixture(script: MockScript, token: Option<&str>) -> ApiFixture {
    let gw = gateway(script).await;
    let mut paragraphs = filler_paragraphs(12);
    paragraphs.push(paragraph(
        "Operative Dentistry",
        88,
        "Occlusal caries in molars often begins in pits and fissures.",
    ));
    let kb = kb_over_gateway(&gw, &paragraphs).await;
    let (registry, tools) = catalog_with_server(HashMap::new()).await;
    register_knowledge_tool(&registry, &kb, 7);
    let rt = runtime(chat(&gw), registry, Some(kb.clone()));
    let classifier = client(&gw, EndpointRole::Classify, "classifier", Duration::from_secs(3));
    let comprehender = Arc::new(Comprehender::new(chat(&gw), classifier));
    let state = Arc::new(
        ApiState::new(rt, comprehender, quick_config())
            .with_auth_token(token.map(str::to_string))
            .with_max_image_bytes(64 * 1024)
            .with_session_ids(IdGenerator::sequential("sess")),
    );
    let server = serve(state.clone(), "127.0.0.1:0".parse().unwrap()).await.unwrap();
    ApiFixture { server, state, gateway: gw, tools, kb, http: reqwest::Client::new() }
}

impl ApiFixture {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.server.base_url())
    }

    pub async fn create_session(&self) -> String {
        let resp = self.http.post(self.url("/sessions")).json(&json!({})).send().await.unwrap();
        assert_eq!(resp.status(), 201);
        resp.json::<Value>().await.unwrap()["session_id"].as_str().unwrap().to_string()
    }

    pub async fn post_message(&self, session: &str, text: &str, image: Option<Vec<u8>>) -> reqwest::Response {
        let mut form = reqwest::multipart::Form::new().text("text", text.to_string());
        if let Some(bytes) = image {
            form = form.part(
                "image",
                reqwest::multipart::Part::bytes(bytes).file_name("tooth.png").mime_str("image/png").unwrap(),
            );
        }
        self.http.post(self.url(&format!("/sessions/{session}/messages"))).multipart(form).send().await.unwrap()
    }

    /// Opens the event stream and collects frames until the server closes it.
    pub async fn events(&self, session: &str, from_seq: Option<u64>) -> Vec<SseFrame> {
        let resp = self.open_events(session, from_seq).await;
        read_sse(resp).await
    }

    pub async fn open_events(&self, session: &str, from_seq: Option<u64>) -> reqwest::Response {
        let mut url = self.url(&format!("/sessions/{session}/events"));
        if let Some(s) = from_seq {
            url.push_str(&format!("?from_seq={s}"));
        }
        let resp = self.http.get(url).send().await.unwrap();
        assert_eq!(resp.status(), 200);
        resp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SseFrame {
    pub id: String,
    pub event: String,
    pub data: String,
}

impl SseFrame {
    /// The frame with timing fields removed from its data.
    pub fn without_timing(&self) -> (String, String, String) {
        let mut v: Value = serde_json::from_str(&self.data).unwrap();
        strip_timing(&mut v);
        (self.id.clone(), self.event.clone(), v.to_string())
    }
}

pub async fn read_sse(mut resp: reqwest::Response) -> Vec<SseFrame> {
    let mut text = String::new();
    let read = async {
        while let Some(chunk) = resp.chunk().await.unwrap() {
            text.push_str(std::str::from_utf8(&chunk).unwrap());
        }
    };
    tokio::time::timeout(Duration::from_secs(10), read).await.expect("event stream did not end");
    parse_sse(&text)
}

pub fn parse_sse(text: &str) -> Vec<SseFrame> {
    text.split("\n\n")
        .filter_map(|block| {
            let mut frame = SseFrame { id: String::new(), event: String::new(), data: String::new() };
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    frame.id = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("event:") {
                    frame.event = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    frame.data.push_str(v.strip_prefix(' ').unwrap_or(v));
                }
            }
            (!frame.data.is_empty()).then_some(frame)
        })
        .collect()
}

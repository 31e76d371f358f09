//! A tool server that answers every catalog tool with fixture payloads, with
//! per-tool overrides for failure injection.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine;
use serde_json::{json, Value};

use super::{ToolDescriptor, ToolRequest, ToolResponse, ToolTask, WireArtifact};

#[derive(Debug, Clone, PartialEq)]
pub enum MockToolBehavior {
    /// Answer with [`fixture_response`].
    Fixture,
    /// Answer `status: ok` with this payload, valid or not.
    Payload(Value),
    /// Answer `status: error` with this message.
    Error(String),
    /// Answer with a bare HTTP status and no body.
    Status(u16),
    Delay {
        ms: u64,
        then: Box<MockToolBehavior>,
    },
}

struct MockState {
    tools: HashMap<String, ToolDescriptor>,
    overrides: HashMap<String, MockToolBehavior>,
    requests: Mutex<Vec<ToolRequest>>,
}

pub struct MockToolServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    task: tokio::task::JoinHandle<()>,
}

impl MockToolServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<ToolRequest> {
        self.state.requests.lock().expect("mock lock poisoned").clone()
    }
}

impl Drop for MockToolServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Serves `POST /tools/{name}` for every descriptor on 127.0.0.1:`port` (0 picks a free port).
pub async fn serve_mock_tools(
    tools: &[ToolDescriptor],
    overrides: HashMap<String, MockToolBehavior>,
    port: u16,
) -> std::io::Result<MockToolServer> {
    let state = Arc::new(MockState {
        tools: tools.iter().map(|d| (d.name.clone(), d.clone())).collect(),
        overrides,
        requests: Mutex::new(Vec::new()),
    });
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    let addr = listener.local_addr()?;
    let app = Router::new().route("/tools/{name}", post(handle)).with_state(state.clone());
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok(MockToolServer { addr, state, task })
}

async fn handle(
    State(state): State<Arc<MockState>>,
    Path(name): Path<String>,
    Json(req): Json<ToolRequest>,
) -> Response {
    state.requests.lock().expect("mock lock poisoned").push(req.clone());
    let Some(desc) = state.tools.get(&name) else {
        return (StatusCode::NOT_FOUND, format!("no mock for tool {name:?}")).into_response();
    };
    let mut behavior = state.overrides.get(&name).cloned().unwrap_or(MockToolBehavior::Fixture);
    loop {
        match behavior {
            MockToolBehavior::Delay { ms, then } => {
                tokio::time::sleep(Duration::from_millis(ms)).await;
                behavior = *then;
            }
            MockToolBehavior::Fixture => return Json(fixture_response(desc, &req)).into_response(),
            MockToolBehavior::Payload(p) => return Json(ToolResponse::ok(p)).into_response(),
            MockToolBehavior::Error(m) => return Json(ToolResponse::error(m)).into_response(),
            MockToolBehavior::Status(code) => {
                return StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR).into_response()
            }
        }
    }
}

fn first_label(desc: &ToolDescriptor) -> String {
    desc.functions.first().cloned().unwrap_or_else(|| desc.name.clone())
}

/// A deterministic response conforming to the descriptor's output schema.
/// Detection and segmentation responses carry an annotated PNG artifact.
pub fn fixture_response(desc: &ToolDescriptor, req: &ToolRequest) -> ToolResponse {
    let image_id = req.call.args.get("image_id").and_then(Value::as_str).unwrap_or("").to_string();
    let label = first_label(desc);
    let payload = match desc.task {
        ToolTask::Classification => {
            let probs = [0.8, 0.15, 0.05];
            let mut preds: Vec<Value> =
                desc.functions.iter().zip(probs).map(|(l, p)| json!({"label": l, "probability": p})).collect();
            if preds.is_empty() {
                preds.push(json!({"label": label, "probability": 1.0}));
            }
            json!({"image_id": image_id, "predictions": preds})
        }
        ToolTask::Detection => json!({
            "image_id": image_id,
            "detections": [{"label": label, "score": 0.91, "bbox": [12.0, 20.0, 64.0, 88.0]}]
        }),
        ToolTask::Segmentation => json!({
            "image_id": image_id,
            "segments": [{"label": label, "score": 0.88, "area_px": 1520,
                          "polygon": [[10.0, 10.0], [40.0, 10.0], [40.0, 30.0], [10.0, 30.0]]}]
        }),
        ToolTask::KeypointDetection => json!({
            "image_id": image_id,
            "landmarks": (1..=29).map(|i| json!({"name": format!("L{i}"), "x": 10.0 * i as f64, "y": 200.0 - 5.0 * i as f64})).collect::<Vec<_>>()
        }),
        ToolTask::ReportGeneration => json!({
            "image_id": image_id,
            "report": format!("Findings for {image_id}: full permanent dentition, no periapical radiolucency, normal alveolar bone height.")
        }),
        ToolTask::VisualQa => json!({"answer": format!("Fixture answer for {image_id}.")}),
        ToolTask::VisualDescription => json!({"description": format!("Fixture description of {image_id}.")}),
        ToolTask::Retrieval => json!({"items": []}),
    };
    let mut resp = ToolResponse::ok(payload);
    if matches!(desc.task, ToolTask::Detection | ToolTask::Segmentation) {
        resp.artifacts.push(WireArtifact {
            media_type: "image/png".into(),
            data: base64::engine::general_purpose::STANDARD.encode(annotated_png(&desc.name, &image_id)),
        });
    }
    resp
}

/// A small PNG whose pixels depend only on the inputs.
pub fn annotated_png(tool: &str, image_id: &str) -> Vec<u8> {
    use sha2::Digest;
    let seed = sha2::Sha256::digest(format!("{tool}\0{image_id}").as_bytes());
    let img = image::RgbImage::from_fn(16, 16, |x, y| {
        let on_box = x == 2 || x == 13 || y == 2 || y == 13;
        if on_box {
            image::Rgb([255, 0, 0])
        } else {
            image::Rgb([seed[0], seed[1], seed[(x as usize + y as usize) % 32]])
        }
    });
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{parse_catalog, CompiledSchema, ToolCall, DEFAULT_TOOL_BASE, SHIPPED_CATALOG};

    #[test]
    fn fixtures_satisfy_every_output_schema() {
        for (_, d) in parse_catalog(SHIPPED_CATALOG, DEFAULT_TOOL_BASE).unwrap() {
            let req = ToolRequest {
                call: ToolCall {
                    call_id: "c".into(),
                    timestamp: chrono::Utc::now(),
                    tool_name: d.name.clone(),
                    args: json!({"image_id": "img-1"}),
                },
                attachments: Default::default(),
            };
            let resp = fixture_response(&d, &req);
            let schema = CompiledSchema::compile(&d.output_schema).unwrap();
            assert!(schema.issues(&resp.payload).is_empty(), "{}: {:?}", d.name, schema.issues(&resp.payload));
        }
    }

    #[test]
    fn annotated_png_is_deterministic_and_decodes() {
        let a = annotated_png("t", "img-1");
        assert_eq!(a, annotated_png("t", "img-1"));
        assert!(image::load_from_memory(&a).is_ok());
    }
}

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::response::sse::{Event, KeepAlive, Sse};
use futures::Stream;
use serde::Deserialize;
use tokio::sync::watch;

use super::{ApiError, ApiState};
use crate::agent::{AgentEvent, TraceLog};

#[derive(Debug, Deserialize)]
pub(super) struct EventsQuery {
    from_seq: Option<u64>,
}

/// One SSE frame per event: `id` is the sequence number, `event` the kind,
/// `data` the compact JSON of the whole event.
pub fn event_frame(event: &AgentEvent) -> String {
    serde_json::to_string(event).expect("events serialize")
}

struct Cursor {
    trace: Arc<TraceLog>,
    rx: watch::Receiver<u64>,
    next_after: u64,
    buffered: VecDeque<AgentEvent>,
    done: bool,
}

/// Events after `from_seq`, live, ending after the first terminal event.
pub fn follow(trace: Arc<TraceLog>, from_seq: u64) -> impl Stream<Item = AgentEvent> {
    let rx = trace.subscribe();
    let cursor = Cursor { trace, rx, next_after: from_seq, buffered: VecDeque::new(), done: false };
    futures::stream::unfold(cursor, |mut c| async move {
        if c.done {
            return None;
        }
        loop {
            if let Some(event) = c.buffered.pop_front() {
                c.next_after = event.seq;
                c.done = event.kind.is_terminal();
                return Some((event, c));
            }
            // Mark the current value seen before reading so no append is missed.
            c.rx.borrow_and_update();
            c.buffered.extend(c.trace.events_after(c.next_after));
            if c.buffered.is_empty() && c.rx.changed().await.is_err() {
                return None;
            }
        }
    })
}

pub(super) async fn stream_events(
    State(state): State<Arc<ApiState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = state.session(&id)?;
    let resume = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.trim().parse::<u64>().ok());
    let from_seq = q.from_seq.or(resume).unwrap_or(0);
    let frames = futures::StreamExt::map(follow(session.trace.clone(), from_seq), |event| {
        Ok(Event::default().id(event.seq.to_string()).event(event.kind.as_str()).data(event_frame(&event)))
    });
    Ok(Sse::new(frames).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::EventKind;
    use crate::clock::ManualClock;
    use futures::StreamExt;
    use serde_json::json;

    #[tokio::test]
    async fn follows_until_terminal() {
        let trace = Arc::new(TraceLog::new());
        let clock = ManualClock::fixed();
        trace.emit(&clock, EventKind::Instruction, json!({}));
        let reader = tokio::spawn(follow(trace.clone(), 0).collect::<Vec<_>>());
        tokio::task::yield_now().await;
        trace.emit(&clock, EventKind::Thought, json!({}));
        trace.emit(&clock, EventKind::Response, json!({}));
        trace.emit(&clock, EventKind::Instruction, json!({"next": "turn"}));
        let seen: Vec<u64> = reader.await.unwrap().iter().map(|e| e.seq).collect();
        assert_eq!(seen, vec![1, 2, 3]);

        let resumed: Vec<u64> = follow(trace.clone(), 1).map(|e| e.seq).collect().await;
        assert_eq!(resumed, vec![2, 3]);
    }
}

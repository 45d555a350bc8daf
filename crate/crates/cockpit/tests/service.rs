use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::json;
use tokio_tungstenite::tungstenite::Message;

use drivelm_cockpit::api::*;
use drivelm_cockpit::{router, AppState, ServiceConfig};
use drivelm_core::agent::ScriptedBackend;
use drivelm_core::memory::{MemoryStore, UserProfile};
use drivelm_core::session::{EventKind, Mode, SessionFrame, SessionReport};

async fn start() -> String {
    let state = AppState::new(Arc::new(ScriptedBackend::oracle()), MemoryStore::in_memory(), ServiceConfig::default());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    format!("127.0.0.1:{}", addr.port())
}

struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    fn new(addr: &str) -> Self {
        Client { http: reqwest::Client::new(), base: format!("http://{addr}") }
    }

    async fn post<T: serde::de::DeserializeOwned>(&self, path: &str, body: serde_json::Value) -> T {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        assert!(r.status().is_success(), "{path}: {}", r.text().await.unwrap());
        r.json().await.unwrap()
    }

    async fn get<T: serde::de::DeserializeOwned>(&self, path: &str) -> T {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        assert!(r.status().is_success(), "{path}");
        r.json().await.unwrap()
    }

    async fn create(&self, user: &str) -> SessionCreated {
        self.post("/v1/sessions", json!({ "user": user, "seed": 3, "category": "speed" })).await
    }

    async fn state(&self, id: &str) -> SessionState {
        self.get(&format!("/v1/sessions/{id}")).await
    }

    /// Polls until `pred` holds on the session state.
    async fn wait_for(&self, id: &str, pred: impl Fn(&SessionState) -> bool) -> SessionState {
        for _ in 0..200 {
            let s = self.state(id).await;
            if pred(&s) {
                return s;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("condition not reached");
    }
}

fn swaps(s: &SessionState) -> usize {
    s.log.iter().filter(|e| matches!(e.kind, EventKind::Swap { .. })).count()
}

#[tokio::test]
async fn health_reports_version_and_backend() {
    let c = Client::new(&start().await);
    let h: Health = c.get("/v1/health").await;
    assert_eq!(h.version, "v1");
    assert_eq!(h.backend, "scripted:oracle");
}

#[tokio::test]
async fn stepping_is_exact_in_simulated_time() {
    let c = Client::new(&start().await);
    let s = c.create("u").await;
    assert_eq!(s.frame.tick, 0);
    let f: SessionFrame = c.post(&format!("/v1/sessions/{}/step", s.id), json!({ "ticks": 100 })).await;
    assert_eq!(f.tick, 100);
    assert!((f.time - 10.0).abs() < 1e-9, "{}", f.time);
}

#[tokio::test]
async fn unknown_session_is_not_found() {
    let c = Client::new(&start().await);
    let r = c.http.get(format!("{}/v1/sessions/nope", c.base)).send().await.unwrap();
    assert_eq!(r.status(), 404);
    let r = c.http.post(format!("{}/v1/sessions", c.base)).json(&json!({ "user": " " })).send().await.unwrap();
    assert_eq!(r.status(), 400);
}

#[tokio::test]
async fn end_to_end_command_takeover_and_feedback() {
    let c = Client::new(&start().await);
    let s = c.create("bob").await;
    let id = &s.id;
    let path = |p: &str| format!("/v1/sessions/{id}/{p}");

    let none: FeedbackReply = c.post(&path("feedback"), json!({ "text": "hm" })).await;
    assert_eq!(none.record, None);

    let _: SessionFrame = c.post(&path("step"), json!({ "ticks": 5 })).await;
    let reply: CommandReply = c.post(&path("command"), json!({ "text": "Could you drive more conservatively?" })).await;
    assert_eq!(reply, CommandReply::Dispatched { seq: 0 });
    let st = c.wait_for(id, |s| swaps(s) == 1).await;
    assert!(st.frame.thought.as_deref().is_some_and(|t| !t.is_empty()));
    assert!(st.frame.intent.as_deref().is_some_and(|i| i.contains("proceed")), "{:?}", st.frame.intent);

    let m: ModeReply = c.post(&path("takeover"), json!({})).await;
    assert_eq!((m.mode, m.takeovers), (Mode::TakenOver, 1));
    let m: ModeReply = c.post(&path("takeover"), json!({})).await;
    assert_eq!(m.takeovers, 1);
    let m: ModeReply = c.post(&path("release"), json!({})).await;
    assert_eq!(m.mode, Mode::Auto);

    let fb: FeedbackReply = c.post(&path("feedback"), json!({ "text": "A little bit too fast." })).await;
    let record = fb.record.expect("feedback stored");
    let profile: UserProfile = c.get("/v1/users/bob/memory").await;
    assert_eq!(profile.records.len(), 1);
    assert_eq!(profile.records[0].id, record);
    assert_eq!(profile.records[0].feedback.as_deref(), Some("A little bit too fast."));

    let _: CommandReply = c.post(&path("command"), json!({ "text": "Could you drive a bit more conservatively?" })).await;
    let st = c.wait_for(id, |s| swaps(s) == 2).await;
    let prompt = st
        .log
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::Response { seq: 1, exchange } => Some(exchange.prompt.clone()),
            _ => None,
        })
        .unwrap();
    assert!(prompt.contains("Feedback: A little bit too fast."));

    let report: SessionReport = c.post(&path("finish"), json!({})).await;
    assert_eq!(report.takeovers, 1);
    assert_eq!(report.takeover_rate, Some(1.0));
    assert_eq!(report.commands, 2);
}

#[tokio::test]
async fn reload_reconstructs_the_same_state() {
    let c = Client::new(&start().await);
    let s = c.create("u").await;
    let last: SessionFrame = c.post(&format!("/v1/sessions/{}/step", s.id), json!({ "ticks": 37 })).await;
    let a = c.state(&s.id).await;
    let b = c.state(&s.id).await;
    assert_eq!(a, b);
    assert_eq!(a.frame, last);
}

#[tokio::test]
async fn stream_carries_monotone_frames_and_replies() {
    let addr = start().await;
    let c = Client::new(&addr);
    let s = c.create("w").await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/v1/sessions/{}/stream", s.id)).await.unwrap();

    ws.send(Message::text(r#"{"type":"command","text":"drive at 40 km/h"}"#)).await.unwrap();
    ws.send(Message::text(r#"{"type":"step","ticks":20}"#)).await.unwrap();
    ws.send(Message::text(r#"{"type":"bogus"}"#)).await.unwrap();

    let mut ticks = Vec::new();
    let mut acked = false;
    let mut errors = 0;
    while ticks.len() < 20 || !acked || errors == 0 {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.unwrap().unwrap().unwrap();
        let Message::Text(t) = msg else { continue };
        match serde_json::from_str::<ServerMessage>(&t).unwrap() {
            ServerMessage::Frame { frame } => ticks.push(frame.tick),
            ServerMessage::Command { reply } => {
                assert_eq!(reply, CommandReply::Dispatched { seq: 0 });
                acked = true;
            }
            ServerMessage::Error { .. } => errors += 1,
            other => panic!("unexpected {other:?}"),
        }
    }
    assert!(ticks.windows(2).all(|w| w[1] == w[0] + 1), "{ticks:?}");
    assert_eq!(ticks.last(), Some(&20));

    ws.send(Message::text(r#"{"type":"report"}"#)).await.unwrap();
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.unwrap().unwrap().unwrap();
        let Message::Text(t) = msg else { continue };
        if let ServerMessage::Report { report } = serde_json::from_str::<ServerMessage>(&t).unwrap() {
            assert_eq!(report.commands, 1);
            break;
        }
    }
}

#[tokio::test]
async fn paced_sessions_step_on_their_own() {
    let state = AppState::new(
        Arc::new(ScriptedBackend::oracle()),
        MemoryStore::in_memory(),
        ServiceConfig { pacing: Some(Duration::from_millis(2)), ..ServiceConfig::default() },
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    let c = Client::new(&addr.to_string());
    let s = c.create("p").await;
    let st = c.wait_for(&s.id, |s| s.frame.tick >= 20).await;
    assert!((st.frame.time - st.frame.tick as f64 * 0.1).abs() < 1e-9);
}

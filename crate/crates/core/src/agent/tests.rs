use super::*;
use crate::sim::ContextSnapshot;
use proptest::prelude::*;
use std::io::{Read, Write};
use std::net::TcpListener;

fn snap() -> ContextSnapshot {
    ContextSnapshot::open_road(15.0, 1, 3, 25.0)
}

fn entry(command: &str, action: &str, feedback: Option<&str>, timestamp: u64) -> HistoryEntry {
    HistoryEntry {
        command: command.into(),
        action: action.into(),
        feedback: feedback.map(str::to_string),
        timestamp,
    }
}

#[test]
fn sections_in_fixed_order() {
    let t = PromptTemplates::builtin();
    let h = [entry("Drive faster.", "def policy():\n    yield proceed(20)", Some("Good."), 1)];
    let b = build_prompt(&t, &snap(), "Go slower.", &h, Some(Directness::MildHint), Some("Too fast.")).unwrap();
    let text = b.render();
    let at = |needle: &str| text.find(needle).unwrap_or_else(|| panic!("missing {needle}"));
    let order = [
        at("driving assistant"),
        at("Here are some examples"),
        at(HISTORY_HEADING),
        at("Current situation:"),
        at("Command (Level III): Go slower."),
        at(FEEDBACK_HEADING),
    ];
    assert!(order.windows(2).all(|w| w[0] < w[1]), "{order:?}");
}

#[test]
fn empty_history_omits_block() {
    let b = build_prompt(&PromptTemplates::builtin(), &snap(), "Drive.", &[], None, None).unwrap();
    assert!(!b.render().contains(HISTORY_HEADING));
    assert!(!b.render().contains(FEEDBACK_HEADING));
}

#[test]
fn history_renders_command_action_feedback() {
    let h = [entry("Drive at 60 km/h.", "def policy():\n    yield proceed(kmh(60))", Some("A little bit too fast."), 3)];
    let b = build_prompt(&PromptTemplates::builtin(), &snap(), "Drive at 50 km/h.", &h, None, None).unwrap();
    let text = b.render();
    let block = &text[text.find(HISTORY_HEADING).unwrap()..];
    assert!(block.contains("Command: Drive at 60 km/h."));
    assert!(block.contains("Action: def policy():\n    yield proceed(kmh(60))"));
    assert!(block.contains("Feedback: A little bit too fast."));
}

#[test]
fn trimming_keeps_most_recent() {
    let mut t = PromptTemplates::builtin().with_shots(0);
    let old = entry("Old command.", &"x".repeat(200), None, 1);
    let new = entry("New command.", &"y".repeat(200), None, 2);
    let base = build_prompt(&t, &snap(), "Go.", &[], None, None).unwrap().render().chars().count();
    let one = build_prompt(&t, &snap(), "Go.", std::slice::from_ref(&new), None, None).unwrap().render().chars().count();
    t.budget = one;
    assert!(one > base);
    let b = build_prompt(&t, &snap(), "Go.", &[old, new.clone()], None, None).unwrap();
    assert_eq!(b.history, vec![new]);
    assert_eq!(b.trimmed, 1);
    t.budget = base - 1;
    assert!(matches!(build_prompt(&t, &snap(), "Go.", &[], None, None), Err(AgentError::PromptTooLong { .. })));
}

#[test]
fn shots_select_examples() {
    let t = PromptTemplates::builtin();
    assert_eq!(t.exemplars.len(), 3);
    let zero = t.clone().with_shots(0);
    let b = build_prompt(&zero, &snap(), "Go.", &[], None, None).unwrap();
    assert!(!b.render().contains("Here are some examples"));
    assert_ne!(zero.hash(), t.hash());
}

#[test]
fn exemplars_are_valid_programs() {
    for e in PromptTemplates::builtin().exemplars {
        crate::dsl::parse_program(&e.output).unwrap_or_else(|err| panic!("{}: {err}", e.query));
    }
}

#[test]
fn parses_thought_and_program() {
    let raw = "Thought: The driver wants me to drive more conservatively.\n```lmp\ndef policy():\n    yield proceed(10)\n```\n";
    let p = parse_response(raw).unwrap();
    assert_eq!(p.thought, "The driver wants me to drive more conservatively.");
    assert_eq!(p.output, PolicyOutput::Program("def policy():\n    yield proceed(10)\n".into()));
}

#[test]
fn prose_only_is_a_format_rejection() {
    let err = parse_response("Sure, I will slow down a bit for you.").unwrap_err();
    assert!(matches!(err, AgentError::Format(_)));
}

#[test]
fn parses_matrix() {
    let m = ActionMatrix::from_array([0.4, 0.05, 0.1, 2.0, 1.5, 3.0]);
    let p = parse_response(&render_matrix_response("Calmer.", &m)).unwrap();
    assert_eq!(p.output, PolicyOutput::Matrix(m));
    assert_eq!(p.thought, "Calmer.");
    let partial = "Thought: x\nK_p: 1\nK_i: 2\n";
    assert!(matches!(parse_response(partial), Err(AgentError::Format(_))));
}

#[test]
fn program_and_matrix_is_ambiguous() {
    let m = ActionMatrix::default();
    let raw = format!("{}\n{}", render_response("t", "def p():\n    yield stop()"), m.render());
    assert_eq!(parse_response(&raw), Err(AgentError::Ambiguous));
}

#[test]
fn scripted_glob_and_captures() {
    let rules = vec![
        ScriptRule {
            pattern: "slow*".into(),
            syntax: PatternSyntax::Glob,
            feedback: None,
            response: render_response("Slower.", "def p():\n    yield proceed(8)"),
        },
        ScriptRule {
            pattern: r"(?P<n>\d+) km/h".into(),
            syntax: PatternSyntax::Regex,
            feedback: None,
            response: "speed ${n}".into(),
        },
    ];
    let b = ScriptedBackend::new("t", rules).unwrap();
    let bundle = build_prompt(&PromptTemplates::builtin(), &snap(), "Slow down please", &[], None, None).unwrap();
    let c = complete(&b, &bundle).unwrap();
    assert_eq!(c.latency, 0.0);
    assert!(parse_response(&c.text).is_ok());
    assert_eq!(b.respond("Drive at 70 km/h.", None).unwrap(), "speed 70");
    assert!(matches!(b.respond("Hello", None), Err(AgentError::NoRule(_))));
}

#[test]
fn scripted_feedback_rules() {
    let yaml = r#"
- pattern: 'speed'
  feedback: 'slow'
  response: second
- pattern: 'speed'
  response: first
"#;
    let b = ScriptedBackend::from_yaml("t", yaml).unwrap();
    assert_eq!(b.respond("speed up", None).unwrap(), "first");
    assert_eq!(b.respond("speed up", Some("too slow")).unwrap(), "second");
    assert_eq!(b.respond("speed up", Some("fine")).unwrap(), "first");
}

#[test]
fn replay_miss_names_hash() {
    let bundle = build_prompt(&PromptTemplates::builtin(), &snap(), "Go.", &[], None, None).unwrap();
    let err = complete(&ReplayBackend::new([]), &bundle).unwrap_err();
    assert_eq!(err, AgentError::ReplayMiss { hash: bundle.hash() });
    assert!(err.to_string().contains(&bundle.hash()));
}

#[test]
fn recording_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let rec = RecordingBackend::new(ScriptedBackend::oracle(), &path).unwrap();
    let bundle = build_prompt(&PromptTemplates::builtin(), &snap(), "Pull over and stop.", &[], None, None).unwrap();
    let live = complete(&rec, &bundle).unwrap();
    let replay = ReplayBackend::open(&path).unwrap();
    assert_eq!(replay.len(), 1);
    assert_eq!(complete(&replay, &bundle).unwrap(), live);
}

#[test]
fn prompt_rendering_is_deterministic() {
    let t = PromptTemplates::builtin();
    let h = [entry("a", "b", Some("c"), 1)];
    let a = build_prompt(&t, &snap(), "Go.", &h, None, None).unwrap();
    let b = build_prompt(&t, &snap(), "Go.", &h, None, None).unwrap();
    assert_eq!(a.render(), b.render());
    assert_eq!(a.hash(), b.hash());
}

fn fast_remote(url: String) -> RemoteBackend {
    RemoteBackend::new(RemoteConfig {
        url,
        key_env: None,
        timeout_secs: 2.0,
        backoff_secs: 0.01,
        ..RemoteConfig::default()
    })
    .unwrap()
}

#[test]
fn remote_unreachable_fails_after_retries() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let b = fast_remote(format!("http://127.0.0.1:{port}/v1/chat/completions"));
    let bundle = build_prompt(&PromptTemplates::builtin(), &snap(), "Go.", &[], None, None).unwrap();
    let ex = exchange(&b, &bundle);
    assert!(ex.output.is_none());
    assert!(ex.error.unwrap().starts_with("backend error"));
}

fn serve_once(body: &'static str, attempts: usize) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut requests = Vec::new();
        for i in 0..attempts {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            // read headers, then the announced body
            loop {
                let n = s.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf);
                if let Some(end) = text.find("\r\n\r\n") {
                    let len = text[..end]
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if buf.len() >= end + 4 + len {
                        break;
                    }
                }
            }
            requests.push(String::from_utf8_lossy(&buf).into_owned());
            let (status, payload) = if i + 1 < attempts { ("500 Internal Server Error", "{}") } else { ("200 OK", body) };
            let reply = format!(
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
            s.write_all(reply.as_bytes()).unwrap();
        }
        requests
    });
    (url, handle)
}

#[test]
fn remote_request_and_reply_shape() {
    let body = r#"{"choices":[{"message":{"role":"assistant","content":"Thought: ok\n```lmp\ndef p():\n    yield stop()\n```"}}]}"#;
    let (url, server) = serve_once(body, 2);
    let b = fast_remote(url);
    let bundle = build_prompt(&PromptTemplates::builtin(), &snap(), "Stop now.", &[], None, None).unwrap();
    let ex = exchange(&b, &bundle);
    assert_eq!(ex.error, None);
    assert!(ex.latency > 0.0);
    assert_eq!(ex.thought.as_deref(), Some("ok"));
    let requests = server.join().unwrap();
    assert_eq!(requests.len(), 2);
    let last = &requests[1];
    let json: serde_json::Value = serde_json::from_str(&last[last.find("\r\n\r\n").unwrap() + 4..]).unwrap();
    assert_eq!(json["model"], "gpt-4");
    assert_eq!(json["messages"][0]["role"], "system");
    assert_eq!(json["messages"][0]["content"], bundle.system.as_str());
    assert_eq!(json["messages"][1]["role"], "user");
    assert_eq!(json["messages"][1]["content"], bundle.user_text().as_str());
}

#[test]
fn oracle_rules_cover_every_template() {
    let b = ScriptedBackend::oracle();
    for t in crate::scenario::templates::all_templates() {
        let text = t.text.replace("{gap}", "30").replace("{kmh}", "50").replace("{dir}", "left");
        let text = text.replace("{where}", "to the left");
        let raw = b.respond(&text, None).unwrap_or_else(|e| panic!("{text}: {e}"));
        let parsed = parse_response(&raw).unwrap_or_else(|e| panic!("{text}: {e}"));
        let PolicyOutput::Program(src) = parsed.output else { panic!("{text}: not a program") };
        crate::dsl::parse_program(&src).unwrap_or_else(|e| panic!("{text}: {e}\n{src}"));
    }
}

proptest! {
    #[test]
    fn response_round_trip(
        thought in "[A-Za-z][A-Za-z ,.']{0,60}",
        speed in 1u32..40,
    ) {
        let program = format!("def policy():\n    yield proceed({speed})\n");
        let p = parse_response(&render_response(&thought, &program)).unwrap();
        prop_assert_eq!(p.thought, thought.trim().to_string());
        prop_assert_eq!(p.output, PolicyOutput::Program(program));
    }

    #[test]
    fn matrix_round_trip(a in prop::array::uniform6(-100.0..100.0f64)) {
        let m = ActionMatrix::from_array(a);
        let p = parse_response(&render_matrix_response("t", &m)).unwrap();
        prop_assert_eq!(p.output, PolicyOutput::Matrix(m));
    }
}

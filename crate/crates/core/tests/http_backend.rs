//! HttpBackend against a local fake chat-completions server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use linkforge::gateway::{
    Backend, ChatRequest, Gateway, GatewayConfig, GatewayError, HttpBackend, HttpConfig, YesNoScoreRequest,
};
use linkforge::kb::{mark_mention, Entity, KnowledgeBase};
use linkforge::pipeline::{Indices, MentionTask, Pipeline, PipelineConfig};
use linkforge::retrieval::{Bm25Index, Bm25Params};
use parking_lot::Mutex;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

type Handler = dyn Fn(usize, &Seen) -> (u16, Value) + Send + Sync;

struct FakeServer {
    endpoint: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl FakeServer {
    fn start(handler: Box<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let endpoint = format!("http://{}/v1", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let count = AtomicUsize::new(0);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    continue;
                }
                let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
                let (mut len, mut auth) = (0usize, None);
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    let h = h.trim_end();
                    if h.is_empty() {
                        break;
                    }
                    let (name, value) = h.split_once(':').unwrap();
                    match name.to_ascii_lowercase().as_str() {
                        "content-length" => len = value.trim().parse().unwrap(),
                        "authorization" => auth = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let req = Seen {
                    path,
                    auth,
                    body: serde_json::from_slice(&body).unwrap_or(Value::Null),
                };
                let i = count.fetch_add(1, Ordering::SeqCst);
                let (status, reply) = handler(i, &req);
                log.lock().push(req);
                let text = reply.to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
            }
        });
        Self { endpoint, seen }
    }

    fn config(&self) -> HttpConfig {
        HttpConfig {
            endpoint: self.endpoint.clone(),
            model: "fake-model".into(),
            timeout_secs: 10,
            ..HttpConfig::default()
        }
    }
}

fn chat_reply(texts: &[&str], completion_tokens: u32) -> Value {
    json!({
        "choices": texts.iter().map(|t| json!({"message": {"content": t}, "finish_reason": "stop"})).collect::<Vec<_>>(),
        "usage": {"prompt_tokens": 40, "completion_tokens": completion_tokens},
    })
}

fn logprob_reply(yes: f64, no: f64) -> Value {
    json!({"choices": [{"message": {"content": "yes"}, "logprobs": {"content": [
        {"token": "yes", "logprob": yes, "top_logprobs": [
            {"token": "yes", "logprob": yes}, {"token": "no", "logprob": no}, {"token": "maybe", "logprob": -9.0}
        ]}
    ]}}]})
}

fn request(n: usize, reasoning: bool) -> ChatRequest {
    ChatRequest {
        system_text: "sys".into(),
        user_text: "user".into(),
        temperature: 0.7,
        num_samples: n,
        max_tokens: 64,
        reasoning_enabled: reasoning,
    }
}

fn fast() -> GatewayConfig {
    GatewayConfig {
        backoff_base_ms: 1,
        ..GatewayConfig::default()
    }
}

#[test]
fn chat_wire_format_and_429_retry() {
    let server = FakeServer::start(Box::new(|i, _| {
        if i == 0 {
            (429, json!({"error": "slow down"}))
        } else {
            (200, chat_reply(&["answer: 1", "<think>x</think> answer: 2"], 7))
        }
    }));
    let backend = HttpBackend::with_api_key(server.config(), Some("secret".into()));
    let gateway = Gateway::new(Arc::new(backend), fast());
    let resp = gateway.chat_sample(&request(2, false)).unwrap();
    assert_eq!(resp.completions, vec!["answer: 1", "<think>x</think> answer: 2"]);
    assert_eq!(resp.generated_tokens, vec![4, 3]);
    assert_eq!(resp.prompt_tokens, 40);

    let seen = server.seen.lock().clone();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].path, "/v1/chat/completions");
    assert_eq!(seen[1].auth.as_deref(), Some("Bearer secret"));
    let body = &seen[1].body;
    assert_eq!(body["model"], "fake-model");
    assert_eq!(body["n"], 2);
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["messages"][0], json!({"role": "system", "content": "sys"}));
    assert_eq!(body["messages"][1]["content"], "user");
    assert_eq!(body["chat_template_kwargs"], json!({"enable_thinking": false}));
}

#[test]
fn refused_multi_sample_falls_back_to_single_requests() {
    let server = FakeServer::start(Box::new(|_, req| {
        if req.body["n"].as_u64() == Some(1) {
            (200, chat_reply(&["answer: 3"], 5))
        } else {
            (400, json!({"error": "n > 1 is not supported"}))
        }
    }));
    let gateway = Gateway::new(Arc::new(HttpBackend::with_api_key(server.config(), None)), fast());
    let resp = gateway.chat_sample(&request(3, true)).unwrap();
    assert!(resp.single_sample_fallback);
    assert_eq!(resp.completions, vec!["answer: 3"; 3]);
    let seen = server.seen.lock().clone();
    assert_eq!(seen.len(), 4);
    assert!(seen[0].auth.is_none());
    assert!(seen[1].body.get("chat_template_kwargs").is_none());
}

#[test]
fn persistent_server_errors_surface_after_retries() {
    let server = FakeServer::start(Box::new(|_, _| (503, json!({"error": "down"}))));
    let cfg = GatewayConfig { max_retries: 2, ..fast() };
    let gateway = Gateway::new(Arc::new(HttpBackend::with_api_key(server.config(), None)), cfg);
    let err = gateway.chat_sample(&request(1, true)).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { status: Some(503), .. }), "{err:?}");
    assert_eq!(server.seen.lock().len(), 3);
}

#[test]
fn yes_no_scoring_reads_top_logprobs() {
    let server = FakeServer::start(Box::new(|_, _| (200, logprob_reply(-0.2, -1.8))));
    let gateway = Gateway::new(Arc::new(HttpBackend::with_api_key(server.config(), None)), fast());
    let (yes, no) = gateway
        .score_yes_no(&YesNoScoreRequest {
            instruction: "Judge relevance.".into(),
            query: "in [Paris].".into(),
            document: "Paris (city): Capital city of France".into(),
        })
        .unwrap();
    assert_eq!((yes, no), (-0.2, -1.8));
    let body = &server.seen.lock()[0].body;
    assert_eq!(body["logprobs"], true);
    assert!(body["top_logprobs"].as_u64().unwrap() >= 2);
    assert!(body["messages"][1]["content"].as_str().unwrap().contains("Document: Paris (city)"));
}

#[test]
fn missing_logprobs_is_unsupported() {
    let server = FakeServer::start(Box::new(|_, _| (200, chat_reply(&["yes"], 1))));
    let backend = HttpBackend::with_api_key(server.config(), None);
    assert_eq!(backend.first_token_logprobs("s", "u", 5), Err(GatewayError::LogprobsUnsupported));
}

#[test]
fn embeddings_are_reordered_by_index() {
    let server = FakeServer::start(Box::new(|_, _| {
        (200, json!({"data": [{"index": 1, "embedding": [0.0, 1.0]}, {"index": 0, "embedding": [1.0, 0.0]}]}))
    }));
    let gateway = Gateway::new(Arc::new(HttpBackend::with_api_key(server.config(), None)), fast());
    let v = gateway.embed(&["a".into(), "b".into()]).unwrap();
    assert_eq!(v, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let seen = server.seen.lock().clone();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["input"], json!(["a", "b"]));
}

#[test]
fn pipeline_links_intro_example_over_http() {
    let server = FakeServer::start(Box::new(|_, req| {
        let user = req.body["messages"][1]["content"].as_str().unwrap_or("").to_string();
        if req.body["logprobs"] == true {
            let relevant = user.contains("Document: Paris (city)");
            (200, if relevant { logprob_reply(-0.1, -2.5) } else { logprob_reply(-2.5, -0.1) })
        } else {
            let idx = user
                .lines()
                .find(|l| l.contains("Paris (city)"))
                .and_then(|l| l.split_once('.'))
                .map(|(i, _)| i.to_string())
                .unwrap();
            let n = req.body["n"].as_u64().unwrap() as usize;
            let text = format!("<think>The Olympics are held in cities.</think>\nanswer: {idx}");
            (200, chat_reply(&vec![text.as_str(); n], 12 * n as u32))
        }
    }));
    let kb = KnowledgeBase::from_entities(
        "intro",
        [
            Entity::new("Q1", "Paris (city)", "Capital city of France"),
            Entity::new("Q2", "Paris (novel)", "1897 novel by Emile Zola"),
            Entity::new("Q3", "France", "Country in Western Europe"),
        ],
    )
    .unwrap();
    let task = MentionTask::new("intro", mark_mention("France hosted the Olympics in Paris.", 30, 35).unwrap());
    let gateway = Gateway::new(Arc::new(HttpBackend::with_api_key(server.config(), None)), fast());
    let indices = Indices::bm25(Bm25Index::build(&kb, Bm25Params::default()).unwrap());
    let cfg = PipelineConfig::default();
    let out = Pipeline::new(&cfg, &kb, &indices, &gateway).link(&task).unwrap();
    assert_eq!(out.decision.result.entity_id(), Some("Q1"));
    assert_eq!(out.trace.topk[0].entity_id, "Q1");
    assert_eq!(out.decision.votes.len(), 10);
    assert_eq!(out.trace.generated_tokens.iter().sum::<u32>(), 120);
}

//! Wire-level tests of the two remote HTTP clients against a local
//! single-threaded test server.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use autoprompt_core::embed::{EmbedBackend, Embedder, EmbedderConfig, RemoteEmbedder};
use autoprompt_core::prompt::RenderedPrompt;
use autoprompt_core::tasklm::{TaskLm, TaskLmBackend, TaskLmConfig};

/// Serves one canned (status, body) response per expected request, then
/// reports the request bodies it saw.
fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 1024];
            let header_end = loop {
                let n = stream.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    break pos + 4;
                }
            };
            let headers = String::from_utf8_lossy(&buf[..header_end]).into_owned();
            let content_length: usize = headers
                .lines()
                .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(str::trim).map(String::from))
                .and_then(|v| v.parse().ok())
                .unwrap_or(0);
            while buf.len() < header_end + content_length {
                let n = stream.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
            }
            tx.send(String::from_utf8_lossy(&buf[header_end..]).into_owned())
                .unwrap();
            let reason = if status == 200 { "OK" } else { "Internal Server Error" };
            write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (endpoint, rx)
}

fn embed_config(endpoint: &str, dimension: usize, retries: u32) -> EmbedderConfig {
    EmbedderConfig {
        backend: EmbedBackend::Remote,
        endpoint: Some(endpoint.to_string()),
        dimension,
        retries,
        ..Default::default()
    }
}

fn prompt(text: &str) -> RenderedPrompt {
    RenderedPrompt {
        text: text.to_string(),
        column_order: vec![],
        fewshot_ids: vec![],
        expected: String::new(),
        test_row_id: None,
    }
}

#[test]
fn remote_embedder_round_trip() {
    let body = r#"{"embeddings":[[3.0,4.0,0.0]]}"#;
    let (endpoint, rx) = serve(vec![(200, body.to_string())]);
    let embedder = RemoteEmbedder::new(&embed_config(&endpoint, 3, 1));
    let v = embedder.embed("hello world").unwrap();
    // protocol shape
    let request: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
    assert_eq!(request, serde_json::json!({"texts": ["hello world"]}));
    // response normalized to unit length
    assert_eq!(v.values.len(), 3);
    assert!((v.values[0] - 0.6).abs() < 1e-12);
    assert!((v.values[1] - 0.8).abs() < 1e-12);
}

#[test]
fn remote_embedder_caches_exact_text() {
    let body = r#"{"embeddings":[[1.0,0.0]]}"#;
    let (endpoint, rx) = serve(vec![(200, body.to_string())]);
    let embedder = RemoteEmbedder::new(&embed_config(&endpoint, 2, 1));
    embedder.embed("same").unwrap();
    embedder.embed("same").unwrap(); // served from cache: one request total
    assert_eq!(rx.try_iter().count(), 1);
}

#[test]
fn remote_embedder_retries_after_server_error() {
    let good = r#"{"embeddings":[[0.0,1.0]]}"#;
    let (endpoint, rx) = serve(vec![
        (500, "{}".to_string()),
        (200, good.to_string()),
    ]);
    let embedder = RemoteEmbedder::new(&embed_config(&endpoint, 2, 3));
    let v = embedder.embed("retry me").unwrap();
    assert_eq!(rx.try_iter().count(), 2);
    assert!((v.values[1] - 1.0).abs() < 1e-12);
}

#[test]
fn remote_embedder_rejects_wrong_dimension() {
    let body = r#"{"embeddings":[[1.0,2.0,3.0]]}"#;
    let (endpoint, _rx) = serve(vec![(200, body.to_string())]);
    let embedder = RemoteEmbedder::new(&embed_config(&endpoint, 2, 1));
    let err = embedder.embed("x").unwrap_err();
    assert!(err.to_string().contains("dimension"), "{err}");
}

#[test]
fn encoder_loads_activations_from_remote_service() {
    use autoprompt_core::policy::EncoderStack;
    let (endpoint, _rx) = serve(vec![
        (200, r#"{"embeddings":[[1.0,0.0]]}"#.to_string()),
        (200, r#"{"embeddings":[[0.0,1.0]]}"#.to_string()),
    ]);
    let embedder = RemoteEmbedder::new(&embed_config(&endpoint, 2, 1));
    let vocab = vec!["alpha".to_string(), "beta".to_string()];
    let encoder = EncoderStack::from_embedder(&embedder, &vocab, 7).unwrap();
    assert_eq!(encoder.dim(), 2);
    // distinct served activations produce distinct encodings
    assert_ne!(encoder.encode(&[0]), encoder.encode(&[1]));
}

#[test]
fn remote_tasklm_takes_first_completion_line() {
    let body = r#"{"completion":"Dallas\nextra reasoning"}"#;
    let (endpoint, rx) = serve(vec![(200, body.to_string())]);
    let lm = TaskLm::remote(TaskLmConfig {
        backend: TaskLmBackend::Remote,
        endpoint: Some(endpoint),
        retries: 1,
        ..Default::default()
    });
    let output = lm.complete(&prompt("What is the value of city?")).unwrap();
    assert_eq!(output, "Dallas");
    let request: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
    assert_eq!(request["prompt"], "What is the value of city?");
}

#[test]
fn remote_tasklm_fails_after_exhausting_retries() {
    let (endpoint, rx) = serve(vec![
        (500, "{}".to_string()),
        (500, "{}".to_string()),
        (500, "{}".to_string()),
    ]);
    let lm = TaskLm::remote(TaskLmConfig {
        backend: TaskLmBackend::Remote,
        endpoint: Some(endpoint),
        retries: 3,
        ..Default::default()
    });
    let err = lm.complete(&prompt("q")).unwrap_err();
    assert!(err.to_string().contains("3"), "{err}");
    assert_eq!(rx.try_iter().count(), 3);
}

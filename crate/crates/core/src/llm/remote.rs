//! Chat-completion client.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GatewayError, GenerationRequest, GenerationResult, TextBackend};

pub const URL_ENV: &str = "CLASSAID_LLM_URL";
pub const KEY_ENV: &str = "CLASSAID_LLM_KEY";

/// Longest `Retry-After` we are willing to sleep through.
const MAX_RETRY_AFTER: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSettings {
    /// Full chat-completion endpoint URL.
    pub url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
}

impl RemoteSettings {
    /// Reads `CLASSAID_LLM_URL` and `CLASSAID_LLM_KEY`.
    pub fn from_env(model: impl Into<String>) -> Option<Self> {
        let url = std::env::var(URL_ENV).ok().filter(|u| !u.is_empty())?;
        Some(Self {
            url,
            api_key: std::env::var(KEY_ENV).ok().filter(|k| !k.is_empty()),
            model: model.into(),
        })
    }
}

pub struct RemoteBackend {
    settings: RemoteSettings,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(settings: RemoteSettings) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self { settings, agent }
    }

    fn body(&self, req: &GenerationRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &req.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": req.prompt}));
        json!({
            "model": self.settings.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }

    fn attempt(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        let mut builder = self
            .agent
            .post(&self.settings.url)
            .config()
            .timeout_global(Some(Duration::from_millis(req.timeout_ms)))
            .build()
            .header("Content-Type", "application/json");
        if let Some(key) = &self.settings.api_key {
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = builder.send_json(self.body(req)).map_err(|e| transport(e, req))?;
        let status = resp.status().as_u16();
        if status == 429 {
            let retry_after_ms = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(|secs| (secs * 1000.0) as u64);
            return Err(GatewayError::RateLimited { retry_after_ms });
        }
        let body = resp.body_mut().read_to_string().map_err(|e| transport(e, req))?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::RemoteError {
                status: Some(status),
                body: excerpt(&body),
            });
        }
        let value: Value = serde_json::from_str(&body).map_err(|e| GatewayError::RemoteError {
            status: Some(status),
            body: format!("unparsable reply ({e}): {}", excerpt(&body)),
        })?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| GatewayError::RemoteError {
                status: Some(status),
                body: format!("reply has no message content: {}", excerpt(&body)),
            })
    }
}

fn transport(e: ureq::Error, req: &GenerationRequest) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::Timeout { after_ms: req.timeout_ms },
        other => GatewayError::RemoteError { status: None, body: other.to_string() },
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(200).collect()
}

impl TextBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.settings.model
    }

    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        req.validate()?;
        let started = Instant::now();
        let text = match self.attempt(req) {
            Err(GatewayError::RateLimited { retry_after_ms }) => {
                let wait = retry_after_ms
                    .map(Duration::from_millis)
                    .unwrap_or(Duration::from_secs(1))
                    .min(MAX_RETRY_AFTER);
                std::thread::sleep(wait);
                self.attempt(req)?
            }
            other => other?,
        };
        Ok(GenerationResult {
            text,
            latency_ms: started.elapsed().as_millis() as u64,
            backend_name: self.settings.model.clone(),
            degraded: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::GenerationParams;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Serves one canned response per connection, in order, recording request bodies.
    fn stub_server(responses: Vec<String>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        std::thread::spawn(move || {
            for response in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0usize;
                let mut headers = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    headers.push_str(&line);
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                seen2
                    .lock()
                    .unwrap()
                    .push(format!("{headers}\n{}", String::from_utf8_lossy(&body)));
                let mut stream = reader.into_inner();
                stream.write_all(response.as_bytes()).unwrap();
                stream.flush().unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), seen)
    }

    fn http(status: &str, extra: &str, body: &str) -> String {
        format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n{extra}\r\n{body}",
            body.len()
        )
    }

    fn backend(url: String) -> RemoteBackend {
        RemoteBackend::new(RemoteSettings {
            url,
            api_key: Some("secret".into()),
            model: "test-model".into(),
        })
    }

    #[test]
    fn rate_limit_then_success_retries_once() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;
        let (url, seen) = stub_server(vec![
            http("429 Too Many Requests", "Retry-After: 0\r\n", "{}"),
            http("200 OK", "", ok),
        ]);
        let req = GenerationRequest::new("prompt text", &GenerationParams::default())
            .with_system("be nice");
        let r = backend(url).complete(&req).unwrap();
        assert_eq!(r.text, "hello");
        assert!(!r.degraded);
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 2);
        let lower = seen[0].to_ascii_lowercase();
        assert!(lower.contains("authorization: bearer secret"));
        let body: Value = serde_json::from_str(seen[0].split("\n\n").last().unwrap()).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "prompt text");
        assert_eq!(body["max_tokens"], 1024);
    }

    #[test]
    fn server_error_surfaces_status_and_body() {
        let (url, _) = stub_server(vec![http("503 Service Unavailable", "", r#"{"error":"down"}"#)]);
        let req = GenerationRequest::new("p", &GenerationParams::default());
        match backend(url).complete(&req) {
            Err(GatewayError::RemoteError { status: Some(503), body }) => assert!(body.contains("down")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreachable_is_a_remote_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let req = GenerationRequest::new("p", &GenerationParams::default());
        let r = backend(format!("http://{addr}/x")).complete(&req);
        assert!(matches!(r, Err(GatewayError::RemoteError { status: None, .. })), "{r:?}");
    }

    #[test]
    fn slow_server_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (_s, _) = listener.accept().unwrap();
            std::thread::sleep(Duration::from_millis(800));
        });
        let mut req = GenerationRequest::new("p", &GenerationParams::default());
        req.timeout_ms = 100;
        let r = backend(format!("http://{addr}/x")).complete(&req);
        assert_eq!(r, Err(GatewayError::Timeout { after_ms: 100 }));
    }
}

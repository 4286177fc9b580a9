//! HTTP driver for the classroom simulator.

use classaid_core::alerts::{Alert, ClassSnapshot};
use classaid_core::domain::{AlertId, FeedbackMode, StudentEvent, StudentId, TimestampMs};
use classaid_core::session::{EventReceipt, ModeReceipt, SessionStats, TickReport};
use classaid_core::sim::{Driver, DriverError};
use serde_json::{json, Value};

/// Talks to a server started with `--manual-clock`; every command first moves
/// the server clock to simulated time.
pub struct HttpDriver {
    base: String,
    session: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpDriver {
    pub fn new(endpoint: &str, session: &str, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self { base: endpoint.trim_end_matches('/').to_owned(), session: session.to_owned(), token, agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/sessions/{}{path}", self.base, self.session)
    }

    fn send(&self, method: &str, url: &str, body: Option<Value>) -> Result<Value, DriverError> {
        let auth = self.token.as_ref().map(|t| format!("Bearer {t}"));
        let result = match (method, body) {
            ("GET", _) => {
                let mut req = self.agent.get(url);
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                req.call()
            }
            (_, body) => {
                let mut req = self.agent.post(url);
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                match body {
                    Some(b) => req.send_json(b),
                    None => req.send_empty(),
                }
            }
        };
        let mut resp = result.map_err(|e| match e {
            ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound | ureq::Error::Timeout(_) => {
                DriverError::Unreachable(format!("{url}: {e}"))
            }
            other => DriverError::Fatal(format!("{url}: {other}")),
        })?;
        let status = resp.status().as_u16();
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| DriverError::Fatal(format!("{url}: unreadable response ({status}): {e}")))?;
        match status {
            200..=299 => Ok(value),
            400..=499 => {
                let code = value["code"].as_str().unwrap_or("rejected").to_owned();
                let message = value["message"].as_str().unwrap_or_default().to_owned();
                if code == "unauthorized" || code == "wall_clock" {
                    Err(DriverError::Fatal(format!("{code}: {message}")))
                } else {
                    Err(DriverError::Rejected { code, message })
                }
            }
            _ => Err(DriverError::Fatal(format!("{url}: status {status}: {value}"))),
        }
    }

    fn typed<T: serde::de::DeserializeOwned>(&self, method: &str, url: &str, body: Option<Value>) -> Result<T, DriverError> {
        let v = self.send(method, url, body)?;
        serde_json::from_value(v).map_err(|e| DriverError::Fatal(format!("{url}: unexpected response: {e}")))
    }
}

impl Driver for HttpDriver {
    fn register(&mut self, id: &StudentId, name: Option<&str>) -> Result<(), DriverError> {
        match self.send("POST", &self.url("/students"), Some(json!({"student_id": id, "name": name}))) {
            Ok(_) => Ok(()),
            Err(DriverError::Rejected { code, .. }) if code == "duplicate_student" => Ok(()),
            Err(e) => Err(e),
        }
    }

    fn set_clock(&mut self, now: TimestampMs) -> Result<(), DriverError> {
        self.send("POST", &self.url("/clock"), Some(json!({"now": now}))).map(|_| ())
    }

    fn submit(&mut self, event: &StudentEvent) -> Result<EventReceipt, DriverError> {
        let body = serde_json::to_value(event).map_err(|e| DriverError::Fatal(e.to_string()))?;
        self.typed("POST", &self.url("/events"), Some(body))
    }

    fn tick(&mut self, now: TimestampMs) -> Result<Vec<TickReport>, DriverError> {
        self.typed("POST", &self.url("/tick"), Some(json!({"now": now})))
    }

    fn set_mode(&mut self, mode: FeedbackMode, students: Option<Vec<StudentId>>) -> Result<ModeReceipt, DriverError> {
        let body = match students {
            None => json!({"scope": "class", "mode": mode}),
            Some(ids) => json!({"scope": "students", "student_ids": ids, "mode": mode}),
        };
        self.typed("POST", &self.url("/mode"), Some(body))
    }

    fn alerts(&mut self) -> Result<Vec<Alert>, DriverError> {
        self.typed("GET", &self.url("/alerts"), None)
    }

    fn mark_handled(&mut self, id: &AlertId) -> Result<Alert, DriverError> {
        let url = format!("{}/alerts/{}/handled", self.base, id.as_str());
        self.typed("POST", &url, None)
    }

    fn snapshot(&mut self) -> Result<ClassSnapshot, DriverError> {
        self.typed("GET", &self.url("/snapshot"), None)
    }

    fn stats(&mut self) -> Result<SessionStats, DriverError> {
        self.typed("GET", &self.url("/stats"), None)
    }
}

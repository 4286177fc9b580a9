//! Text-generation boundary. Everything that talks to a model goes through
//! [`TextBackend`]; the only network client lives in [`remote`].

mod mock;
mod remote;

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{mock_complete, MockBackend};
pub use remote::{RemoteBackend, RemoteSettings, KEY_ENV, URL_ENV};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Honored by the mock only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub timeout_ms: u64,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, params: &GenerationParams) -> Self {
        Self {
            system: None,
            prompt: prompt.into(),
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            seed: params.seed,
            timeout_ms: params.timeout_ms,
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest("temperature must be within [0, 2]".into()));
        }
        Ok(())
    }
}

/// Request defaults, exposed in the service config under `[llm]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub timeout_ms: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_tokens: 1024,
            temperature: 0.7,
            seed: Some(7),
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub latency_ms: u64,
    pub backend_name: String,
    /// Set only when the mock stood in after the primary backend failed.
    pub degraded: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("generation timed out after {after_ms} ms")]
    Timeout { after_ms: u64 },
    #[error("remote error (status {status:?}): {body}")]
    RemoteError { status: Option<u16>, body: String },
    #[error("rate limited")]
    RateLimited { retry_after_ms: Option<u64> },
}

pub trait TextBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError>;
}

impl<T: TextBackend + ?Sized> TextBackend for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        (**self).complete(req)
    }
}

/// Counting semaphore bounding concurrent generations class-wide.
struct InFlightCap {
    max: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlightCap);

impl InFlightCap {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("cap lock poisoned");
        while *used >= self.max {
            used = self.freed.wait(used).expect("cap lock poisoned");
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().expect("cap lock poisoned");
        *used -= 1;
        self.0.freed.notify_one();
    }
}

/// Primary backend plus single retry, then mock degradation.
pub struct Gateway {
    primary: Arc<dyn TextBackend>,
    fallback: MockBackend,
    primary_is_mock: bool,
    cap: InFlightCap,
    retry_backoff: Duration,
}

impl Gateway {
    pub fn new(primary: Arc<dyn TextBackend>, fallback_seed: u64, max_in_flight: usize) -> Self {
        Self {
            primary,
            fallback: MockBackend::new(fallback_seed),
            primary_is_mock: false,
            cap: InFlightCap::new(max_in_flight),
            retry_backoff: Duration::from_millis(250),
        }
    }

    pub fn mock(seed: u64) -> Self {
        Self {
            primary: Arc::new(MockBackend::new(seed)),
            fallback: MockBackend::new(seed),
            primary_is_mock: true,
            cap: InFlightCap::new(8),
            retry_backoff: Duration::ZERO,
        }
    }

    pub fn with_retry_backoff(mut self, backoff: Duration) -> Self {
        self.retry_backoff = backoff;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.cap = InFlightCap::new(max);
        self
    }
}

impl TextBackend for Gateway {
    fn name(&self) -> &str {
        self.primary.name()
    }

    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        req.validate()?;
        let _permit = self.cap.acquire();
        let first = self.primary.complete(req);
        let err = match first {
            Ok(r) => return Ok(r),
            Err(e) => e,
        };
        if self.primary_is_mock {
            return Err(err);
        }
        log::warn!("generation failed on {}: {err}; retrying once", self.primary.name());
        std::thread::sleep(self.retry_backoff);
        match self.primary.complete(req) {
            Ok(r) => Ok(r),
            Err(err) => {
                log::warn!("generation failed again: {err}; degrading to mock");
                let started = Instant::now();
                let mut r = self.fallback.complete(req)?;
                r.degraded = true;
                r.latency_ms = started.elapsed().as_millis() as u64;
                Ok(r)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        failures: usize,
        calls: AtomicUsize,
    }

    impl TextBackend for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }

        fn complete(&self, _req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(GatewayError::RemoteError { status: Some(500), body: "boom".into() })
            } else {
                Ok(GenerationResult {
                    text: "ok".into(),
                    latency_ms: 0,
                    backend_name: "flaky".into(),
                    degraded: false,
                })
            }
        }
    }

    fn req() -> GenerationRequest {
        GenerationRequest::new("hello", &GenerationParams::default())
    }

    #[test]
    fn one_failure_is_retried() {
        let flaky = Arc::new(Flaky { failures: 1, calls: AtomicUsize::new(0) });
        let gw = Gateway::new(flaky.clone(), 1, 2).with_retry_backoff(Duration::ZERO);
        let r = gw.complete(&req()).unwrap();
        assert_eq!(r.text, "ok");
        assert!(!r.degraded);
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn two_failures_degrade_to_mock() {
        let flaky = Arc::new(Flaky { failures: 10, calls: AtomicUsize::new(0) });
        let gw = Gateway::new(flaky.clone(), 1, 2).with_retry_backoff(Duration::ZERO);
        let r = gw.complete(&req()).unwrap();
        assert!(r.degraded);
        assert_eq!(r.backend_name, "mock");
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let gw = Gateway::mock(1);
        let mut r = req();
        r.prompt = "  ".into();
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
        let mut r = req();
        r.temperature = 2.5;
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn in_flight_cap_bounds_concurrency() {
        struct Slow {
            now: AtomicUsize,
            peak: AtomicUsize,
        }
        impl TextBackend for Slow {
            fn name(&self) -> &str {
                "slow"
            }
            fn complete(&self, _: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(15));
                self.now.fetch_sub(1, Ordering::SeqCst);
                Ok(GenerationResult {
                    text: "x".into(),
                    latency_ms: 15,
                    backend_name: "slow".into(),
                    degraded: false,
                })
            }
        }
        let slow = Arc::new(Slow { now: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let gw = Arc::new(Gateway::new(slow.clone(), 1, 3));
        let handles: Vec<_> = (0..12)
            .map(|_| {
                let gw = gw.clone();
                std::thread::spawn(move || gw.complete(&req()).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(slow.peak.load(Ordering::SeqCst) <= 3);
    }
}

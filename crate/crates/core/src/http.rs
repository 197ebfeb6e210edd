//! Minimal blocking HTTP surface shared by the issue-tracker client and the
//! live LLM backend, plus a fixture transport that replays canned exchanges.

use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<String>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        Self {
            method: Method::Get,
            url: url.into(),
            headers: Vec::new(),
            body: None,
        }
    }

    pub fn post(url: impl Into<String>, body: String) -> Self {
        Self {
            method: Method::Post,
            url: url.into(),
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: Some(body),
        }
    }

    pub fn header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// 429 and 5xx are worth retrying.
    pub fn is_retriable(&self) -> bool {
        self.status == 429 || self.status >= 500
    }
}

#[derive(Debug, thiserror::Error)]
#[error("transport failure for {url}: {message}")]
pub struct TransportError {
    pub url: String,
    pub message: String,
}

pub trait HttpTransport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl HttpTransport for UreqTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let fail = |e: ureq::Error| TransportError {
            url: request.url.clone(),
            message: e.to_string(),
        };
        let result = match request.method {
            Method::Get => {
                let mut req = self.agent.get(&request.url);
                for (k, v) in &request.headers {
                    req = req.header(k, v);
                }
                req.call()
            }
            Method::Post => {
                let mut req = self.agent.post(&request.url);
                for (k, v) in &request.headers {
                    req = req.header(k, v);
                }
                req.send(request.body.clone().unwrap_or_default())
            }
        };
        let mut response = result.map_err(fail)?;
        let status = response.status().as_u16();
        let headers = response
            .headers()
            .iter()
            .filter_map(|(k, v)| v.to_str().ok().map(|v| (k.to_string(), v.to_string())))
            .collect();
        let body = response.body_mut().read_to_string().map_err(fail)?;
        Ok(HttpResponse {
            status,
            headers,
            body,
        })
    }
}

/// One canned exchange in a fixture transcript.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureExchange {
    pub method: Method,
    pub url: String,
    pub response: HttpResponse,
}

/// Serves responses from a recorded list. Each exchange is consumed once, in
/// order, so a transcript can script a 429 followed by a 200 for one URL.
pub struct FixtureTransport {
    exchanges: Mutex<Vec<(FixtureExchange, bool)>>,
    log: Mutex<Vec<HttpRequest>>,
}

impl FixtureTransport {
    pub fn new(exchanges: Vec<FixtureExchange>) -> Self {
        Self {
            exchanges: Mutex::new(exchanges.into_iter().map(|e| (e, false)).collect()),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Loads a JSON array of exchanges.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let exchanges: Vec<FixtureExchange> = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(exchanges))
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.log.lock().expect("fixture log").clone()
    }
}

impl HttpTransport for FixtureTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.log.lock().expect("fixture log").push(request.clone());
        let mut exchanges = self.exchanges.lock().expect("fixture lock");
        let slot = exchanges
            .iter_mut()
            .find(|(e, used)| !used && e.method == request.method && e.url == request.url);
        match slot {
            Some((exchange, used)) => {
                *used = true;
                Ok(exchange.response.clone())
            }
            None => Err(TransportError {
                url: request.url.clone(),
                message: "no fixture exchange left for this request".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

#[derive(Debug)]
pub enum RetryFailure {
    Transport(TransportError),
    /// The last attempt still answered with a retriable status.
    Status(HttpResponse),
}

/// Sends with exponential backoff on transport errors, 429 and 5xx.
///
/// Non-retriable responses (including 4xx other than 429) are returned as-is.
pub fn send_with_retry(
    transport: &dyn HttpTransport,
    request: &HttpRequest,
    policy: RetryPolicy,
) -> Result<HttpResponse, RetryFailure> {
    let attempts = policy.attempts.max(1);
    let mut last = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            thread::sleep(policy.base_delay * 2u32.pow(attempt - 1));
        }
        match transport.send(request) {
            Ok(resp) if resp.is_retriable() => {
                log::warn!("{} answered {}, retrying", request.url, resp.status);
                last = Some(RetryFailure::Status(resp));
            }
            Ok(resp) => return Ok(resp),
            Err(e) => {
                log::warn!("{e}, retrying");
                last = Some(RetryFailure::Transport(e));
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(url: &str, status: u16, body: &str) -> FixtureExchange {
        FixtureExchange {
            method: Method::Get,
            url: url.into(),
            response: HttpResponse {
                status,
                headers: vec![],
                body: body.into(),
            },
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::ZERO,
        }
    }

    #[test]
    fn retries_rate_limit_then_succeeds() {
        let t = FixtureTransport::new(vec![ex("u", 429, ""), ex("u", 200, "ok")]);
        let resp = send_with_retry(&t, &HttpRequest::get("u"), fast()).unwrap();
        assert_eq!(resp.body, "ok");
        assert_eq!(t.requests().len(), 2);
    }

    #[test]
    fn gives_up_after_three() {
        let t = FixtureTransport::new(vec![ex("u", 503, ""), ex("u", 502, ""), ex("u", 500, "")]);
        match send_with_retry(&t, &HttpRequest::get("u"), fast()) {
            Err(RetryFailure::Status(r)) => assert_eq!(r.status, 500),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn client_error_not_retried() {
        let t = FixtureTransport::new(vec![ex("u", 404, "nope"), ex("u", 200, "ok")]);
        let resp = send_with_retry(&t, &HttpRequest::get("u"), fast()).unwrap();
        assert_eq!(resp.status, 404);
        assert_eq!(t.requests().len(), 1);
    }
}

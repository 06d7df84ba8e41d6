//! Blocking JSON-over-HTTP plumbing shared by the remote scorer and the
//! remote language model.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RemoteError {
    /// Network failure or a retryable status after exhausting all attempts.
    #[error("{url}: transport failure after {attempts} attempt(s): {message}")]
    Transport {
        url: String,
        attempts: u32,
        message: String,
    },
    /// The service answered, but not according to the protocol.
    #[error("{url}: protocol error: {message}")]
    Protocol { url: String, message: String },
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub timeout: Duration,
    pub retry_backoff: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            max_attempts: 3,
            timeout: Duration::from_secs(60),
            retry_backoff: Duration::from_millis(200),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub(crate) struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub(crate) fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    base_url: String,
    config: ClientConfig,
    gate: Semaphore,
}

impl JsonClient {
    pub(crate) fn new(base_url: &str, config: ClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            gate: Semaphore::new(config.max_in_flight),
            config,
        }
    }

    pub(crate) fn base_url(&self) -> &str {
        &self.base_url
    }

    /// POSTs `body` to `base_url + path`. Connection failures and 5xx answers
    /// are retried; any other non-200 status is a protocol error.
    pub(crate) fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, RemoteError> {
        let url = format!("{}{}", self.base_url, path);
        let _permit = self.gate.acquire();
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.config.retry_backoff * (attempt - 1));
            }
            let mut response = match self.agent.post(&url).send_json(body) {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    log::debug!("{url}: attempt {attempt} failed: {last}");
                    continue;
                }
            };
            let status = response.status().as_u16();
            if status >= 500 {
                last = format!("HTTP {status}");
                continue;
            }
            if status != 200 {
                let detail = response.body_mut().read_to_string().unwrap_or_default();
                return Err(RemoteError::Protocol {
                    url,
                    message: format!("HTTP {status}: {}", detail.trim()),
                });
            }
            return response.body_mut().read_json::<R>().map_err(|e| RemoteError::Protocol {
                url: url.clone(),
                message: format!("invalid response body: {e}"),
            });
        }
        Err(RemoteError::Transport {
            url,
            attempts,
            message: last,
        })
    }
}

//! HTTP client for a remote log-probability server.
//!
//! Wire protocol: POST {endpoint}/v1/logprobs with a JSON body
//! `{"context": string, "prefix": [string...], "query": string,
//! "candidates": [string...]}`; the server answers
//! `{"logprobs": [number...]}` with natural-log probabilities aligned to the
//! candidate order, every value ≤ 0. Non-200 statuses and network failures
//! are retried up to the configured budget; malformed bodies fail fast.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::types::{validate_logprobs, ContextExample, CoreError, LogProbVector, Vocabulary};

use super::{ExpertProvider, ProviderError};

#[derive(Debug, Clone)]
pub struct RemoteExpertConfig {
    /// Base URL; the client appends /v1/logprobs.
    pub endpoint: String,
    pub timeout: Duration,
    /// Additional attempts after the first (total attempts = retries + 1).
    pub retries: u32,
    /// Upper bound on concurrent outstanding requests.
    pub max_in_flight: usize,
    /// Declares the server non-deterministic, which disables the cache.
    pub stochastic: bool,
}

impl Default for RemoteExpertConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080".into(),
            timeout: Duration::from_secs(10),
            retries: 3,
            max_in_flight: 4,
            stochastic: false,
        }
    }
}

/// Counters for the run log and tests; all updates are behind one mutex.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RemoteStats {
    pub requests: u64,
    pub retries: u64,
    pub cache_hits: u64,
    pub max_in_flight_seen: usize,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    context: String,
    prefix: Vec<&'a str>,
    query: &'a str,
    candidates: Vec<&'a str>,
}

#[derive(Deserialize)]
struct WireResponse {
    logprobs: Vec<f64>,
}

pub struct RemoteExpert {
    cfg: RemoteExpertConfig,
    vocab: Vocabulary,
    url: String,
    client: reqwest::blocking::Client,
    /// Response cache keyed on the exact request bytes; never consulted when
    /// the server declares itself stochastic.
    cache: Mutex<HashMap<Vec<u8>, LogProbVector>>,
    in_flight: Mutex<usize>,
    gate: Condvar,
    stats: Mutex<RemoteStats>,
}

impl RemoteExpert {
    pub fn new(cfg: RemoteExpertConfig, vocab: Vocabulary) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| ProviderError::Transport { attempts: 0, detail: e.to_string() })?;
        let url = format!("{}/v1/logprobs", cfg.endpoint.trim_end_matches('/'));
        Ok(Self {
            cfg,
            vocab,
            url,
            client,
            cache: Mutex::new(HashMap::new()),
            in_flight: Mutex::new(0),
            gate: Condvar::new(),
            stats: Mutex::new(RemoteStats::default()),
        })
    }

    pub fn stats(&self) -> RemoteStats {
        self.stats.lock().unwrap().clone()
    }

    /// Concatenates group payloads in order, one per line; a labeled example
    /// carries its label surface after a tab.
    fn context_string(&self, examples: &[ContextExample]) -> Result<String, ProviderError> {
        let mut lines = Vec::with_capacity(examples.len());
        for ex in examples {
            match ex.label {
                Some(id) => {
                    let surface = self.vocab.surface(id).map_err(ProviderError::Invalid)?;
                    lines.push(format!("{}\t{}", ex.payload, surface));
                }
                None => lines.push(ex.payload.clone()),
            }
        }
        Ok(lines.join("\n"))
    }

    fn request_bytes(
        &self,
        prefix: &[usize],
        query_x: &str,
        examples: &[ContextExample],
    ) -> Result<Vec<u8>, ProviderError> {
        let prefix_surfaces: Vec<&str> = prefix
            .iter()
            .map(|&id| self.vocab.surface(id))
            .collect::<Result<_, CoreError>>()
            .map_err(ProviderError::Invalid)?;
        let req = WireRequest {
            context: self.context_string(examples)?,
            prefix: prefix_surfaces,
            query: query_x,
            candidates: self.vocab.candidates().iter().map(String::as_str).collect(),
        };
        serde_json::to_vec(&req)
            .map_err(|e| ProviderError::Protocol(format!("request serialization: {e}")))
    }

    fn call(
        &self,
        prefix: &[usize],
        query_x: &str,
        examples: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError> {
        let body = self.request_bytes(prefix, query_x, examples)?;
        let cacheable = !self.cfg.stochastic;
        if cacheable {
            if let Some(hit) = self.cache.lock().unwrap().get(&body) {
                self.stats.lock().unwrap().cache_hits += 1;
                return Ok(hit.clone());
            }
        }

        let _slot = self.acquire_slot();
        let result = self.send_with_retries(&body);

        if let Ok(ref lp) = result {
            if cacheable {
                self.cache.lock().unwrap().insert(body, lp.clone());
            }
        }
        result
    }

    fn acquire_slot(&self) -> SlotGuard<'_> {
        let mut count = self.in_flight.lock().unwrap();
        while *count >= self.cfg.max_in_flight {
            count = self.gate.wait(count).unwrap();
        }
        *count += 1;
        let mut stats = self.stats.lock().unwrap();
        stats.max_in_flight_seen = stats.max_in_flight_seen.max(*count);
        drop(stats);
        drop(count);
        SlotGuard { owner: self }
    }

    fn send_with_retries(&self, body: &[u8]) -> Result<LogProbVector, ProviderError> {
        let attempts = self.cfg.retries + 1;
        let mut last_detail = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                self.stats.lock().unwrap().retries += 1;
            }
            self.stats.lock().unwrap().requests += 1;
            let sent = self
                .client
                .post(&self.url)
                .header("content-type", "application/json")
                .body(body.to_vec())
                .send();
            match sent {
                Ok(resp) if resp.status().as_u16() == 200 => {
                    let bytes = resp
                        .bytes()
                        .map_err(|e| ProviderError::Protocol(format!("body read: {e}")))?;
                    return self.parse_response(&bytes);
                }
                Ok(resp) => {
                    last_detail = format!("HTTP status {}", resp.status().as_u16());
                }
                Err(e) => {
                    last_detail = e.to_string();
                }
            }
        }
        Err(ProviderError::Transport { attempts, detail: last_detail })
    }

    fn parse_response(&self, bytes: &[u8]) -> Result<LogProbVector, ProviderError> {
        let parsed: WireResponse = serde_json::from_slice(bytes)
            .map_err(|e| ProviderError::Protocol(format!("malformed response body: {e}")))?;
        let k = self.vocab.size();
        let lp = validate_logprobs(&parsed.logprobs, k).map_err(|e| match e {
            CoreError::WrongArity { expected, got } => ProviderError::Arity { expected, got },
            CoreError::NonFinite(i) => {
                ProviderError::Protocol(format!("non-finite log-probability at index {i}"))
            }
            other => ProviderError::Invalid(other),
        })?;
        if lp.exceeded_tolerance() {
            return Err(ProviderError::Protocol(
                "log-probabilities above zero beyond tolerance".into(),
            ));
        }
        Ok(lp)
    }
}

struct SlotGuard<'a> {
    owner: &'a RemoteExpert,
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.owner.in_flight.lock().unwrap();
        *count -= 1;
        drop(count);
        self.owner.gate.notify_one();
    }
}

impl ExpertProvider for RemoteExpert {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn query(
        &self,
        prefix: &[usize],
        query_x: &str,
        group: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError> {
        self.call(prefix, query_x, group)
    }

    fn full_context(
        &self,
        prefix: &[usize],
        query_x: &str,
        examples: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError> {
        self.call(prefix, query_x, examples)
    }

    fn stochastic(&self) -> bool {
        self.cfg.stochastic
    }
}

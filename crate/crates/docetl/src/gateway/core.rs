use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use crate::model::Value;

use super::backend::{
    parse_structured, Backend, CompletionRequest, CompletionResponse, GatewayError,
    Message,
};
use super::cache::LruCache;
use super::validate::ValidationStatement;

pub const DEFAULT_CACHE_CAPACITY: usize = 10_000;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 16;

/// Counters accumulated across all gateway traffic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayStats {
    pub backend_calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub retries: u64,
}

/// Result of a validated completion. `valid` is false only when every
/// retry was exhausted with at least one failing statement.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedResponse {
    pub response: CompletionResponse,
    pub valid: bool,
    pub backend_calls: u32,
    pub failed: Vec<String>,
}

struct InFlight {
    result: Mutex<Option<Result<CompletionResponse, GatewayError>>>,
    done: Condvar,
}

/// Thread-safe front door to the completion/embedding backend: LRU cache
/// with optional on-disk persistence, single-flight coalescing of
/// identical concurrent requests, and validated retries.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    cache: Mutex<LruCache<CompletionResponse>>,
    in_flight: Mutex<HashMap<String, Arc<InFlight>>>,
    cache_dir: Option<PathBuf>,
    pub max_in_flight: usize,
    backend_calls: AtomicU64,
    input_tokens: AtomicU64,
    output_tokens: AtomicU64,
    retries: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            cache: Mutex::new(LruCache::new(DEFAULT_CACHE_CAPACITY)),
            in_flight: Mutex::new(HashMap::new()),
            cache_dir: None,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            backend_calls: AtomicU64::new(0),
            input_tokens: AtomicU64::new(0),
            output_tokens: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        }
    }

    /// Persists cache entries under `dir` so later runs reuse them.
    pub fn with_cache_dir(mut self, dir: PathBuf) -> std::io::Result<Self> {
        std::fs::create_dir_all(&dir)?;
        self.cache_dir = Some(dir);
        Ok(self)
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            input_tokens: self.input_tokens.load(Ordering::SeqCst),
            output_tokens: self.output_tokens.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
        }
    }

    /// Completes a request. Cache hits cost zero backend calls; concurrent
    /// identical requests coalesce to a single backend invocation.
    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let key = req.cache_key();

        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        if let Some(hit) = self.disk_get(&key) {
            self.cache.lock().unwrap().insert(key, hit.clone());
            return Ok(hit);
        }

        // Single-flight: the first caller computes, later callers wait.
        let (flight, leader) = {
            let mut map = self.in_flight.lock().unwrap();
            match map.get(&key) {
                Some(existing) => (existing.clone(), false),
                None => {
                    let flight = Arc::new(InFlight {
                        result: Mutex::new(None),
                        done: Condvar::new(),
                    });
                    map.insert(key.clone(), flight.clone());
                    (flight, true)
                }
            }
        };

        if !leader {
            let mut slot = flight.result.lock().unwrap();
            while slot.is_none() {
                slot = flight.done.wait(slot).unwrap();
            }
            return slot.clone().unwrap();
        }

        let result = self.call_backend(req);
        if let Ok(resp) = &result {
            self.cache.lock().unwrap().insert(key.clone(), resp.clone());
            self.disk_put(&key, resp);
        }
        {
            let mut slot = flight.result.lock().unwrap();
            *slot = Some(result.clone());
            flight.done.notify_all();
        }
        self.in_flight.lock().unwrap().remove(&key);
        result
    }

    fn call_backend(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let raw = self.backend.complete(req)?;
        self.input_tokens.fetch_add(raw.input_tokens, Ordering::SeqCst);
        self.output_tokens.fetch_add(raw.output_tokens, Ordering::SeqCst);
        let attributes = parse_structured(&raw.text)?;
        let (ok, violations) = req.output_schema.conforms(&attributes);
        if !ok {
            return Err(GatewayError::Schema(violations));
        }
        Ok(CompletionResponse {
            attributes,
            raw: raw.text,
            token_usage: (raw.input_tokens, raw.output_tokens),
        })
    }

    /// Completes with validated retries. On a failing statement a retry is
    /// issued carrying the previous reply plus validator feedback naming
    /// the failed statements. After `max_retries` failures the last
    /// response is returned flagged invalid.
    pub fn execute_with_validation(
        &self,
        req: &CompletionRequest,
        validations: &[ValidationStatement],
        max_retries: u32,
    ) -> Result<ValidatedResponse, GatewayError> {
        let mut current = req.clone();
        let mut calls = 0u32;
        loop {
            let response = self.complete(&current)?;
            calls += 1;
            let bindings = BTreeMap::from([(
                "output".to_string(),
                Value::Object(response.attributes.attributes.clone()),
            )]);
            let failed: Vec<String> = validations
                .iter()
                .filter(|v| !v.evaluate(&bindings))
                .map(|v| v.expression.clone())
                .collect();
            if failed.is_empty() {
                return Ok(ValidatedResponse {
                    response,
                    valid: true,
                    backend_calls: calls,
                    failed,
                });
            }
            if calls > max_retries {
                return Ok(ValidatedResponse {
                    response,
                    valid: false,
                    backend_calls: calls,
                    failed,
                });
            }
            self.retries.fetch_add(1, Ordering::SeqCst);
            current.messages.push(Message::assistant(response.raw.clone()));
            current.messages.push(Message::validator_feedback(format!(
                "The previous output failed these validation checks: {}. \
                 Please correct the output so every check passes.",
                failed.join("; ")
            )));
        }
    }

    /// Embeds texts; every returned vector has unit L2 norm.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyEmbed);
        }
        self.backend.embed(texts)
    }

    /// Runs `work` over `items` on up to `max_in_flight` threads, returning
    /// results in input order regardless of completion timing.
    pub fn run_concurrently<T, R, F>(&self, items: Vec<T>, work: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync,
    {
        let n = items.len();
        if n == 0 {
            return Vec::new();
        }
        let width = self.max_in_flight.min(n);
        if width <= 1 {
            return items.into_iter().map(work).collect();
        }
        let queue = Mutex::new(items.into_iter().enumerate().collect::<Vec<_>>());
        let results: Mutex<Vec<Option<R>>> =
            Mutex::new((0..n).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..width {
                scope.spawn(|| loop {
                    let next = queue.lock().unwrap().pop();
                    match next {
                        Some((idx, item)) => {
                            let out = work(item);
                            results.lock().unwrap()[idx] = Some(out);
                        }
                        None => break,
                    }
                });
            }
        });
        results
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }

    fn disk_path(&self, key: &str) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn disk_get(&self, key: &str) -> Option<CompletionResponse> {
        let path = self.disk_path(key)?;
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn disk_put(&self, key: &str, resp: &CompletionResponse) {
        if let Some(path) = self.disk_path(key) {
            if let Ok(text) = serde_json::to_string(resp) {
                let _ = std::fs::write(path, text);
            }
        }
    }
}

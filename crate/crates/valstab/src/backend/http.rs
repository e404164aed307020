//! Blocking HTTP client for chat/completions endpoints.
//!
//! One adapter per API dialect: the classic completions schema (flat prompt,
//! per-token `top_logprobs`) and the chat schema (message list, per-position
//! `top_logprobs`). Rate limits and transient transport failures are retried
//! with exponential backoff; a process-wide limiter bounds in-flight
//! requests against the endpoint.

use super::{ApiDialect, Backend, BackendConfig, BackendError, QueryMeta, TokenDistribution};
use crate::prompting::{ChatRole, RenderedPrompt};
use serde_json::{json, Value as Json};
use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// How many top tokens to request; comfortably above the answer-letter
/// count, so a missing letter really means negligible mass (treated as -inf).
const TOP_K: u32 = 20;

struct Limiter {
    in_flight: Mutex<usize>,
    released: Condvar,
    max: usize,
}

impl Limiter {
    fn new(max: usize) -> Limiter {
        Limiter {
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            max: max.max(1),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.released.wait(n).unwrap();
        }
        *n += 1;
        drop(n);
        let out = f();
        *self.in_flight.lock().unwrap() -= 1;
        self.released.notify_one();
        out
    }
}

pub struct HttpBackend {
    cfg: BackendConfig,
    client: reqwest::blocking::Client,
    limiter: Limiter,
    audit: Option<Mutex<std::fs::File>>,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<HttpBackend, BackendError> {
        cfg.validate().map_err(BackendError::Transport)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.request_timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let audit = match &cfg.audit_log {
            Some(path) => {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| BackendError::Transport(e.to_string()))?;
                Some(Mutex::new(file))
            }
            None => None,
        };
        let limiter = Limiter::new(cfg.max_in_flight);
        Ok(HttpBackend {
            cfg,
            client,
            limiter,
            audit,
        })
    }

    fn api_key(&self) -> Option<String> {
        self.cfg
            .api_key_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
    }

    fn audit_line(&self, kind: &str, request: &Json, status: u16, response: &str) {
        if let Some(file) = &self.audit {
            let mut excerpt = response.to_string();
            excerpt.truncate(2000);
            let line = json!({
                "endpoint": self.cfg.endpoint,
                "kind": kind,
                "request": request,
                "status": status,
                "response": excerpt,
            });
            if let Ok(mut f) = file.lock() {
                let _ = writeln!(f, "{line}");
            }
        }
    }

    /// Sends one request with the configured retry policy and returns the
    /// parsed JSON body.
    fn send(&self, kind: &str, body: Json) -> Result<Json, BackendError> {
        let mut last_err = BackendError::Transport("no attempts made".into());
        for attempt in 0..self.cfg.retry.max_attempts {
            if attempt > 0 {
                let backoff = self.cfg.retry.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let result = self.limiter.run(|| {
                let mut req = self
                    .client
                    .post(&self.cfg.endpoint)
                    .header("Content-Type", "application/json");
                if let Some(key) = self.api_key() {
                    req = req.header("Authorization", format!("Bearer {key}"));
                }
                req.json(&body).send()
            });
            match result {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    self.audit_line(kind, &body, status.as_u16(), &text);
                    if status.is_success() {
                        return serde_json::from_str(&text).map_err(|e| {
                            BackendError::MalformedResponse(format!("invalid JSON: {e}"))
                        });
                    }
                    if status.as_u16() == 429 {
                        last_err = BackendError::RateLimited;
                        continue; // retry
                    }
                    if status.is_server_error() {
                        last_err =
                            BackendError::Transport(format!("server error {status}: {text}"));
                        continue; // retry
                    }
                    return Err(BackendError::Transport(format!(
                        "endpoint returned {status}: {text}"
                    )));
                }
                Err(e) => {
                    last_err = BackendError::Transport(e.to_string());
                }
            }
        }
        Err(last_err)
    }

    fn request_body(&self, prompt: &RenderedPrompt, for_distribution: bool) -> Json {
        let s = &self.cfg.sampling;
        let mut body = match self.cfg.dialect {
            ApiDialect::Completions => {
                let mut b = json!({
                    "model": self.cfg.model_id,
                    "prompt": prompt.text,
                    "temperature": s.temperature,
                    "top_p": s.top_p,
                    "max_tokens": if for_distribution { 1 } else { s.max_tokens },
                });
                if !prompt.stop.is_empty() && !for_distribution {
                    b["stop"] = json!(prompt.stop);
                }
                b
            }
            ApiDialect::Chat => {
                let messages: Vec<Json> = prompt
                    .messages
                    .iter()
                    .map(|m| {
                        json!({
                            "role": match m.role {
                                ChatRole::System => "system",
                                ChatRole::User => "user",
                                ChatRole::Assistant => "assistant",
                            },
                            "content": m.content,
                        })
                    })
                    .collect();
                json!({
                    "model": self.cfg.model_id,
                    "messages": messages,
                    "temperature": s.temperature,
                    "top_p": s.top_p,
                    "max_tokens": if for_distribution { 1 } else { s.max_tokens },
                })
            }
        };
        if for_distribution {
            match self.cfg.dialect {
                ApiDialect::Completions => {
                    body["logprobs"] = json!(TOP_K);
                }
                ApiDialect::Chat => {
                    body["logprobs"] = json!(true);
                    body["top_logprobs"] = json!(TOP_K);
                }
            }
        }
        body
    }
}

impl Backend for HttpBackend {
    fn complete(&self, prompt: &RenderedPrompt, _meta: &QueryMeta) -> Result<String, BackendError> {
        if prompt.text.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let body = self.request_body(prompt, false);
        let response = self.send("complete", body)?;
        let raw = parse_completion_text(self.cfg.dialect, &response)?;
        Ok(trim_at_stop(&raw, &prompt.stop))
    }

    fn next_token_distribution(
        &self,
        prompt: &RenderedPrompt,
        _meta: &QueryMeta,
    ) -> Result<TokenDistribution, BackendError> {
        if prompt.text.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let body = self.request_body(prompt, true);
        let response = self.send("distribution", body)?;
        parse_distribution(self.cfg.dialect, &response)
    }

    fn model_id(&self) -> &str {
        &self.cfg.model_id
    }
}

/// Cuts a generated message at the first stop sequence and trims whitespace.
fn trim_at_stop(raw: &str, stop: &[String]) -> String {
    let cut = stop
        .iter()
        .filter_map(|s| raw.find(s.as_str()))
        .min()
        .unwrap_or(raw.len());
    raw[..cut].trim().to_string()
}

fn parse_completion_text(dialect: ApiDialect, response: &Json) -> Result<String, BackendError> {
    let choice = response
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::MalformedResponse("no choices".into()))?;
    let text = match dialect {
        ApiDialect::Completions => choice.get("text").and_then(Json::as_str),
        ApiDialect::Chat => choice
            .get("message")
            .and_then(|m| m.get("content"))
            .and_then(Json::as_str),
    };
    text.map(str::to_string)
        .ok_or_else(|| BackendError::MalformedResponse("missing generated text".into()))
}

fn parse_distribution(
    dialect: ApiDialect,
    response: &Json,
) -> Result<TokenDistribution, BackendError> {
    let choice = response
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::MalformedResponse("no choices".into()))?;
    let logprobs = choice
        .get("logprobs")
        .filter(|v| !v.is_null())
        .ok_or(BackendError::UnsupportedByEndpoint)?;
    let mut entries: BTreeMap<String, f64> = BTreeMap::new();
    match dialect {
        ApiDialect::Completions => {
            let top = logprobs
                .get("top_logprobs")
                .and_then(|t| t.get(0))
                .and_then(Json::as_object)
                .ok_or(BackendError::UnsupportedByEndpoint)?;
            for (token, lp) in top {
                if let Some(lp) = lp.as_f64() {
                    // Guard against server-side rounding above 0.
                    entries.insert(token.clone(), lp.min(0.0));
                }
            }
        }
        ApiDialect::Chat => {
            let top = logprobs
                .get("content")
                .and_then(|c| c.get(0))
                .and_then(|p| p.get("top_logprobs"))
                .and_then(Json::as_array)
                .ok_or(BackendError::UnsupportedByEndpoint)?;
            for entry in top {
                let token = entry.get("token").and_then(Json::as_str);
                let lp = entry.get("logprob").and_then(Json::as_f64);
                if let (Some(token), Some(lp)) = (token, lp) {
                    entries.insert(token.to_string(), lp.min(0.0));
                }
            }
        }
    }
    TokenDistribution::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completions_text_and_logprobs_parse() {
        let response = json!({
            "choices": [{
                "text": " Why did the wizard cross the road?\nUSER: tell me",
                "logprobs": {"top_logprobs": [{"A": -0.1, " B": -2.3}]},
            }]
        });
        let text = parse_completion_text(ApiDialect::Completions, &response).unwrap();
        assert!(text.starts_with(" Why did the wizard"));
        let dist = parse_distribution(ApiDialect::Completions, &response).unwrap();
        assert_eq!(dist.letter_log_prob('A'), Some(-0.1));
        assert_eq!(dist.letter_log_prob('B'), Some(-2.3));
    }

    #[test]
    fn chat_dialect_parses_nested_top_logprobs() {
        let response = json!({
            "choices": [{
                "message": {"role": "assistant", "content": "Sure."},
                "logprobs": {"content": [{
                    "token": "A",
                    "logprob": -0.05,
                    "top_logprobs": [
                        {"token": "A", "logprob": -0.05},
                        {"token": "B", "logprob": -3.2}
                    ],
                }]},
            }]
        });
        assert_eq!(
            parse_completion_text(ApiDialect::Chat, &response).unwrap(),
            "Sure."
        );
        let dist = parse_distribution(ApiDialect::Chat, &response).unwrap();
        assert_eq!(dist.letter_log_prob('A'), Some(-0.05));
    }

    #[test]
    fn missing_logprobs_signal_unsupported() {
        let response = json!({"choices": [{"text": "hi", "logprobs": null}]});
        assert!(matches!(
            parse_distribution(ApiDialect::Completions, &response),
            Err(BackendError::UnsupportedByEndpoint)
        ));
    }

    #[test]
    fn generation_is_trimmed_at_the_turn_boundary() {
        let stop = vec!["\nUSER:".to_string(), "\nGandalf:".to_string()];
        assert_eq!(
            trim_at_stop(" A short reply.\nUSER: next question", &stop),
            "A short reply."
        );
        assert_eq!(trim_at_stop("clean", &stop), "clean");
    }

    #[test]
    fn limiter_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let limiter = Arc::new(Limiter::new(2));
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let limiter = limiter.clone();
                let current = current.clone();
                let peak = peak.clone();
                std::thread::spawn(move || {
                    limiter.run(|| {
                        let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                        peak.fetch_max(now, Ordering::SeqCst);
                        std::thread::sleep(Duration::from_millis(10));
                        current.fetch_sub(1, Ordering::SeqCst);
                    })
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}

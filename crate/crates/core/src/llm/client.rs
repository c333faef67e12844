//! Chat-completion clients: the HTTP endpoint and bounded parallel dispatch.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::config::LlmSettings;
use crate::error::LlmError;

/// Anything that turns a prompt into completion text.
pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Box<M> {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatMessage<'a> {
    pub role: &'a str,
    pub content: &'a str,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: Vec<ChatMessage<'a>>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ChatResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl RetryPolicy {
    /// Exponential delay before attempt `attempt + 1`, with up to 50% jitter.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let base = self
            .initial_backoff
            .saturating_mul(1u32 << attempt.min(16))
            .min(self.max_backoff);
        let jitter = rand::rng().random_range(0.5..=1.0);
        base.mul_f64(jitter)
    }
}

/// OpenAI-style `POST {base_url}/chat/completions` client.
pub struct HttpChatModel {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    token: Option<String>,
    temperature: f64,
    max_tokens: u32,
    retry: RetryPolicy,
}

impl HttpChatModel {
    /// Reads the bearer token from the environment variable named in the
    /// settings; a missing variable means unauthenticated requests.
    pub fn from_settings(settings: &LlmSettings) -> Result<Self, LlmError> {
        let token = std::env::var(&settings.token_env).ok();
        if token.is_none() {
            warn!(var = %settings.token_env, "no API token in environment; sending unauthenticated requests");
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(HttpChatModel {
            client,
            url: format!("{}/chat/completions", settings.base_url.trim_end_matches('/')),
            model: settings.model.clone(),
            token,
            temperature: settings.temperature,
            max_tokens: settings.max_tokens,
            retry: RetryPolicy {
                max_attempts: settings.max_attempts,
                initial_backoff: Duration::from_millis(settings.initial_backoff_ms),
                max_backoff: Duration::from_secs(30),
            },
        })
    }

    pub fn request_body<'a>(&'a self, prompt: &'a str) -> ChatRequest<'a> {
        ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    fn attempt(&self, prompt: &str) -> Result<String, LlmError> {
        let mut req = self.client.post(&self.url).json(&self.request_body(prompt));
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: ChatResponse =
            serde_json::from_str(&body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse("no choices in response".into()))
    }
}

impl LanguageModel for HttpChatModel {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let mut attempt = 0;
        loop {
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && attempt + 1 < self.retry.max_attempts => {
                    let wait = self.retry.backoff(attempt);
                    warn!(attempt, ?wait, error = %e, "retrying chat completion");
                    thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// One logged request/response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request_id: String,
    pub stage: String,
    pub index: usize,
    pub prompt: String,
    pub response: Result<String, String>,
}

/// Collects exchanges for a run; ids are `{run_id}/{stage}/{index}`.
#[derive(Debug, Default)]
pub struct ExchangeLog {
    run_id: String,
    entries: Mutex<Vec<Exchange>>,
}

impl ExchangeLog {
    pub fn new(run_id: impl Into<String>) -> Self {
        ExchangeLog {
            run_id: run_id.into(),
            entries: Mutex::default(),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    fn record(&self, stage: &str, index: usize, prompt: &str, response: &Result<String, LlmError>) {
        let request_id = format!("{}/{stage}/{index}", self.run_id);
        debug!(%request_id, ok = response.is_ok(), "llm exchange");
        self.entries.lock().unwrap().push(Exchange {
            request_id,
            stage: stage.to_owned(),
            index,
            prompt: prompt.to_owned(),
            response: response.clone().map_err(|e| e.to_string()),
        });
    }

    /// Drains the log, ordered by stage name then request index.
    pub fn take(&self) -> Vec<Exchange> {
        let mut v = std::mem::take(&mut *self.entries.lock().unwrap());
        v.sort_by(|a, b| a.stage.cmp(&b.stage).then(a.index.cmp(&b.index)));
        v
    }
}

/// Sends every prompt with at most `max_in_flight` outstanding requests.
/// Results come back in input order.
pub fn complete_all<M: LanguageModel + ?Sized>(
    model: &M,
    prompts: &[String],
    max_in_flight: usize,
    log: Option<(&ExchangeLog, &str)>,
) -> Vec<Result<String, LlmError>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<String, LlmError>>>> =
        prompts.iter().map(|_| Mutex::new(None)).collect();
    let workers = max_in_flight.max(1).min(prompts.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= prompts.len() {
                    break;
                }
                let result = model.complete(&prompts[i]);
                if let Some((log, stage)) = log {
                    log.record(stage, i, &prompts[i], &result);
                }
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

//! Chat-completion client for remote fairness scoring.
//!
//! Speaks the common chat-completion wire format: a JSON POST with `model`,
//! `messages` and `temperature`, answered by `choices[0].message.content`.
//! Transport failures (connect errors, timeouts, non-2xx statuses) are
//! retried up to `max_retries` extra attempts; a response that arrives but
//! cannot be interpreted is an [`InvalidReason`] outcome with no retry.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::market::{EnvConfig, EpisodeLedger};

use super::{
    parse_scores, serialize_prompt, CriticConfig, CriticError, CriticVerdict, EpisodeCritic,
    InvalidReason,
};

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

enum Attempt {
    /// Assistant text extracted; scoring proceeds with no further requests.
    Content(String),
    /// Response arrived but was not a chat completion.
    BadBody,
    /// Transport-level failure; eligible for retry.
    Transport(reqwest::Error),
}

/// Blocking client scoring one episode per call.
pub struct LlmCritic {
    cfg: CriticConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl LlmCritic {
    /// Build the client, resolving the API key from the configured
    /// environment variable. An empty variable name means no auth header.
    pub fn new(cfg: CriticConfig) -> Result<Self, CriticError> {
        cfg.validate()?;
        let api_key = if cfg.api_key_env_var.is_empty() {
            None
        } else {
            match std::env::var(&cfg.api_key_env_var) {
                Ok(key) => Some(key),
                Err(_) => return Err(CriticError::MissingApiKey(cfg.api_key_env_var.clone())),
            }
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout_secs))
            .build()?;
        Ok(Self { cfg, api_key, client })
    }

    /// Score an arbitrary prompt. Exactly one request is made on success;
    /// only transport failures consume retries.
    pub fn score_prompt(&self, prompt: &str, n_buyers: usize) -> CriticVerdict {
        let request = ChatRequest {
            model: &self.cfg.model_name,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature: self.cfg.temperature,
        };
        let mut last_transport: Option<reqwest::Error> = None;
        for _attempt in 0..=self.cfg.max_retries {
            match self.attempt(&request) {
                Attempt::Content(text) => return parse_scores(&text, n_buyers),
                Attempt::BadBody => {
                    return CriticVerdict::Invalid(InvalidReason::MalformedJson)
                }
                Attempt::Transport(err) => last_transport = Some(err),
            }
        }
        let err = last_transport.expect("loop ran at least once");
        if err.is_timeout() {
            CriticVerdict::Invalid(InvalidReason::Timeout)
        } else {
            CriticVerdict::Invalid(InvalidReason::Transport {
                detail: err.to_string(),
            })
        }
    }

    fn attempt(&self, request: &ChatRequest<'_>) -> Attempt {
        let mut builder = self.client.post(&self.cfg.endpoint_url).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Transport(e),
        };
        let response = match response.error_for_status() {
            Ok(r) => r,
            Err(e) => return Attempt::Transport(e),
        };
        let body = match response.text() {
            Ok(b) => b,
            Err(e) => return Attempt::Transport(e),
        };
        match serde_json::from_str::<ChatResponse>(&body) {
            Ok(chat) => match chat.choices.into_iter().next().and_then(|c| c.message.content) {
                Some(content) => Attempt::Content(content),
                None => Attempt::BadBody,
            },
            Err(_) => Attempt::BadBody,
        }
    }
}

impl EpisodeCritic for LlmCritic {
    fn score(&self, ledger: &EpisodeLedger, env: &EnvConfig) -> CriticVerdict {
        let prompt = serialize_prompt(ledger, env);
        self.score_prompt(&prompt, ledger.n_buyers())
    }
}

/// One-shot convenience wrapper: build a client, score one ledger.
pub fn score_llm(
    ledger: &EpisodeLedger,
    critic_cfg: &CriticConfig,
    env_cfg: &EnvConfig,
) -> Result<CriticVerdict, CriticError> {
    let critic = LlmCritic::new(critic_cfg.clone())?;
    Ok(critic.score(ledger, env_cfg))
}

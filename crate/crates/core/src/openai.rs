//! Blocking clients for OpenAI-compatible `/chat/completions` and
//! `/embeddings` endpoints.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use crate::provider::{
    AttemptError, ChatMessage, ChatRequest, Completion, Embedder, Generator, ProviderError, RetryPolicy,
};
use crate::vector_index::EmbeddingVector;

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

fn http_client() -> Client {
    Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .expect("http client builds")
}

fn classify(status: StatusCode, body: String, provider: &str) -> AttemptError {
    if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
        AttemptError::Transient(format!("status {status}: {body}"))
    } else {
        AttemptError::Fatal(ProviderError::Rejected {
            provider: provider.to_string(),
            status: Some(status.as_u16()),
            message: body,
        })
    }
}

fn post_json<B: Serialize, R: for<'de> Deserialize<'de>>(
    client: &Client,
    url: &str,
    api_key: Option<&str>,
    body: &B,
    provider: &str,
) -> Result<R, AttemptError> {
    let mut req = client.post(url).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| AttemptError::Transient(e.to_string()))?;
    let status = resp.status();
    if !status.is_success() {
        let text = resp.text().unwrap_or_default();
        return Err(classify(status, text, provider));
    }
    let text = resp.text().map_err(|e| AttemptError::Transient(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| {
        AttemptError::Fatal(ProviderError::Malformed {
            provider: provider.to_string(),
            message: e.to_string(),
        })
    })
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    created: i64,
    #[serde(default)]
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct OpenAiChat {
    base_url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: Client,
}

impl OpenAiChat {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, retry: RetryPolicy) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            retry,
            client: http_client(),
        }
    }
}

impl Generator for OpenAiChat {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = ChatBody {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            top_p: request.top_p,
        };
        let resp: ChatResponse = self.retry.run(&self.model, |_| {
            post_json(&self.client, &url, self.api_key.as_deref(), &body, &self.model)
        })?;
        let text = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyCompletion(self.model.clone()));
        }
        Ok(Completion {
            text,
            created: resp.created,
        })
    }
}

#[derive(Serialize)]
struct EmbeddingsBody<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

pub struct OpenAiEmbeddings {
    base_url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: Client,
}

impl OpenAiEmbeddings {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, retry: RetryPolicy) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            retry,
            client: http_client(),
        }
    }
}

impl Embedder for OpenAiEmbeddings {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let url = format!("{}/embeddings", self.base_url);
        let body = EmbeddingsBody {
            model: &self.model,
            input: texts,
        };
        let resp: EmbeddingsResponse = self.retry.run(&self.model, |_| {
            post_json(&self.client, &url, self.api_key.as_deref(), &body, &self.model)
        })?;
        let malformed = |message: String| ProviderError::Malformed {
            provider: self.model.clone(),
            message,
        };
        if resp.data.len() != texts.len() {
            return Err(malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                resp.data.len()
            )));
        }
        let mut data = resp.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        data.into_iter()
            .map(|d| EmbeddingVector::normalized(d.embedding).map_err(|e| malformed(e.to_string())))
            .collect()
    }
}

//! Live providers over HTTP.

use std::io::Cursor;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use reqwest::blocking::{Client, Response};
use serde_json::{json, Value};

use super::{Embedder, EmbeddingMatrix, LlmProvider, LlmRequest, ResponseFormat, VlmProvider, VlmRequest};
use crate::dataset::Frame;
use crate::error::{Error, ProviderError, Result};

fn png_data_url(frame: &Frame) -> std::result::Result<String, ProviderError> {
    let mut buf = Cursor::new(Vec::new());
    frame
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| ProviderError::Transport(format!("png encode: {e}")))?;
    Ok(format!("data:image/png;base64,{}", B64.encode(buf.into_inner())))
}

fn check_status(resp: Response) -> std::result::Result<Response, ProviderError> {
    let status = resp.status();
    if status.as_u16() == 429 {
        let retry_after_ms = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|s| s.parse::<f64>().ok())
            .map_or(1000, |s| (s * 1000.0) as u64);
        return Err(ProviderError::RateLimited { retry_after_ms });
    }
    if !status.is_success() {
        let body = resp.text().unwrap_or_default();
        return Err(ProviderError::Transport(format!("http {status}: {body}")));
    }
    Ok(resp)
}

/// Chat-completions style endpoint (`POST {endpoint}` with a `messages` array).
#[derive(Debug, Clone)]
pub struct OpenAiCompatible {
    endpoint: String,
    model_id: String,
    api_key: Option<String>,
    client: Client,
}

impl OpenAiCompatible {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>, api_key: Option<String>) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(OpenAiCompatible {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            api_key,
            client,
        })
    }

    fn post(&self, content: Value, format: ResponseFormat, temperature: f64, seed: Option<u64>) -> std::result::Result<String, ProviderError> {
        let mut body = json!({
            "model": self.model_id,
            "messages": [{"role": "user", "content": content}],
            "temperature": temperature,
        });
        if format == ResponseFormat::Json {
            body["response_format"] = json!({"type": "json_object"});
        }
        if let Some(seed) = seed {
            body["seed"] = json!(seed);
        }
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let value: Value = check_status(resp)?
            .json()
            .map_err(|e| ProviderError::Transport(format!("response body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Transport(format!("no message content in {value}")))
    }
}

impl LlmProvider for OpenAiCompatible {
    fn send(&self, req: &LlmRequest) -> std::result::Result<String, ProviderError> {
        self.post(json!(req.prompt), req.response_format, req.temperature, req.seed)
    }
}

impl VlmProvider for OpenAiCompatible {
    fn send(&self, req: &VlmRequest) -> std::result::Result<String, ProviderError> {
        if !req.videos.is_empty() {
            return Err(ProviderError::Transport(
                "this provider does not accept video payloads; configure frames mode".into(),
            ));
        }
        let mut parts = vec![json!({"type": "text", "text": req.prompt})];
        for frame in &req.images {
            parts.push(json!({"type": "image_url", "image_url": {"url": png_data_url(frame)?}}));
        }
        self.post(Value::Array(parts), req.response_format, req.temperature, req.seed)
    }
}

/// Embedding endpoint returning VDEM bytes.
///
/// Requests are `POST {url}/texts` with `{"texts": [...]}` and
/// `POST {url}/images` with `{"images": [<base64 png>, ...]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    url: String,
    client: Client,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>) -> Result<Self> {
        Ok(HttpEmbedder {
            url: url.into().trim_end_matches('/').to_string(),
            client: Client::builder()
                .timeout(Duration::from_secs(600))
                .build()
                .map_err(|e| Error::Config(format!("http client: {e}")))?,
        })
    }

    fn fetch(&self, route: &str, body: Value, expected_rows: usize) -> Result<EmbeddingMatrix> {
        let resp = self
            .client
            .post(format!("{}/{route}", self.url))
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let bytes = check_status(resp)?
            .bytes()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let m = EmbeddingMatrix::from_vdem_bytes(&bytes)?;
        if m.rows() != expected_rows {
            return Err(Error::Vdem(format!("expected {expected_rows} rows, got {}", m.rows())));
        }
        Ok(m)
    }
}

impl Embedder for HttpEmbedder {
    fn embed_images(&self, frames: &[Frame]) -> Result<EmbeddingMatrix> {
        if frames.is_empty() {
            return Err(Error::Precondition("no frames to embed".into()));
        }
        let images = frames
            .iter()
            .map(|f| png_data_url(f).map(|u| u.trim_start_matches("data:image/png;base64,").to_string()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        self.fetch("images", json!({ "images": images }), frames.len())
    }

    fn embed_texts(&self, texts: &[String]) -> Result<EmbeddingMatrix> {
        if texts.is_empty() {
            return Err(Error::Precondition("no texts to embed".into()));
        }
        self.fetch("texts", json!({ "texts": texts }), texts.len())
    }
}

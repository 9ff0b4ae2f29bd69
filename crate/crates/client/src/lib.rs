//! Async HTTP client for the edit service.

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use url::Url;

use lpm_core::wire::{
    DecodeRequest, DecodeResponse, EditRequest, EditResponse, EncodeRequest, EncodeResponse, ErrorBody,
    GenerateRequest, GenerateResponse, HealthResponse, ModelsResponse,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The server answered with a non-success status.
    #[error("server returned {status}: {message}")]
    Status { status: StatusCode, message: String },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("invalid base url: {0}")]
    Url(#[from] url::ParseError),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug)]
pub struct Client {
    base: Url,
    http: reqwest::Client,
}

impl Client {
    /// `base` like `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Result<Self> {
        Ok(Client {
            base: Url::parse(base)?,
            http: reqwest::Client::new(),
        })
    }

    pub fn base(&self) -> &Url {
        &self.base
    }

    async fn read<R: DeserializeOwned>(resp: reqwest::Response) -> Result<R> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
        Err(ClientError::Status { status, message })
    }

    async fn get<R: DeserializeOwned>(&self, path: &str) -> Result<R> {
        Self::read(self.http.get(self.base.join(path)?).send().await?).await
    }

    async fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        Self::read(self.http.post(self.base.join(path)?).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<HealthResponse> {
        self.get("/health").await
    }

    pub async fn models(&self) -> Result<ModelsResponse> {
        self.get("/models").await
    }

    pub async fn encode(&self, req: &EncodeRequest) -> Result<EncodeResponse> {
        self.post("/encode", req).await
    }

    pub async fn decode(&self, req: &DecodeRequest) -> Result<DecodeResponse> {
        self.post("/decode", req).await
    }

    /// Decodes a cached session.
    pub async fn decode_id(&self, model_id: &str) -> Result<DecodeResponse> {
        self.decode(&DecodeRequest {
            model_id: Some(model_id.to_string()),
            global_feature: None,
        })
        .await
    }

    pub async fn edit(&self, req: &EditRequest) -> Result<EditResponse> {
        self.post("/edit", req).await
    }

    pub async fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse> {
        self.post("/generate", req).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_base() {
        assert!(matches!(Client::new("not a url"), Err(ClientError::Url(_))));
        assert_eq!(Client::new("http://127.0.0.1:9").unwrap().base().port(), Some(9));
    }
}

use serde::{Deserialize, Serialize};

use super::{l2_normalize, EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::exec::Execution;
use crate::http::{HttpRequest, Transport};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for an embedding server.
///
/// The server receives `{"texts": [...]}` by POST and answers with
/// `{"vectors": [[...], ...]}`, one vector of length `dim` per text.
/// Returned vectors are L2-normalized here; empty texts never leave the
/// process and map to the zero vector.
pub struct RemoteEmbedder<T> {
    url: String,
    dim: usize,
    transport: T,
    batch_size: usize,
    max_in_flight: usize,
}

impl<T: Transport> RemoteEmbedder<T> {
    pub fn new(url: impl Into<String>, dim: usize, transport: T) -> Self {
        Self { url: url.into(), dim, transport, batch_size: 32, max_in_flight: 4 }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn with_max_in_flight(mut self, max_in_flight: usize) -> Self {
        self.max_in_flight = max_in_flight.max(1);
        self
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = serde_json::to_vec(&EmbedRequest { texts }).map_err(|e| EmbedError::Protocol(e.to_string()))?;
        let request = HttpRequest::post(&self.url, body)
            .header("Content-Type", "application/json")
            .header("Accept", "application/json");
        let response = self.transport.execute(&request)?;
        let parsed: EmbedResponse =
            serde_json::from_str(&response.body).map_err(|e| EmbedError::Protocol(format!("bad response body: {e}")))?;
        if parsed.vectors.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                parsed.vectors.len()
            )));
        }
        parsed
            .vectors
            .into_iter()
            .map(|values| {
                if values.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch { expected: self.dim, found: values.len() });
                }
                Ok(l2_normalize(&EmbeddingVector::new(values)?))
            })
            .collect()
    }
}

impl<T: Transport> EmbeddingProvider for RemoteEmbedder<T> {
    fn name(&self) -> &str {
        "remote"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Ok(EmbeddingVector::zeros(self.dim));
        }
        Ok(self.request(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str], exec: Execution) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let pending: Vec<&str> = texts.iter().copied().filter(|t| !t.trim().is_empty()).collect();
        let chunks: Vec<&[&str]> = pending.chunks(self.batch_size).collect();
        let mut fetched = Vec::with_capacity(pending.len());
        for chunk in exec.map_bounded(&chunks, self.max_in_flight, |chunk| self.request(chunk)) {
            fetched.extend(chunk?);
        }
        let mut fetched = fetched.into_iter();
        texts
            .iter()
            .map(|t| {
                if t.trim().is_empty() {
                    Ok(EmbeddingVector::zeros(self.dim))
                } else {
                    fetched.next().ok_or_else(|| EmbedError::Protocol("missing vector".into()))
                }
            })
            .collect()
    }
}

//! Client for a remote embedding service.
//!
//! `POST {endpoint}/v1/embed` with body `{"clips": [[f32; 32000], ...]}`. A 200
//! response carries either JSON `{"embeddings": [[f32; 512], ...]}` or, when the
//! client asked for it via `Accept: application/octet-stream`, a binary body:
//! `u32 rows`, `u32 dim` (little-endian) followed by `rows * dim` little-endian
//! f32 values. Any other status is [`EmbedError::ProviderUnavailable`].

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingProvider, Result};

pub const EMBED_PATH: &str = "/v1/embed";
const OCTET: &str = "application/octet-stream";
const JSON: &str = "application/json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    pub endpoint: String,
    pub batch_size: usize,
    pub timeout: Duration,
    /// Ask for the binary response variant.
    pub binary: bool,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8501".into(),
            batch_size: 32,
            timeout: Duration::from_millis(30_000),
            binary: false,
        }
    }
}

impl HttpConfig {
    /// Defaults overridden by `EMBED_ENDPOINT`, `EMBED_BATCH` and `EMBED_TIMEOUT_MS`.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var("EMBED_ENDPOINT") {
            cfg.endpoint = v;
        }
        if let Some(v) = std::env::var("EMBED_BATCH").ok().and_then(|v| v.parse().ok()) {
            cfg.batch_size = v;
        }
        if let Some(v) = std::env::var("EMBED_TIMEOUT_MS").ok().and_then(|v| v.parse().ok()) {
            cfg.timeout = Duration::from_millis(v);
        }
        cfg
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    clips: &'a [&'a [f32]],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

pub struct HttpEmbeddingProvider {
    url: String,
    binary: bool,
    agent: ureq::Agent,
}

impl HttpEmbeddingProvider {
    pub fn new(cfg: &HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: format!("{}{EMBED_PATH}", cfg.endpoint.trim_end_matches('/')),
            binary: cfg.binary,
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

/// Parses the length-prefixed binary response body.
pub fn decode_binary(body: &[u8]) -> Result<Vec<Vec<f32>>> {
    let bad = |m: &str| EmbedError::ProviderUnavailable(format!("malformed binary response: {m}"));
    if body.len() < 8 {
        return Err(bad("missing length prefix"));
    }
    let rows = u32::from_le_bytes(body[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(body[4..8].try_into().unwrap()) as usize;
    let payload = &body[8..];
    if payload.len() != rows * dim * 4 {
        return Err(bad("payload length does not match prefix"));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(if dim == 0 {
        vec![Vec::new(); rows]
    } else {
        values.chunks_exact(dim).map(<[f32]>::to_vec).collect()
    })
}

/// Encodes vectors in the binary response layout.
pub fn encode_binary(vectors: &[Vec<f32>]) -> Vec<u8> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(8 + vectors.len() * dim * 4);
    out.extend_from_slice(&(vectors.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in vectors {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed(&self, clips: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let body = serde_json::to_vec(&EmbedRequest { clips })
            .map_err(|e| EmbedError::ProviderUnavailable(format!("encoding request: {e}")))?;
        let accept = if self.binary {
            "application/octet-stream, application/json;q=0.5"
        } else {
            JSON
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", JSON)
            .header("Accept", accept)
            .send(&body[..])
            .map_err(|e| EmbedError::ProviderUnavailable(format!("{}: {e}", self.url)))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(EmbedError::ProviderUnavailable(format!("{} answered HTTP {status}", self.url)));
        }
        let is_binary = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with(OCTET));
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(|e| EmbedError::ProviderUnavailable(format!("reading response: {e}")))?;
        if is_binary {
            decode_binary(&bytes)
        } else {
            serde_json::from_slice::<EmbedResponse>(&bytes)
                .map(|r| r.embeddings)
                .map_err(|e| EmbedError::ProviderUnavailable(format!("malformed json response: {e}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_codec_round_trip() {
        let v = vec![vec![1.5f32, -2.0, 0.25], vec![0.0, 3.0, 1e-7]];
        assert_eq!(decode_binary(&encode_binary(&v)).unwrap(), v);
        let mut bytes = encode_binary(&v);
        bytes.pop();
        assert!(decode_binary(&bytes).is_err());
        assert!(decode_binary(&[1, 0, 0]).is_err());
    }

    #[test]
    fn url_joins_path() {
        let p = HttpEmbeddingProvider::new(&HttpConfig {
            endpoint: "http://localhost:9000/".into(),
            ..HttpConfig::default()
        });
        assert_eq!(p.url(), "http://localhost:9000/v1/embed");
    }
}

use std::marker::PhantomData;

use serde_json::json;

use super::{EmbedError, EmbeddingProvider, EmbeddingVector, HashedNgramEncoder};
use crate::corpus::UtterancePair;
use crate::scalar::Scalar;
use crate::transport::{EndpointConfig, HttpClient};

/// Client for an OpenAI-embeddings-compatible service.
#[derive(Debug)]
pub struct RemoteEmbeddingProvider<T> {
    d: usize,
    model: String,
    client: HttpClient,
    _scalar: PhantomData<fn() -> T>,
}

impl<T: Scalar> RemoteEmbeddingProvider<T> {
    pub fn new(d: usize, model: String, endpoint: EndpointConfig) -> Result<Self, EmbedError> {
        if d < 2 {
            return Err(EmbedError::Config(format!("dimension {d} < 2")));
        }
        Ok(Self {
            d,
            model,
            client: HttpClient::new(endpoint)?,
            _scalar: PhantomData,
        })
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector<T>, EmbedError> {
        let body = json!({ "model": self.model, "input": [text] });
        let (resp, _) = self.client.post_json("embeddings", &body)?;
        let values = resp
            .pointer("/data/0/embedding")
            .and_then(|v| v.as_array())
            .ok_or_else(|| EmbedError::Contract("response lacks data[0].embedding".into()))?;
        let values: Vec<T> = values
            .iter()
            .map(|v| v.as_f64().map(T::of))
            .collect::<Option<_>>()
            .ok_or_else(|| EmbedError::Contract("non-numeric embedding component".into()))?;
        if values.len() != self.d {
            return Err(EmbedError::Contract(format!(
                "expected dimension {}, service returned {}",
                self.d,
                values.len()
            )));
        }
        EmbeddingVector::new(values)
    }
}

impl<T: Scalar> EmbeddingProvider<T> for RemoteEmbeddingProvider<T> {
    fn dim(&self) -> usize {
        self.d
    }

    fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let desc = format!(
            "remote/v1/d={}/model={}/url={}",
            self.d,
            self.model,
            self.client.config().base_url
        );
        hex::encode(Sha256::digest(desc.as_bytes()))
    }

    fn embed_pair(&self, pair: &UtterancePair) -> Result<EmbeddingVector<T>, EmbedError> {
        self.embed_text(&HashedNgramEncoder::<T>::pair_text(
            &pair.instruction,
            &pair.readback,
        ))
    }
}

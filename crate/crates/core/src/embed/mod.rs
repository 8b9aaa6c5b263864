//! Pair embeddings behind a provider interface, and the reference feature bank.

mod bank;
mod hashed;
mod remote;

use serde::{Deserialize, Serialize};

use crate::corpus::UtterancePair;
use crate::scalar::{squared_norm, Scalar};
use crate::transport::{EndpointConfig, TransportError};

pub use bank::{build_feature_bank, BankEntry, FeatureBank, BANK_FORMAT_VERSION, BANK_MAGIC};
pub use hashed::{HashedNgramEncoder, PAIR_SEPARATOR};
pub use remote::RemoteEmbeddingProvider;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("provider contract violated: {0}")]
    Contract(String),
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("pair {id:?}: {source}")]
    Pair {
        id: String,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("feature bank: {0}")]
    Bank(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense pair representation with a fixed dimension and nonzero norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Contract("non-finite embedding component".into()));
        }
        if squared_norm(&values) <= T::zero() {
            return Err(EmbedError::Contract("zero-norm embedding".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn norm(&self) -> T {
        squared_norm(&self.values).sqrt()
    }
}

pub trait EmbeddingProvider<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    /// Identifies the provider and its configuration; stored in banks and models.
    fn fingerprint(&self) -> String;

    fn embed_pair(&self, pair: &UtterancePair) -> Result<EmbeddingVector<T>, EmbedError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingProviderConfig {
    HashedNgram {
        d: usize,
        ngram_range: (usize, usize),
        seed: u64,
    },
    Remote {
        d: usize,
        model: String,
        endpoint: EndpointConfig,
    },
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        EmbeddingProviderConfig::HashedNgram {
            d: 768,
            ngram_range: (1, 3),
            seed: 42,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProviderConfig::HashedNgram { d, .. } | EmbeddingProviderConfig::Remote { d, .. } => *d,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim() < 2 {
            return Err(EmbedError::Config(format!("dimension {} < 2", self.dim())));
        }
        if let EmbeddingProviderConfig::HashedNgram { ngram_range: (lo, hi), .. } = self {
            if *lo < 1 || lo > hi {
                return Err(EmbedError::Config(format!("bad ngram range ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    pub fn build<T: Scalar>(&self) -> Result<Box<dyn EmbeddingProvider<T>>, EmbedError> {
        self.validate()?;
        Ok(match self {
            EmbeddingProviderConfig::HashedNgram { d, ngram_range, seed } => {
                Box::new(HashedNgramEncoder::new(*d, *ngram_range, *seed)?)
            }
            EmbeddingProviderConfig::Remote { d, model, endpoint } => {
                Box::new(RemoteEmbeddingProvider::new(*d, model.clone(), endpoint.clone())?)
            }
        })
    }
}

pub fn embed_pair<T: Scalar>(
    provider: &dyn EmbeddingProvider<T>,
    pair: &UtterancePair,
) -> Result<EmbeddingVector<T>, EmbedError> {
    let v = provider.embed_pair(pair)?;
    if v.dim() != provider.dim() {
        return Err(EmbedError::Contract(format!(
            "provider declared d={} but returned {}",
            provider.dim(),
            v.dim()
        )));
    }
    Ok(v)
}

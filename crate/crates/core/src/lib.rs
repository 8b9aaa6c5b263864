//! Open-set readback monitoring for air traffic control.
//!
//! The pipeline embeds each instruction/readback pair, scores it with a plug-in
//! open-set classifier, retrieves an anchored and diverse support set, asks an
//! LLM for a structured verdict and, for anomalous readbacks, emits a
//! deterministic corrected readback.

pub mod atcot;
pub mod corpus;
pub mod correction;
pub mod dear;
pub mod embed;
pub mod eval;
pub mod llm;
pub mod pipeline;
pub mod poc;
pub mod scalar;
pub mod transport;
pub mod util;

pub use scalar::Scalar;

pub type Embedding = embed::EmbeddingVector<f32>;
pub type FeatureBank32 = embed::FeatureBank<f32>;
pub type FeatureBank64 = embed::FeatureBank<f64>;
pub type PocHead32 = poc::PocHead<f32>;
pub type PocModel32 = poc::PocModel<f32>;
pub type PocModel64 = poc::PocModel<f64>;
pub type PluginPrediction32 = poc::PluginPrediction<f32>;

//! Plug-in open-set classifier: a per-class sigmoid head trained with
//! cross-entropy plus outlier exposure, and KNN distance rejection with a
//! Youden-calibrated threshold.

mod head;
mod knn;

use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::corpus::OpenLabel;
use crate::embed::{EmbedError, FeatureBank};
use crate::scalar::Scalar;

pub use head::{
    bce_loss, loss_and_gradient, oe_loss, one_hot, train_head, HeadGradient, LossTerms, PocHead,
    TrainConfig, TrainOutcome, PROB_CLAMP,
};
pub use knn::{
    calibrate_tau, cosine_distance, cosine_sim, knn_score, knn_score_leave_one_out,
    leave_one_out_scores, threshold_grid, youden_j, GRID_EPSILON,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PocError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("kappa {kappa} outside 1..={available}")]
    Kappa { kappa: usize, available: usize },
    #[error("label {0} cannot be used for the known-class head")]
    Label(OpenLabel),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: bce={bce}, oe={oe}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        bce: f64,
        oe: f64,
    },
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("model is not calibrated")]
    Uncalibrated,
    #[error("model file: {0}")]
    File(String),
    #[error(transparent)]
    Bank(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Plug-in decision for one feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PluginPrediction<T> {
    pub label: OpenLabel,
    pub knn_score: T,
    pub probabilities: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PocModel<T> {
    pub head: PocHead<T>,
    pub bank: FeatureBank<T>,
    pub kappa: usize,
    pub tau: Option<T>,
    pub train_config: TrainConfig,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_lowest<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> PocModel<T> {
    pub fn new(head: PocHead<T>, bank: FeatureBank<T>, kappa: usize, train_config: TrainConfig) -> Result<Self, PocError> {
        if kappa == 0 || kappa > bank.len() {
            return Err(PocError::Kappa {
                kappa,
                available: bank.len(),
            });
        }
        if head.dim() != bank.dim() {
            return Err(PocError::Shape(format!(
                "head dimension {} vs bank dimension {}",
                head.dim(),
                bank.dim()
            )));
        }
        Ok(Self {
            head,
            bank,
            kappa,
            tau: None,
            train_config,
        })
    }

    /// Calibrates the threshold from leave-one-out bank scores and the given unknown features.
    pub fn calibrate(&mut self, unknown: &[&[T]]) -> Result<CalibrationSummary, PocError> {
        if self.kappa >= self.bank.len() {
            return Err(PocError::Kappa {
                kappa: self.kappa,
                available: self.bank.len().saturating_sub(1),
            });
        }
        let known = leave_one_out_scores(&self.bank, self.kappa)?;
        let unknown = unknown
            .iter()
            .map(|h| knn_score(h, &self.bank, self.kappa))
            .collect::<Result<Vec<_>, _>>()?;
        let tau = calibrate_tau(&known, &unknown)?;
        self.tau = Some(tau);
        let mean = |xs: &[T]| xs.iter().map(|x| x.as_f64()).sum::<f64>() / xs.len() as f64;
        Ok(CalibrationSummary {
            tau: tau.as_f64(),
            youden_j: youden_j(&known, &unknown, tau),
            known_mean: mean(&known),
            unknown_mean: mean(&unknown),
            known_count: known.len(),
            unknown_count: unknown.len(),
        })
    }

    pub fn predict(&self, h: &[T]) -> Result<PluginPrediction<T>, PocError> {
        let tau = self.tau.ok_or(PocError::Uncalibrated)?;
        let score = knn_score(h, &self.bank, self.kappa)?;
        let probabilities = self.head.forward(h)?;
        let label = if score > tau {
            OpenLabel::Unknown
        } else {
            OpenLabel::KNOWN[argmax_lowest(&probabilities)]
        };
        Ok(PluginPrediction {
            label,
            knn_score: score,
            probabilities,
        })
    }

    pub fn predict_open(&self, h: &[T]) -> Result<OpenLabel, PocError> {
        self.predict(h).map(|p| p.label)
    }

    /// Writes the JSON envelope to `path` and the bank next to it as `bank_file`.
    pub fn save(&self, path: impl AsRef<Path>, bank_file: &str) -> Result<(), PocError> {
        let path = path.as_ref();
        let bank_path = path.parent().unwrap_or(Path::new(".")).join(bank_file);
        self.bank.save(&bank_path)?;
        let envelope = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            k: OpenLabel::K,
            d: self.head.dim(),
            kappa: self.kappa,
            tau: self.tau.map(Scalar::as_f64),
            train_config: self.train_config.clone(),
            bank_fingerprint: self.bank.fingerprint().to_string(),
            bank_path: bank_file.to_string(),
            w_doc: encode_f32(self.head.weights()),
            b_doc: encode_f32(self.head.biases()),
        };
        let json = serde_json::to_string_pretty(&envelope).map_err(|e| PocError::File(e.to_string()))?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PocError> {
        let path = path.as_ref();
        let envelope: ModelFile =
            serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| PocError::File(e.to_string()))?;
        if envelope.format_version != MODEL_FORMAT_VERSION {
            return Err(PocError::File(format!("unsupported format version {}", envelope.format_version)));
        }
        if envelope.k != OpenLabel::K {
            return Err(PocError::File(format!("model has K={}, expected {}", envelope.k, OpenLabel::K)));
        }
        let bank_path: PathBuf = path.parent().unwrap_or(Path::new(".")).join(&envelope.bank_path);
        let bank = FeatureBank::<T>::load(&bank_path)?;
        if bank.fingerprint() != envelope.bank_fingerprint {
            return Err(PocError::File("bank fingerprint does not match model".into()));
        }
        let head = PocHead::from_parts(envelope.d, decode_f32(&envelope.w_doc)?, decode_f32(&envelope.b_doc)?)?;
        let mut model = Self::new(head, bank, envelope.kappa, envelope.train_config)?;
        model.tau = envelope.tau.map(T::of);
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub tau: f64,
    pub youden_j: f64,
    pub known_mean: f64,
    pub unknown_mean: f64,
    pub known_count: usize,
    pub unknown_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    kappa: usize,
    tau: Option<f64>,
    train_config: TrainConfig,
    bank_fingerprint: String,
    bank_path: String,
    w_doc: String,
    b_doc: String,
}

fn encode_f32<T: Scalar>(values: &[T]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.as_f32().to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f32<T: Scalar>(text: &str) -> Result<Vec<T>, PocError> {
    let bytes = B64.decode(text).map_err(|e| PocError::File(e.to_string()))?;
    if bytes.len() % 4 != 0 {
        return Err(PocError::File("parameter blob length is not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| T::widen_f32(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect())
}

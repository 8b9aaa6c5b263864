use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PocError;
use crate::corpus::OpenLabel;
use crate::embed::FeatureBank;
use crate::scalar::{dot, sigmoid, Scalar};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the losses.
pub const PROB_CLAMP: f64 = 1e-7;

const K: usize = OpenLabel::K;

/// Per-class sigmoid head: `K` rows of length `d`, row-major, plus a bias per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PocHead<T> {
    d: usize,
    w: Vec<T>,
    b: Vec<T>,
}

impl<T: Scalar> PocHead<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            w: vec![T::zero(); K * d],
            b: vec![T::zero(); K],
        }
    }

    pub fn from_parts(d: usize, w: Vec<T>, b: Vec<T>) -> Result<Self, PocError> {
        if w.len() != K * d || b.len() != K {
            return Err(PocError::Shape(format!(
                "head parts have {} weights and {} biases for d={d}",
                w.len(),
                b.len()
            )));
        }
        if w.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(PocError::Shape("non-finite head parameter".into()));
        }
        Ok(Self { d, w, b })
    }

    /// Uniform initialization in `[-scale, scale]`.
    pub fn random(d: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut draw = || {
            if scale == 0.0 {
                T::zero()
            } else {
                T::of(rng.gen_range(-scale..=scale))
            }
        };
        let w = (0..K * d).map(|_| draw()).collect();
        let b = (0..K).map(|_| draw()).collect();
        Self { d, w, b }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[T] {
        &self.w
    }

    pub fn biases(&self) -> &[T] {
        &self.b
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.w
    }

    pub fn biases_mut(&mut self) -> &mut [T] {
        &mut self.b
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.w[k * self.d..(k + 1) * self.d]
    }

    pub fn forward(&self, h: &[T]) -> Result<Vec<T>, PocError> {
        if h.len() != self.d {
            return Err(PocError::Shape(format!(
                "feature dimension {} does not match head dimension {}",
                h.len(),
                self.d
            )));
        }
        Ok((0..K).map(|k| sigmoid(dot(self.row(k), h) + self.b[k])).collect())
    }
}

fn clamp<T: Scalar>(p: T) -> T {
    let lo = T::of(PROB_CLAMP);
    let hi = T::one() - lo;
    p.max(lo).min(hi)
}

fn binary_ce<T: Scalar>(p: T, target: T) -> T {
    let p = clamp(p);
    -(target * p.ln() + (T::one() - target) * (T::one() - p).ln())
}

fn check_rows<T>(rows: &[Vec<T>], what: &str) -> Result<(), PocError> {
    if let Some(r) = rows.iter().find(|r| r.len() != K) {
        return Err(PocError::Shape(format!("{what} row has {} columns, expected {K}", r.len())));
    }
    Ok(())
}

/// Mean binary cross-entropy over all `I * K` terms.
pub fn bce_loss<T: Scalar>(p: &[Vec<T>], y: &[Vec<T>]) -> Result<T, PocError> {
    if p.len() != y.len() {
        return Err(PocError::Shape(format!("{} predictions for {} labels", p.len(), y.len())));
    }
    check_rows(p, "probability")?;
    check_rows(y, "label")?;
    if p.is_empty() {
        return Ok(T::zero());
    }
    let total: T = p
        .iter()
        .zip(y)
        .flat_map(|(pr, yr)| pr.iter().zip(yr).map(|(&a, &b)| binary_ce(a, b)))
        .sum();
    Ok(total / T::of((p.len() * K) as f64))
}

/// Outlier-exposure loss: cross-entropy against the constant target `t`, mean over `U * K` terms.
pub fn oe_loss<T: Scalar>(p: &[Vec<T>], t: T) -> Result<T, PocError> {
    if !(T::zero()..=T::one()).contains(&t) {
        return Err(PocError::Config(format!("exposure target {t} outside [0, 1]")));
    }
    check_rows(p, "probability")?;
    if p.is_empty() {
        return Ok(T::zero());
    }
    let total: T = p.iter().flatten().map(|&v| binary_ce(v, t)).sum();
    Ok(total / T::of((p.len() * K) as f64))
}

pub fn one_hot<T: Scalar>(label: OpenLabel) -> Result<Vec<T>, PocError> {
    if !label.is_known() {
        return Err(PocError::Label(label));
    }
    let mut y = vec![T::zero(); K];
    y[label.index()] = T::one();
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub bce: f64,
    pub oe: f64,
    pub total: f64,
}

/// Gradient of `L = BCE + lambda * OE` with respect to the head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
}

/// Loss and analytic gradient on one batch. Clamped probabilities contribute no gradient.
pub fn loss_and_gradient<T: Scalar>(
    head: &PocHead<T>,
    known: &[(&[T], OpenLabel)],
    exposure: &[&[T]],
    lambda: T,
    target: T,
) -> Result<(LossTerms, HeadGradient<T>), PocError> {
    let d = head.dim();
    let mut grad = HeadGradient {
        w: vec![T::zero(); K * d],
        b: vec![T::zero(); K],
    };
    let lo = T::of(PROB_CLAMP);
    let hi = T::one() - lo;
    let mut accumulate = |h: &[T], p: &[T], y: &[T], scale: T| {
        for k in 0..K {
            if p[k] < lo || p[k] > hi {
                continue;
            }
            let g = (p[k] - y[k]) * scale;
            grad.b[k] += g;
            for (gw, &x) in grad.w[k * d..(k + 1) * d].iter_mut().zip(h) {
                *gw += g * x;
            }
        }
    };

    let mut known_p = Vec::with_capacity(known.len());
    let mut known_y = Vec::with_capacity(known.len());
    let known_scale = if known.is_empty() {
        T::zero()
    } else {
        T::one() / T::of((known.len() * K) as f64)
    };
    for (h, label) in known {
        let p = head.forward(h)?;
        let y = one_hot::<T>(*label)?;
        accumulate(h, &p, &y, known_scale);
        known_p.push(p);
        known_y.push(y);
    }

    let mut exposure_p = Vec::with_capacity(exposure.len());
    let exposure_scale = if exposure.is_empty() {
        T::zero()
    } else {
        lambda / T::of((exposure.len() * K) as f64)
    };
    let t_row = vec![target; K];
    for h in exposure {
        let p = head.forward(h)?;
        accumulate(h, &p, &t_row, exposure_scale);
        exposure_p.push(p);
    }

    let bce = bce_loss(&known_p, &known_y)?;
    let oe = oe_loss(&exposure_p, target)?;
    let total = bce + lambda * oe;
    Ok((
        LossTerms {
            bce: bce.as_f64(),
            oe: oe.as_f64(),
            total: total.as_f64(),
        },
        grad,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub exposure_target: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-2,
            lambda: 1.0,
            exposure_target: 0.5,
            seed: 42,
            init_scale: 0.02,
        }
    }
}

impl TrainConfig {
    /// Learning rate used for full-encoder fine-tuning; too small for a head trained alone.
    pub const FULL_MODEL_LEARNING_RATE: f64 = 1e-5;

    pub fn validate(&self) -> Result<(), PocError> {
        let bad = |m: String| Err(PocError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.exposure_target) {
            return bad(format!("exposure target {} outside [0, 1]", self.exposure_target));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda {} must be non-negative", self.lambda));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.init_scale >= 0.0) {
            return bad(format!("init scale {} must be non-negative", self.init_scale));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub head: PocHead<T>,
    /// 1-based epoch of the returned head.
    pub best_epoch: usize,
    /// Full-data loss after each epoch.
    pub history: Vec<LossTerms>,
}

fn full_loss<T: Scalar>(
    head: &PocHead<T>,
    known: &[(&[T], OpenLabel)],
    exposure: &[&[T]],
    lambda: T,
    target: T,
) -> Result<LossTerms, PocError> {
    loss_and_gradient(head, known, exposure, lambda, target).map(|(l, _)| l)
}

/// Mini-batch gradient descent on `BCE + lambda * OE`. Each known batch is
/// paired with the next `batch_size` exposure samples, cycling through the
/// exposure bank. Returns the head with the lowest full-data loss.
pub fn train_head<T: Scalar>(
    known_bank: &FeatureBank<T>,
    exposure_bank: &FeatureBank<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, PocError> {
    cfg.validate()?;
    if known_bank.is_empty() {
        return Err(PocError::Config("empty known bank".into()));
    }
    if cfg.lambda > 0.0 && exposure_bank.is_empty() {
        return Err(PocError::Config("exposure bank is empty but lambda > 0".into()));
    }
    if exposure_bank.dim() != known_bank.dim() {
        return Err(PocError::Shape("known and exposure banks differ in dimension".into()));
    }
    let known: Vec<(&[T], OpenLabel)> = known_bank
        .entries()
        .iter()
        .map(|e| match e.label {
            Some(l) if l.is_known() => Ok((e.vector.as_slice(), l)),
            Some(l) => Err(PocError::Label(l)),
            None => Err(PocError::Config(format!("known entry {:?} has no label", e.id))),
        })
        .collect::<Result<_, _>>()?;
    let exposure: Vec<&[T]> = if cfg.lambda > 0.0 {
        exposure_bank.entries().iter().map(|e| e.vector.as_slice()).collect()
    } else {
        Vec::new()
    };

    let lambda = T::of(cfg.lambda);
    let target = T::of(cfg.exposure_target);
    let lr = T::of(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = PocHead::random(known_bank.dim(), cfg.init_scale, &mut rng);
    let mut order: Vec<usize> = (0..known.len()).collect();
    let mut exposure_cursor = 0;
    let mut best: Option<(f64, usize, PocHead<T>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&[T], OpenLabel)> = chunk.iter().map(|&i| known[i]).collect();
            let exp_batch: Vec<&[T]> = (0..if exposure.is_empty() { 0 } else { cfg.batch_size })
                .map(|j| exposure[(exposure_cursor + j) % exposure.len()])
                .collect();
            if !exposure.is_empty() {
                exposure_cursor = (exposure_cursor + cfg.batch_size) % exposure.len();
            }
            let (terms, grad) = loss_and_gradient(&head, &batch, &exp_batch, lambda, target)?;
            if !terms.total.is_finite() {
                return Err(PocError::NonFinite {
                    epoch,
                    batch: batch_idx,
                    bce: terms.bce,
                    oe: terms.oe,
                });
            }
            for (w, g) in head.w.iter_mut().zip(&grad.w) {
                *w -= lr * *g;
            }
            for (b, g) in head.b.iter_mut().zip(&grad.b) {
                *b -= lr * *g;
            }
        }
        let terms = full_loss(&head, &known, &exposure, lambda, target)?;
        if !terms.total.is_finite() {
            return Err(PocError::NonFinite {
                epoch,
                batch: usize::MAX,
                bce: terms.bce,
                oe: terms.oe,
            });
        }
        history.push(terms);
        if best.as_ref().is_none_or(|(l, _, _)| terms.total < *l) {
            best = Some((terms.total, epoch, head.clone()));
        }
    }
    let (_, best_epoch, head) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        head,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zero_head_gives_half() {
        let head = PocHead::<f64>::zeros(3);
        assert_eq!(head.forward(&[1.0, -2.0, 0.3]).unwrap(), vec![0.5; 4]);
        assert!(head.forward(&[1.0]).is_err());
    }

    #[test]
    fn bias_ln3_gives_three_quarters() {
        let mut head = PocHead::<f64>::zeros(2);
        head.biases_mut()[0] = 3.0f64.ln();
        let p = head.forward(&[0.7, 0.1]).unwrap();
        assert!(close(p[0], 0.75, 1e-15));
    }

    #[test]
    fn forward_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = PocHead::<f64>::random(16, 0.5, &mut rng);
        let h: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = head.forward(&h).unwrap();
        for k in 0..K {
            let mut z = head.biases()[k];
            for j in 0..16 {
                z += head.weights()[k * 16 + j] * h[j];
            }
            let oracle = 1.0 / (1.0 + (-z).exp());
            assert!(close(p[k], oracle, 1e-12));
        }
    }

    #[test]
    fn bce_of_half_is_ln2() {
        let p = vec![vec![0.5f64; 4]];
        for label in OpenLabel::KNOWN {
            let y = vec![one_hot::<f64>(label).unwrap()];
            assert!(close(bce_loss(&p, &y).unwrap(), 2f64.ln(), 1e-15));
        }
    }

    #[test]
    fn bce_perfect_fit_is_near_zero() {
        let y = vec![one_hot::<f64>(OpenLabel::Incomplete).unwrap()];
        let loss = bce_loss(&y.clone(), &y).unwrap();
        assert!(loss > 0.0 && loss < 1e-6);
    }

    #[test]
    fn bce_two_sample_hand_sum() {
        let p = vec![vec![0.9, 0.2, 0.1, 0.3], vec![0.4, 0.6, 0.5, 0.05]];
        let y = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
        let oracle = -((0.9f64.ln() + 0.8f64.ln() + 0.9f64.ln() + 0.7f64.ln())
            + (0.6f64.ln() + 0.6f64.ln() + 0.5f64.ln() + 0.95f64.ln()))
            / 8.0;
        assert!(close(bce_loss(&p, &y).unwrap(), oracle, 1e-15));
    }

    #[test]
    fn oe_reference_values() {
        assert!(close(oe_loss(&[vec![0.5f64; 4]], 0.5).unwrap(), 2f64.ln(), 1e-15));
        let oracle = -0.5 * (0.9f64.ln() + 0.1f64.ln());
        assert!(close(oe_loss(&[vec![0.9f64; 4]], 0.5).unwrap(), oracle, 1e-12));
        assert!(close(oracle, 1.2040, 1e-4));
        assert!(oe_loss(&[vec![0.0f64; 4]], 0.0).unwrap() < 1e-6);
        assert!(oe_loss(&[vec![0.5f64; 4]], 1.5).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { exposure_target: 1.1, ..TrainConfig::default() },
            TrainConfig { lambda: -1.0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    proptest! {
        #[test]
        fn oe_half_target_is_minimized_at_half(p in prop::collection::vec(0.0f64..=1.0, 4..=4)) {
            let loss = oe_loss(std::slice::from_ref(&p), 0.5).unwrap();
            prop_assert!(loss >= 2f64.ln() - 1e-15);
            if p.iter().any(|&v| (v - 0.5).abs() > 1e-3) {
                prop_assert!(loss > 2f64.ln());
            }
        }
    }
}

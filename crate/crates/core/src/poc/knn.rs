use super::PocError;
use crate::embed::FeatureBank;
use crate::scalar::{dot, squared_norm, Scalar};

/// Cosine similarity clamped to `[-1, 1]`. Identical inputs give exactly 1.
pub fn cosine_sim<T: Scalar>(a: &[T], b: &[T]) -> Result<T, PocError> {
    if a.len() != b.len() {
        return Err(PocError::Shape(format!("cosine of dimensions {} and {}", a.len(), b.len())));
    }
    let na = squared_norm(a);
    let nb = squared_norm(b);
    if na <= T::zero() || nb <= T::zero() {
        return Err(PocError::Domain("cosine similarity of a zero-norm vector".into()));
    }
    let c = dot(a, b) / (na * nb).sqrt();
    Ok(c.max(-T::one()).min(T::one()))
}

pub fn cosine_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T, PocError> {
    Ok(T::one() - cosine_sim(a, b)?)
}

fn kth_smallest<T: Scalar>(mut dists: Vec<T>, kappa: usize) -> Result<T, PocError> {
    if kappa == 0 || kappa > dists.len() {
        return Err(PocError::Kappa {
            kappa,
            available: dists.len(),
        });
    }
    let (_, kth, _) = dists.select_nth_unstable_by(kappa - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
    Ok(*kth)
}

/// The `kappa`-th smallest cosine distance from `h` to the bank.
pub fn knn_score<T: Scalar>(h: &[T], bank: &FeatureBank<T>, kappa: usize) -> Result<T, PocError> {
    let dists = bank
        .entries()
        .iter()
        .map(|e| cosine_distance(h, &e.vector))
        .collect::<Result<Vec<_>, _>>()?;
    kth_smallest(dists, kappa)
}

/// Score of bank entry `idx` against every other entry.
pub fn knn_score_leave_one_out<T: Scalar>(
    bank: &FeatureBank<T>,
    idx: usize,
    kappa: usize,
) -> Result<T, PocError> {
    let h = &bank.entries()[idx].vector;
    let dists = bank
        .entries()
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != idx)
        .map(|(_, e)| cosine_distance(h, &e.vector))
        .collect::<Result<Vec<_>, _>>()?;
    kth_smallest(dists, kappa)
}

pub fn leave_one_out_scores<T: Scalar>(bank: &FeatureBank<T>, kappa: usize) -> Result<Vec<T>, PocError> {
    use rayon::prelude::*;
    (0..bank.len())
        .into_par_iter()
        .map(|i| knn_score_leave_one_out(bank, i, kappa))
        .collect()
}

/// Offset of the outer grid candidates beyond the extreme scores.
pub const GRID_EPSILON: f64 = 1e-6;

/// Youden's J at threshold `tau`: unknown rejection rate minus known rejection rate.
pub fn youden_j<T: Scalar>(known: &[T], unknown: &[T], tau: T) -> f64 {
    let frac = |xs: &[T]| xs.iter().filter(|&&s| s > tau).count() as f64 / xs.len() as f64;
    frac(unknown) - frac(known)
}

/// Candidate thresholds: both outer extremes and every midpoint between
/// consecutive distinct scores, ascending.
pub fn threshold_grid<T: Scalar>(known: &[T], unknown: &[T]) -> Vec<T> {
    let mut all: Vec<T> = known.iter().chain(unknown).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    all.dedup();
    let Some((&first, &last)) = all.first().zip(all.last()) else {
        return Vec::new();
    };
    let two = T::of(2.0);
    let mut grid = Vec::with_capacity(all.len() + 1);
    grid.push(first - T::of(GRID_EPSILON));
    grid.extend(all.windows(2).map(|w| (w[0] + w[1]) / two));
    grid.push(last + T::of(GRID_EPSILON));
    grid
}

/// Threshold maximizing Youden's J over the candidate grid; the smallest wins ties.
pub fn calibrate_tau<T: Scalar>(known: &[T], unknown: &[T]) -> Result<T, PocError> {
    if known.is_empty() || unknown.is_empty() {
        return Err(PocError::Calibration("need both known and unknown scores".into()));
    }
    if known.iter().chain(unknown).any(|s| !s.is_finite()) {
        return Err(PocError::Calibration("non-finite score".into()));
    }
    let mut best: Option<(f64, T)> = None;
    for tau in threshold_grid(known, unknown) {
        let j = youden_j(known, unknown, tau);
        if best.is_none_or(|(bj, _)| j > bj) {
            best = Some((j, tau));
        }
    }
    Ok(best.expect("grid is non-empty").1)
}

//! Training losses on probability maps.
//!
//! Batches are flat slices holding `samples` equally sized maps back to back.
//! Every loss is computed per sample and averaged over the batch.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    Dice,
    DicePlusBce,
}

fn check_batch<F>(pred: &[F], target: &[F], samples: usize) -> Result<usize> {
    if pred.len() != target.len() {
        bail!(ShapeMismatch, "prediction has {} values, target {}", pred.len(), target.len());
    }
    if samples == 0 || !pred.len().is_multiple_of(samples) || pred.is_empty() {
        bail!(ShapeMismatch, "{} values cannot split into {samples} samples", pred.len());
    }
    Ok(pred.len() / samples)
}

fn smooth_ok<F: Float>(eps: F) -> Result<()> {
    if !(eps > F::zero()) {
        bail!(InvalidArgument, "Dice smoothing must be positive");
    }
    Ok(())
}

/// `1 − (2·Σpt + ε)/(Σp + Σt + ε)` per sample, averaged over the batch.
pub fn soft_dice_loss<F: Float>(pred: &[F], target: &[F], samples: usize, eps: F) -> Result<F> {
    let len = check_batch(pred, target, samples)?;
    smooth_ok(eps)?;
    let two = F::one() + F::one();
    let mut total = F::zero();
    for (p, t) in pred.chunks_exact(len).zip(target.chunks_exact(len)) {
        let (mut inter, mut sum) = (F::zero(), F::zero());
        for (&a, &b) in p.iter().zip(t) {
            inter = inter + a * b;
            sum = sum + a + b;
        }
        total = total + F::one() - (two * inter + eps) / (sum + eps);
    }
    Ok(total / F::from(samples).expect("sample count fits"))
}

/// Analytic `∂ soft_dice_loss / ∂pred`.
pub fn soft_dice_grad<F: Float>(pred: &[F], target: &[F], samples: usize, eps: F) -> Result<Vec<F>> {
    let len = check_batch(pred, target, samples)?;
    smooth_ok(eps)?;
    let two = F::one() + F::one();
    let n = F::from(samples).expect("sample count fits");
    let mut grad = vec![F::zero(); pred.len()];
    for ((p, t), g) in pred.chunks_exact(len).zip(target.chunks_exact(len)).zip(grad.chunks_exact_mut(len)) {
        let (mut inter, mut sum) = (F::zero(), F::zero());
        for (&a, &b) in p.iter().zip(t) {
            inter = inter + a * b;
            sum = sum + a + b;
        }
        let num = two * inter + eps;
        let den = sum + eps;
        // d/dp_j [1 − num/den] = −(2 t_j · den − num) / den²
        for (gj, &tj) in g.iter_mut().zip(t) {
            *gj = -(two * tj * den - num) / (den * den) / n;
        }
    }
    Ok(grad)
}

const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy, probabilities clamped away from 0 and 1.
pub fn bce_loss<F: Float>(pred: &[F], target: &[F], samples: usize) -> Result<F> {
    check_batch(pred, target, samples)?;
    let lo = F::from(BCE_CLAMP).expect("representable");
    let hi = F::one() - lo;
    let mut total = F::zero();
    for (&p, &t) in pred.iter().zip(target) {
        let p = p.max(lo).min(hi);
        total = total - (t * p.ln() + (F::one() - t) * (F::one() - p).ln());
    }
    Ok(total / F::from(pred.len()).expect("length fits"))
}

pub fn bce_grad<F: Float>(pred: &[F], target: &[F], samples: usize) -> Result<Vec<F>> {
    check_batch(pred, target, samples)?;
    let lo = F::from(BCE_CLAMP).expect("representable");
    let hi = F::one() - lo;
    let m = F::from(pred.len()).expect("length fits");
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let pc = p.max(lo).min(hi);
            (pc - t) / (pc * (F::one() - pc)) / m
        })
        .collect())
}

/// Loss value and gradient for the configured objective.
pub fn loss_and_grad(
    kind: LossKind,
    pred: &[f32],
    target: &[f32],
    samples: usize,
    eps: f32,
) -> Result<(f32, Vec<f32>)> {
    let pred64: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
    let target64: Vec<f64> = target.iter().map(|&v| v as f64).collect();
    let eps = eps as f64;
    let mut loss = soft_dice_loss(&pred64, &target64, samples, eps)?;
    let mut grad = soft_dice_grad(&pred64, &target64, samples, eps)?;
    if kind == LossKind::DicePlusBce {
        loss += bce_loss(&pred64, &target64, samples)?;
        for (g, b) in grad.iter_mut().zip(bce_grad(&pred64, &target64, samples)?) {
            *g += b;
        }
    }
    if !loss.is_finite() {
        bail!(NonFinite, "loss evaluated to {loss}");
    }
    Ok((loss as f32, grad.into_iter().map(|g| g as f32).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finite_difference(pred: &[f64], target: &[f64], samples: usize, eps: f64, h: f64) -> Vec<f64> {
        (0..pred.len())
            .map(|j| {
                let mut up = pred.to_vec();
                up[j] += h;
                let mut down = pred.to_vec();
                down[j] -= h;
                (soft_dice_loss(&up, target, samples, eps).unwrap()
                    - soft_dice_loss(&down, target, samples, eps).unwrap())
                    / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn perfect_match_with_unit_smoothing() {
        let t = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0];
        // (2·4 + 1)/(8 + 1) = 1
        assert_eq!(soft_dice_loss(&t, &t, 1, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_masks_with_unit_smoothing() {
        let p = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let t = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let l = soft_dice_loss(&p, &t, 1, 1.0).unwrap();
        assert!((l - (1.0 - 1.0 / 9.0)).abs() < 1e-12);
        let near = soft_dice_loss(&p, &t, 1, 1e-9).unwrap();
        assert!(near > 0.999_999);
    }

    #[test]
    fn empty_pair_is_perfect() {
        let z = [0.0f64; 9];
        assert_eq!(soft_dice_loss(&z, &z, 1, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn batch_loss_is_mean_of_samples() {
        let p = [1.0, 0.0, 0.0, 1.0];
        let t = [1.0, 0.0, 1.0, 0.0];
        let l = soft_dice_loss(&p, &t, 2, 1.0).unwrap();
        let a = soft_dice_loss(&p[..2], &t[..2], 1, 1.0).unwrap();
        let b = soft_dice_loss(&p[2..], &t[2..], 1, 1.0).unwrap();
        assert!((l - (a + b) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(soft_dice_loss(&[0.5, 0.5], &[1.0], 1, 1.0).is_err());
        assert!(soft_dice_loss(&[0.5, 0.5], &[1.0, 0.0], 1, 0.0).is_err());
        assert!(soft_dice_loss(&[0.5, 0.5, 0.1], &[1.0, 0.0, 0.0], 2, 1.0).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let p: Vec<f64> = (0..128).map(|_| rng.gen()).collect();
            let t: Vec<f64> = (0..128).map(|_| rng.gen_bool(0.3) as u8 as f64).collect();
            let analytic = soft_dice_grad(&p, &t, 2, 1.0).unwrap();
            let numeric = finite_difference(&p, &t, 2, 1.0, 1e-4);
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!((a - n).abs() <= 1e-3 * a.abs().max(n.abs()).max(1e-8), "{a} vs {n}");
            }
        }
    }

    #[test]
    fn bce_gradient_matches_central_differences() {
        let p = [0.2, 0.7, 0.5, 0.9];
        let t = [0.0, 1.0, 1.0, 0.0];
        let g = bce_grad(&p, &t, 1).unwrap();
        for j in 0..4 {
            let mut up = p;
            up[j] += 1e-6;
            let mut down = p;
            down[j] -= 1e-6;
            let n = (bce_loss(&up, &t, 1).unwrap() - bce_loss(&down, &t, 1).unwrap()) / 2e-6;
            assert!((g[j] - n).abs() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn loss_is_bounded(
            pairs in prop::collection::vec((0.0f64..=1.0, prop::bool::ANY), 1..200),
            eps in 1e-6f64..10.0,
        ) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let t: Vec<f64> = pairs.iter().map(|x| x.1 as u8 as f64).collect();
            let l = soft_dice_loss(&p, &t, 1, eps).unwrap();
            prop_assert!((0.0..1.0).contains(&l));
        }

        #[test]
        fn symmetric_for_binary_predictions(bits in prop::collection::vec((prop::bool::ANY, prop::bool::ANY), 1..200)) {
            let p: Vec<f64> = bits.iter().map(|b| b.0 as u8 as f64).collect();
            let t: Vec<f64> = bits.iter().map(|b| b.1 as u8 as f64).collect();
            prop_assert_eq!(soft_dice_loss(&p, &t, 1, 1.0).unwrap(), soft_dice_loss(&t, &p, 1, 1.0).unwrap());
        }

        #[test]
        fn invariant_under_joint_pixel_permutation(
            pairs in prop::collection::vec((0.0f64..=1.0, prop::bool::ANY), 2..100),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let split = |v: &[(f64, bool)]| -> (Vec<f64>, Vec<f64>) {
                (v.iter().map(|x| x.0).collect(), v.iter().map(|x| x.1 as u8 as f64).collect())
            };
            let (p, t) = split(&pairs);
            let (ps, ts) = split(&shuffled);
            let a = soft_dice_loss(&p, &t, 1, 1.0).unwrap();
            let b = soft_dice_loss(&ps, &ts, 1, 1.0).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

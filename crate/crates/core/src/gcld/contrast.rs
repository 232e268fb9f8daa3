//! Feature-space augmentation and the supervised contrastive loss over a
//! pool of key embeddings.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numkit::dot;

/// Feature-space stand-in for randomized data augmentation: additive
/// Gaussian noise followed by random coordinate dropout. Two independent
/// calls produce the query and key views of a sample.
pub fn augment(x: &[f64], sigma_aug: f64, p_drop: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for &v in x {
        let noisy = if sigma_aug > 0.0 {
            v + sigma_aug * rng.sample::<f64, _>(StandardNormal)
        } else {
            v
        };
        let kept = if p_drop > 0.0 && rng.random_bool(p_drop) {
            0.0
        } else {
            noisy
        };
        out.push(kept);
    }
    out
}

/// Supervised contrastive loss of a query embedding against a pool.
///
/// `pool` is the contrastive pool with the query itself already removed;
/// entries whose label equals `q_label` form the positive set. Returns the
/// loss and its analytic gradient with respect to `q` (pool members are
/// treated as constants; keys come from the stop-gradient encoder).
///
/// An empty positive set contributes zero loss and zero gradient.
pub fn contrastive_loss(
    q: &[f64],
    pool: &[(&[f64], usize)],
    q_label: usize,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    if tau <= 0.0 {
        return Err(Error::Config(format!(
            "contrastive temperature must be positive, got {tau}"
        )));
    }
    if pool.is_empty() {
        return Err(Error::Invariant("empty contrastive pool".into()));
    }
    for (k, _) in pool {
        if k.len() != q.len() {
            return Err(Error::Config("pool embedding dim mismatch".into()));
        }
    }
    let positives: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(_, (_, label))| *label == q_label)
        .map(|(i, _)| i)
        .collect();
    if positives.is_empty() {
        return Ok((0.0, vec![0.0; q.len()]));
    }

    let logits: Vec<f64> = pool.iter().map(|(k, _)| dot(q, k) / tau).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp_sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let lse = max + exp_sum.ln();

    let mean_pos_logit =
        positives.iter().map(|&i| logits[i]).sum::<f64>() / positives.len() as f64;
    let loss = lse - mean_pos_logit;

    // grad = (1/tau) * (sum_k softmax_k * k  -  mean over positives of k+)
    let mut grad = vec![0.0; q.len()];
    for (i, (k, _)) in pool.iter().enumerate() {
        let s = (logits[i] - lse).exp();
        for (g, &kv) in grad.iter_mut().zip(*k) {
            *g += s * kv / tau;
        }
    }
    let inv_p = 1.0 / positives.len() as f64;
    for &i in &positives {
        for (g, &kv) in grad.iter_mut().zip(pool[i].0) {
            *g -= inv_p * kv / tau;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn no_op_augmentation_is_identity() {
        let x = vec![0.4, -1.2, 3.0];
        let mut r = rng::derive(1, 50);
        assert_eq!(augment(&x, 0.0, 0.0, &mut r), x);
    }

    #[test]
    fn full_dropout_zeroes_everything() {
        let x = vec![0.4, -1.2, 3.0];
        let mut r = rng::derive(1, 50);
        assert_eq!(augment(&x, 0.5, 1.0, &mut r), vec![0.0; 3]);
    }

    /// Monte-Carlo oracle: E[augment(x)] = (1 - p_drop) * x.
    #[test]
    fn augmented_mean_matches_expectation() {
        let x = vec![0.8, -0.5, 1.4, 0.0];
        let (sigma, p_drop) = (0.5, 0.3);
        let mut r = rng::derive(9, 50);
        let n = 10_000;
        let mut mean = vec![0.0; x.len()];
        for _ in 0..n {
            for (m, v) in mean.iter_mut().zip(augment(&x, sigma, p_drop, &mut r)) {
                *m += v / n as f64;
            }
        }
        for (m, &xv) in mean.iter().zip(&x) {
            assert!(
                (m - (1.0 - p_drop) * xv).abs() < 0.03,
                "mean {m} vs expected {}",
                (1.0 - p_drop) * xv
            );
        }
    }

    #[test]
    fn singleton_pool_with_zero_similarity_has_zero_loss() {
        let q = [1.0, 0.0];
        let k = [0.0, 1.0];
        let pool = [(&k[..], 3usize)];
        let (loss, grad) = contrastive_loss(&q, &pool, 3, 1.0).unwrap();
        assert_relative_eq!(loss, 0.0, epsilon = 1e-12);
        // Single positive = whole pool: softmax weight 1 on the positive
        // cancels the positive pull exactly.
        for g in grad {
            assert_relative_eq!(g, 0.0, epsilon = 1e-12);
        }
    }

    /// Hand-evaluated two-element pool: q.k+ = 1, q.k- = -1, tau = 1
    /// -> loss = -ln(e / (e + e^-1)) = ln(1 + e^-2).
    #[test]
    fn hand_evaluated_pair_case() {
        let q = [1.0, 0.0];
        let kp = [1.0, 0.0];
        let km = [-1.0, 0.0];
        let pool = [(&kp[..], 0usize), (&km[..], 1usize)];
        let (loss, _) = contrastive_loss(&q, &pool, 0, 1.0).unwrap();
        assert_relative_eq!(loss, (1.0 + (-2.0f64).exp()).ln(), epsilon = 1e-12);
    }

    #[test]
    fn empty_positive_set_contributes_nothing() {
        let q = [1.0, 0.0];
        let k = [0.5, 0.5];
        let pool = [(&k[..], 7usize)];
        let (loss, grad) = contrastive_loss(&q, &pool, 0, 0.07).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let q = [1.0];
        let k = [1.0];
        let pool = [(&k[..], 0usize)];
        assert!(contrastive_loss(&q, &pool, 0, 0.0).is_err());
        assert!(contrastive_loss(&q, &[], 0, 1.0).is_err());
    }

    /// Finite-difference oracle on random pools.
    #[test]
    fn gradient_matches_central_differences() {
        let mut r = rng::derive(23, 50);
        for _ in 0..25 {
            let dim = r.random_range(2..8);
            let pool_size = r.random_range(1..32);
            let q: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let pool_data: Vec<(Vec<f64>, usize)> = (0..pool_size)
                .map(|_| {
                    let k: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
                    (k, r.random_range(0..3usize))
                })
                .collect();
            let pool: Vec<(&[f64], usize)> =
                pool_data.iter().map(|(k, l)| (k.as_slice(), *l)).collect();
            let tau = r.random_range(0.05..1.0);
            let label = r.random_range(0..3usize);
            let (_, grad) = contrastive_loss(&q, &pool, label, tau).unwrap();
            let h = 1e-5;
            for d in 0..dim {
                let mut qp = q.clone();
                qp[d] += h;
                let mut qm = q.clone();
                qm[d] -= h;
                let (lp, _) = contrastive_loss(&qp, &pool, label, tau).unwrap();
                let (lm, _) = contrastive_loss(&qm, &pool, label, tau).unwrap();
                let numeric = (lp - lm) / (2.0 * h);
                let denom = grad[d].abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (grad[d] - numeric).abs() / denom < 1e-4,
                    "grad[{d}] {} vs numeric {numeric}",
                    grad[d]
                );
            }
        }
    }
}

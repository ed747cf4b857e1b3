//! Attention-weighted ("soft dot product") scoring and the hinge loss.

use crate::nn::dot;
use crate::towers::QueryHeads;

/// Softmax of `scores / beta`, computed with max-subtraction.
pub fn attention_weights(scores: &[f64], beta: f64) -> Vec<f64> {
    debug_assert!(beta > 0.0);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / beta).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `Σ_i w_i s_i` with `w = softmax(s / beta)`.
pub fn soft_score(inner_products: &[f64], beta: f64) -> f64 {
    attention_weights(inner_products, beta)
        .iter()
        .zip(inner_products)
        .map(|(w, s)| w * s)
        .sum()
}

/// Per-head inner products `e_i · g`.
pub fn head_inner_products(heads: &QueryHeads, g: &[f64]) -> Vec<f64> {
    heads.iter().map(|e| dot(e, g)).collect()
}

/// Score between a query (all heads) and an item embedding.
pub fn score(heads: &QueryHeads, g: &[f64], beta: f64) -> f64 {
    soft_score(&head_inner_products(heads, g), beta)
}

/// Partial derivatives of [`soft_score`] with respect to each inner product:
/// `w_i (1 + (s_i - f) / beta)`.
pub fn soft_score_grad(inner_products: &[f64], beta: f64) -> (f64, Vec<f64>) {
    let w = attention_weights(inner_products, beta);
    let f: f64 = w.iter().zip(inner_products).map(|(w, s)| w * s).sum();
    let grad = w
        .iter()
        .zip(inner_products)
        .map(|(w, s)| w * (1.0 + (s - f) / beta))
        .collect();
    (f, grad)
}

/// `Σ_j max(0, delta - f_pos + f_neg_j)`
pub fn hinge_loss(f_pos: f64, f_negs: &[f64], delta: f64) -> f64 {
    f_negs
        .iter()
        .map(|f_neg| (delta - f_pos + f_neg).max(0.0))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain scalar softmax, no stabilization.
    fn softmax_oracle(s: &[f64], beta: f64) -> Vec<f64> {
        let e: Vec<f64> = s.iter().map(|x| (x / beta).exp()).collect();
        let t: f64 = e.iter().sum();
        e.iter().map(|x| x / t).collect()
    }

    #[test]
    fn weight_examples() {
        assert_eq!(attention_weights(&[3.7], 0.2), vec![1.0]);
        for beta in [0.01, 1.0, 100.0] {
            let w = attention_weights(&[1.0, 1.0], beta);
            assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        }
        let oracle = softmax_oracle(&[2.0, 0.0], 1.0);
        let w = attention_weights(&[2.0, 0.0], 1.0);
        assert!((w[0] - 0.8808).abs() < 1e-4 && (w[1] - 0.1192).abs() < 1e-4);
        assert!((w[0] - oracle[0]).abs() < 1e-12);
    }

    #[test]
    fn score_examples() {
        let heads = QueryHeads::from_heads(&[vec![0.7, 0.0]]);
        assert!((score(&heads, &[1.0, 0.0], 1.0) - 0.7).abs() < 1e-15);
        assert!((soft_score(&[2.0, 0.0], 1e-4) - 2.0).abs() < 1e-6);
        let w = softmax_oracle(&[2.0, 0.0], 1.0);
        let expected = w[0] * 2.0;
        assert!((soft_score(&[2.0, 0.0], 1.0) - expected).abs() < 1e-12);
        assert!((soft_score(&[2.0, 0.0], 1.0) - 1.7616).abs() < 1e-3);
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss(1.0, &[0.5], 0.1), 0.0);
        assert!((hinge_loss(0.5, &[0.5], 0.1) - 0.1).abs() < 1e-15);
        assert!((hinge_loss(0.2, &[0.4, 0.0], 0.1) - 0.3).abs() < 1e-15);
        assert_eq!(hinge_loss(0.2, &[], 0.1), 0.0);
    }

    #[test]
    fn large_beta_is_uniform() {
        let w = attention_weights(&[3.0, -1.0, 0.5], 1e9);
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let s = [0.3, -0.8, 1.1];
        let (_, g) = soft_score_grad(&s, 0.7);
        for i in 0..3 {
            let (mut p, mut m) = (s, s);
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (soft_score(&p, 0.7) - soft_score(&m, 0.7)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_and_shift_invariant(
            s in prop::collection::vec(-50.0f64..50.0, 1..8),
            beta in 0.01f64..10.0,
            shift in -100.0f64..100.0,
        ) {
            let w = attention_weights(&s, beta);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = s.iter().map(|x| x + shift).collect();
            for (a, b) in w.iter().zip(attention_weights(&shifted, beta)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn hinge_nonnegative_and_zero_iff_margin(
            pos in -2.0f64..2.0,
            negs in prop::collection::vec(-2.0f64..2.0, 0..6),
            delta in 0.0f64..1.0,
        ) {
            let l = hinge_loss(pos, &negs, delta);
            prop_assert!(l >= 0.0);
            let beaten = negs.iter().all(|n| pos - n >= delta);
            prop_assert_eq!(l == 0.0, beaten);
        }
    }
}

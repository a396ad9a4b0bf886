//! Training objectives: cross-entropy over softmax probabilities and a
//! supervised contrastive term over a pool of unit-norm embeddings, both
//! with analytic gradients.

use crate::error::{Error, Result};
use crate::sampler::PairSelection;

/// Mean negative log-likelihood of the gold classes, plus the gradient of
/// the loss with respect to the *logits* that produced `probs`:
/// `(probs - onehot) / B` per row.
pub fn ce_loss(probs: &[Vec<f64>], classes: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if probs.len() != classes.len() {
        return Err(Error::LengthMismatch {
            what: "probabilities vs classes".into(),
            left: probs.len(),
            right: classes.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::Empty("cross-entropy batch".into()));
    }

    let inv_b = 1.0 / probs.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    for (row, &y) in probs.iter().zip(classes) {
        if y >= row.len() {
            return Err(Error::ClassIdOutOfRange {
                id: y,
                num_classes: row.len(),
            });
        }
        loss -= row[y].ln();
        let mut g: Vec<f64> = row.iter().map(|&p| p * inv_b).collect();
        g[y] -= inv_b;
        grads.push(g);
    }
    Ok((loss * inv_b, grads))
}

/// Supervised contrastive loss over a pool made of the `batch` embeddings
/// followed by detached `bank` constants. `pairs[i]` indexes that combined
/// pool and must exclude anchor `i` itself.
///
/// For each anchor with a non-empty positive set the loss term is
/// `log(S_P + S_N) - log(S_P)` where `S_P`/`S_N` sum `exp(sim/tau)` over
/// positives/negatives; anchors without positives contribute nothing. All
/// exponentials are shifted by the per-anchor maximum before summing.
///
/// Returns the mean loss and its gradient with respect to every batch
/// embedding. Batch entries accumulate gradient both as anchors and as
/// positives/negatives of other anchors; bank entries receive none.
pub fn scl_loss(
    batch: &[Vec<f64>],
    bank: &[Vec<f32>],
    pairs: &[PairSelection],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!(
            "contrastive temperature must be positive, got {tau}"
        )));
    }
    if batch.is_empty() {
        return Err(Error::Empty("contrastive batch".into()));
    }
    if pairs.len() != batch.len() {
        return Err(Error::LengthMismatch {
            what: "batch vs pair selections".into(),
            left: batch.len(),
            right: pairs.len(),
        });
    }

    let b = batch.len();
    let pool_len = b + bank.len();
    let dim = batch[0].len();
    let inv_b = 1.0 / b as f64;
    let inv_tau = 1.0 / tau;

    // Embedding of pool index j, lifting bank rows to f64.
    let dot = |anchor: &[f64], j: usize| -> f64 {
        if j < b {
            anchor.iter().zip(&batch[j]).map(|(x, y)| x * y).sum()
        } else {
            anchor
                .iter()
                .zip(&bank[j - b])
                .map(|(x, &y)| x * f64::from(y))
                .sum()
        }
    };

    let mut loss = 0.0;
    let mut grads = vec![vec![0.0f64; dim]; b];

    for (i, sel) in pairs.iter().enumerate() {
        for &j in sel.positives.iter().chain(&sel.negatives) {
            if j >= pool_len || j == i {
                return Err(Error::Config(format!(
                    "pair index {j} invalid for anchor {i} in pool of {pool_len}"
                )));
            }
        }
        if sel.positives.is_empty() {
            continue;
        }

        let anchor = &batch[i];
        let pos_scaled: Vec<f64> = sel
            .positives
            .iter()
            .map(|&j| dot(anchor, j) * inv_tau)
            .collect();
        let neg_scaled: Vec<f64> = sel
            .negatives
            .iter()
            .map(|&j| dot(anchor, j) * inv_tau)
            .collect();

        let m = pos_scaled
            .iter()
            .chain(&neg_scaled)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let pos_exp: Vec<f64> = pos_scaled.iter().map(|&s| (s - m).exp()).collect();
        let neg_exp: Vec<f64> = neg_scaled.iter().map(|&s| (s - m).exp()).collect();
        let sp: f64 = pos_exp.iter().sum();
        let sn: f64 = neg_exp.iter().sum();
        let total = sp + sn;

        loss += total.ln() - sp.ln();

        // Pair coefficients fold in the 1/B and 1/tau factors.
        for (&j, &a) in sel.positives.iter().zip(&pos_exp) {
            let coef = inv_b * inv_tau * (a / total - a / sp);
            add_scaled_pool(&mut grads, i, j, coef, batch, bank);
        }
        for (&j, &a) in sel.negatives.iter().zip(&neg_exp) {
            let coef = inv_b * inv_tau * (a / total);
            add_scaled_pool(&mut grads, i, j, coef, batch, bank);
        }
    }

    Ok((loss * inv_b, grads))
}

/// Adds `coef * z_j` into the anchor gradient and, when `j` is itself a
/// batch entry, `coef * z_i` into that entry's gradient.
fn add_scaled_pool(
    grads: &mut [Vec<f64>],
    i: usize,
    j: usize,
    coef: f64,
    batch: &[Vec<f64>],
    bank: &[Vec<f32>],
) {
    let b = batch.len();
    if j < b {
        for (g, &z) in grads[i].iter_mut().zip(&batch[j]) {
            *g += coef * z;
        }
        for (g, &z) in grads[j].iter_mut().zip(&batch[i]) {
            *g += coef * z;
        }
    } else {
        for (g, &z) in grads[i].iter_mut().zip(&bank[j - b]) {
            *g += coef * f64::from(z);
        }
    }
}

/// The training objective is the plain sum of the two terms.
pub fn combined_loss(ce: f64, scl: f64) -> f64 {
    ce + scl
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softmax;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pairs(positives: Vec<usize>, negatives: Vec<usize>) -> PairSelection {
        PairSelection {
            positives,
            negatives,
            relaxation_level: 4,
        }
    }

    #[test]
    fn ce_uniform_over_four_classes_is_ln_four() {
        let probs = vec![vec![0.25; 4]; 3];
        let (loss, _) = ce_loss(&probs, &[0, 1, 3]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        assert!((loss - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn ce_perfect_prediction_is_zero_loss() {
        let probs = vec![vec![1.0, 0.0, 0.0]];
        let (loss, grads) = ce_loss(&probs, &[0]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads[0], vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn ce_rejects_out_of_range_class() {
        let probs = vec![vec![0.5, 0.5]];
        assert!(matches!(
            ce_loss(&probs, &[2]),
            Err(Error::ClassIdOutOfRange { .. })
        ));
    }

    #[test]
    fn ce_gradient_matches_finite_differences_through_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (b, c) = (5, 3);
        let logits: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..c).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ys: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();

        let loss_of = |logits: &[Vec<f64>]| -> f64 {
            let probs: Vec<Vec<f64>> = logits.iter().map(|row| softmax(row)).collect();
            ce_loss(&probs, &ys).unwrap().0
        };

        let probs: Vec<Vec<f64>> = logits.iter().map(|row| softmax(row)).collect();
        let (_, analytic) = ce_loss(&probs, &ys).unwrap();

        let h = 1e-6;
        for i in 0..b {
            for j in 0..c {
                let mut plus = logits.clone();
                plus[i][j] += h;
                let mut minus = logits.clone();
                minus[i][j] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                assert!(
                    (fd - analytic[i][j]).abs() < 1e-7,
                    "logit ({i},{j}): fd {fd} vs analytic {}",
                    analytic[i][j]
                );
            }
        }
    }

    #[test]
    fn scl_single_anchor_closed_form() {
        // One anchor; its positive duplicates it (sim 1) and its negative is
        // orthogonal (sim 0); both live in the bank. With tau = 1 the loss
        // is ln(1 + e^{-1}).
        let batch = vec![vec![1.0, 0.0]];
        let bank = vec![vec![1.0f32, 0.0], vec![0.0f32, 1.0]];
        let sel = vec![pairs(vec![1], vec![2])];
        let (loss, _) = scl_loss(&batch, &bank, &sel, 1.0).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expect).abs() < 1e-9);
        assert!((loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn scl_without_negatives_is_exactly_zero() {
        let batch = vec![vec![0.6, 0.8]];
        let bank = vec![vec![0.6f32, 0.8]];
        let sel = vec![pairs(vec![1], vec![])];
        let (loss, grads) = scl_loss(&batch, &bank, &sel, 0.05).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn scl_anchor_without_positives_contributes_nothing() {
        let batch = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let bank = Vec::new();
        let sel = vec![pairs(vec![], vec![1]), pairs(vec![], vec![0])];
        let (loss, grads) = scl_loss(&batch, &bank, &sel, 0.05).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn scl_loss_is_invariant_to_pair_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        };
        let batch: Vec<Vec<f64>> = (0..3).map(|_| unit(&mut rng)).collect();
        let bank: Vec<Vec<f32>> = (0..5)
            .map(|_| unit(&mut rng).into_iter().map(|x| x as f32).collect())
            .collect();
        let sel_a = vec![
            pairs(vec![1, 3], vec![2, 4, 5]),
            pairs(vec![], vec![]),
            pairs(vec![], vec![]),
        ];
        let sel_b = vec![
            pairs(vec![3, 1], vec![5, 2, 4]),
            pairs(vec![], vec![]),
            pairs(vec![], vec![]),
        ];
        let (la, _) = scl_loss(&batch, &bank, &sel_a, 0.1).unwrap();
        let (lb, _) = scl_loss(&batch, &bank, &sel_b, 0.1).unwrap();
        assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn scl_adding_a_negative_increases_loss() {
        let batch = vec![vec![1.0, 0.0]];
        let bank = vec![
            vec![1.0f32, 0.0],
            vec![0.0f32, 1.0],
            vec![0.707f32, 0.707],
        ];
        let small = vec![pairs(vec![1], vec![2])];
        let larger = vec![pairs(vec![1], vec![2, 3])];
        let (l1, _) = scl_loss(&batch, &bank, &small, 0.5).unwrap();
        let (l2, _) = scl_loss(&batch, &bank, &larger, 0.5).unwrap();
        assert!(l2 > l1);
    }

    #[test]
    fn scl_rejects_bad_temperature_and_indices() {
        let batch = vec![vec![1.0, 0.0]];
        let sel = vec![pairs(vec![], vec![])];
        assert!(matches!(
            scl_loss(&batch, &[], &sel, 0.0),
            Err(Error::Config(_))
        ));
        let self_ref = vec![pairs(vec![0], vec![])];
        assert!(scl_loss(&batch, &[], &self_ref, 1.0).is_err());
        let oob = vec![pairs(vec![7], vec![])];
        assert!(scl_loss(&batch, &[], &oob, 1.0).is_err());
    }

    #[test]
    fn scl_gradient_matches_finite_differences() {
        // Batch of 4 anchors with 8 bank constants; gradients must account
        // for batch entries appearing as positives/negatives of each other.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dim = 6;
        let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        };
        let batch: Vec<Vec<f64>> = (0..4).map(|_| unit(&mut rng)).collect();
        let bank: Vec<Vec<f32>> = (0..8)
            .map(|_| unit(&mut rng).into_iter().map(|x| x as f32).collect())
            .collect();
        // Classes: anchors 0,1 in class 0; anchors 2,3 in class 1; bank
        // alternates. Pool indices 4..12 are bank entries.
        let class_of = |j: usize| -> usize {
            if j < 4 {
                j / 2
            } else {
                j % 2
            }
        };
        let sel: Vec<PairSelection> = (0..4)
            .map(|i| {
                let mut p = Vec::new();
                let mut n = Vec::new();
                for j in 0..12 {
                    if j == i {
                        continue;
                    }
                    if class_of(j) == class_of(i) {
                        p.push(j);
                    } else {
                        n.push(j);
                    }
                }
                pairs(p, n)
            })
            .collect();

        let tau = 0.2;
        let (_, analytic) = scl_loss(&batch, &bank, &sel, tau).unwrap();

        let h = 1e-6;
        for i in 0..batch.len() {
            for d in 0..dim {
                let mut plus = batch.clone();
                plus[i][d] += h;
                let mut minus = batch.clone();
                minus[i][d] -= h;
                let fp = scl_loss(&plus, &bank, &sel, tau).unwrap().0;
                let fm = scl_loss(&minus, &bank, &sel, tau).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                let a = analytic[i][d];
                assert!(
                    (fd - a).abs() < 1e-6 * a.abs().max(1.0),
                    "batch ({i},{d}): fd {fd} vs analytic {a}"
                );
            }
        }
    }

    #[test]
    fn combined_is_plain_sum() {
        assert_eq!(combined_loss(1.25, 0.5), 1.75);
        assert_eq!(combined_loss(0.0, 0.0), 0.0);
    }
}

//! Training objectives: AM-Softmax over real and synthetic classes, the
//! adversarial BCE pair, the adaptive adversarial weight, and the total loss.
//!
//! Every objective exists twice: a plain closed-form evaluation (used by
//! tests as the value oracle and by reporting), and a graph builder used by
//! the trainer so gradients flow through the same formula.

use crate::config::ExperimentConfig;
use crate::data::{ClassifierWeights, SyntheticBatch};
use crate::error::{Error, Result};
use crate::graph::{Node, Tape};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const BCE_CLAMP: f64 = 1e-7;
pub const LAMBDA_RATIO_FLOOR: f64 = 1e-8;

/// Per-step loss breakdown, emitted verbatim into the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_real: f64,
    pub l_syn: f64,
    pub l_d: f64,
    pub l_g: f64,
    pub l_total: f64,
    pub lambda_adv: f64,
    pub ratio_ema: f64,
}

impl LossReport {
    pub fn all_finite(&self) -> bool {
        [
            self.l_real,
            self.l_syn,
            self.l_d,
            self.l_g,
            self.l_total,
            self.lambda_adv,
            self.ratio_ema,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// l_total must recompose from its parts.
    pub fn composition_error(&self, lambda_speakers: usize) -> f64 {
        let expect = total_loss(
            self.l_real,
            self.l_syn,
            self.l_g,
            self.lambda_adv,
            lambda_speakers,
        );
        (self.l_total - expect).abs()
    }
}

/// Mean AM-Softmax loss over a batch of cosine logits.
pub fn am_softmax(logits: &Tensor, targets: &[usize], s: f64, m: f64) -> Result<f64> {
    assert_eq!(logits.rows, targets.len());
    let c = logits.cols;
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        if y >= c {
            return Err(Error::IndexOutOfRange { index: y, classes: c });
        }
        // margined target logit in both numerator and denominator
        let z: Vec<f64> = (0..c)
            .map(|j| {
                if j == y {
                    s * (logits.at(i, j) - m)
                } else {
                    s * logits.at(i, j)
                }
            })
            .collect();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    Ok(total / targets.len() as f64)
}

/// Cosine similarities between embedding rows and weight columns, [B x C].
pub fn cosine_logits(e: &Tensor, weights: &ClassifierWeights) -> Result<Tensor> {
    let w = &weights.w;
    if e.cols != w.rows {
        return Err(Error::Dimension {
            expected: w.rows,
            got: e.cols,
        });
    }
    let mut e_norms = vec![0.0; e.rows];
    for (i, n) in e_norms.iter_mut().enumerate() {
        *n = e.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if *n < 1e-12 {
            return Err(Error::Degenerate(format!("embedding row {i} has near-zero norm")));
        }
    }
    let mut w_norms = vec![0.0; w.cols];
    for (j, n) in w_norms.iter_mut().enumerate() {
        *n = (0..w.rows).map(|r| w.at(r, j) * w.at(r, j)).sum::<f64>().sqrt();
        if *n < 1e-12 {
            return Err(Error::Degenerate(format!("weight column {j} has near-zero norm")));
        }
    }
    let mut out = Tensor::zeros(e.rows, w.cols);
    for i in 0..e.rows {
        for j in 0..w.cols {
            let dot: f64 = (0..e.cols).map(|k| e.at(i, k) * w.at(k, j)).sum();
            out.data[i * w.cols + j] = dot / (e_norms[i] * w_norms[j]);
        }
    }
    Ok(out)
}

/// Concatenate real and synthetic weight columns: [d x (C + B')].
pub fn augmented_weights(weights: &ClassifierWeights, syn: &SyntheticBatch) -> ClassifierWeights {
    let d = weights.dim();
    let c = weights.class_count();
    let b = syn.weights.cols;
    let mut w = Tensor::zeros(d, c + b);
    for r in 0..d {
        for j in 0..c {
            *w.at_mut(r, j) = weights.w.at(r, j);
        }
        for j in 0..b {
            *w.at_mut(r, c + j) = syn.weights.at(r, j);
        }
    }
    ClassifierWeights { w }
}

/// AM-Softmax over synthetic embeddings. Scoring is against the concatenated
/// [W | W_syn] matrix by default; `against_all = false` scores against the
/// synthetic columns alone (ablation switch).
pub fn synthetic_loss(
    syn: &SyntheticBatch,
    weights: &ClassifierWeights,
    s: f64,
    m: f64,
    against_all: bool,
) -> Result<f64> {
    let c = weights.class_count();
    if against_all {
        let aug = augmented_weights(weights, syn);
        let logits = cosine_logits(&syn.embeddings, &aug)?;
        // row i's own synthetic column lives at C + (label - C) = label... the
        // label already encodes the registry position, but duplicated pairs
        // share a label while each row has its own column. Target the shared
        // registry column: first row with the same pair.
        let targets: Vec<usize> = targets_own_column(syn, c);
        am_softmax(&logits, &targets, s, m)
    } else {
        let logits = cosine_logits(&syn.embeddings, &ClassifierWeights { w: syn.weights.clone() })?;
        let targets: Vec<usize> = targets_own_column(syn, 0);
        am_softmax(&logits, &targets, s, m)
    }
}

/// Target column per synthetic row: the first column carrying the same
/// unordered pair, offset by the number of real columns.
pub fn syn_targets(pair_map: &[(usize, usize)], offset: usize) -> Vec<usize> {
    pair_map
        .iter()
        .map(|p| offset + pair_map.iter().position(|q| q == p).expect("pair present"))
        .collect()
}

fn targets_own_column(syn: &SyntheticBatch, offset: usize) -> Vec<usize> {
    syn_targets(&syn.pair_map, offset)
}

/// Binary cross-entropy on a probability, clamped away from {0, 1}.
pub fn bce(p: f64, target: u8) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    match target {
        1 => -p.ln(),
        _ => -(1.0 - p).ln(),
    }
}

fn mean_bce(probs: &[f64], target: u8) -> f64 {
    probs.iter().map(|&p| bce(p, target)).sum::<f64>() / probs.len() as f64
}

/// BCE(D(e), 1) + BCE(D(e_syn), 0), each term averaged over its batch.
pub fn discriminator_loss(d_real: &[f64], d_syn: &[f64]) -> f64 {
    mean_bce(d_real, 1) + mean_bce(d_syn, 0)
}

/// BCE(D(e_syn), 1) + BCE(D(e), 0). `include_real_term` drops the second term
/// for comparison runs.
pub fn generator_loss(d_real: &[f64], d_syn: &[f64], include_real_term: bool) -> f64 {
    let mut l = mean_bce(d_syn, 1);
    if include_real_term {
        l += mean_bce(d_real, 0);
    }
    l
}

/// EMA-smoothed, clipped linear map from the loss ratio to the adversarial
/// weight: ratio_ema' = beta * ratio_ema + (1 - beta) * l_real / l_g.
pub fn adapt_lambda(
    l_real: f64,
    l_g: f64,
    ratio_ema: f64,
    cfg: &ExperimentConfig,
) -> (f64, f64) {
    let ratio = l_real / l_g.max(LAMBDA_RATIO_FLOOR);
    let new_ema = cfg.ema_beta * ratio_ema + (1.0 - cfg.ema_beta) * ratio;
    let lambda = (cfg.lambda_adv_base * new_ema).clamp(cfg.lambda_adv_min, cfg.lambda_adv_max);
    (lambda, new_ema)
}

pub fn total_loss(l_real: f64, l_syn: f64, l_g: f64, lambda_adv: f64, lambda_speakers: usize) -> f64 {
    l_real + l_syn / lambda_speakers.max(1) as f64 + lambda_adv * l_g
}

// ---------------------------------------------------------------------------
// graph builders
// ---------------------------------------------------------------------------

/// Cosine logits on the tape: both sides L2-normalized at use time.
pub fn graph_cosine_logits(tape: &mut Tape, e: Node, w: Node) -> Node {
    let en = tape.l2_normalize_rows(e);
    let wt = tape.transpose(w);
    let wn = tape.l2_normalize_rows(wt);
    let wnt = tape.transpose(wn);
    tape.matmul(en, wnt)
}

/// AM-Softmax as graph nodes: mean(logsumexp(z) - z_y), z = s (cos - m 1_y).
pub fn graph_am_softmax(tape: &mut Tape, logits: Node, targets: &[usize], s: f64, m: f64) -> Node {
    let (b, c) = tape.value(logits).shape();
    assert_eq!(b, targets.len());
    let mut margin_mask = Tensor::zeros(b, c);
    for (i, &y) in targets.iter().enumerate() {
        margin_mask.data[i * c + y] = m;
    }
    let mask = tape.constant(margin_mask);
    let shifted = tape.sub(logits, mask);
    let z = tape.scale(shifted, s);
    let lse = tape.logsumexp_rows(z);
    let zy = tape.gather_cols(z, targets);
    let diff = tape.sub(lse, zy);
    let sum = tape.sum_all(diff);
    tape.scale(sum, 1.0 / b as f64)
}

/// Mean clamped BCE of a [B x 1] probability column against a constant target.
pub fn graph_bce_mean(tape: &mut Tape, probs: Node, target: u8) -> Node {
    let b = tape.value(probs).rows as f64;
    let pc = tape.clamp(probs, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let term = if target == 1 {
        tape.ln(pc)
    } else {
        let neg = tape.scale(pc, -1.0);
        let om = tape.add_scalar(neg, 1.0);
        tape.ln(om)
    };
    let s = tape.sum_all(term);
    tape.scale(s, -1.0 / b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{finite_difference, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn am_softmax_closed_forms() {
        // B=1, C=2, s=1, m=0, logits (1, 0), target 0 -> ln(1 + e^-1)
        let logits = Tensor::from_rows(&[vec![1.0, 0.0]]);
        let l = am_softmax(&logits, &[0], 1.0, 0.0).unwrap();
        assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.31326).abs() < 1e-5);

        // same with m = 0.2 -> -ln(e^0.8 / (e^0.8 + 1))
        let l = am_softmax(&logits, &[0], 1.0, 0.2).unwrap();
        let expect = -((0.8f64).exp() / ((0.8f64).exp() + 1.0)).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 0.37110).abs() < 1e-5);
    }

    #[test]
    fn am_softmax_uniform_is_log_c() {
        for c in [2usize, 3, 7] {
            let logits = Tensor::from_vec(1, c, vec![0.4; c]);
            let l = am_softmax(&logits, &[1], 2.0, 0.0).unwrap();
            assert!((l - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn am_softmax_out_of_range_target() {
        let logits = Tensor::from_rows(&[vec![1.0, 0.0]]);
        assert!(matches!(
            am_softmax(&logits, &[2], 1.0, 0.0),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn am_softmax_zero_margin_is_softmax_ce() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let b = rng.gen_range(1..5);
            let c = rng.gen_range(2..6);
            let logits = Tensor::from_vec(
                b,
                c,
                (0..b * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            );
            let targets: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
            let s = rng.gen_range(0.5..40.0);
            let ours = am_softmax(&logits, &targets, s, 0.0).unwrap();
            // independent softmax cross-entropy on s-scaled logits
            let mut expect = 0.0;
            for (i, &y) in targets.iter().enumerate() {
                let z: Vec<f64> = (0..c).map(|j| s * logits.at(i, j)).collect();
                let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                expect += lse - z[y];
            }
            expect /= b as f64;
            assert!((ours - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn am_softmax_increasing_in_margin() {
        let logits = Tensor::from_rows(&[vec![0.6, 0.4, -0.2]]);
        let a = am_softmax(&logits, &[0], 10.0, 0.1).unwrap();
        let b = am_softmax(&logits, &[0], 10.0, 0.1 + 1e-4).unwrap();
        assert!(b > a);
    }

    #[test]
    fn bce_reference_points() {
        assert!((bce(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(1.0 - 1e-7, 1) < 1.1e-7);
        assert!((bce(0.9, 0) - 2.302585).abs() < 1e-5);
    }

    #[test]
    fn discriminator_loss_points() {
        let l = discriminator_loss(&[0.5, 0.5], &[0.5, 0.5]);
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let l = discriminator_loss(&[1.0 - 1e-9], &[1e-9]);
        assert!(l < 1e-6);
        let l = discriminator_loss(&[0.9], &[0.2]);
        assert!((l - (-(0.9f64).ln() - (0.8f64).ln())).abs() < 1e-12);
        assert!((l - 0.32850).abs() < 1e-5);
    }

    #[test]
    fn generator_loss_points_and_symmetry() {
        let l = generator_loss(&[0.5], &[0.5], true);
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let l = generator_loss(&[0.9], &[0.2], true);
        assert!((l - (-(0.2f64).ln() - (0.1f64).ln())).abs() < 1e-12);
        assert!((l - 3.91202).abs() < 1e-5);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(0.01..0.99)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..0.99)).collect();
            assert_eq!(generator_loss(&a, &b, true), discriminator_loss(&b, &a));
        }
    }

    #[test]
    fn adapt_lambda_rule() {
        let cfg = ExperimentConfig {
            lambda_adv_base: 0.1,
            lambda_adv_min: 0.01,
            lambda_adv_max: 1.0,
            ema_beta: 0.9,
            ..Default::default()
        };
        // ratio_ema' = 5 -> lambda = 0.5; drive the EMA there exactly
        // beta * e + (1 - beta) * r = 5 with e = 5, r = 5
        let (lambda, ema) = adapt_lambda(5.0, 1.0, 5.0, &cfg);
        assert!((ema - 5.0).abs() < 1e-12);
        assert!((lambda - 0.5).abs() < 1e-12);

        let (lambda, _) = adapt_lambda(100.0, 1.0, 100.0, &cfg);
        assert_eq!(lambda, 1.0);

        let (_, ema) = adapt_lambda(2.0, 1.0, 1.0, &cfg);
        assert!((ema - 1.1).abs() < 1e-12);
    }

    #[test]
    fn adapt_lambda_stays_in_bounds() {
        let cfg = ExperimentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ema = 1.0;
        for _ in 0..200 {
            let l_real = rng.gen_range(0.0..50.0);
            let l_g = rng.gen_range(0.0..5.0);
            let (lambda, new_ema) = adapt_lambda(l_real, l_g, ema, &cfg);
            assert!(lambda >= cfg.lambda_adv_min && lambda <= cfg.lambda_adv_max);
            ema = new_ema;
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(1.0, 0.0, 0.0, 0.3, 17), 1.0);
        let l = total_loss(1.0, 2.0, 0.5, 0.1, 4);
        assert!((l - 1.55).abs() < 1e-12);
        let l = total_loss(0.0, 1211.0, 0.0, 0.0, 1211);
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_logit_identities() {
        let w = ClassifierWeights {
            w: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]),
        };
        let e = Tensor::from_rows(&[vec![3.0, 0.0], vec![1.0, 1.0]]);
        let logits = cosine_logits(&e, &w).unwrap();
        assert!((logits.at(0, 0) - 1.0).abs() < 1e-12);
        assert!(logits.at(0, 1).abs() < 1e-12);
        assert!((logits.at(1, 0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_logits_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let e = Tensor::from_vec(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let w = Tensor::from_vec(4, 5, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let base = cosine_logits(&e, &ClassifierWeights { w: w.clone() }).unwrap();
        let e2 = Tensor::from_vec(3, 4, e.data.iter().map(|v| v * 3.7).collect());
        let w2 = Tensor::from_vec(4, 5, w.data.iter().map(|v| v * 0.21).collect());
        let scaled = cosine_logits(&e2, &ClassifierWeights { w: w2 }).unwrap();
        for (a, b) in base.data.iter().zip(&scaled.data) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(base.data.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn cosine_logits_degenerate_norm() {
        let w = ClassifierWeights {
            w: Tensor::from_rows(&[vec![1.0], vec![0.0]]),
        };
        let e = Tensor::from_rows(&[vec![0.0, 0.0]]);
        assert!(matches!(cosine_logits(&e, &w), Err(Error::Degenerate(_))));
    }

    #[test]
    fn synthetic_loss_reduces_to_two_class_form() {
        // e_syn aligned with its own synthetic column, one orthogonal real class
        let syn = SyntheticBatch {
            embeddings: Tensor::from_rows(&[vec![1.0, 0.0]]),
            labels: vec![1],
            weights: Tensor::from_rows(&[vec![2.0], vec![0.0]]),
            pair_map: vec![(7, 8)],
        };
        let w = ClassifierWeights {
            w: Tensor::from_rows(&[vec![0.0], vec![1.0]]),
        };
        let l = synthetic_loss(&syn, &w, 1.0, 0.0, true).unwrap();
        let expect = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn synthetic_loss_single_column_is_zero() {
        // no real columns: single-class softmax is exactly zero
        let syn = SyntheticBatch {
            embeddings: Tensor::from_rows(&[vec![0.5, 0.5]]),
            labels: vec![0],
            weights: Tensor::from_rows(&[vec![1.0], vec![1.0]]),
            pair_map: vec![(0, 1)],
        };
        let l = synthetic_loss(
            &syn,
            &ClassifierWeights { w: Tensor::zeros(2, 0) },
            30.0,
            0.2,
            false,
        )
        .unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn synthetic_loss_matches_concatenation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let d = rng.gen_range(2..6);
            let c = rng.gen_range(1..4);
            let bp = rng.gen_range(1..4);
            let syn = SyntheticBatch {
                embeddings: Tensor::from_vec(
                    bp,
                    d,
                    (0..bp * d).map(|_| rng.gen_range(-1.0..1.0) + 0.1).collect(),
                ),
                labels: (0..bp).map(|i| c + i).collect(),
                weights: Tensor::from_vec(
                    d,
                    bp,
                    (0..bp * d).map(|_| rng.gen_range(-1.0..1.0) + 0.1).collect(),
                ),
                pair_map: (0..bp).map(|i| (i, i + 1)).collect(),
            };
            let w = ClassifierWeights {
                w: Tensor::from_vec(
                    d,
                    c,
                    (0..c * d).map(|_| rng.gen_range(-1.0..1.0) + 0.1).collect(),
                ),
            };
            let (s, m) = (rng.gen_range(1.0..30.0), rng.gen_range(0.0..0.3));
            let ours = synthetic_loss(&syn, &w, s, m, true).unwrap();
            // explicit concatenation oracle
            let aug = augmented_weights(&w, &syn);
            let logits = cosine_logits(&syn.embeddings, &aug).unwrap();
            let targets: Vec<usize> = (0..bp).map(|i| c + i).collect();
            let expect = am_softmax(&logits, &targets, s, m).unwrap();
            assert!((ours - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_losses_match_plain_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let b = 4;
        let c = 5;
        let logits = Tensor::from_vec(
            b,
            c,
            (0..b * c).map(|_| rng.gen_range(-0.9..0.9)).collect(),
        );
        let targets: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
        let mut tape = Tape::new();
        let ln = tape.leaf(logits.clone());
        let loss = graph_am_softmax(&mut tape, ln, &targets, 30.0, 0.2);
        let plain = am_softmax(&logits, &targets, 30.0, 0.2).unwrap();
        assert!((tape.scalar_value(loss) - plain).abs() < 1e-12);

        let probs: Vec<f64> = (0..b).map(|_| rng.gen_range(0.05..0.95)).collect();
        let pt = Tensor::from_vec(b, 1, probs.clone());
        let mut tape = Tape::new();
        let pn = tape.leaf(pt);
        let l1 = graph_bce_mean(&mut tape, pn, 1);
        let l0 = graph_bce_mean(&mut tape, pn, 0);
        let mean1 = probs.iter().map(|&p| bce(p, 1)).sum::<f64>() / b as f64;
        let mean0 = probs.iter().map(|&p| bce(p, 0)).sum::<f64>() / b as f64;
        assert!((tape.scalar_value(l1) - mean1).abs() < 1e-12);
        assert!((tape.scalar_value(l0) - mean0).abs() < 1e-12);
    }

    #[test]
    fn gradient_am_softmax_vs_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..10 {
            let b = rng.gen_range(1..4);
            let c = rng.gen_range(2..5);
            let logits = Tensor::from_vec(
                b,
                c,
                (0..b * c).map(|_| rng.gen_range(-0.9..0.9)).collect(),
            );
            let targets: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
            let mut tape = Tape::new();
            let ln = tape.leaf(logits.clone());
            let loss = graph_am_softmax(&mut tape, ln, &targets, 30.0, 0.2);
            tape.backward(loss);
            let analytic = tape.grad(ln).clone();
            let fd = finite_difference(&logits, 1e-5, |probe| {
                am_softmax(probe, &targets, 30.0, 0.2).unwrap()
            });
            assert!(max_relative_error(&analytic, &fd) < 1e-4);
        }
    }

    #[test]
    fn gradient_bce_pair_vs_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..10 {
            let b = rng.gen_range(1..5);
            let real = Tensor::from_vec(b, 1, (0..b).map(|_| rng.gen_range(0.1..0.9)).collect());
            let syn = Tensor::from_vec(b, 1, (0..b).map(|_| rng.gen_range(0.1..0.9)).collect());
            // discriminator loss gradient w.r.t. both probability vectors
            let build = |rv: &Tensor, sv: &Tensor| {
                let mut t = Tape::new();
                let rn = t.leaf(rv.clone());
                let sn = t.leaf(sv.clone());
                let a = graph_bce_mean(&mut t, rn, 1);
                let bterm = graph_bce_mean(&mut t, sn, 0);
                let l = t.add(a, bterm);
                (t, rn, sn, l)
            };
            let (mut tape, rn, sn, l) = build(&real, &syn);
            tape.backward(l);
            let fd_r = finite_difference(&real, 1e-6, |p| {
                discriminator_loss(&p.data, &syn.data)
            });
            let fd_s = finite_difference(&syn, 1e-6, |p| {
                discriminator_loss(&real.data, &p.data)
            });
            assert!(max_relative_error(tape.grad(rn), &fd_r) < 1e-4);
            assert!(max_relative_error(tape.grad(sn), &fd_s) < 1e-4);
        }
    }
}

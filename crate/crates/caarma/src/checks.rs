//! Named self-test properties: oracle comparisons, gradient checks, and
//! invariant probes. The CLI selftest runs each once at small sizes; the
//! acceptance suite reuses the same functions at full instance counts.

use crate::config::ExperimentConfig;
use crate::data::{ClassifierWeights, EmbeddingBatch};
use crate::discriminator::{spectral_normalize, SemanticDiscriminator};
use crate::error::{Error, Result};
use crate::eval::{compute_eer, compute_mindcf, eer_roc_walk_oracle, ScoredTrials};
use crate::graph::{finite_difference, max_relative_error, Tape};
use crate::losses::{
    adapt_lambda, am_softmax, discriminator_loss, generator_loss, graph_am_softmax,
    graph_bce_mean, graph_cosine_logits,
};
use crate::mixup::{mix_coefficient, sl_mixup};
use crate::nn::ParamSet;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn fail(name: &str, detail: impl std::fmt::Display) -> Error {
    Error::Validation(format!("{name}: {detail}"))
}

/// Brute-force SL-Mixup oracle for one random batch; bitwise comparison of
/// midpoints, labels, pair map, and mixed weight columns.
pub fn mixup_oracle_case(rng: &mut ChaCha8Rng) -> Result<()> {
    let c = rng.gen_range(2..=8usize);
    let d = rng.gen_range(2..=16usize);
    let b = rng.gen_range(2..=16usize);
    let weights = ClassifierWeights {
        w: rand_tensor(rng, d, c),
    };
    // force at least two distinct labels
    let mut labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
    if labels.iter().all(|&l| l == labels[0]) {
        labels[0] = (labels[0] + 1) % c;
    }
    let batch = EmbeddingBatch {
        embeddings: rand_tensor(rng, b, d),
        labels: labels.clone(),
        is_synthetic: false,
    };
    let got = sl_mixup(&batch, &weights)?;
    let coef = mix_coefficient();

    // independent rebuild: distances by explicit pair scan over batch labels
    let mut present: Vec<usize> = labels.clone();
    present.sort_unstable();
    present.dedup();
    let dist2 = |a: usize, bb: usize| -> f64 {
        (0..d)
            .map(|r| {
                let diff = weights.w.at(r, a) - weights.w.at(r, bb);
                diff * diff
            })
            .sum()
    };
    let mut registry: Vec<(usize, usize)> = Vec::new();
    for (row, &l1) in labels.iter().enumerate() {
        // nearest other label, smallest label on ties
        let mut candidates: Vec<(f64, usize)> = present
            .iter()
            .filter(|&&x| x != l1)
            .map(|&x| (dist2(l1, x), x))
            .collect();
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let l2 = candidates[0].1;
        let partner_row = labels.iter().position(|&y| y == l2).unwrap();
        let pair = (l1.min(l2), l1.max(l2));
        let pos = registry.iter().position(|&p| p == pair).unwrap_or_else(|| {
            registry.push(pair);
            registry.len() - 1
        });
        if got.pair_map[row] != pair {
            return Err(fail("mixup-oracle", format!("pair mismatch at row {row}")));
        }
        if got.labels[row] != c + pos {
            return Err(fail(
                "mixup-oracle",
                format!("label mismatch at row {row}: {} vs {}", got.labels[row], c + pos),
            ));
        }
        for k in 0..d {
            let expect = coef * (batch.embeddings.at(row, k) + batch.embeddings.at(partner_row, k));
            if got.embeddings.at(row, k) != expect {
                return Err(fail("mixup-oracle", format!("midpoint mismatch at ({row},{k})")));
            }
        }
        for r in 0..d {
            let expect = coef * (weights.w.at(r, l1) + weights.w.at(r, l2));
            if got.weights.at(r, row) != expect {
                return Err(fail("mixup-oracle", format!("weight column mismatch at row {row}")));
            }
        }
    }
    Ok(())
}

/// Synthetic embeddings sit exactly at the pair midpoint. Trips when the
/// mixing coefficient is tampered with (test hook).
pub fn check_mixup_midpoint() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let d = 6;
    let weights = ClassifierWeights {
        w: rand_tensor(&mut rng, d, 4),
    };
    let batch = EmbeddingBatch {
        embeddings: rand_tensor(&mut rng, 5, d),
        labels: vec![0, 1, 2, 3, 1],
        is_synthetic: false,
    };
    let syn = sl_mixup(&batch, &weights)?;
    // recompute each midpoint as the exact average of its two source rows
    let nmap = crate::mixup::compute_neighbors(&batch.labels, &weights)?;
    for (row, &l1) in batch.labels.iter().enumerate() {
        let l2 = nmap.neighbor[&l1];
        let j = batch.labels.iter().position(|&y| y == l2).unwrap();
        for k in 0..d {
            let mid = 0.5 * (batch.embeddings.at(row, k) + batch.embeddings.at(j, k));
            if (syn.embeddings.at(row, k) - mid).abs() > 1e-12 {
                return Err(fail(
                    "mixup-midpoint",
                    format!(
                        "synthetic row {row} is not the pair midpoint (entry {k}: {} vs {mid})",
                        syn.embeddings.at(row, k)
                    ),
                ));
            }
        }
    }
    Ok(())
}

pub fn check_mixup_oracle(instances: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..instances {
        mixup_oracle_case(&mut rng)?;
    }
    Ok(())
}

pub fn check_mixup_labels_disjoint() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..20 {
        let c = rng.gen_range(2..=8usize);
        let weights = ClassifierWeights {
            w: rand_tensor(&mut rng, 4, c),
        };
        let mut labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..c)).collect();
        if labels.iter().all(|&l| l == labels[0]) {
            labels[0] = (labels[0] + 1) % c;
        }
        let batch = EmbeddingBatch {
            embeddings: rand_tensor(&mut rng, 6, 4),
            labels,
            is_synthetic: false,
        };
        let syn = sl_mixup(&batch, &weights)?;
        if !syn.labels.iter().all(|&l| l >= c) {
            return Err(fail("mixup-labels-disjoint", "synthetic label below C"));
        }
    }
    Ok(())
}

/// AM-Softmax input gradients vs central finite differences.
pub fn check_grad_am_softmax(instances: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for i in 0..instances {
        let b = rng.gen_range(2..=6usize);
        let c = rng.gen_range(2..=6usize);
        let d = rng.gen_range(2..=6usize);
        let e = rand_tensor(&mut rng, b, d);
        let w = rand_tensor(&mut rng, d, c);
        let targets: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
        let s = rng.gen_range(5.0..30.0);
        let m = rng.gen_range(0.0..0.3);

        let run = |ev: &Tensor, wv: &Tensor| {
            let mut tape = Tape::new();
            let en = tape.leaf(ev.clone());
            let wn = tape.leaf(wv.clone());
            let logits = graph_cosine_logits(&mut tape, en, wn);
            let l = graph_am_softmax(&mut tape, logits, &targets, s, m);
            (tape, en, wn, l)
        };
        let (mut tape, en, wn, l) = run(&e, &w);
        // cross-check the graph value against the plain implementation
        let plain = am_softmax(
            &crate::losses::cosine_logits(&e, &ClassifierWeights { w: w.clone() })?,
            &targets,
            s,
            m,
        )?;
        if (tape.scalar_value(l) - plain).abs() > 1e-10 {
            return Err(fail("grad-am-softmax", "graph/plain value mismatch"));
        }
        tape.backward(l);
        let fd_e = finite_difference(&e, 1e-6, |p| {
            let (t, _, _, l) = run(p, &w);
            t.scalar_value(l)
        });
        let fd_w = finite_difference(&w, 1e-6, |p| {
            let (t, _, _, l) = run(&e, p);
            t.scalar_value(l)
        });
        let err = max_relative_error(tape.grad(en), &fd_e)
            .max(max_relative_error(tape.grad(wn), &fd_w));
        if err > 1e-4 {
            return Err(fail("grad-am-softmax", format!("instance {i}: rel error {err}")));
        }
    }
    Ok(())
}

/// Discriminator and generator BCE losses: probability-input gradients vs
/// finite differences, plus the exact label-swap symmetry.
pub fn check_grad_adversarial_losses(instances: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for i in 0..instances {
        let b = rng.gen_range(1..=6usize);
        let bp = rng.gen_range(1..=6usize);
        let real = Tensor::from_vec(b, 1, (0..b).map(|_| rng.gen_range(0.02..0.98)).collect());
        let syn = Tensor::from_vec(bp, 1, (0..bp).map(|_| rng.gen_range(0.02..0.98)).collect());

        if (discriminator_loss(&syn.data, &real.data)
            - generator_loss(&real.data, &syn.data, true))
        .abs()
            > 0.0
        {
            return Err(fail("grad-adversarial-losses", "symmetry violated"));
        }

        let run = |rv: &Tensor, sv: &Tensor| {
            let mut tape = Tape::new();
            let rn = tape.leaf(rv.clone());
            let sn = tape.leaf(sv.clone());
            let a = graph_bce_mean(&mut tape, rn, 1);
            let bterm = graph_bce_mean(&mut tape, sn, 0);
            let l = tape.add(a, bterm);
            (tape, rn, sn, l)
        };
        let (mut tape, rn, sn, l) = run(&real, &syn);
        let plain = discriminator_loss(&real.data, &syn.data);
        if (tape.scalar_value(l) - plain).abs() > 1e-12 {
            return Err(fail("grad-adversarial-losses", "graph/plain value mismatch"));
        }
        tape.backward(l);
        let fd_r = finite_difference(&real, 1e-7, |p| {
            let (t, _, _, l) = run(p, &syn);
            t.scalar_value(l)
        });
        let fd_s = finite_difference(&syn, 1e-7, |p| {
            let (t, _, _, l) = run(&real, p);
            t.scalar_value(l)
        });
        let err = max_relative_error(tape.grad(rn), &fd_r)
            .max(max_relative_error(tape.grad(sn), &fd_s));
        if err > 1e-4 {
            return Err(fail(
                "grad-adversarial-losses",
                format!("instance {i}: rel error {err}"),
            ));
        }
    }
    Ok(())
}

fn tiny_semantic(rng: &mut ChaCha8Rng) -> SemanticDiscriminator {
    let seed = rng.gen::<u64>();
    SemanticDiscriminator::new(8, 16, 2, 4, vec![1, 2], 0.0, 2, seed, rng)
}

/// Adapter parameter gradients vs finite differences at tiny sizes.
pub fn check_grad_adapter(instances: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for i in 0..instances {
        let disc = tiny_semantic(&mut rng);
        let x = rand_tensor(&mut rng, 3, 8);
        let loss_with = |params: &ParamSet| {
            let mut probe = disc.clone();
            probe.params = params.clone();
            let mut tape = Tape::new();
            let leaves = probe.params.leaves(&mut tape);
            let xn = tape.constant(x.clone());
            let out = probe.adapter_graph(&mut tape, &leaves, xn, None);
            let sq = tape.mul(out, out);
            let l = tape.sum_all(sq);
            tape.scalar_value(l)
        };
        let mut tape = Tape::new();
        let leaves = disc.params.leaves(&mut tape);
        let xn = tape.constant(x.clone());
        let out = disc.adapter_graph(&mut tape, &leaves, xn, None);
        let sq = tape.mul(out, out);
        let l = tape.sum_all(sq);
        tape.backward(l);
        for (pi, pname) in disc.params.names.iter().enumerate() {
            if !pname.starts_with("disc.adapter.") || pname == "disc.adapter.pos" {
                continue;
            }
            let analytic = tape.grad(leaves[pi]).clone();
            let fd = finite_difference(&disc.params.tensors[pi], 1e-5, |probe| {
                let mut ps = disc.params.clone();
                ps.tensors[pi] = probe.clone();
                loss_with(&ps)
            });
            let err = max_relative_error(&analytic, &fd);
            if err > 1e-3 {
                return Err(fail(
                    "grad-adapter",
                    format!("instance {i} param {pname}: rel error {err}"),
                ));
            }
        }
    }
    Ok(())
}

/// Attentive-pooling parameter gradients vs finite differences.
pub fn check_grad_mhap(instances: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for i in 0..instances {
        let disc = tiny_semantic(&mut rng);
        let hidden = rand_tensor(&mut rng, 4, 16);
        let loss_with = |params: &ParamSet| {
            let mut probe = disc.clone();
            probe.params = params.clone();
            let mut tape = Tape::new();
            let leaves = probe.params.leaves(&mut tape);
            let hn = tape.constant(hidden.clone());
            let mut alphas = Vec::new();
            let out = probe.mhap_graph(&mut tape, &leaves, hn, 1, 4, &mut alphas);
            let sq = tape.mul(out, out);
            let l = tape.sum_all(sq);
            tape.scalar_value(l)
        };
        let mut tape = Tape::new();
        let leaves = disc.params.leaves(&mut tape);
        let hn = tape.constant(hidden.clone());
        let mut alphas = Vec::new();
        let out = disc.mhap_graph(&mut tape, &leaves, hn, 1, 4, &mut alphas);
        let sq = tape.mul(out, out);
        let l = tape.sum_all(sq);
        tape.backward(l);
        for (pi, pname) in disc.params.names.iter().enumerate() {
            if !pname.starts_with("disc.pool.") {
                continue;
            }
            let analytic = tape.grad(leaves[pi]).clone();
            let fd = finite_difference(&disc.params.tensors[pi], 1e-5, |probe| {
                let mut ps = disc.params.clone();
                ps.tensors[pi] = probe.clone();
                loss_with(&ps)
            });
            let err = max_relative_error(&analytic, &fd);
            if err > 1e-3 {
                return Err(fail(
                    "grad-mhap",
                    format!("instance {i} param {pname}: rel error {err}"),
                ));
            }
        }
    }
    Ok(())
}

/// Full semantic discriminator parameter gradients vs finite differences.
/// The finite-difference sweep touches every parameter scalar twice per
/// instance, so this dominates the suite's runtime.
pub fn check_grad_full_discriminator(instances: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for i in 0..instances {
        let disc = tiny_semantic(&mut rng);
        let e = rand_tensor(&mut rng, 2, 8);
        let loss_with = |params: &ParamSet| -> Result<f64> {
            let mut probe = disc.clone();
            probe.params = params.clone();
            let mut tape = Tape::new();
            let leaves = probe.params.leaves(&mut tape);
            let en = tape.constant(e.clone());
            let probs = probe.forward(&mut tape, &leaves, en, None)?;
            let l = tape.sum_all(probs);
            Ok(tape.scalar_value(l))
        };
        let mut tape = Tape::new();
        let leaves = disc.params.leaves(&mut tape);
        let en = tape.constant(e.clone());
        let probs = disc.forward(&mut tape, &leaves, en, None)?;
        let l = tape.sum_all(probs);
        tape.backward(l);
        for (pi, pname) in disc.params.names.iter().enumerate() {
            let analytic = tape.grad(leaves[pi]).clone();
            let fd = finite_difference(&disc.params.tensors[pi], 1e-5, |probe| {
                let mut ps = disc.params.clone();
                ps.tensors[pi] = probe.clone();
                loss_with(&ps).expect("probe forward")
            });
            let err = max_relative_error(&analytic, &fd);
            if err > 1e-3 {
                return Err(fail(
                    "grad-full-discriminator",
                    format!("instance {i} param {pname}: rel error {err}"),
                ));
            }
        }
    }
    Ok(())
}

/// EER vs the independent ROC-walk oracle plus monotone invariance.
pub fn check_eer_oracle(instances: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for _ in 0..instances {
        let n = rng.gen_range(3..=14usize);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let st = ScoredTrials {
            scores: scores.clone(),
            labels: labels.clone(),
        };
        let (eer, _) = compute_eer(&st)?;
        let oracle = eer_roc_walk_oracle(&st)?;
        if (eer - oracle).abs() > 1e-12 {
            return Err(fail("eer-oracle", format!("{eer} vs oracle {oracle}")));
        }
        let warped = ScoredTrials {
            scores: scores.iter().map(|&s| s * s * s + 2.0 * s - 1.0).collect(),
            labels,
        };
        let (eer2, _) = compute_eer(&warped)?;
        if (eer - eer2).abs() > 1e-12 {
            return Err(fail("eer-oracle", "not invariant under monotone transform"));
        }
    }
    Ok(())
}

/// minDCF vs an exhaustive midpoint threshold sweep.
pub fn check_mindcf_oracle(instances: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    for _ in 0..instances {
        let n = rng.gen_range(4..=40usize);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let st = ScoredTrials {
            scores: scores.clone(),
            labels: labels.clone(),
        };
        let d = compute_mindcf(&st, 0.01, 1.0, 1.0)?;
        let n_tar = labels.iter().filter(|&&l| l).count();
        let n_non = n - n_tar;
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut cands = vec![sorted[0] - 1.0, sorted[n - 1] + 1.0];
        for w in sorted.windows(2) {
            cands.push(0.5 * (w[0] + w[1]));
        }
        cands.extend_from_slice(&sorted);
        let best = cands
            .iter()
            .map(|&t| {
                let fr = scores
                    .iter()
                    .zip(&labels)
                    .filter(|(s, l)| **l && **s < t)
                    .count() as f64
                    / n_tar as f64;
                let fa = scores
                    .iter()
                    .zip(&labels)
                    .filter(|(s, l)| !**l && **s >= t)
                    .count() as f64
                    / n_non as f64;
                (0.01 * fr + 0.99 * fa) / 0.01
            })
            .fold(f64::INFINITY, f64::min);
        if (d - best).abs() > 1e-12 {
            return Err(fail("mindcf-oracle", format!("{d} vs oracle {best}")));
        }
    }
    Ok(())
}

/// Spectral normalization keeps the estimated top singular value at 1.
pub fn check_spectral_norm_bound() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    for _ in 0..10 {
        let r = rng.gen_range(2..=10usize);
        let c = rng.gen_range(2..=10usize);
        let w = rand_tensor(&mut rng, r, c);
        let mut u = rand_tensor(&mut rng, 1, r);
        let nrm = u.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut u.data {
            *x /= nrm;
        }
        for _ in 0..400 {
            u = spectral_normalize(&w, &u).1;
        }
        let (n, _) = spectral_normalize(&w, &u);
        // measure sigma of the normalized matrix with a fresh long iteration
        let mut v = rand_tensor(&mut rng, 1, r);
        let nv = v.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v.data {
            *x /= nv;
        }
        for _ in 0..500 {
            v = spectral_normalize(&n, &v).1;
        }
        let uw = v.matmul(&n);
        let sigma = uw.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        if sigma > 1.0 + 1e-3 {
            return Err(fail("spectral-norm-bound", format!("sigma {sigma}")));
        }
    }
    Ok(())
}

/// The adaptive adversarial weight stays inside its configured bounds.
pub fn check_adapt_lambda_bounds() -> Result<()> {
    let cfg = ExperimentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(112);
    let mut ema = 1.0;
    for _ in 0..500 {
        let l_real = rng.gen_range(0.0..50.0);
        let l_g = rng.gen_range(0.0..50.0);
        let (lambda, new_ema) = adapt_lambda(l_real, l_g, ema, &cfg);
        ema = new_ema;
        if !(cfg.lambda_adv_min..=cfg.lambda_adv_max).contains(&lambda) {
            return Err(fail("adapt-lambda-bounds", format!("lambda {lambda}")));
        }
    }
    Ok(())
}

/// Attention weights sum to one on every forward.
pub fn check_attention_sums() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(113);
    let disc = tiny_semantic(&mut rng);
    for _ in 0..5 {
        let e = rand_tensor(&mut rng, 4, 8);
        let mut tape = Tape::new();
        let leaves = disc.params.leaves(&mut tape);
        let en = tape.constant(e);
        let art = disc.forward_full(&mut tape, &leaves, en, None)?;
        for a in &art.alphas {
            let t = tape.value(*a);
            for r in 0..t.rows {
                let sum: f64 = (0..t.cols).map(|c| t.at(r, c)).sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(fail("attention-sums", format!("row sum {sum}")));
                }
            }
        }
    }
    Ok(())
}

/// All selftest properties with small instance counts, in a fixed order.
pub fn selftest_properties() -> Vec<(&'static str, fn() -> Result<()>)> {
    vec![
        ("mixup-midpoint", check_mixup_midpoint as fn() -> Result<()>),
        ("mixup-oracle", || check_mixup_oracle(20)),
        ("mixup-labels-disjoint", check_mixup_labels_disjoint),
        ("grad-am-softmax", || check_grad_am_softmax(5)),
        ("grad-adversarial-losses", || check_grad_adversarial_losses(5)),
        ("grad-adapter", || check_grad_adapter(2)),
        ("grad-mhap", || check_grad_mhap(2)),
        ("grad-full-discriminator", || check_grad_full_discriminator(1)),
        ("eer-oracle", || check_eer_oracle(50)),
        ("mindcf-oracle", || check_mindcf_oracle(50)),
        ("spectral-norm-bound", check_spectral_norm_bound),
        ("adapt-lambda-bounds", check_adapt_lambda_bounds),
        ("attention-sums", check_attention_sums),
    ]
}

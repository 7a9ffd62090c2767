//! Zero-shot verification scoring: cosine trial scores, EER, minDCF, and
//! closed-set identification accuracy.

use crate::data::{Manifest, Trial, TrialList};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-trial scores paired with ground-truth target flags.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ScoredTrials {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredTrials {
    pub fn validate(&self) -> Result<()> {
        if self.scores.len() != self.labels.len() {
            return Err(Error::Validation("scores/labels length mismatch".into()));
        }
        if !self.scores.iter().all(|s| s.is_finite()) {
            return Err(Error::Validation("non-finite trial score".into()));
        }
        Ok(())
    }

    fn split_counts(&self) -> (usize, usize) {
        let t = self.labels.iter().filter(|&&l| l).count();
        (t, self.labels.len() - t)
    }
}

/// Verification summary for one trial list.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub target_trials: usize,
    pub nontarget_trials: usize,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return Err(Error::Degenerate("zero-norm embedding in trial".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Cosine-score every trial against the embedding table.
pub fn score_trials(
    trials: &TrialList,
    embeddings: &BTreeMap<String, Vec<f64>>,
) -> Result<ScoredTrials> {
    let mut scores = Vec::with_capacity(trials.trials.len());
    let mut labels = Vec::with_capacity(trials.trials.len());
    for t in &trials.trials {
        let e = embeddings
            .get(&t.enroll_id)
            .ok_or_else(|| Error::MissingUtterance(t.enroll_id.clone()))?;
        let s = embeddings
            .get(&t.test_id)
            .ok_or_else(|| Error::MissingUtterance(t.test_id.clone()))?;
        scores.push(cosine_similarity(e, s)?);
        labels.push(t.is_target);
    }
    Ok(ScoredTrials { scores, labels })
}

/// (false-accept rate, false-reject rate) with the accept-if-score>=threshold
/// convention.
fn rates_at(st: &ScoredTrials, threshold: f64) -> (f64, f64) {
    let (n_tar, n_non) = st.split_counts();
    let mut fa = 0usize;
    let mut fr = 0usize;
    for (s, l) in st.scores.iter().zip(&st.labels) {
        if *l && *s < threshold {
            fr += 1;
        }
        if !*l && *s >= threshold {
            fa += 1;
        }
    }
    (fa as f64 / n_non as f64, fr as f64 / n_tar as f64)
}

fn check_degenerate(st: &ScoredTrials) -> Result<()> {
    st.validate()?;
    let (t, n) = st.split_counts();
    if t == 0 || n == 0 {
        return Err(Error::DegenerateTrials);
    }
    Ok(())
}

/// Equal error rate with linear interpolation between adjacent operating
/// points when the false-accept and false-reject curves have no exact
/// crossing. Returns (eer, threshold at the crossing).
pub fn compute_eer(st: &ScoredTrials) -> Result<(f64, f64)> {
    check_degenerate(st)?;
    let mut thresholds: Vec<f64> = st.scores.clone();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    // walk thresholds upward: FRR rises from 0, FAR falls to 0
    let mut prev_t = thresholds[0] - 1.0;
    let (mut prev_fa, mut prev_fr) = rates_at(st, prev_t); // (1, 0)
    for &t in &thresholds {
        let (fa, fr) = rates_at(st, t);
        if fr >= fa {
            if (fr - fa).abs() < f64::EPSILON {
                return Ok((fr, t));
            }
            // interpolate across the segment where frr - far changes sign
            let d0 = prev_fr - prev_fa;
            let d1 = fr - fa;
            let alpha = -d0 / (d1 - d0);
            let eer = prev_fr + alpha * (fr - prev_fr);
            let thr = prev_t + alpha * (t - prev_t);
            return Ok((eer, thr));
        }
        prev_t = t;
        prev_fa = fa;
        prev_fr = fr;
    }
    // above the top score everything is rejected: FRR 1, FAR 0
    let d0 = prev_fr - prev_fa;
    let alpha = -d0 / (1.0 - d0);
    let eer = prev_fr + alpha * (1.0 - prev_fr);
    Ok((eer, prev_t + alpha))
}

/// Normalized minimum detection cost over all thresholds, including the
/// accept-all and reject-all decisions.
pub fn compute_mindcf(st: &ScoredTrials, p_target: f64, c_miss: f64, c_fa: f64) -> Result<f64> {
    check_degenerate(st)?;
    if !(0.0..=1.0).contains(&p_target) {
        return Err(Error::Validation("p_target outside [0,1]".into()));
    }
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    if norm <= 0.0 {
        return Err(Error::Validation("degenerate cost normalization".into()));
    }
    let mut thresholds: Vec<f64> = st.scores.clone();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let top = *thresholds.last().unwrap();
    thresholds.insert(0, thresholds[0] - 1.0); // accept everything
    thresholds.push(top + 1.0); // reject everything

    let mut best = f64::INFINITY;
    for &t in &thresholds {
        let (fa, fr) = rates_at(st, t);
        let cost = (c_miss * fr * p_target + c_fa * fa * (1.0 - p_target)) / norm;
        if cost < best {
            best = cost;
        }
    }
    Ok(best)
}

/// Fraction of rows whose argmax matches the target; ties break to the
/// lowest index.
pub fn identification_accuracy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    if logits.rows != targets.len() || logits.rows == 0 {
        return Err(Error::Validation("logit/target row mismatch".into()));
    }
    let mut correct = 0usize;
    for (r, &y) in targets.iter().enumerate() {
        let row = logits.row(r);
        let mut arg = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[arg] {
                arg = j;
            }
        }
        if arg == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / targets.len() as f64)
}

/// Full verification summary at the default operating costs.
pub fn summarize(st: &ScoredTrials, p_target: f64, c_miss: f64, c_fa: f64) -> Result<EvalSummary> {
    let (eer, thr) = compute_eer(st)?;
    let min_dcf = compute_mindcf(st, p_target, c_miss, c_fa)?;
    let (t, n) = st.split_counts();
    Ok(EvalSummary {
        eer,
        eer_threshold: thr,
        min_dcf,
        target_trials: t,
        nontarget_trials: n,
    })
}

/// Independent EER oracle: per-trial ROC walk in descending score order
/// with the same interpolation convention. Used by property tests and the
/// acceptance harness; assumes distinct scores.
pub fn eer_roc_walk_oracle(st: &ScoredTrials) -> Result<f64> {
    check_degenerate(st)?;
    let (n_tar, n_non) = st.split_counts();
    let mut order: Vec<usize> = (0..st.scores.len()).collect();
    order.sort_by(|&a, &b| st.scores[b].partial_cmp(&st.scores[a]).unwrap());

    // start rejecting everything, then accept one trial at a time
    let mut acc_tar = 0usize;
    let mut acc_non = 0usize;
    let mut prev = (0.0f64, 1.0f64); // (far, frr)
    for &i in &order {
        if st.labels[i] {
            acc_tar += 1;
        } else {
            acc_non += 1;
        }
        let far = acc_non as f64 / n_non as f64;
        let frr = (n_tar - acc_tar) as f64 / n_tar as f64;
        if far >= frr {
            let d0 = prev.1 - prev.0;
            let d1 = frr - far;
            if d0 == d1 {
                return Ok(frr);
            }
            let alpha = d0 / (d0 - d1);
            return Ok(prev.1 + alpha * (frr - prev.1));
        }
        prev = (far, frr);
    }
    Ok(prev.1)
}

/// Build a balanced trial list from a manifest: half same-speaker pairs over
/// distinct utterances, half cross-speaker pairs, deterministically from the
/// seed.
pub fn build_trials(manifest: &Manifest, n_trials: usize, seed: u64) -> Result<TrialList> {
    if n_trials < 2 {
        return Err(Error::Validation("need at least 2 trials".into()));
    }
    let mut by_speaker: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in &manifest.entries {
        by_speaker
            .entry(e.speaker_label.as_str())
            .or_default()
            .push(e.utterance_id.as_str());
    }
    let speakers: Vec<&str> = by_speaker.keys().copied().collect();
    let multi: Vec<&str> = speakers
        .iter()
        .copied()
        .filter(|s| by_speaker[s].len() >= 2)
        .collect();
    if multi.is_empty() {
        return Err(Error::Validation(
            "no speaker has two utterances; cannot form target trials".into(),
        ));
    }
    if speakers.len() < 2 {
        return Err(Error::Validation(
            "need at least two speakers for nontarget trials".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_target = n_trials / 2;
    let mut trials = Vec::with_capacity(n_trials);
    for _ in 0..n_target {
        let spk = multi[rng.gen_range(0..multi.len())];
        let utts = &by_speaker[spk];
        let a = rng.gen_range(0..utts.len());
        let b = loop {
            let b = rng.gen_range(0..utts.len());
            if b != a {
                break b;
            }
        };
        trials.push(Trial {
            is_target: true,
            enroll_id: utts[a].to_string(),
            test_id: utts[b].to_string(),
        });
    }
    for _ in n_target..n_trials {
        let s1 = rng.gen_range(0..speakers.len());
        let s2 = loop {
            let s2 = rng.gen_range(0..speakers.len());
            if s2 != s1 {
                break s2;
            }
        };
        let u1 = &by_speaker[speakers[s1]];
        let u2 = &by_speaker[speakers[s2]];
        trials.push(Trial {
            is_target: false,
            enroll_id: u1[rng.gen_range(0..u1.len())].to_string(),
            test_id: u2[rng.gen_range(0..u2.len())].to_string(),
        });
    }
    let list = TrialList { trials };
    list.validate()?;
    Ok(list)
}

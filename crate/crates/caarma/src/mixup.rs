//! SL-Mixup: per-batch synthesis of new classes by midpoint mixing in
//! embedding space, guided by classifier-weight proximity.

use crate::data::{ClassifierWeights, EmbeddingBatch, SyntheticBatch};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;

/// Test hook: overrides the mixing coefficient so the selftest can verify the
/// midpoint invariant actually trips on a corrupted build. Never set outside
/// fault-injection tests.
pub const MIX_COEF_ENV: &str = "CAARMA_TEST_MIX_COEF";

pub fn mix_coefficient() -> f64 {
    match std::env::var(MIX_COEF_ENV) {
        Ok(v) => v.parse().unwrap_or(0.5),
        Err(_) => 0.5,
    }
}

/// Nearest batch-label for every label present in the batch.
#[derive(Clone, Debug)]
pub struct NeighborMap {
    pub neighbor: BTreeMap<usize, usize>,
}

/// Neighbor search over raw (unnormalized) weight columns, restricted to
/// labels present in the batch. Ties break to the smallest label index.
pub fn compute_neighbors(
    labels_in_batch: &[usize],
    weights: &ClassifierWeights,
) -> Result<NeighborMap> {
    let mut labels: Vec<usize> = labels_in_batch.to_vec();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::SingleClass);
    }
    let d = weights.dim();
    let mut neighbor = BTreeMap::new();
    for &l in &labels {
        let mut best: Option<(f64, usize)> = None;
        for &j in &labels {
            if j == l {
                continue;
            }
            let mut dist2 = 0.0;
            for r in 0..d {
                let diff = weights.w.at(r, l) - weights.w.at(r, j);
                dist2 += diff * diff;
            }
            // strict less-than keeps the smallest label on ties
            if best.map(|(b, _)| dist2 < b).unwrap_or(true) {
                best = Some((dist2, j));
            }
        }
        neighbor.insert(l, best.expect("at least one other label").1);
    }
    Ok(NeighborMap { neighbor })
}

/// The batch-level mixing decisions, separated out so the training graph can
/// replay the same row/column mixing differentiably.
#[derive(Clone, Debug)]
pub struct MixPlan {
    /// per output row: (source row i, partner row index[i])
    pub source_rows: Vec<(usize, usize)>,
    /// per output row: unordered source-label pair (min, max)
    pub pairs: Vec<(usize, usize)>,
    /// per output row: synthetic label (>= C)
    pub labels: Vec<usize>,
}

pub fn mix_plan(batch: &EmbeddingBatch, weights: &ClassifierWeights) -> Result<MixPlan> {
    batch.validate()?;
    let nmap = compute_neighbors(&batch.labels, weights)?;
    let c = weights.class_count();
    let mut registry: Vec<(usize, usize)> = Vec::new();
    let mut source_rows = Vec::with_capacity(batch.labels.len());
    let mut pairs = Vec::with_capacity(batch.labels.len());
    let mut labels = Vec::with_capacity(batch.labels.len());
    for (i, &l1) in batch.labels.iter().enumerate() {
        let l2 = nmap.neighbor[&l1];
        // first row carrying the partner label
        let index = batch
            .labels
            .iter()
            .position(|&y| y == l2)
            .expect("neighbor label restricted to batch labels");
        let pair = (l1.min(l2), l1.max(l2));
        let pos = match registry.iter().position(|&p| p == pair) {
            Some(p) => p,
            None => {
                registry.push(pair);
                registry.len() - 1
            }
        };
        source_rows.push((i, index));
        pairs.push(pair);
        labels.push(c + pos);
    }
    Ok(MixPlan {
        source_rows,
        pairs,
        labels,
    })
}

/// Algorithm: for each batch row, mix its embedding with the first row of its
/// label's nearest-neighbor class, and mix the two weight columns likewise.
pub fn sl_mixup(batch: &EmbeddingBatch, weights: &ClassifierWeights) -> Result<SyntheticBatch> {
    let plan = mix_plan(batch, weights)?;
    let coef = mix_coefficient();
    let b = batch.embeddings.rows;
    let d = batch.embeddings.cols;
    let mut e_syn = Tensor::zeros(b, d);
    let mut w_syn = Tensor::zeros(weights.dim(), b);
    for (row, &(i, j)) in plan.source_rows.iter().enumerate() {
        for k in 0..d {
            e_syn.data[row * d + k] = coef * (batch.embeddings.at(i, k) + batch.embeddings.at(j, k));
        }
        let (l1, l2) = (batch.labels[i], plan.pairs[row]);
        let l2 = if l2.0 == l1 { l2.1 } else { l2.0 };
        for r in 0..weights.dim() {
            *w_syn.at_mut(r, row) = coef * (weights.w.at(r, l1) + weights.w.at(r, l2));
        }
    }
    Ok(SyntheticBatch {
        embeddings: e_syn,
        labels: plan.labels,
        weights: w_syn,
        pair_map: plan.pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights_from_cols(cols: &[Vec<f64>]) -> ClassifierWeights {
        let d = cols[0].len();
        let c = cols.len();
        let mut w = Tensor::zeros(d, c);
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                *w.at_mut(i, j) = v;
            }
        }
        ClassifierWeights { w }
    }

    #[test]
    fn neighbor_by_weight_distance() {
        // columns 0 unused; labels 1,2,3 in batch
        let w = weights_from_cols(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.9, 0.1],
        ]);
        let nmap = compute_neighbors(&[1, 2, 3], &w).unwrap();
        assert_eq!(nmap.neighbor[&1], 3); // 0.1414 < 1.4142
        assert_eq!(nmap.neighbor[&3], 1);
    }

    #[test]
    fn two_labels_are_mutual_neighbors() {
        let w = weights_from_cols(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let nmap = compute_neighbors(&[0, 1], &w).unwrap();
        assert_eq!(nmap.neighbor[&0], 1);
        assert_eq!(nmap.neighbor[&1], 0);
    }

    #[test]
    fn equidistant_tie_breaks_to_smallest_label() {
        let w = weights_from_cols(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
        ]);
        let nmap = compute_neighbors(&[0, 1, 2], &w).unwrap();
        assert_eq!(nmap.neighbor[&0], 1);
    }

    #[test]
    fn single_class_rejected() {
        let w = weights_from_cols(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(
            compute_neighbors(&[1, 1, 1], &w),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn midpoint_rows_and_columns() {
        let w = weights_from_cols(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.9, 0.1],
        ]);
        let batch = EmbeddingBatch {
            embeddings: Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]),
            labels: vec![1, 3],
            is_synthetic: false,
        };
        let syn = sl_mixup(&batch, &w).unwrap();
        assert_eq!(syn.embeddings.row(0), &[1.0, 1.0]);
        assert_eq!(syn.embeddings.row(1), &[1.0, 1.0]);
        // W_syn column = 0.5 (w1 + w3)
        assert_eq!(syn.weights.at(0, 0), 0.95);
        assert_eq!(syn.weights.at(1, 0), 0.05);
        // same unordered pair shares one synthetic label, numbered from C
        assert_eq!(syn.labels, vec![4, 4]);
        assert_eq!(syn.pair_map, vec![(1, 3), (1, 3)]);
    }

    #[test]
    fn two_row_batch_shares_synthetic_label_c() {
        let w = weights_from_cols(&[
            vec![0.0, 0.0],
            vec![0.0, 0.1],
            vec![0.0, 0.2],
            vec![0.0, 0.3],
            vec![0.0, 0.4],
            vec![1.0, 0.0],
            vec![0.0, 0.5],
            vec![0.0, 0.6],
            vec![0.0, 0.7],
            vec![0.0, 1.0],
        ]);
        let batch = EmbeddingBatch {
            embeddings: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            labels: vec![5, 9],
            is_synthetic: false,
        };
        let syn = sl_mixup(&batch, &w).unwrap();
        assert_eq!(syn.labels, vec![10, 10]);
    }

    #[test]
    fn deterministic_for_same_inputs() {
        let w = weights_from_cols(&[
            vec![0.3, -0.2],
            vec![-0.1, 0.8],
            vec![0.5, 0.5],
        ]);
        let batch = EmbeddingBatch {
            embeddings: Tensor::from_rows(&[
                vec![0.2, -0.4],
                vec![1.1, 0.3],
                vec![-0.5, 0.9],
            ]),
            labels: vec![0, 1, 2],
            is_synthetic: false,
        };
        let a = sl_mixup(&batch, &w).unwrap();
        let b = sl_mixup(&batch, &w).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.labels, b.labels);
    }
}

//! Named parameter storage and small graph-building helpers shared by the
//! encoder and discriminator networks.

use crate::graph::{Node, Tape};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// A flat registry of named parameter tensors. Networks hold indices into
/// one of these; the optimizer and checkpointing see only the registry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> usize {
        debug_assert!(!self.names.iter().any(|n| n == name), "duplicate param {name}");
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Push every parameter onto the tape as a leaf, in registry order.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Node> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Push every parameter as a gradient-stopping constant (detached view).
    pub fn constants(&self, tape: &mut Tape) -> Vec<Node> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }
}

pub fn normal_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("valid std");
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

/// Fan-in scaled init for linear/conv weights.
pub fn init_linear(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    normal_tensor(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
}

/// x [m x in] @ w [in x out] + b [1 x out]
pub fn linear(tape: &mut Tape, x: Node, w: Node, b: Node) -> Node {
    let xw = tape.matmul(x, w);
    tape.add_row_broadcast(xw, b)
}

/// LayerNorm with learned gain/bias rows.
pub fn layer_norm_affine(tape: &mut Tape, x: Node, gain: Node, bias: Node) -> Node {
    let normed = tape.layer_norm_rows(x, 1e-5);
    let scaled = tape.mul_row_broadcast(normed, gain);
    tape.add_row_broadcast(scaled, bias)
}

/// Inverted dropout: scales kept entries by 1/(1-rate). `None` rng means
/// inference mode (identity).
pub fn dropout(
    tape: &mut Tape,
    x: Node,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Node {
    match rng {
        Some(rng) if rate > 0.0 => {
            let (r, c) = tape.value(x).shape();
            let keep = 1.0 - rate;
            let mask = Tensor::from_vec(
                r,
                c,
                (0..r * c)
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect(),
            );
            tape.mask_mul(x, mask)
        }
        _ => x,
    }
}

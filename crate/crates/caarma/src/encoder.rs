//! Frame-sequence encoder producing fixed-dimension embeddings, plus the
//! AM-Softmax classification head.
//!
//! The encoder is two strided convolution-over-time blocks followed by one
//! self-attention block with residual, mean-pooled over frames and projected
//! to the embedding dimension. It handles any T >= 1 via "same" padding.

use crate::data::ClassifierWeights;
use crate::error::{Error, Result};
use crate::graph::{Node, Tape};
use crate::nn::{init_linear, layer_norm_affine, linear, normal_tensor, ParamSet};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

const CONV1_KERNEL: usize = 5;
const CONV1_STRIDE: usize = 3;
const CONV2_KERNEL: usize = 3;
const CONV2_STRIDE: usize = 2;

#[derive(Clone, Copy, Debug)]
struct Idx {
    conv1_w: usize,
    conv1_b: usize,
    ln1_g: usize,
    ln1_b: usize,
    conv2_w: usize,
    conv2_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln3_g: usize,
    ln3_b: usize,
    out_w: usize,
    out_b: usize,
}

#[derive(Clone, Debug)]
pub struct ReferenceEncoder {
    pub in_dim: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub params: ParamSet,
    idx: Idx,
}

impl ReferenceEncoder {
    pub fn new(in_dim: usize, channels: usize, embed_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        let ones = Tensor::from_vec(1, channels, vec![1.0; channels]);
        let zeros = Tensor::zeros(1, channels);
        let idx = Idx {
            conv1_w: params.add("enc.conv1.w", init_linear(rng, CONV1_KERNEL * in_dim, channels)),
            conv1_b: params.add("enc.conv1.b", Tensor::zeros(1, channels)),
            ln1_g: params.add("enc.ln1.g", ones.clone()),
            ln1_b: params.add("enc.ln1.b", zeros.clone()),
            conv2_w: params.add("enc.conv2.w", init_linear(rng, CONV2_KERNEL * channels, channels)),
            conv2_b: params.add("enc.conv2.b", Tensor::zeros(1, channels)),
            ln2_g: params.add("enc.ln2.g", ones.clone()),
            ln2_b: params.add("enc.ln2.b", zeros.clone()),
            wq: params.add("enc.attn.wq", init_linear(rng, channels, channels)),
            wk: params.add("enc.attn.wk", init_linear(rng, channels, channels)),
            wv: params.add("enc.attn.wv", init_linear(rng, channels, channels)),
            wo: params.add("enc.attn.wo", init_linear(rng, channels, channels)),
            ln3_g: params.add("enc.ln3.g", ones),
            ln3_b: params.add("enc.ln3.b", zeros),
            out_w: params.add("enc.out.w", init_linear(rng, channels, embed_dim)),
            out_b: params.add("enc.out.b", Tensor::zeros(1, embed_dim)),
        };
        ReferenceEncoder {
            in_dim,
            channels,
            embed_dim,
            params,
            idx,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Build the forward graph for one frame sequence. `leaves` must come
    /// from `self.params.leaves(tape)`.
    pub fn forward(&self, tape: &mut Tape, leaves: &[Node], frames: &Tensor) -> Node {
        assert_eq!(frames.cols, self.in_dim, "frame feature dim");
        let i = &self.idx;
        let x = tape.constant(frames.clone());
        let x = tape.layer_norm_rows(x, 1e-5);

        let win = tape.im2col_same(x, CONV1_KERNEL, CONV1_STRIDE);
        let c1 = linear(tape, win, leaves[i.conv1_w], leaves[i.conv1_b]);
        let n1 = layer_norm_affine(tape, c1, leaves[i.ln1_g], leaves[i.ln1_b]);
        let a1 = tape.gelu(n1);

        let win2 = tape.im2col_same(a1, CONV2_KERNEL, CONV2_STRIDE);
        let c2 = linear(tape, win2, leaves[i.conv2_w], leaves[i.conv2_b]);
        let n2 = layer_norm_affine(tape, c2, leaves[i.ln2_g], leaves[i.ln2_b]);
        let h = tape.gelu(n2);

        let q = tape.matmul(h, leaves[i.wq]);
        let k = tape.matmul(h, leaves[i.wk]);
        let v = tape.matmul(h, leaves[i.wv]);
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scaled = tape.scale(scores, 1.0 / (self.channels as f64).sqrt());
        let attn = tape.softmax_rows(scaled);
        let ctx = tape.matmul(attn, v);
        let o = tape.matmul(ctx, leaves[i.wo]);
        let res = tape.add(h, o);
        let h3 = layer_norm_affine(tape, res, leaves[i.ln3_g], leaves[i.ln3_b]);

        let pooled = tape.mean_rows(h3);
        linear(tape, pooled, leaves[i.out_w], leaves[i.out_b])
    }

    /// Inference-mode embedding of one frame sequence.
    pub fn encode(&self, frames: &Tensor) -> Result<Vec<f64>> {
        if frames.cols != self.in_dim {
            return Err(Error::Dimension {
                expected: self.in_dim,
                got: frames.cols,
            });
        }
        let mut tape = Tape::new();
        let leaves = self.params.leaves(&mut tape);
        let emb = self.forward(&mut tape, &leaves, frames);
        Ok(tape.value(emb).data.clone())
    }
}

/// AM-Softmax head: one weight column per class, initialized from a
/// unit-variance spherical distribution. Columns are L2-normalized only at
/// logit time.
#[derive(Clone, Debug)]
pub struct ClassificationHead {
    pub weights: ClassifierWeights,
}

impl ClassificationHead {
    pub fn new(embed_dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        ClassificationHead {
            weights: ClassifierWeights {
                w: normal_tensor(rng, embed_dim, classes, 1.0),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{finite_difference, max_relative_error};
    use rand::{Rng, SeedableRng};

    fn tiny_encoder(seed: u64) -> ReferenceEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ReferenceEncoder::new(6, 6, 8, &mut rng)
    }

    fn random_frames(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor {
        Tensor::from_vec(t, d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn output_dimension_matches_config() {
        let enc = tiny_encoder(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in [1usize, 2, 7, 30] {
            let frames = random_frames(&mut rng, t, 6);
            let e = enc.encode(&frames).unwrap();
            assert_eq!(e.len(), 8);
            assert!(e.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn inference_is_deterministic_and_stateless() {
        let enc = tiny_encoder(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames = random_frames(&mut rng, 12, 6);
        let a = enc.encode(&frames).unwrap();
        let b = enc.encode(&frames).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_feature_dim_rejected() {
        let enc = tiny_encoder(5);
        let frames = Tensor::zeros(4, 5);
        assert!(matches!(
            enc.encode(&frames),
            Err(Error::Dimension { expected: 6, got: 5 })
        ));
    }

    #[test]
    fn parameter_count_reported() {
        let enc = tiny_encoder(6);
        assert_eq!(enc.param_count(), enc.params.scalar_count());
        assert!(enc.param_count() > 0);
    }

    /// Analytic parameter gradients of a scalar loss match central finite
    /// differences at double precision.
    #[test]
    fn gradient_check_tiny_encoder() {
        let enc = tiny_encoder(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames = random_frames(&mut rng, 10, 6);

        let loss_with = |params: &ParamSet| -> f64 {
            let probe = ReferenceEncoder {
                params: params.clone(),
                ..enc.clone()
            };
            let mut tape = Tape::new();
            let leaves = probe.params.leaves(&mut tape);
            let emb = probe.forward(&mut tape, &leaves, &frames);
            let sq = tape.mul(emb, emb);
            let l = tape.sum_all(sq);
            tape.scalar_value(l)
        };

        let mut tape = Tape::new();
        let leaves = enc.params.leaves(&mut tape);
        let emb = enc.forward(&mut tape, &leaves, &frames);
        let sq = tape.mul(emb, emb);
        let l = tape.sum_all(sq);
        tape.backward(l);

        for (pi, leaf) in leaves.iter().enumerate() {
            let analytic = tape.grad(*leaf).clone();
            let fd = finite_difference(&enc.params.tensors[pi], 1e-5, |probe| {
                let mut ps = enc.params.clone();
                ps.tensors[pi] = probe.clone();
                loss_with(&ps)
            });
            let err = max_relative_error(&analytic, &fd);
            assert!(
                err < 1e-4,
                "param {} gradient mismatch: {err}",
                enc.params.names[pi]
            );
        }
    }
}

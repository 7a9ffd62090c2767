//! Real-vs-synthetic discriminator: an adapter bridging embeddings into a
//! frozen multi-layer backbone, per-layer projections with multi-head
//! attentive pooling, learned layer weighting, and a residual classifier
//! head. A plain fully-connected variant is provided for ablations.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::graph::{Node, Tape};
use crate::nn::{dropout, init_linear, layer_norm_affine, linear, normal_tensor, ParamSet};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LEAKY_SLOPE: f64 = 0.2;
const SIGMA_FLOOR: f64 = 1e-12;

/// One power-iteration step: estimates the top singular value of `w` from
/// the left-vector state `u` [1 x rows], returns (w / sigma, updated u).
pub fn spectral_normalize(w: &Tensor, u: &Tensor) -> (Tensor, Tensor) {
    assert_eq!(u.rows, 1);
    assert_eq!(u.cols, w.rows);
    let uw = u.matmul(w); // [1 x cols]
    let v = normalize_row(&uw);
    let wv = w.matmul(&v.transpose()); // [rows x 1]
    let sigma: f64 = (0..w.rows).map(|i| u.at(0, i) * wv.at(i, 0)).sum();
    let u_next = normalize_row(&wv.transpose());
    if sigma.abs() < SIGMA_FLOOR {
        return (w.clone(), u.clone());
    }
    let mut out = w.clone();
    for x in &mut out.data {
        *x /= sigma;
    }
    (out, u_next)
}

fn normalize_row(t: &Tensor) -> Tensor {
    let norm = t.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < SIGMA_FLOOR {
        return t.clone();
    }
    let mut out = t.clone();
    for x in &mut out.data {
        *x /= norm;
    }
    out
}

/// Graph-side spectral normalization. The power-iteration state `u` enters
/// as a constant so gradients flow only through `w`; `u` is advanced
/// separately after each optimizer step.
pub fn graph_spectral_normalize(tape: &mut Tape, w: Node, u: &Tensor) -> Node {
    if tape.value(w).frobenius_norm() < SIGMA_FLOOR {
        // degenerate all-zero matrix: leave untouched
        return w;
    }
    let uc = tape.constant(u.clone());
    let uw = tape.matmul(uc, w);
    let v = tape.l2_normalize_rows(uw);
    let vt = tape.transpose(v);
    let wv = tape.matmul(w, vt); // [rows x 1]
    let wvt = tape.transpose(wv);
    let sigma_row = tape.mul(uc, wvt);
    let sigma = tape.sum_all(sigma_row);
    tape.div_scalar_node(w, sigma)
}

fn spectral_u_init(rng: &mut ChaCha8Rng, rows: usize) -> Tensor {
    normalize_row(&normal_tensor(rng, 1, rows, 1.0))
}

/// Anything that turns an adapted sequence into per-layer hidden states.
pub trait Backbone {
    fn depth(&self) -> usize;
    fn frozen(&self) -> bool;
    /// `x` is [rows x h]; returns one [rows x h] state per layer, 1..=depth.
    fn hidden_states(&self, tape: &mut Tape, x: Node) -> Vec<Node>;
}

/// Frozen randomly-initialized mixing blocks standing in for a pretrained
/// sequence model. Deterministic given (hidden, depth, seed); its weights
/// live outside every ParamSet and are rebuilt from the seed on load.
#[derive(Clone, Debug)]
pub struct StubBackbone {
    pub hidden: usize,
    pub seed: u64,
    blocks: Vec<(Tensor, Tensor)>,
}

impl StubBackbone {
    pub fn new(hidden: usize, depth: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x4242);
        let blocks = (0..depth)
            .map(|_| {
                let w = init_linear(&mut rng, hidden, hidden);
                let b = normal_tensor(&mut rng, 1, hidden, 0.02);
                (w, b)
            })
            .collect();
        StubBackbone { hidden, seed, blocks }
    }

    pub fn block_weights(&self) -> &[(Tensor, Tensor)] {
        &self.blocks
    }
}

impl Backbone for StubBackbone {
    fn depth(&self) -> usize {
        self.blocks.len()
    }

    fn frozen(&self) -> bool {
        true
    }

    fn hidden_states(&self, tape: &mut Tape, x: Node) -> Vec<Node> {
        let mut states = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for (w, b) in &self.blocks {
            let wc = tape.constant(w.clone());
            let bc = tape.constant(b.clone());
            let pre = linear(tape, h, wc, bc);
            let act = tape.gelu(pre);
            let scaled = tape.scale(act, 0.5);
            h = tape.add(h, scaled);
            states.push(h);
        }
        states
    }
}

#[derive(Clone, Debug)]
struct LayerIdx {
    ln_g: usize,
    ln_b: usize,
    proj_w: usize,
    weight: usize,
}

#[derive(Clone, Debug)]
struct HeadIdx {
    w: usize,
    b: usize,
    v: usize,
}

#[derive(Clone, Debug)]
struct SemIdx {
    down_w: usize,
    down_b: usize,
    ln1_g: usize,
    ln1_b: usize,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    pos: usize,
    layers: Vec<LayerIdx>,
    pool: Vec<HeadIdx>,
    h1_w: usize,
    h1_b: usize,
    h2_w: usize,
    h2_b: usize,
    out_w: usize,
    out_b: usize,
}

/// Forward outputs: probabilities plus the per-head attention matrices
/// ([B x T] rows summing to 1) for invariant sweeps.
pub struct ForwardArtifacts {
    pub probs: Node,
    pub alphas: Vec<Node>,
}

#[derive(Clone, Debug)]
pub struct SemanticDiscriminator {
    pub embed_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub pseudo_len: usize,
    pub layers: Vec<usize>,
    pub dropout_rate: f64,
    pub backbone: StubBackbone,
    pub params: ParamSet,
    /// (param index, power-iteration u state) per spectral-normalized matrix
    pub sn_state: Vec<(usize, Tensor)>,
    idx: SemIdx,
}

impl SemanticDiscriminator {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        embed_dim: usize,
        hidden: usize,
        heads: usize,
        pseudo_len: usize,
        layers: Vec<usize>,
        dropout_rate: f64,
        backbone_depth: usize,
        backbone_seed: u64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(heads >= 1, "at least one pooling head");
        assert!(pseudo_len >= 1);
        let d = embed_dim;
        let h = hidden;
        let hh = heads * h;
        let mut params = ParamSet::new();
        let mut sn_state = Vec::new();
        let ones_h = Tensor::from_vec(1, h, vec![1.0; h]);

        let down_w = params.add("disc.adapter.down.w", init_linear(rng, d, h));
        sn_state.push((down_w, spectral_u_init(rng, d)));
        let idx_head = |params: &mut ParamSet, rng: &mut ChaCha8Rng, i: usize| HeadIdx {
            w: params.add(&format!("disc.pool.{i}.w"), init_linear(rng, h, h)),
            b: params.add(&format!("disc.pool.{i}.b"), Tensor::zeros(1, h)),
            v: params.add(&format!("disc.pool.{i}.v"), normal_tensor(rng, h, 1, 1.0 / (h as f64).sqrt())),
        };

        let idx = SemIdx {
            down_w,
            down_b: params.add("disc.adapter.down.b", Tensor::zeros(1, h)),
            ln1_g: params.add("disc.adapter.ln1.g", ones_h.clone()),
            ln1_b: params.add("disc.adapter.ln1.b", Tensor::zeros(1, h)),
            fc1_w: params.add("disc.adapter.fc1.w", init_linear(rng, h, h)),
            fc1_b: params.add("disc.adapter.fc1.b", Tensor::zeros(1, h)),
            fc2_w: params.add("disc.adapter.fc2.w", init_linear(rng, h, h)),
            fc2_b: params.add("disc.adapter.fc2.b", Tensor::zeros(1, h)),
            ln2_g: params.add("disc.adapter.ln2.g", ones_h.clone()),
            ln2_b: params.add("disc.adapter.ln2.b", Tensor::zeros(1, h)),
            pos: params.add("disc.adapter.pos", normal_tensor(rng, pseudo_len, h, 0.02)),
            layers: layers
                .iter()
                .map(|&l| {
                    let proj_w = params.add(&format!("disc.layer.{l}.proj.w"), init_linear(rng, h, h));
                    sn_state.push((proj_w, spectral_u_init(rng, h)));
                    LayerIdx {
                        ln_g: params.add(&format!("disc.layer.{l}.ln.g"), ones_h.clone()),
                        ln_b: params.add(&format!("disc.layer.{l}.ln.b"), Tensor::zeros(1, h)),
                        proj_w,
                        weight: params.add(
                            &format!("disc.layer.{l}.weight"),
                            Tensor::scalar(1.0 / layers.len() as f64),
                        ),
                    }
                })
                .collect(),
            pool: (0..heads).map(|i| idx_head(&mut params, rng, i)).collect(),
            h1_w: params.add("disc.head.1.w", init_linear(rng, hh, hh)),
            h1_b: params.add("disc.head.1.b", Tensor::zeros(1, hh)),
            h2_w: params.add("disc.head.2.w", init_linear(rng, hh, hh)),
            h2_b: params.add("disc.head.2.b", Tensor::zeros(1, hh)),
            out_w: params.add("disc.head.out.w", init_linear(rng, hh, 1)),
            out_b: params.add("disc.head.out.b", Tensor::zeros(1, 1)),
        };
        sn_state.push((idx.h1_w, spectral_u_init(rng, hh)));
        sn_state.push((idx.h2_w, spectral_u_init(rng, hh)));

        SemanticDiscriminator {
            embed_dim,
            hidden,
            heads,
            pseudo_len,
            layers,
            dropout_rate,
            backbone: StubBackbone::new(hidden, backbone_depth, backbone_seed),
            params,
            sn_state,
            idx,
        }
    }

    pub fn from_config(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Self {
        SemanticDiscriminator::new(
            cfg.embed_dim,
            cfg.disc_hidden,
            cfg.mhap_heads,
            cfg.pseudo_seq_len,
            cfg.backbone_layers.clone(),
            cfg.dropout,
            cfg.backbone_depth,
            cfg.seed,
            rng,
        )
    }

    fn u_for(&self, param_idx: usize) -> &Tensor {
        &self
            .sn_state
            .iter()
            .find(|(i, _)| *i == param_idx)
            .expect("spectral state present")
            .1
    }

    /// Advance every power-iteration state one step against the current
    /// weights. Call after each optimizer update.
    pub fn update_spectral_state(&mut self) {
        for (pi, u) in &mut self.sn_state {
            let (_, u_next) = spectral_normalize(&self.params.tensors[*pi], u);
            *u = u_next;
        }
    }

    /// Adapter transform + skip on a batch of embeddings [B x d] -> [B x h].
    pub fn adapter_graph(
        &self,
        tape: &mut Tape,
        leaves: &[Node],
        x: Node,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Node {
        let i = &self.idx;
        let down_w = graph_spectral_normalize(tape, leaves[i.down_w], self.u_for(i.down_w));
        let down = {
            let xw = tape.matmul(x, down_w);
            tape.add_row_broadcast(xw, leaves[i.down_b])
        };
        let n1 = layer_norm_affine(tape, down, leaves[i.ln1_g], leaves[i.ln1_b]);
        let f1 = linear(tape, n1, leaves[i.fc1_w], leaves[i.fc1_b]);
        let a1 = tape.gelu(f1);
        let a1 = dropout(tape, a1, self.dropout_rate, rng.as_deref_mut());
        let f2 = linear(tape, a1, leaves[i.fc2_w], leaves[i.fc2_b]);
        let n2 = layer_norm_affine(tape, f2, leaves[i.ln2_g], leaves[i.ln2_b]);
        let skip = if self.embed_dim == self.hidden {
            x
        } else {
            tape.resize_cols(x, self.hidden)
        };
        tape.add(n2, skip)
    }

    /// Single-vector adapter inference.
    pub fn adapter_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.embed_dim {
            return Err(Error::Dimension {
                expected: self.embed_dim,
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("adapter input not finite".into()));
        }
        let mut tape = Tape::new();
        let leaves = self.params.leaves(&mut tape);
        let xn = tape.constant(Tensor::from_vec(1, x.len(), x.to_vec()));
        let out = self.adapter_graph(&mut tape, &leaves, xn, None);
        Ok(tape.value(out).data.clone())
    }

    /// Multi-head attentive pooling over `hidden` [B·T x h] grouped into B
    /// blocks of T frames -> [B x H·h]. Collects per-head alpha matrices.
    pub fn mhap_graph(
        &self,
        tape: &mut Tape,
        leaves: &[Node],
        hidden: Node,
        b: usize,
        t: usize,
        alphas: &mut Vec<Node>,
    ) -> Node {
        let group = tape.constant(group_sum_matrix(b, t));
        let mut heads = Vec::with_capacity(self.heads);
        for head in &self.idx.pool {
            let f = linear(tape, hidden, leaves[head.w], leaves[head.b]);
            let f = tape.tanh(f);
            let s = tape.matmul(f, leaves[head.v]); // [B·T x 1]
            let sm = tape.reshape(s, b, t);
            let alpha = tape.softmax_rows(sm); // [B x T]
            alphas.push(alpha);
            let ac = tape.reshape(alpha, b * t, 1);
            let weighted = tape.mul_col_broadcast(hidden, ac);
            let mu = tape.matmul(group, weighted); // [B x h]
            heads.push(mu);
        }
        tape.concat_cols(&heads)
    }

    /// Single-sequence attentive pooling, [T x h] -> [H·h].
    pub fn mhap(&self, hidden: &Tensor) -> Vec<f64> {
        let mut tape = Tape::new();
        let leaves = self.params.leaves(&mut tape);
        let h = tape.constant(hidden.clone());
        let mut alphas = Vec::new();
        let out = self.mhap_graph(&mut tape, &leaves, h, 1, hidden.rows, &mut alphas);
        tape.value(out).data.clone()
    }

    /// Layer-norm, spectrally-normalized projection and pooling per selected
    /// layer, weighted-summed into one [B x H·h] feature.
    pub fn combine_graph(
        &self,
        tape: &mut Tape,
        leaves: &[Node],
        states: &[Node],
        b: usize,
        t: usize,
        alphas: &mut Vec<Node>,
    ) -> Result<Node> {
        let mut total: Option<Node> = None;
        for (li, &l) in self.layers.iter().enumerate() {
            if l == 0 || l > states.len() {
                return Err(Error::MissingLayer(l));
            }
            let lidx = &self.idx.layers[li];
            let n = layer_norm_affine(tape, states[l - 1], leaves[lidx.ln_g], leaves[lidx.ln_b]);
            let pw = graph_spectral_normalize(tape, leaves[lidx.proj_w], self.u_for(lidx.proj_w));
            let p = tape.matmul(n, pw);
            let pooled = self.mhap_graph(tape, leaves, p, b, t, alphas);
            let term = tape.mul_scalar_node(pooled, leaves[lidx.weight]);
            total = Some(match total {
                Some(acc) => tape.add(acc, term),
                None => term,
            });
        }
        total.ok_or_else(|| Error::Validation("no layers selected".into()))
    }

    /// Full forward: adapter, pseudo-sequence, backbone, layer combination,
    /// residual head. `e` is [B x d]; probabilities come back as [B x 1].
    pub fn forward_full(
        &self,
        tape: &mut Tape,
        leaves: &[Node],
        e: Node,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardArtifacts> {
        let i = &self.idx;
        let b = tape.value(e).rows;
        let t = self.pseudo_len;
        let adapted = self.adapter_graph(tape, leaves, e, rng.as_deref_mut());

        let expand = tape.constant(expand_matrix(b, t));
        let tile = tape.constant(tile_matrix(b, t));
        let rep = tape.matmul(expand, adapted); // [B·T x h]
        let pos = tape.matmul(tile, leaves[i.pos]);
        let seq = tape.add(rep, pos);

        let states = self.backbone.hidden_states(tape, seq);
        let mut alphas = Vec::new();
        let combined = self.combine_graph(tape, leaves, &states, b, t, &mut alphas)?;

        let mut x = combined;
        for (w, bb) in [(i.h1_w, i.h1_b), (i.h2_w, i.h2_b)] {
            let wn = graph_spectral_normalize(tape, leaves[w], self.u_for(w));
            let y = {
                let xw = tape.matmul(x, wn);
                tape.add_row_broadcast(xw, leaves[bb])
            };
            let y = tape.leaky_relu(y, LEAKY_SLOPE);
            let y = dropout(tape, y, self.dropout_rate, rng.as_deref_mut());
            x = tape.add(x, y);
        }
        let logit = linear(tape, x, leaves[i.out_w], leaves[i.out_b]);
        let probs = tape.sigmoid(logit);
        Ok(ForwardArtifacts { probs, alphas })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        leaves: &[Node],
        e: Node,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Node> {
        Ok(self.forward_full(tape, leaves, e, rng)?.probs)
    }

    /// Inference-mode probabilities for a batch of embeddings.
    pub fn discriminate(&self, e: &Tensor) -> Result<Vec<f64>> {
        if e.cols != self.embed_dim {
            return Err(Error::Dimension {
                expected: self.embed_dim,
                got: e.cols,
            });
        }
        let mut tape = Tape::new();
        let leaves = self.params.leaves(&mut tape);
        let en = tape.constant(e.clone());
        let probs = self.forward(&mut tape, &leaves, en, None)?;
        Ok(tape.value(probs).data.clone())
    }
}

/// Three spectrally-normalized fully-connected layers with leaky rectifier
/// activations; the non-semantic ablation head.
#[derive(Clone, Debug)]
pub struct PlainDiscriminator {
    pub embed_dim: usize,
    pub hidden: usize,
    pub params: ParamSet,
    pub sn_state: Vec<(usize, Tensor)>,
    w: [usize; 3],
    b: [usize; 3],
}

impl PlainDiscriminator {
    pub fn new(embed_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        let mut sn_state = Vec::new();
        let dims = [(embed_dim, hidden), (hidden, hidden), (hidden, 1)];
        let mut w = [0usize; 3];
        let mut b = [0usize; 3];
        for (k, (fi, fo)) in dims.iter().enumerate() {
            w[k] = params.add(&format!("pdisc.{k}.w"), init_linear(rng, *fi, *fo));
            b[k] = params.add(&format!("pdisc.{k}.b"), Tensor::zeros(1, *fo));
            sn_state.push((w[k], spectral_u_init(rng, *fi)));
        }
        PlainDiscriminator {
            embed_dim,
            hidden,
            params,
            sn_state,
            w,
            b,
        }
    }

    pub fn update_spectral_state(&mut self) {
        for (pi, u) in &mut self.sn_state {
            let (_, u_next) = spectral_normalize(&self.params.tensors[*pi], u);
            *u = u_next;
        }
    }

    pub fn forward(&self, tape: &mut Tape, leaves: &[Node], e: Node) -> Node {
        let mut x = e;
        for k in 0..3 {
            let u = &self
                .sn_state
                .iter()
                .find(|(i, _)| *i == self.w[k])
                .expect("spectral state")
                .1;
            let wn = graph_spectral_normalize(tape, leaves[self.w[k]], u);
            let xw = tape.matmul(x, wn);
            x = tape.add_row_broadcast(xw, leaves[self.b[k]]);
            if k < 2 {
                x = tape.leaky_relu(x, LEAKY_SLOPE);
            }
        }
        tape.sigmoid(x)
    }

    pub fn discriminate(&self, e: &Tensor) -> Result<Vec<f64>> {
        if e.cols != self.embed_dim {
            return Err(Error::Dimension {
                expected: self.embed_dim,
                got: e.cols,
            });
        }
        let mut tape = Tape::new();
        let leaves = self.params.leaves(&mut tape);
        let en = tape.constant(e.clone());
        let probs = self.forward(&mut tape, &leaves, en);
        Ok(tape.value(probs).data.clone())
    }
}

/// Either discriminator flavor behind one interface for the trainer.
#[derive(Clone, Debug)]
pub enum DiscriminatorModel {
    Semantic(SemanticDiscriminator),
    Plain(PlainDiscriminator),
}

impl DiscriminatorModel {
    pub fn params(&self) -> &ParamSet {
        match self {
            DiscriminatorModel::Semantic(d) => &d.params,
            DiscriminatorModel::Plain(d) => &d.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            DiscriminatorModel::Semantic(d) => &mut d.params,
            DiscriminatorModel::Plain(d) => &mut d.params,
        }
    }

    pub fn sn_state(&self) -> &[(usize, Tensor)] {
        match self {
            DiscriminatorModel::Semantic(d) => &d.sn_state,
            DiscriminatorModel::Plain(d) => &d.sn_state,
        }
    }

    pub fn sn_state_mut(&mut self) -> &mut Vec<(usize, Tensor)> {
        match self {
            DiscriminatorModel::Semantic(d) => &mut d.sn_state,
            DiscriminatorModel::Plain(d) => &mut d.sn_state,
        }
    }

    pub fn update_spectral_state(&mut self) {
        match self {
            DiscriminatorModel::Semantic(d) => d.update_spectral_state(),
            DiscriminatorModel::Plain(d) => d.update_spectral_state(),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        leaves: &[Node],
        e: Node,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Node> {
        match self {
            DiscriminatorModel::Semantic(d) => d.forward(tape, leaves, e, rng),
            DiscriminatorModel::Plain(d) => Ok(d.forward(tape, leaves, e)),
        }
    }

    pub fn discriminate(&self, e: &Tensor) -> Result<Vec<f64>> {
        match self {
            DiscriminatorModel::Semantic(d) => d.discriminate(e),
            DiscriminatorModel::Plain(d) => d.discriminate(e),
        }
    }
}

/// [B·T x B] selector repeating each input row T times.
fn expand_matrix(b: usize, t: usize) -> Tensor {
    let mut m = Tensor::zeros(b * t, b);
    for i in 0..b {
        for j in 0..t {
            *m.at_mut(i * t + j, i) = 1.0;
        }
    }
    m
}

/// [B·T x T] selector tiling a [T x h] block B times.
fn tile_matrix(b: usize, t: usize) -> Tensor {
    let mut m = Tensor::zeros(b * t, t);
    for i in 0..b {
        for j in 0..t {
            *m.at_mut(i * t + j, j) = 1.0;
        }
    }
    m
}

/// [B x B·T] block row-sum over each group of T frames.
fn group_sum_matrix(b: usize, t: usize) -> Tensor {
    let mut m = Tensor::zeros(b, b * t);
    for i in 0..b {
        for j in 0..t {
            *m.at_mut(i, i * t + j) = 1.0;
        }
    }
    m
}

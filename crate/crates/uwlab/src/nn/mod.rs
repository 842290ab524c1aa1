//! Minimal reverse-mode autodiff runtime for the trainable detectors.
//!
//! Define-by-run tape over dense `f64` tensors ([`Tensor`] is the crate's
//! row-major real matrix). The op set is exactly what the detectors need:
//! affine layers, per-sample constant-matrix products, ReLU/SELU, row
//! softmax, layer/batch normalization, dropout, single-head self-attention,
//! one-hot symbol expectation, concatenation/slicing, residual blends, and a
//! mean-squared loss.
//!
//! Every forward op adds its real-multiplication cost to the graph's
//! counter using the same accounting as the analytic complexity calculator:
//! products and scales count, additions/biases/activations/softmax
//! internals/dropout count zero, normalization counts two per element, and
//! the cheap residual blend of the feedforward detector is deliberately
//! excluded (`skip_blend`) while the iterative detector's relaxation blends
//! (`lerp`) are counted.

pub mod checkpoint;
pub mod optim;

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use crate::numerics::RMatrix as Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// SELU constants (self-normalizing networks).
pub const SELU_LAMBDA: f64 = 1.0507009873554804934193349852946;
pub const SELU_ALPHA: f64 = 1.6732632423543772848170429916717;

const LAYER_NORM_EPS: f64 = 1e-6;

enum Op {
    Const,
    Param { index: usize },
    MatMul { a: NodeId, b: NodeId },
    AddBias { x: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    ScaleByParam { s: NodeId, x: NodeId },
    Lerp { prev: NodeId, next: NodeId, alpha: f64 },
    SkipBlend { new: NodeId, prev: NodeId, alpha: f64 },
    BatchMatVec { x: NodeId, mats: Rc<Vec<Tensor>> },
    Relu { x: NodeId },
    Selu { x: NodeId },
    SoftmaxRows { x: NodeId },
    LayerNormRows { x: NodeId, gain: NodeId, bias: NodeId },
    BatchNormCols { x: NodeId, gain: NodeId, bias: NodeId },
    Dropout { x: NodeId },
    ConcatCols { a: NodeId, b: NodeId },
    SliceCols { x: NodeId, start: usize, len: usize },
    ReshapeRows { x: NodeId, group: usize },
    OneHotExpect { x: NodeId, symbols: Vec<f64> },
    SelfAttention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        rows: usize,
        scale: f64,
    },
    QuadraticLoss { pred: NodeId, target: Rc<Tensor> },
    WeightedSum { terms: Vec<(NodeId, f64)> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    /// cached forward intermediates needed by backward (softmax probs,
    /// normalization statistics, dropout masks, attention weights)
    aux: Option<Tensor>,
}

/// The tape. Create one per forward/backward pass.
pub struct Graph {
    nodes: Vec<Node>,
    /// Training mode: dropout active, batch-norm uses batch statistics.
    pub training: bool,
    mults: u64,
    dropout_rng: ChaCha8Rng,
}

impl Graph {
    /// `seed` drives dropout masks only; eval-mode graphs ignore it.
    pub fn new(training: bool, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            training,
            mults: 0,
            dropout_rng: crate::rng::substream(seed, crate::rng::StreamDomain::Dropout, 0),
        }
    }

    /// Real multiplications spent by all forward ops so far.
    pub fn mults(&self) -> u64 {
        self.mults
    }

    /// Account for multiplications spent outside the graph (input
    /// preparation done in plain code before tensors enter the tape).
    pub fn add_external_mults(&mut self, m: u64) {
        self.mults += m;
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, aux: Option<Tensor>) -> NodeId {
        self.nodes.push(Node {
            value: Rc::new(value),
            op,
            aux,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf with no gradient.
    pub fn constant(&mut self, t: Rc<Tensor>) -> NodeId {
        self.nodes.push(Node {
            value: t,
            op: Op::Const,
            aux: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant_owned(&mut self, t: Tensor) -> NodeId {
        self.constant(Rc::new(t))
    }

    /// Leaf whose gradient is reported under `index` by [`Graph::backward`].
    pub fn param(&mut self, index: usize, t: Rc<Tensor>) -> NodeId {
        self.nodes.push(Node {
            value: t,
            op: Op::Param { index },
            aux: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// `A·B`. Counts `m·k·n` multiplications.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = self.value(a);
        let vb = self.value(b);
        let out = va.matmul(vb);
        self.mults += (va.rows * va.cols * vb.cols) as u64;
        self.push(out, Op::MatMul { a, b }, None)
    }

    /// Broadcast-add a `1×n` bias row. Free.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let vx = self.value(x);
        let vb = self.value(b);
        assert_eq!(vb.rows, 1, "bias must be a row");
        assert_eq!(vb.cols, vx.cols, "bias width");
        let mut out = vx.clone();
        for r in 0..out.rows {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&vb.data) {
                *o += bv;
            }
        }
        self.push(out, Op::AddBias { x, b }, None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols));
        let mut out = va.clone();
        for (o, v) in out.data.iter_mut().zip(&vb.data) {
            *o += v;
        }
        self.push(out, Op::Add { a, b }, None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols));
        let mut out = va.clone();
        for (o, v) in out.data.iter_mut().zip(&vb.data) {
            *o -= v;
        }
        self.push(out, Op::Sub { a, b }, None)
    }

    /// Multiply by a trainable scalar (`1×1` node). Counts one per element.
    pub fn scale_by_param(&mut self, s: NodeId, x: NodeId) -> NodeId {
        let sv = {
            let t = self.value(s);
            assert_eq!((t.rows, t.cols), (1, 1), "scale must be 1×1");
            t.data[0]
        };
        let vx = self.value(x);
        let mut out = vx.clone();
        for o in &mut out.data {
            *o *= sv;
        }
        self.mults += (vx.rows * vx.cols) as u64;
        self.push(out, Op::ScaleByParam { s, x }, None)
    }

    /// Counted relaxation blend `prev + α·(next − prev)` with fixed `α`
    /// (one multiplication per element).
    pub fn lerp(&mut self, prev: NodeId, next: NodeId, alpha: f64) -> NodeId {
        let vp = self.value(prev);
        let vn = self.value(next);
        assert_eq!((vp.rows, vp.cols), (vn.rows, vn.cols));
        let mut out = vp.clone();
        for (o, n) in out.data.iter_mut().zip(&vn.data) {
            *o += alpha * (n - *o);
        }
        self.mults += (vp.rows * vp.cols) as u64;
        self.push(out, Op::Lerp { prev, next, alpha }, None)
    }

    /// Uncounted skip blend `new + α·prev` (the feedforward detector's
    /// residual; its published cost model omits this term, so the counter
    /// must too).
    pub fn skip_blend(&mut self, new: NodeId, prev: NodeId, alpha: f64) -> NodeId {
        let vn = self.value(new);
        let vp = self.value(prev);
        assert_eq!((vp.rows, vp.cols), (vn.rows, vn.cols));
        let mut out = vn.clone();
        for (o, p) in out.data.iter_mut().zip(&vp.data) {
            *o += alpha * p;
        }
        self.push(out, Op::SkipBlend { new, prev, alpha }, None)
    }

    /// Per-sample constant matrix–vector product: row `b` of the output is
    /// `mats[b] · x[b,:]`. Counts `m·n` per sample.
    pub fn batch_matvec(&mut self, mats: Rc<Vec<Tensor>>, x: NodeId) -> NodeId {
        let vx = self.value(x);
        assert_eq!(vx.rows, mats.len(), "one matrix per sample");
        let m = mats[0].rows;
        let n = mats[0].cols;
        assert_eq!(vx.cols, n, "batch_matvec width");
        let mut out = Tensor::zeros(vx.rows, m);
        for b in 0..vx.rows {
            let xrow = vx.row(b);
            for i in 0..m {
                let mut acc = 0.0;
                for (a, xv) in mats[b].row(i).iter().zip(xrow) {
                    acc += a * xv;
                }
                out.set(b, i, acc);
            }
        }
        self.mults += (vx.rows * m * n) as u64;
        self.push(out, Op::BatchMatVec { x, mats }, None)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(out, Op::Relu { x }, None)
    }

    pub fn selu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            *v = if *v > 0.0 {
                SELU_LAMBDA * *v
            } else {
                SELU_LAMBDA * SELU_ALPHA * (v.exp() - 1.0)
            };
        }
        self.push(out, Op::Selu { x }, None)
    }

    /// Row-wise softmax. Free under the multiplication accounting.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let mut out = vx.clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows { x }, None)
    }

    /// Row-wise layer normalization with gain and bias (`1×n` params).
    /// Counts two multiplications per element.
    pub fn layer_norm_rows(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let vx = self.value(x).clone();
        let vg = self.value(gain).clone();
        let vb = self.value(bias).clone();
        assert_eq!(vg.cols, vx.cols);
        assert_eq!(vb.cols, vx.cols);
        let mut out = Tensor::zeros(vx.rows, vx.cols);
        // aux rows: per input row [mu, inv_sigma]
        let mut aux = Tensor::zeros(vx.rows, 2);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for c in 0..vx.cols {
                out.set(r, c, (row[c] - mu) * inv * vg.data[c] + vb.data[c]);
            }
            aux.set(r, 0, mu);
            aux.set(r, 1, inv);
        }
        self.mults += 2 * (vx.rows * vx.cols) as u64;
        self.push(out, Op::LayerNormRows { x, gain, bias }, Some(aux))
    }

    /// Column-wise batch normalization (batch statistics; needs ≥ 2 rows).
    /// Counts two multiplications per element.
    pub fn batch_norm_cols(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let vx = self.value(x).clone();
        assert!(vx.rows >= 2, "batch normalization needs at least two rows");
        let vg = self.value(gain).clone();
        let vb = self.value(bias).clone();
        let mut out = Tensor::zeros(vx.rows, vx.cols);
        let mut aux = Tensor::zeros(2, vx.cols); // [mu; inv_sigma] per column
        let n = vx.rows as f64;
        for c in 0..vx.cols {
            let mut mu = 0.0;
            for r in 0..vx.rows {
                mu += vx.get(r, c);
            }
            mu /= n;
            let mut var = 0.0;
            for r in 0..vx.rows {
                let d = vx.get(r, c) - mu;
                var += d * d;
            }
            var /= n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for r in 0..vx.rows {
                out.set(r, c, (vx.get(r, c) - mu) * inv * vg.data[c] + vb.data[c]);
            }
            aux.set(0, c, mu);
            aux.set(1, c, inv);
        }
        self.mults += 2 * (vx.rows * vx.cols) as u64;
        self.push(out, Op::BatchNormCols { x, gain, bias }, Some(aux))
    }

    /// Inverted dropout: in training, zero with probability `rate` and scale
    /// survivors by `1/(1−rate)`; identity in eval mode. Free.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> NodeId {
        assert!((0.0..1.0).contains(&rate), "dropout rate in [0,1)");
        if !self.training || rate == 0.0 {
            let out = self.value(x).clone();
            let mask = Tensor::from_vec(1, 1, vec![1.0]); // sentinel: identity
            return self.push(out, Op::Dropout { x }, Some(mask));
        }
        let vx = self.value(x).clone();
        let keep = 1.0 - rate;
        let mut mask = Tensor::zeros(vx.rows, vx.cols);
        for m in &mut mask.data {
            *m = if self.dropout_rng.gen::<f64>() < rate {
                0.0
            } else {
                1.0 / keep
            };
        }
        let mut out = vx;
        for (o, m) in out.data.iter_mut().zip(&mask.data) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x }, Some(mask))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.rows, vb.rows);
        let mut out = Tensor::zeros(va.rows, va.cols + vb.cols);
        for r in 0..va.rows {
            out.row_mut(r)[..va.cols].copy_from_slice(va.row(r));
            out.row_mut(r)[va.cols..].copy_from_slice(vb.row(r));
        }
        self.push(out, Op::ConcatCols { a, b }, None)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let vx = self.value(x);
        assert!(start + len <= vx.cols);
        let mut out = Tensor::zeros(vx.rows, len);
        for r in 0..vx.rows {
            out.row_mut(r).copy_from_slice(&vx.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start, len }, None)
    }

    /// Merge each group of `group` consecutive rows into one row (row-major
    /// data is unchanged). Free.
    pub fn reshape_rows(&mut self, x: NodeId, group: usize) -> NodeId {
        let vx = self.value(x);
        assert_eq!(vx.rows % group, 0);
        let out = Tensor::from_vec(vx.rows / group, vx.cols * group, vx.data.clone());
        self.push(out, Op::ReshapeRows { x, group }, None)
    }

    /// Per-block expectation over symbol values: input rows are blocks of
    /// `symbols.len()` scores; output element `i` is `Σ_j symbols[j]·x[i·S+j]`.
    /// Counts `S` multiplications per output element.
    pub fn onehot_expect(&mut self, x: NodeId, symbols: &[f64]) -> NodeId {
        let vx = self.value(x);
        let s = symbols.len();
        assert_eq!(vx.cols % s, 0, "block size must divide width");
        let blocks = vx.cols / s;
        let mut out = Tensor::zeros(vx.rows, blocks);
        for r in 0..vx.rows {
            let row = vx.row(r);
            for i in 0..blocks {
                let mut acc = 0.0;
                for (j, sym) in symbols.iter().enumerate() {
                    acc += sym * row[i * s + j];
                }
                out.set(r, i, acc);
            }
        }
        self.mults += (vx.rows * vx.cols) as u64;
        self.push(
            out,
            Op::OneHotExpect {
                x,
                symbols: symbols.to_vec(),
            },
            None,
        )
    }

    /// Single-head scaled dot-product self-attention over per-sample blocks
    /// of `rows` rows: scores `Q_b·K_bᵀ/√d_k`, row softmax, times `V_b`.
    /// Counts `rows²·(2·cols+1)` per sample (two products plus the score
    /// scaling; softmax itself is free).
    pub fn self_attention(&mut self, q: NodeId, k: NodeId, v: NodeId, rows: usize) -> NodeId {
        let (vq, vk, vv) = (
            self.value(q).clone(),
            self.value(k).clone(),
            self.value(v).clone(),
        );
        assert_eq!(vq.rows, vk.rows);
        assert_eq!(vq.rows, vv.rows);
        assert_eq!(vq.cols, vk.cols);
        assert_eq!(vq.rows % rows, 0, "batch must divide into sample blocks");
        let scale = 1.0 / (vk.cols as f64).sqrt();
        let batch = vq.rows / rows;
        let mut out = Tensor::zeros(vq.rows, vv.cols);
        let mut attn = Tensor::zeros(vq.rows, rows);
        for b in 0..batch {
            let r0 = b * rows;
            for i in 0..rows {
                // scores against every key row of the same sample
                for j in 0..rows {
                    let mut acc = 0.0;
                    for (qa, ka) in vq.row(r0 + i).iter().zip(vk.row(r0 + j)) {
                        acc += qa * ka;
                    }
                    attn.set(r0 + i, j, acc * scale);
                }
                softmax_in_place(attn.row_mut(r0 + i));
                for c in 0..vv.cols {
                    let mut acc = 0.0;
                    for j in 0..rows {
                        acc += attn.get(r0 + i, j) * vv.get(r0 + j, c);
                    }
                    out.set(r0 + i, c, acc);
                }
            }
        }
        self.mults += (batch * rows * rows * (2 * vq.cols + 1)) as u64;
        self.push(
            out,
            Op::SelfAttention {
                q,
                k,
                v,
                rows,
                scale,
            },
            Some(attn),
        )
    }

    /// Mean over batch rows of the squared error against a fixed target.
    pub fn quadratic_loss(&mut self, pred: NodeId, target: Rc<Tensor>) -> NodeId {
        let vp = self.value(pred);
        assert_eq!((vp.rows, vp.cols), (target.rows, target.cols));
        let mut acc = 0.0;
        for (p, t) in vp.data.iter().zip(&target.data) {
            let d = p - t;
            acc += d * d;
        }
        let out = Tensor::from_vec(1, 1, vec![acc / vp.rows as f64]);
        self.push(out, Op::QuadraticLoss { pred, target }, None)
    }

    /// Fixed-weight sum of scalar (1×1) nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let mut acc = 0.0;
        for (id, w) in terms {
            let t = self.value(*id);
            assert_eq!((t.rows, t.cols), (1, 1), "weighted_sum needs scalars");
            acc += w * t.data[0];
        }
        let out = Tensor::from_vec(1, 1, vec![acc]);
        self.push(
            out,
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            None,
        )
    }

    /// Reverse sweep from a scalar `loss` node; returns one gradient per
    /// parameter index in `0..n_params` (None where a parameter never
    /// entered the graph).
    pub fn backward(&mut self, loss: NodeId, n_params: usize) -> Vec<Option<Tensor>> {
        {
            let lt = self.value(loss);
            assert_eq!((lt.rows, lt.cols), (1, 1), "loss must be scalar");
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));
        let mut param_grads: Vec<Option<Tensor>> = (0..n_params).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Const => {}
                Op::Param { index } => accumulate_opt(&mut param_grads[*index], &g),
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let da = g.matmul_transb(self.value(b));
                    let db = self.value(a).transpose().matmul(&g);
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::AddBias { x, b } => {
                    let (x, b) = (*x, *b);
                    let mut db = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (d, gv) in db.data.iter_mut().zip(g.row(r)) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut grads, x, g);
                    accumulate(&mut grads, b, db);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    let mut neg = g.clone();
                    for v in &mut neg.data {
                        *v = -*v;
                    }
                    accumulate(&mut grads, a, g);
                    accumulate(&mut grads, b, neg);
                }
                Op::ScaleByParam { s, x } => {
                    let (s, x) = (*s, *x);
                    let sv = self.value(s).data[0];
                    let vx = self.value(x);
                    let mut ds = 0.0;
                    for (gv, xv) in g.data.iter().zip(&vx.data) {
                        ds += gv * xv;
                    }
                    let mut dx = g;
                    for v in &mut dx.data {
                        *v *= sv;
                    }
                    accumulate(&mut grads, s, Tensor::from_vec(1, 1, vec![ds]));
                    accumulate(&mut grads, x, dx);
                }
                Op::Lerp { prev, next, alpha } => {
                    let (prev, next, alpha) = (*prev, *next, *alpha);
                    let mut dp = g.clone();
                    for v in &mut dp.data {
                        *v *= 1.0 - alpha;
                    }
                    let mut dn = g;
                    for v in &mut dn.data {
                        *v *= alpha;
                    }
                    accumulate(&mut grads, prev, dp);
                    accumulate(&mut grads, next, dn);
                }
                Op::SkipBlend { new, prev, alpha } => {
                    let (new, prev, alpha) = (*new, *prev, *alpha);
                    let mut dp = g.clone();
                    for v in &mut dp.data {
                        *v *= alpha;
                    }
                    accumulate(&mut grads, new, g);
                    accumulate(&mut grads, prev, dp);
                }
                Op::BatchMatVec { x, mats } => {
                    let x = *x;
                    let mats = Rc::clone(mats);
                    let m = mats[0].rows;
                    let n = mats[0].cols;
                    let mut dx = Tensor::zeros(g.rows, n);
                    for b in 0..g.rows {
                        for i in 0..m {
                            let gv = g.get(b, i);
                            if gv == 0.0 {
                                continue;
                            }
                            for (d, a) in dx.row_mut(b).iter_mut().zip(mats[b].row(i)) {
                                *d += gv * a;
                            }
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Relu { x } => {
                    let x = *x;
                    let vx = self.value(x);
                    let mut dx = g;
                    for (d, xv) in dx.data.iter_mut().zip(&vx.data) {
                        if *xv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Selu { x } => {
                    let x = *x;
                    let vx = self.value(x);
                    let mut dx = g;
                    for (d, xv) in dx.data.iter_mut().zip(&vx.data) {
                        *d *= if *xv > 0.0 {
                            SELU_LAMBDA
                        } else {
                            SELU_LAMBDA * SELU_ALPHA * xv.exp()
                        };
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::SoftmaxRows { x } => {
                    let x = *x;
                    let p = Rc::clone(&self.nodes[idx].value);
                    let mut dx = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let dot: f64 = g.row(r).iter().zip(p.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..g.cols {
                            dx.set(r, c, p.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::LayerNormRows { x, gain, bias } => {
                    let (x, gain, bias) = (*x, *gain, *bias);
                    let vx = Rc::clone(&self.nodes[x.0].value);
                    let vg = Rc::clone(&self.nodes[gain.0].value);
                    let aux = self.nodes[idx].aux.as_ref().unwrap().clone();
                    let n = vx.cols as f64;
                    let mut dx = Tensor::zeros(vx.rows, vx.cols);
                    let mut dg = Tensor::zeros(1, vx.cols);
                    let mut db = Tensor::zeros(1, vx.cols);
                    for r in 0..vx.rows {
                        let mu = aux.get(r, 0);
                        let inv = aux.get(r, 1);
                        // xhat and the two row means the jacobian needs
                        let xhat: Vec<f64> =
                            vx.row(r).iter().map(|v| (v - mu) * inv).collect();
                        let dy: Vec<f64> =
                            g.row(r).iter().zip(&vg.data).map(|(a, b)| a * b).collect();
                        let mean_dy: f64 = dy.iter().sum::<f64>() / n;
                        let mean_dy_xhat: f64 =
                            dy.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..vx.cols {
                            dx.set(
                                r,
                                c,
                                inv * (dy[c] - mean_dy - xhat[c] * mean_dy_xhat),
                            );
                            dg.data[c] += g.get(r, c) * xhat[c];
                            db.data[c] += g.get(r, c);
                        }
                    }
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, gain, dg);
                    accumulate(&mut grads, bias, db);
                }
                Op::BatchNormCols { x, gain, bias } => {
                    let (x, gain, bias) = (*x, *gain, *bias);
                    let vx = Rc::clone(&self.nodes[x.0].value);
                    let vg = Rc::clone(&self.nodes[gain.0].value);
                    let aux = self.nodes[idx].aux.as_ref().unwrap().clone();
                    let n = vx.rows as f64;
                    let mut dx = Tensor::zeros(vx.rows, vx.cols);
                    let mut dg = Tensor::zeros(1, vx.cols);
                    let mut db = Tensor::zeros(1, vx.cols);
                    for c in 0..vx.cols {
                        let mu = aux.get(0, c);
                        let inv = aux.get(1, c);
                        let xhat: Vec<f64> =
                            (0..vx.rows).map(|r| (vx.get(r, c) - mu) * inv).collect();
                        let dy: Vec<f64> = (0..vx.rows).map(|r| g.get(r, c) * vg.data[c]).collect();
                        let mean_dy: f64 = dy.iter().sum::<f64>() / n;
                        let mean_dy_xhat: f64 =
                            dy.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                        for r in 0..vx.rows {
                            dx.set(
                                r,
                                c,
                                inv * (dy[r] - mean_dy - xhat[r] * mean_dy_xhat),
                            );
                            dg.data[c] += g.get(r, c) * xhat[r];
                            db.data[c] += g.get(r, c);
                        }
                    }
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, gain, dg);
                    accumulate(&mut grads, bias, db);
                }
                Op::Dropout { x } => {
                    let x = *x;
                    let mask = self.nodes[idx].aux.as_ref().unwrap();
                    let mut dx = g;
                    if mask.data.len() == dx.data.len() {
                        for (d, m) in dx.data.iter_mut().zip(&mask.data) {
                            *d *= m;
                        }
                    } // else: identity sentinel
                    accumulate(&mut grads, x, dx);
                }
                Op::ConcatCols { a, b } => {
                    let (a, b) = (*a, *b);
                    let ca = self.value(a).cols;
                    let cb = self.value(b).cols;
                    let mut da = Tensor::zeros(g.rows, ca);
                    let mut db = Tensor::zeros(g.rows, cb);
                    for r in 0..g.rows {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::SliceCols { x, start, len } => {
                    let (x, start, len) = (*x, *start, *len);
                    let vx = self.value(x);
                    let mut dx = Tensor::zeros(vx.rows, vx.cols);
                    for r in 0..g.rows {
                        dx.row_mut(r)[start..start + len].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::ReshapeRows { x, group } => {
                    let (x, group) = (*x, *group);
                    let dx = Tensor::from_vec(g.rows * group, g.cols / group, g.data.clone());
                    accumulate(&mut grads, x, dx);
                }
                Op::OneHotExpect { x, symbols } => {
                    let x = *x;
                    let symbols = symbols.clone();
                    let s = symbols.len();
                    let vx = self.value(x);
                    let mut dx = Tensor::zeros(vx.rows, vx.cols);
                    for r in 0..g.rows {
                        for i in 0..g.cols {
                            let gv = g.get(r, i);
                            for (j, sym) in symbols.iter().enumerate() {
                                dx.set(r, i * s + j, gv * sym);
                            }
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::SelfAttention {
                    q,
                    k,
                    v,
                    rows,
                    scale,
                } => {
                    let (q, k, v, rows, scale) = (*q, *k, *v, *rows, *scale);
                    let vq = Rc::clone(&self.nodes[q.0].value);
                    let vk = Rc::clone(&self.nodes[k.0].value);
                    let vv = Rc::clone(&self.nodes[v.0].value);
                    let attn = self.nodes[idx].aux.as_ref().unwrap().clone();
                    let batch = vq.rows / rows;
                    let mut dq = Tensor::zeros(vq.rows, vq.cols);
                    let mut dk = Tensor::zeros(vk.rows, vk.cols);
                    let mut dv = Tensor::zeros(vv.rows, vv.cols);
                    for b in 0..batch {
                        let r0 = b * rows;
                        // dV = Aᵀ·dO ; dA = dO·Vᵀ ; dS = A⊙(dA − rowsum(dA⊙A))
                        for i in 0..rows {
                            for j in 0..rows {
                                let a_ij = attn.get(r0 + i, j);
                                for c in 0..vv.cols {
                                    dv.data[(r0 + j) * vv.cols + c] +=
                                        a_ij * g.get(r0 + i, c);
                                }
                            }
                        }
                        for i in 0..rows {
                            let mut da = vec![0.0f64; rows];
                            for (j, daj) in da.iter_mut().enumerate() {
                                let mut acc = 0.0;
                                for c in 0..vv.cols {
                                    acc += g.get(r0 + i, c) * vv.get(r0 + j, c);
                                }
                                *daj = acc;
                            }
                            let dot: f64 = da
                                .iter()
                                .enumerate()
                                .map(|(j, d)| d * attn.get(r0 + i, j))
                                .sum();
                            for (j, daj) in da.iter().enumerate() {
                                let ds = attn.get(r0 + i, j) * (daj - dot) * scale;
                                // dQ_i += ds·K_j ; dK_j += ds·Q_i
                                for c in 0..vq.cols {
                                    dq.data[(r0 + i) * vq.cols + c] += ds * vk.get(r0 + j, c);
                                    dk.data[(r0 + j) * vk.cols + c] += ds * vq.get(r0 + i, c);
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, q, dq);
                    accumulate(&mut grads, k, dk);
                    accumulate(&mut grads, v, dv);
                }
                Op::QuadraticLoss { pred, target } => {
                    let pred = *pred;
                    let target = Rc::clone(target);
                    let vp = self.value(pred);
                    let scale = 2.0 / vp.rows as f64 * g.data[0];
                    let mut dp = Tensor::zeros(vp.rows, vp.cols);
                    for ((d, p), t) in dp.data.iter_mut().zip(&vp.data).zip(&target.data) {
                        *d = scale * (p - t);
                    }
                    accumulate(&mut grads, pred, dp);
                }
                Op::WeightedSum { terms } => {
                    let terms = terms.clone();
                    for (id, w) in terms {
                        accumulate(
                            &mut grads,
                            id,
                            Tensor::from_vec(1, 1, vec![w * g.data[0]]),
                        );
                    }
                }
            }
        }
        param_grads
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    accumulate_opt(&mut grads[id.0], &g);
}

fn accumulate_opt(slot: &mut Option<Tensor>, g: &Tensor) {
    match slot {
        None => *slot = Some(g.clone()),
        Some(acc) => {
            assert_eq!((acc.rows, acc.cols), (g.rows, g.cols));
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
    }
}

/// Glorot-uniform initialization for a `fan_in × fan_out` weight matrix.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

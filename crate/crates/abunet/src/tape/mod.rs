//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A `Tape` records primitive operations during the forward pass in
//! topological order; `backward` replays them in reverse, accumulating
//! gradients by the chain rule. One forward/backward pair owns the tape
//! exclusively, and every kernel runs in a fixed order, so results are
//! bit-reproducible within one build.

pub mod batchnorm;
pub mod conv;
pub mod linalg;
pub mod loss;
pub mod pool;
pub mod unary;

pub use unary::{swish, swish_grad, UnaryFn, ELU_ALPHA, SELU_ALPHA, SELU_LAMBDA};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

impl ValueId {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Slot<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
}

enum Op<S> {
    Leaf,
    Add {
        a: ValueId,
        b: ValueId,
    },
    Mul {
        a: ValueId,
        b: ValueId,
    },
    /// y = s·x with s of shape [1].
    ScalarMul {
        scalar: ValueId,
        x: ValueId,
    },
    /// y = x/s with s of shape [1].
    ScalarDiv {
        x: ValueId,
        scalar: ValueId,
    },
    Sum {
        x: ValueId,
    },
    /// m shape-[1] values stacked into one [m] vector.
    StackScalars {
        parts: Vec<ValueId>,
    },
    Unary {
        f: UnaryFn,
        x: ValueId,
    },
    /// x·sigmoid(βx) with β of shape [1].
    Swish {
        x: ValueId,
        beta: ValueId,
    },
    /// Stable softmax over one [m] vector.
    Softmax1d {
        x: ValueId,
    },
    /// y = Σ_j w[j]·t_j over same-shaped terms, w of shape [m].
    WeightedSum {
        weights: ValueId,
        terms: Vec<ValueId>,
    },
    Matmul {
        a: ValueId,
        b: ValueId,
        m: usize,
        k: usize,
        n: usize,
    },
    /// Broadcast add of a [c] vector over the last axis.
    BiasAdd {
        x: ValueId,
        bias: ValueId,
    },
    Conv2d {
        x: ValueId,
        kernel: ValueId,
    },
    MaxPool {
        x: ValueId,
        win: usize,
        stride: usize,
        argmax: Vec<u32>,
    },
    AvgPool {
        x: ValueId,
        win: usize,
        stride: usize,
    },
    /// Mask holds 0 or 1/(1−rate); sampled by the caller so checks can freeze it.
    Dropout {
        x: ValueId,
        mask: Vec<S>,
    },
    BatchNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        mean: Vec<S>,
        inv_std: Vec<S>,
        train_stats: bool,
    },
    Reshape {
        x: ValueId,
    },
    SoftmaxXent {
        logits: ValueId,
        labels: Vec<u32>,
        probs: Vec<S>,
    },
}

pub struct Tape<S: Scalar> {
    slots: Vec<Slot<S>>,
    ops: Vec<(ValueId, Op<S>)>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            slots: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<S>, requires_grad: bool, op: Op<S>) -> ValueId {
        let id = ValueId(self.slots.len());
        self.slots.push(Slot {
            shape,
            data,
            requires_grad,
        });
        self.ops.push((id, op));
        id
    }

    fn slot(&self, id: ValueId) -> &Slot<S> {
        &self.slots[id.0]
    }

    fn check(&self, id: ValueId, op: &'static str) -> Result<()> {
        if id.0 >= self.slots.len() {
            return Err(Error::Tape(format!("{op}: unknown value id {}", id.0)));
        }
        Ok(())
    }

    pub fn value(&self, id: ValueId) -> &[S] {
        &self.slot(id).data
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.slot(id).shape
    }

    pub fn numel(&self, id: ValueId) -> usize {
        self.slot(id).data.len()
    }

    /// Gradient accumulated for `id` by previous `backward` calls.
    pub fn grad(&self, id: ValueId) -> Option<&[S]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    // ── Leaves ──────────────────────────────────────────────────────

    pub fn leaf(&mut self, shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Result<ValueId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "leaf",
                format!("shape {shape:?} implies {numel} values, got {}", data.len()),
            ));
        }
        Ok(self.push(shape, data, requires_grad, Op::Leaf))
    }

    pub fn leaf_tensor(&mut self, t: &Tensor<S>) -> Result<ValueId> {
        self.leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    // ── Elementwise ─────────────────────────────────────────────────

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.same_shape("add", a, b)?;
        let data = self
            .slot(a)
            .data
            .iter()
            .zip(&self.slot(b).data)
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(self.slot(a).shape.clone(), data, false, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.same_shape("mul", a, b)?;
        let data = self
            .slot(a)
            .data
            .iter()
            .zip(&self.slot(b).data)
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(self.slot(a).shape.clone(), data, false, Op::Mul { a, b }))
    }

    pub fn scalar_mul(&mut self, scalar: ValueId, x: ValueId) -> Result<ValueId> {
        self.expect_scalar("scalar_mul", scalar)?;
        let s = self.slot(scalar).data[0];
        let data = self.slot(x).data.iter().map(|&v| s * v).collect();
        Ok(self.push(
            self.slot(x).shape.clone(),
            data,
            false,
            Op::ScalarMul { scalar, x },
        ))
    }

    pub fn scalar_div(&mut self, x: ValueId, scalar: ValueId) -> Result<ValueId> {
        self.expect_scalar("scalar_div", scalar)?;
        let s = self.slot(scalar).data[0];
        let data = self.slot(x).data.iter().map(|&v| v / s).collect();
        Ok(self.push(
            self.slot(x).shape.clone(),
            data,
            false,
            Op::ScalarDiv { x, scalar },
        ))
    }

    pub fn sum(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x, "sum")?;
        let total = self.slot(x).data.iter().cloned().sum();
        Ok(self.push(vec![1], vec![total], false, Op::Sum { x }))
    }

    pub fn stack_scalars(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let mut data = Vec::with_capacity(parts.len());
        for &p in parts {
            self.expect_scalar("stack_scalars", p)?;
            data.push(self.slot(p).data[0]);
        }
        Ok(self.push(
            vec![parts.len()],
            data,
            false,
            Op::StackScalars {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn unary(&mut self, f: UnaryFn, x: ValueId) -> Result<ValueId> {
        self.check(x, "unary")?;
        let data = self.slot(x).data.iter().map(|&v| f.eval(v)).collect();
        Ok(self.push(self.slot(x).shape.clone(), data, false, Op::Unary { f, x }))
    }

    pub fn swish(&mut self, x: ValueId, beta: ValueId) -> Result<ValueId> {
        self.expect_scalar("swish", beta)?;
        let b = self.slot(beta).data[0];
        let data = self.slot(x).data.iter().map(|&v| swish(v, b)).collect();
        Ok(self.push(self.slot(x).shape.clone(), data, false, Op::Swish { x, beta }))
    }

    pub fn softmax1d(&mut self, x: ValueId) -> Result<ValueId> {
        if self.slot(x).shape.len() != 1 {
            return Err(Error::shape(
                "softmax1d",
                format!("expected a vector, got {:?}", self.slot(x).shape),
            ));
        }
        let row = &self.slot(x).data;
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let exps: Vec<S> = row.iter().map(|&v| (v - max).exp()).collect();
        let denom: S = exps.iter().cloned().sum();
        let data: Vec<S> = exps.iter().map(|&e| e / denom).collect();
        Ok(self.push(self.slot(x).shape.clone(), data, false, Op::Softmax1d { x }))
    }

    pub fn weighted_sum(&mut self, weights: ValueId, terms: &[ValueId]) -> Result<ValueId> {
        self.check(weights, "weighted_sum")?;
        let m = self.slot(weights).data.len();
        if m != terms.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{m} weights for {} terms", terms.len()),
            ));
        }
        for &t in terms {
            self.same_shape("weighted_sum", terms[0], t)?;
        }
        let n = self.slot(terms[0]).data.len();
        let mut data = vec![S::zero(); n];
        for (j, &t) in terms.iter().enumerate() {
            let w = self.slot(weights).data[j];
            for (o, &v) in data.iter_mut().zip(&self.slot(t).data) {
                *o = *o + w * v;
            }
        }
        Ok(self.push(
            self.slot(terms[0]).shape.clone(),
            data,
            false,
            Op::WeightedSum {
                weights,
                terms: terms.to_vec(),
            },
        ))
    }

    // ── Linear and convolutional ────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (&self.slot(a).shape, &self.slot(b).shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("incompatible operands {sa:?} and {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![S::zero(); m * n];
        linalg::matmul_acc(&self.slot(a).data, &self.slot(b).data, &mut data, m, k, n);
        Ok(self.push(vec![m, n], data, false, Op::Matmul { a, b, m, k, n }))
    }

    pub fn bias_add(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId> {
        let (sx, sb) = (&self.slot(x).shape, &self.slot(bias).shape);
        let c = *sx.last().unwrap();
        if sb.len() != 1 || sb[0] != c {
            return Err(Error::shape(
                "bias_add",
                format!("bias {sb:?} against input {sx:?}"),
            ));
        }
        let bdata = &self.slot(bias).data;
        let data = self
            .slot(x)
            .data
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(bdata).map(|(&v, &b)| v + b))
            .collect();
        Ok(self.push(sx.clone(), data, false, Op::BiasAdd { x, bias }))
    }

    pub fn conv2d(&mut self, x: ValueId, kernel: ValueId) -> Result<ValueId> {
        let (sx, sk) = (&self.slot(x).shape, &self.slot(kernel).shape);
        if sx.len() != 4 || sk.len() != 4 || sx[3] != sk[2] {
            return Err(Error::shape(
                "conv2d",
                format!("input {sx:?} against kernel {sk:?}"),
            ));
        }
        let (b, h, w, cin) = (sx[0], sx[1], sx[2], sx[3]);
        let (kh, kw, cout) = (sk[0], sk[1], sk[3]);
        let mut data = vec![S::zero(); b * h * w * cout];
        conv::conv2d_forward(
            &self.slot(x).data,
            &self.slot(kernel).data,
            &mut data,
            b,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
        );
        Ok(self.push(vec![b, h, w, cout], data, false, Op::Conv2d { x, kernel }))
    }

    pub fn maxpool(&mut self, x: ValueId, win: usize, stride: usize) -> Result<ValueId> {
        let sx = &self.slot(x).shape;
        if sx.len() != 4 {
            return Err(Error::shape(
                "maxpool",
                format!("expected [b,h,w,c], got {sx:?}"),
            ));
        }
        let (b, h, w, c) = (sx[0], sx[1], sx[2], sx[3]);
        let (oh, ow) = (pool::pooled_extent(h, stride), pool::pooled_extent(w, stride));
        let mut data = vec![S::zero(); b * oh * ow * c];
        let mut argmax = vec![0u32; data.len()];
        pool::maxpool_forward(&self.slot(x).data, &mut data, &mut argmax, b, h, w, c, win, stride);
        Ok(self.push(
            vec![b, oh, ow, c],
            data,
            false,
            Op::MaxPool {
                x,
                win,
                stride,
                argmax,
            },
        ))
    }

    pub fn avgpool(&mut self, x: ValueId, win: usize, stride: usize) -> Result<ValueId> {
        let sx = &self.slot(x).shape;
        if sx.len() != 4 {
            return Err(Error::shape(
                "avgpool",
                format!("expected [b,h,w,c], got {sx:?}"),
            ));
        }
        let (b, h, w, c) = (sx[0], sx[1], sx[2], sx[3]);
        let (oh, ow) = (pool::pooled_extent(h, stride), pool::pooled_extent(w, stride));
        let mut data = vec![S::zero(); b * oh * ow * c];
        pool::avgpool_forward(&self.slot(x).data, &mut data, b, h, w, c, win, stride);
        Ok(self.push(vec![b, oh, ow, c], data, false, Op::AvgPool { x, win, stride }))
    }

    pub fn dropout(&mut self, x: ValueId, mask: Vec<S>) -> Result<ValueId> {
        if mask.len() != self.slot(x).data.len() {
            return Err(Error::shape(
                "dropout",
                format!(
                    "mask of length {} for input {:?}",
                    mask.len(),
                    self.slot(x).shape
                ),
            ));
        }
        let data = self
            .slot(x)
            .data
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        Ok(self.push(self.slot(x).shape.clone(), data, false, Op::Dropout { x, mask }))
    }

    /// Train-mode batch normalization over the last axis. Returns the output
    /// id plus the batch mean/variance so the caller can maintain running
    /// statistics.
    pub fn batchnorm_train(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    ) -> Result<(ValueId, Vec<S>, Vec<S>)> {
        let c = self.bn_check("batchnorm_train", x, gamma, beta)?;
        let rows = self.slot(x).data.len() / c;
        if rows < 2 {
            return Err(Error::shape(
                "batchnorm_train",
                format!("batch of {rows} rows; training statistics need at least 2"),
            ));
        }
        let (mean, var) = batchnorm::channel_stats(&self.slot(x).data, c);
        let inv_std: Vec<S> = var
            .iter()
            .map(|&v| S::one() / (v + S::from_f64(eps)).sqrt())
            .collect();
        let mut data = vec![S::zero(); self.slot(x).data.len()];
        batchnorm::bn_apply(
            &self.slot(x).data,
            &mean,
            &inv_std,
            &self.slot(gamma).data,
            &self.slot(beta).data,
            &mut data,
        );
        let id = self.push(
            self.slot(x).shape.clone(),
            data,
            false,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: mean.clone(),
                inv_std,
                train_stats: true,
            },
        );
        Ok((id, mean, var))
    }

    /// Eval-mode batch normalization using running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running_mean: &[S],
        running_var: &[S],
        eps: f64,
    ) -> Result<ValueId> {
        let c = self.bn_check("batchnorm_eval", x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape(
                "batchnorm_eval",
                format!("running stats of length {} for {c} channels", running_mean.len()),
            ));
        }
        let inv_std: Vec<S> = running_var
            .iter()
            .map(|&v| S::one() / (v + S::from_f64(eps)).sqrt())
            .collect();
        let mut data = vec![S::zero(); self.slot(x).data.len()];
        batchnorm::bn_apply(
            &self.slot(x).data,
            running_mean,
            &inv_std,
            &self.slot(gamma).data,
            &self.slot(beta).data,
            &mut data,
        );
        Ok(self.push(
            self.slot(x).shape.clone(),
            data,
            false,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: running_mean.to_vec(),
                inv_std,
                train_stats: false,
            },
        ))
    }

    pub fn reshape(&mut self, x: ValueId, new_shape: Vec<usize>) -> Result<ValueId> {
        let numel: usize = new_shape.iter().product();
        if numel != self.slot(x).data.len() {
            return Err(Error::shape(
                "reshape",
                format!(
                    "cannot view {:?} as {new_shape:?}",
                    self.slot(x).shape
                ),
            ));
        }
        let data = self.slot(x).data.clone();
        Ok(self.push(new_shape, data, false, Op::Reshape { x }))
    }

    /// Mean softmax cross-entropy over the batch; returns a scalar loss id.
    pub fn softmax_xent(&mut self, logits: ValueId, labels: Vec<u32>) -> Result<ValueId> {
        let sx = &self.slot(logits).shape;
        if sx.len() != 2 || sx[0] != labels.len() {
            return Err(Error::shape(
                "softmax_xent",
                format!("logits {sx:?} against {} labels", labels.len()),
            ));
        }
        let classes = sx[1];
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::shape(
                "softmax_xent",
                format!("label {bad} out of range for {classes} classes"),
            ));
        }
        let (loss, probs) = loss::softmax_xent_forward(&self.slot(logits).data, &labels, classes);
        Ok(self.push(
            vec![1],
            vec![loss],
            false,
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            },
        ))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Accumulate gradients of the scalar `loss` into every recorded value.
    /// Calling twice doubles every gradient.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.slots.is_empty() {
            return Err(Error::Tape(
                "backward called before any forward pass".into(),
            ));
        }
        self.check(loss, "backward")?;
        if self.slot(loss).data.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                self.slot(loss).shape
            )));
        }
        if self.grads.len() < self.slots.len() {
            self.grads.resize(self.slots.len(), None);
        }
        // Seed into a fresh pass buffer so repeated backward calls stay additive.
        let mut pass: Vec<Option<Vec<S>>> = vec![None; self.slots.len()];
        pass[loss.0] = Some(vec![S::one()]);

        for idx in (0..self.ops.len()).rev() {
            let out = self.ops[idx].0;
            let Some(out_grad) = pass[out.0].take() else {
                continue;
            };
            self.backprop_op(idx, &out_grad, &mut pass)?;
            pass[out.0] = Some(out_grad);
        }
        for (total, fresh) in self.grads.iter_mut().zip(pass) {
            if let Some(f) = fresh {
                match total {
                    Some(t) => {
                        for (a, b) in t.iter_mut().zip(&f) {
                            *a = *a + *b;
                        }
                    }
                    None => *total = Some(f),
                }
            }
        }
        Ok(())
    }

    /// Gradients for a set of leaf bindings, keyed by the caller's handles.
    pub fn leaf_grads<K: Copy>(&self, bindings: &[(K, ValueId)]) -> Vec<(K, Vec<S>)> {
        bindings
            .iter()
            .map(|&(key, vid)| {
                let g = self
                    .grad(vid)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![S::zero(); self.numel(vid)]);
                (key, g)
            })
            .collect()
    }

    fn backprop_op(&self, op_idx: usize, dy: &[S], pass: &mut [Option<Vec<S>>]) -> Result<()> {
        // Helper to lazily materialize a zero grad buffer for an input.
        fn buf<'a, T: Scalar>(
            pass: &'a mut [Option<Vec<T>>],
            id: ValueId,
            numel: usize,
        ) -> &'a mut Vec<T> {
            pass[id.0].get_or_insert_with(|| vec![T::zero(); numel])
        }

        {
            match &self.ops[op_idx].1 {
                Op::Leaf => {}
                Op::Add { a, b } => {
                    for (g, &d) in buf(pass, *a, dy.len()).iter_mut().zip(dy) {
                        *g = *g + d;
                    }
                    for (g, &d) in buf(pass, *b, dy.len()).iter_mut().zip(dy) {
                        *g = *g + d;
                    }
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (&self.slots[a.0].data, &self.slots[b.0].data);
                    let ga = buf(pass, *a, av.len());
                    for ((g, &d), &v) in ga.iter_mut().zip(dy).zip(bv) {
                        *g = *g + d * v;
                    }
                    let gb = buf(pass, *b, bv.len());
                    for ((g, &d), &v) in gb.iter_mut().zip(dy).zip(av) {
                        *g = *g + d * v;
                    }
                }
                Op::ScalarMul { scalar, x } => {
                    let s = self.slots[scalar.0].data[0];
                    let xv = &self.slots[x.0].data;
                    let gx = buf(pass, *x, xv.len());
                    for (g, &d) in gx.iter_mut().zip(dy) {
                        *g = *g + s * d;
                    }
                    let mut acc = S::zero();
                    for (&d, &v) in dy.iter().zip(xv) {
                        acc = acc + d * v;
                    }
                    let gs = buf(pass, *scalar, 1);
                    gs[0] = gs[0] + acc;
                }
                Op::ScalarDiv { x, scalar } => {
                    let s = self.slots[scalar.0].data[0];
                    let xv = &self.slots[x.0].data;
                    let gx = buf(pass, *x, xv.len());
                    for (g, &d) in gx.iter_mut().zip(dy) {
                        *g = *g + d / s;
                    }
                    let mut acc = S::zero();
                    for (&d, &v) in dy.iter().zip(xv) {
                        acc = acc + d * v;
                    }
                    let gs = buf(pass, *scalar, 1);
                    gs[0] = gs[0] - acc / (s * s);
                }
                Op::Sum { x } => {
                    let d = dy[0];
                    let n = self.slots[x.0].data.len();
                    for g in buf(pass, *x, n).iter_mut() {
                        *g = *g + d;
                    }
                }
                Op::StackScalars { parts } => {
                    for (j, &p) in parts.iter().enumerate() {
                        let gp = buf(pass, p, 1);
                        gp[0] = gp[0] + dy[j];
                    }
                }
                Op::Unary { f, x } => {
                    let xv = &self.slots[x.0].data;
                    let gx = buf(pass, *x, xv.len());
                    for ((g, &d), &v) in gx.iter_mut().zip(dy).zip(xv) {
                        *g = *g + d * f.grad(v);
                    }
                }
                Op::Swish { x, beta } => {
                    let b = self.slots[beta.0].data[0];
                    let xv = &self.slots[x.0].data;
                    let mut db = S::zero();
                    {
                        let gx = buf(pass, *x, xv.len());
                        for ((g, &d), &v) in gx.iter_mut().zip(dy).zip(xv) {
                            let (dx, dbeta) = swish_grad(v, b);
                            *g = *g + d * dx;
                            db = db + d * dbeta;
                        }
                    }
                    let gb = buf(pass, *beta, 1);
                    gb[0] = gb[0] + db;
                }
                Op::Softmax1d { x } => {
                    let y = &self.slots[self.ops[op_idx].0 .0].data;
                    let mut dot = S::zero();
                    for (&yi, &di) in y.iter().zip(dy) {
                        dot = dot + yi * di;
                    }
                    let gx = buf(pass, *x, y.len());
                    for ((g, &yi), &di) in gx.iter_mut().zip(y).zip(dy) {
                        *g = *g + yi * (di - dot);
                    }
                }
                Op::WeightedSum { weights, terms } => {
                    let wv = self.slots[weights.0].data.clone();
                    for (j, &t) in terms.iter().enumerate() {
                        let tv = &self.slots[t.0].data;
                        let mut acc = S::zero();
                        for (&d, &v) in dy.iter().zip(tv) {
                            acc = acc + d * v;
                        }
                        let gw = buf(pass, *weights, wv.len());
                        gw[j] = gw[j] + acc;
                        let gt = buf(pass, t, tv.len());
                        for (g, &d) in gt.iter_mut().zip(dy) {
                            *g = *g + wv[j] * d;
                        }
                    }
                }
                Op::Matmul { a, b, m, k, n } => {
                    let (av, bv) = (&self.slots[a.0].data, &self.slots[b.0].data);
                    {
                        let ga = buf(pass, *a, m * k);
                        linalg::matmul_a_bt_acc(dy, bv, ga, *m, *n, *k);
                    }
                    let gb = buf(pass, *b, k * n);
                    linalg::matmul_at_b_acc(av, dy, gb, *m, *k, *n);
                }
                Op::BiasAdd { x, bias } => {
                    let c = self.slots[bias.0].data.len();
                    let n = self.slots[x.0].data.len();
                    {
                        let gx = buf(pass, *x, n);
                        for (g, &d) in gx.iter_mut().zip(dy) {
                            *g = *g + d;
                        }
                    }
                    let gb = buf(pass, *bias, c);
                    for row in dy.chunks_exact(c) {
                        for (g, &d) in gb.iter_mut().zip(row) {
                            *g = *g + d;
                        }
                    }
                }
                Op::Conv2d { x, kernel } => {
                    let sx = &self.slots[x.0].shape;
                    let sk = &self.slots[kernel.0].shape;
                    let (bsz, h, w, cin) = (sx[0], sx[1], sx[2], sx[3]);
                    let (kh, kw, cout) = (sk[0], sk[1], sk[3]);
                    let xv = &self.slots[x.0].data;
                    let kv = &self.slots[kernel.0].data;
                    let mut dx = std::mem::take(buf(pass, *x, xv.len()));
                    let mut dk = std::mem::take(buf(pass, *kernel, kv.len()));
                    conv::conv2d_backward(
                        xv, kv, dy, &mut dx, &mut dk, bsz, h, w, cin, kh, kw, cout,
                    );
                    *buf(pass, *x, xv.len()) = dx;
                    *buf(pass, *kernel, kv.len()) = dk;
                }
                Op::MaxPool { x, argmax, .. } => {
                    let n = self.slots[x.0].data.len();
                    pool::maxpool_backward(dy, argmax, buf(pass, *x, n));
                }
                Op::AvgPool { x, win, stride } => {
                    let sx = self.slots[x.0].shape.clone();
                    let n = self.slots[x.0].data.len();
                    pool::avgpool_backward(
                        dy,
                        buf(pass, *x, n),
                        sx[0],
                        sx[1],
                        sx[2],
                        sx[3],
                        *win,
                        *stride,
                    );
                }
                Op::Dropout { x, mask } => {
                    let n = self.slots[x.0].data.len();
                    let gx = buf(pass, *x, n);
                    for ((g, &d), &m) in gx.iter_mut().zip(dy).zip(mask) {
                        *g = *g + d * m;
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    train_stats,
                } => {
                    let c = mean.len();
                    let xv = &self.slots[x.0].data;
                    let gv = &self.slots[gamma.0].data;
                    let mut dx = std::mem::take(buf(pass, *x, xv.len()));
                    let mut dgamma = std::mem::take(buf(pass, *gamma, c));
                    let mut dbeta = std::mem::take(buf(pass, *beta, c));
                    if *train_stats {
                        batchnorm::bn_backward_train(
                            xv, dy, mean, inv_std, gv, &mut dx, &mut dgamma, &mut dbeta,
                        );
                    } else {
                        batchnorm::bn_backward_eval(
                            xv, dy, mean, inv_std, gv, &mut dx, &mut dgamma, &mut dbeta,
                        );
                    }
                    *buf(pass, *x, xv.len()) = dx;
                    *buf(pass, *gamma, c) = dgamma;
                    *buf(pass, *beta, c) = dbeta;
                }
                Op::Reshape { x } => {
                    let n = self.slots[x.0].data.len();
                    let gx = buf(pass, *x, n);
                    for (g, &d) in gx.iter_mut().zip(dy) {
                        *g = *g + d;
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let classes = self.slots[logits.0].shape[1];
                    let n = self.slots[logits.0].data.len();
                    loss::softmax_xent_backward(
                        probs,
                        labels,
                        classes,
                        dy[0],
                        buf(pass, *logits, n),
                    );
                }
            }
        }
        Ok(())
    }

    // ── Validation helpers ──────────────────────────────────────────

    fn same_shape(&self, op: &'static str, a: ValueId, b: ValueId) -> Result<()> {
        self.check(a, op)?;
        self.check(b, op)?;
        if self.slot(a).shape != self.slot(b).shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.slot(a).shape, self.slot(b).shape),
            ));
        }
        Ok(())
    }

    fn expect_scalar(&self, op: &'static str, id: ValueId) -> Result<()> {
        self.check(id, op)?;
        if self.slot(id).data.len() != 1 {
            return Err(Error::shape(
                op,
                format!("expected scalar, got {:?}", self.slot(id).shape),
            ));
        }
        Ok(())
    }

    fn bn_check(
        &self,
        op: &'static str,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
    ) -> Result<usize> {
        self.check(x, op)?;
        let c = *self.slot(x).shape.last().ok_or_else(|| {
            Error::shape(op, "input must have at least one axis".to_string())
        })?;
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            if self.slot(id).data.len() != c {
                return Err(Error::shape(
                    op,
                    format!(
                        "{name} of shape {:?} for {c} channels",
                        self.slot(id).shape
                    ),
                ));
            }
        }
        Ok(c)
    }
}

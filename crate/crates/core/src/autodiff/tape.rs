use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::real::Real;

use super::kernels::{self, sigmoid};
use super::{AutodiffError, Pass, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Processing direction of a recurrent layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

struct LstmSaved<T> {
    /// Post-activation gates `[T × 4H]`, blocks ordered input, forget, cell, output.
    gates: Vec<T>,
    cells: Vec<T>,
    tanh_cells: Vec<T>,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Conv1d { x: Var, w: Var, b: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    Lstm { x: Var, w_ih: Var, w_hh: Var, bias: Var, direction: Direction, saved: LstmSaved<T> },
    Dropout { x: Var, mask: Vec<T> },
    Concat(Vec<Var>),
    Reverse(Var),
    Upsample { x: Var, factor: usize },
    CropRows(Var),
    AddNoise(Var),
    Sum(Var),
    MaskedSse { pred: Var, target: Vec<T>, mask: Vec<T>, denom: T },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool { .. } => "maxpool1d",
            Op::Lstm { .. } => "lstm",
            Op::Dropout { .. } => "dropout",
            Op::Concat(_) => "concat",
            Op::Reverse(_) => "reverse_time",
            Op::Upsample { .. } => "upsample_nearest",
            Op::CropRows(_) => "crop_rows",
            Op::AddNoise(_) => "gaussian_noise",
            Op::Sum(_) => "sum",
            Op::MaskedSse { .. } => "masked_sse",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive applications for one forward pass and replays them in
/// reverse to accumulate gradients.
///
/// A tape is single-owner; run independent samples on independent tapes.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name(), pass: Pass::Forward });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize), AutodiffError> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(op, format!("expected a rank-2 tensor, got {s:?}"))),
        }
    }

    /// `[n×k] · [k×m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (n, k) = self.rank2("matmul", a)?;
        let (k2, m) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("{:?} · {:?}", self.shape(a), self.shape(b))));
        }
        let mut out = vec![T::zero(); n * m];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), n, k, m, &mut out);
        let value = Tensor::new(vec![n, m], out)?;
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b), &[a, b])
    }

    /// Adds `b[C]` to every row of `x[T×C]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (_, c) = self.rank2("add_bias", x)?;
        if self.shape(b) != [c] {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", self.shape(x), self.shape(b))));
        }
        let bias = self.value(b).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(c) {
            for (v, &bv) in row.iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        self.push(value, Op::AddBias(x, b), &[x, b])
    }

    fn map(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var, AutodiffError> {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())?;
        self.push(value, op, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.map(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.map(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    /// Zero same-padded convolution: `x[T×Cin]`, `w[F×Cin×Cout]`, `b[Cout]` → `[T×Cout]`.
    /// Even filters put the extra tap on the right.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (len, cin) = self.rank2("conv1d", x)?;
        let (filter, wcin, cout) = match self.shape(w) {
            [f, ci, co] => (*f, *ci, *co),
            s => return Err(shape_err("conv1d", format!("kernel must be [F×Cin×Cout], got {s:?}"))),
        };
        if wcin != cin || self.shape(b) != [cout] {
            return Err(shape_err(
                "conv1d",
                format!(
                    "input {:?}, kernel {:?}, bias {:?}",
                    self.shape(x),
                    self.shape(w),
                    self.shape(b)
                ),
            ));
        }
        let out = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            len,
            cin,
            cout,
            filter,
        );
        let value = Tensor::new(vec![len, cout], out)?;
        self.push(value, Op::Conv1d { x, w, b }, &[x, w, b])
    }

    /// Non-overlapping max pooling over time; a short final window is pooled as-is.
    pub fn maxpool1d(&mut self, x: Var, pool: usize) -> Result<Var, AutodiffError> {
        if pool == 0 {
            return Err(AutodiffError::InvalidArgument { op: "maxpool1d", detail: "pool must be ≥ 1".into() });
        }
        let (len, c) = self.rank2("maxpool1d", x)?;
        let out_len = len.div_ceil(pool);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(out_len * c);
        let mut argmax = Vec::with_capacity(out_len * c);
        for o in 0..out_len {
            let start = o * pool;
            let end = (start + pool).min(len);
            for ch in 0..c {
                let mut best = start * c + ch;
                for t in start + 1..end {
                    let idx = t * c + ch;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::new(vec![out_len, c], out)?;
        self.push(value, Op::MaxPool { x, argmax }, &[x])
    }

    /// One LSTM direction over `x[T×Cin]` with `w_ih[Cin×4H]`, `w_hh[H×4H]`,
    /// `bias[4H]`; gate blocks are ordered input, forget, candidate, output.
    /// The backward direction reads the sequence in reverse and writes each
    /// hidden state back at its own time index.
    pub fn lstm(
        &mut self,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        direction: Direction,
    ) -> Result<Var, AutodiffError> {
        let (len, cin) = self.rank2("lstm", x)?;
        let (wcin, four_h) = self.rank2("lstm", w_ih)?;
        let hidden = four_h / 4;
        if wcin != cin
            || four_h % 4 != 0
            || self.shape(w_hh) != [hidden, four_h]
            || self.shape(bias) != [four_h]
        {
            return Err(shape_err(
                "lstm",
                format!(
                    "input {:?}, w_ih {:?}, w_hh {:?}, bias {:?}",
                    self.shape(x),
                    self.shape(w_ih),
                    self.shape(w_hh),
                    self.shape(bias)
                ),
            ));
        }
        let h = hidden;
        let whh = self.value(w_hh).data();
        let mut pre = Vec::with_capacity(len * four_h);
        for _ in 0..len {
            pre.extend_from_slice(self.value(bias).data());
        }
        kernels::matmul_acc(self.value(x).data(), self.value(w_ih).data(), len, cin, four_h, &mut pre);

        let mut gates = pre;
        let mut cells = vec![T::zero(); len * h];
        let mut tanh_cells = vec![T::zero(); len * h];
        let mut hs = vec![T::zero(); len * h];
        let mut h_prev = vec![T::zero(); h];
        let mut c_prev = vec![T::zero(); h];
        for step in 0..len {
            let t = match direction {
                Direction::Forward => step,
                Direction::Backward => len - 1 - step,
            };
            let g = &mut gates[t * four_h..(t + 1) * four_h];
            for (p, &hp) in h_prev.iter().enumerate() {
                if hp != T::zero() {
                    kernels::axpy(hp, &whh[p * four_h..(p + 1) * four_h], g);
                }
            }
            for j in 0..h {
                let i_g = sigmoid(g[j]);
                let f_g = sigmoid(g[h + j]);
                let c_g = g[2 * h + j].tanh();
                let o_g = sigmoid(g[3 * h + j]);
                g[j] = i_g;
                g[h + j] = f_g;
                g[2 * h + j] = c_g;
                g[3 * h + j] = o_g;
                let c = f_g * c_prev[j] + i_g * c_g;
                let tc = c.tanh();
                cells[t * h + j] = c;
                tanh_cells[t * h + j] = tc;
                hs[t * h + j] = o_g * tc;
            }
            h_prev.copy_from_slice(&hs[t * h..(t + 1) * h]);
            c_prev.copy_from_slice(&cells[t * h..(t + 1) * h]);
        }
        let value = Tensor::new(vec![len, h], hs)?;
        let saved = LstmSaved { gates, cells, tanh_cells };
        self.push(value, Op::Lstm { x, w_ih, w_hh, bias, direction, saved }, &[x, w_ih, w_hh, bias])
    }

    /// Inverted dropout. Identity when not training or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidArgument { op: "dropout", detail: format!("p = {p} outside [0, 1)") });
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let src = self.value(x);
        let value = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        )?;
        self.push(value, Op::Dropout { x, mask }, &[x])
    }

    /// Concatenates rank-2 tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::InvalidArgument { op: "concat", detail: "no inputs".into() });
        };
        let (len, _) = self.rank2("concat", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (l, c) = self.rank2("concat", p)?;
            if l != len {
                return Err(shape_err("concat", format!("{:?} vs {:?}", self.shape(first), self.shape(p))));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(len * total);
        for t in 0..len {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(t));
            }
        }
        let value = Tensor::new(vec![len, total], out)?;
        self.push(value, Op::Concat(parts.to_vec()), parts)
    }

    /// Reverses the time (row) axis.
    pub fn reverse_time(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (len, _) = self.rank2("reverse_time", x)?;
        let src = self.value(x);
        let mut out = Vec::with_capacity(src.len());
        for t in (0..len).rev() {
            out.extend_from_slice(src.row(t));
        }
        let value = Tensor::new(src.shape().to_vec(), out)?;
        self.push(value, Op::Reverse(x), &[x])
    }

    /// Repeats every row `factor` times.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var, AutodiffError> {
        if factor == 0 {
            return Err(AutodiffError::InvalidArgument { op: "upsample_nearest", detail: "factor must be ≥ 1".into() });
        }
        let (len, c) = self.rank2("upsample_nearest", x)?;
        let src = self.value(x);
        let mut out = Vec::with_capacity(src.len() * factor);
        for t in 0..len {
            for _ in 0..factor {
                out.extend_from_slice(src.row(t));
            }
        }
        let value = Tensor::new(vec![len * factor, c], out)?;
        self.push(value, Op::Upsample { x, factor }, &[x])
    }

    /// Keeps the first `rows` rows.
    pub fn crop_rows(&mut self, x: Var, rows: usize) -> Result<Var, AutodiffError> {
        let (len, _) = self.rank2("crop_rows", x)?;
        if rows == 0 || rows > len {
            return Err(shape_err("crop_rows", format!("cannot crop {:?} to {rows} rows", self.shape(x))));
        }
        if rows == len {
            return Ok(x);
        }
        let value = self.value(x).truncate_rows(rows);
        self.push(value, Op::CropRows(x), &[x])
    }

    /// Adds N(0, sigma²) noise to the first `rows` rows; the gradient passes
    /// through unchanged.
    pub fn gaussian_noise<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        sigma: f64,
        rows: usize,
        rng: &mut R,
    ) -> Result<Var, AutodiffError> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(AutodiffError::InvalidArgument { op: "gaussian_noise", detail: format!("sigma = {sigma}") });
        }
        if sigma == 0.0 {
            return Ok(x);
        }
        let mut value = self.value(x).clone();
        let cols = value.cols();
        let rows = rows.min(value.rows());
        for v in &mut value.data_mut()[..rows * cols] {
            let z: f64 = StandardNormal.sample(rng);
            *v += T::of(sigma * z);
        }
        self.push(value, Op::AddNoise(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// `Σ mask·(pred − target)² / max(1, Σ mask)`. Masked-out positions never
    /// touch the arithmetic, so their target values cannot affect the result.
    pub fn masked_sse(&mut self, pred: Var, target: &Tensor<T>, mask: &Tensor<T>) -> Result<Var, AutodiffError> {
        if self.shape(pred) != target.shape() || target.shape() != mask.shape() {
            return Err(shape_err(
                "masked_sse",
                format!("pred {:?}, target {:?}, mask {:?}", self.shape(pred), target.shape(), mask.shape()),
            ));
        }
        let p = self.value(pred).data();
        let mut total = T::zero();
        let mut weight = T::zero();
        for ((&pv, &yv), &mv) in p.iter().zip(target.data()).zip(mask.data()) {
            if mv != T::zero() {
                let d = pv - yv;
                total += mv * d * d;
                weight += mv;
            }
        }
        let denom = if weight > T::one() { weight } else { T::one() };
        let op = Op::MaskedSse {
            pred,
            target: target.data().to_vec(),
            mask: mask.data().to_vec(),
            denom,
        };
        self.push(Tensor::scalar(total / denom), op, &[pred])
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, AutodiffError> {
        if self.value(output).len() != 1 {
            return Err(shape_err("backward", format!("output must be scalar, got {:?}", self.shape(output))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(self.shape(output), T::one()));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (input, contribution) in self.backward_node(node, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                let contribution = Tensor::new(self.shape(input).to_vec(), contribution)?;
                if !contribution.is_finite() {
                    return Err(AutodiffError::NonFinite { op: node.op.name(), pass: Pass::Backward });
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
        }
        // Only leaves keep their gradients.
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Vec<T>)>, AutodiffError> {
        let gd = g.data();
        let out = node.value.data();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = (self.value(*a).rows(), self.value(*a).cols());
                let m = self.value(*b).cols();
                if self.needs(*a) {
                    let mut da = vec![T::zero(); n * k];
                    kernels::matmul_a_bt_acc(gd, self.value(*b).data(), n, m, k, &mut da);
                    res.push((*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * m];
                    kernels::matmul_at_b_acc(self.value(*a).data(), gd, n, k, m, &mut db);
                    res.push((*b, db));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, gd.to_vec()));
                res.push((*b, gd.to_vec()));
            }
            Op::AddBias(x, b) => {
                let c = self.value(*b).len();
                let mut db = vec![T::zero(); c];
                for row in gd.chunks(c) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                res.push((*x, gd.to_vec()));
                res.push((*b, db));
            }
            Op::Tanh(x) => {
                res.push((*x, gd.iter().zip(out).map(|(&g, &y)| g * (T::one() - y * y)).collect()));
            }
            Op::Sigmoid(x) => {
                res.push((*x, gd.iter().zip(out).map(|(&g, &y)| g * y * (T::one() - y)).collect()));
            }
            Op::Relu(x) => {
                let src = self.value(*x).data();
                res.push((*x, gd.iter().zip(src).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }).collect()));
            }
            Op::Conv1d { x, w, b } => {
                let (len, cin) = (self.value(*x).rows(), self.value(*x).cols());
                let wshape = self.shape(*w);
                let (filter, cout) = (wshape[0], wshape[2]);
                let grads = kernels::conv1d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    len,
                    cin,
                    cout,
                    filter,
                    [self.needs(*x), self.needs(*w), self.needs(*b)],
                );
                if let Some(dx) = grads.dx {
                    res.push((*x, dx));
                }
                if let Some(dw) = grads.dw {
                    res.push((*w, dw));
                }
                if let Some(db) = grads.db {
                    res.push((*b, db));
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (&src, &gv) in argmax.iter().zip(gd) {
                    dx[src] += gv;
                }
                res.push((*x, dx));
            }
            Op::Lstm { x, w_ih, w_hh, bias, direction, saved } => {
                res.extend(self.lstm_backward(*x, *w_ih, *w_hh, *bias, *direction, saved, out, gd));
            }
            Op::Dropout { x, mask } => {
                res.push((*x, gd.iter().zip(mask).map(|(&g, &m)| g * m).collect()));
            }
            Op::Concat(parts) => {
                let total = node.value.cols();
                let len = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut dp = Vec::with_capacity(len * c);
                    for t in 0..len {
                        dp.extend_from_slice(&gd[t * total + offset..t * total + offset + c]);
                    }
                    offset += c;
                    res.push((p, dp));
                }
            }
            Op::Reverse(x) => {
                let c = g.cols();
                let mut dx = Vec::with_capacity(gd.len());
                for row in gd.chunks(c).rev() {
                    dx.extend_from_slice(row);
                }
                res.push((*x, dx));
            }
            Op::Upsample { x, factor } => {
                let c = g.cols();
                let len = self.value(*x).rows();
                let mut dx = vec![T::zero(); len * c];
                for (r, row) in gd.chunks(c).enumerate() {
                    let dst = &mut dx[(r / factor) * c..(r / factor + 1) * c];
                    for (acc, &v) in dst.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                res.push((*x, dx));
            }
            Op::CropRows(x) => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                dx[..gd.len()].copy_from_slice(gd);
                res.push((*x, dx));
            }
            Op::AddNoise(x) => res.push((*x, gd.to_vec())),
            Op::Sum(x) => res.push((*x, vec![gd[0]; self.value(*x).len()])),
            Op::MaskedSse { pred, target, mask, denom } => {
                let p = self.value(*pred).data();
                let scale = gd[0] * T::of(2.0) / *denom;
                let dp = p
                    .iter()
                    .zip(target)
                    .zip(mask)
                    .map(|((&pv, &yv), &mv)| if mv == T::zero() { T::zero() } else { scale * mv * (pv - yv) })
                    .collect();
                res.push((*pred, dp));
            }
        }
        Ok(res)
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_backward(
        &self,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        direction: Direction,
        saved: &LstmSaved<T>,
        hs: &[T],
        dout: &[T],
    ) -> Vec<(Var, Vec<T>)> {
        let (len, cin) = (self.value(x).rows(), self.value(x).cols());
        let four_h = self.value(w_ih).cols();
        let h = four_h / 4;
        let whh = self.value(w_hh).data();
        let mut dgates = vec![T::zero(); len * four_h];
        let mut dwhh = vec![T::zero(); h * four_h];
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let zeros = vec![T::zero(); h];
        for step in (0..len).rev() {
            let (t, prev) = match direction {
                Direction::Forward => (step, step.checked_sub(1)),
                Direction::Backward => {
                    let t = len - 1 - step;
                    (t, (step > 0).then(|| t + 1))
                }
            };
            let g = &saved.gates[t * four_h..(t + 1) * four_h];
            let c_prev = prev.map_or(&zeros[..], |p| &saved.cells[p * h..(p + 1) * h]);
            let h_prev = prev.map_or(&zeros[..], |p| &hs[p * h..(p + 1) * h]);
            let dg = &mut dgates[t * four_h..(t + 1) * four_h];
            for j in 0..h {
                let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = saved.tanh_cells[t * h + j];
                let dh = dout[t * h + j] + dh_next[j];
                let d_o = dh * tc;
                let dc = dh * o_g * (T::one() - tc * tc) + dc_next[j];
                let d_i = dc * c_g;
                let d_c = dc * i_g;
                let d_f = dc * c_prev[j];
                dc_next[j] = dc * f_g;
                dg[j] = d_i * i_g * (T::one() - i_g);
                dg[h + j] = d_f * f_g * (T::one() - f_g);
                dg[2 * h + j] = d_c * (T::one() - c_g * c_g);
                dg[3 * h + j] = d_o * o_g * (T::one() - o_g);
            }
            for p in 0..h {
                dh_next[p] = kernels::dot(&whh[p * four_h..(p + 1) * four_h], dg);
                if h_prev[p] != T::zero() {
                    kernels::axpy(h_prev[p], dg, &mut dwhh[p * four_h..(p + 1) * four_h]);
                }
            }
        }
        let mut res = Vec::with_capacity(4);
        if self.needs(x) {
            let mut dx = vec![T::zero(); len * cin];
            kernels::matmul_a_bt_acc(&dgates, self.value(w_ih).data(), len, four_h, cin, &mut dx);
            res.push((x, dx));
        }
        if self.needs(w_ih) {
            let mut dwih = vec![T::zero(); cin * four_h];
            kernels::matmul_at_b_acc(self.value(x).data(), &dgates, len, cin, four_h, &mut dwih);
            res.push((w_ih, dwih));
        }
        res.push((w_hh, dwhh));
        let mut db = vec![T::zero(); four_h];
        for row in dgates.chunks(four_h) {
            for (acc, &v) in db.iter_mut().zip(row) {
                *acc += v;
            }
        }
        res.push((bias, db));
        res
    }
}

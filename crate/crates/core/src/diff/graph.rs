//! Tape of tensor operations with reverse-mode gradients.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{mm_acc, mm_nt_acc, mm_tn_acc};
use super::{DiffError, ParamGrads, ParamId, ParamRegistry, Scalar, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Softmax(Var),
    Mask(Var, Vec<T>),
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    MeanRows(Var),
    Sum(Vec<Var>),
    CrossEntropy { logits: Var, target: usize, probs: Vec<T> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Gradients of one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: ParamGrads<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a recorded value, if it influenced the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> &ParamGrads<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads<T> {
        self.params
    }
}

/// Records a forward computation. Build one per forward pass.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    train: bool,
    rng: ChaCha8Rng,
}

fn shape_err(op: &str, a: [usize; 2], b: [usize; 2]) -> DiffError {
    DiffError::Shape(format!("{op}: {}x{} vs {}x{}", a[0], a[1], b[0], b[1]))
}

impl<T: Scalar> Graph<T> {
    /// Evaluation graph: dropout is the identity.
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: HashMap::new(), train: false, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    /// Training graph; dropout masks come from `seed`.
    pub fn training(seed: u64) -> Self {
        Graph { nodes: Vec::new(), params: HashMap::new(), train: true, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// A constant (or an input to differentiate against).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, t)
    }

    /// Parameter leaf; repeated calls share one node.
    pub fn param(&mut self, reg: &ParamRegistry<T>, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(Op::Param(id), reg.value(id).clone());
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = Tensor::zeros(sa[0], sb[1]);
        mm_acc(self.value(a).data(), self.value(b).data(), out.data_mut(), sa[0], sa[1], sb[1]);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// a * b^T
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[1] {
            return Err(shape_err("matmul_nt", sa, sb));
        }
        let mut out = Tensor::zeros(sa[0], sb[0]);
        mm_nt_acc(self.value(a).data(), self.value(b).data(), out.data_mut(), sa[0], sa[1], sb[0]);
        Ok(self.push(Op::MatMulNT(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr[0] != 1 || sr[1] != sa[1] {
            return Err(shape_err("add_row", sa, sr));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for chunk in out.data_mut().chunks_mut(sa[1].max(1)) {
            for (x, &y) in chunk.iter_mut().zip(&r) {
                *x += y;
            }
        }
        Ok(self.push(Op::AddRow(a, row), out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("mul", sa, sb));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(sa[0], sa[1], data)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a);
        let out = Tensor::new(v.rows(), v.cols(), v.data().iter().map(|&x| x * s).collect()).expect("same shape");
        self.push(Op::Scale(a, s), out)
    }

    /// x W + b
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, DiffError> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// GELU, tanh form.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = T::of(GELU_C);
        let k = T::of(0.044715);
        let half = T::of(0.5);
        let v = self.value(a);
        let data = v.data().iter().map(|&x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh())).collect();
        let out = Tensor::new(v.rows(), v.cols(), data).expect("same shape");
        self.push(Op::Gelu(a), out)
    }

    /// Row-wise layer norm with `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, DiffError> {
        let sx = self.shape(x);
        for p in [gain, bias] {
            let sp = self.shape(p);
            if sp != [1, sx[1]] {
                return Err(shape_err("layer_norm", sx, sp));
            }
        }
        let c = sx[1];
        let cn = T::of(c as f64);
        let eps = T::of(LN_EPS);
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(sx[0]);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(c.max(1)) {
            let mean = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = Tensor::new(sx[0], sx[1], out)?;
        Ok(self.push(Op::LayerNorm { x, gain, bias, xhat, rstd }, out))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let c = v.cols().max(1);
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(c) {
            let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let e: Vec<T> = row.iter().map(|&x| (x - m).exp()).collect();
            let s: T = e.iter().copied().sum();
            data.extend(e.into_iter().map(|x| x / s));
        }
        let out = Tensor::new(v.rows(), v.cols(), data).expect("same shape");
        self.push(Op::Softmax(a), out)
    }

    /// Inverted dropout; the identity on an evaluation graph or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.train || p <= 0.0 {
            return a;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.value(a).len();
        let mask: Vec<T> = (0..n).map(|_| if self.rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let v = self.value(a);
        let data = v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(v.rows(), v.cols(), data).expect("same shape");
        self.push(Op::Mask(a, mask), out)
    }

    /// Rows of `table` at `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, DiffError> {
        let st = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= st[0]) {
            return Err(DiffError::Shape(format!("gather: row {bad} out of {}", st[0])));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * st[1]);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(ids.len(), st[1], data)?;
        Ok(self.push(Op::Gather(table, ids.to_vec()), out))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or_else(|| DiffError::Shape("concat_rows: no inputs".into()))?;
        let c = self.shape(first)[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[1] != c {
                return Err(shape_err("concat_rows", self.shape(first), s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(rows, c, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let s = self.shape(a);
        if start + len > s[0] {
            return Err(DiffError::Shape(format!("slice_rows {start}..{} of {}", start + len, s[0])));
        }
        let data = self.value(a).data()[start * s[1]..(start + len) * s[1]].to_vec();
        let out = Tensor::new(len, s[1], data)?;
        Ok(self.push(Op::SliceRows(a, start), out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or_else(|| DiffError::Shape("concat_cols: no inputs".into()))?;
        let r = self.shape(first)[0];
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != r {
                return Err(shape_err("concat_cols", self.shape(first), s));
            }
            cols += s[1];
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(r, cols, data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let s = self.shape(a);
        if start + len > s[1] {
            return Err(DiffError::Shape(format!("slice_cols {start}..{} of {}", start + len, s[1])));
        }
        let v = self.value(a);
        let mut data = Vec::with_capacity(s[0] * len);
        for i in 0..s[0] {
            data.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let out = Tensor::new(s[0], len, data)?;
        Ok(self.push(Op::SliceCols(a, start), out))
    }

    /// Column means as a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let s = self.shape(a);
        if s[0] == 0 {
            return Err(DiffError::Shape("mean_rows of an empty tensor".into()));
        }
        let inv = T::one() / T::of(s[0] as f64);
        let mut data = vec![T::zero(); s[1]];
        for row in self.value(a).data().chunks(s[1].max(1)) {
            for (d, &x) in data.iter_mut().zip(row) {
                *d += x * inv;
            }
        }
        let out = Tensor::row_vector(data);
        Ok(self.push(Op::MeanRows(a), out))
    }

    /// Elementwise sum of equally shaped values.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or_else(|| DiffError::Shape("sum: no inputs".into()))?;
        let mut out = self.value(first).clone();
        for &p in &parts[1..] {
            if self.shape(p) != out.shape() {
                return Err(shape_err("sum", out.shape(), self.shape(p)));
            }
            out.add_assign(self.value(p));
        }
        Ok(self.push(Op::Sum(parts.to_vec()), out))
    }

    /// `-log softmax(logits)[target]` for a `1 x a` logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, DiffError> {
        let s = self.shape(logits);
        if s[0] != 1 || target >= s[1] {
            return Err(DiffError::Shape(format!("cross_entropy: target {target} for {}x{} logits", s[0], s[1])));
        }
        let row = self.value(logits).data();
        let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let e: Vec<T> = row.iter().map(|&x| (x - m).exp()).collect();
        let z: T = e.iter().copied().sum();
        let loss = z.ln() + m - row[target];
        let probs = e.into_iter().map(|x| x / z).collect();
        Ok(self.push(Op::CrossEntropy { logits, target, probs }, Tensor::scalar(loss)))
    }

    /// Scaled dot-product attention; returns `(output, weights)`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<(Var, Var), DiffError> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if sk[0] != sv[0] {
            return Err(shape_err("attention K/V", sk, sv));
        }
        let scores = self.matmul_nt(q, k)?;
        let scores = self.scale(scores, T::one() / T::of(sq[1] as f64).sqrt());
        let w = self.softmax_rows(scores);
        let out = self.matmul(w, v)?;
        Ok((out, w))
    }

    /// Backpropagates from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, DiffError> {
        if self.shape(loss) != [1, 1] {
            return Err(DiffError::Shape(format!("backward from a {:?} value", self.shape(loss))));
        }
        if !self.value(loss).all_finite() {
            return Err(DiffError::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut params = ParamGrads::zeros_like(0);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads, &mut params);
            grads[i] = Some(g);
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>], params: &mut ParamGrads<T>) {
        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, t: Tensor<T>) {
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot => *slot = Some(t),
            }
        }
        fn slot<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, shape: [usize; 2]) -> &mut Tensor<T> {
            grads[v.0].get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]))
        }
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Input => {}
            Op::Param(id) => params.accumulate(*id, g),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                mm_nt_acc(gd, bv, slot(grads, *a, sa).data_mut(), sa[0], sb[1], sa[1]);
                mm_tn_acc(av, gd, slot(grads, *b, sb).data_mut(), sa[0], sa[1], sb[1]);
            }
            Op::MatMulNT(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // out = a b^T: da = g b, db = g^T a
                mm_acc(gd, bv, slot(grads, *a, sa).data_mut(), sa[0], sb[0], sa[1]);
                mm_tn_acc(gd, av, slot(grads, *b, sb).data_mut(), sa[0], sb[0], sa[1]);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::AddRow(a, r) => {
                acc(grads, *a, g.clone());
                let c = g.cols();
                let mut rg = vec![T::zero(); c];
                for row in gd.chunks(c.max(1)) {
                    for (x, &y) in rg.iter_mut().zip(row) {
                        *x += y;
                    }
                }
                acc(grads, *r, Tensor::row_vector(rg));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = gd.iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                let gb = gd.iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                acc(grads, *a, Tensor::new(g.rows(), g.cols(), ga).expect("same shape"));
                acc(grads, *b, Tensor::new(g.rows(), g.cols(), gb).expect("same shape"));
            }
            Op::Scale(a, s) => {
                let d = gd.iter().map(|&x| x * *s).collect();
                acc(grads, *a, Tensor::new(g.rows(), g.cols(), d).expect("same shape"));
            }
            Op::Gelu(a) => {
                let c = T::of(GELU_C);
                let k = T::of(0.044715);
                let half = T::of(0.5);
                let three = T::of(3.0);
                let d = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&x, &gy)| {
                        let t = (c * (x + k * x * x * x)).tanh();
                        let dt = (T::one() - t * t) * c * (T::one() + three * k * x * x);
                        gy * (half * (T::one() + t) + half * x * dt)
                    })
                    .collect();
                acc(grads, *a, Tensor::new(g.rows(), g.cols(), d).expect("same shape"));
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let c = g.cols();
                let cn = T::of(c as f64);
                let gv = self.value(*gain).data();
                let mut dgain = vec![T::zero(); c];
                let mut dbias = vec![T::zero(); c];
                let mut dx = Vec::with_capacity(gd.len());
                for (r, (grow, hrow)) in gd.chunks(c.max(1)).zip(xhat.chunks(c.max(1))).enumerate() {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..c {
                        dgain[j] += grow[j] * hrow[j];
                        dbias[j] += grow[j];
                        let dh = grow[j] * gv[j];
                        m1 += dh;
                        m2 += dh * hrow[j];
                    }
                    m1 = m1 / cn;
                    m2 = m2 / cn;
                    for j in 0..c {
                        let dh = grow[j] * gv[j];
                        dx.push(rstd[r] * (dh - m1 - hrow[j] * m2));
                    }
                }
                acc(grads, *x, Tensor::new(g.rows(), c, dx).expect("same shape"));
                acc(grads, *gain, Tensor::row_vector(dgain));
                acc(grads, *bias, Tensor::row_vector(dbias));
            }
            Op::Softmax(a) => {
                let c = g.cols().max(1);
                let y = node.value.data();
                let mut d = Vec::with_capacity(gd.len());
                for (yr, gr) in y.chunks(c).zip(gd.chunks(c)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    d.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                }
                acc(grads, *a, Tensor::new(g.rows(), g.cols(), d).expect("same shape"));
            }
            Op::Mask(a, mask) => {
                let d = gd.iter().zip(mask).map(|(&x, &m)| x * m).collect();
                acc(grads, *a, Tensor::new(g.rows(), g.cols(), d).expect("same shape"));
            }
            Op::Gather(table, ids) => {
                let st = self.shape(*table);
                let t = slot(grads, *table, st);
                let c = st[1];
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut t.data_mut()[id * c..(id + 1) * c];
                    for (x, &y) in dst.iter_mut().zip(&gd[r * c..(r + 1) * c]) {
                        *x += y;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut start = 0;
                for &p in parts {
                    let s = self.shape(p);
                    let piece = gd[start * c..(start + s[0]) * c].to_vec();
                    acc(grads, p, Tensor::new(s[0], c, piece).expect("same shape"));
                    start += s[0];
                }
            }
            Op::SliceRows(a, start) => {
                let sa = self.shape(*a);
                let t = slot(grads, *a, sa);
                let c = sa[1];
                for (x, &y) in t.data_mut()[start * c..start * c + gd.len()].iter_mut().zip(gd) {
                    *x += y;
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut start = 0;
                for &p in parts {
                    let s = self.shape(p);
                    let mut piece = Vec::with_capacity(s[0] * s[1]);
                    for r in 0..s[0] {
                        piece.extend_from_slice(&gd[r * total + start..r * total + start + s[1]]);
                    }
                    acc(grads, p, Tensor::new(s[0], s[1], piece).expect("same shape"));
                    start += s[1];
                }
            }
            Op::SliceCols(a, start) => {
                let sa = self.shape(*a);
                let len = g.cols();
                let t = slot(grads, *a, sa);
                for r in 0..sa[0] {
                    let dst = &mut t.data_mut()[r * sa[1] + start..r * sa[1] + start + len];
                    for (x, &y) in dst.iter_mut().zip(&gd[r * len..(r + 1) * len]) {
                        *x += y;
                    }
                }
            }
            Op::MeanRows(a) => {
                let sa = self.shape(*a);
                let inv = T::one() / T::of(sa[0] as f64);
                let row: Vec<T> = gd.iter().map(|&x| x * inv).collect();
                let mut d = Vec::with_capacity(sa[0] * sa[1]);
                for _ in 0..sa[0] {
                    d.extend_from_slice(&row);
                }
                acc(grads, *a, Tensor::new(sa[0], sa[1], d).expect("same shape"));
            }
            Op::Sum(parts) => {
                for &p in parts {
                    acc(grads, p, g.clone());
                }
            }
            Op::CrossEntropy { logits, target, probs } => {
                let gy = gd[0];
                let mut d: Vec<T> = probs.iter().map(|&p| p * gy).collect();
                d[*target] -= gy;
                acc(grads, *logits, Tensor::row_vector(d));
            }
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Graph::new()
    }
}

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::Mat;

/// Sentinel in gather index maps meaning "read an implicit zero".
pub const ZERO: u32 = u32::MAX;

/// Node handle inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Square(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    Gather { src: Var, index: Rc<[u32]> },
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    RowGroupMean { x: Var, group: usize },
    MaxRows { x: Var, argmax: Vec<usize> },
    Sum(Var),
    Pick { x: Var, row: usize, col: usize },
}

struct Node {
    value: Option<Mat>,
    op: Op,
    needs_grad: bool,
}

/// A single forward pass recorded as a tape of 2-D `f64` matrices.
///
/// Parameters are read by reference from the [`ParamStore`]; everything else
/// is owned by the tape. Calling [`Graph::backward`] walks the tape in
/// reverse and returns gradients for every parameter that was touched.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
}

impl<'s> Graph<'s> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode graph with its own dropout stream.
    pub fn training(store: &'s ParamStore, seed: u64) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.value(id),
            _ => node.value.as_ref().expect("non-parameter node owns its value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn rows(&self, v: Var) -> usize {
        self.value(v).nrows()
    }

    pub fn cols(&self, v: Var) -> usize {
        self.value(v).ncols()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on non-scalar node");
        m[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Mat) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Input,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dims");
        let out = va.dot(vb);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.ncols(), "matmul_nt inner dims");
        let out = va.dot(&vb.t());
        self.push(out, Op::MatMulNT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a, k), &[a])
    }

    /// `a (r×c) + row (1×c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.dim(), (1, va.ncols()), "add_row shapes");
        let out = va + vr;
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    /// `a (r×c) ⊙ row (1×c)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.dim(), (1, va.ncols()), "mul_row shapes");
        let out = va * vr;
        self.push(out, Op::MulRow(a, row), &[a, row])
    }

    /// `a (r×c) ⊙ col (r×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (va, vc) = (self.value(a), self.value(col));
        assert_eq!(vc.dim(), (va.nrows(), 1), "mul_col shapes");
        let out = va * vc;
        self.push(out, Op::MulCol(a, col), &[a, col])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::abs);
        self.push(out, Op::Abs(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(out, Op::LogSoftmaxRows(a), &[a])
    }

    /// Row-wise standardization `(x − μ)/√(σ² + eps)` without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut out = self.value(a).clone();
        let cols = out.ncols() as f64;
        let mut inv_std = Vec::with_capacity(out.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / cols;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) * inv);
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNormRows { x: a, inv_std }, &[a])
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let mut norms = Vec::with_capacity(out.nrows());
        for mut row in out.rows_mut() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            row.mapv_inplace(|x| x / n);
            norms.push(n);
        }
        self.push(out, Op::L2NormalizeRows { x: a, norms }, &[a])
    }

    /// Builds a `rows × cols` matrix whose flat element `i` is the flat
    /// element `index[i]` of `src`, or zero where `index[i] == ZERO`.
    ///
    /// This single primitive covers im2col for every convolution, nearest
    /// resampling, frame duplication and pair expansion for additive attention.
    pub fn gather(&mut self, src: Var, rows: usize, cols: usize, index: Rc<[u32]>) -> Var {
        assert_eq!(index.len(), rows * cols, "gather index length");
        let v = self.value(src).as_standard_layout();
        let flat = v.as_slice().expect("standard layout");
        let data: Vec<f64> = index
            .iter()
            .map(|&i| if i == ZERO { 0.0 } else { flat[i as usize] })
            .collect();
        let out = Array2::from_shape_vec((rows, cols), data).expect("gather shape");
        self.push(out, Op::Gather { src, index }, &[src])
    }

    /// Selects whole rows of `src` (`None` yields a zero row).
    pub fn gather_rows(&mut self, src: Var, rows: &[Option<usize>]) -> Var {
        let cols = self.cols(src);
        let mut index = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            match r {
                Some(r) => index.extend((0..cols).map(|c| (r * cols + c) as u32)),
                None => index.extend(std::iter::repeat_n(ZERO, cols)),
            }
        }
        self.gather(src, rows.len(), cols, index.into())
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.len(), rows * cols, "reshape element count");
        let out = Array2::from_shape_vec((rows, cols), v.iter().copied().collect())
            .expect("reshape shape");
        self.push(out, Op::Reshape(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.rows(parts[0]);
        let views: Vec<_> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.rows(p), rows, "concat_cols row counts");
                self.value(p).view()
            })
            .collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat");
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols { x: a, start }, &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows { x: a, start }, &[a])
    }

    /// Mean over consecutive blocks of `group` rows.
    pub fn row_group_mean(&mut self, a: Var, group: usize) -> Var {
        let v = self.value(a);
        assert!(group > 0 && v.nrows() % group == 0, "row_group_mean group size");
        let n = v.nrows() / group;
        let mut out = Array2::zeros((n, v.ncols()));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let block = v.slice(s![i * group..(i + 1) * group, ..]);
            row.assign(&block.sum_axis(Axis(0)));
            row.mapv_inplace(|x| x / group as f64);
        }
        self.push(out, Op::RowGroupMean { x: a, group }, &[a])
    }

    /// Column-wise maximum over all rows (`1 × c`). Ties go to the first row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mut out = Array2::zeros((1, v.ncols()));
        let mut argmax = Vec::with_capacity(v.ncols());
        for (c, col) in v.columns().into_iter().enumerate() {
            let (best, val) = col
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
                    if x > bv {
                        (i, x)
                    } else {
                        (bi, bv)
                    }
                });
            out[[0, c]] = val;
            argmax.push(best);
        }
        self.push(out, Op::MaxRows { x: a, argmax }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn pick(&mut self, a: Var, row: usize, col: usize) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a)[[row, col]]);
        self.push(out, Op::Pick { x: a, row, col }, &[a])
    }

    /// Inverted dropout; identity in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let (r, c) = self.shape(a);
        let rng = &mut self.rng;
        let mask = Array2::from_shape_simple_fn((r, c), || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = self.constant(mask);
        self.mul(a, m)
    }

    /// Zeroes rows where `mask[i]` is false.
    pub fn mask_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        assert_eq!(mask.len(), self.rows(a), "mask length");
        if mask.iter().all(|&m| m) {
            return a;
        }
        let col = Array2::from_shape_fn((mask.len(), 1), |(i, _)| if mask[i] { 1.0 } else { 0.0 });
        let c = self.constant(col);
        self.mul_col(a, c)
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut params: Vec<Option<Mat>> = (0..self.store.len()).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Input => grads[i] = Some(g),
                Op::Param(id) => accumulate(&mut params[id.0], g),
                Op::MatMul(a, b) => {
                    if self.wants(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.wants(*a) {
                        let ga = g.dot(self.value(*b));
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let gb = g.t().dot(self.value(*a));
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.wants(*b) {
                        self.acc(&mut grads, *b, g.clone());
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.wants(*b) {
                        self.acc(&mut grads, *b, -&g);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.wants(*a) {
                        let ga = &g * self.value(*b);
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let gb = &g * self.value(*a);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, k) => self.acc(&mut grads, *a, g * *k),
                Op::AddRow(a, row) => {
                    if self.wants(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *row, gr);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    if self.wants(*row) {
                        let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *row, gr);
                    }
                    if self.wants(*a) {
                        let ga = &g * self.value(*row);
                        self.acc(&mut grads, *a, ga);
                    }
                }
                Op::MulCol(a, col) => {
                    if self.wants(*col) {
                        let gc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        self.acc(&mut grads, *col, gc);
                    }
                    if self.wants(*a) {
                        let ga = &g * self.value(*col);
                        self.acc(&mut grads, *a, ga);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|g, &y| *g *= 1.0 - y * y);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|g, &y| {
                        if y <= 0.0 {
                            *g = 0.0
                        }
                    });
                    self.acc(&mut grads, *a, ga);
                }
                Op::Abs(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    Zip::from(&mut ga).and(x).for_each(|g, &x| *g *= sign(x));
                    self.acc(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    Zip::from(&mut ga).and(x).for_each(|g, &x| *g *= 2.0 * x);
                    self.acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = g;
                    for (mut gr, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = gr.iter().zip(yr.iter()).map(|(g, y)| g * y).sum();
                        Zip::from(&mut gr).and(&yr).for_each(|g, &y| *g = y * (*g - dot));
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = g;
                    for (mut gr, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let total = gr.sum();
                        Zip::from(&mut gr)
                            .and(&yr)
                            .for_each(|g, &y| *g -= y.exp() * total);
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::LayerNormRows { x, inv_std } => {
                    let y = node.value.as_ref().unwrap();
                    let n = y.ncols() as f64;
                    let mut ga = g;
                    for ((mut gr, yr), &inv) in
                        ga.rows_mut().into_iter().zip(y.rows()).zip(inv_std.iter())
                    {
                        let mean_g = gr.sum() / n;
                        let mean_gy: f64 =
                            gr.iter().zip(yr.iter()).map(|(g, y)| g * y).sum::<f64>() / n;
                        Zip::from(&mut gr)
                            .and(&yr)
                            .for_each(|g, &y| *g = inv * (*g - mean_g - y * mean_gy));
                    }
                    self.acc(&mut grads, *x, ga);
                }
                Op::L2NormalizeRows { x, norms } => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = g;
                    for ((mut gr, yr), &n) in
                        ga.rows_mut().into_iter().zip(y.rows()).zip(norms.iter())
                    {
                        let dot: f64 = gr.iter().zip(yr.iter()).map(|(g, y)| g * y).sum();
                        Zip::from(&mut gr)
                            .and(&yr)
                            .for_each(|g, &y| *g = (*g - y * dot) / n);
                    }
                    self.acc(&mut grads, *x, ga);
                }
                Op::Gather { src, index } => {
                    let shape = self.shape(*src);
                    let mut gs = vec![0.0; shape.0 * shape.1];
                    let g = g.as_standard_layout();
                    let gflat = g.as_slice().expect("standard layout");
                    for (&i, &gv) in index.iter().zip(gflat) {
                        if i != ZERO {
                            gs[i as usize] += gv;
                        }
                    }
                    let gs = Array2::from_shape_vec(shape, gs).unwrap();
                    self.acc(&mut grads, *src, gs);
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a);
                    let ga = Array2::from_shape_vec(shape, g.iter().copied().collect()).unwrap();
                    self.acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.cols(p);
                        if self.wants(p) {
                            let gp = g.slice(s![.., start..start + w]).to_owned();
                            self.acc(&mut grads, p, gp);
                        }
                        start += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let mut ga = Array2::zeros(self.shape(*x));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    self.acc(&mut grads, *x, ga);
                }
                Op::SliceRows { x, start } => {
                    let mut ga = Array2::zeros(self.shape(*x));
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    self.acc(&mut grads, *x, ga);
                }
                Op::RowGroupMean { x, group } => {
                    let (r, c) = self.shape(*x);
                    let k = 1.0 / *group as f64;
                    let ga = Array2::from_shape_fn((r, c), |(i, j)| g[[i / group, j]] * k);
                    self.acc(&mut grads, *x, ga);
                }
                Op::MaxRows { x, argmax } => {
                    let mut ga = Array2::zeros(self.shape(*x));
                    for (c, &r) in argmax.iter().enumerate() {
                        ga[[r, c]] = g[[0, c]];
                    }
                    self.acc(&mut grads, *x, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Pick { x, row, col } => {
                    let mut ga = Array2::zeros(self.shape(*x));
                    ga[[*row, *col]] = g[[0, 0]];
                    self.acc(&mut grads, *x, ga);
                }
            }
        }
        Gradients {
            nodes: grads,
            params,
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if self.nodes[v.0].needs_grad {
            accumulate(&mut grads[v.0], g);
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Mat>>,
    params: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of an [`Graph::input`] leaf.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params[id.0].as_ref()
    }

    pub fn into_params(self) -> Vec<Option<Mat>> {
        self.params
    }
}

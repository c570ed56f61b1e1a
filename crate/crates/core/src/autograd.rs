//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value in a forward pass is a node on a [`Tape`]. Parameters live in a
//! [`ParamStore`] and enter the tape as leaves; [`Tape::backward`] returns their gradients.
//! Spatial feature maps are carried as `(pixels × channels)` matrices in row-major pixel
//! order, so convolutions and resamplings reduce to gathers, sparse row maps and matmuls.

use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

pub type Matrix = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (ParamId(i), self.names[i].as_str(), v))
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.iter().filter(move |(_, n, _)| n.starts_with(prefix)).map(|(id, _, _)| id)
    }
}

/// Per-parameter gradient accumulator.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients { grads: vec![None; store.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(g) = theirs {
                match mine {
                    Some(m) => *m += g,
                    None => *mine = Some(g.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Sparse linear map applied to rows: `Y = S · X`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    pub rows: usize,
    pub cols: usize,
    /// `(output row, input row, weight)` triplets.
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseRows {
    pub fn apply(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.nrows(), self.cols, "sparse map input rows");
        let mut y = Matrix::zeros((self.rows, x.ncols()));
        for &(r, c, w) in &self.entries {
            let src = x.row(c);
            let mut dst = y.row_mut(r);
            dst.scaled_add(w, &src);
        }
        y
    }

    pub fn apply_transpose(&self, y: &Matrix) -> Matrix {
        assert_eq!(y.nrows(), self.rows, "sparse map output rows");
        let mut x = Matrix::zeros((self.cols, y.ncols()));
        for &(r, c, w) in &self.entries {
            let src = y.row(r);
            let mut dst = x.row_mut(c);
            dst.scaled_add(w, &src);
        }
        x
    }
}

/// Row gather into concatenated column blocks: output row `o`, block `j` is input row
/// `index[o * blocks + j]`, or zeros for `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct RowGather {
    pub out_rows: usize,
    pub blocks: usize,
    pub index: Vec<Option<usize>>,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather { x: Var, gather: Rc<RowGather> },
    Sparse { x: Var, map: Rc<SparseRows> },
    BceLogits { x: Var, target: Rc<Matrix>, weight: Rc<Matrix> },
    Dice { x: Var, target: Rc<Matrix>, region: Rc<Matrix> },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Records a forward computation for later differentiation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large |x|.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape { params, nodes: Vec::with_capacity(1024), param_vars: HashMap::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `a + row`, broadcasting a `1 × C` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1);
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1);
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a) * factor;
        self.push(v, Op::Scale(a, factor))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(max.is_finite(), "softmax row without finite entries");
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let c = x.ncols() as f64;
        let mut v = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in v.rows_mut() {
            let mean = row.sum() / c;
            row.mapv_inplace(|t| t - mean);
            let var = row.iter().map(|t| t * t).sum::<f64>() / c;
            let r = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|t| t * r);
            inv_std.push(r);
        }
        self.push(v, Op::LayerNormRows { x: a, inv_std })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols { x: a, start })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows { x: a, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shapes");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shapes");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather(&mut self, a: Var, gather: Rc<RowGather>) -> Var {
        let x = self.value(a);
        let c = x.ncols();
        let mut v = Matrix::zeros((gather.out_rows, gather.blocks * c));
        for o in 0..gather.out_rows {
            for j in 0..gather.blocks {
                if let Some(src) = gather.index[o * gather.blocks + j] {
                    v.slice_mut(s![o, j * c..(j + 1) * c]).assign(&x.row(src));
                }
            }
        }
        self.push(v, Op::Gather { x: a, gather })
    }

    pub fn sparse(&mut self, a: Var, map: Rc<SparseRows>) -> Var {
        let v = map.apply(self.value(a));
        self.push(v, Op::Sparse { x: a, map })
    }

    /// `Σ w · (softplus(x) − x·y)` as a `1 × 1` node. Normalization belongs in `weight`.
    pub fn bce_logits(&mut self, x: Var, target: Rc<Matrix>, weight: Rc<Matrix>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.dim(), target.dim());
        assert_eq!(xv.dim(), weight.dim());
        let mut total = 0.0;
        Zip::from(xv).and(&*target).and(&*weight).for_each(|&x, &y, &w| {
            if w != 0.0 {
                total += w * (softplus(x) - x * y);
            }
        });
        self.push(Matrix::from_elem((1, 1), total), Op::BceLogits { x, target, weight })
    }

    /// Dice loss on `sigmoid(x)` against `target` restricted to `region`, smoothing 1.
    pub fn dice(&mut self, x: Var, target: Rc<Matrix>, region: Rc<Matrix>) -> Var {
        let (inter, ps, gs) = dice_sums(self.value(x), &target, &region);
        let loss = 1.0 - (2.0 * inter + 1.0) / (ps + gs + 1.0);
        self.push(Matrix::from_elem((1, 1), loss), Op::Dice { x, target, region })
    }

    pub fn sum_scalars(&mut self, items: &[Var]) -> Var {
        let mut iter = items.iter();
        let first = match iter.next() {
            Some(&v) => v,
            None => return self.constant(Matrix::zeros((1, 1))),
        };
        iter.fold(first, |acc, &v| self.add(acc, v))
    }

    /// Gradients of scalar node `loss` with respect to every parameter used on this tape.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::from_elem((1, 1), 1.0));
        let mut out = Gradients::zeros_like(self.params);

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.grads[id.0] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*row);
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, ga);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g * *f),
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| *d *= gelu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    let dots = ga.sum_axis(Axis(1));
                    Zip::from(ga.rows_mut()).and(y.rows()).and(&dots).for_each(|mut r, yr, &d| {
                        r.zip_mut_with(&yr, |v, &yy| *v -= yy * d);
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNormRows { x, inv_std } => {
                    let xhat = &node.value;
                    let c = xhat.ncols() as f64;
                    let mut ga = g.clone();
                    for (r, (mut grow, xrow)) in ga.rows_mut().into_iter().zip(xhat.rows()).enumerate() {
                        let mean_g = grow.sum() / c;
                        let mean_gx = grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / c;
                        let rs = inv_std[r];
                        grow.zip_mut_with(&xrow, |gv, &xh| *gv = rs * (*gv - mean_g - xh * mean_gx));
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::SliceCols { x, start } => {
                    let mut gx = Matrix::zeros(self.shape(*x));
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *x, gx);
                }
                Op::SliceRows { x, start } => {
                    let mut gx = Matrix::zeros(self.shape(*x));
                    gx.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(&mut grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        acc(&mut grads, p, g.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::Gather { x, gather } => {
                    let c = self.shape(*x).1;
                    let mut gx = Matrix::zeros(self.shape(*x));
                    for o in 0..gather.out_rows {
                        for j in 0..gather.blocks {
                            if let Some(src) = gather.index[o * gather.blocks + j] {
                                let mut dst = gx.row_mut(src);
                                dst += &g.slice(s![o, j * c..(j + 1) * c]);
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Sparse { x, map } => acc(&mut grads, *x, map.apply_transpose(&g)),
                Op::BceLogits { x, target, weight } => {
                    let up = g[[0, 0]];
                    let mut gx = Matrix::zeros(self.shape(*x));
                    Zip::from(&mut gx).and(self.value(*x)).and(&**target).and(&**weight).for_each(
                        |d, &xv, &y, &w| {
                            if w != 0.0 {
                                *d = up * w * (sigmoid(xv) - y);
                            }
                        },
                    );
                    acc(&mut grads, *x, gx);
                }
                Op::Dice { x, target, region } => {
                    let up = g[[0, 0]];
                    let xv = self.value(*x);
                    let (inter, ps, gs) = dice_sums(xv, target, region);
                    let den = ps + gs + 1.0;
                    let num = 2.0 * inter + 1.0;
                    let mut gx = Matrix::zeros(xv.dim());
                    Zip::from(&mut gx).and(xv).and(&**target).and(&**region).for_each(
                        |d, &xv, &y, &r| {
                            if r != 0.0 {
                                let sp = sigmoid(xv);
                                let dl_ds = -r * (2.0 * y * den - num) / (den * den);
                                *d = up * dl_ds * sp * (1.0 - sp);
                            }
                        },
                    );
                    acc(&mut grads, *x, gx);
                }
            }
        }
        out
    }
}

fn dice_sums(x: &Matrix, target: &Matrix, region: &Matrix) -> (f64, f64, f64) {
    assert_eq!(x.dim(), target.dim());
    assert_eq!(x.dim(), region.dim());
    let (mut inter, mut ps, mut gs) = (0.0, 0.0, 0.0);
    Zip::from(x).and(target).and(region).for_each(|&x, &y, &r| {
        if r != 0.0 {
            let p = sigmoid(x);
            inter += r * p * y;
            ps += r * p;
            gs += r * y;
        }
    });
    (inter, ps, gs)
}

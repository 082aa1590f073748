//! Minimal reverse-mode differentiation over 2D arrays.
//!
//! A [`Graph`] records every operation eagerly; [`Graph::backward`] walks the
//! tape in reverse and returns gradients for every node that depends on a
//! parameter leaf. All values are row-major `Array2`; higher-rank data is
//! flattened by the caller (e.g. `[batch, J*3]`).

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    AddConst(usize),
    MulConst(usize, Array2<T>),
    Relu(usize),
    Sqrt(usize),
    SoftmaxRowGroups(usize, usize),
    GatherRows(usize, Vec<usize>),
    GatherCols(usize, Vec<usize>),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SumColGroups(usize, usize),
    SumRowGroups(usize, usize),
    Sum(usize),
    Reshape(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Eager tape of array operations.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the differentiated output w.r.t. `v`, if `v` is upstream of it.
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(value.is_standard_layout());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    /// Reads a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> T {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1));
        a[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value.as_standard_layout().into_owned(), Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Array2<T>) -> Var {
        self.push(value.as_standard_layout().into_owned(), Op::Leaf, true)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Array2::zeros((rows, cols)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(v, Op::MatMul(a.0, b.0), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(v, Op::Add(a.0, b.0), rg)
    }

    /// `a [n, m] + row [1, m]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1);
        assert_eq!(self.value(a).ncols(), self.value(row).ncols());
        let v = self.value(a) + self.value(row);
        let rg = self.rg(a.0) || self.rg(row.0);
        self.push(v, Op::AddRow(a.0, row.0), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shape mismatch");
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(v, Op::Sub(a.0, b.0), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(v, Op::Mul(a.0, b.0), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "div shape mismatch");
        let v = self.value(a) / self.value(b);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(v, Op::Div(a.0, b.0), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a) * c;
        let rg = self.rg(a.0);
        self.push(v, Op::Scale(a.0, c), rg)
    }

    /// `a + c` for a constant array of the same shape.
    pub fn add_const(&mut self, a: Var, c: &Array2<T>) -> Var {
        let v = self.value(a) + c;
        let rg = self.rg(a.0);
        self.push(v, Op::AddConst(a.0), rg)
    }

    /// `a * c` elementwise for a constant array of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Array2<T>) -> Var {
        let v = self.value(a) * &c;
        let rg = self.rg(a.0);
        self.push(v, Op::MulConst(a.0, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.rg(a.0);
        self.push(v, Op::Relu(a.0), rg)
    }

    /// Elementwise square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(T::zero()).sqrt());
        let rg = self.rg(a.0);
        self.push(v, Op::Sqrt(a.0), rg)
    }

    /// Softmax down each column within consecutive blocks of `group` rows.
    pub fn softmax_row_groups(&mut self, a: Var, group: usize) -> Var {
        let x = self.value(a);
        assert!(group > 0 && x.nrows().is_multiple_of(group));
        let mut out = x.clone();
        for mut block in out.axis_chunks_iter_mut(Axis(0), group) {
            for mut col in block.columns_mut() {
                let max = col.iter().copied().fold(T::neg_infinity(), T::max);
                col.mapv_inplace(|v| (v - max).exp());
                let sum: T = col.iter().copied().sum();
                col.mapv_inplace(|v| v / sum);
            }
        }
        let rg = self.rg(a.0);
        self.push(out, Op::SoftmaxRowGroups(a.0, group), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let v = self.value(a).select(Axis(0), &idx);
        let rg = self.rg(a.0);
        self.push(v, Op::GatherRows(a.0, idx), rg)
    }

    pub fn gather_cols(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let v = self
            .value(a)
            .select(Axis(1), &idx)
            .as_standard_layout()
            .into_owned();
        let rg = self.rg(a.0);
        self.push(v, Op::GatherCols(a.0, idx), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<'_, T>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views)
            .expect("concat_cols row mismatch")
            .as_standard_layout()
            .into_owned();
        let rg = parts.iter().any(|p| self.rg(p.0));
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<'_, T>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows column mismatch");
        let rg = parts.iter().any(|p| self.rg(p.0));
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), rg)
    }

    /// `[n, m*g] -> [n, m]`, summing each run of `g` adjacent columns.
    pub fn sum_col_groups(&mut self, a: Var, group: usize) -> Var {
        let x = self.value(a);
        assert!(group > 0 && x.ncols().is_multiple_of(group));
        let m = x.ncols() / group;
        let mut out = Array2::zeros((x.nrows(), m));
        for (mut orow, xrow) in out.rows_mut().into_iter().zip(x.rows()) {
            for k in 0..m {
                orow[k] = xrow.slice(s![k * group..(k + 1) * group]).sum();
            }
        }
        let rg = self.rg(a.0);
        self.push(out, Op::SumColGroups(a.0, group), rg)
    }

    /// `[n*g, m] -> [n, m]`, summing each block of `g` adjacent rows.
    pub fn sum_row_groups(&mut self, a: Var, group: usize) -> Var {
        let x = self.value(a);
        assert!(group > 0 && x.nrows().is_multiple_of(group));
        let n = x.nrows() / group;
        let mut out = Array2::zeros((n, x.ncols()));
        for (mut orow, block) in out.rows_mut().into_iter().zip(x.axis_chunks_iter(Axis(0), group)) {
            orow.assign(&block.sum_axis(Axis(0)));
        }
        let rg = self.rg(a.0);
        self.push(out, Op::SumRowGroups(a.0, group), rg)
    }

    /// Sum of all entries as a `[1, 1]` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a.0);
        self.push(v, Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape size mismatch");
        let v = Array2::from_shape_vec((rows, cols), x.iter().copied().collect())
            .expect("reshape");
        let rg = self.rg(a.0);
        self.push(v, Op::Reshape(a.0), rg)
    }

    /// Euclidean norm of each run of `group` columns: `[n, m*g] -> [n, m]`.
    pub fn group_norms(&mut self, a: Var, group: usize) -> Var {
        let sq = self.mul(a, a);
        let s = self.sum_col_groups(sq, group);
        self.sqrt(s)
    }

    /// Reverse pass from a `[1, 1]` output.
    pub fn backward(&self, out: Var) -> Gradients<T> {
        assert_eq!(self.value(out).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Array2::ones((1, 1)));

        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let node = &self.nodes[i];
        let val = |k: usize| &self.nodes[k].value;
        let acc = |k: usize, d: Array2<T>, grads: &mut [Option<Array2<T>>]| {
            if !self.nodes[k].requires_grad {
                return;
            }
            match &mut grads[k] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&val(*b).t()), grads);
                }
                if self.rg(*b) {
                    acc(*b, val(*a).t().dot(g), grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone(), grads);
                if self.rg(*r) {
                    acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)), grads);
                }
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                if self.rg(*b) {
                    acc(*b, g.mapv(|x| -x), grads);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g * val(*b), grads);
                }
                if self.rg(*b) {
                    acc(*b, g * val(*a), grads);
                }
            }
            Op::Div(a, b) => {
                if self.rg(*a) {
                    acc(*a, g / val(*b), grads);
                }
                if self.rg(*b) {
                    let mut d = g * &node.value;
                    Zip::from(&mut d).and(val(*b)).for_each(|d, &bv| *d = -*d / bv);
                    acc(*b, d, grads);
                }
            }
            Op::Scale(a, c) => acc(*a, g * *c, grads),
            Op::AddConst(a) => acc(*a, g.clone(), grads),
            Op::MulConst(a, c) => acc(*a, g * c, grads),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x <= T::zero() {
                        *d = T::zero();
                    }
                });
                acc(*a, d, grads);
            }
            Op::Sqrt(a) => {
                let mut d = g.clone();
                let half = T::lit(0.5);
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                    *d = if y > T::zero() { *d * half / y } else { T::zero() };
                });
                acc(*a, d, grads);
            }
            Op::SoftmaxRowGroups(a, group) => {
                let w = &node.value;
                let mut d = Array2::zeros(w.dim());
                for ((mut db, wb), gb) in d
                    .axis_chunks_iter_mut(Axis(0), *group)
                    .zip(w.axis_chunks_iter(Axis(0), *group))
                    .zip(g.axis_chunks_iter(Axis(0), *group))
                {
                    for c in 0..wb.ncols() {
                        let dot: T = (0..*group).map(|r| wb[[r, c]] * gb[[r, c]]).sum();
                        for r in 0..*group {
                            db[[r, c]] = wb[[r, c]] * (gb[[r, c]] - dot);
                        }
                    }
                }
                acc(*a, d, grads);
            }
            Op::GatherRows(a, idx) => {
                let mut d = Array2::zeros(val(*a).dim());
                for (k, &r) in idx.iter().enumerate() {
                    let mut row = d.row_mut(r);
                    row += &g.row(k);
                }
                acc(*a, d, grads);
            }
            Op::GatherCols(a, idx) => {
                let mut d = Array2::zeros(val(*a).dim());
                for (mut drow, grow) in d.rows_mut().into_iter().zip(g.rows()) {
                    for (k, &c) in idx.iter().enumerate() {
                        drow[c] += grow[k];
                    }
                }
                acc(*a, d, grads);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    if self.rg(p) {
                        acc(p, g.slice(s![.., start..start + w]).to_owned(), grads);
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = val(p).nrows();
                    if self.rg(p) {
                        acc(p, g.slice(s![start..start + h, ..]).to_owned(), grads);
                    }
                    start += h;
                }
            }
            Op::SumColGroups(a, group) => {
                let (n, mg) = val(*a).dim();
                let d = Array2::from_shape_fn((n, mg), |(r, c)| g[[r, c / group]]);
                acc(*a, d, grads);
            }
            Op::SumRowGroups(a, group) => {
                let (ng, m) = val(*a).dim();
                let d = Array2::from_shape_fn((ng, m), |(r, c)| g[[r / group, c]]);
                acc(*a, d, grads);
            }
            Op::Sum(a) => {
                let d = Array2::from_elem(val(*a).dim(), g[[0, 0]]);
                acc(*a, d, grads);
            }
            Op::Reshape(a) => {
                let d = Array2::from_shape_vec(val(*a).dim(), g.iter().copied().collect())
                    .expect("reshape grad");
                acc(*a, d, grads);
            }
        }
    }
}

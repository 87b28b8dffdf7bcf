use alloc::vec;
use alloc::vec::Vec;

use super::encoding::{encode_rows, encode_rows_vjp};
use super::matrix::{affine_rows, gemm_nn, gemm_tn};
use super::{AutodiffError, Matrix, ParamId, ParamStore};
use crate::fields::factor::{reconstruct_rows, reconstruct_rows_vjp};
use crate::math::{sigmoid, softplus};
use crate::render::composite::{composite_rows, composite_rows_vjp};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    Dense { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulColumn { a: Var, col: Var },
    ColumnAffine { a: Var, scale: Vec<f64> },
    Concat(Vec<Var>),
    SliceCols { a: Var, start: usize },
    Gather(Vec<(Var, usize)>),
    PosEnc { a: Var, freqs: usize },
    LowRank { factors: Var, z: Var, rank: usize },
    Composite { rgb: Var, sigma: Var, delta: Vec<f64>, offsets: Vec<usize> },
    SumSquares(Var),
    InvSquareSum { a: Var, floor: f64 },
    SumScalars(Vec<Var>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Append-only record of a forward computation over dense batches.
///
/// Nodes are stored in creation order, so every node's inputs precede it and
/// a reverse sweep is a valid topological traversal. Tapes are single-owner
/// and rebuilt per batch.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    /// Smallest `|x|` over every ReLU input recorded so far (`∞` if none).
    /// Finite differences are only meaningful away from the kink.
    pub fn min_relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(&self.nodes[a.0].value),
                _ => None,
            })
            .flat_map(|m| m.as_slice().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value, false)
    }

    /// A leaf whose gradient is retrievable after [`Tape::backward`].
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Op::Input, value, true)
    }

    /// A leaf bound to a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.value(id).clone(), true)
    }

    /// `x·wᵀ + b` for `x: B×in`, `w: out×in`, `b: 1×out`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "dense",
                expected: (xv.rows(), wv.cols()),
                found: xv.shape(),
            });
        }
        if bv.shape() != (1, wv.rows()) {
            return Err(AutodiffError::ShapeMismatch {
                op: "dense bias",
                expected: (1, wv.rows()),
                found: bv.shape(),
            });
        }
        let out = affine_rows(xv, wv, bv);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Dense { x, w, b }, out, ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let ng = self.needs(a);
        self.push(Op::Relu(a), out, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), out, ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        let ng = self.needs(a);
        self.push(Op::Softplus(a), out, ng)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "{name}: shape mismatch");
        let data = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Matrix::from_vec(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, "add", |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), out, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, "sub", |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), out, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, "mul", |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), out, ng)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        let ng = self.needs(a);
        self.push(Op::Scale(a, factor), out, ng)
    }

    /// Multiply every row of `a` by the matching entry of the column `col`.
    pub fn mul_column(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!(cv.shape(), (av.rows(), 1), "mul_column: column shape mismatch");
        let mut out = av.clone();
        for i in 0..av.rows() {
            let s = cv.get(i, 0);
            out.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        let ng = self.needs(a) || self.needs(col);
        self.push(Op::MulColumn { a, col }, out, ng)
    }

    /// `a[:, j]·scale[j] + offset[j]`.
    pub fn column_affine(&mut self, a: Var, scale: &[f64], offset: &[f64]) -> Var {
        let av = self.value(a);
        assert_eq!(scale.len(), av.cols(), "column_affine: scale length");
        assert_eq!(offset.len(), av.cols(), "column_affine: offset length");
        let mut out = av.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * scale[j] + offset[j];
            }
        }
        let ng = self.needs(a);
        self.push(
            Op::ColumnAffine {
                a,
                scale: scale.to_vec(),
            },
            out,
            ng,
        )
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_cols(&mats);
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::Concat(parts.to_vec()), out, ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_cols(start, len);
        let ng = self.needs(a);
        self.push(Op::SliceCols { a, start }, out, ng)
    }

    /// Row `i` of the result is row `sources[i].1` of node `sources[i].0`.
    pub fn gather(&mut self, sources: &[(Var, usize)]) -> Var {
        let cols = sources.first().map_or(0, |(v, _)| self.value(*v).cols());
        let mut out = Matrix::zeros(sources.len(), cols);
        for (i, &(v, r)) in sources.iter().enumerate() {
            let src = self.value(v);
            assert_eq!(src.cols(), cols, "gather: column mismatch");
            out.row_mut(i).copy_from_slice(src.row(r));
        }
        let ng = sources.iter().any(|&(v, _)| self.needs(v));
        self.push(Op::Gather(sources.to_vec()), out, ng)
    }

    /// Row-wise positional encoding (see [`super::encoding`]).
    pub fn positional_encode(&mut self, a: Var, freqs: usize) -> Var {
        let out = encode_rows(self.value(a), freqs);
        let ng = self.needs(a);
        self.push(Op::PosEnc { a, freqs }, out, ng)
    }

    /// Nested outer-product feature reconstruction with a shared offset row `z`.
    pub fn low_rank(&mut self, factors: Var, z: Var, rank: usize) -> Var {
        let out = reconstruct_rows(self.value(factors), self.value(z), rank);
        let ng = self.needs(factors) || self.needs(z);
        self.push(Op::LowRank { factors, z, rank }, out, ng)
    }

    /// Volume compositing of per-sample `rgb: Q×3` and `sigma: Q×1` into one
    /// colour per ray. Ray `r` owns samples `offsets[r]..offsets[r+1]`.
    pub fn composite(&mut self, rgb: Var, sigma: Var, delta: Vec<f64>, offsets: Vec<usize>) -> Var {
        let out = composite_rows(self.value(rgb), self.value(sigma), &delta, &offsets);
        let ng = self.needs(rgb) || self.needs(sigma);
        self.push(
            Op::Composite {
                rgb,
                sigma,
                delta,
                offsets,
            },
            out,
            ng,
        )
    }

    /// Scalar `Σ a²`.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum_squares());
        let ng = self.needs(a);
        self.push(Op::SumSquares(a), out, ng)
    }

    /// Scalar `Σ 1 / max(a, floor)²`.
    pub fn inv_square_sum(&mut self, a: Var, floor: f64) -> Var {
        let s: f64 = self
            .value(a)
            .as_slice()
            .iter()
            .map(|&v| {
                let c = v.max(floor);
                1.0 / (c * c)
            })
            .sum();
        let ng = self.needs(a);
        self.push(Op::InvSquareSum { a, floor }, Matrix::scalar(s), ng)
    }

    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let s = parts.iter().map(|&p| self.value(p).item()).sum();
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::SumScalars(parts.to_vec()), Matrix::scalar(s), ng)
    }

    /// Reverse sweep from `output` seeded with the cotangent `seed`.
    pub fn backward(&self, output: Var, seed: Matrix) -> Result<Gradients, AutodiffError> {
        let node = self
            .nodes
            .get(output.0)
            .ok_or(AutodiffError::NotRecorded { index: output.0 })?;
        if node.value.shape() != seed.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "backward seed",
                expected: node.value.shape(),
                found: seed.shape(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// `backward` for a 1×1 output with unit seed.
    pub fn backward_scalar(&self, output: Var) -> Result<Gradients, AutodiffError> {
        self.backward(output, Matrix::scalar(1.0))
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs(*x) {
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    gemm_nn(g, wv, &mut dx, 0.0);
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*w) {
                    let mut dw = Matrix::zeros(wv.rows(), wv.cols());
                    gemm_tn(g, xv, &mut dw, 0.0);
                    self.accumulate(grads, *w, dw);
                }
                if self.needs(*b) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, v) in db.row_mut(0).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let data = g
                    .as_slice()
                    .iter()
                    .zip(av.as_slice())
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::Sigmoid(a) => {
                let data = g
                    .as_slice()
                    .iter()
                    .zip(out.as_slice())
                    .map(|(&gv, &y)| gv * y * (1.0 - y))
                    .collect();
                self.accumulate(grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::Softplus(a) => {
                let av = self.value(*a);
                let data = g
                    .as_slice()
                    .iter()
                    .zip(av.as_slice())
                    .map(|(&gv, &x)| gv * sigmoid(x))
                    .collect();
                self.accumulate(grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.as_slice().iter().zip(bv.as_slice()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Matrix::from_vec(g.rows(), g.cols(), d));
                }
                if self.needs(*b) {
                    let d = g.as_slice().iter().zip(av.as_slice()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Matrix::from_vec(g.rows(), g.cols(), d));
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|v| v * f)),
            Op::MulColumn { a, col } => {
                let (av, cv) = (self.value(*a), self.value(*col));
                if self.needs(*a) {
                    let mut da = g.clone();
                    for i in 0..da.rows() {
                        let s = cv.get(i, 0);
                        da.row_mut(i).iter_mut().for_each(|v| *v *= s);
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*col) {
                    let mut dc = Matrix::zeros(cv.rows(), 1);
                    for i in 0..cv.rows() {
                        let s: f64 = g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum();
                        dc.set(i, 0, s);
                    }
                    self.accumulate(grads, *col, dc);
                }
            }
            Op::ColumnAffine { a, scale } => {
                let mut da = g.clone();
                for i in 0..da.rows() {
                    for (j, v) in da.row_mut(i).iter_mut().enumerate() {
                        *v *= scale[j];
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Concat(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        self.accumulate(grads, p, g.slice_cols(at, w));
                    }
                    at += w;
                }
            }
            Op::SliceCols { a, start } => {
                let av = self.value(*a);
                let mut da = Matrix::zeros(av.rows(), av.cols());
                for i in 0..av.rows() {
                    da.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, da);
            }
            Op::Gather(sources) => {
                for (i, &(v, r)) in sources.iter().enumerate() {
                    if !self.needs(v) {
                        continue;
                    }
                    let shape = self.value(v).shape();
                    let slot = grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1));
                    for (d, s) in slot.row_mut(r).iter_mut().zip(g.row(i)) {
                        *d += s;
                    }
                }
            }
            Op::PosEnc { a, freqs } => {
                let d = encode_rows_vjp(self.value(*a), *freqs, g);
                self.accumulate(grads, *a, d);
            }
            Op::LowRank { factors, z, rank } => {
                let (gf, gz) = reconstruct_rows_vjp(self.value(*factors), self.value(*z), *rank, g);
                if self.needs(*factors) {
                    self.accumulate(grads, *factors, gf);
                }
                if self.needs(*z) {
                    self.accumulate(grads, *z, gz);
                }
            }
            Op::Composite {
                rgb,
                sigma,
                delta,
                offsets,
            } => {
                let (grgb, gsigma) =
                    composite_rows_vjp(self.value(*rgb), self.value(*sigma), delta, offsets, g);
                if self.needs(*rgb) {
                    self.accumulate(grads, *rgb, grgb);
                }
                if self.needs(*sigma) {
                    self.accumulate(grads, *sigma, gsigma);
                }
            }
            Op::SumSquares(a) => {
                let s = g.item() * 2.0;
                self.accumulate(grads, *a, self.value(*a).map(|v| v * s));
            }
            Op::InvSquareSum { a, floor } => {
                let s = g.item();
                let floor = *floor;
                let d = self.value(*a).map(|v| {
                    if v > floor {
                        -2.0 * s / (v * v * v)
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::SumScalars(parts) => {
                for &p in parts {
                    self.accumulate(grads, p, g.clone());
                }
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Result of a reverse sweep: the cotangent of every reached node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient with respect to a recorded node, if the sweep reached it.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Add every parameter-leaf gradient into the store's accumulators.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        for (node, g) in tape.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.accumulate_grad(*id, g);
            }
        }
    }
}

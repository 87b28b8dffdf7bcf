use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::matrix::affine_rows;
use super::{AutodiffError, Matrix, ParamId, ParamStore, Tape, Var};
use crate::math::sqrt;

/// Fully connected layer `x·Wᵀ + b` with `W: out×in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    /// Registers `{name}.weight` and `{name}.bias`. Weights are drawn from
    /// `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`; biases start at zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = sqrt(6.0 / (in_dim + out_dim) as f64);
        let data = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let weight = store.add(format!("{name}.weight"), Matrix::from_vec(out_dim, in_dim, data));
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        affine_rows(x, store.value(self.weight), store.value(self.bias))
    }

    pub fn record(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.dense(x, w, b)
    }

    /// Multiply-adds per input row.
    pub fn macs(&self) -> usize {
        self.in_dim * self.out_dim
    }
}

/// Checked dense layer on plain values.
pub fn dense_layer(weight: &Matrix, bias: &Matrix, input: &[f64]) -> Result<Vec<f64>, AutodiffError> {
    if weight.cols() != input.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "dense_layer",
            expected: (1, weight.cols()),
            found: (1, input.len()),
        });
    }
    if bias.shape() != (1, weight.rows()) {
        return Err(AutodiffError::ShapeMismatch {
            op: "dense_layer bias",
            expected: (1, weight.rows()),
            found: bias.shape(),
        });
    }
    Ok(affine_rows(&Matrix::row_vector(input), weight, bias).into_vec())
}

/// Stack of dense layers with ReLU between them and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`; layers are named `{name}.{i}`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        let mut h = self.layers[0].forward(store, x);
        for layer in &self.layers[1..] {
            relu_in_place(&mut h);
            h = layer.forward(store, &h);
        }
        h
    }

    pub fn record(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let mut h = self.layers[0].record(tape, store, x)?;
        for layer in &self.layers[1..] {
            h = tape.relu(h);
            h = layer.record(tape, store, h)?;
        }
        Ok(h)
    }

    pub fn macs(&self) -> usize {
        self.layers.iter().map(Dense::macs).sum()
    }
}

pub(crate) fn relu_in_place(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|v| {
        if !(*v > 0.0) {
            *v = 0.0
        }
    });
}

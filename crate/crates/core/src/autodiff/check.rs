//! Central finite-difference checking of reverse-mode gradients, and a
//! generator of small random graphs that together exercise every primitive
//! on the tape.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Dense, Matrix, Mlp, ParamStore, Tape, Var};
use crate::fields::factor::{factor_len, feature_len};

/// Gradients smaller than this are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Instances with any ReLU input closer to zero than this are redrawn.
pub const MIN_RELU_MARGIN: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// Scalars compared (inputs plus parameters).
    pub entries: usize,
}

/// Compares the reverse-mode gradient of the scalar `build(tape, store,
/// inputs)` with central differences of step `h`, for every entry of every
/// input and every parameter in `store`.
pub fn gradcheck<F>(store: &ParamStore, inputs: &[Matrix], h: f64, build: F) -> Result<GradReport, AutodiffError>
where
    F: Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |store: &ParamStore, inputs: &[Matrix]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.input(m.clone())).collect();
        let out = build(&mut tape, store, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.input(m.clone())).collect();
    let out = build(&mut tape, store, &vars)?;
    let grads = tape.backward_scalar(out)?;
    let mut with_grads = store.clone();
    with_grads.zero_grad();
    grads.accumulate_into(&tape, &mut with_grads);

    let mut worst = 0.0f64;
    let mut entries = 0;
    for (k, &v) in vars.iter().enumerate() {
        let zero = Matrix::zeros(inputs[k].rows(), inputs[k].cols());
        let analytic = grads.wrt(v).unwrap_or(&zero);
        for j in 0..inputs[k].len() {
            let mut moved = inputs.to_vec();
            moved[k].as_mut_slice()[j] += h;
            let plus = eval(store, &moved)?;
            moved[k].as_mut_slice()[j] -= 2.0 * h;
            let minus = eval(store, &moved)?;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic.as_slice()[j], numeric));
            entries += 1;
        }
    }
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for j in 0..store.value(id).len() {
            let mut moved = store.clone();
            moved.value_mut(id).as_mut_slice()[j] += h;
            let plus = eval(&moved, inputs)?;
            moved.value_mut(id).as_mut_slice()[j] -= 2.0 * h;
            let minus = eval(&moved, inputs)?;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(with_grads.grad(id).as_slice()[j], numeric));
            entries += 1;
        }
    }
    Ok(GradReport {
        max_rel_error: worst,
        entries,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InstanceKind {
    /// ReLU MLP with a sigmoid or softplus head.
    Mlp,
    /// Positional encoding feeding a dense sigmoid layer.
    Encoding,
    /// Low-rank feature reconstruction feeding a dense softplus layer.
    LowRank,
    /// Volume compositing of sigmoid colours and softplus densities.
    Composite,
    /// Elementwise, column, gather and reduction primitives.
    Elementwise,
}

impl InstanceKind {
    pub const ALL: [InstanceKind; 5] = [
        InstanceKind::Mlp,
        InstanceKind::Encoding,
        InstanceKind::LowRank,
        InstanceKind::Composite,
        InstanceKind::Elementwise,
    ];
}

/// A random scalar-valued graph with its parameters and inputs.
#[derive(Clone, Debug)]
pub struct Instance {
    pub kind: InstanceKind,
    pub store: ParamStore,
    pub inputs: Vec<Matrix>,
    target: Matrix,
    mlp: Option<Mlp>,
    dense: Option<Dense>,
    softplus_head: bool,
    freqs: usize,
    rank: usize,
    deltas: Vec<f64>,
    offsets: Vec<usize>,
    column_scale: Vec<f64>,
    column_offset: Vec<f64>,
}

fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, range: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-range..=range)).collect())
}

fn randomize_biases<R: Rng>(rng: &mut R, store: &mut ParamStore) {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        if store.get(id).name().ends_with(".bias") {
            let (r, c) = store.value(id).shape();
            let _ = store.set_value(id, random_matrix(rng, r, c, 0.5));
        }
    }
}

impl Instance {
    fn blank(kind: InstanceKind) -> Self {
        Self {
            kind,
            store: ParamStore::new(),
            inputs: Vec::new(),
            target: Matrix::zeros(0, 0),
            mlp: None,
            dense: None,
            softplus_head: false,
            freqs: 0,
            rank: 0,
            deltas: Vec::new(),
            offsets: Vec::new(),
            column_scale: Vec::new(),
            column_offset: Vec::new(),
        }
    }

    /// Draws one instance of `kind` from `seed`.
    pub fn random(kind: InstanceKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inst = Self::blank(kind);
        let rows = rng.gen_range(1..=4);
        match kind {
            InstanceKind::Mlp => {
                let depth = rng.gen_range(1..=3);
                let mut dims = vec![rng.gen_range(1..=5)];
                dims.extend((0..depth).map(|_| rng.gen_range(2..=6)));
                dims.push(rng.gen_range(1..=4));
                inst.mlp = Some(Mlp::new(&mut inst.store, "net", &dims, &mut rng));
                inst.softplus_head = rng.gen_bool(0.5);
                inst.inputs.push(random_matrix(&mut rng, rows, dims[0], 1.0));
                inst.target = random_matrix(&mut rng, rows, dims[dims.len() - 1], 1.0);
            }
            InstanceKind::Encoding => {
                let d = rng.gen_range(1..=3);
                inst.freqs = rng.gen_range(0..=4);
                let width = super::encoded_len(d, inst.freqs);
                inst.dense = Some(Dense::new(&mut inst.store, "enc", width, 2, &mut rng));
                inst.inputs.push(random_matrix(&mut rng, rows, d, 0.5));
                inst.target = random_matrix(&mut rng, rows, 2, 1.0);
            }
            InstanceKind::LowRank => {
                inst.rank = rng.gen_range(1..=3);
                let l = feature_len(inst.rank);
                inst.inputs.push(random_matrix(&mut rng, rows, factor_len(inst.rank), 1.0));
                inst.store.add("z", random_matrix(&mut rng, 1, l, 0.3));
                inst.dense = Some(Dense::new(&mut inst.store, "dec", l, 2, &mut rng));
                inst.target = random_matrix(&mut rng, rows, 2, 1.0);
            }
            InstanceKind::Composite => {
                let rays = rows;
                inst.offsets.push(0);
                for _ in 0..rays {
                    let n = rng.gen_range(1..=5);
                    inst.offsets.push(inst.offsets[inst.offsets.len() - 1] + n);
                }
                let q = inst.offsets[rays];
                inst.deltas = (0..q).map(|_| rng.gen_range(0.05..1.5)).collect();
                inst.inputs.push(random_matrix(&mut rng, q, 3, 2.0));
                inst.inputs.push(random_matrix(&mut rng, q, 1, 2.0));
                inst.target = Matrix::from_vec(rays, 3, (0..rays * 3).map(|_| rng.gen_range(0.0..1.0)).collect());
            }
            InstanceKind::Elementwise => {
                let cols = rng.gen_range(1..=4);
                inst.inputs.push(random_matrix(&mut rng, rows, cols, 1.0));
                inst.inputs.push(random_matrix(&mut rng, rows, cols, 1.0));
                inst.column_scale = (0..cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
                inst.column_offset = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
            }
        }
        randomize_biases(&mut rng, &mut inst.store);
        inst
    }

    /// Records the instance's scalar output on `tape`.
    pub fn build(&self, tape: &mut Tape, store: &ParamStore, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let target = tape.constant(self.target.clone());
        let out = match self.kind {
            InstanceKind::Mlp => {
                let h = self.mlp.as_ref().expect("mlp instance").record(tape, store, inputs[0])?;
                if self.softplus_head {
                    tape.softplus(h)
                } else {
                    tape.sigmoid(h)
                }
            }
            InstanceKind::Encoding => {
                let e = tape.positional_encode(inputs[0], self.freqs);
                let h = self.dense.as_ref().expect("dense layer").record(tape, store, e)?;
                tape.sigmoid(h)
            }
            InstanceKind::LowRank => {
                let z = store.find("z").expect("shared feature");
                let z = tape.param(store, z);
                let y = tape.low_rank(inputs[0], z, self.rank);
                let h = self.dense.as_ref().expect("dense layer").record(tape, store, y)?;
                tape.softplus(h)
            }
            InstanceKind::Composite => {
                let rgb = tape.sigmoid(inputs[0]);
                let sigma = tape.softplus(inputs[1]);
                tape.composite(rgb, sigma, self.deltas.clone(), self.offsets.clone())
            }
            InstanceKind::Elementwise => return Ok(self.build_elementwise(tape, inputs)),
        };
        let diff = tape.sub(out, target);
        Ok(tape.sum_squares(diff))
    }

    fn build_elementwise(&self, tape: &mut Tape, inputs: &[Var]) -> Var {
        let (a, b) = (inputs[0], inputs[1]);
        let ab = tape.mul(a, b);
        let a7 = tape.scale(a, 0.7);
        let sum = tape.add(ab, a7);
        let diff = tape.sub(sum, b);
        let first = tape.slice_cols(a, 0, 1);
        let rowscaled = tape.mul_column(diff, first);
        let affine = tape.column_affine(rowscaled, &self.column_scale, &self.column_offset);
        let wide = tape.concat(&[affine, a]);
        let rows = tape.value(a).rows();
        let sources: Vec<(Var, usize)> = (0..rows).rev().map(|r| (wide, r)).collect();
        let shuffled = tape.gather(&sources);
        let squares = tape.sum_squares(shuffled);
        let positive = tape.sigmoid(b);
        let inverse = tape.inv_square_sum(positive, 1e-3);
        tape.sum_scalars(&[squares, inverse])
    }

    /// Smallest ReLU input magnitude of the recorded graph.
    pub fn relu_margin(&self) -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|m| tape.input(m.clone())).collect();
        self.build(&mut tape, &self.store, &vars)?;
        Ok(tape.min_relu_margin())
    }

    pub fn check(&self, h: f64) -> Result<GradReport, AutodiffError> {
        gradcheck(&self.store, &self.inputs, h, |t, s, v| self.build(t, s, v))
    }
}

/// `count` instances cycling through every [`InstanceKind`], each redrawn
/// until its ReLU inputs clear [`MIN_RELU_MARGIN`].
pub fn random_instances(count: usize, seed: u64) -> Result<Vec<Instance>, AutodiffError> {
    let mut out = Vec::with_capacity(count);
    let mut draw = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for i in 0..count {
        let kind = InstanceKind::ALL[i % InstanceKind::ALL.len()];
        loop {
            draw = draw.wrapping_add(1);
            let inst = Instance::random(kind, draw);
            if inst.relu_margin()? >= MIN_RELU_MARGIN {
                out.push(inst);
                break;
            }
        }
    }
    Ok(out)
}

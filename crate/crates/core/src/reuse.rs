//! Per-query routing between the skip, reuse and full paths, the blended
//! training output, and the gradient-norm baseline.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Matrix, Tape, Var};
use crate::cache::{bin_index, BinIndex, BinPayload, BinStore, CacheError, CacheSet, PayloadRef, Strategy};
use crate::fields::{Component, FieldError, FieldKind, Network, Query, RadianceSample, SceneModel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReuseError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("store strategy {found:?} cannot serve this path")]
    WrongStrategy { found: Strategy },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PathDecision {
    Skip,
    Reuse,
    Full,
}

/// Which bins may be skipped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipRule {
    /// `s > τ` and `σ < τ_σ`.
    ScoreAndDensity,
    /// `σ < τ_σ` alone.
    DensityOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReuseConfig {
    pub tau: f64,
    pub tau_sigma: f64,
    /// Gradient-norm threshold of the naive baseline.
    pub tau_grad: f64,
    pub skip_rule: SkipRule,
    /// When false, would-be Reuse decisions run the full path instead.
    pub allow_reuse: bool,
}

impl Default for ReuseConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            tau_sigma: 0.9,
            tau_grad: 0.0,
            skip_rule: SkipRule::ScoreAndDensity,
            allow_reuse: true,
        }
    }
}

impl ReuseConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err("tau must lie in [0, 1]");
        }
        if !(self.tau_sigma >= 0.0) {
            return Err("tau_sigma must be non-negative");
        }
        if !(self.tau_grad >= 0.0) {
            return Err("tau_grad must be non-negative");
        }
        Ok(())
    }
}

/// `s·ω_reuse + (1 − s)·ω_full` over `(r, g, b, σ)`.
pub fn blend_outputs(s: f64, reuse: [f64; 4], full: [f64; 4]) -> [f64; 4] {
    core::array::from_fn(|i| s * reuse[i] + (1.0 - s) * full[i])
}

/// Routing for a bin's payload (`None` when the bin was never written).
pub fn route(payload: Option<PayloadRef<'_>>, config: &ReuseConfig) -> PathDecision {
    let Some(p) = payload else {
        return PathDecision::Full;
    };
    let (s, sigma) = (p.score as f64, p.sigma as f64);
    let consistent = s > config.tau;
    let sparse = sigma < config.tau_sigma;
    let decision = match config.skip_rule {
        SkipRule::ScoreAndDensity if consistent && sparse => PathDecision::Skip,
        SkipRule::DensityOnly if sparse => PathDecision::Skip,
        _ if consistent => PathDecision::Reuse,
        _ => PathDecision::Full,
    };
    if decision == PathDecision::Reuse && !config.allow_reuse {
        PathDecision::Full
    } else {
        decision
    }
}

pub fn select_path(store: &BinStore, idx: &BinIndex, config: &ReuseConfig) -> PathDecision {
    route(store.get(idx), config)
}

/// Naive routing: reuse stored rgb/σ where the cached gradient norm is
/// below `τ_∂`; never skips.
pub fn naive_route(payload: Option<PayloadRef<'_>>, config: &ReuseConfig) -> PathDecision {
    match payload {
        Some(p) if (p.score as f64) < config.tau_grad => PathDecision::Reuse,
        _ => PathDecision::Full,
    }
}

pub fn naive_select(store: &BinStore, idx: &BinIndex, config: &ReuseConfig) -> PathDecision {
    naive_route(store.get(idx), config)
}

/// Query counts per path for one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PathCounters {
    pub total: usize,
    pub full: usize,
    pub reuse: usize,
    pub skip: usize,
}

impl PathCounters {
    pub fn record(&mut self, decision: PathDecision) {
        self.total += 1;
        match decision {
            PathDecision::Full => self.full += 1,
            PathDecision::Reuse => self.reuse += 1,
            PathDecision::Skip => self.skip += 1,
        }
    }

    pub fn merge(&mut self, other: &PathCounters) {
        self.total += other.total;
        self.full += other.full;
        self.reuse += other.reuse;
        self.skip += other.skip;
    }

    pub fn full_fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.full as f64 / self.total as f64
        }
    }

    pub const CSV_HEADER: &'static str = "frame,total,full,reuse,skip,full_fraction";

    pub fn csv_line(&self, frame: usize) -> String {
        alloc::format!(
            "{frame},{},{},{},{},{:.6}",
            self.total,
            self.full,
            self.reuse,
            self.skip,
            self.full_fraction()
        )
    }
}

/// `(r, g, b, σ)` of a sample.
pub fn omega(rgb: [f64; 3], sigma: f64) -> [f64; 4] {
    [rgb[0], rgb[1], rgb[2], sigma]
}

/// Outputs of one training-time dual pass.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPaths {
    pub full: RadianceSample,
    /// Blend with the bin's previous payload; absent on a first visit.
    pub mixed: Option<[f64; 4]>,
    pub payload: BinPayload,
}

/// rgb and σ recovered from a stored payload with the query's own transient inputs.
pub fn reuse_output(model: &SceneModel, strategy: Strategy, query: &Query, payload: PayloadRef<'_>) -> Result<[f64; 4], ReuseError> {
    let rgb = match strategy {
        Strategy::Rgb | Strategy::NaiveRgb => core::array::from_fn(|i| payload.feature[i] as f64),
        _ => model.color_from_payloads(core::slice::from_ref(query), &[payload.feature])?[0],
    };
    Ok(omega(rgb, payload.sigma as f64))
}

/// Payload written for a full-pass sample under `strategy`.
pub fn payload_for(strategy: Strategy, sample: &RadianceSample) -> Result<BinPayload, ReuseError> {
    let feature = match strategy {
        Strategy::Rgb => sample.rgb.iter().map(|&v| v as f32).collect(),
        Strategy::NaiveRgb => return Err(ReuseError::WrongStrategy { found: strategy }),
        _ => sample.feature.iter().map(|&v| v as f32).collect(),
    };
    Ok(BinPayload {
        feature,
        sigma: sample.sigma as f32,
        score: sample.score as f32,
    })
}

/// Single-query training pass: full forward, blend with the payload the bin
/// held before this visit (if any, mixing weight `s_full`), then overwrite
/// the bin with this visit's payload.
pub fn train_paths(model: &SceneModel, stores: &mut CacheSet, query: &Query) -> Result<TrainPaths, ReuseError> {
    let full = model.full_forward(query)?;
    let store = stores.store_mut(query.component);
    let idx = bin_index(query, store.bins())?;
    let strategy = store.strategy();
    let mixed = match store.get(&idx) {
        Some(prev) => {
            let reuse = reuse_output(model, strategy, query, prev)?;
            Some(blend_outputs(full.score, reuse, omega(full.rgb, full.sigma)))
        }
        None => None,
    };
    let payload = payload_for(strategy, &full)?;
    store.update(idx, &payload)?;
    Ok(TrainPaths { full, mixed, payload })
}

/// Inference for one query. Skip yields `None`; Reuse rebuilds rgb from the
/// stored payload and takes the stored `σ`, `s`; Full runs both stages.
pub fn infer_query(
    model: &SceneModel,
    stores: &CacheSet,
    query: &Query,
    config: &ReuseConfig,
    counters: &mut PathCounters,
) -> Result<Option<RadianceSample>, ReuseError> {
    let store = stores.store(query.component);
    let idx = bin_index(query, store.bins())?;
    let payload = store.get(&idx);
    let decision = route(payload, config);
    counters.record(decision);
    Ok(match decision {
        PathDecision::Skip => None,
        PathDecision::Full => Some(model.full_forward(query)?),
        PathDecision::Reuse => {
            let p = payload.expect("reuse implies a stored payload");
            let w = reuse_output(model, store.strategy(), query, p)?;
            Some(RadianceSample {
                rgb: [w[0], w[1], w[2]],
                sigma: w[3],
                score: p.score as f64,
                feature: p.feature.iter().map(|&v| v as f64).collect(),
            })
        }
    })
}

/// Sum of squared input gradients `Σ_c ‖∂out[:, c]/∂input‖²` per row, for
/// tapes where output row `i` depends only on input row `i`.
pub fn row_input_grad_norms(tape: &Tape, output: Var, inputs: &[Var]) -> Result<Vec<f64>, FieldError> {
    let (rows, cols) = tape.value(output).shape();
    let mut norms = alloc::vec![0.0; rows];
    for c in 0..cols {
        let mut seed = Matrix::zeros(rows, cols);
        for r in 0..rows {
            seed.set(r, c, 1.0);
        }
        let grads = tape.backward(output, seed)?;
        for &v in inputs {
            if let Some(g) = grads.wrt(v) {
                for (r, n) in norms.iter_mut().enumerate() {
                    *n += g.row(r).iter().map(|x| x * x).sum::<f64>();
                }
            }
        }
    }
    Ok(norms)
}

/// `∂ = Σ_ω ‖∂ω/∂p_o‖² + ‖∂ω/∂d_o‖²` for object queries and
/// `Σ_ω ‖∂ω/∂d‖²` for background queries, `ω ∈ {r, g, b, σ}`. Density
/// depends on position only, so only the colour channels contribute.
pub fn grad_norms_wrt_transients(model: &SceneModel, queries: &[Query]) -> Result<Vec<f64>, ReuseError> {
    let mut out = alloc::vec![0.0; queries.len()];
    for (net, rows) in model.group(queries)? {
        let sub: Vec<Query> = rows.iter().map(|&i| queries[i]).collect();
        let samples = model.evaluate(&sub)?;
        let field = model.field(net);
        let k = model.config().payload_len();
        let mut stored = Matrix::zeros(sub.len(), k);
        for (r, s) in samples.iter().enumerate() {
            stored.row_mut(r).copy_from_slice(&s.feature);
        }
        let z = match net {
            Network::Background => model.shared_feature(Component::Plane(0))?.map(|id| model.store.value(id).clone()),
            Network::Class(_) => {
                let mut zs: Option<Matrix> = None;
                for (r, q) in sub.iter().enumerate() {
                    if let Some(id) = model.shared_feature(q.component)? {
                        let v = model.store.value(id);
                        zs.get_or_insert_with(|| Matrix::zeros(sub.len(), v.cols()))
                            .row_mut(r)
                            .copy_from_slice(v.row(0));
                    }
                }
                zs
            }
        };
        let y = field.decode(&model.store, &stored, z.as_ref())?;

        let mut tape = Tape::new();
        let yv = tape.constant(y);
        let mut dirs = Matrix::zeros(sub.len(), 3);
        let mut locs = Matrix::zeros(sub.len(), 3);
        for (r, q) in sub.iter().enumerate() {
            dirs.row_mut(r).copy_from_slice(&q.direction.to_array());
            locs.row_mut(r).copy_from_slice(&q.location.to_array());
        }
        let dv = tape.input(dirs);
        let mut inputs = alloc::vec![dv];
        let pv = match field.kind() {
            FieldKind::Static => None,
            FieldKind::Dynamic => {
                let p = tape.input(locs);
                inputs.push(p);
                let b = model.bounds();
                let half = b.half_extent().to_array();
                let centre = b.center().to_array();
                let scale: Vec<f64> = half.iter().map(|h| 1.0 / h).collect();
                let offset: Vec<f64> = (0..3).map(|i| -centre[i] / half[i]).collect();
                Some(tape.column_affine(p, &scale, &offset))
            }
        };
        let rgb = field.record_color(&mut tape, &model.store, yv, dv, pv)?;
        let norms = row_input_grad_norms(&tape, rgb, &inputs)?;
        for (r, &i) in rows.iter().enumerate() {
            out[i] = norms[r];
        }
    }
    Ok(out)
}

pub fn grad_norm_wrt_transients(model: &SceneModel, query: &Query) -> Result<f64, ReuseError> {
    Ok(grad_norms_wrt_transients(model, core::slice::from_ref(query))?[0])
}

/// [`grad_norm_wrt_transients`] by central differences of step `h` on the
/// full forward pass. Returns `None` when steps `h` and `h/2` disagree by
/// more than `1e-4` relative, i.e. a ReLU kink lies within reach.
pub fn grad_norm_finite_difference(model: &SceneModel, query: &Query, h: f64) -> Result<Option<f64>, ReuseError> {
    let at = |h: f64| -> Result<f64, ReuseError> {
        let mut total = 0.0;
        let object = matches!(query.component, Component::Object(_));
        for which in 0..if object { 2 } else { 1 } {
            for axis in 0..3 {
                let mut e = [0.0; 3];
                e[axis] = h;
                let e = crate::math::Vec3::from_array(e);
                let (mut plus, mut minus) = (*query, *query);
                if which == 0 {
                    plus.direction = query.direction + e;
                    minus.direction = query.direction - e;
                } else {
                    plus.location = query.location + e;
                    minus.location = query.location - e;
                }
                let a = model.full_forward(&plus)?.rgb;
                let b = model.full_forward(&minus)?.rgb;
                total += (0..3).map(|c| crate::math::powi((a[c] - b[c]) / (2.0 * h), 2)).sum::<f64>();
            }
        }
        Ok(total)
    };
    let (coarse, fine) = (at(h)?, at(h / 2.0)?);
    let scale = coarse.abs().max(fine.abs()).max(1e-12);
    Ok(((coarse - fine).abs() / scale <= 1e-4).then_some(fine))
}

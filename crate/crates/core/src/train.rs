//! Objective, optimiser and the warmup-then-consistency training loop.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, ParamStore, Tape, Var};
use crate::cache::{bin_index, BinIndex, CacheError, CacheSet, Strategy};
use crate::fields::{FieldConfig, FieldError, Query, SceneModel};
use crate::math::{powi, sqrt};
use crate::render::{generate_ray, sample_ray, Image, RenderError, SamplingConfig};
use crate::reuse::{grad_norms_wrt_transients, ReuseError};
use crate::scene::{render_ground_truth, Camera, SceneError, SceneGraph, SyntheticSceneSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error("training data has {found} frames but the scene has {expected}")]
    FrameCount { expected: usize, found: usize },
    #[error("non-finite loss at step {step}: {terms:?}")]
    NonFinite { step: usize, terms: LossTerms },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Reuse(#[from] ReuseError),
}

impl From<crate::autodiff::AutodiffError> for TrainError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        TrainError::Field(FieldError::Autodiff(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the score regulariser.
    pub lambda: f64,
    /// Variance `v` of the latent Gaussian prior.
    pub latent_variance: f64,
    pub learning_rate: f64,
    /// Learning rate reached at the last step, as a fraction of the initial
    /// rate (exponential decay; 1 keeps it constant).
    pub final_lr_fraction: f64,
    pub batch_rays: usize,
    pub warmup_steps: usize,
    pub consistency_steps: usize,
    pub seed: u64,
    /// Lower clamp on `s` inside `1/s²`.
    pub score_floor: f64,
    /// Bins per axis.
    pub bins: usize,
    /// Background bins keep rgb instead of feature payloads.
    pub background_rgb: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-8,
            latent_variance: 1.0,
            learning_rate: 5e-4,
            final_lr_fraction: 0.1,
            batch_rays: 128,
            warmup_steps: 4000,
            consistency_steps: 2000,
            seed: 0,
            score_floor: 1e-3,
            bins: crate::cache::DEFAULT_BINS,
            background_rgb: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lambda >= 0.0) {
            return Err(TrainError::Config("lambda must be non-negative"));
        }
        if !(self.latent_variance > 0.0) {
            return Err(TrainError::Config("latent variance must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(TrainError::Config("learning rate must be positive and decay fraction in (0, 1]"));
        }
        if self.batch_rays == 0 {
            return Err(TrainError::Config("batch must hold at least one ray"));
        }
        if !(self.score_floor > 0.0) {
            return Err(TrainError::Config("score floor must be positive"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.warmup_steps + self.consistency_steps
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let total = self.total_steps().max(1) as f64;
        self.learning_rate * libm::pow(self.final_lr_fraction, step as f64 / total)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Consistency,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Consistency => "consistency",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub photometric: f64,
    pub mixed: f64,
    pub score_reg: f64,
    pub latent_prior: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub phase: Phase,
    pub terms: LossTerms,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,phase,total,photometric,mixed,score_reg,latent_prior";

    pub fn csv_line(&self) -> String {
        let t = &self.terms;
        alloc::format!(
            "{},{},{:e},{:e},{:e},{:e},{:e}",
            self.step,
            self.phase.name(),
            t.total,
            t.photometric,
            t.mixed,
            t.score_reg,
            t.latent_prior
        )
    }
}

/// Tape handles of the objective's terms.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub photometric: Var,
    pub mixed: Option<Var>,
    pub score_reg: Option<Var>,
    pub latent_prior: Option<Var>,
}

impl Objective {
    pub fn terms(&self, tape: &Tape) -> LossTerms {
        let v = |x: Option<Var>| x.map_or(0.0, |x| tape.value(x).item());
        LossTerms {
            total: tape.value(self.total).item(),
            photometric: tape.value(self.photometric).item(),
            mixed: v(self.mixed),
            score_reg: v(self.score_reg),
            latent_prior: v(self.latent_prior),
        }
    }
}

/// Assemble the objective from rendered colours:
///
/// `Σ‖Ĉ − C‖² + Σ‖Ĉ_mixed − C‖² + λ·Σ 1/max(s, floor)² + (1/v)·Σ‖l_o‖²`
///
/// The mixed and score terms are present only in the consistency phase,
/// i.e. when `mixed` is given.
pub fn record_objective(
    tape: &mut Tape,
    predicted: Var,
    target: &Matrix,
    mixed: Option<Var>,
    scores: &[Var],
    latent_sum_squares: Option<Var>,
    config: &TrainConfig,
) -> Objective {
    let target = tape.constant(target.clone());
    let diff = tape.sub(predicted, target);
    let photometric = tape.sum_squares(diff);
    let mut parts = vec![photometric];
    let mixed = mixed.map(|m| {
        let d = tape.sub(m, target);
        let l = tape.sum_squares(d);
        parts.push(l);
        l
    });
    let score_reg = mixed.map(|_| {
        let regs: Vec<Var> = scores.iter().map(|&s| tape.inv_square_sum(s, config.score_floor)).collect();
        let sum = tape.sum_scalars(&regs);
        let r = tape.scale(sum, config.lambda);
        parts.push(r);
        r
    });
    let latent_prior = latent_sum_squares.map(|l| {
        let p = tape.scale(l, 1.0 / config.latent_variance);
        parts.push(p);
        p
    });
    let total = tape.sum_scalars(&parts);
    Objective {
        total,
        photometric,
        mixed,
        score_reg,
        latent_prior,
    }
}

/// `Σ 1/max(s, floor)²`.
pub fn score_regularizer(scores: &[f64], floor: f64) -> f64 {
    scores
        .iter()
        .map(|&s| {
            let c = s.max(floor);
            1.0 / (c * c)
        })
        .sum()
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| Matrix::zeros(p.value().rows(), p.value().cols())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update from the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - powi(self.beta1, self.t);
        let c2 = 1.0 - powi(self.beta2, self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((value, grad), (m, v)) in store.values_and_grads_mut().zip(self.m.iter_mut().zip(&mut self.v)) {
            let it = value
                .as_mut_slice()
                .iter_mut()
                .zip(grad.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
            for ((x, &g), (m, v)) in it {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *x -= lr * mh / (sqrt(vh) + eps);
            }
        }
    }
}

/// Ground-truth frames seen through one camera track.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub camera: Camera,
    pub frames: Vec<Image>,
}

impl TrainingSet {
    /// Ground-truth frames of `spec` seen through `camera`.
    pub fn render(spec: &SyntheticSceneSpec, camera: &Camera) -> Result<Self, SceneError> {
        let frames = (0..spec.frame_count)
            .map(|f| render_ground_truth(spec, camera, f))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            camera: camera.clone(),
            frames,
        })
    }
}

/// A batch of rays flattened into per-query rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayBatch {
    pub queries: Vec<Query>,
    pub deltas: Vec<f64>,
    /// Ray `r` owns rows `offsets[r]..offsets[r + 1]`.
    pub offsets: Vec<usize>,
    pub targets: Matrix,
}

impl RayBatch {
    /// Samples the given `(frame, x, y)` pixels.
    pub fn build(scene: &SceneGraph, data: &TrainingSet, sampling: &SamplingConfig, pixels: &[(usize, usize, usize)]) -> Result<Self, TrainError> {
        let mut b = RayBatch {
            offsets: vec![0],
            targets: Matrix::zeros(pixels.len(), 3),
            ..Default::default()
        };
        for (r, &(f, x, y)) in pixels.iter().enumerate() {
            let ray = generate_ray(&data.camera, x, y, f);
            for s in sample_ray(&ray, scene, sampling)? {
                b.queries.push(s.query);
                b.deltas.push(s.delta);
            }
            b.offsets.push(b.queries.len());
            b.targets.row_mut(r).copy_from_slice(&data.frames[f].get(x, y));
        }
        Ok(b)
    }

    pub fn rays(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Recorded forward passes for a batch: per-query locations inside the
/// network groups, and the assembled per-query outputs.
struct BatchGraph {
    groups: Vec<crate::fields::RecordedGroup>,
    /// `(group, row within group)` for each query.
    place: Vec<(usize, usize)>,
}

/// Owns the model, stores, optimiser and data for one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: SceneModel,
    pub stores: CacheSet,
    pub scene: SceneGraph,
    pub data: TrainingSet,
    pub config: TrainConfig,
    pub sampling: SamplingConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    step: usize,
    trace: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(
        scene: SceneGraph,
        data: TrainingSet,
        fields: FieldConfig,
        config: TrainConfig,
        sampling: SamplingConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if data.frames.len() != scene.frame_count {
            return Err(TrainError::FrameCount {
                expected: scene.frame_count,
                found: data.frames.len(),
            });
        }
        let model = SceneModel::new(&scene, fields, config.seed)?;
        let stores = CacheSet::for_model(&fields, scene.objects.len(), config.bins, config.background_rgb)?;
        let adam = Adam::new(&model.store);
        Ok(Self {
            model,
            stores,
            scene,
            data,
            config,
            sampling,
            adam,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c4),
            step: 0,
            trace: Vec::new(),
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn trace(&self) -> &[LossRecord] {
        &self.trace
    }

    pub fn phase(&self) -> Phase {
        if self.step < self.config.warmup_steps {
            Phase::Warmup
        } else {
            Phase::Consistency
        }
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_steps()
    }

    fn sample_pixels(&mut self) -> Vec<(usize, usize, usize)> {
        let (w, h) = (self.data.camera.width, self.data.camera.height);
        let per_frame = w * h;
        let total = per_frame * self.data.frames.len();
        (0..self.config.batch_rays)
            .map(|_| {
                let i = self.rng.gen_range(0..total);
                let (f, p) = (i / per_frame, i % per_frame);
                (f, p % w, p / w)
            })
            .collect()
    }

    /// One optimisation step on a freshly sampled batch.
    pub fn step(&mut self) -> Result<LossRecord, TrainError> {
        let pixels = self.sample_pixels();
        let batch = RayBatch::build(&self.scene, &self.data, &self.sampling, &pixels)?;
        self.step_on(&batch)
    }

    /// One optimisation step on `batch`.
    pub fn step_on(&mut self, batch: &RayBatch) -> Result<LossRecord, TrainError> {
        let phase = self.phase();
        let mut tape = Tape::new();
        let (objective, graph, bins) = self.record(&mut tape, batch, phase)?;
        let terms = objective.terms(&tape);
        if !terms.total.is_finite() {
            return Err(TrainError::NonFinite { step: self.step, terms });
        }
        let grads = tape.backward_scalar(objective.total)?;
        self.model.store.zero_grad();
        grads.accumulate_into(&tape, &mut self.model.store);
        let lr = self.config.learning_rate_at(self.step);
        self.adam.step(&mut self.model.store, lr);

        if phase == Phase::Consistency {
            self.write_bins(&tape, batch, &graph, &bins)?;
        }
        let record = LossRecord {
            step: self.step,
            phase,
            terms,
        };
        self.trace.push(record);
        self.step += 1;
        Ok(record)
    }

    /// Records the objective for `batch` with the current parameters and
    /// the stores as they are now (before this step's writes).
    pub fn record(
        &self,
        tape: &mut Tape,
        batch: &RayBatch,
        phase: Phase,
    ) -> Result<(Objective, BatchGraphHandle, Vec<BinIndex>), TrainError> {
        let model = &self.model;
        let mut rec = model.recorder(tape);
        let groups = rec.full(&batch.queries)?;
        let mut place = vec![(0, 0); batch.queries.len()];
        for (g, grp) in groups.iter().enumerate() {
            for (r, &i) in grp.rows.iter().enumerate() {
                place[i] = (g, r);
            }
        }
        let rgb_src: Vec<(Var, usize)> = place.iter().map(|&(g, r)| (groups[g].rgb, r)).collect();
        let sig_src: Vec<(Var, usize)> = place.iter().map(|&(g, r)| (groups[g].first.sigma, r)).collect();

        let bins: Vec<BinIndex> = batch
            .queries
            .iter()
            .map(|q| bin_index(q, self.stores.bins()))
            .collect::<Result<_, _>>()?;

        let mixed = if phase == Phase::Consistency {
            // Per group: blended outputs for queries whose bin already holds a payload.
            let mut mixed_rgb_src = rgb_src.clone();
            let mut mixed_sig_src = sig_src.clone();
            for grp in &groups {
                let reuse: Vec<(usize, usize)> = grp
                    .rows
                    .iter()
                    .enumerate()
                    .filter(|&(_, &i)| self.stores.store(batch.queries[i].component).exists(&bins[i]))
                    .map(|(r, &i)| (r, i))
                    .collect();
                if reuse.is_empty() {
                    continue;
                }
                let first = &batch.queries[reuse[0].1];
                let strategy = self.stores.store(first.component).strategy();
                let k = strategy.feature_len();
                let mut payloads = Matrix::zeros(reuse.len(), k);
                let mut sig = Matrix::zeros(reuse.len(), 1);
                for (j, &(_, i)) in reuse.iter().enumerate() {
                    let p = self
                        .stores
                        .store(batch.queries[i].component)
                        .get(&bins[i])
                        .expect("filtered on existence");
                    for (d, &s) in payloads.row_mut(j).iter_mut().zip(p.feature) {
                        *d = s as f64;
                    }
                    sig.set(j, 0, p.sigma as f64);
                }
                let qrows: Vec<usize> = reuse.iter().map(|&(_, i)| i).collect();
                let rgb_reuse = match strategy {
                    Strategy::Rgb | Strategy::NaiveRgb => rec.tape.constant(payloads),
                    _ => rec.color_from_payloads(grp.network, &batch.queries, &qrows, payloads)?,
                };
                let sig_reuse = rec.tape.constant(sig);
                let rows: Vec<(Var, usize)> = reuse.iter().map(|&(r, _)| (grp.rgb, r)).collect();
                let full_rgb = rec.tape.gather(&rows);
                let rows: Vec<(Var, usize)> = reuse.iter().map(|&(r, _)| (grp.first.sigma, r)).collect();
                let full_sig = rec.tape.gather(&rows);
                let rows: Vec<(Var, usize)> = reuse.iter().map(|&(r, _)| (grp.first.score, r)).collect();
                let s = rec.tape.gather(&rows);
                let blend = |tape: &mut Tape, reuse: Var, full: Var| {
                    let d = tape.sub(reuse, full);
                    let sd = tape.mul_column(d, s);
                    tape.add(full, sd)
                };
                let m_rgb = blend(rec.tape, rgb_reuse, full_rgb);
                let m_sig = blend(rec.tape, sig_reuse, full_sig);
                for (j, &(_, i)) in reuse.iter().enumerate() {
                    mixed_rgb_src[i] = (m_rgb, j);
                    mixed_sig_src[i] = (m_sig, j);
                }
            }
            let rgb = rec.tape.gather(&mixed_rgb_src);
            let sig = rec.tape.gather(&mixed_sig_src);
            Some(rec.tape.composite(rgb, sig, batch.deltas.clone(), batch.offsets.clone()))
        } else {
            None
        };
        let latent = rec.latent_sum_squares();
        let tape = rec.tape;
        let rgb = tape.gather(&rgb_src);
        let sig = tape.gather(&sig_src);
        let predicted = tape.composite(rgb, sig, batch.deltas.clone(), batch.offsets.clone());
        let scores: Vec<Var> = groups.iter().map(|g| g.first.score).collect();
        let objective = record_objective(tape, predicted, &batch.targets, mixed, &scores, latent, &self.config);
        Ok((objective, BatchGraphHandle(BatchGraph { groups, place }), bins))
    }

    /// Serialized write phase: each query's full-pass payload, in query order.
    fn write_bins(&mut self, tape: &Tape, batch: &RayBatch, graph: &BatchGraphHandle, bins: &[BinIndex]) -> Result<(), TrainError> {
        let graph = &graph.0;
        for (i, q) in batch.queries.iter().enumerate() {
            let (g, r) = graph.place[i];
            let grp = &graph.groups[g];
            let store = self.stores.store_mut(q.component);
            let sigma = tape.value(grp.first.sigma).get(r, 0);
            let score = tape.value(grp.first.score).get(r, 0);
            match store.strategy() {
                Strategy::Rgb => {
                    let rgb = tape.value(grp.rgb).row(r);
                    store.update_f64(bins[i], rgb, sigma, score)?;
                }
                _ => {
                    let f = tape.value(grp.first.stored).row(r);
                    store.update_f64(bins[i], f, sigma, score)?;
                }
            }
        }
        Ok(())
    }

    /// Runs the remaining steps, calling `on_step` after each.
    pub fn run(&mut self, mut on_step: impl FnMut(&Trainer, &LossRecord)) -> Result<(), TrainError> {
        while !self.is_done() {
            let rec = self.step()?;
            on_step(self, &rec);
        }
        Ok(())
    }

    /// Refresh every bin reachable from the training views with the final
    /// parameters: frames in order, pixels row-major, last writer wins.
    pub fn bake(&mut self) -> Result<(), TrainError> {
        bake_stores(&self.model, &self.scene, &self.data.camera, &self.sampling, &mut self.stores)
    }

    pub fn into_parts(self) -> (SceneModel, CacheSet, Vec<LossRecord>) {
        (self.model, self.stores, self.trace)
    }
}

/// Opaque recorded-batch handle returned by [`Trainer::record`].
pub struct BatchGraphHandle(BatchGraph);

/// Every sample of every pixel of `frame`, rows in row-major pixel order.
pub fn frame_queries(scene: &SceneGraph, camera: &Camera, sampling: &SamplingConfig, frame: usize) -> Result<Vec<Query>, TrainError> {
    let mut out = Vec::new();
    for y in 0..camera.height {
        for x in 0..camera.width {
            let ray = generate_ray(camera, x, y, frame);
            out.extend(sample_ray(&ray, scene, sampling)?.into_iter().map(|s| s.query));
        }
    }
    Ok(out)
}

/// Fill `stores` from full passes of a frozen model over every frame.
pub fn bake_stores(
    model: &SceneModel,
    scene: &SceneGraph,
    camera: &Camera,
    sampling: &SamplingConfig,
    stores: &mut CacheSet,
) -> Result<(), TrainError> {
    for frame in 0..scene.frame_count {
        let queries = frame_queries(scene, camera, sampling, frame)?;
        let samples = model.evaluate(&queries)?;
        for (q, s) in queries.iter().zip(&samples) {
            let store = stores.store_mut(q.component);
            let idx = bin_index(q, store.bins())?;
            match store.strategy() {
                Strategy::Rgb => store.update_f64(idx, &s.rgb, s.sigma, s.score)?,
                _ => store.update_f64(idx, &s.feature, s.sigma, s.score)?,
            }
        }
    }
    Ok(())
}

/// Fill naive stores (rgb, σ and the gradient norm `∂`) from full passes
/// of a frozen model over every frame.
pub fn bake_naive_stores(
    model: &SceneModel,
    scene: &SceneGraph,
    camera: &Camera,
    sampling: &SamplingConfig,
    bins: usize,
) -> Result<CacheSet, TrainError> {
    let mut stores = CacheSet::new(Strategy::NaiveRgb, Strategy::NaiveRgb, scene.objects.len(), bins)?;
    for frame in 0..scene.frame_count {
        let queries = frame_queries(scene, camera, sampling, frame)?;
        let samples = model.evaluate(&queries)?;
        let norms = grad_norms_wrt_transients(model, &queries)?;
        for ((q, s), &g) in queries.iter().zip(&samples).zip(&norms) {
            let store = stores.store_mut(q.component);
            let idx = bin_index(q, store.bins())?;
            store.update_f64(idx, &s.rgb, s.sigma, g)?;
        }
    }
    Ok(stores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut store = ParamStore::new();
        store.add("w", Matrix::from_rows(&[[1.0, -2.0]]));
        let mut adam = Adam::new(&store);
        adam.step(&mut store, 0.1);
        assert_eq!(store.iter().next().unwrap().1.value().as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Matrix::scalar(5.0));
        let mut adam = Adam::new(&store);
        let mut steps = 0;
        while steps < 5000 {
            let x = store.value(id).item();
            if (x - 2.0).abs() < 1e-6 {
                break;
            }
            store.zero_grad();
            store.accumulate_grad(id, &Matrix::scalar(2.0 * (x - 2.0)));
            adam.step(&mut store, 1e-2);
            steps += 1;
        }
        assert!((store.value(id).item() - 2.0).abs() < 1e-6, "after {steps} steps");
    }

    #[test]
    fn adam_moves_against_gradient_sign() {
        let mut store = ParamStore::new();
        let id = store.add("x", Matrix::scalar(0.0));
        let mut adam = Adam::new(&store);
        for _ in 0..50 {
            store.zero_grad();
            store.accumulate_grad(id, &Matrix::scalar(-3.0));
            adam.step(&mut store, 1e-2);
        }
        assert!(store.value(id).item() > 0.0);
    }

    #[test]
    fn perfect_render_with_unit_scores_costs_lambda_per_query() {
        let cfg = TrainConfig::default();
        let mut tape = Tape::new();
        let target = Matrix::from_rows(&[[0.2, 0.3, 0.4], [0.5, 0.5, 0.5]]);
        let pred = tape.constant(target.clone());
        let mixed = tape.constant(target.clone());
        let scores = tape.constant(Matrix::filled(7, 1, 1.0));
        let obj = record_objective(&mut tape, pred, &target, Some(mixed), &[scores], None, &cfg);
        assert!((obj.terms(&tape).total - cfg.lambda * 7.0).abs() < 1e-24);
    }

    #[test]
    fn warmup_objective_is_zero_for_perfect_render() {
        let cfg = TrainConfig::default();
        let mut tape = Tape::new();
        let target = Matrix::from_rows(&[[0.2, 0.3, 0.4]]);
        let pred = tape.constant(target.clone());
        let latent = tape.constant(Matrix::scalar(0.0));
        let obj = record_objective(&mut tape, pred, &target, None, &[], Some(latent), &cfg);
        assert_eq!(obj.terms(&tape).total, 0.0);
    }

    #[test]
    fn score_regularizer_clamps_and_decreases() {
        assert_eq!(score_regularizer(&[1.0, 0.5], 1e-3), 1.0 + 4.0);
        assert_eq!(score_regularizer(&[0.0], 1e-3), 1e6);
        assert!(score_regularizer(&[0.6], 1e-3) < score_regularizer(&[0.5], 1e-3));
    }

    #[test]
    fn lr_decays_geometrically() {
        let cfg = TrainConfig {
            warmup_steps: 50,
            consistency_steps: 50,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate_at(0), cfg.learning_rate);
        assert!((cfg.learning_rate_at(100) - cfg.learning_rate * 0.1).abs() < 1e-15);
    }
}

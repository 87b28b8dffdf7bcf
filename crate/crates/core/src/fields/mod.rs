//! Two-stage radiance fields for the background and each object class.
//!
//! The first stage maps an encoded position (plus the object latent for
//! dynamic classes) to the payload form of the canonical feature, a density
//! and a consistency score. The second stage maps the reconstructed feature
//! plus the encoded transient inputs (direction, and object location for
//! dynamic classes) to rgb. Density and score never see transient inputs.

pub mod factor;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{encode_rows, encoded_len, relu_in_place, AutodiffError, Dense, Matrix, Mlp, ParamId, ParamStore, Tape, Var};
use crate::math::{sigmoid, softplus, Vec3};
use crate::scene::{Bounds, SceneGraph};

pub use factor::{factor_len, feature_len, reconstruct_feature, MAX_RANK};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("latent code must be given for dynamic fields and omitted for the static field")]
    LatentPresence,
    #[error("unknown object index {0}")]
    UnknownObject(usize),
    #[error("invalid field configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// How the canonical feature `y` is produced and what a memory bin stores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Storage {
    /// First stage emits `4m` factors; `y = flatten(u1 ⊗ u2) + z`. Bins keep the factors.
    LowRank,
    /// First stage emits `y` directly and bins keep all `l` values.
    Feature,
    /// First stage emits `y`; bins keep `ReLU(Enc(y))` of length `l/4` and
    /// the feature is `Dec(code)` on every path.
    EncoderDecoder,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldConfig {
    pub first_width: usize,
    /// Hidden layers in the first stage; a linear head layer follows.
    pub first_layers: usize,
    pub second_width: usize,
    /// Layers in the second stage including its rgb output layer.
    pub second_layers: usize,
    pub position_freqs: usize,
    pub direction_freqs: usize,
    pub location_freqs: usize,
    pub latent_len: usize,
    pub feature_len: usize,
    pub rank: usize,
    pub storage: Storage,
    /// Initial bias of the score logit, so scores start near sigmoid(score_bias).
    pub score_bias: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            first_width: 128,
            first_layers: 8,
            second_width: 64,
            second_layers: 4,
            position_freqs: 6,
            direction_freqs: 4,
            location_freqs: 2,
            latent_len: 16,
            feature_len: 256,
            rank: 4,
            storage: Storage::LowRank,
            score_bias: 2.0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.first_width == 0 || self.second_width == 0 || self.first_layers == 0 || self.second_layers == 0 {
            return Err(FieldError::Config("network widths and depths must be positive"));
        }
        if self.feature_len == 0 {
            return Err(FieldError::Config("feature length must be positive"));
        }
        if !self.score_bias.is_finite() {
            return Err(FieldError::Config("score bias must be finite"));
        }
        match self.storage {
            Storage::LowRank => {
                if self.rank == 0 || self.rank > MAX_RANK {
                    return Err(FieldError::Config("rank must lie in 1..=8"));
                }
                if feature_len(self.rank) != self.feature_len {
                    return Err(FieldError::Dimension {
                        what: "feature length (must be m⁴)",
                        expected: feature_len(self.rank),
                        found: self.feature_len,
                    });
                }
            }
            Storage::EncoderDecoder => {
                if self.feature_len % 4 != 0 {
                    return Err(FieldError::Config("encoder-decoder needs l divisible by 4"));
                }
            }
            Storage::Feature => {}
        }
        Ok(())
    }

    /// Scalars kept per bin for the feature part of a payload.
    pub fn payload_len(&self) -> usize {
        match self.storage {
            Storage::LowRank => factor_len(self.rank),
            Storage::Feature => self.feature_len,
            Storage::EncoderDecoder => self.code_len(),
        }
    }

    pub fn code_len(&self) -> usize {
        self.feature_len / 4
    }

    fn head_len(&self) -> usize {
        match self.storage {
            Storage::LowRank => factor_len(self.rank),
            Storage::Feature | Storage::EncoderDecoder => self.feature_len,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Static,
    Dynamic,
}

/// First-stage outputs for a batch of positions.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstStage {
    /// Payload form of the feature, one row per query.
    pub stored: Matrix,
    pub sigma: Vec<f64>,
    pub score: Vec<f64>,
}

/// Tape handles for a recorded first stage.
#[derive(Clone, Copy, Debug)]
pub struct FirstStageVars {
    pub stored: Var,
    /// `Q×1`.
    pub sigma: Var,
    /// `Q×1`.
    pub score: Var,
}

/// One component's (or class's) pair of networks.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPair {
    kind: FieldKind,
    config: FieldConfig,
    first: Mlp,
    second: Mlp,
    codec: Option<(Dense, Dense)>,
}

impl FieldPair {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        kind: FieldKind,
        config: FieldConfig,
        rng: &mut R,
    ) -> Result<Self, FieldError> {
        config.validate()?;
        let mut first_in = encoded_len(3, config.position_freqs);
        let mut second_in = config.feature_len + encoded_len(3, config.direction_freqs);
        if kind == FieldKind::Dynamic {
            first_in += config.latent_len;
            second_in += encoded_len(3, config.location_freqs);
        }
        let mut dims = vec![first_in];
        dims.extend(core::iter::repeat(config.first_width).take(config.first_layers));
        dims.push(config.head_len() + 2);
        let first = Mlp::new(store, &format!("{name}.first"), &dims, rng);
        if let Some(head) = first.layers().last() {
            let bias = store.value_mut(head.bias);
            let last = bias.cols() - 1;
            bias.set(0, last, config.score_bias);
        }

        let mut dims = vec![second_in];
        dims.extend(core::iter::repeat(config.second_width).take(config.second_layers - 1));
        dims.push(3);
        let second = Mlp::new(store, &format!("{name}.second"), &dims, rng);

        let codec = (config.storage == Storage::EncoderDecoder).then(|| {
            let (l, n) = (config.feature_len, config.code_len());
            (
                Dense::new(store, &format!("{name}.encoder"), l, n, rng),
                Dense::new(store, &format!("{name}.decoder"), n, l, rng),
            )
        });
        Ok(Self {
            kind,
            config,
            first,
            second,
            codec,
        })
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn first(&self) -> &Mlp {
        &self.first
    }

    pub fn second(&self) -> &Mlp {
        &self.second
    }

    pub fn codec(&self) -> Option<&(Dense, Dense)> {
        self.codec.as_ref()
    }

    fn check_latents(&self, rows: usize, latents: Option<(usize, usize)>) -> Result<(), FieldError> {
        match (self.kind, latents) {
            (FieldKind::Static, None) => Ok(()),
            (FieldKind::Dynamic, Some((r, c))) => {
                if c != self.config.latent_len {
                    return Err(FieldError::Dimension {
                        what: "latent length",
                        expected: self.config.latent_len,
                        found: c,
                    });
                }
                if r != rows {
                    return Err(FieldError::Dimension {
                        what: "latent rows",
                        expected: rows,
                        found: r,
                    });
                }
                Ok(())
            }
            _ => Err(FieldError::LatentPresence),
        }
    }

    /// Batched first stage. `positions` are canonical (objects) or
    /// bounds-normalised (background), one row per query.
    pub fn first_stage(
        &self,
        store: &ParamStore,
        positions: &Matrix,
        latents: Option<&Matrix>,
    ) -> Result<FirstStage, FieldError> {
        check_cols("positions", positions, 3)?;
        self.check_latents(positions.rows(), latents.map(Matrix::shape))?;
        let enc = encode_rows(positions, self.config.position_freqs);
        let input = match latents {
            Some(l) => Matrix::concat_cols(&[&enc, l]),
            None => enc,
        };
        let out = self.first.forward(store, &input);
        let k = self.config.head_len();
        let mut stored = out.slice_cols(0, k);
        if let Some((enc, _)) = &self.codec {
            stored = enc.forward(store, &stored);
            relu_in_place(&mut stored);
        }
        let sigma = (0..out.rows()).map(|i| softplus(out.get(i, k))).collect();
        let score = (0..out.rows()).map(|i| sigmoid(out.get(i, k + 1))).collect();
        Ok(FirstStage { stored, sigma, score })
    }

    /// Canonical feature `y` from payload rows. `z` (low-rank only) has one
    /// row, or one row per payload row.
    pub fn decode(&self, store: &ParamStore, stored: &Matrix, z: Option<&Matrix>) -> Result<Matrix, FieldError> {
        check_cols("payload", stored, self.config.payload_len())?;
        match self.config.storage {
            Storage::LowRank => {
                let z = z.ok_or(FieldError::Config("low-rank decoding needs the shared feature z"))?;
                check_cols("shared feature z", z, self.config.feature_len)?;
                if z.rows() != 1 && z.rows() != stored.rows() {
                    return Err(FieldError::Dimension {
                        what: "shared feature rows",
                        expected: stored.rows(),
                        found: z.rows(),
                    });
                }
                Ok(factor::reconstruct_rows(stored, z, self.config.rank))
            }
            Storage::Feature => Ok(stored.clone()),
            Storage::EncoderDecoder => {
                let (_, dec) = self.codec.as_ref().expect("codec exists in encoder-decoder mode");
                Ok(dec.forward(store, stored))
            }
        }
    }

    /// Second stage: rgb in `(0,1)³` per row. `locations` are the
    /// bounds-normalised object positions (dynamic only).
    pub fn color(
        &self,
        store: &ParamStore,
        y: &Matrix,
        directions: &Matrix,
        locations: Option<&Matrix>,
    ) -> Result<Matrix, FieldError> {
        check_cols("feature", y, self.config.feature_len)?;
        check_cols("directions", directions, 3)?;
        let dir = encode_rows(directions, self.config.direction_freqs);
        let input = match (self.kind, locations) {
            (FieldKind::Static, None) => Matrix::concat_cols(&[y, &dir]),
            (FieldKind::Dynamic, Some(p)) => {
                check_cols("locations", p, 3)?;
                let loc = encode_rows(p, self.config.location_freqs);
                Matrix::concat_cols(&[y, &dir, &loc])
            }
            _ => return Err(FieldError::LatentPresence),
        };
        Ok(self.second.forward(store, &input).map(sigmoid))
    }

    pub fn record_first_stage(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        positions: Var,
        latents: Option<Var>,
    ) -> Result<FirstStageVars, FieldError> {
        let rows = tape.value(positions).rows();
        check_cols("positions", tape.value(positions), 3)?;
        self.check_latents(rows, latents.map(|l| tape.value(l).shape()))?;
        let enc = tape.positional_encode(positions, self.config.position_freqs);
        let input = match latents {
            Some(l) => tape.concat(&[enc, l]),
            None => enc,
        };
        let out = self.first.record(tape, store, input)?;
        let k = self.config.head_len();
        let mut stored = tape.slice_cols(out, 0, k);
        if let Some((enc, _)) = &self.codec {
            let pre = enc.record(tape, store, stored)?;
            stored = tape.relu(pre);
        }
        let sigma = tape.slice_cols(out, k, 1);
        let sigma = tape.softplus(sigma);
        let score = tape.slice_cols(out, k + 1, 1);
        let score = tape.sigmoid(score);
        Ok(FirstStageVars { stored, sigma, score })
    }

    pub fn record_decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        stored: Var,
        z: Option<Var>,
    ) -> Result<Var, FieldError> {
        check_cols("payload", tape.value(stored), self.config.payload_len())?;
        match self.config.storage {
            Storage::LowRank => {
                let z = z.ok_or(FieldError::Config("low-rank decoding needs the shared feature z"))?;
                Ok(tape.low_rank(stored, z, self.config.rank))
            }
            Storage::Feature => Ok(stored),
            Storage::EncoderDecoder => {
                let (_, dec) = self.codec.as_ref().expect("codec exists in encoder-decoder mode");
                Ok(dec.record(tape, store, stored)?)
            }
        }
    }

    pub fn record_color(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        y: Var,
        directions: Var,
        locations: Option<Var>,
    ) -> Result<Var, FieldError> {
        let dir = tape.positional_encode(directions, self.config.direction_freqs);
        let input = match (self.kind, locations) {
            (FieldKind::Static, None) => tape.concat(&[y, dir]),
            (FieldKind::Dynamic, Some(p)) => {
                let loc = tape.positional_encode(p, self.config.location_freqs);
                tape.concat(&[y, dir, loc])
            }
            _ => return Err(FieldError::LatentPresence),
        };
        let out = self.second.record(tape, store, input)?;
        Ok(tape.sigmoid(out))
    }

    /// Multiply-adds of the first stage per query (including the codec encoder).
    pub fn first_stage_macs(&self) -> usize {
        self.first.macs() + self.codec.as_ref().map_or(0, |(e, _)| e.macs())
    }

    /// Multiply-adds turning a payload into `y` per query.
    pub fn decode_macs(&self) -> usize {
        match self.config.storage {
            Storage::LowRank => {
                let m = self.config.rank;
                feature_len(m) + 2 * m * m
            }
            Storage::Feature => 0,
            Storage::EncoderDecoder => self.codec.as_ref().map_or(0, |(_, d)| d.macs()),
        }
    }

    pub fn second_stage_macs(&self) -> usize {
        self.second.macs()
    }
}

fn check_cols(what: &'static str, m: &Matrix, cols: usize) -> Result<(), FieldError> {
    if m.cols() == cols {
        Ok(())
    } else {
        Err(FieldError::Dimension {
            what,
            expected: cols,
            found: m.cols(),
        })
    }
}

/// Which part of the scene a query belongs to. Background queries carry the
/// index of the plane they were sampled on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    Plane(usize),
    Object(usize),
}

/// A point to shade.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Query {
    pub component: Component,
    /// Canonical `x_o` for objects; bounds-normalised global `x` for the background.
    pub position: Vec3,
    /// Canonical `d_o` for objects; global `d` for the background.
    pub direction: Vec3,
    /// Global object location `p_o` (unused for the background).
    pub location: Vec3,
    pub frame: usize,
}

/// Per-query field output. `feature` is the payload form of the canonical
/// feature (factors in low-rank mode).
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceSample {
    pub rgb: [f64; 3],
    pub sigma: f64,
    pub score: f64,
    pub feature: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ObjectParams {
    class: usize,
    latent: ParamId,
    z: Option<ParamId>,
}

/// Network key for batching: the background, or an object class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Network {
    Background,
    Class(usize),
}

/// All trainable state for one scene: background and per-class fields,
/// per-object latents, and per-component shared features `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub store: ParamStore,
    config: FieldConfig,
    bounds: Bounds,
    background: FieldPair,
    background_z: Option<ParamId>,
    classes: Vec<FieldPair>,
    objects: Vec<ObjectParams>,
}

impl SceneModel {
    /// Builds fields for `scene`, initialising everything from `seed`.
    /// Latents start at `U(−0.1, 0.1)` and shared features `z` at zero.
    pub fn new(scene: &SceneGraph, config: FieldConfig, seed: u64) -> Result<Self, FieldError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let background = FieldPair::new(&mut store, "background", FieldKind::Static, config, &mut rng)?;
        let low_rank = config.storage == Storage::LowRank;
        let background_z = low_rank.then(|| store.add("background.z", Matrix::zeros(1, config.feature_len)));
        let classes = (0..scene.class_count())
            .map(|c| FieldPair::new(&mut store, &format!("class{c}"), FieldKind::Dynamic, config, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let objects = scene
            .objects
            .iter()
            .map(|o| {
                let data = (0..config.latent_len).map(|_| rng.gen_range(-0.1..=0.1)).collect();
                let latent = store.add(
                    format!("object{}.latent", o.id),
                    Matrix::from_vec(1, config.latent_len, data),
                );
                let z = low_rank.then(|| store.add(format!("object{}.z", o.id), Matrix::zeros(1, config.feature_len)));
                ObjectParams {
                    class: o.class,
                    latent,
                    z,
                }
            })
            .collect();
        Ok(Self {
            store,
            config,
            bounds: scene.bounds,
            background,
            background_z,
            classes,
            objects,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn network(&self, component: Component) -> Result<Network, FieldError> {
        match component {
            Component::Plane(_) => Ok(Network::Background),
            Component::Object(i) => self
                .objects
                .get(i)
                .map(|o| Network::Class(o.class))
                .ok_or(FieldError::UnknownObject(i)),
        }
    }

    pub fn field(&self, network: Network) -> &FieldPair {
        match network {
            Network::Background => &self.background,
            Network::Class(c) => &self.classes[c],
        }
    }

    pub fn field_for(&self, component: Component) -> Result<&FieldPair, FieldError> {
        Ok(self.field(self.network(component)?))
    }

    pub fn fields(&self) -> impl Iterator<Item = &FieldPair> {
        core::iter::once(&self.background).chain(&self.classes)
    }

    pub fn latent(&self, object: usize) -> Result<ParamId, FieldError> {
        self.objects
            .get(object)
            .map(|o| o.latent)
            .ok_or(FieldError::UnknownObject(object))
    }

    pub fn latents(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.objects.iter().map(|o| o.latent)
    }

    /// Shared feature `z` of a component (low-rank mode only).
    pub fn shared_feature(&self, component: Component) -> Result<Option<ParamId>, FieldError> {
        match component {
            Component::Plane(_) => Ok(self.background_z),
            Component::Object(i) => self.objects.get(i).map(|o| o.z).ok_or(FieldError::UnknownObject(i)),
        }
    }

    /// Scales global object locations into the `[−1,1]³` range the second
    /// stage sees.
    pub fn normalize_location(&self, p: Vec3) -> Vec3 {
        self.bounds.normalize(p)
    }

    /// Indices of `queries` grouped by network, groups in network order and
    /// indices ascending within each group.
    pub fn group(&self, queries: &[Query]) -> Result<Vec<(Network, Vec<usize>)>, FieldError> {
        let mut groups: Vec<(Network, Vec<usize>)> = Vec::new();
        for (i, q) in queries.iter().enumerate() {
            let net = self.network(q.component)?;
            match groups.iter_mut().find(|(n, _)| *n == net) {
                Some((_, rows)) => rows.push(i),
                None => groups.push((net, vec![i])),
            }
        }
        groups.sort_by_key(|(n, _)| *n);
        Ok(groups)
    }

    fn rows_of(&self, queries: &[Query], rows: &[usize], f: impl Fn(&Query) -> Vec3) -> Matrix {
        let mut m = Matrix::zeros(rows.len(), 3);
        for (r, &i) in rows.iter().enumerate() {
            m.row_mut(r).copy_from_slice(&f(&queries[i]).to_array());
        }
        m
    }

    fn param_rows(&self, queries: &[Query], rows: &[usize], pick: impl Fn(&ObjectParams) -> ParamId) -> Matrix {
        let mut out: Option<Matrix> = None;
        for (r, &i) in rows.iter().enumerate() {
            let Component::Object(o) = queries[i].component else {
                unreachable!("object rows only")
            };
            let v = self.store.value(pick(&self.objects[o]));
            let m = out.get_or_insert_with(|| Matrix::zeros(rows.len(), v.cols()));
            m.row_mut(r).copy_from_slice(v.row(0));
        }
        out.unwrap_or_else(|| Matrix::zeros(0, 0))
    }

    fn z_rows(&self, network: Network, queries: &[Query], rows: &[usize]) -> Option<Matrix> {
        match network {
            Network::Background => self.background_z.map(|z| self.store.value(z).clone()),
            Network::Class(_) => self
                .objects
                .first()
                .and_then(|o| o.z)
                .map(|_| self.param_rows(queries, rows, |o| o.z.expect("low-rank z"))),
        }
    }

    fn transient_rows(&self, network: Network, queries: &[Query], rows: &[usize]) -> (Matrix, Option<Matrix>) {
        let dirs = self.rows_of(queries, rows, |q| q.direction);
        let locs = matches!(network, Network::Class(_))
            .then(|| self.rows_of(queries, rows, |q| self.normalize_location(q.location)));
        (dirs, locs)
    }

    /// Full forward pass over any mix of components.
    pub fn evaluate(&self, queries: &[Query]) -> Result<Vec<RadianceSample>, FieldError> {
        let mut out = vec![
            RadianceSample {
                rgb: [0.0; 3],
                sigma: 0.0,
                score: 0.0,
                feature: Vec::new(),
            };
            queries.len()
        ];
        for (net, rows) in self.group(queries)? {
            let field = self.field(net);
            let pos = self.rows_of(queries, &rows, |q| q.position);
            let latents = matches!(net, Network::Class(_)).then(|| self.param_rows(queries, &rows, |o| o.latent));
            let first = field.first_stage(&self.store, &pos, latents.as_ref())?;
            let z = self.z_rows(net, queries, &rows);
            let y = field.decode(&self.store, &first.stored, z.as_ref())?;
            let (dirs, locs) = self.transient_rows(net, queries, &rows);
            let rgb = field.color(&self.store, &y, &dirs, locs.as_ref())?;
            for (r, &i) in rows.iter().enumerate() {
                out[i] = RadianceSample {
                    rgb: [rgb.get(r, 0), rgb.get(r, 1), rgb.get(r, 2)],
                    sigma: first.sigma[r],
                    score: first.score[r],
                    feature: first.stored.row(r).to_vec(),
                };
            }
        }
        Ok(out)
    }

    /// Single-query [`SceneModel::evaluate`].
    pub fn full_forward(&self, query: &Query) -> Result<RadianceSample, FieldError> {
        Ok(self.evaluate(core::slice::from_ref(query))?.remove(0))
    }

    /// Second stage on stored payloads: rgb for each query from its
    /// payload-form feature, with the query's own transient inputs.
    pub fn color_from_payloads(&self, queries: &[Query], payloads: &[&[f32]]) -> Result<Vec<[f64; 3]>, FieldError> {
        assert_eq!(queries.len(), payloads.len(), "one payload per query");
        let mut out = vec![[0.0; 3]; queries.len()];
        let k = self.config.payload_len();
        for (net, rows) in self.group(queries)? {
            let field = self.field(net);
            let mut stored = Matrix::zeros(rows.len(), k);
            for (r, &i) in rows.iter().enumerate() {
                if payloads[i].len() != k {
                    return Err(FieldError::Dimension {
                        what: "payload",
                        expected: k,
                        found: payloads[i].len(),
                    });
                }
                for (d, &s) in stored.row_mut(r).iter_mut().zip(payloads[i]) {
                    *d = s as f64;
                }
            }
            let z = self.z_rows(net, queries, &rows);
            let y = field.decode(&self.store, &stored, z.as_ref())?;
            let (dirs, locs) = self.transient_rows(net, queries, &rows);
            let rgb = field.color(&self.store, &y, &dirs, locs.as_ref())?;
            for (r, &i) in rows.iter().enumerate() {
                out[i] = [rgb.get(r, 0), rgb.get(r, 1), rgb.get(r, 2)];
            }
        }
        Ok(out)
    }

    /// Starts recording against this model on `tape`.
    pub fn recorder<'a>(&'a self, tape: &'a mut Tape) -> Recorder<'a> {
        Recorder {
            model: self,
            tape,
            latent_vars: vec![None; self.objects.len()],
            z_vars: vec![None; self.objects.len()],
            background_z: None,
        }
    }
}

/// Tape handles for one network's share of a recorded batch.
#[derive(Clone, Debug)]
pub struct RecordedGroup {
    pub network: Network,
    /// Indices into the query slice, ascending.
    pub rows: Vec<usize>,
    pub first: FirstStageVars,
    /// `|rows|×3`.
    pub rgb: Var,
}

/// Records model evaluations on a tape, binding each parameter leaf once.
pub struct Recorder<'a> {
    model: &'a SceneModel,
    pub tape: &'a mut Tape,
    latent_vars: Vec<Option<Var>>,
    z_vars: Vec<Option<Var>>,
    background_z: Option<Var>,
}

impl Recorder<'_> {
    fn latent_var(&mut self, object: usize) -> Var {
        if let Some(v) = self.latent_vars[object] {
            return v;
        }
        let v = self.tape.param(&self.model.store, self.model.objects[object].latent);
        self.latent_vars[object] = Some(v);
        v
    }

    fn z_var(&mut self, component: Component) -> Option<Var> {
        match component {
            Component::Plane(_) => {
                let id = self.model.background_z?;
                if self.background_z.is_none() {
                    self.background_z = Some(self.tape.param(&self.model.store, id));
                }
                self.background_z
            }
            Component::Object(o) => {
                let id = self.model.objects[o].z?;
                if self.z_vars[o].is_none() {
                    self.z_vars[o] = Some(self.tape.param(&self.model.store, id));
                }
                self.z_vars[o]
            }
        }
    }

    /// Per-row `z` for low-rank decoding: the background's single row, or
    /// one gathered row per object query.
    fn z_for(&mut self, network: Network, queries: &[Query], rows: &[usize]) -> Option<Var> {
        match network {
            Network::Background => self.z_var(Component::Plane(0)),
            Network::Class(_) => {
                let mut sources = Vec::with_capacity(rows.len());
                for &i in rows {
                    sources.push((self.z_var(queries[i].component)?, 0));
                }
                Some(self.tape.gather(&sources))
            }
        }
    }

    fn transients(&mut self, network: Network, queries: &[Query], rows: &[usize]) -> (Var, Option<Var>) {
        let (dirs, locs) = self.model.transient_rows(network, queries, rows);
        let d = self.tape.constant(dirs);
        let p = locs.map(|l| self.tape.constant(l));
        (d, p)
    }

    /// Full forward pass for every query, grouped by network.
    pub fn full(&mut self, queries: &[Query]) -> Result<Vec<RecordedGroup>, FieldError> {
        let model = self.model;
        let mut out = Vec::new();
        for (net, rows) in model.group(queries)? {
            let field = model.field(net);
            let pos = self.tape.constant(model.rows_of(queries, &rows, |q| q.position));
            let latents = match net {
                Network::Background => None,
                Network::Class(_) => {
                    let sources: Vec<(Var, usize)> = rows
                        .iter()
                        .map(|&i| match queries[i].component {
                            Component::Object(o) => (self.latent_var(o), 0),
                            Component::Plane(_) => unreachable!("class groups hold object queries"),
                        })
                        .collect();
                    Some(self.tape.gather(&sources))
                }
            };
            let first = field.record_first_stage(self.tape, &model.store, pos, latents)?;
            let z = self.z_for(net, queries, &rows);
            let y = field.record_decode(self.tape, &model.store, first.stored, z)?;
            let (d, p) = self.transients(net, queries, &rows);
            let rgb = field.record_color(self.tape, &model.store, y, d, p)?;
            out.push(RecordedGroup {
                network: net,
                rows,
                first,
                rgb,
            });
        }
        Ok(out)
    }

    /// rgb recomputed from constant payload rows, one per listed query.
    /// Gradients reach the second stage and the decoding parameters.
    pub fn color_from_payloads(
        &mut self,
        network: Network,
        queries: &[Query],
        rows: &[usize],
        payloads: Matrix,
    ) -> Result<Var, FieldError> {
        let model = self.model;
        let field = model.field(network);
        let stored = self.tape.constant(payloads);
        let z = self.z_for(network, queries, rows);
        let y = field.record_decode(self.tape, &model.store, stored, z)?;
        let (d, p) = self.transients(network, queries, rows);
        field.record_color(self.tape, &model.store, y, d, p)
    }

    /// `Σ_o ‖l_o‖²` over every object latent.
    pub fn latent_sum_squares(&mut self) -> Option<Var> {
        let parts: Vec<Var> = (0..self.model.objects.len())
            .map(|o| {
                let v = self.latent_var(o);
                self.tape.sum_squares(v)
            })
            .collect();
        (!parts.is_empty()).then(|| self.tape.sum_scalars(&parts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FieldConfig {
        FieldConfig {
            first_width: 16,
            first_layers: 2,
            second_width: 8,
            second_layers: 2,
            latent_len: 4,
            feature_len: 16,
            rank: 2,
            ..FieldConfig::default()
        }
    }

    fn pair(kind: FieldKind, config: FieldConfig) -> (ParamStore, FieldPair) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = FieldPair::new(&mut store, "f", kind, config, &mut rng).unwrap();
        (store, f)
    }

    #[test]
    fn default_layer_counts() {
        let (_, f) = pair(FieldKind::Dynamic, FieldConfig::default());
        assert_eq!(f.first().layers().len(), 9);
        assert_eq!(f.second().layers().len(), 4);
        assert_eq!(f.first().out_dim(), 16 + 2);
        assert_eq!(f.first().in_dim(), 3 + 36 + 16);
        assert_eq!(f.second().in_dim(), 256 + 27 + 15);
    }

    #[test]
    fn low_rank_needs_matching_feature_len() {
        let bad = FieldConfig {
            feature_len: 100,
            ..FieldConfig::default()
        };
        assert!(matches!(bad.validate(), Err(FieldError::Dimension { .. })));
    }

    #[test]
    fn latent_presence_is_checked() {
        let (store, f) = pair(FieldKind::Dynamic, small());
        let x = Matrix::zeros(2, 3);
        assert_eq!(f.first_stage(&store, &x, None), Err(FieldError::LatentPresence));
        let wrong = Matrix::zeros(2, 5);
        assert!(matches!(
            f.first_stage(&store, &x, Some(&wrong)),
            Err(FieldError::Dimension { what: "latent length", .. })
        ));
    }

    #[test]
    fn tape_and_plain_paths_agree_bitwise() {
        for storage in [Storage::LowRank, Storage::Feature, Storage::EncoderDecoder] {
            let cfg = FieldConfig { storage, ..small() };
            let (store, f) = pair(FieldKind::Dynamic, cfg);
            let x = Matrix::from_rows(&[[0.1, -0.5, 0.9], [-1.0, 1.0, 0.0]]);
            let l = Matrix::from_rows(&[[0.1, 0.2, 0.3, 0.4], [0.0, -0.1, 0.5, 0.2]]);
            let z = Matrix::filled(1, 16, 0.05);
            let d = Matrix::from_rows(&[[0.0, 0.0, 1.0], [0.6, 0.0, 0.8]]);
            let p = Matrix::from_rows(&[[0.2, 0.0, 0.4], [-0.3, 0.1, 0.4]]);
            let plain = f.first_stage(&store, &x, Some(&l)).unwrap();
            let y = f.decode(&store, &plain.stored, Some(&z)).unwrap();
            let rgb = f.color(&store, &y, &d, Some(&p)).unwrap();

            let mut tape = Tape::new();
            let (xv, lv, zv) = (tape.constant(x), tape.constant(l), tape.constant(z));
            let first = f.record_first_stage(&mut tape, &store, xv, Some(lv)).unwrap();
            let yv = f.record_decode(&mut tape, &store, first.stored, Some(zv)).unwrap();
            let (dv, pv) = (tape.constant(d), tape.constant(p));
            let rv = f.record_color(&mut tape, &store, yv, dv, Some(pv)).unwrap();
            assert_eq!(tape.value(first.stored), &plain.stored);
            assert_eq!(tape.value(first.sigma).as_slice(), plain.sigma.as_slice());
            assert_eq!(tape.value(first.score).as_slice(), plain.score.as_slice());
            assert_eq!(tape.value(rv), &rgb);
        }
    }

    #[test]
    fn payload_lengths() {
        let cfg = FieldConfig::default();
        assert_eq!(cfg.payload_len(), 16);
        let enc = FieldConfig {
            storage: Storage::EncoderDecoder,
            ..cfg
        };
        assert_eq!(enc.payload_len(), 64);
        let direct = FieldConfig {
            storage: Storage::Feature,
            ..cfg
        };
        assert_eq!(direct.payload_len(), 256);
    }

    #[test]
    fn decoder_of_zero_code_is_bias() {
        let cfg = FieldConfig {
            storage: Storage::EncoderDecoder,
            ..small()
        };
        let (mut store, f) = pair(FieldKind::Static, cfg);
        let (_, dec) = f.codec().unwrap().clone();
        let bias = Matrix::from_vec(1, 16, (0..16).map(|i| i as f64 * 0.1).collect());
        store.set_value(dec.bias, bias.clone()).unwrap();
        let y = f.decode(&store, &Matrix::zeros(1, 4), None).unwrap();
        assert_eq!(y, bias);
    }
}

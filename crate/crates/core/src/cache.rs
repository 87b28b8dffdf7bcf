//! Quantized memory bins.
//!
//! Objects use a 3D grid over canonical `[−1,1]³`; the background uses a 2D
//! grid over bounds-normalised `(x, y)` on each plane. Bins are allocated
//! lazily in a sorted map, payloads are single precision and every update
//! overwrites.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{relu_in_place, Dense, Matrix, ParamStore};
use crate::fields::{Component, FieldConfig, Query, Storage};
use crate::math::{floor, Vec3};

/// Bins per axis used unless configured otherwise.
pub const DEFAULT_BINS: usize = 100;

/// Bytes per entry charged by [`BinStore::memory_usage`] on top of the
/// payload. Zero: `memory_usage` measures payload storage only, and
/// [`BinStore::index_bytes`] reports the map overhead separately.
pub const INDEX_OVERHEAD_BYTES: usize = 0;

/// Input values may overshoot `[−1, 1]` by this much from rounding.
const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CacheError {
    #[error("coordinate {0} outside [-1, 1]")]
    OutOfRange(f64),
    #[error("bin count must lie in 1..=65535, got {0}")]
    BadBinCount(usize),
    #[error("payload feature has {found} scalars but the store expects {expected}")]
    StrategyMismatch { expected: usize, found: usize },
    #[error("payload has sigma {sigma} or score {score} out of range")]
    InvalidPayload { sigma: f32, score: f32 },
    #[error("no payload stored at {0:?}")]
    Missing(BinIndex),
    #[error("plane index {0} does not fit a bin address")]
    PlaneOutOfRange(usize),
}

/// Address of one bin inside a component's store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinIndex {
    Cell([u16; 3]),
    Plane { plane: u16, cell: [u16; 2] },
}

fn quantize_axis(v: f64, n: usize) -> Result<u16, CacheError> {
    if !(v >= -1.0 - RANGE_SLACK && v <= 1.0 + RANGE_SLACK) {
        return Err(CacheError::OutOfRange(v));
    }
    let c = floor((v + 1.0) * 0.5 * n as f64);
    Ok((c.max(0.0) as usize).min(n - 1) as u16)
}

fn check_bins(n: usize) -> Result<(), CacheError> {
    if n == 0 || n > u16::MAX as usize {
        return Err(CacheError::BadBinCount(n));
    }
    Ok(())
}

/// `cell_i = floor((x_i + 1)/2 · N)`, with the upper face folded into cell `N − 1`.
pub fn quantize(x: Vec3, n: usize) -> Result<BinIndex, CacheError> {
    check_bins(n)?;
    Ok(BinIndex::Cell([
        quantize_axis(x.x, n)?,
        quantize_axis(x.y, n)?,
        quantize_axis(x.z, n)?,
    ]))
}

/// 2D cell on background plane `plane` from normalised `(x, y)`.
pub fn quantize_plane(x: f64, y: f64, plane: usize, n: usize) -> Result<BinIndex, CacheError> {
    check_bins(n)?;
    let plane = u16::try_from(plane).map_err(|_| CacheError::PlaneOutOfRange(plane))?;
    Ok(BinIndex::Plane {
        plane,
        cell: [quantize_axis(x, n)?, quantize_axis(y, n)?],
    })
}

/// The bin a query falls into within its component's store.
pub fn bin_index(query: &Query, n: usize) -> Result<BinIndex, CacheError> {
    match query.component {
        Component::Object(_) => quantize(query.position, n),
        Component::Plane(k) => quantize_plane(query.position.x, query.position.y, k, n),
    }
}

/// What the feature part of each payload holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// `4m` low-rank factors.
    LowRank { rank: usize },
    /// The full canonical feature.
    Feature { len: usize },
    /// Encoder output of length `l/4`.
    Code { len: usize },
    /// Final rgb (background direct-colour mode).
    Rgb,
    /// Gradient-norm baseline: rgb, with the payload's `score` slot holding
    /// the gradient norm `∂` instead of a consistency score.
    NaiveRgb,
}

impl Strategy {
    /// The strategy matching a field configuration.
    pub fn for_field(config: &FieldConfig) -> Self {
        match config.storage {
            Storage::LowRank => Strategy::LowRank { rank: config.rank },
            Storage::Feature => Strategy::Feature {
                len: config.feature_len,
            },
            Storage::EncoderDecoder => Strategy::Code {
                len: config.code_len(),
            },
        }
    }

    pub fn feature_len(&self) -> usize {
        match *self {
            Strategy::LowRank { rank } => 4 * rank,
            Strategy::Feature { len } | Strategy::Code { len } => len,
            Strategy::Rgb | Strategy::NaiveRgb => 3,
        }
    }

    /// Feature scalars plus `σ` and `s`.
    pub fn scalars_per_entry(&self) -> usize {
        self.feature_len() + 2
    }

    /// Bytes per entry as counted by [`BinStore::memory_usage`].
    pub fn bytes_per_entry(&self) -> usize {
        self.scalars_per_entry() * 4 + INDEX_OVERHEAD_BYTES
    }

    pub fn tag(&self) -> u8 {
        match self {
            Strategy::LowRank { .. } => 0,
            Strategy::Feature { .. } => 1,
            Strategy::Code { .. } => 2,
            Strategy::Rgb => 3,
            Strategy::NaiveRgb => 4,
        }
    }

    /// Inverse of [`Strategy::tag`] given the stored feature length.
    pub fn from_tag(tag: u8, feature_len: usize) -> Option<Self> {
        Some(match tag {
            0 if feature_len % 4 == 0 => Strategy::LowRank { rank: feature_len / 4 },
            1 => Strategy::Feature { len: feature_len },
            2 => Strategy::Code { len: feature_len },
            3 if feature_len == 3 => Strategy::Rgb,
            4 if feature_len == 3 => Strategy::NaiveRgb,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinPayload {
    pub feature: Vec<f32>,
    pub sigma: f32,
    pub score: f32,
}

/// Borrowed view of a stored payload.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PayloadRef<'a> {
    pub feature: &'a [f32],
    pub sigma: f32,
    pub score: f32,
}

impl PayloadRef<'_> {
    pub fn to_owned(&self) -> BinPayload {
        BinPayload {
            feature: self.feature.to_vec(),
            sigma: self.sigma,
            score: self.score,
        }
    }
}

/// Sparse bin memory for one scene component. Equality compares contents,
/// not arena layout.
#[derive(Clone, Debug)]
pub struct BinStore {
    strategy: Strategy,
    bins: usize,
    index: BTreeMap<BinIndex, usize>,
    arena: Vec<f32>,
}

impl BinStore {
    pub fn new(strategy: Strategy, bins: usize) -> Result<Self, CacheError> {
        check_bins(bins)?;
        Ok(Self {
            strategy,
            bins,
            index: BTreeMap::new(),
            arena: Vec::new(),
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn clear(&mut self) {
        self.index.clear();
        self.arena.clear();
    }

    /// Store `feature`, `σ`, `s` at `idx`, replacing any previous payload.
    pub fn update_parts(&mut self, idx: BinIndex, feature: &[f32], sigma: f32, score: f32) -> Result<(), CacheError> {
        let k = self.strategy.feature_len();
        if feature.len() != k {
            return Err(CacheError::StrategyMismatch {
                expected: k,
                found: feature.len(),
            });
        }
        let score_ok = match self.strategy {
            Strategy::NaiveRgb => score >= 0.0,
            _ => (0.0..=1.0).contains(&score),
        };
        if !(sigma >= 0.0) || !score_ok || !sigma.is_finite() {
            return Err(CacheError::InvalidPayload { sigma, score });
        }
        let stride = k + 2;
        let slot = match self.index.get(&idx) {
            Some(&s) => s,
            None => {
                let s = self.arena.len() / stride;
                self.arena.resize(self.arena.len() + stride, 0.0);
                self.index.insert(idx, s);
                s
            }
        };
        let dst = &mut self.arena[slot * stride..(slot + 1) * stride];
        dst[..k].copy_from_slice(feature);
        dst[k] = sigma;
        dst[k + 1] = score;
        Ok(())
    }

    pub fn update(&mut self, idx: BinIndex, payload: &BinPayload) -> Result<(), CacheError> {
        self.update_parts(idx, &payload.feature, payload.sigma, payload.score)
    }

    /// Narrow double-precision values to a payload and store them.
    pub fn update_f64(&mut self, idx: BinIndex, feature: &[f64], sigma: f64, score: f64) -> Result<(), CacheError> {
        let mut buf = [0.0f32; 512];
        let narrowed: Vec<f32>;
        let f: &[f32] = if feature.len() <= buf.len() {
            for (d, &s) in buf.iter_mut().zip(feature) {
                *d = s as f32;
            }
            &buf[..feature.len()]
        } else {
            narrowed = feature.iter().map(|&v| v as f32).collect();
            &narrowed
        };
        self.update_parts(idx, f, sigma as f32, score as f32)
    }

    pub fn exists(&self, idx: &BinIndex) -> bool {
        self.index.contains_key(idx)
    }

    pub fn get(&self, idx: &BinIndex) -> Option<PayloadRef<'_>> {
        let &slot = self.index.get(idx)?;
        Some(self.at(slot))
    }

    fn at(&self, slot: usize) -> PayloadRef<'_> {
        let k = self.strategy.feature_len();
        let s = &self.arena[slot * (k + 2)..(slot + 1) * (k + 2)];
        PayloadRef {
            feature: &s[..k],
            sigma: s[k],
            score: s[k + 1],
        }
    }

    /// The stored payload; callers gate on [`BinStore::exists`].
    pub fn retrieve(&self, idx: &BinIndex) -> Result<BinPayload, CacheError> {
        self.get(idx).map(|p| p.to_owned()).ok_or(CacheError::Missing(*idx))
    }

    /// Payload bytes: `entries × (scalars × 4 + INDEX_OVERHEAD_BYTES)`.
    pub fn memory_usage(&self) -> usize {
        self.len() * self.strategy.bytes_per_entry()
    }

    /// Bytes spent on addressing (key plus arena slot) per entry, reported
    /// separately from [`BinStore::memory_usage`].
    pub fn index_bytes(&self) -> usize {
        self.len() * (core::mem::size_of::<BinIndex>() + core::mem::size_of::<usize>())
    }

    /// Entries in ascending index order.
    pub fn iter(&self) -> impl Iterator<Item = (BinIndex, PayloadRef<'_>)> {
        self.index.iter().map(|(&idx, &slot)| (idx, self.at(slot)))
    }
}

impl PartialEq for BinStore {
    fn eq(&self, other: &Self) -> bool {
        self.strategy == other.strategy && self.bins == other.bins && self.len() == other.len() && self.iter().eq(other.iter())
    }
}

/// One store per scene component.
#[derive(Clone, Debug, PartialEq)]
pub struct CacheSet {
    pub background: BinStore,
    pub objects: Vec<BinStore>,
}

impl CacheSet {
    pub fn new(background: Strategy, objects: Strategy, object_count: usize, bins: usize) -> Result<Self, CacheError> {
        Ok(Self {
            background: BinStore::new(background, bins)?,
            objects: (0..object_count)
                .map(|_| BinStore::new(objects, bins))
                .collect::<Result<_, _>>()?,
        })
    }

    /// Stores for the cache-feature path of a model: objects store the
    /// field's payload form; the background does too unless `background_rgb`.
    pub fn for_model(config: &FieldConfig, object_count: usize, bins: usize, background_rgb: bool) -> Result<Self, CacheError> {
        let s = Strategy::for_field(config);
        Self::new(if background_rgb { Strategy::Rgb } else { s }, s, object_count, bins)
    }

    pub fn store(&self, component: Component) -> &BinStore {
        match component {
            Component::Plane(_) => &self.background,
            Component::Object(i) => &self.objects[i],
        }
    }

    pub fn store_mut(&mut self, component: Component) -> &mut BinStore {
        match component {
            Component::Plane(_) => &mut self.background,
            Component::Object(i) => &mut self.objects[i],
        }
    }

    pub fn bins(&self) -> usize {
        self.background.bins()
    }

    pub fn len(&self) -> usize {
        self.background.len() + self.objects.iter().map(BinStore::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn memory_usage(&self) -> usize {
        self.background.memory_usage() + self.objects.iter().map(BinStore::memory_usage).sum::<usize>()
    }

    pub fn clear(&mut self) {
        self.background.clear();
        self.objects.iter_mut().for_each(BinStore::clear);
    }
}

/// `code = ReLU(Enc(y))`, `y_out = Dec(code)` for one feature vector.
pub fn encode_decode(store: &ParamStore, codec: &(Dense, Dense), y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (enc, dec) = codec;
    let mut code = enc.forward(store, &Matrix::row_vector(y));
    relu_in_place(&mut code);
    let out = dec.forward(store, &code);
    (code.into_vec(), out.into_vec())
}

/// Payload bytes a store with `entries` bins would use under `strategy`.
pub fn memory_usage_for(strategy: Strategy, entries: usize) -> usize {
    entries * strategy.bytes_per_entry()
}

/// Upper bound on allocated bins: `N³` per object, `N²·P` for the background.
pub fn max_bins(component: Component, bins: usize, planes: usize) -> usize {
    match component {
        Component::Object(_) => bins * bins * bins,
        Component::Plane(_) => bins * bins * planes,
    }
}

/// A payload that is all zeros for `strategy`.
pub fn zero_payload(strategy: Strategy) -> BinPayload {
    BinPayload {
        feature: vec![0.0; strategy.feature_len()],
        sigma: 0.0,
        score: 0.0,
    }
}

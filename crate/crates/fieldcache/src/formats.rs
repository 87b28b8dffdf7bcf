//! Binary checkpoint and cache-snapshot formats. All integers and floats
//! are little-endian.
//!
//! Checkpoint: magic `FCCKPT01`, `u32` record count, then per parameter
//! `u32` name length, UTF-8 name, `u32` rank, `rank × u32` dims and the
//! values as `f64`.
//!
//! Snapshot: magic `FCSNAP01`, `u32` store count (background first, then
//! objects in order), then per store a header of `u8` strategy tag, `u32`
//! bins per axis, `u32` feature length and `u64` entry count, followed by
//! the entries sorted by bin index. Each entry is a `u8` index kind
//! (0 = cell, 1 = plane), three `u16` coordinates (plane, x, y for plane
//! bins) and `feature length + 2` `f32` values: the feature, σ and score.

use std::path::Path;

use fieldcache_core::autodiff::{Matrix, ParamStore};
use fieldcache_core::cache::{BinIndex, BinStore, CacheError, CacheSet, Strategy};

const CHECKPOINT_MAGIC: &[u8; 8] = b"FCCKPT01";
const SNAPSHOT_MAGIC: &[u8; 8] = b"FCSNAP01";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected}")]
    Magic { expected: &'static str },
    #[error("unexpected end of data while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last record")]
    Trailing(usize),
    #[error("invalid UTF-8 in parameter name")]
    Name,
    #[error("checkpoint has no parameter named {0:?}")]
    MissingParam(String),
    #[error("checkpoint parameter {0:?} does not exist in the model")]
    UnknownParam(String),
    #[error("parameter {name:?}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unknown strategy tag {tag} with feature length {len}")]
    Strategy { tag: u8, len: usize },
    #[error("unknown bin index kind {0}")]
    IndexKind(u8),
    #[error("snapshot entries are not sorted by bin index")]
    Unsorted,
    #[error("snapshot has {found} stores, the model needs {expected}")]
    StoreCount { expected: usize, found: usize },
    #[error(transparent)]
    Cache(#[from] CacheError),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or(FormatError::Truncated(what))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    std::fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A named tensor as stored in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend((store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        let name = p.name().as_bytes();
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name);
        let v = p.value();
        out.extend(2u32.to_le_bytes());
        out.extend((v.rows() as u32).to_le_bytes());
        out.extend((v.cols() as u32).to_le_bytes());
        for x in v.as_slice() {
            out.extend(x.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<NamedTensor>, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(FormatError::Magic { expected: "FCCKPT01" });
    }
    let count = r.u32("record count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| FormatError::Name)?.to_string();
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let values = (0..n).map(|_| r.f64("values")).collect::<Result<Vec<_>, _>>()?;
        out.push(NamedTensor { name, dims, values });
    }
    r.finish()?;
    Ok(out)
}

/// Overwrites every parameter of `store` from the checkpoint; names must
/// match one to one.
pub fn load_checkpoint_into(store: &mut ParamStore, tensors: Vec<NamedTensor>) -> Result<(), FormatError> {
    let mut seen = vec![false; store.len()];
    for t in tensors {
        let id = store.find(&t.name).ok_or_else(|| FormatError::UnknownParam(t.name.clone()))?;
        let v = store.value(id);
        let expected = vec![v.rows(), v.cols()];
        let found = match t.dims.len() {
            2 => t.dims.clone(),
            _ => {
                return Err(FormatError::Shape {
                    name: t.name,
                    expected,
                    found: t.dims,
                })
            }
        };
        if found != expected {
            return Err(FormatError::Shape { name: t.name, expected, found });
        }
        *store.value_mut(id) = Matrix::from_vec(found[0], found[1], t.values);
        seen[id.0] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let name = store.iter().nth(i).map(|(_, p)| p.name().to_string()).unwrap_or_default();
        return Err(FormatError::MissingParam(name));
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, store: &ParamStore) -> Result<(), FormatError> {
    write_file(path, &encode_checkpoint(store))
}

pub fn load_checkpoint(path: &Path, store: &mut ParamStore) -> Result<(), FormatError> {
    let tensors = decode_checkpoint(&read_file(path)?)?;
    load_checkpoint_into(store, tensors)
}

fn encode_index(out: &mut Vec<u8>, idx: BinIndex) {
    let (kind, c) = match idx {
        BinIndex::Cell(c) => (0u8, c),
        BinIndex::Plane { plane, cell } => (1u8, [plane, cell[0], cell[1]]),
    };
    out.push(kind);
    for v in c {
        out.extend(v.to_le_bytes());
    }
}

fn encode_store(out: &mut Vec<u8>, store: &BinStore) {
    let s = store.strategy();
    out.push(s.tag());
    out.extend((store.bins() as u32).to_le_bytes());
    out.extend((s.feature_len() as u32).to_le_bytes());
    out.extend((store.len() as u64).to_le_bytes());
    for (idx, p) in store.iter() {
        encode_index(out, idx);
        for v in p.feature.iter().chain([&p.sigma, &p.score]) {
            out.extend(v.to_le_bytes());
        }
    }
}

fn decode_store(r: &mut Reader<'_>) -> Result<BinStore, FormatError> {
    let tag = r.u8("strategy")?;
    let bins = r.u32("bins")? as usize;
    let len = r.u32("feature length")? as usize;
    let strategy = Strategy::from_tag(tag, len).ok_or(FormatError::Strategy { tag, len })?;
    let count = r.u64("entry count")?;
    let mut store = BinStore::new(strategy, bins)?;
    let mut last: Option<BinIndex> = None;
    let mut feature = vec![0f32; len];
    for _ in 0..count {
        let kind = r.u8("index kind")?;
        let c = [r.u16("index")?, r.u16("index")?, r.u16("index")?];
        let idx = match kind {
            0 => BinIndex::Cell(c),
            1 => BinIndex::Plane {
                plane: c[0],
                cell: [c[1], c[2]],
            },
            k => return Err(FormatError::IndexKind(k)),
        };
        if last.is_some_and(|l| l >= idx) {
            return Err(FormatError::Unsorted);
        }
        last = Some(idx);
        for v in feature.iter_mut() {
            *v = r.f32("payload")?;
        }
        let sigma = r.f32("payload")?;
        let score = r.f32("payload")?;
        store.update_parts(idx, &feature, sigma, score)?;
    }
    Ok(store)
}

pub fn encode_snapshot(set: &CacheSet) -> Vec<u8> {
    let mut out = SNAPSHOT_MAGIC.to_vec();
    out.extend((1 + set.objects.len() as u32).to_le_bytes());
    encode_store(&mut out, &set.background);
    for s in &set.objects {
        encode_store(&mut out, s);
    }
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<CacheSet, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != SNAPSHOT_MAGIC {
        return Err(FormatError::Magic { expected: "FCSNAP01" });
    }
    let count = r.u32("store count")? as usize;
    if count == 0 {
        return Err(FormatError::StoreCount { expected: 1, found: 0 });
    }
    let background = decode_store(&mut r)?;
    let objects = (1..count).map(|_| decode_store(&mut r)).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok(CacheSet { background, objects })
}

pub fn save_snapshot(path: &Path, set: &CacheSet) -> Result<(), FormatError> {
    write_file(path, &encode_snapshot(set))
}

pub fn load_snapshot(path: &Path) -> Result<CacheSet, FormatError> {
    decode_snapshot(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.weight", Matrix::from_rows(&[[1.0, -2.5], [3.25, 0.0]]));
        s.add("b", Matrix::scalar(f64::MIN_POSITIVE));
        s
    }

    #[test]
    fn checkpoint_layout() {
        let bytes = encode_checkpoint(&store());
        assert_eq!(&bytes[..8], b"FCCKPT01");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 8);
        assert_eq!(&bytes[16..24], b"a.weight");
        // rank 2, dims 2×2, 4 doubles
        assert_eq!(bytes.len(), 12 + (4 + 8 + 4 + 8 + 32) + (4 + 1 + 4 + 8 + 8));
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let src = store();
        let bytes = encode_checkpoint(&src);
        let mut dst = store();
        *dst.value_mut(dst.find("b").unwrap()) = Matrix::scalar(7.0);
        load_checkpoint_into(&mut dst, decode_checkpoint(&bytes).unwrap()).unwrap();
        assert_eq!(src, dst);

        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(FormatError::Truncated(_))));
        let mut other = ParamStore::new();
        other.add("a.weight", Matrix::zeros(2, 2));
        assert!(matches!(
            load_checkpoint_into(&mut other, decode_checkpoint(&bytes).unwrap()),
            Err(FormatError::UnknownParam(n)) if n == "b"
        ));
        let mut bigger = store();
        bigger.add("c", Matrix::zeros(1, 1));
        assert!(matches!(
            load_checkpoint_into(&mut bigger, decode_checkpoint(&bytes).unwrap()),
            Err(FormatError::MissingParam(n)) if n == "c"
        ));
    }

    #[test]
    fn snapshot_round_trip_is_sorted() {
        let mut set = CacheSet::new(Strategy::Rgb, Strategy::LowRank { rank: 4 }, 2, 100).unwrap();
        set.background
            .update_parts(BinIndex::Plane { plane: 3, cell: [4, 5] }, &[0.1, 0.2, 0.3], 0.5, 0.25)
            .unwrap();
        set.background
            .update_parts(BinIndex::Plane { plane: 0, cell: [99, 0] }, &[1.0, 0.0, 0.5], 2.0, 0.75)
            .unwrap();
        set.objects[1]
            .update_parts(BinIndex::Cell([1, 2, 3]), &[0.5; 16], 1.5, 0.9)
            .unwrap();
        let bytes = encode_snapshot(&set);
        assert_eq!(decode_snapshot(&bytes).unwrap(), set);
        // Header of the background store follows the magic and count.
        assert_eq!(bytes[12], Strategy::Rgb.tag());
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 100);
        // First background record is the smaller index (plane 0).
        assert_eq!(bytes[29], 1);
        assert_eq!(u16::from_le_bytes(bytes[30..32].try_into().unwrap()), 0);
    }
}

//! Bags, spatial region partitions, the `.aifb` feature file and the manifest CSV.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, FormatError, Result};
use crate::tensor::{Real, Tensor};

/// A whole-slide abstraction: `N` instance features with grid coordinates and a bag label.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    /// `N×D` instance features.
    pub features: Tensor,
    pub coords: Vec<(i32, i32)>,
    pub label: usize,
}

impl Bag {
    pub fn new(id: impl Into<String>, features: Tensor, coords: Vec<(i32, i32)>, label: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Contract(format!(
                "bag features must be N×D, got {:?}",
                features.shape()
            )));
        }
        if coords.len() != features.rows() {
            return Err(Error::shape("Bag::new", features.shape(), &[coords.len(), 2]));
        }
        Ok(Self {
            id: id.into(),
            features,
            coords,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn partition(&self, regions: usize) -> Result<RegionPartition> {
        partition(&self.coords, regions)
    }
}

/// An ordered split of `0..N` into `L` spatially contiguous regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPartition {
    regions: Vec<Vec<usize>>,
}

impl RegionPartition {
    pub fn regions(&self) -> &[Vec<usize>] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.regions.iter().map(Vec::len).collect()
    }

    pub fn instances(&self) -> usize {
        self.regions.iter().map(Vec::len).sum()
    }

    /// Region index of every instance.
    pub fn region_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.instances()];
        for (l, r) in self.regions.iter().enumerate() {
            for &i in r {
                out[i] = l;
            }
        }
        out
    }
}

/// Interleaves the bits of `x` (even positions) and `y` (odd positions).
pub fn morton_key(x: u32, y: u32) -> u64 {
    fn spread(v: u32) -> u64 {
        let mut v = v as u64;
        v = (v | (v << 16)) & 0x0000_FFFF_0000_FFFF;
        v = (v | (v << 8)) & 0x00FF_00FF_00FF_00FF;
        v = (v | (v << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
        v = (v | (v << 2)) & 0x3333_3333_3333_3333;
        v = (v | (v << 1)) & 0x5555_5555_5555_5555;
        v
    }
    spread(x) | (spread(y) << 1)
}

/// Instance indices in Z-order of their coordinates (offset by the per-bag
/// minimum), ties broken by index.
pub fn morton_order(coords: &[(i32, i32)]) -> Vec<usize> {
    let min_x = coords.iter().map(|c| c.0).min().unwrap_or(0) as i64;
    let min_y = coords.iter().map(|c| c.1).min().unwrap_or(0) as i64;
    let mut keyed: Vec<(u64, usize)> = coords
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let kx = (x as i64 - min_x) as u32;
            let ky = (y as i64 - min_y) as u32;
            (morton_key(kx, ky), i)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Splits the Morton-ordered instances into `regions` contiguous chunks; the first
/// `N mod L` chunks hold one extra instance.
pub fn partition(coords: &[(i32, i32)], regions: usize) -> Result<RegionPartition> {
    let n = coords.len();
    if regions == 0 || n < regions {
        return Err(Error::Partition { instances: n, regions });
    }
    let order = morton_order(coords);
    let (base, extra) = (n / regions, n % regions);
    let mut out = Vec::with_capacity(regions);
    let mut start = 0;
    for l in 0..regions {
        let size = base + usize::from(l < extra);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(RegionPartition { regions: out })
}

pub const AIFB_MAGIC: [u8; 4] = *b"AIFB";
pub const AIFB_VERSION: u32 = 1;

/// Contents of an `.aifb` file.
#[derive(Debug, Clone, PartialEq)]
pub struct BagFeatures {
    pub coords: Vec<(i32, i32)>,
    pub features: Tensor,
}

/// Little-endian cursor that reports truncation with offsets.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let b = self.take(4)?;
        let found = [b[0], b[1], b[2], b[3]];
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self) -> Result<i32, FormatError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(self) -> Result<(), FormatError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

pub fn encode_bag(coords: &[(i32, i32)], features: &Tensor) -> Result<Vec<u8>> {
    let (n, d) = (features.rows(), features.cols());
    if coords.len() != n || features.shape().len() != 2 {
        return Err(Error::shape("encode_bag", features.shape(), &[coords.len()]));
    }
    let mut out = Vec::with_capacity(16 + 8 * n + 4 * n * d);
    out.extend_from_slice(&AIFB_MAGIC);
    out.extend_from_slice(&AIFB_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &(x, y) in coords {
        out.extend_from_slice(&x.to_le_bytes());
        out.extend_from_slice(&y.to_le_bytes());
    }
    for (i, &v) in features.data().iter().enumerate() {
        let v = v as f32;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite feature at element {i}")));
        }
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_bag(bytes: &[u8]) -> Result<BagFeatures, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(AIFB_MAGIC)?;
    let version = r.u32()?;
    if version != AIFB_VERSION {
        return Err(FormatError::Version {
            expected: AIFB_VERSION,
            found: version,
        });
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    // check the full payload length before allocating
    let payload = n
        .checked_mul(8)
        .and_then(|c| n.checked_mul(d).and_then(|e| e.checked_mul(4)).map(|f| c + f))
        .ok_or_else(|| FormatError::Invalid(format!("header sizes overflow: N={n} D={d}")))?;
    let available = bytes.len() - 16;
    if payload > available {
        return Err(FormatError::Truncated {
            offset: 16,
            needed: payload,
            available,
        });
    }
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        coords.push((r.i32()?, r.i32()?));
    }
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n * d {
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(FormatError::NonFinite(i));
        }
        data.push(v as Real);
    }
    r.finish()?;
    let features = Tensor::matrix(n, d, data).map_err(|e| FormatError::Invalid(e.to_string()))?;
    Ok(BagFeatures { coords, features })
}

pub fn read_bag_file(path: impl AsRef<Path>) -> Result<BagFeatures> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bag(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_bag_file(bag: &Bag, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bag(&bag.coords, &bag.features)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub const MANIFEST_HEADER: &str = "bag_id,path,label";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub bag_id: String,
    /// Path as written in the manifest, relative to its directory.
    pub rel_path: String,
    /// `rel_path` resolved against the manifest's directory.
    pub path: PathBuf,
    pub label: usize,
}

impl ManifestRecord {
    pub fn load(&self) -> Result<Bag> {
        let BagFeatures { coords, features } = read_bag_file(&self.path)?;
        Bag::new(self.bag_id.clone(), features, coords, self.label)
    }
}

pub fn read_manifest(path: impl AsRef<Path>, n_classes: usize) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path, n_classes)
}

pub fn parse_manifest(text: &str, path: &Path, n_classes: usize) -> Result<Vec<ManifestRecord>> {
    let err = |line: usize, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == MANIFEST_HEADER => {}
        Some((_, h)) => return Err(err(1, format!("expected header `{MANIFEST_HEADER}`, found `{h}`"))),
        None => return Err(err(1, "missing header".into())),
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        let [id, rel, label] = fields[..] else {
            return Err(err(lineno, format!("expected 3 fields, found {}", fields.len())));
        };
        if id.is_empty() || rel.is_empty() {
            return Err(err(lineno, "empty bag_id or path".into()));
        }
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| err(lineno, format!("label `{label}` is not a class index")))?;
        if label >= n_classes {
            return Err(err(lineno, format!("label {label} outside [0, {n_classes})")));
        }
        if !seen.insert(id.to_string()) {
            return Err(err(lineno, format!("duplicate bag_id `{id}`")));
        }
        out.push(ManifestRecord {
            bag_id: id.to_string(),
            rel_path: rel.to_string(),
            path: base.join(rel),
            label,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&format!("{},{},{}\n", r.bag_id, r.rel_path, r.label));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_bags(records: &[ManifestRecord]) -> Result<Vec<Bag>> {
    records.iter().map(ManifestRecord::load).collect()
}

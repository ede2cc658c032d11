//! Vector files in the texmex layout and the model container.
//!
//! Every record of an `.fvecs`, `.bvecs` or `.ivecs` file is a 4-byte
//! little-endian signed dimension `d` followed by `d` elements
//! (`f32` LE, `u8`, or `i32` LE respectively). All records of a file
//! share the same dimension.

mod container;

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub use container::{load_model, save_model, Persist};

/// Element encoding of a vector file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Float32,
    Uint8,
    Int32,
}

impl ElementKind {
    pub fn size(self) -> usize {
        match self {
            ElementKind::Uint8 => 1,
            ElementKind::Float32 | ElementKind::Int32 => 4,
        }
    }

    /// Guess the kind from a file extension (`fvecs`, `bvecs`, `ivecs`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "fvecs" => Some(ElementKind::Float32),
            "bvecs" => Some(ElementKind::Uint8),
            "ivecs" => Some(ElementKind::Int32),
            _ => None,
        }
    }
}

/// Dense row-major set of `count` vectors of dimension `dim`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    dim: usize,
    count: usize,
    data: Vec<f32>,
}

impl Dataset {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            if !data.is_empty() {
                return Err(Error::domain("dimension 0 with non-empty data"));
            }
            return Ok(Self::empty());
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::domain(format!(
                "{} scalars do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Dataset {
            dim,
            count: data.len() / dim,
            data,
        })
    }

    pub fn empty() -> Self {
        Dataset::default()
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Ok(Self::empty());
        };
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(dim * rows.len());
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::domain(format!(
                    "row {i} has dimension {} instead of {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Dataset::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact(0) panics; an empty dataset has no rows anyway.
        self.data.chunks_exact(self.dim.max(1))
    }

    /// The first `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.count);
        Dataset {
            dim: if n == 0 { 0 } else { self.dim },
            count: n,
            data: self.data[..n * self.dim].to_vec(),
        }
    }

    /// Rows selected by `indexes`, in that order.
    pub fn select(&self, indexes: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(indexes.len() * self.dim);
        for &i in indexes {
            data.extend_from_slice(self.row(i));
        }
        Dataset {
            dim: if indexes.is_empty() { 0 } else { self.dim },
            count: indexes.len(),
            data,
        }
    }

    /// Columns `start..start + width` of every row, as a new dataset.
    pub fn columns(&self, start: usize, width: usize) -> Dataset {
        let mut data = Vec::with_capacity(self.count * width);
        for row in self.rows() {
            data.extend_from_slice(&row[start..start + width]);
        }
        Dataset {
            dim: width,
            count: self.count,
            data,
        }
    }
}

/// Exact nearest neighbors of a query set, `depth` ids per query, nearest
/// first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    queries: usize,
    depth: usize,
    ids: Vec<u32>,
}

impl GroundTruth {
    pub fn new(depth: usize, ids: Vec<u32>) -> Result<Self> {
        if depth == 0 {
            return Err(Error::domain("ground truth depth must be positive"));
        }
        if !ids.len().is_multiple_of(depth) {
            return Err(Error::domain("ground truth ids do not fill whole rows"));
        }
        Ok(GroundTruth {
            queries: ids.len() / depth,
            depth,
            ids,
        })
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn row(&self, q: usize) -> &[u32] {
        &self.ids[q * self.depth..(q + 1) * self.depth]
    }

    /// Keep only the first `n` queries.
    pub fn head(&self, n: usize) -> GroundTruth {
        let n = n.min(self.queries);
        GroundTruth {
            queries: n,
            depth: self.depth,
            ids: self.ids[..n * self.depth].to_vec(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let (dim, rows) = parse_records(&fs::read(path)?, ElementKind::Int32)?;
        let mut ids = Vec::with_capacity(rows.len());
        for (i, v) in rows.into_iter().enumerate() {
            let id = u32::try_from(v.as_int())
                .map_err(|_| Error::format(0, format!("negative id at element {i}")))?;
            ids.push(id);
        }
        if dim == 0 {
            return Err(Error::format(0, "empty ground-truth file"));
        }
        GroundTruth::new(dim, ids)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::with_capacity(self.ids.len() * 4 + self.queries * 4);
        for q in 0..self.queries {
            out.write_i32::<LittleEndian>(self.depth as i32)?;
            for &id in self.row(q) {
                out.write_i32::<LittleEndian>(id as i32)?;
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Scalar {
    F(f32),
    I(i32),
}

impl Scalar {
    fn as_f32(self) -> f32 {
        match self {
            Scalar::F(v) => v,
            Scalar::I(v) => v as f32,
        }
    }

    fn as_int(self) -> i64 {
        match self {
            Scalar::F(v) => v as i64,
            Scalar::I(v) => i64::from(v),
        }
    }
}

fn parse_records(bytes: &[u8], kind: ElementKind) -> Result<(usize, Vec<Scalar>)> {
    let total = bytes.len() as u64;
    let mut cur = Cursor::new(bytes);
    let mut dim: Option<usize> = None;
    let mut out = Vec::new();
    while cur.position() < total {
        let offset = cur.position();
        if total - offset < 4 {
            return Err(Error::format(offset, "truncated record header"));
        }
        let d = cur.read_i32::<LittleEndian>()?;
        if d <= 0 {
            return Err(Error::format(offset, format!("non-positive dimension {d}")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::format(
                    offset,
                    format!("record dimension {d} differs from {expected}"),
                ))
            }
            _ => {}
        }
        let need = (d * kind.size()) as u64;
        if total - cur.position() < need {
            return Err(Error::format(offset, "truncated record body"));
        }
        out.reserve(d);
        for _ in 0..d {
            let v = match kind {
                ElementKind::Float32 => Scalar::F(cur.read_f32::<LittleEndian>()?),
                ElementKind::Uint8 => Scalar::I(i32::from(cur.read_u8()?)),
                ElementKind::Int32 => Scalar::I(cur.read_i32::<LittleEndian>()?),
            };
            out.push(v);
        }
    }
    Ok((dim.unwrap_or(0), out))
}

/// Parse an in-memory vector file.
pub fn parse_vecs(bytes: &[u8], kind: ElementKind) -> Result<Dataset> {
    let (dim, scalars) = parse_records(bytes, kind)?;
    Dataset::new(dim, scalars.into_iter().map(Scalar::as_f32).collect())
}

pub fn read_vecs(path: impl AsRef<Path>, kind: ElementKind) -> Result<Dataset> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_vecs(&bytes, kind)
}

/// Serialize a dataset; fails if a value cannot be represented in `kind`.
pub fn encode_vecs(ds: &Dataset, kind: ElementKind) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ds.count() * (4 + ds.dim() * kind.size()));
    for (i, row) in ds.rows().enumerate() {
        out.write_i32::<LittleEndian>(ds.dim() as i32)?;
        for &v in row {
            match kind {
                ElementKind::Float32 => out.write_f32::<LittleEndian>(v)?,
                ElementKind::Uint8 => {
                    if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                        return Err(Error::domain(format!("value {v} in row {i} is not a byte")));
                    }
                    out.write_u8(v as u8)?;
                }
                ElementKind::Int32 => {
                    if v.fract() != 0.0 || !(-2147483648.0..2147483648.0).contains(&v) {
                        return Err(Error::domain(format!(
                            "value {v} in row {i} is not a 32-bit integer"
                        )));
                    }
                    out.write_i32::<LittleEndian>(v as i32)?;
                }
            }
        }
    }
    Ok(out)
}

pub fn write_vecs(ds: &Dataset, path: impl AsRef<Path>, kind: ElementKind) -> Result<()> {
    let bytes = encode_vecs(ds, kind)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_f32(vals: &[f32]) -> Vec<u8> {
        let mut b = (vals.len() as i32).to_le_bytes().to_vec();
        for v in vals {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn single_record() {
        let mut bytes = vec![1, 0, 0, 0];
        bytes.extend_from_slice(&3.0f32.to_le_bytes());
        let ds = parse_vecs(&bytes, ElementKind::Float32).unwrap();
        assert_eq!((ds.dim(), ds.count()), (1, 1));
        assert_eq!(ds.data(), &[3.0]);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let ds = parse_vecs(&[], ElementKind::Float32).unwrap();
        assert_eq!((ds.dim(), ds.count()), (0, 0));
    }

    #[test]
    fn mixed_dimensions_rejected_at_second_record() {
        let mut bytes = record_f32(&[1.0; 4]);
        let second = bytes.len() as u64;
        bytes.extend(record_f32(&[1.0; 5]));
        match parse_vecs(&bytes, ElementKind::Float32) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, second),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_and_bad_dim() {
        let mut bytes = record_f32(&[1.0, 2.0]);
        bytes.pop();
        assert!(matches!(
            parse_vecs(&bytes, ElementKind::Float32),
            Err(Error::Format { offset: 0, .. })
        ));
        let zero = 0i32.to_le_bytes();
        assert!(matches!(
            parse_vecs(&zero, ElementKind::Float32),
            Err(Error::Format { .. })
        ));
        let neg = (-3i32).to_le_bytes();
        assert!(parse_vecs(&neg, ElementKind::Uint8).is_err());
        // trailing partial header
        let mut bytes = record_f32(&[1.0]);
        bytes.extend_from_slice(&[1, 0]);
        assert!(matches!(
            parse_vecs(&bytes, ElementKind::Float32),
            Err(Error::Format { offset: 8, .. })
        ));
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(3, vec![0.5, -1.0, 2.25, 7.0, 8.0, 9.0]).unwrap();
        let p = dir.path().join("a.fvecs");
        write_vecs(&ds, &p, ElementKind::Float32).unwrap();
        assert_eq!(read_vecs(&p, ElementKind::Float32).unwrap(), ds);

        let bytes = Dataset::new(2, vec![0.0, 255.0, 17.0, 3.0]).unwrap();
        let p = dir.path().join("a.bvecs");
        write_vecs(&bytes, &p, ElementKind::Uint8).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 12);
        assert_eq!(read_vecs(&p, ElementKind::Uint8).unwrap(), bytes);

        let p = dir.path().join("e.fvecs");
        write_vecs(&Dataset::empty(), &p, ElementKind::Float32).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 0);
        assert_eq!(
            read_vecs(&p, ElementKind::Float32).unwrap(),
            Dataset::empty()
        );
    }

    #[test]
    fn uint8_out_of_range() {
        let ds = Dataset::new(1, vec![256.0]).unwrap();
        assert!(matches!(
            encode_vecs(&ds, ElementKind::Uint8),
            Err(Error::Domain(_))
        ));
        let ds = Dataset::new(1, vec![1.5]).unwrap();
        assert!(encode_vecs(&ds, ElementKind::Uint8).is_err());
    }

    #[test]
    fn ground_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gt = GroundTruth::new(3, vec![4, 1, 2, 0, 9, 8]).unwrap();
        let p = dir.path().join("gt.ivecs");
        gt.write(&p).unwrap();
        let back = GroundTruth::read(&p).unwrap();
        assert_eq!(back, gt);
        assert_eq!(back.row(1), &[0, 9, 8]);
    }
}

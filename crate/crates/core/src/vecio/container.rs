//! Single-file model container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    [u8; 8]   "DPQ-PQ\0\0" | "DPQ-FLAT" | "DPQ-IVF\0"
//! version  u32       currently 1
//! body               depends on the magic, see below
//! ```
//!
//! Quantizer body: `dim u32, m u32, bits u32, derived_bits u32`,
//! `rotated u8` followed by `dim*dim f32` row-major when it is 1, then for
//! every subspace the `2^bits` full centroids, the `2^derived_bits`
//! derived centroids (`dsub f32` each, in index order) and `2^bits u32`
//! group labels.
//!
//! Code store: `count u64, width u8 (1 or 2)`, then `count*m` words of
//! that many bytes.
//!
//! Flat index body: quantizer body, code store.
//!
//! Inverted index body: quantizer body, `cells u32`, `cells*dim f32`
//! coarse centers, then per cell a code store followed by `count u32` ids.
//!
//! The file must end right after the body.

use std::fs;
use std::io::{self, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::ivf::{InvertedIndex, InvertedList};
use crate::quantizer::{CodeStore, CodeWords, Codebook, ProductQuantizer, Rotation};
use crate::search::FlatIndex;

pub const FORMAT_VERSION: u32 = 1;

type Reader<'a> = Cursor<&'a [u8]>;

/// Objects that can be stored in a model container.
pub trait Persist: Sized {
    const MAGIC: [u8; 8];

    fn write_body<W: Write>(&self, w: &mut W) -> io::Result<()>;

    fn read_body(r: &mut Reader<'_>) -> Result<Self>;

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&Self::MAGIC);
        out.write_u32::<LittleEndian>(FORMAT_VERSION)
            .expect("vec write");
        self.write_body(&mut out).expect("vec write");
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if magic != Self::MAGIC {
            return Err(Error::format(
                0,
                format!(
                    "expected magic {:?}, found {:?}",
                    String::from_utf8_lossy(&Self::MAGIC),
                    String::from_utf8_lossy(&magic)
                ),
            ));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                8,
                format!("unsupported format version {version}"),
            ));
        }
        let obj = Self::read_body(&mut r)?;
        if (r.position() as usize) != bytes.len() {
            return Err(Error::format(r.position(), "trailing bytes after the body"));
        }
        Ok(obj)
    }
}

pub fn save_model<T: Persist>(obj: &T, path: &Path) -> Result<()> {
    fs::write(path, obj.to_bytes())?;
    Ok(())
}

pub fn load_model<T: Persist>(path: &Path) -> Result<T> {
    T::from_bytes(&fs::read(path)?)
}

fn eof(r: &Reader<'_>) -> Error {
    Error::format(r.position(), "unexpected end of file")
}

fn read_exact(r: &mut Reader<'_>, buf: &mut [u8]) -> Result<()> {
    let at = r.position();
    r.read_exact(buf)
        .map_err(|_| Error::format(at, "unexpected end of file"))
}

fn read_u32(r: &mut Reader<'_>) -> Result<u32> {
    let at = r.position();
    r.read_u32::<LittleEndian>()
        .map_err(|_| Error::format(at, "unexpected end of file"))
}

fn read_u64(r: &mut Reader<'_>) -> Result<u64> {
    let at = r.position();
    r.read_u64::<LittleEndian>()
        .map_err(|_| Error::format(at, "unexpected end of file"))
}

fn read_u8(r: &mut Reader<'_>) -> Result<u8> {
    r.read_u8().map_err(|_| eof(r))
}

/// Length-checked allocation: refuse counts the remaining bytes cannot hold.
fn check_remaining(r: &Reader<'_>, count: u64, size: u64) -> Result<usize> {
    let left = r.get_ref().len() as u64 - r.position();
    match count.checked_mul(size) {
        Some(n) if n <= left => Ok(count as usize),
        _ => Err(Error::format(
            r.position(),
            format!("{count} items of {size} bytes exceed the file"),
        )),
    }
}

fn read_f32s(r: &mut Reader<'_>, n: usize) -> Result<Vec<f32>> {
    check_remaining(r, n as u64, 4)?;
    let mut v = vec![0.0f32; n];
    r.read_f32_into::<LittleEndian>(&mut v)
        .map_err(|_| eof(r))?;
    Ok(v)
}

fn read_u32s(r: &mut Reader<'_>, n: usize) -> Result<Vec<u32>> {
    check_remaining(r, n as u64, 4)?;
    let mut v = vec![0u32; n];
    r.read_u32_into::<LittleEndian>(&mut v)
        .map_err(|_| eof(r))?;
    Ok(v)
}

fn write_f32s<W: Write>(w: &mut W, v: &[f32]) -> io::Result<()> {
    for &x in v {
        w.write_f32::<LittleEndian>(x)?;
    }
    Ok(())
}

fn write_u32s<W: Write>(w: &mut W, v: &[u32]) -> io::Result<()> {
    for &x in v {
        w.write_u32::<LittleEndian>(x)?;
    }
    Ok(())
}

/// Shape errors found while assembling loaded parts are format errors at
/// the offset where the part ended.
fn at<T>(r: &Reader<'_>, res: Result<T>) -> Result<T> {
    res.map_err(|e| match e {
        Error::Domain(msg) | Error::Invariant(msg) => Error::format(r.position(), msg),
        other => other,
    })
}

fn write_codes<W: Write>(w: &mut W, codes: &CodeStore) -> io::Result<()> {
    w.write_u64::<LittleEndian>(codes.len() as u64)?;
    match codes.words() {
        CodeWords::U8(words) => {
            w.write_u8(1)?;
            w.write_all(words)
        }
        CodeWords::U16(words) => {
            w.write_u8(2)?;
            for &x in words {
                w.write_u16::<LittleEndian>(x)?;
            }
            Ok(())
        }
    }
}

fn read_codes(r: &mut Reader<'_>, pq: &ProductQuantizer) -> Result<CodeStore> {
    let m = pq.m();
    let count = read_u64(r)?;
    let width_at = r.position();
    let width = read_u8(r)?;
    let n = count
        .checked_mul(m as u64)
        .ok_or_else(|| Error::format(width_at, "code count overflows"))?;
    let k = pq.k();
    let words = match width {
        1 => {
            let n = check_remaining(r, n, 1)?;
            let mut v = vec![0u8; n];
            read_exact(r, &mut v)?;
            if v.iter().any(|&x| x as usize >= k) {
                return Err(Error::format(
                    r.position(),
                    "code word outside the codebook",
                ));
            }
            CodeWords::U8(v)
        }
        2 => {
            let n = check_remaining(r, n, 2)?;
            let mut v = vec![0u16; n];
            r.read_u16_into::<LittleEndian>(&mut v)
                .map_err(|_| eof(r))?;
            if v.iter().any(|&x| x as usize >= k) {
                return Err(Error::format(
                    r.position(),
                    "code word outside the codebook",
                ));
            }
            CodeWords::U16(v)
        }
        w => return Err(Error::format(width_at, format!("invalid code width {w}"))),
    };
    let store = at(r, CodeStore::from_words(m, words))?;
    if store.width() != pq.code_width() {
        return Err(Error::format(
            width_at,
            "code width does not match the quantizer",
        ));
    }
    Ok(store)
}

impl Persist for ProductQuantizer {
    const MAGIC: [u8; 8] = *b"DPQ-PQ\0\0";

    fn write_body<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_u32::<LittleEndian>(self.dim() as u32)?;
        w.write_u32::<LittleEndian>(self.m() as u32)?;
        w.write_u32::<LittleEndian>(self.bits())?;
        w.write_u32::<LittleEndian>(self.derived_bits())?;
        match self.rotation() {
            Some(rot) => {
                w.write_u8(1)?;
                write_f32s(w, rot.matrix())?;
            }
            None => w.write_u8(0)?,
        }
        for j in 0..self.m() {
            write_f32s(w, self.full()[j].as_slice())?;
            write_f32s(w, self.derived()[j].as_slice())?;
            write_u32s(w, self.groups(j))?;
        }
        Ok(())
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self> {
        let start = r.position();
        let dim = read_u32(r)? as usize;
        let m = read_u32(r)? as usize;
        let bits = read_u32(r)?;
        let derived_bits = read_u32(r)?;
        if m == 0
            || dim == 0
            || !dim.is_multiple_of(m)
            || bits == 0
            || bits > 16
            || derived_bits == 0
            || derived_bits > bits
        {
            return Err(Error::format(
                start,
                format!("invalid quantizer header dim={dim} m={m} b={bits} bbar={derived_bits}"),
            ));
        }
        let flag_at = r.position();
        let rotation = match read_u8(r)? {
            0 => None,
            1 => {
                check_remaining(r, (dim * dim) as u64, 4)?;
                let matrix = read_f32s(r, dim * dim)?;
                Some(at(r, Rotation::from_matrix(dim, matrix))?)
            }
            f => return Err(Error::format(flag_at, format!("invalid rotation flag {f}"))),
        };
        let dsub = dim / m;
        let (k, kd) = (1usize << bits, 1usize << derived_bits);
        let mut full = Vec::with_capacity(m);
        let mut derived = Vec::with_capacity(m);
        let mut groups = Vec::with_capacity(m);
        for _ in 0..m {
            let c = read_f32s(r, k * dsub)?;
            full.push(at(r, Codebook::new(dsub, c))?);
            let c = read_f32s(r, kd * dsub)?;
            derived.push(at(r, Codebook::new(dsub, c))?);
            groups.push(read_u32s(r, k)?);
        }
        at(
            r,
            ProductQuantizer::from_parts(dim, bits, derived_bits, full, derived, groups, rotation),
        )
    }
}

impl Persist for FlatIndex {
    const MAGIC: [u8; 8] = *b"DPQ-FLAT";

    fn write_body<W: Write>(&self, w: &mut W) -> io::Result<()> {
        self.pq.write_body(w)?;
        write_codes(w, &self.codes)
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self> {
        let pq = ProductQuantizer::read_body(r)?;
        let codes = read_codes(r, &pq)?;
        at(r, FlatIndex::from_parts(pq, codes))
    }
}

impl Persist for InvertedIndex {
    const MAGIC: [u8; 8] = *b"DPQ-IVF\0";

    fn write_body<W: Write>(&self, w: &mut W) -> io::Result<()> {
        self.pq().write_body(w)?;
        w.write_u32::<LittleEndian>(self.coarse().k() as u32)?;
        write_f32s(w, self.coarse().as_slice())?;
        for list in self.lists() {
            write_codes(w, &list.codes)?;
            write_u32s(w, &list.ids)?;
        }
        Ok(())
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self> {
        let pq = ProductQuantizer::read_body(r)?;
        let cells_at = r.position();
        let cells = read_u32(r)? as usize;
        if cells == 0 {
            return Err(Error::format(cells_at, "index without cells"));
        }
        check_remaining(r, (cells * pq.dim()) as u64, 4)?;
        let centers = read_f32s(r, cells * pq.dim())?;
        let coarse = at(r, Codebook::new(pq.dim(), centers))?;
        let mut lists = Vec::with_capacity(cells);
        for _ in 0..cells {
            let codes = read_codes(r, &pq)?;
            let ids = read_u32s(r, codes.len())?;
            lists.push(InvertedList { ids, codes });
        }
        at(r, InvertedIndex::from_parts(coarse, lists, pq))
    }
}

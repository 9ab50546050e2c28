//! Binary file formats. All integers and floats are little-endian; every
//! file opens with a 4-byte magic and a u16 format version.
//!
//! "STCF"  feature matrix: M, n, seed, then M*n f64 values row-major.
//! "STCW"  projection: kind tag, n, l, s (0 for dense), seed. The matrix is
//!         regenerable from the header alone, so no payload is written and
//!         any payload found is ignored.
//! "STCC"  encoded database: code kind, M, l, lambda_x, then per item its
//!         packed bit planes, 64-bit word aligned (+1 plane, then -1 plane
//!         for ternary).
//! "STCI"  inverted index: M, l, then 2l posting lists (all +1 positions,
//!         then all -1 positions), each a varint count followed by
//!         delta-encoded varint ids (first absolute, then gaps).
//!
//! Foreign or mangled bytes surface as format errors; only genuine OS-level
//! failures surface as io errors.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::channel::FeatureMatrix;
use crate::decode::{CodeKind, EncodedDatabase, InvertedIndex};
use crate::error::{Result, StcError};
use crate::projection::{ProjectionKind, ProjectionMatrix};

const VERSION: u16 = 1;
const MAGIC_FEATURES: &[u8; 4] = b"STCF";
const MAGIC_PROJECTION: &[u8; 4] = b"STCW";
const MAGIC_CODES: &[u8; 4] = b"STCC";
const MAGIC_INDEX: &[u8; 4] = b"STCI";

fn fmt_err(msg: impl Into<String>) -> StcError {
    StcError::Format(msg.into())
}

fn read_exact_or_fmt(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            fmt_err("file ends early")
        } else {
            StcError::Io(e)
        }
    })
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact_or_fmt(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_fmt(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact_or_fmt(r, &mut b)?;
    Ok(b[0])
}

fn expect_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    read_exact_or_fmt(r, &mut got)?;
    if &got != magic {
        return Err(fmt_err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(fmt_err(format!("unsupported format version {version}")));
    }
    Ok(())
}

fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(fmt_err("trailing bytes after payload")),
    }
}

fn usize_of(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| StcError::Capacity(format!("{what} {v} exceeds address space")))
}

/// Caps a header-declared element count by what the file can actually hold,
/// so a corrupt header cannot trigger a huge allocation.
fn check_payload(file: &File, already: u64, elems: u64, elem_bytes: u64) -> Result<()> {
    let need = elems
        .checked_mul(elem_bytes)
        .and_then(|b| b.checked_add(already))
        .ok_or_else(|| StcError::Capacity("payload size overflows".into()))?;
    if file.metadata()?.len() < need {
        return Err(fmt_err("file ends early"));
    }
    Ok(())
}

pub fn write_features(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_FEATURES)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(fm.rows as u64).to_le_bytes())?;
    w.write_all(&(fm.dim as u64).to_le_bytes())?;
    w.write_all(&fm.seed.to_le_bytes())?;
    for v in &fm.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let file = File::open(path)?;
    let mut r = BufReader::new(&file);
    expect_header(&mut r, MAGIC_FEATURES)?;
    let rows = usize_of(read_u64(&mut r)?, "row count")?;
    let dim = usize_of(read_u64(&mut r)?, "dimension")?;
    let seed = read_u64(&mut r)?;
    if rows == 0 {
        return Err(StcError::Empty("feature database"));
    }
    if dim == 0 {
        return Err(fmt_err("dimension must be at least 1"));
    }
    let total = rows
        .checked_mul(dim)
        .ok_or_else(|| StcError::Capacity(format!("{rows} x {dim} overflows")))? as u64;
    check_payload(&file, 30, total, 8)?;
    let mut values = Vec::with_capacity(total as usize);
    for _ in 0..total {
        values.push(read_f64(&mut r)?);
    }
    expect_eof(&mut r)?;
    Ok(FeatureMatrix { rows, dim, values, seed })
}

/// Header-only write; fails for column-normalized matrices because
/// normalization destroys regenerability from (kind, seed).
pub fn write_projection(path: &Path, w: &ProjectionMatrix) -> Result<()> {
    if w.normalized {
        return Err(StcError::Domain(
            "column-normalized projections cannot be persisted; regenerate and renormalize \
             on load instead"
                .into(),
        ));
    }
    let (tag, s) = match w.kind {
        ProjectionKind::DenseGaussian => (0u8, 0.0f64),
        ProjectionKind::SparseSigned { s } => (1u8, s),
    };
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC_PROJECTION)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[tag])?;
    out.write_all(&(w.n as u64).to_le_bytes())?;
    out.write_all(&(w.l as u64).to_le_bytes())?;
    out.write_all(&s.to_le_bytes())?;
    out.write_all(&w.seed.to_le_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn read_projection(path: &Path) -> Result<ProjectionMatrix> {
    let file = File::open(path)?;
    let mut r = BufReader::new(&file);
    expect_header(&mut r, MAGIC_PROJECTION)?;
    let tag = read_u8(&mut r)?;
    let n = usize_of(read_u64(&mut r)?, "input dimension")?;
    let l = usize_of(read_u64(&mut r)?, "code length")?;
    let s = read_f64(&mut r)?;
    let seed = read_u64(&mut r)?;
    let kind = match tag {
        0 => ProjectionKind::DenseGaussian,
        1 => ProjectionKind::SparseSigned { s },
        other => return Err(fmt_err(format!("unknown projection kind tag {other}"))),
    };
    if n == 0 || l == 0 {
        return Err(fmt_err("projection dimensions must be at least 1"));
    }
    if tag == 1 && !(s.is_finite() && s >= 2.0) {
        return Err(fmt_err(format!("stored sparsity parameter is invalid: {s}")));
    }
    // any payload is redundant with the header; regenerate instead
    ProjectionMatrix::generate(n, l, kind, seed)
}

pub fn write_codes(path: &Path, db: &EncodedDatabase) -> Result<()> {
    let kind_tag = match db.kind() {
        CodeKind::Binary => 0u8,
        CodeKind::Ternary => 1u8,
    };
    let w = db.words_per_item();
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC_CODES)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[kind_tag])?;
    out.write_all(&(db.items() as u64).to_le_bytes())?;
    out.write_all(&(db.code_len() as u64).to_le_bytes())?;
    out.write_all(&db.lambda_x().to_le_bytes())?;
    for i in 0..db.items() {
        for word in &db.pos_plane()[i * w..(i + 1) * w] {
            out.write_all(&word.to_le_bytes())?;
        }
        if kind_tag == 1 {
            for word in &db.neg_plane()[i * w..(i + 1) * w] {
                out.write_all(&word.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_codes(path: &Path) -> Result<EncodedDatabase> {
    let file = File::open(path)?;
    let mut r = BufReader::new(&file);
    expect_header(&mut r, MAGIC_CODES)?;
    let kind = match read_u8(&mut r)? {
        0 => CodeKind::Binary,
        1 => CodeKind::Ternary,
        other => return Err(fmt_err(format!("unknown code kind tag {other}"))),
    };
    let m = usize_of(read_u64(&mut r)?, "item count")?;
    let l = usize_of(read_u64(&mut r)?, "code length")?;
    let lambda_x = read_f64(&mut r)?;
    if m == 0 {
        return Err(StcError::Empty("code database"));
    }
    if l == 0 {
        return Err(fmt_err("code length must be at least 1"));
    }
    let w = l.div_ceil(64);
    let words = m
        .checked_mul(w)
        .ok_or_else(|| StcError::Capacity(format!("{m} x {l} overflows")))?;
    let planes = if kind == CodeKind::Ternary { 2u64 } else { 1 };
    check_payload(&file, 31, words as u64 * planes, 8)?;
    let mut pos = Vec::with_capacity(words);
    let mut neg = Vec::with_capacity(if planes == 2 { words } else { 0 });
    for _ in 0..m {
        for _ in 0..w {
            pos.push(read_u64(&mut r)?);
        }
        if planes == 2 {
            for _ in 0..w {
                neg.push(read_u64(&mut r)?);
            }
        }
    }
    expect_eof(&mut r)?;
    EncodedDatabase::from_planes(kind, m, l, lambda_x, pos, neg)
}

fn write_varint(out: &mut impl Write, mut v: u64) -> Result<()> {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.write_all(&[byte])?;
            return Ok(());
        }
        out.write_all(&[byte | 0x80])?;
    }
}

fn read_varint(r: &mut impl Read) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let byte = read_u8(r)?;
        v |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(fmt_err("varint runs past 64 bits"))
}

fn write_postings(out: &mut impl Write, list: &[u32]) -> Result<()> {
    write_varint(out, list.len() as u64)?;
    let mut prev = 0u64;
    for (i, &id) in list.iter().enumerate() {
        let v = u64::from(id);
        write_varint(out, if i == 0 { v } else { v - prev })?;
        prev = v;
    }
    Ok(())
}

fn read_postings(r: &mut impl Read, m: usize) -> Result<Vec<u32>> {
    let count = read_varint(r)?;
    if count > m as u64 {
        return Err(fmt_err(format!("posting list of {count} entries in an index of {m} items")));
    }
    let mut list = Vec::with_capacity(count as usize);
    let mut prev = 0u64;
    for i in 0..count {
        let delta = read_varint(r)?;
        let id = if i == 0 { delta } else { prev + delta };
        if id >= m as u64 {
            return Err(fmt_err(format!("posting {id} exceeds item count {m}")));
        }
        list.push(id as u32);
        prev = id;
    }
    Ok(list)
}

pub fn write_index(path: &Path, ix: &InvertedIndex) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC_INDEX)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(ix.items() as u64).to_le_bytes())?;
    out.write_all(&(ix.code_len() as u64).to_le_bytes())?;
    for sign in [1i8, -1] {
        for j in 0..ix.code_len() {
            write_postings(&mut out, ix.postings(j, sign))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_index(path: &Path) -> Result<InvertedIndex> {
    let file = File::open(path)?;
    let mut r = BufReader::new(&file);
    expect_header(&mut r, MAGIC_INDEX)?;
    let m = usize_of(read_u64(&mut r)?, "item count")?;
    let l = usize_of(read_u64(&mut r)?, "code length")?;
    if l == 0 || l > 1 << 32 {
        return Err(fmt_err(format!("implausible code length {l}")));
    }
    let mut lists = Vec::with_capacity(2 * l);
    for _ in 0..2 * l {
        lists.push(read_postings(&mut r, m)?);
    }
    expect_eof(&mut r)?;
    let neg = lists.split_off(l);
    InvertedIndex::from_parts(m, l, lists, neg)
}

//! Binary array container shared by checkpoints and reference-library exports.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    "SRL4H"            5 bytes
//! version  u32                currently 1
//! count    u32                number of arrays
//! manifest count x { name_len u32, name utf-8, dtype u8, ndim u32, dims u64 x ndim }
//! payload  each array's elements in manifest order, row-major
//! ```
//!
//! dtype codes: 0 = f32, 1 = f64, 2 = u64. Parameters are stored as f32.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::Parameters;
use super::Scalar;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"SRL4H";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl ArrayData {
    fn code(&self) -> u8 {
        match self {
            ArrayData::F32(_) => 0,
            ArrayData::F64(_) => 1,
            ArrayData::U64(_) => 2,
        }
    }

    pub fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::F64(_) => "f64",
            ArrayData::U64(_) => "u64",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

/// Ordered collection of uniquely named arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrayFile {
    entries: Vec<NamedArray>,
}

impl ArrayFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[NamedArray] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: ArrayData) -> Result<()> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!("array `{name}`"), &[expected], &[data.len()]));
        }
        if self.get(&name).is_some() {
            return Err(Error::Format(format!("duplicate array name `{name}`")));
        }
        self.entries.push(NamedArray { name, shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str) -> Result<&NamedArray> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing array `{name}`")))
    }

    fn check_shape(entry: &NamedArray, shape: &[usize]) -> Result<()> {
        if entry.shape != shape {
            return Err(Error::shape(format!("array `{}`", entry.name), shape, &entry.shape));
        }
        Ok(())
    }

    pub fn f32(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let e = self.require(name)?;
        Self::check_shape(e, shape)?;
        match &e.data {
            ArrayData::F32(v) => Ok(v),
            other => Err(Error::Format(format!("`{name}` has dtype {}, expected f32", other.dtype()))),
        }
    }

    pub fn f64(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let e = self.require(name)?;
        Self::check_shape(e, shape)?;
        match &e.data {
            ArrayData::F64(v) => Ok(v),
            other => Err(Error::Format(format!("`{name}` has dtype {}, expected f64", other.dtype()))),
        }
    }

    pub fn u64(&self, name: &str, shape: &[usize]) -> Result<&[u64]> {
        let e = self.require(name)?;
        Self::check_shape(e, shape)?;
        match &e.data {
            ArrayData::U64(v) => Ok(v),
            other => Err(Error::Format(format!("`{name}` has dtype {}, expected u64", other.dtype()))),
        }
    }

    /// Any-shape lookup for variable-length sections.
    pub fn f64_any(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let e = self.require(name)?;
        match &e.data {
            ArrayData::F64(v) => Ok((&e.shape, v)),
            other => Err(Error::Format(format!("`{name}` has dtype {}, expected f64", other.dtype()))),
        }
    }

    /// Store every tensor of `params` as f32 under `prefix/`.
    pub fn insert_params<T: Scalar, P: Parameters<T> + ?Sized>(&mut self, prefix: &str, params: &P) -> Result<()> {
        for t in params.tensors() {
            let data = t.data.iter().map(|x| x.as_f64() as f32).collect();
            self.insert(format!("{prefix}/{}", t.name), t.shape, ArrayData::F32(data))?;
        }
        Ok(())
    }

    /// Load `prefix/` tensors into `params`, validating every shape.
    pub fn load_params<T: Scalar, P: Parameters<T> + ?Sized>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let specs: Vec<(String, Vec<usize>)> = params
            .tensors()
            .into_iter()
            .map(|t| (format!("{prefix}/{}", t.name), t.shape))
            .collect();
        let mut sources = Vec::with_capacity(specs.len());
        for (name, shape) in &specs {
            sources.push(self.f32(name, shape)?);
        }
        for (dst, src) in params.tensors_mut().into_iter().zip(sources) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = T::of(s as f64);
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("array file", e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes()).map_err(io)?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(name).map_err(io)?;
            w.write_all(&[e.data.code()]).map_err(io)?;
            w.write_all(&(e.shape.len() as u32).to_le_bytes()).map_err(io)?;
            for &d in &e.shape {
                w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
            }
        }
        for e in &self.entries {
            match &e.data {
                ArrayData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes())),
                ArrayData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes())),
                ArrayData::U64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes())),
            }
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic; not an SRL4H array file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        let mut seen = BTreeSet::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            if len > 4096 {
                return Err(Error::Format(format!("array name length {len} too large")));
            }
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("array name is not utf-8".into()))?;
            if !seen.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate array name `{name}`")));
            }
            let mut code = [0u8; 1];
            read_exact(&mut r, &mut code)?;
            let ndim = read_u32(&mut r)? as usize;
            if ndim > 8 {
                return Err(Error::Format(format!("`{name}` has {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r)? as usize);
            }
            manifest.push((name, code[0], shape));
        }
        let mut entries = Vec::with_capacity(manifest.len());
        for (name, code, shape) in manifest {
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("`{name}` shape overflows")))?;
            let data = match code {
                0 => ArrayData::F32(read_vec(&mut r, n, |b| f32::from_le_bytes(b[..4].try_into().unwrap()), 4)?),
                1 => ArrayData::F64(read_vec(&mut r, n, |b| f64::from_le_bytes(b[..8].try_into().unwrap()), 8)?),
                2 => ArrayData::U64(read_vec(&mut r, n, |b| u64::from_le_bytes(b[..8].try_into().unwrap()), 8)?),
                other => return Err(Error::Format(format!("`{name}` has unknown dtype code {other}"))),
            };
            entries.push(NamedArray { name, shape, data });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::io("array file", e))? != 0 {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Ok(ArrayFile { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        self.write_to(BufWriter::new(f))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("unexpected end of file".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_vec<R: Read, V>(r: &mut R, n: usize, f: impl Fn(&[u8]) -> V, width: usize) -> Result<Vec<V>> {
    let mut buf = vec![0u8; width * 4096];
    let mut out = Vec::with_capacity(n.min(1 << 24));
    let mut left = n;
    while left > 0 {
        let take = left.min(4096);
        let chunk = &mut buf[..take * width];
        read_exact(r, chunk)?;
        out.extend(chunk.chunks_exact(width).map(&f));
        left -= take;
    }
    Ok(out)
}

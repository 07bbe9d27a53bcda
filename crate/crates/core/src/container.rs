//! `HAVA` binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "HAVA" | version u32 = 1 | entry count u32
//! per entry: name length u16 | UTF-8 name | rank u8 | dims u32 × rank
//!            | dtype u8 (0 = f32, 1 = f64) | row-major payload
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HAVA";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::BadDtype(other)),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// One named array. Values are held as `f64`; `F32` entries are narrowed
/// on write.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub dtype: DType,
    pub values: Vec<f64>,
}

impl Entry {
    pub fn f32(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::new(name, dims, DType::F32, values)
    }

    pub fn f64(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::new(name, dims, DType::F64, values)
    }

    pub fn new(name: impl Into<String>, dims: Vec<usize>, dtype: DType, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Shape(format!("entry `{name}` has invalid dims {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "entry `{name}`: dims {dims:?} need {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            name,
            dims,
            dtype,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorContainer {
    entries: Vec<Entry>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<Entry>) -> Result<Self> {
        let mut c = Self::new();
        for e in entries {
            c.push(e)?;
        }
        Ok(c)
    }

    pub fn push(&mut self, entry: Entry) -> Result<()> {
        if self.get(&entry.name).is_some() {
            return Err(Error::DuplicateName(entry.name));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Inserts or replaces the entry with the same name.
    pub fn upsert(&mut self, entry: Entry) {
        match self.entries.iter_mut().find(|e| e.name == entry.name) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name).ok_or_else(|| Error::MissingEntry(name.to_string()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Invalid(format!("entry name too long: {} bytes", name.len())))?;
            let rank = u8::try_from(e.dims.len())
                .map_err(|_| Error::Invalid(format!("entry `{}` rank too large", e.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(rank);
            for &d in &e.dims {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Invalid(format!("entry `{}` dim too large", e.name)))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.push(e.dtype as u8);
            match e.dtype {
                DType::F32 => e
                    .values
                    .iter()
                    .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
                DType::F64 => e.values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let count = r.u32("entry count")? as usize;
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let name_len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|e| Error::Invalid(format!("entry {i} name is not UTF-8: {e}")))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(Error::DuplicateName(name));
            }
            let rank = r.take(1, "rank")?[0] as usize;
            let dims = (0..rank)
                .map(|_| r.u32("dim").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let dtype = DType::from_code(r.take(1, "dtype")?[0])?;
            let n: usize = dims.iter().product();
            let payload = r.take(n * dtype.width(), &format!("payload of `{name}`"))?;
            let values = match dtype {
                DType::F32 => payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                DType::F64 => payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            };
            entries.push(Entry::new(name, dims, dtype, values)?);
        }
        Ok(Self { entries })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn write_container(container: &TensorContainer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, container.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<TensorContainer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorContainer::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry_is_29_bytes() {
        let c = TensorContainer::from_entries(vec![Entry::f32("a", vec![2], vec![1.0, 2.0]).unwrap()]).unwrap();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 2 + 1 + 1 + 4 + 1 + 8);
        assert_eq!(&bytes[..4], b"HAVA");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..14], &[1, 0]);
        assert_eq!(bytes[14], b'a');
        assert_eq!(bytes[15], 1);
        assert_eq!(&bytes[16..20], &[2, 0, 0, 0]);
        assert_eq!(bytes[20], 0);
        assert_eq!(&bytes[21..25], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[25..29], &2.0f32.to_le_bytes());
        assert_eq!(TensorContainer::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn distinct_error_kinds() {
        let c = TensorContainer::from_entries(vec![Entry::f32("a", vec![2], vec![1.0, 2.0]).unwrap()]).unwrap();
        let good = c.to_bytes().unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(TensorContainer::from_bytes(&bad), Err(Error::BadMagic(m)) if &m == b"XAVA"));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(TensorContainer::from_bytes(&bad), Err(Error::BadVersion(2))));

        assert!(matches!(
            TensorContainer::from_bytes(&good[..good.len() - 1]),
            Err(Error::Truncated(_))
        ));

        let mut dup = c.clone();
        assert!(matches!(
            dup.push(Entry::f32("a", vec![1], vec![0.0]).unwrap()),
            Err(Error::DuplicateName(_))
        ));
        // duplicate names on disk are also rejected
        let mut twice = good.clone();
        twice[8] = 2;
        twice.extend_from_slice(&good[12..]);
        assert!(matches!(TensorContainer::from_bytes(&twice), Err(Error::DuplicateName(_))));
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(Entry::f32("a", vec![], vec![]).is_err());
        assert!(Entry::f32("a", vec![0], vec![]).is_err());
        assert!(Entry::f32("a", vec![3], vec![1.0]).is_err());
    }
}

//! Named parameter arrays and their binary persistence.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! b"PGF1" | version: u16 | count: u32 |
//!   count x ( name_len: u16 | name: utf-8 | rank: u8 | dims: u32 x rank | values: f32 x prod(dims) )
//! ```

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{ArrayView1, ArrayView2};

use super::shape::Shape;
use crate::error::{Error, Result};

pub const PGF_MAGIC: &[u8; 4] = b"PGF1";
pub const PGF_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Shape,
    pub values: Vec<f64>,
}

impl Param {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.size() {
            return Err(Error::Shape(format!(
                "parameter of shape {shape} needs {} values, got {}",
                shape.size(),
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn as_vector(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[..])
    }

    /// Views the values as `rows x (len / rows)`.
    pub fn as_matrix(&self, rows: usize) -> ArrayView2<'_, f64> {
        let cols = self.values.len() / rows;
        ArrayView2::from_shape((rows, cols), &self.values).expect("parameter matrix view")
    }
}

/// Ordered map of named parameter arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    entries: IndexMap<String, Param>,
    /// Seed the entries were initialised from; `None` for stores read from disk.
    pub rng_seed: Option<u64>,
}

impl ParameterStore {
    pub fn new(rng_seed: Option<u64>) -> Self {
        Self {
            entries: IndexMap::new(),
            rng_seed,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Parameter(format!("duplicate parameter name `{name}`")));
        }
        if param.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("parameter `{name}` has non-finite values")));
        }
        self.entries.insert(name, param);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Parameter(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Moves every entry of `other` into `self`.
    pub fn merge(&mut self, other: ParameterStore) -> Result<()> {
        for (name, param) in other.entries {
            self.insert(name, param)?;
        }
        Ok(())
    }

    /// Entries whose name starts with `prefix`, in order.
    pub fn subset(&self, prefix: &str) -> ParameterStore {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            rng_seed: self.rng_seed,
        }
    }

    pub fn total_values(&self) -> usize {
        self.entries.values().map(|p| p.values.len()).sum()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(PGF_MAGIC)?;
        w.write_all(&PGF_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, param) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u16).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&[param.shape.rank() as u8])?;
            for d in param.shape.dims() {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(param.values.len() * 4);
            for v in &param.values {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<ParameterStore> {
        let fmt_err = |what: &str| Error::Format(format!("PGF1: {what}"));
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != PGF_MAGIC {
            return Err(fmt_err("bad magic bytes"));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != PGF_VERSION {
            return Err(fmt_err(&format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(read_array(&mut r)?);
        let mut store = ParameterStore::new(None);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(read_array(&mut r)?) as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| fmt_err("name is not UTF-8"))?;
            let [rank] = read_array::<1>(&mut r)?;
            let dims = (0..rank)
                .map(|_| read_array(&mut r).map(|b| u32::from_le_bytes(b) as usize))
                .collect::<Result<Vec<_>>>()?;
            let shape = Shape::new(dims)?;
            let mut raw = vec![0u8; shape.size() * 4];
            read_exact(&mut r, &mut raw)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            store.insert(name, Param::new(shape, values)?)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| fmt_err(&e.to_string()))? != 0 {
            return Err(fmt_err("trailing bytes after last entry"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.total_values() * 4 + 64);
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ParameterStore> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&bytes[..])
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("PGF1: unexpected end of data".into()))
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout() {
        let mut store = ParameterStore::new(Some(1));
        store
            .insert("ab", Param::new(Shape::new(vec![1, 2]).unwrap(), vec![1.0, -2.0]).unwrap())
            .unwrap();
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        let mut expected = b"PGF1".to_vec();
        expected.extend_from_slice(&[1, 0]);
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&[2, 0, b'a', b'b', 2]);
        expected.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_corruption() {
        assert!(ParameterStore::read_from(&b"PGF2\x01\x00\x00\x00\x00\x00"[..]).is_err());
        assert!(ParameterStore::read_from(&b"PGF1\x01\x00\x01\x00\x00\x00"[..]).is_err());
        let empty = b"PGF1\x01\x00\x00\x00\x00\x00";
        assert!(ParameterStore::read_from(&empty[..]).unwrap().is_empty());
        let mut trailing = empty.to_vec();
        trailing.push(0);
        assert!(ParameterStore::read_from(&trailing[..]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::new(None);
        let p = Param::new(Shape::vector(1).unwrap(), vec![0.0]).unwrap();
        store.insert("x", p.clone()).unwrap();
        assert!(store.insert("x", p).is_err());
    }

    proptest! {
        #[test]
        fn f32_representable_values_round_trip(
            entries in proptest::collection::vec(
                (proptest::collection::vec(1usize..5, 1..4), any::<u32>()), 1..6)
        ) {
            let mut store = ParameterStore::new(None);
            for (i, (dims, salt)) in entries.iter().enumerate() {
                let shape = Shape::new(dims.clone()).unwrap();
                let values = (0..shape.size())
                    .map(|k| ((salt.wrapping_add(k as u32) % 2001) as f32 / 7.0 - 100.0) as f64)
                    .collect();
                store.insert(format!("layer.{i}.w"), Param::new(shape, values).unwrap()).unwrap();
            }
            let mut buf = Vec::new();
            store.write_to(&mut buf).unwrap();
            let back = ParameterStore::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back.entries, store.entries);
        }
    }
}

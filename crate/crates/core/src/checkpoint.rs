//! `TTRECV01` checkpoint container.
//!
//! Layout:
//!
//! ```text
//! 8 bytes   magic "TTRECV01"
//! 8 bytes   header length L, u64 little-endian
//! L bytes   UTF-8 JSON header (tables, arrays with dtype/shape/offset/nbytes, meta)
//! ...       array payloads, little-endian, back to back in header order
//! ```
//!
//! Offsets are relative to the first payload byte. Decoding is strict:
//! payloads must be contiguous and exactly fill the rest of the file, so
//! `encode(decode(bytes)) == bytes`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::element::{DType, Element};
use crate::error::{Error, Result};
use crate::shape::ShapePlan;
use crate::table::TtTable;

pub const MAGIC: &[u8; 8] = b"TTRECV01";

/// Largest header accepted when decoding.
pub const MAX_HEADER_LEN: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub name: String,
    pub dtype: DType,
    pub plan: ShapePlan,
    /// Names of the arrays holding cores `0..d`.
    pub cores: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub tables: Vec<TableEntry>,
    pub arrays: Vec<ArrayEntry>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_values<T: Element>(values: Vec<T>) -> Self {
        // Element is only implemented for f32 and f64
        match T::DTYPE {
            DType::F32 => ArrayData::F32(values.into_iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => ArrayData::F64(values.into_iter().map(|v| v.as_f64()).collect()),
        }
    }

    /// Values as `T`; errors if the stored dtype differs.
    pub fn to_values<T: Element>(&self) -> Result<Vec<T>> {
        if self.dtype() != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "array holds {}, requested {}",
                self.dtype().name(),
                T::DTYPE.name()
            )));
        }
        Ok(match self {
            ArrayData::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
            ArrayData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
        })
    }

    fn bit_eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ArrayData::F32(a), ArrayData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (ArrayData::F64(a), ArrayData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F32(v) => f32::extend_le_bytes(v, out),
            ArrayData::F64(v) => f64::extend_le_bytes(v, out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

/// In-memory checkpoint: TT tables, extra named arrays, string metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    tables: Vec<TableEntry>,
    arrays: Vec<NamedArray>,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tables(&self) -> &[TableEntry] {
        &self.tables
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn push_array(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        data: ArrayData,
    ) -> Result<()> {
        let name = name.into();
        if self.array(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate array '{name}'")));
        }
        let elems = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if elems != Some(data.len()) {
            return Err(Error::Checkpoint(format!(
                "array '{name}' has {} values for shape {shape:?}",
                data.len()
            )));
        }
        self.arrays.push(NamedArray { name, shape, data });
        Ok(())
    }

    pub fn push_values<T: Element>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        values: &[T],
    ) -> Result<()> {
        self.push_array(name, shape, ArrayData::from_values(values.to_vec()))
    }

    /// Typed copy of a named array.
    pub fn values<T: Element>(&self, name: &str) -> Result<Vec<T>> {
        self.array(name)
            .ok_or_else(|| Error::Checkpoint(format!("no array named '{name}'")))?
            .data
            .to_values()
    }

    pub fn push_table<T: Element>(&mut self, table: &TtTable<T>) -> Result<()> {
        let name = table.name().to_string();
        if self.tables.iter().any(|t| t.name == name) {
            return Err(Error::Checkpoint(format!("duplicate table '{name}'")));
        }
        let plan = table.plan().clone();
        let mut cores = Vec::with_capacity(plan.tt_dim());
        for (k, core) in table.cores().iter().enumerate() {
            let array_name = format!("{name}.core{k}");
            self.push_values(array_name.clone(), plan.core_shape(k).to_vec(), core)?;
            cores.push(array_name);
        }
        self.tables.push(TableEntry {
            name,
            dtype: T::DTYPE,
            plan,
            cores,
        });
        Ok(())
    }

    pub fn table<T: Element>(&self, name: &str) -> Result<TtTable<T>> {
        let entry = self
            .tables
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("no table named '{name}'")))?;
        let cores = entry
            .cores
            .iter()
            .map(|c| self.values::<T>(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(TtTable::from_cores(entry.plan.clone(), cores)?.with_name(name))
    }

    pub fn header(&self) -> Header {
        let mut offset = 0u64;
        let arrays = self
            .arrays
            .iter()
            .map(|a| {
                let nbytes = (a.data.len() * a.data.dtype().size_of()) as u64;
                let entry = ArrayEntry {
                    name: a.name.clone(),
                    dtype: a.data.dtype(),
                    shape: a.shape.clone(),
                    offset,
                    nbytes,
                };
                offset += nbytes;
                entry
            })
            .collect();
        Header {
            format: String::from_utf8_lossy(MAGIC).into_owned(),
            tables: self.tables.clone(),
            arrays,
            meta: self.meta.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let payload: usize = self
            .arrays
            .iter()
            .map(|a| a.data.len() * a.data.dtype().size_of())
            .sum();
        let mut out = Vec::with_capacity(16 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for a in &self.arrays {
            a.data.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split_header(bytes)?;
        let mut names = HashSet::new();
        let mut expected_offset = 0u64;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for a in &header.arrays {
            if !names.insert(a.name.as_str()) {
                return Err(Error::Checkpoint(format!("duplicate array '{}'", a.name)));
            }
            let elems = a
                .shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .ok_or_else(|| Error::Checkpoint(format!("array '{}' shape overflows", a.name)))?;
            let nbytes = elems
                .checked_mul(a.dtype.size_of() as u64)
                .ok_or_else(|| Error::Checkpoint(format!("array '{}' size overflows", a.name)))?;
            if nbytes != a.nbytes {
                return Err(Error::Checkpoint(format!(
                    "array '{}' declares {} bytes, shape {:?} of {} needs {nbytes}",
                    a.name,
                    a.nbytes,
                    a.shape,
                    a.dtype.name()
                )));
            }
            if a.offset != expected_offset {
                return Err(Error::Checkpoint(format!(
                    "array '{}' starts at {}, expected {expected_offset}",
                    a.name, a.offset
                )));
            }
            let end = a
                .offset
                .checked_add(a.nbytes)
                .filter(|&e| e <= payload.len() as u64)
                .ok_or_else(|| {
                    Error::Checkpoint(format!("array '{}' runs past end of file", a.name))
                })?;
            let raw = &payload[a.offset as usize..end as usize];
            let data = match a.dtype {
                DType::F32 => ArrayData::F32(f32::from_le_bytes_slice(raw)),
                DType::F64 => ArrayData::F64(f64::from_le_bytes_slice(raw)),
            };
            arrays.push(NamedArray {
                name: a.name.clone(),
                shape: a.shape.clone(),
                data,
            });
            expected_offset = end;
        }
        if expected_offset != payload.len() as u64 {
            return Err(Error::Checkpoint(format!(
                "{} trailing payload bytes",
                payload.len() as u64 - expected_offset
            )));
        }
        let ckpt = Self {
            tables: header.tables,
            arrays,
            meta: header.meta,
        };
        ckpt.check_tables()?;
        Ok(ckpt)
    }

    fn check_tables(&self) -> Result<()> {
        let mut names = HashSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Checkpoint(format!("duplicate table '{}'", t.name)));
            }
            t.plan
                .validate()
                .map_err(|e| Error::Checkpoint(format!("table '{}': {e}", t.name)))?;
            if t.cores.len() != t.plan.tt_dim() {
                return Err(Error::Checkpoint(format!(
                    "table '{}' lists {} cores for tt_dim {}",
                    t.name,
                    t.cores.len(),
                    t.plan.tt_dim()
                )));
            }
            for (k, c) in t.cores.iter().enumerate() {
                let a = self.array(c).ok_or_else(|| {
                    Error::Checkpoint(format!("table '{}' core '{c}' missing", t.name))
                })?;
                if a.shape != t.plan.core_shape(k) || a.data.dtype() != t.dtype {
                    return Err(Error::Checkpoint(format!(
                        "table '{}' core {k} has shape {:?} ({}), plan needs {:?} ({})",
                        t.name,
                        a.shape,
                        a.data.dtype().name(),
                        t.plan.core_shape(k),
                        t.dtype.name()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Bitwise equality of tables, arrays and metadata.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.tables == other.tables
            && self.meta == other.meta
            && self.arrays.len() == other.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.data.bit_eq(&b.data))
    }
}

/// Parse magic and header only; the payload is returned unparsed.
pub fn split_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 16 {
        return Err(Error::Checkpoint(format!(
            "file is {} bytes, too short",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(
            "bad magic, not a TTRECV01 checkpoint".into(),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if header_len > MAX_HEADER_LEN || header_len > (bytes.len() - 16) as u64 {
        return Err(Error::Checkpoint(format!(
            "header length {header_len} exceeds file"
        )));
    }
    let header_end = 16 + header_len as usize;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Checkpoint(format!("header JSON: {e}")))?;
    if header.format.as_bytes() != MAGIC {
        return Err(Error::Checkpoint(format!(
            "unknown format '{}'",
            header.format
        )));
    }
    Ok((header, &bytes[header_end..]))
}

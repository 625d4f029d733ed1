//! ATA tensor archive: named 4D convolution kernels plus optional topology.
//!
//! Layout:
//!
//! ```text
//! bytes 0..4        magic "ATA1"
//! bytes 4..12       u64 little-endian length J of the JSON index
//! bytes 12..12+J    UTF-8 JSON index
//! bytes 12+J..      payload: little-endian f64 values, tensors contiguous in index order
//! ```
//!
//! The index is `{"version":1,"topology":{..}|null,"tensors":[{"name","shape","offset","nbytes"}]}`
//! with shapes stored as `[I, O, H, W]` and offsets relative to the first payload byte.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ATA1";
pub const FORMAT_VERSION: u32 = 1;
pub const MAX_NAME_LEN: usize = 256;

const HEADER_LEN: usize = 12;
const ELEMENT_SIZE: usize = 8;

// ── Shapes and tensors ──────────────────────────────────────────────────────

/// Kernel extents in `[in_channels, out_channels, height, width]` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct KernelShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl KernelShape {
    #[must_use]
    pub const fn new(in_channels: usize, out_channels: usize, height: usize, width: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            height,
            width,
        }
    }

    /// Number of elements, or `None` on overflow.
    #[must_use]
    pub fn checked_len(&self) -> Option<usize> {
        self.in_channels
            .checked_mul(self.out_channels)?
            .checked_mul(self.height)?
            .checked_mul(self.width)
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.in_channels * self.out_channels * self.height * self.width
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one `(h, w)` kernel plane.
    #[must_use]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[must_use]
    pub fn as_array(&self) -> [usize; 4] {
        [self.in_channels, self.out_channels, self.height, self.width]
    }
}

impl From<[usize; 4]> for KernelShape {
    fn from([i, o, h, w]: [usize; 4]) -> Self {
        Self::new(i, o, h, w)
    }
}

impl From<KernelShape> for [usize; 4] {
    fn from(shape: KernelShape) -> Self {
        shape.as_array()
    }
}

/// One named convolution kernel, stored row-major over `[I][O][H][W]`.
#[derive(Debug, Clone)]
pub struct WeightTensor {
    name: String,
    shape: KernelShape,
    data: Vec<f64>,
}

impl WeightTensor {
    pub fn new(name: impl Into<String>, shape: KernelShape, data: Vec<f64>) -> Result<Self> {
        let tensor = Self {
            name: name.into(),
            shape,
            data,
        };
        tensor.validate()?;
        Ok(tensor)
    }

    fn validate(&self) -> Result<()> {
        let fail =
            |reason: String| Err(Error::validation(format!("tensor '{}'", self.name), reason));
        if self.name.is_empty() {
            return fail("name is empty".into());
        }
        if self.name.len() > MAX_NAME_LEN {
            return fail(format!(
                "name is {} bytes, limit is {MAX_NAME_LEN}",
                self.name.len()
            ));
        }
        let dims = self.shape.as_array();
        if dims.contains(&0) {
            return fail(format!("every extent must be at least 1, got {dims:?}"));
        }
        match self.shape.checked_len() {
            Some(n) if n == self.data.len() => {}
            Some(n) => {
                return fail(format!(
                    "shape {dims:?} needs {n} values, got {}",
                    self.data.len()
                ))
            }
            None => return fail(format!("shape {dims:?} overflows")),
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return fail(format!(
                "non-finite value {} at flat index {pos}",
                self.data[pos]
            ));
        }
        Ok(())
    }

    #[must_use]
    pub fn name(&self) -> &str {
        &self.name
    }

    #[must_use]
    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    #[must_use]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[must_use]
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat index of element `[i][o][h][w]`.
    #[must_use]
    pub fn offset(&self, i: usize, o: usize, h: usize, w: usize) -> usize {
        let s = &self.shape;
        ((i * s.out_channels + o) * s.height + h) * s.width + w
    }

    #[must_use]
    pub fn at(&self, i: usize, o: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(i, o, h, w)]
    }

    /// Filter count of the layer (the `O` extent).
    #[must_use]
    pub fn filter_count(&self) -> usize {
        self.shape.out_channels
    }
}

/// Bitwise equality: values are compared by their IEEE-754 bit patterns.
impl PartialEq for WeightTensor {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for WeightTensor {}

// ── Topology ────────────────────────────────────────────────────────────────

/// Ordered layer list; `chain` states that each layer's outputs feed the next
/// layer's inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDescriptor {
    pub layers: Vec<String>,
    pub chain: bool,
}

impl TopologyDescriptor {
    #[must_use]
    pub fn chain(layers: Vec<String>) -> Self {
        Self {
            layers,
            chain: true,
        }
    }
}

// ── Archive ─────────────────────────────────────────────────────────────────

/// An ordered set of kernels. Layer index `l` is the position in this list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorArchive {
    version: u32,
    tensors: Vec<WeightTensor>,
    topology: Option<TopologyDescriptor>,
}

impl TensorArchive {
    pub fn new(tensors: Vec<WeightTensor>, topology: Option<TopologyDescriptor>) -> Result<Self> {
        let archive = Self {
            version: FORMAT_VERSION,
            tensors,
            topology,
        };
        archive.validate()?;
        Ok(archive)
    }

    /// Re-checks every archive-level invariant. Tensor-level invariants are
    /// enforced by [`WeightTensor::new`].
    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let mut seen = HashSet::with_capacity(self.tensors.len());
        for t in &self.tensors {
            t.validate()?;
            if !seen.insert(t.name()) {
                return Err(Error::validation(
                    format!("tensor '{}'", t.name()),
                    "duplicate tensor name",
                ));
            }
        }
        if let Some(topo) = &self.topology {
            let mut shapes = Vec::with_capacity(topo.layers.len());
            for name in &topo.layers {
                let t = self.get(name).ok_or_else(|| {
                    Error::validation("topology", format!("layer '{name}' has no tensor"))
                })?;
                shapes.push((name, t.shape()));
            }
            if topo.chain {
                for pair in shapes.windows(2) {
                    let (a, sa) = pair[0];
                    let (b, sb) = pair[1];
                    if sa.out_channels != sb.in_channels {
                        return Err(Error::validation(
                            "topology",
                            format!(
                                "chain break: '{a}' has {} outputs but '{b}' has {} inputs",
                                sa.out_channels, sb.in_channels
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    #[must_use]
    pub fn version(&self) -> u32 {
        self.version
    }

    #[must_use]
    pub fn tensors(&self) -> &[WeightTensor] {
        &self.tensors
    }

    #[must_use]
    pub fn topology(&self) -> Option<&TopologyDescriptor> {
        self.topology.as_ref()
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    #[must_use]
    pub fn get(&self, name: &str) -> Option<&WeightTensor> {
        self.tensors.iter().find(|t| t.name() == name)
    }

    #[must_use]
    pub fn position(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name() == name)
    }

    /// Serializes into an in-memory ATA image.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_archive(self, &mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        parse(bytes)
    }
}

// ── Wire format ─────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    version: u32,
    topology: Option<TopologyDescriptor>,
    tensors: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    name: String,
    shape: KernelShape,
    offset: u64,
    nbytes: u64,
}

/// Writes `archive` to `sink` and returns the number of bytes written.
pub fn write_archive<W: Write>(archive: &TensorArchive, sink: &mut W) -> Result<u64> {
    archive.validate()?;

    let mut offset = 0u64;
    let entries = archive
        .tensors
        .iter()
        .map(|t| {
            let nbytes = (t.data.len() * ELEMENT_SIZE) as u64;
            let entry = IndexEntry {
                name: t.name.clone(),
                shape: t.shape,
                offset,
                nbytes,
            };
            offset += nbytes;
            entry
        })
        .collect();
    let index = Index {
        version: archive.version,
        topology: archive.topology.clone(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&index).map_err(|e| Error::Format(e.to_string()))?;

    sink.write_all(MAGIC)?;
    sink.write_all(&(json.len() as u64).to_le_bytes())?;
    sink.write_all(&json)?;
    let mut payload = Vec::with_capacity(offset as usize);
    for t in &archive.tensors {
        for v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&payload)?;
    sink.flush()?;

    Ok((HEADER_LEN + json.len()) as u64 + offset)
}

/// Reads an ATA archive from `source`, consuming it to the end.
pub fn read_archive<R: Read>(source: &mut R) -> Result<TensorArchive> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<TensorArchive> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing ATA1 magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("header shorter than 12 bytes".into()));
    }
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[4..HEADER_LEN]);
    let json_len = u64::from_le_bytes(len_bytes);
    let available = (bytes.len() - HEADER_LEN) as u64;
    if json_len > available {
        return Err(Error::Format(format!(
            "index declares {json_len} bytes but only {available} follow the header"
        )));
    }
    let payload_start = HEADER_LEN + json_len as usize;
    let index: Index = serde_json::from_slice(&bytes[HEADER_LEN..payload_start])
        .map_err(|e| Error::Format(format!("bad index: {e}")))?;
    if index.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {}",
            index.version
        )));
    }

    let payload = &bytes[payload_start..];
    let mut expected_offset = 0u64;
    for entry in &index.tensors {
        let elements = entry.shape.checked_len().ok_or_else(|| {
            Error::validation(format!("tensor '{}'", entry.name), "shape overflows")
        })?;
        if entry.nbytes != (elements * ELEMENT_SIZE) as u64 {
            return Err(Error::Format(format!(
                "tensor '{}' declares {} bytes, shape {:?} needs {}",
                entry.name,
                entry.nbytes,
                entry.shape.as_array(),
                elements * ELEMENT_SIZE
            )));
        }
        if entry.offset != expected_offset {
            return Err(Error::Format(format!(
                "tensor '{}' at offset {}, expected contiguous offset {expected_offset}",
                entry.name, entry.offset
            )));
        }
        expected_offset += entry.nbytes;
    }
    let actual = payload.len() as u64;
    if actual < expected_offset {
        return Err(Error::Length {
            expected: expected_offset,
            actual,
            missing: expected_offset - actual,
        });
    }
    if actual > expected_offset {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            actual - expected_offset
        )));
    }

    let mut tensors = Vec::with_capacity(index.tensors.len());
    for entry in index.tensors {
        let start = entry.offset as usize;
        let end = start + entry.nbytes as usize;
        let data = payload[start..end]
            .chunks_exact(ELEMENT_SIZE)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensors.push(WeightTensor::new(entry.name, entry.shape, data)?);
    }
    TensorArchive::new(tensors, index.topology)
}

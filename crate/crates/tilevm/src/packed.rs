//! Compact packed storage for low-precision elements and the `TLUS` binary
//! tensor file format.
//!
//! Element `k` occupies bit positions `[k*bits, (k+1)*bits)` of the buffer's
//! bit stream, LSB-first within each byte, so a sub-byte element may span two
//! consecutive bytes. Trailing pad bits are kept zero.

use crate::dtype::{ScalarKind, ScalarType, ScalarValue, TypeError};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PackError {
    #[error("element index {0} out of range (count {1})")]
    OutOfRange(usize, usize),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("element count {count} not divisible by group size {group}")]
    GroupSize { count: usize, group: usize },
    #[error("tensor file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A byte buffer holding `count` elements of `dtype`, packed with no bit gaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBuffer {
    dtype: ScalarType,
    count: usize,
    bytes: Vec<u8>,
}

pub fn packed_len(count: usize, bits: u8) -> usize {
    (count * bits as usize + 7) / 8
}

impl PackedBuffer {
    /// Zero-initialized buffer for `count` elements.
    pub fn zeroed(dtype: ScalarType, count: usize) -> PackedBuffer {
        PackedBuffer {
            dtype,
            count,
            bytes: vec![0u8; packed_len(count, dtype.bits())],
        }
    }

    /// Wrap existing packed bytes. Length must be exactly `ceil(count*bits/8)`.
    pub fn from_bytes(dtype: ScalarType, count: usize, bytes: Vec<u8>) -> Result<PackedBuffer, PackError> {
        let want = packed_len(count, dtype.bits());
        if bytes.len() != want {
            return Err(PackError::Format(format!(
                "payload is {} bytes, expected {want} for {count} x {dtype}",
                bytes.len()
            )));
        }
        Ok(PackedBuffer { dtype, count, bytes })
    }

    /// Pack a slice of raw codes.
    pub fn from_raws(dtype: ScalarType, raws: &[u64]) -> Result<PackedBuffer, PackError> {
        let mut buf = PackedBuffer::zeroed(dtype, raws.len());
        for (k, &raw) in raws.iter().enumerate() {
            buf.store_element(k, raw)?;
        }
        Ok(buf)
    }

    pub fn dtype(&self) -> ScalarType {
        self.dtype
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// The `bits`-wide field at logical position `k`, assembled across byte
    /// boundaries.
    pub fn load_element(&self, k: usize) -> Result<u64, PackError> {
        if k >= self.count {
            return Err(PackError::OutOfRange(k, self.count));
        }
        Ok(load_bits(&self.bytes, k * self.dtype.bits() as usize, self.dtype.bits()))
    }

    /// Overwrite the field at position `k`; all other bit positions are
    /// untouched (mask-then-OR).
    pub fn store_element(&mut self, k: usize, raw: u64) -> Result<(), PackError> {
        if k >= self.count {
            return Err(PackError::OutOfRange(k, self.count));
        }
        let bits = self.dtype.bits();
        if bits < 64 && raw >> bits != 0 {
            return Err(PackError::Type(TypeError::RawTooWide { raw, bits }));
        }
        store_bits(&mut self.bytes, k * bits as usize, bits, raw);
        Ok(())
    }

    pub fn decode_element(&self, k: usize) -> Result<ScalarValue, PackError> {
        Ok(self.dtype.decode(self.load_element(k)?)?)
    }

    /// Elementwise decode-then-encode into a new dtype; count preserved.
    pub fn cast(&self, to: ScalarType) -> Result<PackedBuffer, PackError> {
        let mut out = PackedBuffer::zeroed(to, self.count);
        for k in 0..self.count {
            let v = self.decode_element(k)?;
            out.store_element(k, to.encode(&v))?;
        }
        Ok(out)
    }

    /// Per-group symmetric dequantization: `out[k] = decode(w[k]) * scale[k/g]`.
    pub fn dequantize(&self, scales: &[f64], group_size: usize) -> Result<Vec<f64>, PackError> {
        if group_size == 0 || self.count % group_size != 0 {
            return Err(PackError::GroupSize {
                count: self.count,
                group: group_size,
            });
        }
        if scales.len() != self.count / group_size {
            return Err(PackError::GroupSize {
                count: scales.len(),
                group: self.count / group_size,
            });
        }
        (0..self.count)
            .map(|k| Ok(self.decode_element(k)?.as_f64() * scales[k / group_size]))
            .collect()
    }
}

/// Read `bits` bits starting at bit position `pos` (LSB-first stream).
pub fn load_bits(bytes: &[u8], pos: usize, bits: u8) -> u64 {
    let mut raw = 0u64;
    let mut got = 0u8;
    let mut byte = pos / 8;
    let mut bit = (pos % 8) as u8;
    while got < bits {
        let take = (8 - bit).min(bits - got);
        let chunk = (bytes[byte] >> bit) & mask8(take);
        raw |= (chunk as u64) << got;
        got += take;
        byte += 1;
        bit = 0;
    }
    raw
}

/// Write `bits` bits of `raw` at bit position `pos`, preserving neighbors.
pub fn store_bits(bytes: &mut [u8], pos: usize, bits: u8, raw: u64) {
    let mut left = bits;
    let mut val = raw;
    let mut byte = pos / 8;
    let mut bit = (pos % 8) as u8;
    while left > 0 {
        let put = (8 - bit).min(left);
        let m = mask8(put) << bit;
        bytes[byte] = (bytes[byte] & !m) | (((val as u8) << bit) & m);
        val >>= put;
        left -= put;
        byte += 1;
        bit = 0;
    }
}

fn mask8(bits: u8) -> u8 {
    if bits >= 8 {
        0xFF
    } else {
        (1u8 << bits) - 1
    }
}

/// An in-memory tensor: packed payload plus logical dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: PackedBuffer,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: PackedBuffer) -> Result<Tensor, PackError> {
        let n: usize = dims.iter().product();
        if n != data.count() {
            return Err(PackError::Format(format!(
                "dims {dims:?} imply {n} elements, payload holds {}",
                data.count()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn dtype(&self) -> ScalarType {
        self.data.dtype()
    }
}

const TLUS_MAGIC: &[u8; 4] = b"TLUS";
const TLUS_VERSION: u16 = 1;

fn kind_code(k: ScalarKind) -> u8 {
    match k {
        ScalarKind::UInt => 0,
        ScalarKind::Int => 1,
        ScalarKind::Float => 2,
    }
}

/// Write a tensor in the `TLUS` binary format: magic, version u16, dtype code
/// (kind u8, bits u8, exp u8, man u8), rank u8, dims as u64s, packed payload;
/// little-endian throughout.
pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<(), PackError> {
    let dt = t.dtype();
    w.write_all(TLUS_MAGIC)?;
    w.write_all(&TLUS_VERSION.to_le_bytes())?;
    w.write_all(&[
        kind_code(dt.kind()),
        dt.bits(),
        dt.exponent_bits(),
        dt.mantissa_bits(),
        t.dims.len() as u8,
    ])?;
    for &d in &t.dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(t.data.bytes())?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor, PackError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TLUS_MAGIC {
        return Err(PackError::Format(format!("bad magic {magic:?}")));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != TLUS_VERSION {
        return Err(PackError::Format(format!("unsupported version {version}")));
    }
    let mut head = [0u8; 5];
    r.read_exact(&mut head)?;
    let [kind, bits, exp, man, rank] = head;
    let dtype = match kind {
        0 => ScalarType::uint(bits)?,
        1 => ScalarType::int(bits)?,
        2 => {
            let t = ScalarType::float(exp, man)?;
            if t.bits() != bits {
                return Err(PackError::Format(format!(
                    "float width {bits} inconsistent with e{exp}m{man}"
                )));
            }
            t
        }
        k => return Err(PackError::Format(format!("unknown dtype kind {k}"))),
    };
    let mut dims = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let mut d = [0u8; 8];
        r.read_exact(&mut d)?;
        dims.push(u64::from_le_bytes(d) as usize);
    }
    let count: usize = dims.iter().product();
    let mut payload = vec![0u8; packed_len(count, dtype.bits())];
    r.read_exact(&mut payload)?;
    Ok(Tensor {
        dims,
        data: PackedBuffer::from_bytes(dtype, count, payload)?,
    })
}

pub fn write_tensor_file(path: &std::path::Path, t: &Tensor) -> Result<(), PackError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t)
}

pub fn read_tensor_file(path: &std::path::Path) -> Result<Tensor, PackError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}

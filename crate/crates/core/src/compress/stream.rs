//! Per-tensor symbol streams.
//!
//! Each tensor is written as a mode byte, its `max_abs` as `f32`, and then
//! either nothing (all symbols zero), the symbols bit-packed at the tensor's
//! width, or a histogram followed by a range-coded stream, whichever of the
//! last two is shorter.

use super::quant::{QuantSpec, QuantizedTensor};
use super::range::{Decoder, Encoder, FreqTable};
use crate::error::{Error, Result};

const MODE_ZERO: u8 = 0;
const MODE_RAW: u8 = 1;
const MODE_CODED: u8 = 2;

fn truncated() -> Error {
    Error::Integrity("symbol stream truncated".into())
}

pub(crate) fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(truncated)?;
        self.pos += n;
        Ok(s)
    }

    pub fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.take(1)?[0];
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::Integrity("varint overflow".into()))
    }

    pub fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Range-codes `symbols` (indices into `freqs`).
pub fn encode_symbols(symbols: &[usize], freqs: &[u32]) -> Result<Vec<u8>> {
    let table = FreqTable::new(freqs)?;
    let mut enc = Encoder::new();
    for &s in symbols {
        if s >= table.len() {
            return Err(Error::Domain(format!("symbol {s} outside alphabet of {}", table.len())));
        }
        enc.encode(&table, s)?;
    }
    Ok(enc.finish())
}

pub fn decode_symbols(bytes: &[u8], freqs: &[u32], n: usize) -> Result<Vec<usize>> {
    let table = FreqTable::new(freqs).map_err(|e| Error::Integrity(e.to_string()))?;
    let mut dec = Decoder::new(bytes);
    let out = (0..n).map(|_| dec.decode(&table)).collect::<Result<Vec<_>>>()?;
    if !dec.consumed_within_input() {
        return Err(truncated());
    }
    Ok(out)
}

fn pack(values: &[usize], bits: u32) -> Vec<u8> {
    let mut out = vec![0u8; (values.len() * bits as usize).div_ceil(8)];
    let mut pos = 0usize;
    for &v in values {
        for b in 0..bits as usize {
            if (v >> b) & 1 == 1 {
                out[(pos + b) / 8] |= 1 << ((pos + b) % 8);
            }
        }
        pos += bits as usize;
    }
    out
}

fn unpack(bytes: &[u8], bits: u32, n: usize) -> Vec<usize> {
    (0..n)
        .map(|i| {
            let pos = i * bits as usize;
            (0..bits as usize).fold(0usize, |acc, b| {
                let bit = (bytes[(pos + b) / 8] >> ((pos + b) % 8)) & 1;
                acc | ((bit as usize) << b)
            })
        })
        .collect()
}

fn offsets(t: &QuantizedTensor) -> Result<Vec<usize>> {
    let q = QuantSpec::new(t.bits)?.qmax();
    t.symbols
        .iter()
        .map(|&s| {
            if s.abs() > q {
                Err(Error::Domain(format!("symbol {s} outside ±{q} for {} bits", t.bits)))
            } else {
                Ok((s + q) as usize)
            }
        })
        .collect()
}

fn encode_tensor(t: &QuantizedTensor, out: &mut Vec<u8>) -> Result<()> {
    let n: usize = t.shape.iter().product();
    if n != t.symbols.len() {
        return Err(Error::shape(format!("{} symbols for shape {:?}", t.symbols.len(), t.shape)));
    }
    let u = offsets(t)?;
    let q = t.spec().qmax() as usize;
    if u.iter().all(|&v| v == q) {
        out.push(MODE_ZERO);
        out.extend_from_slice(&t.max_abs.to_le_bytes());
        return Ok(());
    }
    let lo = *u.iter().min().expect("nonempty");
    let hi = *u.iter().max().expect("nonempty");
    let mut counts = vec![0u64; hi - lo + 1];
    for &v in &u {
        counts[v - lo] += 1;
    }
    let freqs = FreqTable::rescale(&counts);
    let shifted: Vec<usize> = u.iter().map(|&v| v - lo).collect();
    let body = encode_symbols(&shifted, &freqs)?;
    let mut coded = Vec::new();
    put_varint(&mut coded, lo as u64);
    put_varint(&mut coded, freqs.len() as u64);
    for &f in &freqs {
        put_varint(&mut coded, f as u64);
    }
    put_varint(&mut coded, body.len() as u64);
    coded.extend_from_slice(&body);
    let raw = pack(&u, t.bits);
    if coded.len() < raw.len() {
        out.push(MODE_CODED);
        out.extend_from_slice(&t.max_abs.to_le_bytes());
        out.extend_from_slice(&coded);
    } else {
        out.push(MODE_RAW);
        out.extend_from_slice(&t.max_abs.to_le_bytes());
        out.extend_from_slice(&raw);
    }
    Ok(())
}

/// Serializes each tensor's symbols. Shapes and widths are not stored; the
/// reader supplies them.
pub fn entropy_encode(tensors: &[QuantizedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for t in tensors {
        encode_tensor(t, &mut out)?;
    }
    Ok(out)
}

/// Inverse of [`entropy_encode`] for tensors of the given shapes and widths.
pub fn entropy_decode(bytes: &[u8], layout: &[(Vec<usize>, u32)]) -> Result<Vec<QuantizedTensor>> {
    let mut r = Reader::new(bytes);
    let mut out = Vec::with_capacity(layout.len());
    for (shape, bits) in layout {
        let spec = QuantSpec::new(*bits)?;
        let q = spec.qmax() as usize;
        let n: usize = shape.iter().product();
        let mode = r.take(1)?[0];
        let max_abs = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        let u = match mode {
            MODE_ZERO => vec![q; n],
            MODE_RAW => unpack(r.take((n * *bits as usize).div_ceil(8))?, *bits, n),
            MODE_CODED => {
                let lo = r.varint()? as usize;
                let k = r.varint()? as usize;
                if k == 0 || lo + k > spec.alphabet() {
                    return Err(Error::Integrity("histogram outside the symbol alphabet".into()));
                }
                let freqs = (0..k)
                    .map(|_| r.varint().map(|f| f.min(u32::MAX as u64) as u32))
                    .collect::<Result<Vec<_>>>()?;
                let len = r.varint()? as usize;
                let body = r.take(len)?;
                decode_symbols(body, &freqs, n)?.into_iter().map(|s| s + lo).collect()
            }
            m => return Err(Error::Integrity(format!("unknown stream mode {m}"))),
        };
        if u.iter().any(|&v| v > 2 * q) {
            return Err(Error::Integrity("decoded symbol outside the alphabet".into()));
        }
        out.push(QuantizedTensor {
            shape: shape.clone(),
            bits: *bits,
            max_abs,
            symbols: u.into_iter().map(|v| v as i32 - q as i32).collect(),
        });
    }
    if !r.done() {
        return Err(Error::Integrity("trailing bytes after the last tensor".into()));
    }
    Ok(out)
}

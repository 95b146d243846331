//! The `VQB1` container shared by tokenizer and policy checkpoints.
//!
//! ```text
//! "VQB1" | version u16 | tag [u8; 4] | payload_len u32 | payload | crc32 u32
//! ```
//!
//! The CRC covers every byte before it.

use crate::codec::{expect_magic, verify_crc, ByteReader, ByteWriter};
use crate::error::FormatError;
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VQB1";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_envelope(tag: [u8; 4], payload: &[u8]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(&CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.bytes(&tag);
    w.u32(payload.len() as u32);
    w.bytes(payload);
    w.finish_with_crc()
}

/// Validates the envelope and returns the payload.
pub fn read_envelope(bytes: &[u8], tag: [u8; 4]) -> Result<&[u8], FormatError> {
    let mut r = ByteReader::new(bytes);
    expect_magic(&mut r, CHECKPOINT_MAGIC)?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version { expected: CHECKPOINT_VERSION, found: version });
    }
    let found = r.array4()?;
    if found != tag {
        return Err(FormatError::Section { expected: tag, found });
    }
    let len = r.u32()? as usize;
    let needed = r.position().saturating_add(len).saturating_add(4);
    if needed > bytes.len() {
        return Err(FormatError::Truncated { needed, available: bytes.len() });
    }
    if needed < bytes.len() {
        return Err(FormatError::Invalid(format!("{} trailing bytes", bytes.len() - needed)));
    }
    verify_crc(bytes)?;
    r.take(len)
}

/// Writes every parameter as `name | rank u8 | dims u32.. | f32 data`.
pub fn write_params(w: &mut ByteWriter, params: &ParamStore) {
    w.u32(params.len() as u32);
    for p in params.iter() {
        w.str(&p.name);
        w.u8(p.tensor.shape().len() as u8);
        for &d in p.tensor.shape() {
            w.u32(d as u32);
        }
        w.f32s(p.tensor.data().iter().map(|&v| v as f32));
    }
}

/// Reads parameters into a store built from the same config, checking
/// that names and shapes line up one for one.
pub fn read_params_into(r: &mut ByteReader<'_>, params: &mut ParamStore) -> Result<(), FormatError> {
    let count = r.u32()? as usize;
    if count != params.len() {
        return Err(FormatError::Invalid(format!("checkpoint has {count} tensors, model expects {}", params.len())));
    }
    for p in params.iter_mut() {
        let name = r.str()?;
        if name != p.name {
            return Err(FormatError::Invalid(format!("expected tensor {:?}, found {name:?}", p.name)));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape != p.tensor.shape() {
            return Err(FormatError::Invalid(format!("tensor {name}: shape {shape:?}, expected {:?}", p.tensor.shape())));
        }
        let data = r.f32s(p.tensor.numel())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::Invalid(format!("tensor {name}: non-finite value")));
        }
        let requires_grad = p.tensor.requires_grad;
        p.tensor = Tensor::new(&shape, data.into_iter().map(f64::from).collect()).map_err(|e| FormatError::Invalid(e.to_string()))?;
        p.tensor.requires_grad = requires_grad;
    }
    Ok(())
}

/// Floats needed to store every parameter of a store; used to reject
/// headers that promise more data than the file holds.
pub fn expected_floats(widths: &[(usize, usize)]) -> Option<usize> {
    widths.iter().try_fold(0usize, |acc, &(i, o)| acc.checked_add(i.checked_mul(o)?.checked_add(o)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn envelope_round_trip() {
        let bytes = write_envelope(*b"TEST", b"payload");
        assert_eq!(&bytes[..4], b"VQB1");
        assert_eq!(read_envelope(&bytes, *b"TEST").unwrap(), b"payload");
    }

    #[test]
    fn envelope_errors() {
        let bytes = write_envelope(*b"TEST", b"payload");
        assert!(matches!(read_envelope(&bytes, *b"OTHR"), Err(FormatError::Section { .. })));
        assert!(matches!(read_envelope(&bytes[..bytes.len() - 1], *b"TEST"), Err(FormatError::Truncated { .. })));
        let mut flipped = bytes.clone();
        flipped[15] ^= 4;
        assert!(matches!(read_envelope(&flipped, *b"TEST"), Err(FormatError::Crc { .. })));
        let mut version = bytes;
        version[4] = 2;
        assert!(matches!(read_envelope(&version, *b"TEST"), Err(FormatError::Version { .. })));
    }

    #[test]
    fn params_round_trip_at_f32() {
        let mut rng = SeededRng::new(0);
        let mut store = ParamStore::new();
        store.add("a", Tensor::new(&[2, 3], (0..6).map(|_| rng.normal()).collect()).unwrap(), true);
        store.add("b", Tensor::vector(&[0.25, -1.5]), false);
        let mut w = ByteWriter::new();
        write_params(&mut w, &store);
        let bytes = w.into_inner();
        let mut back = store.clone();
        for p in back.iter_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        read_params_into(&mut ByteReader::new(&bytes), &mut back).unwrap();
        for (p, q) in store.iter().zip(back.iter()) {
            for (x, y) in p.tensor.data().iter().zip(q.tensor.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn mismatched_shape_rejected() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(&[2, 2]), true);
        let mut w = ByteWriter::new();
        write_params(&mut w, &store);
        let bytes = w.into_inner();
        let mut other = ParamStore::new();
        other.add("a", Tensor::zeros(&[4, 1]), true);
        assert!(read_params_into(&mut ByteReader::new(&bytes), &mut other).is_err());
    }
}

//! Binary parameter checkpoints.
//!
//! Layout (little-endian): the 8-byte magic, a `u32` parameter count, then per
//! parameter: `u32` name length, UTF-8 name, `u32` rank, `u64` dims, `f64`
//! values, `f64` AdaGrad accumulators, and a `u8` flag followed by one byte
//! per entry when a trainable mask is present. Floats are stored by bit
//! pattern so a round trip is exact.

use std::io::{Read, Write};

use super::{GraphError, Param, ParamStore, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DCRSCKP1";

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.params() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for &d in &p.shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.iter().chain(&p.accum) {
            out.write_all(&v.to_bits().to_le_bytes())?;
        }
        match &p.trainable {
            None => out.write_all(&[0])?,
            Some(mask) => {
                out.write_all(&[1])?;
                let bytes: Vec<u8> = mask.iter().map(|&m| m as u8).collect();
                out.write_all(&bytes)?;
            }
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamStore> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(GraphError::Checkpoint("bad magic".into()));
    }
    let count = read_u32(&mut input)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| GraphError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut input)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let value = read_f64s(&mut input, n)?;
        let accum = read_f64s(&mut input, n)?;
        let mut flag = [0u8; 1];
        input.read_exact(&mut flag)?;
        let trainable = match flag[0] {
            0 => None,
            1 => {
                let mut bytes = vec![0u8; n];
                input.read_exact(&mut bytes)?;
                Some(bytes.into_iter().map(|b| b != 0).collect())
            }
            other => {
                return Err(GraphError::Checkpoint(format!(
                    "bad mask flag {other} for `{name}`"
                )))
            }
        };
        store.push_raw(Param {
            name,
            shape,
            value,
            grad: vec![0.0; n],
            accum,
            trainable,
        })?;
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(GraphError::Checkpoint("trailing bytes after last parameter".into()));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Tensor;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            vals in proptest::collection::vec(proptest::num::f64::ANY, 1..40),
            acc in proptest::num::f64::POSITIVE,
            masked in any::<bool>(),
        ) {
            let mut s = ParamStore::new();
            let n = vals.len();
            let a = s.add("emb", Tensor::new(vec![n, 1], vals.clone())).unwrap();
            s.get_mut(a).accum = vec![acc; n];
            if masked {
                s.freeze_entries(a, [0]);
            }
            s.add("w", Tensor::scalar(-0.0)).unwrap();
            let mut bytes = Vec::new();
            write_checkpoint(&s, &mut bytes).unwrap();
            let back = read_checkpoint(bytes.as_slice()).unwrap();
            prop_assert_eq!(back.len(), 2);
            for (p, q) in s.params().iter().zip(back.params()) {
                prop_assert_eq!(&p.name, &q.name);
                prop_assert_eq!(&p.shape, &q.shape);
                let pb: Vec<u64> = p.value.iter().map(|v| v.to_bits()).collect();
                let qb: Vec<u64> = q.value.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(pb, qb);
                prop_assert_eq!(&p.accum, &q.accum);
                prop_assert_eq!(&p.trainable, &q.trainable);
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_checkpoint(&b"NOTACKPT\0\0\0\0"[..]).is_err());
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(1.0)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&s, &mut bytes).unwrap();
        bytes.pop();
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }
}

//! `CVWT` weight checkpoints.
//!
//! Layout (little endian): magic `b"CVWT"`, `u32` version, `u32` config
//! length + JSON config, `u32` tensor count, then per tensor `u32` name
//! length + UTF-8 name, `u8` dtype code, `u32` rank, `u32` dims and the
//! payload. Only dtype 1 (`f64`) is written, so round trips are bit-exact.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;

pub const CVWT_MAGIC: &[u8; 4] = b"CVWT";
pub const CVWT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const DTYPE_F32: u8 = 2;
const MAX_NAME: usize = 1 << 12;
const MAX_RANK: usize = 8;
const MAX_ELEMS: usize = 1 << 28;

fn bad(msg: impl Into<String>) -> Error {
    Error::Format { format: "CVWT", msg: msg.into() }
}

pub fn write_checkpoint<C: Serialize>(mut w: impl Write, config: &C, params: &ParamSet) -> Result<()> {
    let cfg = serde_json::to_vec(config).map_err(|e| bad(format!("config: {e}")))?;
    w.write_all(CVWT_MAGIC)?;
    w.write_all(&CVWT_VERSION.to_le_bytes())?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[DTYPE_F64])?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(8 * t.len());
        t.values().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(format!("{what}: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(bad(format!("{what}: truncated ({} of {n} bytes)", buf.len())));
    }
    Ok(buf)
}

pub fn read_checkpoint<C: DeserializeOwned>(mut r: impl Read) -> Result<(C, ParamSet)> {
    let magic = read_bytes(&mut r, 4, "magic")?;
    if magic != CVWT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r, "version")?;
    if version != CVWT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = read_u32(&mut r, "config length")? as usize;
    if n > 1 << 20 {
        return Err(bad("config record too large"));
    }
    let cfg: C = serde_json::from_slice(&read_bytes(&mut r, n, "config")?).map_err(|e| bad(format!("config: {e}")))?;
    let count = read_u32(&mut r, "tensor count")?;
    let mut params = ParamSet::new();
    for i in 0..count {
        let len = read_u32(&mut r, "name length")? as usize;
        if len > MAX_NAME {
            return Err(bad(format!("tensor {i}: name too long")));
        }
        let name = String::from_utf8(read_bytes(&mut r, len, "name")?).map_err(|_| bad("name is not UTF-8"))?;
        let dtype = read_bytes(&mut r, 1, "dtype")?[0];
        let rank = read_u32(&mut r, "rank")? as usize;
        if rank > MAX_RANK {
            return Err(bad(format!("{name}: rank {rank} too large")));
        }
        let dims = (0..rank).map(|_| read_u32(&mut r, "dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= MAX_ELEMS)
            .ok_or_else(|| bad(format!("{name}: too many elements")))?;
        let values: Vec<f64> = match dtype {
            DTYPE_F64 => read_bytes(&mut r, 8 * numel, &name)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DTYPE_F32 => read_bytes(&mut r, 4 * numel, &name)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            other => return Err(bad(format!("{name}: unknown dtype code {other}"))),
        };
        if params.index_of(&name).is_some() {
            return Err(bad(format!("duplicate tensor {name}")));
        }
        params.push(name, Tensor::new(dims, values)?);
    }
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn round_trip_bit_exact() {
        let mut rng = seeded(2);
        let mut p = ParamSet::new();
        p.push("a", Tensor::randn([3, 4], 1.0, &mut rng));
        p.push("b.c", Tensor::from_vec(vec![f64::MIN_POSITIVE, -0.0, 1e300]));
        p.push("s", Tensor::scalar(0.1));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &vec![1u32, 2], &p).unwrap();
        let (cfg, back): (Vec<u32>, ParamSet) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(cfg, vec![1, 2]);
        assert_eq!(back, p);
        for cut in [0, 3, 7, 20, buf.len() - 1] {
            assert!(read_checkpoint::<Vec<u32>>(&buf[..cut]).is_err(), "cut {cut}");
        }
        let mut wrong = buf.clone();
        wrong[4] = 9;
        assert!(read_checkpoint::<Vec<u32>>(&wrong[..]).is_err());
    }
}

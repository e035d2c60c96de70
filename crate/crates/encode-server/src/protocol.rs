//! `CVFB` framing.
//!
//! Every frame starts with `b"CVFB"`, version `0x01` and an op code.
//!
//! | op     | body                                                           |
//! |--------|----------------------------------------------------------------|
//! | `0x01` | step `u64`, rank `u32`                                         |
//! | `0x81` | step `u64`, rank `u32`, bucket `u16`, tensor count `u8`, tensors |
//! | `0xFF` | code `u16`, message length `u16`, UTF-8 message                |
//!
//! A tensor is name length `u8`, name, dtype `u8` (`0x00` f32, `0x01` u32),
//! rank `u8`, `rank` dims as `u32`, then the little-endian payload. A batch
//! carries exactly `latents` (f32, rank 5), `text_emb` (f32, rank 2) and
//! `sample_ids` (u32, rank 1) with a shared leading batch dimension; f32
//! payloads must be finite.

use vidgen_core::Tensor;

pub const MAGIC: &[u8; 4] = b"CVFB";
pub const VERSION: u8 = 0x01;
pub const OP_REQUEST: u8 = 0x01;
pub const OP_BATCH: u8 = 0x81;
pub const OP_ERROR: u8 = 0xFF;
pub const DTYPE_F32: u8 = 0x00;
pub const DTYPE_U32: u8 = 0x01;
pub const MAX_RANK: usize = 8;
pub const MAX_ELEMENTS: usize = 1 << 26;

pub const ERR_BAD_REQUEST: u16 = 1;
pub const ERR_UNKNOWN_RANK: u16 = 2;
pub const ERR_UNKNOWN_BUCKET: u16 = 3;
pub const ERR_INTERNAL: u16 = 4;

/// Features for one `(step, rank)`. Tensor values are exactly representable
/// in f32 so the wire round trip is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    pub step: u64,
    pub rank: u32,
    pub bucket: u16,
    /// `[B, T', 16, H', W']`
    pub latents: Tensor,
    /// `[B, D]`
    pub text_emb: Tensor,
    pub sample_ids: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Request { step: u64, rank: u32 },
    Batch(FeatureBatch),
    Error { code: u16, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProtocolErrorKind {
    /// More bytes are needed; `offset` is where the frame ran out.
    Truncated,
    BadMagic,
    BadVersion(u8),
    UnknownOp(u8),
    UnknownDtype(u8),
    TooLarge,
    BadUtf8,
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("protocol error at byte {offset}: {kind:?}")]
pub struct ProtocolError {
    pub offset: usize,
    pub kind: ProtocolErrorKind,
}

impl ProtocolError {
    pub fn is_truncated(&self) -> bool {
        self.kind == ProtocolErrorKind::Truncated
    }
}

/// Rounds every value to the nearest f32.
pub fn to_f32_grid(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.values().iter().map(|&v| v as f32 as f64).collect()).expect("same shape")
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dtype: u8, dims: &[usize], payload: impl Iterator<Item = [u8; 4]>) {
    out.push(name.len() as u8);
    out.extend_from_slice(name.as_bytes());
    out.push(dtype);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for b in payload {
        out.extend_from_slice(&b);
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    match msg {
        Message::Request { step, rank } => {
            out.push(OP_REQUEST);
            out.extend_from_slice(&step.to_le_bytes());
            out.extend_from_slice(&rank.to_le_bytes());
        }
        Message::Batch(b) => {
            out.push(OP_BATCH);
            out.extend_from_slice(&b.step.to_le_bytes());
            out.extend_from_slice(&b.rank.to_le_bytes());
            out.extend_from_slice(&b.bucket.to_le_bytes());
            out.push(3);
            for (name, t) in [("latents", &b.latents), ("text_emb", &b.text_emb)] {
                put_tensor(&mut out, name, DTYPE_F32, t.shape(), t.values().iter().map(|&v| (v as f32).to_le_bytes()));
            }
            put_tensor(&mut out, "sample_ids", DTYPE_U32, &[b.sample_ids.len()], b.sample_ids.iter().map(|v| v.to_le_bytes()));
        }
        Message::Error { code, message } => {
            out.push(OP_ERROR);
            out.extend_from_slice(&code.to_le_bytes());
            let m = truncate_utf8(message, u16::MAX as usize);
            out.extend_from_slice(&(m.len() as u16).to_le_bytes());
            out.extend_from_slice(m.as_bytes());
        }
    }
    out
}

fn truncate_utf8(s: &str, max: usize) -> &str {
    let mut end = s.len().min(max);
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, kind: ProtocolErrorKind) -> ProtocolError {
        ProtocolError { offset: self.pos, kind }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.buf.len() - self.pos < n {
            return Err(ProtocolError { offset: self.buf.len(), kind: ProtocolErrorKind::Truncated });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

enum Payload {
    F32(Vec<f64>),
    U32(Vec<u32>),
}

struct RawTensor {
    name: String,
    offset: usize,
    dims: Vec<usize>,
    payload: Payload,
}

fn read_tensor(c: &mut Cursor) -> Result<RawTensor, ProtocolError> {
    let offset = c.pos;
    let name_len = c.u8()? as usize;
    let name_at = c.pos;
    let name = std::str::from_utf8(c.take(name_len)?)
        .map_err(|_| ProtocolError { offset: name_at, kind: ProtocolErrorKind::BadUtf8 })?
        .to_owned();
    let dtype_at = c.pos;
    let dtype = c.u8()?;
    if dtype != DTYPE_F32 && dtype != DTYPE_U32 {
        return Err(ProtocolError { offset: dtype_at, kind: ProtocolErrorKind::UnknownDtype(dtype) });
    }
    let rank_at = c.pos;
    let rank = c.u8()? as usize;
    if rank > MAX_RANK {
        return Err(ProtocolError { offset: rank_at, kind: ProtocolErrorKind::TooLarge });
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(c.u32()? as usize);
    }
    let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).filter(|&n| n <= MAX_ELEMENTS);
    let n = n.ok_or(ProtocolError { offset: rank_at, kind: ProtocolErrorKind::TooLarge })?;
    let payload_at = c.pos;
    let bytes = c.take(4 * n)?;
    let words = bytes.chunks_exact(4).map(|w| <[u8; 4]>::try_from(w).unwrap());
    let payload = if dtype == DTYPE_F32 {
        let v: Vec<f64> = words.map(|w| f32::from_le_bytes(w) as f64).collect();
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(invalid(payload_at + 4 * i, format!("non-finite value in {name}")));
        }
        Payload::F32(v)
    } else {
        Payload::U32(words.map(u32::from_le_bytes).collect())
    };
    Ok(RawTensor { name, offset, dims, payload })
}

fn invalid(offset: usize, msg: impl Into<String>) -> ProtocolError {
    ProtocolError { offset, kind: ProtocolErrorKind::Invalid(msg.into()) }
}

fn read_batch(c: &mut Cursor) -> Result<FeatureBatch, ProtocolError> {
    let step = c.u64()?;
    let rank = c.u32()?;
    let bucket = c.u16()?;
    let count_at = c.pos;
    let count = c.u8()?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        tensors.push(read_tensor(c)?);
    }
    let (mut latents, mut text_emb, mut ids) = (None, None, None);
    for t in tensors {
        let slot_taken = |at: usize| invalid(at, format!("duplicate tensor {}", t.name));
        match (t.name.as_str(), t.payload) {
            ("latents", Payload::F32(v)) if t.dims.len() == 5 => {
                if latents.is_some() {
                    return Err(slot_taken(t.offset));
                }
                latents = Some(Tensor::new(t.dims, v).expect("element count checked"));
            }
            ("text_emb", Payload::F32(v)) if t.dims.len() == 2 => {
                if text_emb.is_some() {
                    return Err(slot_taken(t.offset));
                }
                text_emb = Some(Tensor::new(t.dims, v).expect("element count checked"));
            }
            ("sample_ids", Payload::U32(v)) if t.dims.len() == 1 => {
                if ids.is_some() {
                    return Err(slot_taken(t.offset));
                }
                ids = Some(v);
            }
            (name, _) => return Err(invalid(t.offset, format!("unexpected tensor {name:?} or wrong dtype/rank"))),
        }
    }
    match (latents, text_emb, ids) {
        (Some(latents), Some(text_emb), Some(sample_ids)) => {
            let b = sample_ids.len();
            if latents.shape()[0] != b || text_emb.shape()[0] != b {
                return Err(invalid(count_at, "batch dimension differs between tensors"));
            }
            Ok(FeatureBatch { step, rank, bucket, latents, text_emb, sample_ids })
        }
        _ => Err(invalid(count_at, "batch is missing a tensor")),
    }
}

/// Parses one frame from the front of `buf`, returning it and the number
/// of bytes consumed.
pub fn decode(buf: &[u8]) -> Result<(Message, usize), ProtocolError> {
    let mut c = Cursor { buf, pos: 0 };
    let magic = c.take(4)?;
    if magic != MAGIC {
        return Err(ProtocolError { offset: 0, kind: ProtocolErrorKind::BadMagic });
    }
    let v = c.u8()?;
    if v != VERSION {
        return Err(ProtocolError { offset: 4, kind: ProtocolErrorKind::BadVersion(v) });
    }
    let op = c.u8()?;
    let msg = match op {
        OP_REQUEST => Message::Request { step: c.u64()?, rank: c.u32()? },
        OP_BATCH => Message::Batch(read_batch(&mut c)?),
        OP_ERROR => {
            let code = c.u16()?;
            let len = c.u16()? as usize;
            let at = c.pos;
            let text = std::str::from_utf8(c.take(len)?).map_err(|_| c.err(ProtocolErrorKind::BadUtf8)).map_err(|mut e| {
                e.offset = at;
                e
            })?;
            Message::Error { code, message: text.to_owned() }
        }
        other => return Err(ProtocolError { offset: 5, kind: ProtocolErrorKind::UnknownOp(other) }),
    };
    Ok((msg, c.pos))
}

/// Reads exactly one frame from a byte stream. A stream that ends inside
/// a frame is a truncation error; no partial message is returned.
pub fn read_message(r: &mut impl std::io::Read) -> crate::Result<Message> {
    let mut buf: Vec<u8> = Vec::new();
    let mut chunk = [0u8; 16 * 1024];
    loop {
        match decode(&buf) {
            Ok((msg, used)) => {
                debug_assert_eq!(used, buf.len());
                return Ok(msg);
            }
            Err(e) if e.is_truncated() => {}
            Err(e) => return Err(e.into()),
        }
        // never read past the current frame: one request in flight per connection
        let want = needed_hint(&buf).min(chunk.len());
        let n = match r.read(&mut chunk[..want]) {
            Ok(n) => n,
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                return Err(crate::Error::Timeout)
            }
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) if e.kind() == std::io::ErrorKind::ConnectionReset => return Err(crate::Error::Closed),
            Err(e) => return Err(e.into()),
        };
        if n == 0 {
            if buf.is_empty() {
                return Err(crate::Error::Closed);
            }
            return Err(ProtocolError { offset: buf.len(), kind: ProtocolErrorKind::Truncated }.into());
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

/// Lower bound on the bytes still missing from a truncated frame (at least 1).
fn needed_hint(buf: &[u8]) -> usize {
    match decode_len(buf) {
        Some(total) if total > buf.len() => total - buf.len(),
        _ => 1,
    }
}

/// Length of the frame at the front of `buf` if it can be determined
/// from the bytes present.
fn decode_len(buf: &[u8]) -> Option<usize> {
    if buf.len() < 6 {
        return Some(6);
    }
    match buf[5] {
        OP_REQUEST => Some(6 + 12),
        OP_ERROR => {
            if buf.len() < 10 {
                Some(10)
            } else {
                Some(10 + u16::from_le_bytes([buf[8], buf[9]]) as usize)
            }
        }
        OP_BATCH => {
            let mut pos = 6 + 8 + 4 + 2;
            let count = *buf.get(pos)?;
            pos += 1;
            for _ in 0..count {
                let name_len = *buf.get(pos)? as usize;
                pos += 1 + name_len + 1;
                let rank = *buf.get(pos)? as usize;
                pos += 1;
                let mut n = 1usize;
                for i in 0..rank.min(MAX_RANK) {
                    let d = buf.get(pos + 4 * i..pos + 4 * i + 4)?;
                    n = n.saturating_mul(u32::from_le_bytes(d.try_into().unwrap()) as usize);
                }
                if buf.len() < pos + 4 * rank {
                    return Some(pos + 4 * rank);
                }
                pos += 4 * rank + 4 * n.min(MAX_ELEMENTS);
                if buf.len() < pos {
                    return Some(pos);
                }
            }
            Some(pos)
        }
        _ => None,
    }
}

pub fn write_message(w: &mut impl std::io::Write, msg: &Message) -> std::io::Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_batch() -> FeatureBatch {
        FeatureBatch {
            step: 7,
            rank: 1,
            bucket: 3,
            latents: Tensor::new([2, 1, 16, 1, 1], (0..32).map(|i| i as f64 * 0.25 - 3.0).collect()).unwrap(),
            text_emb: Tensor::new([2, 3], vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.125]).unwrap(),
            sample_ids: vec![4, 9],
        }
    }

    #[test]
    fn request_layout_is_bit_exact() {
        let bytes = encode(&Message::Request { step: 0x0102, rank: 3 });
        assert_eq!(bytes, [b'C', b'V', b'F', b'B', 1, 1, 2, 1, 0, 0, 0, 0, 0, 0, 3, 0, 0, 0]);
    }

    #[test]
    fn round_trips_every_message() {
        for m in [
            Message::Request { step: u64::MAX, rank: 0 },
            Message::Batch(tiny_batch()),
            Message::Error { code: ERR_UNKNOWN_RANK, message: "rank 9 ≥ world 2".into() },
        ] {
            let bytes = encode(&m);
            assert_eq!(decode(&bytes).unwrap(), (m.clone(), bytes.len()));
            assert_eq!(decode_len(&bytes), Some(bytes.len()));
            assert_eq!(read_message(&mut &bytes[..]).unwrap(), m);
        }
    }

    #[test]
    fn batch_header_fields() {
        let bytes = encode(&Message::Batch(tiny_batch()));
        assert_eq!(bytes[5], OP_BATCH);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 7);
        assert_eq!(u16::from_le_bytes(bytes[18..20].try_into().unwrap()), 3);
        assert_eq!(bytes[20], 3);
        assert_eq!(&bytes[22..29], b"latents");
        assert_eq!(bytes[29], DTYPE_F32);
    }

    #[test]
    fn truncation_is_reported_with_offset() {
        let bytes = encode(&Message::Batch(tiny_batch()));
        for cut in [0, 3, 5, 6, 20, 40, bytes.len() - 1] {
            let e = decode(&bytes[..cut]).unwrap_err();
            assert!(e.is_truncated(), "{cut}: {e:?}");
            assert_eq!(e.offset, cut);
            assert!(matches!(read_message(&mut &bytes[..cut]), Err(crate::Error::Protocol(_)) | Err(crate::Error::Closed)));
        }
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode(&Message::Request { step: 1, rank: 1 });
        bytes[4] = 2;
        assert_eq!(decode(&bytes).unwrap_err().kind, ProtocolErrorKind::BadVersion(2));
        bytes[4] = 1;
        bytes[5] = 0x42;
        assert_eq!(decode(&bytes).unwrap_err(), ProtocolError { offset: 5, kind: ProtocolErrorKind::UnknownOp(0x42) });
        bytes[0] = b'X';
        assert_eq!(decode(&bytes).unwrap_err().kind, ProtocolErrorKind::BadMagic);
    }

    #[test]
    fn hostile_dims_do_not_allocate() {
        let mut bytes = encode(&Message::Batch(tiny_batch()));
        // first dim of `latents`
        bytes[31..35].copy_from_slice(&u32::MAX.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap_err().kind, ProtocolErrorKind::TooLarge);
    }

    #[test]
    fn f32_grid_is_idempotent() {
        let t = Tensor::from_vec(vec![0.1, 1.0 / 3.0, -7.25]);
        let g = to_f32_grid(&t);
        assert_eq!(to_f32_grid(&g), g);
        assert_eq!(g.values()[2], -7.25);
    }
}

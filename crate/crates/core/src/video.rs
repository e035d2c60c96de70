//! Pixel/latent video containers and the `CVPX` raw exchange format.
//!
//! `CVPX` layout (little endian): magic `b"CVPX"`, then `u32` frame count,
//! channels, height, width, then `frames·channels·height·width` `f32` values
//! in `[frame][channel][row][col]` order.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CVPX_MAGIC: &[u8; 4] = b"CVPX";

/// Temporal compression of the latent grid.
pub const TIME_STRIDE: usize = 4;
/// Spatial compression of the latent grid.
pub const SPACE_STRIDE: usize = 8;
pub const LATENT_CHANNELS: usize = 16;

/// Any-length RGB clip, `[frames, 3, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawVideo {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RawVideo {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * 3 * height * width {
            return Err(Error::Shape(format!(
                "{} values for {frames}×3×{height}×{width} video",
                data.len()
            )));
        }
        Ok(Self { frames, height, width, data })
    }

    pub fn frame_len(&self) -> usize {
        3 * self.height * self.width
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn from_frames(height: usize, width: usize, frames: &[Vec<f64>]) -> Result<Self> {
        let data: Vec<f64> = frames.iter().flatten().copied().collect();
        Self::new(frames.len(), height, width, data)
    }

    pub fn write_cvpx(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CVPX_MAGIC)?;
        for d in [self.frames, 3, self.height, self.width] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_cvpx(mut r: impl Read) -> Result<Self> {
        let bad = |msg: String| Error::Format { format: "CVPX", msg };
        let mut head = [0u8; 20];
        r.read_exact(&mut head).map_err(|e| bad(format!("header: {e}")))?;
        if &head[..4] != CVPX_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(head[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (frames, channels, height, width) = (dim(0), dim(1), dim(2), dim(3));
        if channels != 3 {
            return Err(bad(format!("expected 3 channels, found {channels}")));
        }
        let n = frames
            .checked_mul(3 * height)
            .and_then(|v| v.checked_mul(width))
            .filter(|&n| n <= 1 << 31)
            .ok_or_else(|| bad("dimensions too large".into()))?;
        let mut payload = Vec::new();
        r.take(4 * n as u64).read_to_end(&mut payload)?;
        if payload.len() != 4 * n {
            return Err(bad(format!("payload truncated: {} of {} bytes", payload.len(), 4 * n)));
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Self::new(frames, height, width, data)
    }
}

/// Video satisfying the latent compression contract:
/// `[T+1, 3, H, W]` with `T ≡ 0 (mod 4)` and `H, W ≡ 0 (mod 8)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelVideo {
    pub frames: Tensor,
}

impl PixelVideo {
    pub fn new(frames: Tensor) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("pixel video must be [T+1, 3, H, W], got {s:?}")));
        }
        if s[0] == 0 || !(s[0] - 1).is_multiple_of(TIME_STRIDE) {
            return Err(Error::Shape(format!(
                "frame count {} is not 4k+1 (time axis indivisible by {TIME_STRIDE})",
                s[0]
            )));
        }
        if !s[2].is_multiple_of(SPACE_STRIDE) || !s[3].is_multiple_of(SPACE_STRIDE) {
            return Err(Error::Shape(format!(
                "height {} / width {} not divisible by {SPACE_STRIDE}",
                s[2], s[3]
            )));
        }
        Ok(Self { frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn latent_shape(&self) -> [usize; 4] {
        latent_shape_for(self.num_frames(), self.height(), self.width())
    }
}

impl TryFrom<&RawVideo> for PixelVideo {
    type Error = Error;

    fn try_from(v: &RawVideo) -> Result<Self> {
        PixelVideo::new(Tensor::new([v.frames, 3, v.height, v.width], v.data.clone())?)
    }
}

/// `[T/4 + 1, 16, H/8, W/8]` for a `T+1`-frame video.
pub fn latent_shape_for(frames: usize, height: usize, width: usize) -> [usize; 4] {
    [(frames - 1) / TIME_STRIDE + 1, LATENT_CHANNELS, height / SPACE_STRIDE, width / SPACE_STRIDE]
}

/// Latent grid `[T', C, H', W']`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo {
    pub latent: Tensor,
}

impl LatentVideo {
    pub fn new(latent: Tensor) -> Result<Self> {
        let s = latent.shape();
        if s.len() != 4 || s[0] == 0 || s[1] != LATENT_CHANNELS {
            return Err(Error::Shape(format!("latent must be [T', {LATENT_CHANNELS}, H', W'], got {s:?}")));
        }
        Ok(Self { latent })
    }

    pub fn num_frames(&self) -> usize {
        self.latent.shape()[0]
    }

    /// Pixel frame count this latent decodes to.
    pub fn pixel_frames(&self) -> usize {
        (self.num_frames() - 1) * TIME_STRIDE + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cvpx_round_trip_and_errors() {
        let data: Vec<f64> = (0..2 * 3 * 2 * 4).map(|i| i as f64 / 64.0).collect();
        let v = RawVideo::new(2, 2, 4, data).unwrap();
        let mut buf = Vec::new();
        v.write_cvpx(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CVPX");
        assert_eq!(buf.len(), 20 + 4 * 48);
        assert_eq!(RawVideo::read_cvpx(&buf[..]).unwrap(), v);
        assert!(RawVideo::read_cvpx(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(RawVideo::read_cvpx(&bad[..]).is_err());
    }

    #[test]
    fn pixel_contract() {
        assert!(PixelVideo::new(Tensor::zeros([5, 3, 16, 8])).is_ok());
        assert!(PixelVideo::new(Tensor::zeros([4, 3, 16, 8])).is_err());
        assert!(PixelVideo::new(Tensor::zeros([5, 3, 12, 8])).is_err());
        assert!(PixelVideo::new(Tensor::zeros([5, 1, 16, 8])).is_err());
        assert_eq!(latent_shape_for(125, 16, 8), [32, 16, 2, 1]);
        assert_eq!(latent_shape_for(29, 32, 32), [8, 16, 4, 4]);
    }
}

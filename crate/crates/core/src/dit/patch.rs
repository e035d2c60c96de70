//! Folding a `[T', C, H', W']` latent into a token sequence and back.
//!
//! Tokens are ordered time-major then row-major over the patch grid; each
//! token holds `C·p_t·p_h·p_w` values ordered `(channel, dt, dh, dw)`.

use super::config::Patch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TO_TOKENS: [usize; 7] = [0, 3, 5, 2, 1, 4, 6];
const FROM_TOKENS: [usize; 7] = [0, 4, 3, 1, 5, 2, 6];

#[derive(Clone, Debug)]
pub struct TokenGrid {
    /// `[L, dim]`
    pub tokens: Tensor,
    /// Patch-grid extents (frames, rows, cols).
    pub grid: (usize, usize, usize),
    pub patch: Patch,
    pub channels: usize,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.grid.0 * self.grid.1 * self.grid.2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(t, h, w)` grid coordinates of every token in sequence order.
    pub fn positions(&self) -> Vec<[usize; 3]> {
        grid_positions(self.grid)
    }
}

pub fn grid_positions(grid: (usize, usize, usize)) -> Vec<[usize; 3]> {
    let (gt, gh, gw) = grid;
    let mut out = Vec::with_capacity(gt * gh * gw);
    for t in 0..gt {
        for h in 0..gh {
            for w in 0..gw {
                out.push([t, h, w]);
            }
        }
    }
    out
}

pub fn patchify(latent: &Tensor, patch: Patch) -> Result<TokenGrid> {
    let s = latent.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("patchify expects [T', C, H', W'], got {s:?}")));
    }
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    for (axis, extent, p) in [("time", t, patch.t), ("height", h, patch.h), ("width", w, patch.w)] {
        if p == 0 || extent % p != 0 {
            return Err(Error::Shape(format!("patchify: {axis} extent {extent} not divisible by patch {p}")));
        }
    }
    let grid = (t / patch.t, h / patch.h, w / patch.w);
    let tokens = latent
        .reshape([grid.0, patch.t, c, grid.1, patch.h, grid.2, patch.w])?
        .permute(&TO_TOKENS)?
        .reshape([grid.0 * grid.1 * grid.2, c * patch.volume()])?;
    Ok(TokenGrid { tokens, grid, patch, channels: c })
}

pub fn unpatchify(tg: &TokenGrid) -> Result<Tensor> {
    let (gt, gh, gw) = tg.grid;
    let p = tg.patch;
    let want = [gt * gh * gw, tg.channels * p.volume()];
    if tg.tokens.shape() != want {
        return Err(Error::Shape(format!(
            "unpatchify: tokens {:?} inconsistent with grid {:?} and width {}",
            tg.tokens.shape(),
            tg.grid,
            want[1]
        )));
    }
    Ok(tg
        .tokens
        .reshape([gt, gh, gw, tg.channels, p.t, p.h, p.w])?
        .permute(&FROM_TOKENS)?
        .reshape([gt * p.t, tg.channels, gh * p.h, gw * p.w])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn default_patch_token_count() {
        let x = Tensor::zeros([2, 16, 4, 4]);
        let tg = patchify(&x, Patch::DEFAULT).unwrap();
        assert_eq!(tg.tokens.shape(), &[8, 64]);
        assert_eq!(tg.len(), 8);
    }

    #[test]
    fn unit_patch_is_identity_layout() {
        let mut rng = seeded(1);
        let x = Tensor::randn([3, 5, 2, 2], 1.0, &mut rng);
        let tg = patchify(&x, Patch { t: 1, h: 1, w: 1 }).unwrap();
        assert_eq!(tg.tokens.shape(), &[12, 5]);
        // token (t=1, h=0, w=1) channel 3
        assert_eq!(tg.tokens.values()[(4 + 1) * 5 + 3], x.values()[((5 + 3) * 2) * 2 + 1]);
    }

    #[test]
    fn token_order_is_time_major() {
        // value encodes (t, c, h, w)
        let v: Vec<f64> = (0..2 * 4 * 4).map(f64::from).collect();
        let x = Tensor::new([2, 1, 4, 4], v).unwrap();
        let tg = patchify(&x, Patch::DEFAULT).unwrap();
        // token 5 = frame 1, patch row 0, patch col 1 -> pixels (0,2),(0,3),(1,2),(1,3)
        assert_eq!(&tg.tokens.values()[5 * 4..6 * 4], &[18.0, 19.0, 22.0, 23.0]);
    }

    #[test]
    fn indivisible_axis_is_named() {
        let err = patchify(&Tensor::zeros([1, 16, 3, 4]), Patch::DEFAULT).unwrap_err();
        assert!(err.to_string().contains("height"));
    }

    #[test]
    fn inconsistent_metadata_rejected() {
        let mut tg = patchify(&Tensor::zeros([1, 16, 4, 4]), Patch::DEFAULT).unwrap();
        tg.grid = (2, 2, 2);
        assert!(unpatchify(&tg).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_exact(gt in 1usize..4, gh in 1usize..4, gw in 1usize..4, pt in 1usize..3,
                            ph in 1usize..3, pw in 1usize..3, c in 1usize..5, seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let x = Tensor::randn([gt * pt, c, gh * ph, gw * pw], 1.0, &mut rng);
            let p = Patch { t: pt, h: ph, w: pw };
            let tg = patchify(&x, p).unwrap();
            prop_assert_eq!(tg.tokens.shape(), &[gt * gh * gw, c * pt * ph * pw]);
            prop_assert_eq!(unpatchify(&tg).unwrap(), x);
        }
    }
}

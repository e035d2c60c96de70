//! The transformer: patch embedding, position encoding, adaLN-modulated
//! attention/FFN blocks and a modulated output projection.

use rand::Rng as _;

use super::attention::{attention_with, AttnOptions, QkNorm};
use super::config::{ModelConfig, PeMode};
use super::patch::{patchify, unpatchify, TokenGrid};
use super::pos::{build_ape, grid_positions_f64, rope_angles, spatial_row, temporal_row, timestep_embedding};
use crate::error::{Error, Result};
use crate::nn::{init_weight, linear, ParamSet, VelocityModel};
use crate::rng::{named, Rng};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
struct BlockIx {
    mod_w: usize,
    mod_b: usize,
    qkv_w: usize,
    qkv_b: usize,
    q_gain: usize,
    k_gain: usize,
    o_w: usize,
    o_b: usize,
    ff1_w: usize,
    ff1_b: usize,
    ff2_w: usize,
    ff2_b: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    in_w: usize,
    in_b: usize,
    t1_w: usize,
    t1_b: usize,
    t2_w: usize,
    t2_b: usize,
    c_w: usize,
    c_b: usize,
    /// Learned (temporal, spatial) tables.
    ape: Option<(usize, usize)>,
    blocks: Vec<BlockIx>,
    fmod_w: usize,
    fmod_b: usize,
    out_w: usize,
    out_b: usize,
}

#[derive(Clone, Debug)]
pub struct Dit {
    cfg: ModelConfig,
    params: ParamSet,
    ix: Layout,
}

fn small(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    init_weight(fan_in, fan_out, rng).scale(0.1)
}

impl Dit {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = named(seed, "dit-init");
        let hid = cfg.hidden();
        let pd = cfg.patch_dim();
        let mut p = ParamSet::new();
        let in_w = p.push("in.w", init_weight(pd, hid, &mut rng));
        let in_b = p.push("in.b", Tensor::zeros([hid]));
        let t1_w = p.push("time.0.w", init_weight(hid, hid, &mut rng));
        let t1_b = p.push("time.0.b", Tensor::zeros([hid]));
        let t2_w = p.push("time.1.w", init_weight(hid, hid, &mut rng));
        let t2_b = p.push("time.1.b", Tensor::zeros([hid]));
        let c_w = p.push("text.w", Tensor::randn([cfg.cond_dim, hid], (1.0 / cfg.cond_dim.max(1) as f64).sqrt(), &mut rng));
        let c_b = p.push("text.b", Tensor::zeros([hid]));
        let ape = (cfg.pe_mode == PeMode::Ape && cfg.learned_ape).then(|| {
            let [mt, mh, mw] = cfg.max_grid;
            let tt: Vec<f64> = (0..mt).flat_map(|t| temporal_row(t, hid)).collect();
            let st: Vec<f64> = (0..mh).flat_map(|h| (0..mw).flat_map(move |w| spatial_row(h, w, hid))).collect();
            (
                p.push("ape.t", Tensor::new([mt, hid], tt).expect("ape shape")),
                p.push("ape.s", Tensor::new([mh * mw, hid], st).expect("ape shape")),
            )
        });
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let n = |s: &str| format!("blocks.{l}.{s}");
            let jitter = |rng: &mut Rng| {
                Tensor::new([cfg.head_dim], (0..cfg.head_dim).map(|_| 1.0 + 0.1 * rng.random::<f64>()).collect())
                    .expect("gain shape")
            };
            blocks.push(BlockIx {
                mod_w: p.push(n("mod.w"), small(hid, 6 * hid, &mut rng)),
                mod_b: p.push(n("mod.b"), Tensor::zeros([6 * hid])),
                qkv_w: p.push(n("qkv.w"), init_weight(hid, 3 * hid, &mut rng)),
                qkv_b: p.push(n("qkv.b"), Tensor::zeros([3 * hid])),
                q_gain: p.push(n("q_norm.gain"), jitter(&mut rng)),
                k_gain: p.push(n("k_norm.gain"), jitter(&mut rng)),
                o_w: p.push(n("o.w"), init_weight(hid, hid, &mut rng)),
                o_b: p.push(n("o.b"), Tensor::zeros([hid])),
                ff1_w: p.push(n("ff.0.w"), init_weight(hid, cfg.ffn_dim, &mut rng)),
                ff1_b: p.push(n("ff.0.b"), Tensor::zeros([cfg.ffn_dim])),
                ff2_w: p.push(n("ff.1.w"), init_weight(cfg.ffn_dim, hid, &mut rng)),
                ff2_b: p.push(n("ff.1.b"), Tensor::zeros([hid])),
            });
        }
        let fmod_w = p.push("final.mod.w", small(hid, 2 * hid, &mut rng));
        let fmod_b = p.push("final.mod.b", Tensor::zeros([2 * hid]));
        let out_w = p.push("final.out.w", small(hid, pd, &mut rng));
        let out_b = p.push("final.out.b", Tensor::zeros([pd]));
        let ix = Layout { in_w, in_b, t1_w, t1_b, t2_w, t2_b, c_w, c_b, ape, blocks, fmod_w, fmod_b, out_w, out_b };
        Ok(Self { cfg, params: p, ix })
    }

    /// Rebuilds a model from named tensors, e.g. a loaded checkpoint.
    pub fn from_params(cfg: ModelConfig, loaded: ParamSet) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        if loaded.len() != m.params.len() {
            return Err(Error::Contract(format!(
                "checkpoint holds {} tensors, model expects {}",
                loaded.len(),
                m.params.len()
            )));
        }
        for (name, t) in loaded.names().iter().zip(loaded.tensors()) {
            let i = m.params.index_of(name).ok_or_else(|| Error::Contract(format!("unexpected tensor {name}")))?;
            m.params.set(i, t.clone())?;
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Size of the learned position tables (0 for frozen APE and RoPE).
    pub fn ape_table_size(&self) -> usize {
        self.ix.ape.map_or(0, |(a, b)| self.params.get(a).len() + self.params.get(b).len())
    }

    fn ape(&self, p: &[Tensor], grid: (usize, usize, usize)) -> Result<Tensor> {
        match self.ix.ape {
            None => build_ape(grid, self.cfg.hidden()),
            Some((ti, si)) => {
                let [mt, mh, mw] = self.cfg.max_grid;
                if grid.0 > mt || grid.1 > mh || grid.2 > mw {
                    return Err(Error::Shape(format!("token grid {grid:?} exceeds learned APE extent {:?}", self.cfg.max_grid)));
                }
                let pos = super::patch::grid_positions(grid);
                let t_rows: Vec<usize> = pos.iter().map(|q| q[0]).collect();
                let s_rows: Vec<usize> = pos.iter().map(|q| q[1] * mw + q[2]).collect();
                Ok(p[ti].gather_rows(&t_rows)?.add(&p[si].gather_rows(&s_rows)?)?)
            }
        }
    }

    fn block(&self, p: &[Tensor], b: &BlockIx, h: &Tensor, c: &Tensor, rope: Option<&[f64]>) -> Result<Tensor> {
        let hid = self.cfg.hidden();
        let (heads, hd) = (self.cfg.heads, self.cfg.head_dim);
        let l = h.shape()[0];
        let m = linear(c, &p[b.mod_w], &p[b.mod_b])?;
        let chunk = |i: usize| m.narrow(1, i * hid, hid).and_then(|t| t.reshape([hid]));
        let (sh1, sc1, g1, sh2, sc2, g2) = (chunk(0)?, chunk(1)?, chunk(2)?, chunk(3)?, chunk(4)?, chunk(5)?);

        let a = h.layer_norm(LN_EPS)?.mul_last(&sc1.add_scalar(1.0))?.add_last(&sh1)?;
        let qkv = linear(&a, &p[b.qkv_w], &p[b.qkv_b])?;
        let split = |i: usize| qkv.narrow(1, i * hid, hid)?.reshape([l, heads, hd])?.permute(&[1, 0, 2]);
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let norm = QkNorm { q_gain: p[b.q_gain].clone(), k_gain: p[b.k_gain].clone(), eps: self.cfg.qk_eps };
        let o = attention_with(&q, &k, &v, &norm, AttnOptions { rope, key_mask: None })?
            .permute(&[1, 0, 2])?
            .reshape([l, hid])?;
        let h = h.add(&linear(&o, &p[b.o_w], &p[b.o_b])?.mul_last(&g1)?)?;

        let a = h.layer_norm(LN_EPS)?.mul_last(&sc2.add_scalar(1.0))?.add_last(&sh2)?;
        let f = linear(&linear(&a, &p[b.ff1_w], &p[b.ff1_b])?.silu(), &p[b.ff2_w], &p[b.ff2_b])?;
        Ok(h.add(&f.mul_last(&g2)?)?)
    }

    /// Velocity for a single latent `[T', C, H', W']` at time `t` with a
    /// `[cond_dim]` text embedding.
    pub fn forward_one(&self, p: &[Tensor], x: &Tensor, t: f64, cond: &Tensor) -> Result<Tensor> {
        let cfg = &self.cfg;
        let hid = cfg.hidden();
        if x.rank() != 4 || x.shape()[1] != cfg.latent_channels {
            return Err(Error::Shape(format!(
                "dit input must be [T', {}, H', W'], got {:?}",
                cfg.latent_channels,
                x.shape()
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Contract(format!("dit time {t} outside [0, 1]")));
        }
        if cond.len() != cfg.cond_dim {
            return Err(Error::Shape(format!("cond has {} values, config expects {}", cond.len(), cfg.cond_dim)));
        }
        let tg = patchify(x, cfg.patch)?;
        let mut h = linear(&tg.tokens, &p[self.ix.in_w], &p[self.ix.in_b])?;
        let mut rope = None;
        match cfg.pe_mode {
            PeMode::Ape => h = h.add(&self.ape(p, tg.grid)?)?,
            PeMode::Rope => rope = Some(rope_angles(&grid_positions_f64(tg.grid), cfg.head_dim)?),
        }

        let ix = &self.ix;
        let temb = linear(&timestep_embedding(&[t], hid), &p[ix.t1_w], &p[ix.t1_b])?.silu();
        let temb = linear(&temb, &p[ix.t2_w], &p[ix.t2_b])?;
        let txt = linear(&cond.reshape([1, cfg.cond_dim])?, &p[ix.c_w], &p[ix.c_b])?;
        let c = temb.add(&txt)?.silu();

        for (l, b) in ix.blocks.iter().enumerate() {
            h = self.block(p, b, &h, &c, rope.as_deref()).map_err(|e| Error::Shape(format!("layer {l}: {e}")))?;
        }

        let m = linear(&c, &p[ix.fmod_w], &p[ix.fmod_b])?;
        let shift = m.narrow(1, 0, hid)?.reshape([hid])?;
        let scale = m.narrow(1, hid, hid)?.reshape([hid])?;
        let h = h.layer_norm(LN_EPS)?.mul_last(&scale.add_scalar(1.0))?.add_last(&shift)?;
        let out = linear(&h, &p[ix.out_w], &p[ix.out_b])?;
        unpatchify(&TokenGrid { tokens: out, ..tg })
    }

    /// Batched forward over `[B, T', C, H', W']`; samples never interact.
    pub fn forward(&self, p: &[Tensor], x: &Tensor, t: &[f64], cond: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 5 {
            return Err(Error::Shape(format!("dit batch must be [B, T', C, H', W'], got {s:?}")));
        }
        let b = s[0];
        if t.len() != b || cond.shape() != [b, self.cfg.cond_dim] {
            return Err(Error::Shape(format!(
                "batch of {b} with {} times and cond {:?}",
                t.len(),
                cond.shape()
            )));
        }
        let inner = [s[1], s[2], s[3], s[4]];
        let one = vec![1, s[1], s[2], s[3], s[4]];
        let mut outs = Vec::with_capacity(b);
        for i in 0..b {
            let xi = x.narrow(0, i, 1)?.reshape(inner)?;
            let ci = cond.narrow(0, i, 1)?.reshape([self.cfg.cond_dim])?;
            outs.push(self.forward_one(p, &xi, t[i], &ci)?.reshape(one.clone())?);
        }
        let refs: Vec<&Tensor> = outs.iter().collect();
        Ok(Tensor::concat(&refs, 0)?)
    }
}

impl VelocityModel for Dit {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn cond_dim(&self) -> usize {
        self.cfg.cond_dim
    }

    fn velocity(&self, params: &[Tensor], x: &Tensor, t: &[f64], cond: &Tensor) -> Result<Tensor> {
        self.forward(params, x, t, cond)
    }
}

//! Preset-driven training of the toy video DiT on procedural clips, with
//! image-video joint batches, and text-conditioned sampling.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use vidgen_core::dit::{Dit, ModelConfig, TextEncoder};
use vidgen_core::flowmatch::{train_step_groups, Anchor, FlowBatch, TimestepSampler};
use vidgen_core::nn::VelocityModel;
use vidgen_core::optim::Adam;
use vidgen_core::rng::{named, Rng};
use vidgen_core::sampler::{euler_sample, make_schedule, GuidanceConfig, TraceRow};
use vidgen_core::synth::{camera_pan, moving_square};
use vidgen_core::vae::CausalVae;
use vidgen_core::video::{latent_shape_for, LatentVideo, PixelVideo, RawVideo};
use vidgen_core::Tensor;

use crate::config::{Preset, RunConfig, StagePreset, TEXT_DIM};
use crate::error::{CliError, Result};

const WORDS: [&str; 10] = ["red", "blue", "square", "pan", "left", "right", "slow", "fast", "city", "sea"];

/// Everything needed to rebuild a video model and its codecs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub preset: Preset,
    pub model: ModelConfig,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub vae_seed: u64,
    pub text_seed: u64,
    pub text_dim: usize,
}

impl VideoMeta {
    pub fn from_config(cfg: &RunConfig) -> Self {
        let s = cfg.stage();
        Self {
            preset: cfg.run.preset,
            model: cfg.model.clone(),
            frames: s.frames,
            height: s.height,
            width: s.width,
            vae_seed: cfg.data.vae_seed,
            text_seed: cfg.data.text_seed,
            text_dim: TEXT_DIM,
        }
    }
}

pub fn caption(i: usize) -> String {
    format!("{} {} {}", WORDS[i % 10], WORDS[(i / 10 + 2) % 10], WORDS[(i * 7 + 3) % 10])
}

/// Procedural clip `i`: even indices pan a texture, odd ones move a square.
pub fn procedural_clip(i: usize, frames: usize, h: usize, w: usize, seed: u64) -> RawVideo {
    let s = seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    if i.is_multiple_of(2) {
        camera_pan(frames, h, w, 1 + (i as isize / 2) % 2, (i as isize / 4) % 2, s)
    } else {
        let size = (h / 2).max(4);
        moving_square(frames, h, w, size, (i % (w - size), (i / 3) % (h - size)), (1, i as isize % 3 - 1), s)
    }
}

/// Encoded clips: full-length video latents, first-frame image latents and
/// caption embeddings.
pub struct ClipPool {
    pub videos: Vec<Tensor>,
    pub images: Vec<Tensor>,
    pub text: Vec<Tensor>,
}

impl ClipPool {
    pub fn build(stage: &StagePreset, meta: &VideoMeta, pool: usize, seed: u64) -> Result<Self> {
        if pool == 0 {
            return Err(CliError::Config("data.pool must be positive".into()));
        }
        let vae = CausalVae::new(meta.vae_seed);
        let text = TextEncoder::new(meta.text_dim, meta.text_seed);
        let (mut videos, mut images, mut embs) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..pool {
            let clip = procedural_clip(i, stage.frames, stage.height, stage.width, seed);
            let px = PixelVideo::try_from(&clip)?;
            videos.push(vae.encode(&px)?.latent);
            images.push(vae.encode(&PixelVideo::new(px.frames.narrow(0, 0, 1)?)?)?.latent);
            embs.push(Tensor::from_vec(text.encode(&caption(i))));
        }
        Ok(Self { videos, images, text: embs })
    }

    fn group(&self, src: &[Tensor], n: usize, sampler: &TimestepSampler, rng: &mut Rng) -> Result<Option<FlowBatch>> {
        if n == 0 {
            return Ok(None);
        }
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..src.len())).collect();
        let stack = |ts: &[Tensor], pick: &[usize]| -> Result<Tensor> {
            let parts: Vec<Tensor> = pick
                .iter()
                .map(|&i| {
                    let mut s = vec![1];
                    s.extend_from_slice(ts[i].shape());
                    ts[i].reshape(s)
                })
                .collect::<std::result::Result<_, _>>()?;
            let refs: Vec<&Tensor> = parts.iter().collect();
            Ok(Tensor::concat(&refs, 0)?)
        };
        let x1 = stack(src, &idx)?;
        let cond = stack(&self.text, &idx)?;
        Ok(Some(FlowBatch::draw(x1, cond, sampler, rng)?))
    }
}

/// Runs the preset's training loop. `reference` enables the anchor term
/// (SFT). Calls `on_step(step, loss)` after each update.
pub fn train(
    model: &mut Dit,
    stage: &StagePreset,
    pool: &ClipPool,
    seed: u64,
    reference: Option<Anchor>,
    mut on_step: impl FnMut(usize, f64) -> Result<()>,
) -> Result<()> {
    let sampler = TimestepSampler::new(Default::default(), 1.0)?;
    let mut opt = Adam::new(stage.lr).with_clip(1.0);
    let mut rng = named(seed, "video-train");
    for step in 0..stage.steps {
        let mut groups = Vec::with_capacity(2);
        groups.extend(pool.group(&pool.images, stage.image_batch, &sampler, &mut rng)?);
        groups.extend(pool.group(&pool.videos, stage.video_batch, &sampler, &mut rng)?);
        let loss = train_step_groups(model, &groups, &mut opt, reference.as_ref())?;
        on_step(step, loss)?;
    }
    Ok(())
}

/// Samples one clip per prompt and decodes it to pixels.
pub fn sample(
    model: &Dit,
    meta: &VideoMeta,
    prompts: &[String],
    steps: usize,
    shift: f64,
    cfg_scale: f64,
    seed: u64,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<Vec<RawVideo>> {
    let vae = CausalVae::new(meta.vae_seed);
    let text = TextEncoder::new(meta.text_dim, meta.text_seed);
    let schedule = make_schedule(steps, shift)?;
    let [t, c, h, w] = latent_shape_for(meta.frames, meta.height, meta.width);
    let mut out = Vec::with_capacity(prompts.len());
    for (i, p) in prompts.iter().enumerate() {
        let x0 = Tensor::randn([1, t, c, h, w], 1.0, &mut named(seed ^ i as u64, "video-sample"));
        let cond = text.encode_batch(&[p.as_str()]);
        let guidance = GuidanceConfig::new(cfg_scale, text.uncond(1))?;
        let z = euler_sample(model, model.params().tensors(), &x0, &schedule, Some(&guidance), &cond, if i == 0 { trace.as_deref_mut() } else { None })?;
        let px = vae.decode(&LatentVideo::new(z.reshape([t, c, h, w])?)?)?;
        let v = RawVideo::new(meta.frames, meta.height, meta.width, px.frames.to_vec())?;
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn pool_latents_follow_the_stage_shape() {
        let mut cfg = RunConfig::default();
        cfg.run.preset = Preset::Stage1;
        let meta = VideoMeta::from_config(&cfg);
        let pool = ClipPool::build(&cfg.stage(), &meta, 3, 1).unwrap();
        assert_eq!(pool.videos[0].shape(), &[8, 16, 2, 2]);
        assert_eq!(pool.images[2].shape(), &[1, 16, 2, 2]);
        assert_eq!(pool.text[1].shape(), &[TEXT_DIM]);
    }

    #[test]
    fn captions_vary() {
        let c: std::collections::BTreeSet<String> = (0..20).map(caption).collect();
        assert!(c.len() > 15);
    }
}

//! End-to-end driver: corpus directory in, manifest records out.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vidgen_core::video::RawVideo;

use crate::bucket::{assign_bucket, BucketConfig};
use crate::dedup::{kmeans_dedup, pairwise_dedup};
use crate::embed::FrameEmbedder;
use crate::error::{CurationError, Result};
use crate::flow::estimate_flow;
use crate::manifest::{ClipRecord, DropReason};
use crate::motion::{score_flow, MotionScores};
use crate::quality::{laplacian_blur_score, AestheticScorer};
use crate::scene::{detect_scene_cuts, split_clips};
use crate::select::select_top_percentile;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationConfig {
    pub cut_threshold: f64,
    pub min_clip_s: f64,
    pub max_clip_s: f64,
    pub blur_min: f64,
    pub motion_min: f64,
    pub flow_block: usize,
    pub flow_radius: usize,
    /// Frames between sampled flow pairs.
    pub flow_every: usize,
    pub fit_stride: usize,
    pub inlier_tol: f64,
    pub fg_weight: f64,
    pub pairwise_threshold: f64,
    pub k: usize,
    pub dedup_base: f64,
    pub dedup_gamma: f64,
    pub top_p: f64,
    pub embed_grid: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub threads: usize,
    pub bucket: BucketConfig,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            cut_threshold: 0.3,
            min_clip_s: 3.0,
            max_clip_s: 6.0,
            blur_min: 0.002,
            motion_min: 0.1,
            flow_block: 8,
            flow_radius: 4,
            flow_every: 5,
            fit_stride: 4,
            inlier_tol: 0.5,
            fg_weight: 0.7,
            pairwise_threshold: 0.98,
            k: 4,
            dedup_base: 0.95,
            dedup_gamma: 0.1,
            top_p: 0.1,
            embed_grid: 4,
            embed_dim: 32,
            seed: 0,
            threads: 1,
            bucket: BucketConfig::default(),
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CurationError::Config(m.into()));
        if !(self.min_clip_s > 0.0 && self.min_clip_s <= self.max_clip_s) {
            return bad("clip lengths must satisfy 0 < min <= max");
        }
        if self.flow_block == 0 || self.fit_stride == 0 || self.flow_every == 0 || self.embed_grid == 0 {
            return bad("block, stride and sampling intervals must be positive");
        }
        if !(0.0..=1.0).contains(&self.fg_weight) || !(0.0..=1.0).contains(&self.top_p) {
            return bad("fg_weight and top_p must lie in [0, 1]");
        }
        if self.k == 0 || self.embed_dim == 0 {
            return bad("k and embed_dim must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceVideo {
    pub id: String,
    pub fps: f64,
    pub video: RawVideo,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    id: String,
    fps: f64,
}

/// Loads every `*.cvpx` in `dir` (sorted by file name) with its `.json`
/// sidecar.
pub fn load_corpus(dir: &Path) -> Result<Vec<SourceVideo>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "cvpx"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let side = p.with_extension("json");
            let meta: Sidecar = serde_json::from_slice(&fs::read(&side)?)
                .map_err(|e| CurationError::Manifest(format!("{}: {e}", side.display())))?;
            let video = RawVideo::read_cvpx(fs::File::open(&p)?)?;
            Ok(SourceVideo { id: meta.id, fps: meta.fps, video })
        })
        .collect()
}

pub fn write_corpus(dir: &Path, sources: &[SourceVideo]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in sources {
        s.video.write_cvpx(std::io::BufWriter::new(fs::File::create(dir.join(format!("{}.cvpx", s.id)))?))?;
        let meta = serde_json::to_vec(&Sidecar { id: s.id.clone(), fps: s.fps })
            .map_err(|e| CurationError::Manifest(e.to_string()))?;
        fs::write(dir.join(format!("{}.json", s.id)), meta)?;
    }
    Ok(())
}

fn clip_motion(v: &RawVideo, span: std::ops::Range<usize>, cfg: &CurationConfig) -> Result<MotionScores> {
    let pairs: Vec<usize> = (span.start..span.end - 1).step_by(cfg.flow_every).collect();
    let mut acc = MotionScores::default();
    for &i in &pairs {
        let flow = estimate_flow(v.frame(i), v.frame(i + 1), v.height, v.width, cfg.flow_block, cfg.flow_radius)?;
        let (_, s) = score_flow(&flow, cfg.fit_stride, cfg.inlier_tol, cfg.fg_weight)?;
        acc.fg += s.fg;
        acc.bg += s.bg;
    }
    let n = pairs.len().max(1) as f64;
    let (fg, bg) = (acc.fg / n, acc.bg / n);
    Ok(MotionScores { fg, bg, pretrain: 0.5 * (fg + bg), post: cfg.fg_weight * fg + (1.0 - cfg.fg_weight) * bg })
}

/// Splits one source into scored clip records (no cross-clip decisions).
pub fn analyze_source(
    src: &SourceVideo,
    cfg: &CurationConfig,
    scorer: &dyn AestheticScorer,
    embedder: &FrameEmbedder,
) -> Result<Vec<ClipRecord>> {
    let v = &src.video;
    let cuts = detect_scene_cuts(v, cfg.cut_threshold);
    let spans = split_clips(&cuts, v.frames, src.fps, cfg.min_clip_s, cfg.max_clip_s);
    let mut out = Vec::with_capacity(spans.len());
    for (i, span) in spans.into_iter().enumerate() {
        let mid = span.start + span.len() / 2;
        let blur = laplacian_blur_score(v.frame(mid), v.height, v.width)?;
        let m = clip_motion(v, span.clone(), cfg)?;
        let duration = span.len() as f64 / src.fps;
        let drop_reason = if blur < cfg.blur_min {
            Some(DropReason::Blurry)
        } else if m.pretrain < cfg.motion_min {
            Some(DropReason::Static)
        } else {
            None
        };
        out.push(ClipRecord {
            id: format!("{}#{i:03}", src.id),
            source_id: src.id.clone(),
            start: span.start,
            end: span.end,
            fps: src.fps,
            width: v.width,
            height: v.height,
            blur,
            motion_fg: m.fg,
            motion_bg: m.bg,
            motion_pretrain: m.pretrain,
            motion_post: m.post,
            aesthetic: scorer.score(v, span.clone()),
            feature: embedder.embed(v, span, cfg.flow_every),
            bucket: Some(assign_bucket(v.width, v.height, duration, &cfg.bucket)?),
            kept: drop_reason.is_none(),
            drop_reason,
            post_selected: false,
        });
    }
    Ok(out)
}

/// Full pipeline. Per-source analysis may run on `cfg.threads` workers;
/// records are merged in source order, so output is thread-count invariant.
pub fn curate(sources: &[SourceVideo], cfg: &CurationConfig, scorer: &dyn AestheticScorer) -> Result<Vec<ClipRecord>> {
    cfg.validate()?;
    let embedder = FrameEmbedder::new(cfg.embed_grid, cfg.embed_dim, cfg.seed);
    let threads = cfg.threads.max(1).min(sources.len().max(1));
    let mut per_source: Vec<Option<Result<Vec<ClipRecord>>>> = (0..sources.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = sources.len().div_ceil(threads).max(1);
        let handles: Vec<_> = sources
            .chunks(chunk)
            .enumerate()
            .map(|(c, group)| {
                let embedder = &embedder;
                s.spawn(move || {
                    (c * chunk, group.iter().map(|src| analyze_source(src, cfg, scorer, embedder)).collect::<Vec<_>>())
                })
            })
            .collect();
        for h in handles {
            let (base, results) = h.join().expect("curation worker panicked");
            for (j, r) in results.into_iter().enumerate() {
                per_source[base + j] = Some(r);
            }
        }
    });
    let mut records = Vec::new();
    for r in per_source {
        records.extend(r.expect("every source analysed")?);
    }

    // within-source near duplicates, in span order
    let mut start = 0;
    while start < records.len() {
        let end = start + records[start..].iter().take_while(|r| r.source_id == records[start].source_id).count();
        let live: Vec<usize> = (start..end).filter(|&i| records[i].kept).collect();
        let feats: Vec<Vec<f64>> = live.iter().map(|&i| records[i].feature.clone()).collect();
        let keep = pairwise_dedup(&feats, cfg.pairwise_threshold)?;
        for (j, &i) in live.iter().enumerate() {
            if !keep.contains(&j) {
                records[i].kept = false;
                records[i].drop_reason = Some(DropReason::DuplicateInSource);
            }
        }
        start = end;
    }

    let live: Vec<usize> = (0..records.len()).filter(|&i| records[i].kept).collect();
    if !live.is_empty() {
        let feats: Vec<Vec<f64>> = live.iter().map(|&i| records[i].feature.clone()).collect();
        let out = kmeans_dedup(&feats, cfg.k.min(live.len()), cfg.dedup_base, cfg.dedup_gamma, cfg.seed)?;
        for (j, &i) in live.iter().enumerate() {
            if !out.kept.contains(&j) {
                records[i].kept = false;
                records[i].drop_reason = Some(DropReason::DuplicateInCluster);
            }
        }
    }

    let live: Vec<usize> = (0..records.len()).filter(|&i| records[i].kept).collect();
    let pool: Vec<ClipRecord> = live.iter().map(|&i| records[i].clone()).collect();
    for j in select_top_percentile(&pool, cfg.top_p) {
        records[live[j]].post_selected = true;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(CurationConfig::default().validate().is_ok());
        assert!(CurationConfig { min_clip_s: 7.0, ..Default::default() }.validate().is_err());
        assert!(CurationConfig { fg_weight: 1.2, ..Default::default() }.validate().is_err());
        assert!(CurationConfig { k: 0, ..Default::default() }.validate().is_err());
        let parsed: std::result::Result<CurationConfig, _> = serde_json::from_str("{\"nope\": 1}");
        assert!(parsed.is_err());
    }
}

//! Single-host simulations of sequence-parallel attention and hybrid
//! sharded data parallelism. Virtual workers run sequentially; byte
//! counters record the `f64` payload each collective would move.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dit::attention::{attention, attention_with, AttnOptions, QkNorm};
use crate::error::{Error, Result};
use crate::flowmatch::{fm_loss, interpolate, velocity_target, FlowBatch};
use crate::nn::{collect_grads, flatten, VelocityModel};
use crate::tensor::{Tape, Tensor};

const F64_BYTES: u64 = 8;

/// Splits `n` items into `parts` contiguous ranges; the first `n % parts`
/// ranges take one extra item.
pub fn split_even(n: usize, parts: usize) -> Vec<Range<usize>> {
    let (base, extra) = (n / parts, n % parts);
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShardLayout {
    pub workers: usize,
    pub seq_len: usize,
    /// Tokens per worker after padding.
    pub shard_len: usize,
    pub heads: usize,
    pub head_sets: Vec<Range<usize>>,
}

impl ShardLayout {
    pub fn new(workers: usize, seq_len: usize, heads: usize) -> Result<Self> {
        if workers == 0 || seq_len == 0 || heads == 0 {
            return Err(Error::Contract(format!("layout needs positive P, L, heads; got {workers}, {seq_len}, {heads}")));
        }
        Ok(Self { workers, seq_len, shard_len: seq_len.div_ceil(workers), heads, head_sets: split_even(heads, workers) })
    }

    pub fn padded_len(&self) -> usize {
        self.shard_len * self.workers
    }

    pub fn padding(&self) -> usize {
        self.padded_len() - self.seq_len
    }

    pub fn seq_range(&self, w: usize) -> Range<usize> {
        w * self.shard_len..(w + 1) * self.shard_len
    }

    fn validate(&self) -> Result<()> {
        let covered: usize = self.head_sets.iter().map(|r| r.len()).sum();
        let contiguous = self.head_sets.windows(2).all(|p| p[0].end == p[1].start);
        if self.head_sets.len() != self.workers
            || covered != self.heads
            || !contiguous
            || self.head_sets.first().map(|r| r.start) != Some(0)
            || self.padded_len() < self.seq_len
            || self.padding() >= self.workers
        {
            return Err(Error::Contract(format!("inconsistent shard layout {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SpOutput {
    pub output: Tensor,
    /// Payload moved by the two all-to-all exchanges.
    pub bytes: u64,
}

/// Bytes both all-to-alls move: q, k, v forward and the output back, each
/// worker keeping `1/P` of its shard local.
pub fn sp_expected_bytes(layout: &ShardLayout, head_dim: usize) -> u64 {
    let p = layout.workers as u64;
    let per_tensor = layout.padded_len() as u64 * (layout.heads * head_dim) as u64 * (p - 1) / p;
    4 * per_tensor * F64_BYTES
}

/// Ulysses attention over `[heads, L, d]` inputs.
pub fn sp_attention(q: &Tensor, k: &Tensor, v: &Tensor, norm: &QkNorm, layout: &ShardLayout) -> Result<SpOutput> {
    let order: Vec<usize> = (0..layout.workers).collect();
    sp_attention_ordered(q, k, v, norm, layout, &order)
}

/// As [`sp_attention`], visiting virtual workers in `order`.
pub fn sp_attention_ordered(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    norm: &QkNorm,
    layout: &ShardLayout,
    order: &[usize],
) -> Result<SpOutput> {
    layout.validate()?;
    let s = q.shape();
    if s.len() != 3 || s[0] != layout.heads || s[1] != layout.seq_len || k.shape() != s || v.shape() != s {
        return Err(Error::Contract(format!(
            "layout (heads {}, L {}) does not match q {:?}, k {:?}, v {:?}",
            layout.heads,
            layout.seq_len,
            s,
            k.shape(),
            v.shape()
        )));
    }
    let mut seen = order.to_vec();
    seen.sort_unstable();
    if seen != (0..layout.workers).collect::<Vec<_>>() {
        return Err(Error::Contract(format!("worker order {order:?} is not a permutation")));
    }
    if layout.workers == 1 {
        return Ok(SpOutput { output: attention(q, k, v, norm)?, bytes: 0 });
    }
    let (heads, l, d) = (s[0], s[1], s[2]);
    let p = layout.workers;
    let pad = |x: &Tensor| -> Result<Tensor> {
        if layout.padding() == 0 {
            return Ok(x.clone());
        }
        Ok(Tensor::concat(&[x, &Tensor::zeros([heads, layout.padding(), d])], 1)?)
    };
    let (qp, kp, vp) = (pad(q)?, pad(k)?, pad(v)?);
    // scatter by sequence: worker w owns tokens seq_range(w) for every head
    let shards = |x: &Tensor| -> Result<Vec<Tensor>> {
        (0..p).map(|w| Ok(x.narrow(1, w * layout.shard_len, layout.shard_len)?)).collect()
    };
    let (qs, ks, vs) = (shards(&qp)?, shards(&kp)?, shards(&vp)?);
    let mask: Vec<bool> = (0..layout.padded_len()).map(|i| i < l).collect();

    let mut bytes = 0u64;
    let mut per_worker: Vec<Option<Tensor>> = vec![None; p];
    for &w in order {
        let hs = &layout.head_sets[w];
        if hs.is_empty() {
            per_worker[w] = Some(Tensor::zeros([0, layout.padded_len(), d]));
            continue;
        }
        // all-to-all: gather this worker's heads from every sequence shard
        let gather = |parts: &[Tensor]| -> Result<Tensor> {
            let pieces: Vec<Tensor> =
                parts.iter().map(|t| t.narrow(0, hs.start, hs.len())).collect::<std::result::Result<_, _>>()?;
            let refs: Vec<&Tensor> = pieces.iter().collect();
            Ok(Tensor::concat(&refs, 1)?)
        };
        let (qw, kw, vw) = (gather(&qs)?, gather(&ks)?, gather(&vs)?);
        bytes += 3 * (hs.len() * layout.shard_len * d * (p - 1)) as u64 * F64_BYTES;
        let out = attention_with(&qw, &kw, &vw, norm, AttnOptions { rope: None, key_mask: Some(&mask) })?;
        per_worker[w] = Some(out);
    }
    // all-to-all back: each worker returns its heads' outputs per sequence shard
    let outs: Vec<Tensor> = per_worker.into_iter().map(|o| o.expect("every worker ran")).collect();
    for w in 0..p {
        bytes += (layout.head_sets[w].len() * layout.shard_len * d * (p - 1)) as u64 * F64_BYTES;
    }
    let nonempty: Vec<&Tensor> = outs.iter().filter(|t| t.shape()[0] > 0).collect();
    let full = Tensor::concat(&nonempty, 0)?;
    Ok(SpOutput { output: full.narrow(1, 0, l)?, bytes })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ShardStrategy {
    /// One shard group spanning every worker.
    FullShard,
    /// Shard within groups, replicate across groups.
    HybridShard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShardGroup {
    pub strategy: ShardStrategy,
    pub group_size: usize,
    pub replicas: usize,
}

impl ShardGroup {
    pub fn hybrid(group_size: usize, replicas: usize) -> Self {
        Self { strategy: ShardStrategy::HybridShard, group_size, replicas }
    }

    pub fn full(workers: usize) -> Self {
        Self { strategy: ShardStrategy::FullShard, group_size: workers, replicas: 1 }
    }

    pub fn workers(&self) -> usize {
        self.group_size * self.replicas
    }

    /// Flat parameter range held by each member of a shard group.
    pub fn shard_ranges(&self, numel: usize) -> Vec<Range<usize>> {
        split_even(numel, self.group_size)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommStats {
    pub all_gather: u64,
    pub reduce_scatter: u64,
    pub all_reduce: u64,
}

impl CommStats {
    pub fn total(&self) -> u64 {
        self.all_gather + self.reduce_scatter + self.all_reduce
    }
}

#[derive(Clone, Debug)]
pub struct FsdpOutput {
    pub grads: Vec<Tensor>,
    pub loss: f64,
    pub comm: CommStats,
}

fn rows(batch: &FlowBatch, r: Range<usize>) -> Result<FlowBatch> {
    let n = r.len();
    FlowBatch::new(
        batch.x0.narrow(0, r.start, n)?,
        batch.x1.narrow(0, r.start, n)?,
        batch.t[r.clone()].to_vec(),
        batch.cond.narrow(0, r.start, n)?,
    )
}

/// Mean flow-matching loss and its gradient for one batch.
pub fn batch_gradient(model: &dyn VelocityModel, params: &[Tensor], batch: &FlowBatch) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let bound: Vec<Tensor> = params.iter().map(|p| tape.leaf(p)).collect();
    let xt = interpolate(&batch.x0, &batch.x1, &batch.t)?;
    let pred = model.velocity(&bound, &xt, &batch.t, &batch.cond)?;
    let loss = fm_loss(&pred, &velocity_target(&batch.x0, &batch.x1)?)?;
    tape.backward(&loss)?;
    Ok((loss.item(), collect_grads(&bound)))
}

/// One data-parallel gradient computation over `group.workers()` virtual
/// workers with mean reduction.
pub fn fsdp_sim_step(model: &dyn VelocityModel, batch: &FlowBatch, group: &ShardGroup) -> Result<FsdpOutput> {
    let order: Vec<usize> = (0..group.workers()).collect();
    fsdp_sim_step_ordered(model, batch, group, &order)
}

pub fn fsdp_sim_step_ordered(
    model: &dyn VelocityModel,
    batch: &FlowBatch,
    group: &ShardGroup,
    order: &[usize],
) -> Result<FsdpOutput> {
    let w_total = group.workers();
    let b = batch.t.len();
    if w_total == 0 || !b.is_multiple_of(w_total) {
        return Err(Error::Contract(format!("global batch {b} not divisible by {w_total} workers")));
    }
    if group.strategy == ShardStrategy::FullShard && group.replicas != 1 {
        return Err(Error::Contract("FULL_SHARD uses a single shard group".into()));
    }
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..w_total).collect::<Vec<_>>() {
        return Err(Error::Contract(format!("worker order {order:?} is not a permutation")));
    }
    let shapes: Vec<Vec<usize>> = model.params().tensors().iter().map(|t| t.shape().to_vec()).collect();
    let flat = model.params().flat();
    let n = flat.len();
    let ranges = group.shard_ranges(n);
    let micro = b / w_total;
    let g = group.group_size as u64;
    let mut comm = CommStats::default();

    // worker id = replica · group_size + rank
    let mut local: Vec<Option<(f64, Vec<f64>)>> = vec![None; w_total];
    for &w in order {
        let rank = w % group.group_size;
        // all-gather the other ranks' shards (forward, then again for backward)
        comm.all_gather += 2 * (n - ranges[rank].len()) as u64 * F64_BYTES;
        let mut gathered = vec![0.0; n];
        for r in &ranges {
            gathered[r.clone()].copy_from_slice(&flat[r.clone()]);
        }
        let mut params = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for s in &shapes {
            let len: usize = s.iter().product();
            params.push(Tensor::new(s.clone(), gathered[off..off + len].to_vec())?);
            off += len;
        }
        let (loss, grads) = batch_gradient(model, &params, &rows(batch, w * micro..(w + 1) * micro)?)?;
        local[w] = Some((loss, flatten(&grads)));
    }
    let local: Vec<(f64, Vec<f64>)> = local.into_iter().map(|o| o.expect("every worker ran")).collect();

    // reduce-scatter inside each group, then all-reduce shards across
    // replicas; summation always runs in worker-id order
    let mut full = vec![0.0; n];
    for r in &ranges {
        for rep in 0..group.replicas {
            let members = (0..group.group_size).map(|m| rep * group.group_size + m);
            comm.reduce_scatter += (g - 1) * r.len() as u64 * F64_BYTES;
            for m in members {
                for j in r.clone() {
                    full[j] += local[m].1[j];
                }
            }
        }
        if group.replicas > 1 {
            let rr = group.replicas as u64;
            // ring all-reduce: 2 (R-1)/R of the shard per replica
            comm.all_reduce += rr * 2 * (rr - 1) * r.len() as u64 * F64_BYTES / rr;
        }
    }
    full.iter_mut().for_each(|v| *v /= w_total as f64);
    let loss = local.iter().map(|(l, _)| l).sum::<f64>() / w_total as f64;
    let mut grads = Vec::with_capacity(shapes.len());
    let mut off = 0;
    for s in shapes {
        let len: usize = s.iter().product();
        grads.push(Tensor::new(s, full[off..off + len].to_vec())?);
        off += len;
    }
    Ok(FsdpOutput { grads, loss, comm })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub strategy: String,
    pub p: usize,
    pub l: usize,
    pub heads: usize,
    pub max_diff: f64,
    pub bytes: u64,
}

pub fn write_bench_csv(rows: &[BenchRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "strategy,P,L,heads,max_diff,bytes_moved")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{:e},{}", r.strategy, r.p, r.l, r.heads, r.max_diff, r.bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{MlpConfig, MlpVelocity};
    use crate::rng::seeded;

    fn qkv(heads: usize, l: usize, d: usize, seed: u64) -> (Tensor, Tensor, Tensor) {
        let mut rng = seeded(seed);
        (
            Tensor::randn([heads, l, d], 1.0, &mut rng),
            Tensor::randn([heads, l, d], 1.0, &mut rng),
            Tensor::randn([heads, l, d], 1.0, &mut rng),
        )
    }

    #[test]
    fn split_even_remainder_rule() {
        assert_eq!(split_even(38, 4), vec![0..10, 10..20, 20..29, 29..38]);
        assert_eq!(split_even(2, 4), vec![0..1, 1..2, 2..2, 2..2]);
    }

    #[test]
    fn single_worker_is_plain_attention() {
        let (q, k, v) = qkv(3, 7, 4, 1);
        let norm = QkNorm::unit(4, 1e-6);
        let out = sp_attention(&q, &k, &v, &norm, &ShardLayout::new(1, 7, 3).unwrap()).unwrap();
        assert_eq!(out.output, attention(&q, &k, &v, &norm).unwrap());
        assert_eq!(out.bytes, 0);
    }

    #[test]
    fn sharded_matches_unsharded_with_padding_and_remainder_heads() {
        let norm = QkNorm::unit(8, 1e-6);
        for (p, l, heads) in [(4, 32, 8), (4, 30, 8), (4, 30, 6), (2, 31, 3), (4, 5, 6)] {
            let (q, k, v) = qkv(heads, l, 8, (p * l * heads) as u64);
            let layout = ShardLayout::new(p, l, heads).unwrap();
            let want = attention(&q, &k, &v, &norm).unwrap();
            let got = sp_attention(&q, &k, &v, &norm, &layout).unwrap();
            assert!(got.output.max_abs_diff(&want) < 1e-10, "P={p} L={l} heads={heads}");
            assert_eq!(got.bytes, sp_expected_bytes(&layout, 8));
        }
    }

    #[test]
    fn worker_order_does_not_matter() {
        let (q, k, v) = qkv(6, 30, 4, 3);
        let norm = QkNorm::unit(4, 1e-6);
        let layout = ShardLayout::new(4, 30, 6).unwrap();
        let a = sp_attention_ordered(&q, &k, &v, &norm, &layout, &[0, 1, 2, 3]).unwrap();
        let b = sp_attention_ordered(&q, &k, &v, &norm, &layout, &[3, 1, 0, 2]).unwrap();
        assert_eq!(a.output, b.output);
        assert!(sp_attention_ordered(&q, &k, &v, &norm, &layout, &[0, 0, 1, 2]).is_err());
    }

    #[test]
    fn layout_mismatch_is_contract_error() {
        let (q, k, v) = qkv(2, 8, 4, 4);
        let layout = ShardLayout::new(2, 9, 2).unwrap();
        assert!(matches!(sp_attention(&q, &k, &v, &QkNorm::unit(4, 1e-6), &layout), Err(Error::Contract(_))));
        let mut broken = ShardLayout::new(2, 8, 2).unwrap();
        broken.head_sets = vec![0..1, 0..1];
        assert!(sp_attention(&q, &k, &v, &QkNorm::unit(4, 1e-6), &broken).is_err());
    }

    fn toy_batch(b: usize, seed: u64) -> (MlpVelocity, FlowBatch) {
        let mut rng = seeded(seed);
        let m = MlpVelocity::new(MlpConfig { hidden: 8, ..MlpConfig::default() }, &mut rng).unwrap();
        let x0 = Tensor::randn([b, 2], 1.0, &mut rng);
        let x1 = Tensor::randn([b, 2], 1.0, &mut rng);
        let t = (0..b).map(|i| (i as f64 + 0.5) / b as f64).collect();
        (m, FlowBatch::new(x0, x1, t, Tensor::zeros([b, 0])).unwrap())
    }

    #[test]
    fn hybrid_gradient_equals_full_batch() {
        let (m, batch) = toy_batch(8, 5);
        let (loss, want) = batch_gradient(&m, m.params().tensors(), &batch).unwrap();
        for group in [ShardGroup::full(1), ShardGroup::hybrid(2, 2), ShardGroup::full(4), ShardGroup::hybrid(1, 4)] {
            let out = fsdp_sim_step(&m, &batch, &group).unwrap();
            let diff = flatten(&out.grads).iter().zip(flatten(&want)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-10, "{group:?}: {diff}");
            assert!((out.loss - loss).abs() <= 1e-12);
        }
        let single = fsdp_sim_step(&m, &batch, &ShardGroup::full(1)).unwrap();
        assert_eq!(single.grads, want);
        assert_eq!(single.comm.total(), 0);
    }

    #[test]
    fn hybrid_moves_fewer_bytes_than_full_shard() {
        let (m, batch) = toy_batch(8, 6);
        let full = fsdp_sim_step(&m, &batch, &ShardGroup::full(4)).unwrap().comm;
        let hybrid = fsdp_sim_step(&m, &batch, &ShardGroup::hybrid(2, 2)).unwrap().comm;
        assert!(hybrid.total() < full.total(), "{hybrid:?} vs {full:?}");
        let n = m.params().numel() as u64;
        // FULL over 4: gather 2·(3n/4) per worker, reduce-scatter 3n/4 per worker
        if n.is_multiple_of(4) {
            assert_eq!(full.total(), (4 * 2 * 3 * n / 4 + 3 * n) * 8);
        }
    }

    #[test]
    fn fsdp_worker_order_and_errors() {
        let (m, batch) = toy_batch(8, 7);
        let g = ShardGroup::hybrid(2, 2);
        let a = fsdp_sim_step_ordered(&m, &batch, &g, &[0, 1, 2, 3]).unwrap();
        let b = fsdp_sim_step_ordered(&m, &batch, &g, &[2, 3, 1, 0]).unwrap();
        assert_eq!(a.grads, b.grads);
        let (m6, batch6) = toy_batch(6, 8);
        assert!(matches!(fsdp_sim_step(&m6, &batch6, &g), Err(Error::Contract(_))));
    }
}

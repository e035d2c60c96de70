//! Subcommand implementations. Each writes its artifacts to a run directory
//! and reports a one-line summary on stdout.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use vidgen_core::dit::{attention, Dit, QkNorm, TextEncoder};
use vidgen_core::eval::{eval_w2, gsb_ratio};
use vidgen_core::flowmatch::{Anchor, FlowBatch, TimestepSampler};
use vidgen_core::nn::{MlpConfig, MlpVelocity, VelocityModel};
use vidgen_core::parallel::{
    batch_gradient, fsdp_sim_step, sp_attention, write_bench_csv, BenchRow, ShardGroup, ShardLayout,
};
use vidgen_core::rlhf::{evaluate_reward, rlhf_step, write_reward_csv, RewardKind, RewardRow, RewardSpec, RewardTarget, RlhfContext};
use vidgen_core::rng::named;
use vidgen_core::sampler::{euler_sample, make_schedule, write_trace_csv, TraceRow};
use vidgen_core::vae::CausalVae;
use vidgen_core::video::{latent_shape_for, LATENT_CHANNELS};
use vidgen_core::Tensor;
use vidgen_curation::{curate, fixtures, load_corpus, read_manifest, write_corpus, write_manifest, CurationConfig, StubAesthetic};
use vidgen_encode::{write_spool, BatchService, Dataset, Server, ServerOptions, ServiceConfig};

use crate::adapt::{decode_colours, AdaptPoint, Experiment};
use crate::checkpoint::{self, ModelMeta};
use crate::cli::{BenchArgs, Cli, Command, Common, CurateArgs, EvalArgs, RlhfArgs, SampleArgs, ServeArgs, TrainArgs, RUN_DIR_ENV};
use crate::config::{Preset, RunConfig, SamplerSection};
use crate::error::{file_err, CliError, Result};
use crate::metrics::{MetricRow, MetricsLog};
use crate::toy2d;
use crate::video::{self, caption, ClipPool, VideoMeta};

pub fn run(cli: Cli) -> Result<()> {
    let root = cli.run_dir;
    match cli.command {
        Command::Train(a) => train(a, root),
        Command::Sample(a) => sample(a, root),
        Command::Rlhf(a) => rlhf(a, root),
        Command::Curate(a) => curate_cmd(a),
        Command::Serve(a) => serve(a),
        Command::BenchParallel(a) => bench(a, root),
        Command::Eval(a) => eval(a),
    }
}

/// `--run-dir` if given, else `$VIDGEN_RUN_DIR/<name>` (default root `runs`).
pub fn resolve_run_dir(explicit: Option<PathBuf>, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os(RUN_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(name)
    })
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(n) = common.steps {
        cfg.run.steps = Some(n);
    }
    if let Some(lr) = common.lr {
        cfg.run.lr = Some(lr);
    }
    if cfg.run.log_every == 0 {
        return Err(CliError::Config("run.log_every must be positive".into()));
    }
    Ok(cfg)
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let text = toml::to_string(cfg).map_err(|e| CliError::Config(format!("serialising config: {e}")))?;
    let path = dir.join("config.toml");
    std::fs::write(&path, text).map_err(file_err(&path))
}

fn logs_at(step: usize, total: usize, every: usize) -> bool {
    step.is_multiple_of(every) || step + 1 == total
}

fn train(args: TrainArgs, root: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(p) = args.preset {
        cfg.run.preset = p;
    }
    if let Some(init) = args.init {
        cfg.run.init = Some(init);
    }
    if let Some(p) = cfg.run.init.as_deref().filter(|p| !p.is_file()) {
        return Err(CliError::Config(format!("checkpoint {} does not exist", p.display())));
    }
    let name = if args.toy2d { "toy2d".to_string() } else { cfg.stage().name.to_string() };
    let dir = resolve_run_dir(root, args.common.run_name.as_deref().unwrap_or(&format!("{name}-seed{}", cfg.run.seed)));
    let mut log = MetricsLog::open(&dir)?;
    write_config(&dir, &cfg)?;
    if args.toy2d {
        return train_toy2d(&mut cfg, &dir, &mut log);
    }
    match cfg.run.preset {
        Preset::VaeAdapt => train_adapt(&cfg, args.control, &dir, &mut log),
        Preset::Rlhf => run_rlhf(&cfg, cfg.run.init.clone(), &dir, &mut log),
        _ => train_video(&cfg, &dir, &mut log),
    }
}

fn train_toy2d(cfg: &mut RunConfig, dir: &Path, log: &mut MetricsLog) -> Result<()> {
    if let Some(n) = cfg.run.steps {
        cfg.toy2d.steps = n;
    }
    if let Some(lr) = cfg.run.lr {
        cfg.toy2d.lr = lr;
    }
    let toy = &cfg.toy2d;
    let seed = cfg.run.seed;
    let mut model = match &cfg.run.init {
        Some(p) => match checkpoint::load(p)? {
            (ModelMeta::Toy2d { mlp, .. }, params) => checkpoint::load_mlp(&mlp, &params)?,
            _ => return Err(CliError::Config(format!("{} is not a toy2d checkpoint", p.display()))),
        },
        None => toy2d::init_model(toy, seed)?,
    };
    let w2_init = toy2d::evaluate(&model, toy, toy.sample_steps, toy.sample_shift, seed)?;
    log.append(MetricRow::new("eval", 0).w2(w2_init))?;
    let every = cfg.run.log_every;
    toy2d::train(&mut model, toy, seed, |s, l| {
        if logs_at(s, toy.steps, every) {
            log.append(MetricRow::new("train", s as u64).loss(l))?;
        }
        Ok(())
    })?;
    let w2 = toy2d::evaluate(&model, toy, toy.sample_steps, toy.sample_shift, seed)?;
    log.append(MetricRow::new("eval", toy.steps.max(1) as u64).w2(w2))?;
    checkpoint::save(&dir.join("model.cvwt"), &ModelMeta::Toy2d { mlp: toy.mlp(), toy: toy.clone() }, model.params())?;
    println!("toy2d: {} steps, sliced W2 {w2_init:.4} -> {w2:.4} ({})", toy.steps, dir.display());
    Ok(())
}

fn write_adapt_csv(path: &Path, pre: f64, runs: &[(&str, &[AdaptPoint])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "step", "w2"])?;
    w.write_record(["pre-swap", "0", &pre.to_string()])?;
    for (name, pts) in runs {
        for p in *pts {
            w.write_record([name.to_string(), p.step.to_string(), p.w2.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn train_adapt(cfg: &RunConfig, control: bool, dir: &Path, log: &mut MetricsLog) -> Result<()> {
    let mut acfg = cfg.adapt.clone();
    if let Some(n) = cfg.run.steps {
        acfg.pretrain_steps = n;
    }
    if let Some(lr) = cfg.run.lr {
        acfg.lr = lr;
    }
    let exp = Experiment::new(&acfg)?;
    let seed = cfg.run.seed;
    let every = cfg.run.log_every;
    let model = match &cfg.run.init {
        Some(p) => match checkpoint::load(p)? {
            (ModelMeta::Adapt { mlp, encoder_seed }, params) if encoder_seed == acfg.encoder_a_seed => {
                checkpoint::load_mlp(&mlp, &params)?
            }
            _ => {
                return Err(CliError::Config(format!(
                    "{} is not a model pretrained with encoder seed {}",
                    p.display(),
                    acfg.encoder_a_seed
                )))
            }
        },
        None => exp.pretrain(seed, |s, l| {
            if logs_at(s, acfg.pretrain_steps, every) {
                log.append(MetricRow::new("pretrain", s as u64).loss(l))?;
            }
            Ok(())
        })?,
    };
    let vae_a = CausalVae::new(acfg.encoder_a_seed);
    let pre = exp.evaluate(&model, &vae_a, seed)?;
    log.append(MetricRow::new("pre-swap", 0).w2(pre))?;
    let last = acfg.checkpoints.last().copied().unwrap_or(0);
    let mut on_swap = |s: usize, l: f64| {
        if logs_at(s, last + 1, every) {
            log.append(MetricRow::new("swap-train", s as u64).loss(l))?;
        }
        Ok(())
    };
    let swapped = exp.continue_with(&model, &exp.encoder_b(seed), seed, &mut on_swap)?;
    for p in &swapped {
        log.append(MetricRow::new("swap", p.step as u64).w2(p.w2))?;
    }
    let ctrl = if control {
        let pts = exp.continue_with(&model, &vae_a, seed, |_, _| Ok(()))?;
        for p in &pts {
            log.append(MetricRow::new("control", p.step as u64).w2(p.w2))?;
        }
        pts
    } else {
        Vec::new()
    };
    write_adapt_csv(&dir.join("adapt.csv"), pre, &[("swap", &swapped), ("control", &ctrl)])?;
    checkpoint::save(
        &dir.join("model.cvwt"),
        &ModelMeta::Adapt { mlp: acfg.mlp(), encoder_seed: acfg.encoder_a_seed },
        model.params(),
    )?;
    let pts: Vec<String> = swapped.iter().map(|p| format!("{}:{:.4}", p.step, p.w2)).collect();
    println!("vae-adapt: pre-swap W2 {pre:.4}; after swap {} ({})", pts.join(" "), dir.display());
    Ok(())
}

fn init_dit(cfg: &RunConfig) -> Result<(Dit, VideoMeta)> {
    let mut meta = VideoMeta::from_config(cfg);
    match &cfg.run.init {
        Some(p) => match checkpoint::load(p)? {
            (ModelMeta::Video(m), params) => {
                meta.model = m.model.clone();
                meta.vae_seed = m.vae_seed;
                meta.text_seed = m.text_seed;
                Ok((checkpoint::load_dit(&m, params)?, meta))
            }
            _ => Err(CliError::Config(format!("{} is not a video checkpoint", p.display()))),
        },
        None => Ok((Dit::new(cfg.model.clone(), cfg.run.seed)?, meta)),
    }
}

fn train_video(cfg: &RunConfig, dir: &Path, log: &mut MetricsLog) -> Result<()> {
    let stage = cfg.stage();
    let (mut model, meta) = init_dit(cfg)?;
    let pool = ClipPool::build(&stage, &meta, cfg.data.pool, cfg.run.seed)?;
    let anchor = (cfg.run.preset == Preset::Sft && cfg.data.anchor_weight > 0.0)
        .then(|| Anchor { reference: model.params().clone(), weight: cfg.data.anchor_weight });
    let every = cfg.run.log_every;
    let mut last = f64::NAN;
    video::train(&mut model, &stage, &pool, cfg.run.seed, anchor, |s, l| {
        last = l;
        if logs_at(s, stage.steps, every) {
            log.append(MetricRow::new("train", s as u64).loss(l))?;
        }
        Ok(())
    })?;
    checkpoint::save(&dir.join("model.cvwt"), &ModelMeta::Video(meta), model.params())?;
    println!("{}: {} steps at lr {:e}, final loss {last:.5} ({})", stage.name, stage.steps, stage.lr, dir.display());
    Ok(())
}

fn rlhf(args: RlhfArgs, root: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    cfg.run.preset = Preset::Rlhf;
    if let Some(k) = args.k {
        cfg.rlhf.k = k;
    }
    let dir = resolve_run_dir(root, args.common.run_name.as_deref().unwrap_or(&format!("rlhf-seed{}", cfg.run.seed)));
    let mut log = MetricsLog::open(&dir)?;
    write_config(&dir, &cfg)?;
    run_rlhf(&cfg, args.checkpoint.or(cfg.run.init.clone()), &dir, &mut log)
}

/// Reward ascent on a video DiT (or on a toy MLP checkpoint with a
/// full-sample reward). `reward_c` tracks a frozen random scorer that the
/// run does not optimise.
fn run_rlhf(cfg: &RunConfig, init: Option<PathBuf>, dir: &Path, log: &mut MetricsLog) -> Result<()> {
    let mut rcfg = cfg.rlhf.clone();
    if let Some(lr) = cfg.run.lr {
        rcfg.lr = lr;
    }
    rcfg.validate()?;
    let stage = cfg.stage();
    let steps = cfg.run.steps.unwrap_or(stage.steps);
    let seed = cfg.run.seed;

    let meta = init.as_deref().map(checkpoint::load).transpose()?;
    let (mut model, vae, x_shape, cond): (Box<dyn VelocityModel>, Option<CausalVae>, Vec<usize>, Tensor) = match meta {
        Some((ModelMeta::Toy2d { mlp, .. } | ModelMeta::Adapt { mlp, .. }, params)) => {
            if rcfg.reward.target == RewardTarget::FirstFrame {
                return Err(CliError::Config("first-frame rewards need a video checkpoint".into()));
            }
            let b = stage.video_batch.max(1) * 16;
            (Box::new(checkpoint::load_mlp(&mlp, &params)?), None, vec![b, mlp.data_dim], Tensor::zeros([b, 0]))
        }
        other => {
            let (model, mut meta) = match other {
                Some((ModelMeta::Video(m), params)) => {
                    let d = checkpoint::load_dit(&m, params)?;
                    (d, m)
                }
                _ => {
                    let c = RunConfig { run: crate::config::RunSection { init: None, ..cfg.run.clone() }, ..cfg.clone() };
                    init_dit(&c)?
                }
            };
            meta.frames = rcfg.frames_short;
            let b = stage.video_batch.max(1);
            let text = TextEncoder::new(meta.text_dim, meta.text_seed);
            let prompts: Vec<String> = (0..b).map(caption).collect();
            let refs: Vec<&str> = prompts.iter().map(String::as_str).collect();
            let [t, c, h, w] = latent_shape_for(meta.frames, stage.height, stage.width);
            (Box::new(model), Some(CausalVae::new(meta.vae_seed)), vec![b, t, c, h, w], text.encode_batch(&refs))
        }
    };

    let control = RewardSpec { target: rcfg.reward.target, kind: RewardKind::RandomMlp { seed, hidden: 16 } };
    let schedule = make_schedule(rcfg.steps, rcfg.shift)?;
    let eval_x0 = Tensor::randn(x_shape.clone(), 1.0, &mut named(seed, "rlhf-eval-noise"));
    let ctx = RlhfContext { cfg: &rcfg, x_shape, cond: cond.clone(), vae: vae.as_ref(), reference: None };
    let mut rng = named(seed, "rlhf");
    let mut rows = Vec::new();
    let score = |m: &dyn VelocityModel, spec: &RewardSpec| evaluate_reward(m, spec, &schedule, &eval_x0, &cond, vae.as_ref());
    for step in 0..=steps {
        let grad_norm = if step == 0 { 0.0 } else { rlhf_step(model.as_mut(), &ctx, &mut rng)?.grad_norm };
        if logs_at(step, steps + 1, cfg.run.log_every) {
            let row = RewardRow {
                step,
                reward_a: score(model.as_ref(), &rcfg.reward)?,
                reward_c: score(model.as_ref(), &control)?,
                grad_norm,
            };
            log.append(MetricRow::new("rlhf", step as u64).reward(row.reward_a))?;
            rows.push(row);
        }
    }
    let path = dir.join("reward.csv");
    write_reward_csv(&rows, BufWriter::new(File::create(&path).map_err(file_err(&path))?)).map_err(file_err(&path))?;
    let (first, last) = (rows.first().map_or(f64::NAN, |r| r.reward_a), rows.last().map_or(f64::NAN, |r| r.reward_a));
    println!("rlhf: {steps} steps, reward {first:.5} -> {last:.5} ({})", dir.display());
    Ok(())
}

fn write_samples_csv(path: &Path, header: &[&str], samples: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in samples.values().chunks(header.len()) {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn sample(args: SampleArgs, root: Option<PathBuf>) -> Result<()> {
    let (meta, params) = checkpoint::load(&args.checkpoint)?;
    let dir = resolve_run_dir(root, args.run_name.as_deref().unwrap_or(&format!("sample-seed{}", args.seed)));
    std::fs::create_dir_all(&dir).map_err(file_err(&dir))?;
    let mut trace = Vec::<TraceRow>::new();
    let tr = args.trace.then_some(&mut trace);
    match meta {
        ModelMeta::Toy2d { mlp, toy } => {
            let model = checkpoint::load_mlp(&mlp, &params)?;
            let steps = args.sample_steps.unwrap_or(toy.sample_steps);
            let x = toy2d::generate_traced(&model, args.n, steps, args.shift.unwrap_or(toy.sample_shift), args.seed, tr)?;
            write_samples_csv(&dir.join("samples.csv"), &["x0", "x1"], &x)?;
            println!("sampled {} points ({})", args.n, dir.display());
        }
        ModelMeta::Adapt { mlp, encoder_seed } => {
            let model = checkpoint::load_mlp(&mlp, &params)?;
            let n = args.n;
            let x0 = Tensor::randn([n, LATENT_CHANNELS], 1.0, &mut named(args.seed, "adapt-sample-noise"));
            let schedule = make_schedule(args.sample_steps.unwrap_or(25), args.shift.unwrap_or(1.0))?;
            let z = euler_sample(&model, model.params().tensors(), &x0, &schedule, None, &Tensor::zeros([n, 0]), tr)?;
            let rgb = decode_colours(&CausalVae::new(encoder_seed), &z)?;
            write_samples_csv(&dir.join("samples.csv"), &["r", "g", "b"], &rgb)?;
            println!("sampled {n} colours ({})", dir.display());
        }
        ModelMeta::Video(vm) => {
            let model = checkpoint::load_dit(&vm, params)?;
            let d = SamplerSection::default();
            let prompts = if args.prompt.is_empty() { vec![caption(0)] } else { args.prompt.clone() };
            let clips = video::sample(
                &model,
                &vm,
                &prompts,
                args.sample_steps.unwrap_or(d.steps),
                args.shift.unwrap_or(d.shift),
                args.cfg_scale.unwrap_or(d.cfg_scale),
                args.seed,
                tr,
            )?;
            let mut index = String::new();
            for (i, (clip, p)) in clips.iter().zip(&prompts).enumerate() {
                let path = dir.join(format!("sample-{i:03}.cvpx"));
                let f = File::create(&path).map_err(file_err(&path))?;
                clip.write_cvpx(BufWriter::new(f))?;
                index.push_str(&format!("sample-{i:03}.cvpx\t{p}\n"));
            }
            let ip = dir.join("prompts.tsv");
            std::fs::write(&ip, index).map_err(file_err(&ip))?;
            println!("sampled {} clips of {}x{}x{} ({})", clips.len(), vm.frames, vm.height, vm.width, dir.display());
        }
    }
    if args.trace {
        let path = dir.join("trace.csv");
        write_trace_csv(&trace, BufWriter::new(File::create(&path).map_err(file_err(&path))?)).map_err(file_err(&path))?;
    }
    Ok(())
}

fn curate_cmd(a: CurateArgs) -> Result<()> {
    if a.write_fixture {
        write_corpus(&a.corpus, &fixtures::fixture_corpus())?;
    }
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(file_err(p))?;
            toml::from_str::<CurationConfig>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => CurationConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(threads, seed, top_p, fg_weight, k, cut_threshold, blur_min, motion_min);
    cfg.validate()?;
    let sources = load_corpus(&a.corpus)?;
    let recs = curate(&sources, &cfg, &StubAesthetic)?;
    let out = a.out.unwrap_or_else(|| a.corpus.join("manifest.jsonl"));
    let mut w = BufWriter::new(File::create(&out).map_err(file_err(&out))?);
    write_manifest(&recs, &mut w)?;
    w.flush().map_err(file_err(&out))?;
    let kept = recs.iter().filter(|r| r.kept).count();
    println!("curated {} sources into {} clips, {kept} kept ({})", sources.len(), recs.len(), out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    use vidgen_curation::Aspect;
    let dataset = match (&a.manifest, &a.corpus) {
        (Some(m), Some(c)) => {
            let f = std::fs::File::open(m).map_err(file_err(m))?;
            let recs = read_manifest(std::io::BufReader::new(f))?;
            Dataset::from_manifest(&recs, &load_corpus(c)?)?
        }
        _ if a.synthetic => Dataset::synthetic(&[(Aspect::Square, 1), (Aspect::W16H9, 1), (Aspect::Square, 2)], 8, a.seed)?,
        _ => return Err(CliError::Config("serve needs --manifest with --corpus, or --synthetic".into())),
    };
    let cfg = ServiceConfig { seed: a.seed, batch_size: a.batch_size, world_size: a.world_size, ..ServiceConfig::default() };
    let service = Arc::new(BatchService::new(Arc::new(dataset), cfg)?);
    if let Some(dir) = a.spool_dir {
        let n = write_spool(&service, &dir, 0..a.steps.unwrap_or(0))?;
        println!("spooled {n} batches to {}", dir.display());
        return Ok(());
    }
    let server = Server::bind(a.bind.as_str(), service, ServerOptions::default())?;
    println!("serving on {}", server.local_addr());
    std::io::stdout().flush()?;
    server.wait();
    Ok(())
}

/// Ulysses attention over the (P, L, heads) grid and FSDP gradient
/// reductions, each against its single-worker reference.
pub fn bench_rows(seed: u64) -> Result<Vec<BenchRow>> {
    let d = 8;
    let norm = QkNorm::unit(d, 1e-6);
    let mut rows = Vec::new();
    for p in [1, 2, 4] {
        for l in [30, 32, 64] {
            for heads in [6, 8] {
                let mut rng = named(seed, &format!("bench-sp-{p}-{l}-{heads}"));
                let q = Tensor::randn([heads, l, d], 1.0, &mut rng);
                let k = Tensor::randn([heads, l, d], 1.0, &mut rng);
                let v = Tensor::randn([heads, l, d], 1.0, &mut rng);
                let reference = attention(&q, &k, &v, &norm)?;
                let out = sp_attention(&q, &k, &v, &norm, &ShardLayout::new(p, l, heads)?)?;
                rows.push(BenchRow {
                    strategy: "ULYSSES_SP".into(),
                    p,
                    l,
                    heads,
                    max_diff: out.output.max_abs_diff(&reference),
                    bytes: out.bytes,
                });
            }
        }
    }
    let model = MlpVelocity::new(MlpConfig { data_dim: 4, hidden: 16, depth: 2, ..MlpConfig::default() }, &mut named(seed, "bench-mlp"))?;
    let mut rng = named(seed, "bench-fsdp");
    let b = 16;
    let batch = FlowBatch::draw(Tensor::randn([b, 4], 1.0, &mut rng), Tensor::zeros([b, 0]), &TimestepSampler::new(Default::default(), 1.0)?, &mut rng)?;
    let (_, reference) = batch_gradient(&model, model.params().tensors(), &batch)?;
    let groups = [("FULL_SHARD", ShardGroup::full(1)), ("FULL_SHARD", ShardGroup::full(2)), ("FULL_SHARD", ShardGroup::full(4)), ("HYBRID_SHARD", ShardGroup::hybrid(2, 2))];
    for (name, g) in groups {
        let out = fsdp_sim_step(&model, &batch, &g)?;
        let max_diff = out.grads.iter().zip(&reference).map(|(a, r)| a.max_abs_diff(r)).fold(0.0, f64::max);
        rows.push(BenchRow { strategy: name.into(), p: g.workers(), l: b, heads: 0, max_diff, bytes: out.comm.total() });
    }
    Ok(rows)
}

fn bench(a: BenchArgs, root: Option<PathBuf>) -> Result<()> {
    let rows = bench_rows(a.seed)?;
    let out = match a.out {
        Some(p) => p,
        None => {
            let dir = resolve_run_dir(root, "bench-parallel");
            std::fs::create_dir_all(&dir).map_err(file_err(&dir))?;
            dir.join("bench.csv")
        }
    };
    let f = File::create(&out).map_err(file_err(&out))?;
    write_bench_csv(&rows, BufWriter::new(f)).map_err(file_err(&out))?;
    write_bench_csv(&rows, std::io::stdout().lock())?;
    let worst = rows.iter().map(|r| r.max_diff).fold(0.0, f64::max);
    eprintln!("{} rows, worst max_diff {worst:e} ({})", rows.len(), out.display());
    Ok(())
}

/// Reads every numeric column of a headed CSV into `[rows, columns]`.
pub fn read_samples(path: &Path) -> Result<Tensor> {
    let mut r = csv::Reader::from_path(path)?;
    let cols = r.headers()?.len();
    let mut v = Vec::new();
    for (i, rec) in r.records().enumerate() {
        for field in rec?.iter() {
            v.push(field.trim().parse::<f64>().map_err(|e| {
                CliError::Config(format!("{}: row {}: {field:?}: {e}", path.display(), i + 1))
            })?);
        }
    }
    let n = v.len() / cols.max(1);
    Ok(Tensor::new([n, cols], v)?)
}

fn eval(a: EvalArgs) -> Result<()> {
    if let Some(g) = a.gsb {
        println!("{:?}", gsb_ratio(g[0], g[1], g[2])?);
    }
    if let Some(p) = a.w2 {
        let (x, y) = (read_samples(&p[0])?, read_samples(&p[1])?);
        println!("{:?}", eval_w2(&x, &y)?);
    }
    Ok(())
}

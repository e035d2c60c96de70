use vidgen_core::nn::{MlpConfig, MlpVelocity};
use vidgen_core::rlhf::{evaluate_reward, rlhf_step, RewardKind, RewardSpec, RewardTarget, RlhfConfig, RlhfContext};
use vidgen_core::rng::{seeded, stream};
use vidgen_core::sampler::make_schedule;
use vidgen_core::Tensor;

fn spec(kind: RewardKind) -> RewardSpec {
    RewardSpec { target: RewardTarget::FullSample, kind }
}

fn trained(seed: u64, iters: usize) -> (MlpVelocity, MlpVelocity, RewardSpec) {
    let init = MlpVelocity::new(MlpConfig { hidden: 32, ..MlpConfig::default() }, &mut seeded(seed)).unwrap();
    let mut model = init.clone();
    let cfg = RlhfConfig { lr: 0.01, reward: spec(RewardKind::TargetMean { mu: vec![1.5, -1.0] }), ..RlhfConfig::default() };
    let ctx = RlhfContext { cfg: &cfg, x_shape: vec![32, 2], cond: Tensor::zeros([32, 0]), vae: None, reference: None };
    let mut rng = stream(seed, 1);
    for _ in 0..iters {
        rlhf_step(&mut model, &ctx, &mut rng).unwrap();
    }
    (init, model, cfg.reward.clone())
}

fn eval_batch(seed: u64) -> Tensor {
    Tensor::randn([256, 2], 1.0, &mut stream(seed, 99))
}

fn eval(m: &MlpVelocity, s: &RewardSpec, x: &Tensor) -> f64 {
    let sched = make_schedule(20, 1.0).unwrap();
    evaluate_reward(m, s, &sched, x, &Tensor::zeros([x.shape()[0], 0]), None).unwrap()
}

#[test]
fn target_mean_reward_improves() {
    for seed in 0..5 {
        let (init, model, reward) = trained(seed, 200);
        let x = eval_batch(seed);
        let (a0, a1) = (eval(&init, &reward, &x), eval(&model, &reward, &x));
        assert!(a1 > a0 && a1 > 0.1 * a0, "seed {seed}: {a0} -> {a1}");
    }
}

#[test]
fn misaligned_scorer_follows_the_optimized_reward() {
    // The frozen scorer moves toward whatever it assigns to the target
    // region of reward (a), up or down, regardless of its own preferences.
    let (init, model, _) = trained(3, 200);
    let x = eval_batch(3);
    let at_target = Tensor::new([1, 2], vec![1.5, -1.0]).unwrap();
    let (mut up, mut down) = (0, 0);
    for scorer_seed in 0..12 {
        let kind = RewardKind::RandomMlp { seed: scorer_seed, hidden: 16 };
        let c0 = eval(&init, &spec(kind.clone()), &x);
        let c1 = eval(&model, &spec(kind.clone()), &x);
        let c_star = kind.score(&at_target).unwrap().item();
        if (c_star - c0).abs() > 0.05 {
            assert_eq!((c1 - c0).signum(), (c_star - c0).signum(), "scorer {scorer_seed}: {c0} -> {c1}, target {c_star}");
        }
        if c1 > c0 { up += 1 } else { down += 1 }
    }
    assert!(up > 0 && down > 0, "up {up}, down {down}");
}

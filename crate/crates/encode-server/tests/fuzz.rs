use proptest::prelude::*;
use rand::Rng;
use vidgen_core::Tensor;
use vidgen_encode::protocol::{decode, encode, read_message, to_f32_grid, FeatureBatch, Message};
use vidgen_encode::ProtocolErrorKind;

fn sample_batch() -> FeatureBatch {
    FeatureBatch {
        step: 12,
        rank: 3,
        bucket: 24,
        latents: Tensor::new([2, 2, 16, 1, 2], (0..128).map(|i| (i as f64).sin()).collect()).unwrap(),
        text_emb: to_f32_grid(&Tensor::new([2, 4], (0..8).map(|i| i as f64 / 3.0).collect()).unwrap()),
        sample_ids: vec![17, 2],
    }
}

#[test]
fn random_mutations_parse_or_fail_cleanly() {
    let seeds = [
        encode(&Message::Batch(FeatureBatch { latents: to_f32_grid(&sample_batch().latents), ..sample_batch() })),
        encode(&Message::Request { step: 99, rank: 1 }),
        encode(&Message::Error { code: 3, message: "no bucket".into() }),
    ];
    let mut rng = vidgen_core::rng::seeded(0xf022);
    let (mut ok, mut err) = (0u32, 0u32);
    for i in 0..100_000 {
        let mut bytes = seeds[i % 3].clone();
        for _ in 0..rng.random_range(1..=4) {
            match rng.random_range(0..4) {
                0 => {
                    let j = rng.random_range(0..bytes.len());
                    bytes[j] = rng.random();
                }
                1 => {
                    let j = rng.random_range(0..bytes.len());
                    bytes[j] ^= 1 << rng.random_range(0..8);
                }
                2 => bytes.truncate(rng.random_range(0..=bytes.len())),
                _ => {
                    let j = rng.random_range(0..=bytes.len());
                    bytes.insert(j, rng.random());
                }
            }
            if bytes.is_empty() {
                break;
            }
        }
        match decode(&bytes) {
            Ok((msg, used)) => {
                assert!(used <= bytes.len());
                // whatever parsed re-encodes to the bytes it consumed
                assert_eq!(encode(&msg), bytes[..used]);
                ok += 1;
            }
            Err(e) => {
                assert!(e.offset <= bytes.len(), "{e:?} for {} bytes", bytes.len());
                err += 1;
            }
        }
        let _ = read_message(&mut &bytes[..]);
    }
    assert!(ok > 0 && err > 50_000, "ok {ok} err {err}");
}

#[test]
fn unknown_dtype_is_reported_at_its_offset() {
    let mut bytes = encode(&Message::Batch(to_grid(sample_batch())));
    // header 21 bytes, then name len 1 + "latents" 7
    assert_eq!(bytes[29], 0x00);
    bytes[29] = 0x07;
    let e = decode(&bytes).unwrap_err();
    assert_eq!((e.offset, e.kind), (29, ProtocolErrorKind::UnknownDtype(7)));
}

#[test]
fn missing_tensor_is_invalid() {
    let mut bytes = encode(&Message::Batch(to_grid(sample_batch())));
    bytes[20] = 2;
    let used = decode(&bytes);
    assert!(matches!(used, Err(e) if matches!(e.kind, ProtocolErrorKind::Invalid(_))));
}

fn to_grid(b: FeatureBatch) -> FeatureBatch {
    FeatureBatch { latents: to_f32_grid(&b.latents), text_emb: to_f32_grid(&b.text_emb), ..b }
}

proptest! {
    #[test]
    fn batch_round_trip_is_identity(
        step in any::<u64>(), rank in any::<u32>(), bucket in any::<u16>(),
        b in 1usize..4, t in 1usize..3, h in 1usize..3, d in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = vidgen_core::rng::seeded(seed);
        let latents = to_f32_grid(&Tensor::randn([b, t, 16, h, 2], 1.0, &mut rng));
        let text_emb = to_f32_grid(&Tensor::randn([b, d], 1.0, &mut rng));
        let sample_ids = (0..b).map(|_| rng.random()).collect();
        let m = Message::Batch(FeatureBatch { step, rank, bucket, latents, text_emb, sample_ids });
        let bytes = encode(&m);
        prop_assert_eq!(decode(&bytes).unwrap(), (m, bytes.len()));
    }

    #[test]
    fn every_prefix_is_truncated(cut in 0usize..200) {
        let bytes = encode(&Message::Batch(to_grid(sample_batch())));
        let cut = cut.min(bytes.len() - 1);
        let e = decode(&bytes[..cut]).unwrap_err();
        prop_assert!(e.is_truncated());
    }
}

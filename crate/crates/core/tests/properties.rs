mod common;

use coded_exposure::encoder::{encode, normalize, read_coded, write_coded};
use coded_exposure::hwsim::{charge_quantize_clip, run_capture, HwConfig, TileShiftRegister};
use coded_exposure::ingest::{area_resize, load_frame_sequence, write_frame_sequence, Frame, LoadOptions};
use coded_exposure::patterns::{expand, load_pattern, random_pattern, save_pattern, sparse_random, FullMask};
use coded_exposure::rng::seeded_rng;
use coded_exposure::stats::{collect_tiles, CorrelationAccumulator, SampleMatrix};
use coded_exposure::synthetic::{synthetic_clip, CorpusConfig};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn ok(check: Check) -> Result<(), TestCaseError> {
    check.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoder_matches_oracle(seed: u64, slots in 1usize..=16, h in 1usize..=32, w in 1usize..=32) {
        let mut rng = seeded_rng(seed);
        let clip = random_clip(&mut rng, slots, h, w);
        let mask = random_mask(&mut rng, slots, h, w);
        ok(check_encode_matches_oracle(&clip, &mask))?;
    }

    #[test]
    fn encode_is_linear(seed: u64, slots in 1usize..=16, h in 1usize..=12, w in 1usize..=12, a in 0.0f64..=1.0, frac in 0.0f64..=1.0) {
        let mut rng = seeded_rng(seed);
        let y1 = random_clip(&mut rng, slots, h, w);
        let y2 = random_clip(&mut rng, slots, h, w);
        let mask = random_mask(&mut rng, slots, h, w);
        ok(check_encode_linearity(&y1, &y2, &mask, a, frac * (1.0 - a), 1e-6))?;
    }

    #[test]
    fn more_exposure_never_lowers_values(seed: u64, slots in 1usize..=16, h in 1usize..=12, w in 1usize..=12) {
        let mut rng = seeded_rng(seed);
        let clip = random_clip(&mut rng, slots, h, w);
        let low = random_mask(&mut rng, slots, h, w);
        let extra = random_mask(&mut rng, slots, h, w);
        let bits = low.bits().iter().zip(extra.bits()).map(|(a, b)| a | b).collect();
        let high = FullMask::new(slots, h, w, bits).unwrap();
        ok(check_mask_monotonic(&clip, &low, &high))?;
    }

    #[test]
    fn normalized_values_stay_in_unit_range(seed: u64, slots in 1usize..=16, h in 1usize..=12, w in 1usize..=12) {
        let mut rng = seeded_rng(seed);
        let clip = random_clip(&mut rng, slots, h, w);
        let mask = random_mask(&mut rng, slots, h, w);
        let coded = normalize(&encode(&clip, &mask).unwrap()).unwrap();
        for (&v, &n) in coded.values().iter().zip(coded.counts()) {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            if n == 0 {
                prop_assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn pearson_invariants(seed: u64, pixels in 2usize..=16, samples in 2usize..=64, constant_row: bool) {
        let mut rng = seeded_rng(seed);
        let mut data: Vec<f64> = (0..pixels * samples).map(|_| rng.gen_range(-3.0..3.0)).collect();
        if constant_row {
            data[..samples].fill(1.5);
        }
        let sample = SampleMatrix::new(pixels, samples, 1, data).unwrap();
        ok(check_pearson_invariants(&sample))?;
        let row = rng.gen_range(0..pixels);
        ok(check_pearson_affine_invariance(&sample, row, rng.gen_range(0.1..10.0), rng.gen_range(-5.0..5.0), 1e-6))?;
    }

    #[test]
    fn streaming_correlation_matches_one_shot(seed: u64, pixels in 2usize..=9, chunks in 1usize..=6) {
        let mut rng = seeded_rng(seed);
        let parts: Vec<SampleMatrix> = (0..chunks)
            .map(|_| {
                let s = rng.gen_range(1..=20);
                let data = (0..pixels * s).map(|_| rng.gen_range(0.0..1.0)).collect();
                SampleMatrix::new(pixels, s, s, data).unwrap()
            })
            .collect();
        let total: usize = parts.iter().map(|p| p.samples()).sum();
        prop_assume!(total >= 2);
        let mut joined = vec![0.0; pixels * total];
        let mut col = 0;
        for part in &parts {
            for p in 0..pixels {
                joined[p * total + col..p * total + col + part.samples()].copy_from_slice(part.row(p));
            }
            col += part.samples();
        }
        let one_shot = coded_exposure::stats::pearson(&SampleMatrix::new(pixels, total, total, joined).unwrap()).unwrap();
        let mut acc = CorrelationAccumulator::new(pixels);
        for part in &parts {
            acc.add(part).unwrap();
        }
        let streamed = acc.finish().unwrap();
        for (a, b) in one_shot.data().iter().zip(streamed.data()) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn sparse_random_exposes_once(slots in 1usize..=16, tile in 1usize..=8, seed: u64) {
        ok(check_sparse_single_exposure(&sparse_random(slots, tile, seed).unwrap()))?;
    }

    #[test]
    fn expanded_masks_repeat_the_tile(seed: u64, slots in 1usize..=8, tile in 1usize..=8, gh in 1usize..=4, gw in 1usize..=4) {
        let mut rng = seeded_rng(seed);
        let pattern = random_tile_pattern(&mut rng, slots, tile);
        ok(check_tile_repetition(&pattern, tile * gh, tile * gw))?;
    }

    #[test]
    fn pattern_text_round_trip(seed: u64, slots in 1usize..=16, tile in 1usize..=8, with_seed: bool) {
        let mut rng = seeded_rng(seed);
        let pattern = random_tile_pattern(&mut rng, slots, tile).with_seed(with_seed.then_some(seed));
        ok(check_pattern_round_trip(&pattern))?;
    }

    #[test]
    fn coded_bytes_round_trip(seed: u64, h in 1usize..=24, w in 1usize..=24, normalized: bool) {
        let mut rng = seeded_rng(seed);
        ok(check_coded_round_trip(&f32_coded_image(&mut rng, h, w, normalized)))?;
    }

    #[test]
    fn charge_quantized_encodings_survive_the_file_format(seed: u64, slots in 1usize..=16, h in 1usize..=12, w in 1usize..=12) {
        let mut rng = seeded_rng(seed);
        let clip = charge_quantize_clip(&random_clip(&mut rng, slots, h, w)).unwrap();
        let coded = encode(&clip, &random_mask(&mut rng, slots, h, w)).unwrap();
        ok(check_coded_round_trip(&coded))?;
    }

    #[test]
    fn seeded_generators_are_bitwise_deterministic(seed: u64, index in 0usize..50) {
        let cfg = CorpusConfig { clips: 1, slots: 4, height: 8, width: 8, seed, max_blobs: 3 };
        let a = synthetic_clip(&cfg, index).unwrap();
        let b = synthetic_clip(&cfg, index).unwrap();
        for (fa, fb) in a.frames().iter().zip(b.frames()) {
            prop_assert!(fa.data().iter().zip(fb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        prop_assert_eq!(random_pattern(8, 4, 0.5, seed).unwrap(), random_pattern(8, 4, 0.5, seed).unwrap());
        prop_assert_eq!(sparse_random(8, 4, seed).unwrap(), sparse_random(8, 4, seed).unwrap());
    }

    #[test]
    fn shift_register_delivers_bits_in_place(bits in proptest::collection::vec(0u8..=1, 1..=64), prefix in proptest::collection::vec(0u8..=1, 0..=64)) {
        let mut chain = TileShiftRegister::new(bits.len());
        for &b in &prefix {
            chain.clock(b).unwrap();
        }
        chain.stream_pattern(&bits).unwrap();
        for (k, &b) in bits.iter().enumerate() {
            prop_assert_eq!(chain.bit(k), Some(b));
        }
        prop_assert_eq!(chain.clock_count(), (prefix.len() + bits.len()) as u64);
        chain.power_gate();
        prop_assert!((0..bits.len()).all(|k| chain.bit(k).is_none()));
        chain.power_up();
        prop_assert!((0..bits.len()).all(|k| chain.bit(k) == Some(0)));
    }

    #[test]
    fn hardware_capture_equals_encoder(seed: u64, slots in 1usize..=16, tile_log in 0u32..=3, gh in 1usize..=4, gw in 1usize..=4) {
        let tile = 1usize << tile_log;
        let (h, w) = (tile * gh, tile * gw);
        let mut rng = seeded_rng(seed);
        let pattern = random_tile_pattern(&mut rng, slots, tile);
        let clip = charge_quantize_clip(&random_clip(&mut rng, slots, h, w)).unwrap();
        let capture = run_capture(&clip, &pattern, &HwConfig::default()).unwrap();
        let coded = encode(&clip, &expand(&pattern, h, w).unwrap()).unwrap();
        prop_assert_eq!(capture.to_coded_image().unwrap(), coded);
        let per_slot = 2 * (tile * tile) as u64 + 2;
        prop_assert_eq!(capture.timing.total_cycles, slots as u64 * per_slot);
        prop_assert_eq!(capture.traces.len(), slots);
    }

    #[test]
    fn area_resize_preserves_the_mean(seed: u64, h in 1usize..=24, w in 1usize..=24, oh in 1usize..=24, ow in 1usize..=24) {
        let mut rng = seeded_rng(seed);
        let frame = Frame::new(h, w, (0..h * w).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap();
        let out = area_resize(&frame, oh, ow).unwrap();
        prop_assert_eq!(out.dims(), (oh, ow));
        prop_assert!((out.mean() - frame.mean()).abs() < 1e-9);
    }

    #[test]
    fn tile_collection_keeps_every_value(seed: u64, tile in 1usize..=4, gh in 1usize..=3, gw in 1usize..=3, images in 1usize..=3) {
        let mut rng = seeded_rng(seed);
        let (h, w) = (tile * gh, tile * gw);
        let batch: Vec<_> = (0..images).map(|_| f32_coded_image(&mut rng, h, w, false)).collect();
        let sample = collect_tiles(&batch, tile).unwrap();
        prop_assert_eq!(sample.samples(), images * gh * gw);
        for (b, img) in batch.iter().enumerate() {
            for i in 0..h {
                for j in 0..w {
                    let col = b * gh * gw + (i / tile) * gw + j / tile;
                    let p = (i % tile) * tile + j % tile;
                    prop_assert_eq!(sample.get(p, col), img.value(i, j));
                }
            }
        }
    }
}

#[test]
fn files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded_rng(11);

    let pattern = random_pattern(16, 8, 0.5, 4).unwrap();
    let path = dir.path().join("p.cepat");
    save_pattern(&pattern, &path).unwrap();
    assert_eq!(load_pattern(&path).unwrap(), pattern);

    let clip = charge_quantize_clip(&random_clip(&mut rng, 4, 16, 16)).unwrap();
    let coded = encode(&clip, &expand(&pattern, 16, 16).unwrap()).unwrap_err();
    assert_eq!(coded.kind(), "dimension_mismatch");
    let short = random_pattern(4, 8, 0.5, 4).unwrap();
    let coded = encode(&clip, &expand(&short, 16, 16).unwrap()).unwrap();
    let path = dir.path().join("x.snpx");
    write_coded(&coded, &path).unwrap();
    assert_eq!(read_coded(&path).unwrap(), coded);

    let frames = dir.path().join("frames");
    let quantized = coded_exposure::ingest::VideoClip::new(
        clip.frames()
            .iter()
            .map(|f| f.map(|v| (v * 65535.0).round() / 65535.0).unwrap())
            .collect(),
    )
    .unwrap();
    write_frame_sequence(&quantized, &frames, 16).unwrap();
    let back = load_frame_sequence(&frames, LoadOptions { format: None, linearize: false }).unwrap();
    assert_eq!(back, quantized);
}

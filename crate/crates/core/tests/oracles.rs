//! Brute-force oracles for the geometry, memory, loss and selection code.
//! Every oracle here re-derives its answer with plain loops over pixel
//! coordinates and never calls the function it checks.

use lookout_core::geometry::{BlockIndex, GridGeometry, Visited, PATCH_COUNT};
use lookout_core::image::{Image, Mask};
use lookout_core::loss::{attention_loss, attention_target, local_loss, scale_losses};
use lookout_core::memory::{slot_of, FitInFeatureVector, FitInMatrix};
use lookout_core::metrics::{mse_metric, rmse_metric};
use lookout_core::policy::{choose, PolicyContext, PolicyKind};
use lookout_core::retina::{extract_retina, ground_truth_crop};
use lookout_core::select::{select_next, SelectMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _, _| rng.random::<f32>())
}

fn block(c: usize, r: usize) -> BlockIndex {
    BlockIndex::new(c, r).unwrap()
}

#[test]
fn retina_center_is_a_bit_exact_crop() {
    let g = GridGeometry::FULL;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pano = random_image(&mut rng, 128, 256);
    for (c, r) in [(3, 2), (8, 4), (14, 6)] {
        let gl = extract_retina(&g, &pano, block(c, r)).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(gl.canvas.pixel(16 + y, 16 + x), pano.pixel(r * 16 + y, c * 16 + x));
            }
        }
    }
}

#[test]
fn retina_ring_is_piecewise_constant_pooling() {
    let g = GridGeometry::FULL;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pano = random_image(&mut rng, 128, 256);
    let center = block(0, 3);
    let gl = extract_retina(&g, &pano, center).unwrap();
    for cy in 0..48 {
        for cx in 0..48 {
            if (16..32).contains(&cy) && (16..32).contains(&cx) {
                continue;
            }
            let ty = cy - cy % 2;
            let tx = cx - cx % 2;
            let mut acc = [0f32; 3];
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let py = 3 * 16 + ty + dy - 16;
                let px = (tx + dx + 256 - 16) % 256;
                let p = pano.pixel(py, px);
                for ch in 0..3 {
                    acc[ch] += p[ch];
                }
            }
            let expect = acc.map(|a| a * 0.25);
            assert_eq!(gl.canvas.pixel(cy, cx), expect, "cell ({cy},{cx})");
        }
    }
}

#[test]
fn crop_is_equivariant_under_block_shifts() {
    let g = GridGeometry::FULL;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pano = random_image(&mut rng, 128, 256);
    for k in [1usize, 5, 15] {
        let shifted = pano.roll_columns(16 * k);
        for (c, r) in [(0, 0), (7, 4), (15, 7)] {
            let a = ground_truth_crop(&g, &shifted, block((c + k) % 16, r)).unwrap();
            let b = ground_truth_crop(&g, &pano, block(c, r)).unwrap();
            assert_eq!(a, b);
            let ra = extract_retina(&g, &shifted, block((c + k) % 16, r)).unwrap();
            let rb = extract_retina(&g, &pano, block(c, r)).unwrap();
            assert_eq!(ra.canvas, rb.canvas);
            assert_eq!(ra.resolution, rb.resolution);
        }
    }
}

#[test]
fn retina_reads_only_its_footprint() {
    let g = GridGeometry::MICRO;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let pano = random_image(&mut rng, 32, 64);
    let center = block(2, 5);
    let base = extract_retina(&g, &pano, center).unwrap();
    // footprint: block rows 4..=6, block cols 1..=3 -> pixel rows 16..28, cols 4..16
    for y in 0..32 {
        for x in 0..64 {
            let inside = (16..28).contains(&y) && (4..16).contains(&x);
            let mut p2 = pano.clone();
            p2.set_pixel(y, x, [9.0; 3]);
            let changed = extract_retina(&g, &p2, center).unwrap().canvas != base.canvas;
            assert_eq!(changed, inside, "pixel ({y},{x})");
        }
    }
}

#[test]
fn single_write_views_match_pooling_oracle() {
    let g = GridGeometry::FULL;
    let mut m = FitInMatrix::new(g);
    m.write(&Image::filled(48, 48, 0.8), block(8, 4), &Mask::new(48, 48, true))
        .unwrap();
    let views = m.views(&g.scales()).unwrap();
    for (view, &(h, w)) in views.iter().zip(g.scales().iter()) {
        let (fy, fx) = (128 / h, 256 / w);
        for y in 0..h {
            for x in 0..w {
                let mut occ = 0.0f64;
                let mut sum = 0.0f64;
                for sy in y * fy..(y + 1) * fy {
                    for sx in x * fx..(x + 1) * fx {
                        let inside = (48..96).contains(&sy) && (112..160).contains(&sx);
                        occ += inside as u8 as f64;
                        sum += if inside { 0.8 } else { 0.0 };
                    }
                }
                let n = (fy * fx) as f64;
                assert!((view.occupancy[y * w + x] as f64 - occ / n).abs() < 1e-6);
                assert!((view.data.get(y, x, 1) as f64 - sum / n).abs() < 1e-6);
            }
        }
    }
    // at 16×32 every cell is 8×8 px, so the 48×48 footprint covers 6×6 cells
    let full_cells = views[0].occupancy.iter().filter(|&&o| o == 1.0).count();
    assert_eq!(full_cells, 36);
}

#[test]
fn adjacent_write_union_matches_brute_force() {
    let g = GridGeometry::FULL;
    let mut m = FitInMatrix::new(g);
    let full = Mask::new(48, 48, true);
    m.write(&Image::filled(48, 48, 0.1), block(8, 4), &full).unwrap();
    m.write(&Image::filled(48, 48, 0.1), block(9, 4), &full).unwrap();
    let mut union = 0;
    for y in 0..128 {
        for x in 0..256 {
            let a = (48..96).contains(&y) && (112..160).contains(&x);
            let b = (48..96).contains(&y) && (128..176).contains(&x);
            union += (a || b) as usize;
        }
    }
    assert_eq!(union, 3072);
    assert_eq!(m.occupied_count(), union);
}

#[test]
fn slot_enumeration() {
    let mut v = FitInFeatureVector::new(128);
    for (c, r) in [(0, 0), (2, 0), (0, 2)] {
        v.write(&[1.0; 128], block(c, r)).unwrap();
    }
    let occupied: Vec<usize> = v.occupied_slots().collect();
    assert_eq!(occupied, [0, 1, 8]);
    // every slot owns exactly four blocks
    let mut counts = [0usize; 32];
    for p in 0..PATCH_COUNT {
        counts[slot_of(BlockIndex::from_patch(p).unwrap())] += 1;
    }
    assert!(counts.iter().all(|&c| c == 4));
}

#[test]
fn half_masked_local_loss_matches_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = random_image(&mut rng, 48, 48);
    let b = random_image(&mut rng, 48, 48);
    let mask = Mask::from_vec(48, 48, (0..48 * 48).map(|i| (i / 48) >= 24).collect()).unwrap();
    let mut sum = 0.0f64;
    let mut n = 0.0f64;
    for y in 24..48 {
        for x in 0..48 {
            for c in 0..3 {
                sum += (a.get(y, x, c) as f64 - b.get(y, x, c) as f64).abs();
                n += 1.0;
            }
        }
    }
    assert!((local_loss(&a, &b, &mask).unwrap() - sum / n).abs() < 1e-12);
}

#[test]
fn scale_losses_match_loop() {
    let g = GridGeometry::MICRO;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let pano = random_image(&mut rng, 32, 64);
    let recons: Vec<Image> = g.scales().iter().map(|&(h, w)| random_image(&mut rng, h, w)).collect();
    let got = scale_losses(&recons, &pano).unwrap();
    for (k, &(h, w)) in g.scales().iter().enumerate() {
        let (fy, fx) = (32 / h, 64 / w);
        let mut sum = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut t = 0.0f64;
                    for sy in y * fy..(y + 1) * fy {
                        for sx in x * fx..(x + 1) * fx {
                            t += pano.get(sy, sx, c) as f64;
                        }
                    }
                    t /= (fy * fx) as f64;
                    sum += (recons[k].get(y, x, c) as f64 - t).abs();
                }
            }
        }
        assert!((got[k] - sum / (h * w * 3) as f64).abs() < 1e-6, "scale {k}");
    }
}

#[test]
fn metrics_match_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let a = random_image(&mut rng, 32, 64);
    let b = random_image(&mut rng, 32, 64);
    let mut sum = 0.0f64;
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        sum += (*x as f64 - *y as f64).powi(2);
    }
    let mse = sum / a.as_slice().len() as f64 * 1000.0;
    assert!((mse_metric(&a, &b).unwrap() - mse).abs() < 1e-9);
    assert!((rmse_metric(&a, &b).unwrap() - 255.0 * (mse / 1000.0).sqrt()).abs() < 1e-9);
}

#[test]
fn attention_loss_matches_scalar_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..50 {
        let logits: Vec<f32> = (0..128).map(|_| rng.random_range(-5.0..5.0)).collect();
        let label = rng.random_range(0..128);
        let z: f64 = logits.iter().map(|&l| (l as f64).exp()).sum();
        let expect = -((logits[label] as f64).exp() / z).ln();
        assert!((attention_loss(&logits, label).unwrap() - expect).abs() < 1e-6);
    }
}

#[test]
fn attention_target_matches_brute_force() {
    let g = GridGeometry::MICRO;
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let pano = random_image(&mut rng, 32, 64);
    let recon = random_image(&mut rng, 32, 64);
    let t = attention_target(&g, &recon, &pano).unwrap();
    let mut per = [0f64; 128];
    let mut total = 0.0;
    for y in 0..32 {
        for x in 0..64 {
            for c in 0..3 {
                let e = (recon.get(y, x, c) - pano.get(y, x, c)).abs() as f64;
                per[(y / 4) * 16 + x / 4] += e;
                total += e;
            }
        }
    }
    for p in 0..128 {
        assert!((t.distribution[p] - per[p] / total).abs() < 1e-9);
    }
    assert!((t.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

/// Chi-square-style check: each count within 3σ of its binomial expectation
/// with a Bonferroni-free but loose bound (4σ) so the test is not flaky.
fn assert_frequencies(counts: &[usize], probs: &[f64], draws: usize) {
    for (i, (&c, &p)) in counts.iter().zip(probs).enumerate() {
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (c as f64 - mean).abs() <= 4.0 * sd.max(1.0),
            "bin {i}: count {c}, expected {mean:.1} ± {sd:.1}"
        );
    }
}

#[test]
fn train_mode_sampling_matches_masked_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let logits: Vec<f32> = (0..128).map(|i| ((i % 7) as f32) * 0.4 - 1.0).collect();
    let mut visited = Visited::new();
    for p in [3, 10, 64, 127] {
        visited.insert(p);
    }
    let z: f64 = (0..128)
        .filter(|p| !visited.contains(*p))
        .map(|p| (logits[p] as f64).exp())
        .sum();
    let probs: Vec<f64> = (0..128)
        .map(|p| {
            if visited.contains(p) {
                0.0
            } else {
                (logits[p] as f64).exp() / z
            }
        })
        .collect();
    let draws = 100_000;
    let mut counts = vec![0usize; 128];
    for _ in 0..draws {
        counts[select_next(&logits, &visited, SelectMode::Train, &mut rng).unwrap()] += 1;
    }
    for p in [3, 10, 64, 127] {
        assert_eq!(counts[p], 0);
    }
    assert_frequencies(&counts, &probs, draws);
}

#[test]
fn random_policy_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let visited = Visited::new();
    let ctx = PolicyContext {
        visited: &visited,
        current: None,
        logits: None,
        ground_truth: None,
    };
    let draws = 10_000;
    let mut counts = vec![0usize; 128];
    for _ in 0..draws {
        counts[choose(PolicyKind::Random, &ctx, SelectMode::Eval, &mut rng).unwrap()] += 1;
    }
    assert_frequencies(&counts, &[1.0 / 128.0; 128], draws);
}

proptest! {
    #[test]
    fn roll_preserves_pixel_multiset_and_composes(o1 in 0usize..512, o2 in 0usize..512, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng, 4, 16);
        let once = img.roll_columns(o1).roll_columns(o2);
        prop_assert_eq!(&once, &img.roll_columns((o1 + o2) % 16));
        let mut a: Vec<u32> = img.as_slice().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = once.as_slice().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn disjoint_writes_commute(seed in any::<u64>()) {
        let g = GridGeometry::MICRO;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // centers at least three block columns apart never overlap
        let centers: Vec<BlockIndex> = (0..4).map(|i| block(i * 4 + rng.random_range(0..2), rng.random_range(0..8))).collect();
        let recons: Vec<Image> = centers.iter().map(|_| random_image(&mut rng, 12, 12)).collect();
        let mask = Mask::new(12, 12, true);
        let mut fwd = FitInMatrix::new(g);
        for (c, r) in centers.iter().zip(&recons) {
            fwd.write(r, *c, &mask).unwrap();
        }
        let mut rev = FitInMatrix::new(g);
        for (c, r) in centers.iter().zip(&recons).rev() {
            rev.write(r, *c, &mask).unwrap();
        }
        prop_assert_eq!(fwd, rev);
    }

    #[test]
    fn patch_ids_roundtrip(p in 0usize..128) {
        prop_assert_eq!(BlockIndex::from_patch(p).unwrap().patch(), p);
    }
}

mod common;

use common::{dense_oracle, max_abs_diff, random_case};
use lensforge::image_io::RgbImage;
use lensforge::sim::{add_noise_and_clamp, coc_diameter, simulate_aberration, SimOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn patchwise_simulation_matches_the_dense_oracle() {
    for seed in 0..6 {
        let case = random_case(seed, 64, 64, 16, 7, (0, 0));
        let opts = SimOptions::default();
        let out = simulate_aberration(&case.image, &case.depth, &case.lib, &opts).unwrap();
        let err = max_abs_diff(&out, &dense_oracle(&case));
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn offset_windows_use_the_covering_patches() {
    let case = random_case(42, 40, 52, 16, 5, (9, 21));
    let opts = SimOptions {
        offset: case.offset,
        ..SimOptions::default()
    };
    let out = simulate_aberration(&case.image, &case.depth, &case.lib, &opts).unwrap();
    assert!(max_abs_diff(&out, &dense_oracle(&case)) < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn oracle_equivalence_on_random_layouts(
        seed in any::<u64>(),
        height in 8usize..=64,
        width in 8usize..=64,
        patch in prop::sample::select(vec![4usize, 8, 16, 32]),
        half_k in 0usize..=3,
        oy in 0usize..8,
        ox in 0usize..8,
    ) {
        let k = 2 * half_k + 1;
        let case = random_case(seed, height, width, patch, k, (oy, ox));
        let opts = SimOptions { offset: case.offset, ..SimOptions::default() };
        let out = simulate_aberration(&case.image, &case.depth, &case.lib, &opts).unwrap();
        prop_assert!(max_abs_diff(&out, &dense_oracle(&case)) < 1e-6);
    }
}

#[test]
fn unit_sum_kernels_preserve_flat_fields() {
    let mut case = random_case(7, 48, 48, 16, 7, (0, 0));
    case.image = RgbImage::filled(48, 48, [0.25, 0.5, 0.75]);
    let out =
        simulate_aberration(&case.image, &case.depth, &case.lib, &SimOptions::default()).unwrap();
    assert!(max_abs_diff(&out, &case.image) < 1e-6);
}

#[test]
fn energy_is_preserved_for_interior_content() {
    let mut case = random_case(8, 64, 64, 64, 5, (0, 0));
    let mut img = RgbImage::new(64, 64);
    for y in 8..56 {
        for x in 8..56 {
            for c in 0..3 {
                img.set(c, y, x, case.image.get(c, y, x) * 0.5);
            }
        }
    }
    case.image = img;
    let out =
        simulate_aberration(&case.image, &case.depth, &case.lib, &SimOptions::default()).unwrap();
    let (a, b) = (case.image.sum(), out.sum());
    assert!(((a - b) / a).abs() < 1e-6, "{a} vs {b}");
}

#[test]
fn noise_has_the_requested_spread() {
    let mut img = RgbImage::filled(256, 256, [0.5; 3]);
    add_noise_and_clamp(&mut img, 0.05, 11).unwrap();
    let n = (3 * 256 * 256) as f64;
    let values: Vec<f64> = (0..3)
        .flat_map(|c| img.plane(c).iter().map(|&v| v as f64))
        .collect();
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((std - 0.05).abs() < 0.05 * 0.05, "std {std}");
    assert!((mean - 0.5).abs() < 1e-3);

    let mut again = RgbImage::filled(256, 256, [0.5; 3]);
    add_noise_and_clamp(&mut again, 0.05, 11).unwrap();
    assert_eq!(again, img);
}

#[test]
fn coc_grows_with_defocus() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let focus: f64 = 2.0;
    let mut pts: Vec<(f64, f64)> = (0..500)
        .map(|_| {
            let d: f64 = rng.random_range(0.3..50.0);
            (
                (1.0 / d - 1.0 / focus).abs(),
                coc_diameter(20.0, 5.0, d, focus).unwrap(),
            )
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in pts.windows(2) {
        assert!(w[1].1 >= w[0].1 - 1e-15, "{w:?}");
    }
}

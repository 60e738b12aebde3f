use lensforge::field::{
    psnr, train, DepthEncoding, FieldArch, FieldDataset, FieldModel, TrainConfig, INPUT_DIM,
};
use lensforge::lens::{bundled, SpectralResponse};
use lensforge::preset::{sensor_for, Preset};
use lensforge::psf::{trace_psf_rgb, FieldPoint, PsfSampling};
use lensforge::psflib::{build_psflib, MapTrace, PsfLibrary};
use lensforge::raytrace::ObjectDistance;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ids(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, out: usize) -> (Array2<f64>, Array2<f64>) {
    let x = Array2::from_shape_simple_fn((n, INPUT_DIM), || rng.random::<f64>());
    let t = Array2::from_shape_simple_fn((n, out), || rng.random::<f64>());
    (x, t)
}

#[test]
fn gradients_match_central_differences_on_every_layer() {
    let arch = FieldArch {
        input_width: 7,
        hidden_layers: 2,
        hidden_width: 6,
        kernel_size: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for seed in 0..3 {
        let mut model =
            FieldModel::new_random(arch, ids(&["a", "b"]), DepthEncoding::Linear, seed).unwrap();
        let (x, t) = random_batch(&mut rng, 5, arch.output_width());
        let (_, grads) = model.loss_and_gradients(x.view(), t.view());
        let analytic = grads.flat();
        assert_eq!(analytic.len(), model.param_count());
        let eps = 1e-4;
        let mut checked = Vec::new();
        for (i, &g) in analytic.iter().enumerate() {
            if g.abs() <= 1e-6 {
                continue;
            }
            let orig = *model.param_mut(i);
            *model.param_mut(i) = orig + eps;
            let up = model.loss(x.view(), t.view());
            *model.param_mut(i) = orig - eps;
            let down = model.loss(x.view(), t.view());
            *model.param_mut(i) = orig;
            let fd = (up - down) / (2.0 * eps);
            let rel = (fd - g).abs() / g.abs();
            assert!(
                rel < 1e-4,
                "seed {seed} param {i}: analytic {} fd {fd} rel {rel}",
                g
            );
            checked.push(i);
        }
        let first_layer = INPUT_DIM * 7 + 7;
        let heads_start = model.param_count() - 3 * (6 * 9 + 9);
        assert!(checked.iter().any(|&i| i < first_layer));
        assert!(checked
            .iter()
            .any(|&i| (first_layer..heads_start).contains(&i)));
        assert!(checked.iter().filter(|&&i| i >= heads_start).count() > 50);
    }
}

#[test]
fn outputs_stay_in_the_open_unit_interval_and_are_deterministic() {
    let arch = FieldArch {
        input_width: 16,
        hidden_layers: 3,
        hidden_width: 16,
        kernel_size: 5,
    };
    let model = FieldModel::new_random(arch, ids(&["a"]), DepthEncoding::Inverse, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let input = [rng.random(), rng.random(), rng.random(), rng.random()];
        let k = model.forward(input);
        assert!(k.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(model.forward(input), k);
    }
}

fn traced_cell() -> Vec<f64> {
    let lens = bundled::mos_s1();
    let sensor = sensor_for(&lens, 512, 768).unwrap();
    let point = FieldPoint::meridional(4.0, ObjectDistance::from_meters(1.2));
    let sampling = PsfSampling {
        kernel_size: 11,
        pupil_samples: 32,
    };
    let psf = trace_psf_rgb(
        &lens,
        &point,
        &SpectralResponse::default(),
        &sampling,
        &sensor,
    )
    .unwrap();
    psf.kernel
        .peak_normalized()
        .data()
        .iter()
        .map(|&v| v as f64)
        .collect()
}

#[test]
fn a_single_cell_can_be_memorized() {
    let target = traced_cell();
    let data = FieldDataset {
        inputs: Array2::from_shape_vec((1, 4), vec![0.3, 0.6, 0.2, 0.0]).unwrap(),
        targets: Array2::from_shape_vec((1, target.len()), target).unwrap(),
        train: vec![0],
        heldout: vec![],
    };
    let arch = FieldArch {
        input_width: 64,
        hidden_layers: 2,
        hidden_width: 64,
        kernel_size: 11,
    };
    let mut model =
        FieldModel::new_random(arch, ids(&["MOS-S1"]), DepthEncoding::Linear, 0).unwrap();
    let cfg = TrainConfig {
        iterations: 2000,
        batch_size: 1,
        learning_rate: 1e-3,
        eval_every: 0,
        ..TrainConfig::default()
    };
    train(&mut model, &data, &cfg).unwrap();
    let mse = data.mse(&model, &[0]);
    assert!(mse < 1e-5, "fitted L2 {mse}");
}

fn desk_library(pupil: usize) -> PsfLibrary {
    let preset = Preset::desk();
    let lens = bundled::mos_s2();
    let trace = MapTrace {
        pupil_samples: pupil,
        ..preset.map_trace()
    };
    build_psflib(
        &lens,
        &preset.grid().unwrap(),
        &trace,
        &preset.sensor_for(&lens).unwrap(),
        &SpectralResponse::default(),
    )
    .unwrap()
}

#[test]
fn desk_training_is_seeded_and_smoothly_decreasing() {
    let lib = desk_library(24);
    let preset = Preset::desk();
    let lens_ids = vec![lib.lens_id.clone()];
    let data =
        FieldDataset::from_libraries(&[&lib], &lens_ids, preset.depth_encoding, 0.1, 0).unwrap();
    assert_eq!(data.len(), 8 * 12 * 12);
    assert_eq!(data.heldout.len(), 115);
    let cfg = TrainConfig {
        iterations: 4000,
        eval_every: 1000,
        ..preset.train
    };
    let run = |seed: u64| {
        let mut model =
            FieldModel::new_random(preset.field, lens_ids.clone(), preset.depth_encoding, seed)
                .unwrap();
        let report = train(&mut model, &data, &TrainConfig { seed, ..cfg }).unwrap();
        (model, report)
    };
    let (model, report) = run(5);
    let (again, _) = run(5);
    assert_eq!(model, again);

    let first_half = &report.losses[..cfg.iterations / 2];
    let means: Vec<f64> = first_half
        .chunks(100)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    for (i, w) in means.windows(2).enumerate() {
        assert!(
            w[1] <= w[0],
            "window {} rose from {} to {}",
            i + 1,
            w[0],
            w[1]
        );
    }
    let last = report.metrics.last().unwrap();
    assert_eq!(last.iteration, cfg.iterations);
    assert!(
        last.heldout_psnr
            > psnr(data.mse(
                &FieldModel::zeros(preset.field, lens_ids.clone(), preset.depth_encoding).unwrap(),
                &data.heldout
            ))
    );
}

#[test]
fn field_maps_are_unit_sum_and_clamp_far_depths() {
    let arch = FieldArch {
        input_width: 8,
        hidden_layers: 1,
        hidden_width: 8,
        kernel_size: 5,
    };
    let model =
        FieldModel::new_random(arch, ids(&["A", "B", "C"]), DepthEncoding::Linear, 2).unwrap();
    let map = model.psf_map(&[1e6; 6], 2, 3, "C").unwrap();
    let at_ten = model.psf_map(&[10.0; 6], 2, 3, "C").unwrap();
    assert_eq!(map, at_ten);
    for k in &map.kernels {
        for c in 0..3 {
            assert!((k.channel_sum(c) - 1.0).abs() < 1e-5);
        }
    }
    assert_ne!(map.get(0, 0), map.get(1, 2));
    let raw = model.forward(model.encode(1, 2, 2, 3, 1e6, 2));
    assert_eq!(map.get(1, 2), &raw.normalized());
    assert!(model.psf_map(&[1.0; 5], 2, 3, "C").is_err());
}

#[test]
fn saved_models_reload_exactly() {
    let preset = Preset::desk();
    let model =
        FieldModel::new_random(preset.field, ids(&["MOS-S1"]), preset.depth_encoding, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("desk.olf");
    model.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = 4 + 7 * 4 + 4 + "MOS-S1".len();
    assert_eq!(bytes.len(), header + model.param_count() * 4 + 4);
    assert_eq!(
        model.param_count(),
        4 * 64 + 64 + 64 * 64 + 64 + 3 * (64 * 121 + 121)
    );
    let back = FieldModel::load(&path).unwrap();
    let depths: Vec<f64> = (0..96).map(|i| 0.7 + i as f64 * 0.1).collect();
    assert_eq!(
        back.psf_map(&depths, 8, 12, "MOS-S1").unwrap(),
        model.psf_map(&depths, 8, 12, "MOS-S1").unwrap()
    );

    let mut broken = bytes.clone();
    broken[10] ^= 0x40;
    assert!(FieldModel::from_bytes(&broken, &path).is_err());
}

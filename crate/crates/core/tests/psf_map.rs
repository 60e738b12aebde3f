use std::path::Path;

use lensforge::kernel::Kernel;
use lensforge::lens::{bundled, SensorSpec, SpectralResponse};
use lensforge::preset::{sensor_for, Preset};
use lensforge::psf::{
    accumulate, chief_center, trace_psf_rgb, trace_spot, FieldPoint, PsfSampling,
};
use lensforge::psflib::{
    assemble_map, build_psf_map, build_psflib, polar_of, trace_meridional, MapTrace, PsfLibrary,
    PsfMapGrid,
};
use lensforge::raytrace::{field_for_image_height, ObjectDistance};

fn small_trace() -> MapTrace {
    MapTrace {
        n_fov: 9,
        pupil_samples: 32,
    }
}

#[test]
fn rotated_samples_match_direct_traces() {
    let lens = bundled::mos_s1();
    let sensor = sensor_for(&lens, 512, 768).unwrap();
    let grid = PsfMapGrid {
        n_h: 8,
        n_w: 12,
        patch_px: 64,
        kernel_size: 11,
        depths_m: vec![2.0],
    };
    let trace = small_trace();
    let spectral = SpectralResponse::default();
    let samples = trace_meridional(&lens, 2.0, &grid, &trace, &sensor, &spectral).unwrap();
    let sampling = PsfSampling {
        kernel_size: 11,
        pupil_samples: trace.pupil_samples,
    };
    let dist = ObjectDistance::from_meters(2.0);
    let j = 4;
    let rho = j as f64 * samples.step_mm;
    let field = field_for_image_height(&lens, rho, dist, 1.5 * lens.half_fov_deg()).unwrap();
    for azimuth in [90.0, 180.0, -90.0] {
        let point = FieldPoint {
            field_deg: field,
            azimuth_deg: azimuth,
            distance: dist,
        };
        let direct = trace_psf_rgb(&lens, &point, &spectral, &sampling, &sensor).unwrap();
        let (x, y) = direct.center_mm;
        let (r, alpha) = polar_of(x, y);
        assert!((r - rho).abs() < 1e-6 * rho, "landing radius {r} vs {rho}");
        let rotated = samples.kernel_at(j as f64 * samples.step_mm, alpha);
        let err = rotated.relative_l1(&direct.kernel);
        assert!(err < 0.02, "azimuth {azimuth}: relative L1 {err}");
    }
}

#[test]
fn centre_patch_of_an_odd_grid_is_the_on_axis_psf() {
    let lens = bundled::mos_s2();
    let sensor = sensor_for(&lens, 3 * 32, 5 * 32).unwrap();
    let grid = PsfMapGrid {
        n_h: 3,
        n_w: 5,
        patch_px: 32,
        kernel_size: 11,
        depths_m: vec![1.5],
    };
    let trace = small_trace();
    let spectral = SpectralResponse::default();
    let map = build_psf_map(&lens, 1.5, &grid, &trace, &sensor, &spectral).unwrap();
    let sampling = PsfSampling {
        kernel_size: 11,
        pupil_samples: trace.pupil_samples,
    };
    let axis = FieldPoint::meridional(0.0, ObjectDistance::from_meters(1.5));
    let direct = trace_psf_rgb(&lens, &axis, &spectral, &sampling, &sensor).unwrap();
    assert_eq!(grid.patch_center_mm(&sensor, 1, 2), (0.0, 0.0));
    assert_eq!(map.get(1, 2), &direct.kernel);
}

#[test]
fn mirrored_patches_have_mirrored_psfs() {
    let lens = bundled::six_p();
    let sensor = sensor_for(&lens, 4 * 32, 6 * 32).unwrap();
    let grid = PsfMapGrid {
        n_h: 4,
        n_w: 6,
        patch_px: 32,
        kernel_size: 11,
        depths_m: vec![3.0],
    };
    let map = build_psf_map(
        &lens,
        3.0,
        &grid,
        &small_trace(),
        &sensor,
        &SpectralResponse::default(),
    )
    .unwrap();
    for i in 0..grid.n_h {
        for j in 0..grid.n_w / 2 {
            let a = map.get(i, j);
            let b = map.get(i, grid.n_w - 1 - j).mirrored_x();
            let err = a.relative_l1(&b);
            assert!(err < 1e-4, "patch ({i}, {j}): {err}");
        }
    }
}

#[test]
fn grid_aligned_queries_are_exact_and_files_round_trip() {
    let lens = bundled::mos_s1();
    let preset = Preset::desk();
    let mut grid = preset.grid().unwrap();
    grid.n_h = 2;
    grid.n_w = 3;
    grid.depths_m = vec![0.7, 2.0, 10.0, f64::INFINITY];
    let sensor = sensor_for(&lens, grid.height_px(), grid.width_px()).unwrap();
    let trace = small_trace();
    let spectral = SpectralResponse::default();
    let lib = build_psflib(&lens, &grid, &trace, &sensor, &spectral).unwrap();

    for (d, &depth) in grid.depths_m.iter().enumerate() {
        let map = lib.map(d);
        for h in 0..grid.n_h {
            for w in 0..grid.n_w {
                assert_eq!(&lib.query(h, w, depth), map.get(h, w));
                assert_eq!(lib.query(h, w, depth), lib.kernel(d, h, w));
            }
        }
    }
    assert_eq!(lib.query(0, 0, 1e6), lib.kernel(3, 0, 0));
    assert_eq!(lib.query(0, 0, 0.2), lib.kernel(0, 0, 0));

    let direct = build_psf_map(&lens, 2.0, &grid, &trace, &sensor, &spectral).unwrap();
    assert_eq!(lib.map(1), direct);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mos.psfl");
    lib.save(&path).unwrap();
    assert_eq!(
        std::fs::metadata(&path).unwrap().len() as usize,
        lib.file_size()
    );
    let back = PsfLibrary::load(&path).unwrap();
    assert_eq!(back, lib);
    let header = 4 + 4 + 4 + lens.id.len() + 5 * 4 + 4 * grid.depths_m.len();
    assert_eq!(
        lib.file_size(),
        header + 4 * grid.depths_m.len() * 6 * 3 * 121 + 4
    );
    assert!(PsfLibrary::load(Path::new("/nonexistent/lib.psfl")).is_err());
}

#[test]
fn desk_library_size_is_exact() {
    let grid = Preset::desk().grid().unwrap();
    let k = grid.kernel_size;
    let cells = grid.depths_m.len() * grid.cells();
    assert_eq!(cells, 8 * 12 * 12);
    let maps: Vec<_> = grid
        .depths_m
        .iter()
        .map(|_| lensforge::psflib::PsfMap::uniform(grid.n_h, grid.n_w, Kernel::delta(k, 3)))
        .collect();
    let lib = PsfLibrary::from_maps("MOS-S1", grid.clone(), &maps).unwrap();
    let header = 4 + 4 + 4 + 6 + 5 * 4 + 4 * 12;
    assert_eq!(lib.to_bytes().len(), header + cells * 3 * k * k * 4 + 4);
}

#[test]
fn splat_accumulation_conserves_energy_inside_the_window() {
    let lens = bundled::double_gauss();
    let sensor = SensorSpec::new(600, 900, 0.004, 0.004).unwrap();
    let field = FieldPoint::meridional(5.0, ObjectDistance::from_meters(1.2));
    let spot = trace_spot(&lens, &field, 587.56, 24).unwrap();
    let k = 31;
    let acc = accumulate(&spot, k, &sensor);

    let sigma = sensor.splat_sigma_mm();
    let half = (k / 2) as i64;
    let mut expected = vec![0.0f64; k * k];
    for &(dx, dy) in &spot.offsets_mm {
        let cx = (dx / 0.004).round() as i64;
        let cy = (dy / 0.004).round() as i64;
        for row in (cy - 2).max(-half)..=(cy + 2).min(half) {
            for col in (cx - 2).max(-half)..=(cx + 2).min(half) {
                let r2 = (dx - col as f64 * 0.004).powi(2) + (dy - row as f64 * 0.004).powi(2);
                let e = (-r2 / (2.0 * sigma * sigma)).exp()
                    / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
                expected[((row + half) * k as i64 + col + half) as usize] += e;
            }
        }
    }
    let total: f64 = acc.iter().sum();
    let want: f64 = expected.iter().sum();
    assert!((total - want).abs() <= 1e-12 * want, "{total} vs {want}");
    for (a, b) in acc.iter().zip(&expected) {
        assert!((a - b).abs() <= 1e-12 * want);
    }
    assert_eq!(spot.center_mm, chief_center(&lens, &field).unwrap());
}

#[test]
fn assembled_map_matches_its_samples_at_sample_radii() {
    let lens = bundled::mos_s2();
    let sensor = sensor_for(&lens, 64, 64).unwrap();
    let grid = PsfMapGrid {
        n_h: 1,
        n_w: 1,
        patch_px: 64,
        kernel_size: 11,
        depths_m: vec![f64::INFINITY],
    };
    let samples = trace_meridional(
        &lens,
        f64::INFINITY,
        &grid,
        &small_trace(),
        &sensor,
        &SpectralResponse::default(),
    )
    .unwrap();
    let map = assemble_map(&samples, &grid, &sensor);
    let (x, y) = grid.patch_center_mm(&sensor, 0, 0);
    assert_eq!((x, y), (0.0, 0.0));
    assert_eq!(map.get(0, 0), &samples.kernels[0]);
}

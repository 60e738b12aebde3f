//! Shared fixtures: random simulation cases and a brute-force oracle.

use lensforge::image_io::{DepthMap, RgbImage};
use lensforge::kernel::Kernel;
use lensforge::psflib::{PsfLibrary, PsfMap, PsfMapGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PLANES: [f64; 4] = [0.7, 1.5, 4.0, f64::INFINITY];

pub struct Case {
    pub image: RgbImage,
    pub depth: DepthMap,
    pub lib: PsfLibrary,
    pub plane_of_cell: Vec<usize>,
    pub offset: (usize, usize),
}

pub fn random_case(
    seed: u64,
    height: usize,
    width: usize,
    patch: usize,
    k: usize,
    offset: (usize, usize),
) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_h = (offset.0 + height).div_ceil(patch);
    let n_w = (offset.1 + width).div_ceil(patch);
    let grid = PsfMapGrid {
        n_h,
        n_w,
        patch_px: patch,
        kernel_size: k,
        depths_m: PLANES.to_vec(),
    };
    let maps: Vec<PsfMap> = PLANES
        .iter()
        .map(|_| PsfMap {
            n_h,
            n_w,
            kernels: (0..n_h * n_w)
                .map(|_| {
                    let data = (0..3 * k * k).map(|_| rng.random::<f32>()).collect();
                    Kernel::from_data(k, 3, data).normalized()
                })
                .collect(),
        })
        .collect();
    let lib = PsfLibrary::from_maps("rand", grid, &maps).unwrap();
    let plane_of_cell: Vec<usize> = (0..n_h * n_w)
        .map(|_| rng.random_range(0..PLANES.len()))
        .collect();
    let mut depth = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let cell = ((y + offset.0) / patch) * n_w + (x + offset.1) / patch;
            depth[y * width + x] = PLANES[plane_of_cell[cell]];
        }
    }
    let mut image = RgbImage::new(height, width);
    for c in 0..3 {
        for v in image.plane_mut(c) {
            *v = rng.random::<f32>();
        }
    }
    Case {
        image,
        depth: DepthMap::from_values(height, width, depth).unwrap(),
        lib,
        plane_of_cell,
        offset,
    }
}

fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Spatially varying convolution evaluated one output pixel at a time.
pub fn dense_oracle(case: &Case) -> RgbImage {
    let img = &case.image;
    let g = &case.lib.grid;
    let k = g.kernel_size;
    let kr = (k / 2) as i64;
    let mut out = RgbImage::new(img.height, img.width);
    for y in 0..img.height {
        for x in 0..img.width {
            let (ci, cj) = (
                (y + case.offset.0) / g.patch_px,
                (x + case.offset.1) / g.patch_px,
            );
            let kern = case.lib.kernel(case.plane_of_cell[ci * g.n_w + cj], ci, cj);
            for c in 0..3 {
                let mut acc = 0.0f64;
                for a in 0..k {
                    for b in 0..k {
                        let sy = reflect(y as i64 - (a as i64 - kr), img.height);
                        let sx = reflect(x as i64 - (b as i64 - kr), img.width);
                        acc += kern.get(c, a, b) as f64 * img.get(c, sy, sx) as f64;
                    }
                }
                out.set(c, y, x, acc.clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &RgbImage, b: &RgbImage) -> f64 {
    (0..3)
        .flat_map(|c| {
            a.plane(c)
                .iter()
                .zip(b.plane(c))
                .map(|(p, q)| (p - q).abs() as f64)
        })
        .fold(0.0, f64::max)
}

/// Stop followed by an ideal thin lens of focal length `f_mm`, f/`n`,
/// focused at `focus_mm` in front of the stop.
#[allow(dead_code)]
pub fn paraxial_lens(f_mm: f64, n: f64, focus_mm: f64) -> lensforge::lens::LensPrescription {
    let image = 1.0 / (1.0 / f_mm - 1.0 / focus_mm);
    let sd = f_mm / (2.0 * n);
    let doc = format!(
        r#"
id = "paraxial"
focal_length_mm = {f_mm}
f_number = {n}
fov_deg = 2.0

[[surface]]
kind = "aperture"
radius_mm = "Infinite"
thickness_mm = 0.0
semi_diameter_mm = {sd}
conic = 0.0

[[surface]]
kind = "paraxial"
focal_length_mm = {f_mm}
radius_mm = "Infinite"
thickness_mm = {image}
semi_diameter_mm = {sd}
conic = 0.0

[[surface]]
kind = "sensor"
semi_diameter_mm = 1.0
conic = 0.0
"#
    );
    lensforge::lens::load_prescription(&doc).unwrap()
}

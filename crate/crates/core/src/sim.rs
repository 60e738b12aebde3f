//! Depth-aware aberration synthesis: per-patch average depth, patch-wise
//! spatially varying convolution and additive sensor noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image_io::{DepthMap, RgbImage};
use crate::kernel::Kernel;
use crate::psflib::{PsfLibrary, PsfMap};

/// Paraxial circle-of-confusion diameter in mm for focal length `f_mm`,
/// F-number `n`, object distance `d_m` and focus distance `focus_m`.
pub fn coc_diameter(f_mm: f64, n: f64, d_m: f64, focus_m: f64) -> Result<f64> {
    let focus_mm = focus_m * 1e3;
    if !(focus_mm > f_mm) {
        return Err(Error::InvalidArgument(format!(
            "focus distance {focus_m} m must exceed the focal length {f_mm} mm"
        )));
    }
    if !(d_m > 0.0) || !(n > 0.0) || !(f_mm > 0.0) {
        return Err(Error::InvalidArgument(
            "distances, focal length and F-number must be positive".into(),
        ));
    }
    let defocus = if d_m.is_infinite() {
        1.0
    } else {
        let d_mm = d_m * 1e3;
        (d_mm - focus_mm).abs() / d_mm
    };
    Ok((f_mm / n) * defocus * (f_mm / (focus_mm - f_mm)))
}

/// Placement of an image inside the patch grid of a sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchLayout {
    pub patch_px: usize,
    pub n_h: usize,
    pub n_w: usize,
    /// Sensor pixel `(row, col)` of the image's top-left pixel.
    pub offset: (usize, usize),
}

impl PatchLayout {
    /// Image exactly covering an `n_h`×`n_w` grid of `patch_px` patches.
    pub fn full(n_h: usize, n_w: usize, patch_px: usize) -> Self {
        Self {
            patch_px,
            n_h,
            n_w,
            offset: (0, 0),
        }
    }

    pub fn cells(&self) -> usize {
        self.n_h * self.n_w
    }

    /// Patch cell containing image pixel `(y, x)`.
    pub fn cell_of(&self, y: usize, x: usize) -> (usize, usize) {
        (
            (y + self.offset.0) / self.patch_px,
            (x + self.offset.1) / self.patch_px,
        )
    }

    fn check(&self, height: usize, width: usize) -> Result<()> {
        if self.offset.0 + height > self.n_h * self.patch_px
            || self.offset.1 + width > self.n_w * self.patch_px
        {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} image at offset {:?} does not fit a {}x{} grid of {} px patches",
                self.offset, self.n_h, self.n_w, self.patch_px
            )));
        }
        Ok(())
    }

    /// Image-pixel ranges `(y0..y1, x0..x1)` covered by cell `(i, j)`, or
    /// `None` when the cell lies outside the image.
    pub fn cell_span(
        &self,
        i: usize,
        j: usize,
        height: usize,
        width: usize,
    ) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let clip = |start: usize, off: usize, len: usize| {
            let a = (start * self.patch_px).max(off) - off;
            let b = ((start + 1) * self.patch_px)
                .min(off + len)
                .saturating_sub(off);
            (a < b).then_some(a..b)
        };
        Some((
            clip(i, self.offset.0, height)?,
            clip(j, self.offset.1, width)?,
        ))
    }
}

/// Average depth per patch cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDepth {
    pub n_h: usize,
    pub n_w: usize,
    /// Metres, row-major.
    pub values: Vec<f64>,
    /// Cells without valid pixels that copied their nearest valid neighbour.
    pub inherited: Vec<bool>,
}

impl PatchDepth {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_w + j]
    }
}

/// Masked mean depth over `m`×`m` blocks of a map whose sides divide by `m`.
pub fn avg_depth_pool(depth: &DepthMap, m: usize) -> Result<PatchDepth> {
    if m == 0 || !depth.height.is_multiple_of(m) || !depth.width.is_multiple_of(m) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} depth map is not divisible into {m} px patches",
            depth.height, depth.width
        )));
    }
    pool_depth(
        depth,
        &PatchLayout::full(depth.height / m, depth.width / m, m),
    )
}

/// Masked mean depth of the pixels each cell of `layout` covers. Cells with
/// no valid pixels inherit the nearest cell (in cell units) that has some.
pub fn pool_depth(depth: &DepthMap, layout: &PatchLayout) -> Result<PatchDepth> {
    layout.check(depth.height, depth.width)?;
    let mut sums = vec![0.0f64; layout.cells()];
    let mut counts = vec![0usize; layout.cells()];
    let mut far = vec![false; layout.cells()];
    for y in 0..depth.height {
        for x in 0..depth.width {
            if let Some(d) = depth.get(y, x) {
                let (i, j) = layout.cell_of(y, x);
                let c = i * layout.n_w + j;
                if d.is_infinite() {
                    far[c] = true;
                } else {
                    sums[c] += d;
                }
                counts[c] += 1;
            }
        }
    }
    let mut values: Vec<Option<f64>> = (0..layout.cells())
        .map(|c| match counts[c] {
            0 => None,
            _ if far[c] => Some(f64::INFINITY),
            n => Some(sums[c] / n as f64),
        })
        .collect();
    let known: Vec<usize> = (0..values.len()).filter(|&c| values[c].is_some()).collect();
    if known.is_empty() {
        return Err(Error::InvalidArgument(
            "depth map has no valid pixels".into(),
        ));
    }
    let inherited: Vec<bool> = values.iter().map(Option::is_none).collect();
    let snapshot = values.clone();
    for (c, v) in values.iter_mut().enumerate() {
        if v.is_none() {
            let (i, j) = ((c / layout.n_w) as i64, (c % layout.n_w) as i64);
            let nearest = known
                .iter()
                .min_by_key(|&&k| {
                    let (a, b) = ((k / layout.n_w) as i64, (k % layout.n_w) as i64);
                    (a - i).pow(2) + (b - j).pow(2)
                })
                .expect("non-empty");
            *v = snapshot[*nearest];
        }
    }
    Ok(PatchDepth {
        n_h: layout.n_h,
        n_w: layout.n_w,
        values: values.into_iter().map(|v| v.expect("filled")).collect(),
        inherited,
    })
}

/// Reflect-101 index folding (`-1 -> 1`, `n -> n - 2`).
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as i64 {
        m = period - m;
    }
    m as usize
}

/// Reflect-padded copy of one plane.
fn pad_plane(plane: &[f32], height: usize, width: usize, r: usize) -> Vec<f32> {
    let (ph, pw) = (height + 2 * r, width + 2 * r);
    let mut out = vec![0.0; ph * pw];
    for y in 0..ph {
        let sy = reflect_index(y as i64 - r as i64, height);
        for x in 0..pw {
            let sx = reflect_index(x as i64 - r as i64, width);
            out[y * pw + x] = plane[sy * width + sx];
        }
    }
    out
}

/// Convolves each patch's pixels with that patch's kernel, reading from the
/// reflect-padded full image so kernels see true neighbours across seams.
pub fn convolve_patchwise(
    image: &RgbImage,
    map: &PsfMap,
    layout: &PatchLayout,
) -> Result<RgbImage> {
    layout.check(image.height, image.width)?;
    if map.n_h != layout.n_h || map.n_w != layout.n_w {
        return Err(Error::DimensionMismatch(format!(
            "PSF map is {}x{} but the layout is {}x{}",
            map.n_h, map.n_w, layout.n_h, layout.n_w
        )));
    }
    if map.kernels.iter().any(|k| k.channels() != 3) {
        return Err(Error::DimensionMismatch(
            "PSF map kernels must have 3 channels".into(),
        ));
    }
    let (h, w) = (image.height, image.width);
    let r = map.kernels.iter().map(|k| k.size() / 2).max().unwrap_or(0);
    let pw = w + 2 * r;
    let mut data = vec![0.0f32; 3 * h * w];
    for (c, out) in data.chunks_mut(h * w).enumerate() {
        let src = image.plane(c);
        let padded = pad_plane(src, h, w, r);
        out.par_chunks_mut(w.max(1))
            .enumerate()
            .for_each(|(y, row)| {
                let (i, _) = layout.cell_of(y, 0);
                for j in 0..layout.n_w {
                    let Some((_, xs)) = layout.cell_span(i, j, h, w) else {
                        continue;
                    };
                    let kernel = map.get(i, j);
                    if kernel.is_delta() {
                        row[xs.clone()].copy_from_slice(&src[y * w + xs.start..y * w + xs.end]);
                    } else {
                        convolve_row(&padded, pw, r, kernel.channel(c), kernel.size(), y, xs, row);
                    }
                }
            });
    }
    RgbImage::from_planar(h, w, data)
}

/// Output pixels `xs` of row `y`: `sum K[a][b] * I(y - (a - kr), x - (b - kr))`.
#[allow(clippy::too_many_arguments)]
fn convolve_row(
    padded: &[f32],
    pw: usize,
    r: usize,
    kernel: &[f32],
    k: usize,
    y: usize,
    xs: std::ops::Range<usize>,
    row: &mut [f32],
) {
    let kr = k / 2;
    for x in xs {
        let mut acc = 0.0f32;
        for a in 0..k {
            let base = (y + r + kr - a) * pw + x + r + kr;
            let krow = &kernel[a * k..(a + 1) * k];
            for (b, &kv) in krow.iter().enumerate() {
                acc += kv * padded[base - b];
            }
        }
        row[x] = acc;
    }
}

/// Adds zero-mean Gaussian noise (seeded) and clamps to [0, 1].
pub fn add_noise_and_clamp(image: &mut RgbImage, sigma: f64, seed: u64) -> Result<()> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        for c in 0..3 {
            for v in image.plane_mut(c) {
                *v += normal.sample(&mut rng) as f32;
            }
        }
    }
    image.clamp01();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub noise_sigma: f64,
    pub seed: u64,
    /// Sensor pixel of the image's top-left corner.
    pub offset: (usize, usize),
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            seed: 0,
            offset: (0, 0),
        }
    }
}

fn library_layout(lib: &PsfLibrary, offset: (usize, usize)) -> PatchLayout {
    PatchLayout {
        patch_px: lib.grid.patch_px,
        n_h: lib.grid.n_h,
        n_w: lib.grid.n_w,
        offset,
    }
}

/// PSF map for a depth map, looked up at each patch's average depth.
pub fn depth_psf_map(
    depth: &DepthMap,
    lib: &PsfLibrary,
    offset: (usize, usize),
) -> Result<(PatchDepth, PsfMap)> {
    let layout = library_layout(lib, offset);
    let pooled = pool_depth(depth, &layout)?;
    let map = lib.map_for_depths(&pooled.values)?;
    Ok((pooled, map))
}

/// Synthesizes the aberrated image of `image` with per-pixel depth `depth`.
pub fn simulate_aberration(
    image: &RgbImage,
    depth: &DepthMap,
    lib: &PsfLibrary,
    opts: &SimOptions,
) -> Result<RgbImage> {
    if image.height != depth.height || image.width != depth.width {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{} but depth is {}x{}",
            image.height, image.width, depth.height, depth.width
        )));
    }
    let (_, map) = depth_psf_map(depth, lib, opts.offset)?;
    let mut out = convolve_patchwise(image, &map, &library_layout(lib, opts.offset))?;
    add_noise_and_clamp(&mut out, opts.noise_sigma, opts.seed)?;
    Ok(out)
}

/// Seeded top-left offset placing a `size` image inside a `target` frame.
pub fn embed_resolution(
    size: (usize, usize),
    target: (usize, usize),
    seed: u64,
) -> Result<(usize, usize)> {
    if size.0 > target.0 || size.1 > target.1 {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} image does not fit in {}x{}",
            size.0, size.1, target.0, target.1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((
        rng.random_range(0..=target.0 - size.0),
        rng.random_range(0..=target.1 - size.1),
    ))
}

/// Identity kernels everywhere.
pub fn delta_map(n_h: usize, n_w: usize, k: usize) -> PsfMap {
    PsfMap::uniform(n_h, n_w, Kernel::delta(k, 3))
}

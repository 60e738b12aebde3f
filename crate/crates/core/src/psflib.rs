//! Full-sensor PSF maps and depth-swept PSF libraries.
//!
//! A map holds one RGB kernel per sensor patch. It is assembled from PSFs
//! traced along the meridional image-height axis: each patch interpolates the
//! two samples bracketing its radial height and rotates the result to its
//! azimuth. A library stacks maps over depth planes spaced uniformly in
//! inverse depth.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::lens::{LensPrescription, SensorSpec, SpectralResponse};
use crate::psf::{trace_psf_rgb, FieldPoint, PsfSampling};
use crate::raytrace::{field_for_image_height, ObjectDistance, INFINITY_THRESHOLD_M};

pub const MAGIC: &[u8; 4] = b"PSFL";
pub const VERSION: u32 = 1;
pub const D_MIN_M: f64 = 0.7;
pub const D_MAX_M: f64 = 10.0;
const RGB: usize = 3;

/// `count` planes uniform in 1/d from `D_MIN_M` to `D_MAX_M`, followed by an
/// infinity plane.
pub fn default_depths(count: usize) -> Vec<f64> {
    let (a, b) = (1.0 / D_MIN_M, 1.0 / D_MAX_M);
    let mut out: Vec<f64> = match count {
        0 => Vec::new(),
        1 => vec![D_MIN_M],
        n => (0..n)
            .map(|i| 1.0 / (a + (b - a) * i as f64 / (n - 1) as f64))
            .collect(),
    };
    if count > 1 {
        out[0] = D_MIN_M;
        out[count - 1] = D_MAX_M;
    }
    out.push(f64::INFINITY);
    out
}

/// Inverse depth used for plane matching; anything past the infinity
/// threshold is treated as infinitely far.
pub fn inverse_depth(d_m: f64) -> f64 {
    if d_m > INFINITY_THRESHOLD_M {
        0.0
    } else {
        1.0 / d_m
    }
}

/// Depth as it reads back from a library file: the shortest decimal that
/// round-trips through f32, so 0.7 stays 0.7.
pub fn stored_depth(d_m: f64) -> f64 {
    (d_m as f32).to_string().parse().unwrap_or(d_m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsfMapGrid {
    pub n_h: usize,
    pub n_w: usize,
    /// Patch side in pixels.
    pub patch_px: usize,
    pub kernel_size: usize,
    /// Ascending depth planes in metres; `f64::INFINITY` is allowed last.
    pub depths_m: Vec<f64>,
}

impl PsfMapGrid {
    pub fn height_px(&self) -> usize {
        self.n_h * self.patch_px
    }

    pub fn width_px(&self) -> usize {
        self.n_w * self.patch_px
    }

    pub fn cells(&self) -> usize {
        self.n_h * self.n_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_h == 0 || self.n_w == 0 || self.patch_px == 0 {
            return Err(Error::InvalidArgument(
                "patch grid dimensions must be positive".into(),
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.depths_m.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one depth plane is required".into(),
            ));
        }
        for (i, &d) in self.depths_m.iter().enumerate() {
            let in_range = (d.is_infinite() && d > 0.0) || (D_MIN_M..=D_MAX_M).contains(&d);
            if !in_range {
                return Err(Error::InvalidArgument(format!(
                    "depth {d} m outside [{D_MIN_M}, {D_MAX_M}] and not infinity"
                )));
            }
            if i > 0 && !(d > self.depths_m[i - 1]) {
                return Err(Error::InvalidArgument(
                    "depth planes must be strictly ascending".into(),
                ));
            }
        }
        Ok(())
    }

    /// Index of the plane nearest to `d_m` in inverse depth.
    pub fn nearest_plane(&self, d_m: f64) -> usize {
        let q = inverse_depth(d_m);
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, &d) in self.depths_m.iter().enumerate() {
            let dist = (inverse_depth(d) - q).abs();
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        best
    }

    /// Sensor position (mm) of the centre of patch `(i, j)`.
    pub fn patch_center_mm(&self, sensor: &SensorSpec, i: usize, j: usize) -> (f64, f64) {
        let half = (self.patch_px as f64 - 1.0) / 2.0;
        sensor.pixel_center_mm(
            (i * self.patch_px) as f64 + half,
            (j * self.patch_px) as f64 + half,
        )
    }
}

/// Tracing parameters for map assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapTrace {
    /// Meridional samples from the axis to the sensor corner.
    pub n_fov: usize,
    pub pupil_samples: usize,
}

impl Default for MapTrace {
    fn default() -> Self {
        Self {
            n_fov: 64,
            pupil_samples: 128,
        }
    }
}

/// One RGB kernel per patch, row-major over `(h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfMap {
    pub n_h: usize,
    pub n_w: usize,
    pub kernels: Vec<Kernel>,
}

impl PsfMap {
    pub fn get(&self, h: usize, w: usize) -> &Kernel {
        &self.kernels[h * self.n_w + w]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels[0].size()
    }

    pub fn uniform(n_h: usize, n_w: usize, kernel: Kernel) -> Self {
        Self {
            n_h,
            n_w,
            kernels: vec![kernel; n_h * n_w],
        }
    }
}

/// Meridional PSFs at equally spaced image heights for one depth.
#[derive(Debug, Clone)]
pub struct MeridionalSamples {
    pub step_mm: f64,
    pub kernels: Vec<Kernel>,
    /// Samples that could not be traced and were copied from a neighbour.
    pub fallbacks: usize,
}

impl MeridionalSamples {
    /// Kernel for radial image height `rho` and patch azimuth `alpha`
    /// (radians, counter-clockwise from the meridional image direction).
    pub fn kernel_at(&self, rho_mm: f64, alpha: f64) -> Kernel {
        let last = self.kernels.len() - 1;
        let pos = (rho_mm / self.step_mm).max(0.0);
        let j = (pos.floor() as usize).min(last);
        let t = if j == last { 0.0 } else { pos - j as f64 };
        let interp = if t == 0.0 {
            self.kernels[j].clone()
        } else {
            Kernel::lerp(&self.kernels[j], &self.kernels[j + 1], t)
        };
        if alpha.abs() < 1e-12 || rho_mm == 0.0 {
            interp
        } else {
            interp.rotated(alpha)
        }
    }
}

fn distance_of(d_m: f64) -> ObjectDistance {
    ObjectDistance::from_meters(d_m)
}

/// Traces the meridional samples for one depth.
pub fn trace_meridional(
    lens: &LensPrescription,
    d_m: f64,
    grid: &PsfMapGrid,
    trace: &MapTrace,
    sensor: &SensorSpec,
    spectral: &SpectralResponse,
) -> Result<MeridionalSamples> {
    if trace.n_fov < 2 {
        return Err(Error::InvalidArgument("n_fov must be at least 2".into()));
    }
    let rho_max = sensor.semi_diagonal_mm();
    let step = rho_max / (trace.n_fov - 1) as f64;
    let distance = distance_of(d_m);
    let sampling = PsfSampling {
        kernel_size: grid.kernel_size,
        pupil_samples: trace.pupil_samples,
    };
    let max_field = 1.5 * lens.half_fov_deg();
    let traced: Vec<Option<Kernel>> = (0..trace.n_fov)
        .into_par_iter()
        .map(|j| {
            let height = j as f64 * step;
            let field = field_for_image_height(lens, height, distance, max_field)?;
            trace_psf_rgb(
                lens,
                &FieldPoint::meridional(field, distance),
                spectral,
                &sampling,
                sensor,
            )
            .ok()
            .map(|p| p.kernel)
        })
        .collect();
    let valid: Vec<usize> = (0..traced.len()).filter(|&j| traced[j].is_some()).collect();
    if valid.is_empty() {
        return Err(Error::FullyVignetted {
            field_deg: 0.0,
            depth: crate::psf::describe_distance(distance),
        });
    }
    let mut fallbacks = 0;
    let kernels = (0..traced.len())
        .map(|j| match &traced[j] {
            Some(k) => k.clone(),
            None => {
                fallbacks += 1;
                let nearest = *valid
                    .iter()
                    .min_by_key(|&&v| (v as i64 - j as i64).abs())
                    .expect("non-empty");
                traced[nearest].clone().expect("valid sample")
            }
        })
        .collect();
    if fallbacks > 0 {
        log::warn!(
            "{}: {} of {} field samples at {} fell back to the nearest traced sample",
            lens.id,
            fallbacks,
            trace.n_fov,
            crate::psf::describe_distance(distance)
        );
    }
    Ok(MeridionalSamples {
        step_mm: step,
        kernels,
        fallbacks,
    })
}

/// Radial height and rotation angle of a sensor position. The meridional
/// samples image along -y, so a patch at polar angle β needs a rotation of
/// β + π/2.
pub fn polar_of(x: f64, y: f64) -> (f64, f64) {
    let rho = x.hypot(y);
    if rho == 0.0 {
        return (0.0, 0.0);
    }
    let mut alpha = y.atan2(x) + std::f64::consts::FRAC_PI_2;
    if alpha > std::f64::consts::PI {
        alpha -= 2.0 * std::f64::consts::PI;
    }
    (rho, alpha)
}

pub fn assemble_map(samples: &MeridionalSamples, grid: &PsfMapGrid, sensor: &SensorSpec) -> PsfMap {
    let kernels = (0..grid.cells())
        .into_par_iter()
        .map(|cell| {
            let (i, j) = (cell / grid.n_w, cell % grid.n_w);
            let (x, y) = grid.patch_center_mm(sensor, i, j);
            let (rho, alpha) = polar_of(x, y);
            samples.kernel_at(rho, alpha)
        })
        .collect();
    PsfMap {
        n_h: grid.n_h,
        n_w: grid.n_w,
        kernels,
    }
}

fn check_sensor(grid: &PsfMapGrid, sensor: &SensorSpec) -> Result<()> {
    if sensor.height_px != grid.height_px() || sensor.width_px != grid.width_px() {
        return Err(Error::DimensionMismatch(format!(
            "sensor is {}x{} px but the patch grid covers {}x{}",
            sensor.height_px,
            sensor.width_px,
            grid.height_px(),
            grid.width_px()
        )));
    }
    Ok(())
}

pub fn build_psf_map(
    lens: &LensPrescription,
    d_m: f64,
    grid: &PsfMapGrid,
    trace: &MapTrace,
    sensor: &SensorSpec,
    spectral: &SpectralResponse,
) -> Result<PsfMap> {
    grid.validate()?;
    check_sensor(grid, sensor)?;
    let samples = trace_meridional(lens, d_m, grid, trace, sensor, spectral)?;
    Ok(assemble_map(&samples, grid, sensor))
}

/// PSF kernels for every (depth, patch row, patch column).
#[derive(Debug, Clone, PartialEq)]
pub struct PsfLibrary {
    pub lens_id: String,
    pub grid: PsfMapGrid,
    /// `(d, h, w, c, row, col)` order.
    data: Vec<f32>,
}

impl PsfLibrary {
    pub fn from_maps(
        lens_id: impl Into<String>,
        mut grid: PsfMapGrid,
        maps: &[PsfMap],
    ) -> Result<Self> {
        grid.depths_m.iter_mut().for_each(|d| *d = stored_depth(*d));
        grid.validate()?;
        if maps.len() != grid.depths_m.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} maps for {} depth planes",
                maps.len(),
                grid.depths_m.len()
            )));
        }
        let k = grid.kernel_size;
        let mut data = Vec::with_capacity(maps.len() * grid.cells() * RGB * k * k);
        for map in maps {
            if map.n_h != grid.n_h || map.n_w != grid.n_w {
                return Err(Error::DimensionMismatch(
                    "map grid differs from library grid".into(),
                ));
            }
            for kern in &map.kernels {
                if kern.size() != k || kern.channels() != RGB {
                    return Err(Error::DimensionMismatch(format!(
                        "kernel {}x{}x{} in a k={k} RGB library",
                        kern.channels(),
                        kern.size(),
                        kern.size()
                    )));
                }
                data.extend_from_slice(kern.data());
            }
        }
        Ok(Self {
            lens_id: lens_id.into(),
            grid,
            data,
        })
    }

    pub fn patch_len(&self) -> usize {
        RGB * self.grid.kernel_size * self.grid.kernel_size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Kernel stored at plane `d`, patch `(h, w)`.
    pub fn kernel(&self, d: usize, h: usize, w: usize) -> Kernel {
        let n = self.patch_len();
        let cell = (d * self.grid.n_h + h) * self.grid.n_w + w;
        Kernel::from_data(
            self.grid.kernel_size,
            RGB,
            self.data[cell * n..(cell + 1) * n].to_vec(),
        )
    }

    /// Kernel at the plane nearest to `d_m` in inverse depth.
    pub fn query(&self, h: usize, w: usize, d_m: f64) -> Kernel {
        self.kernel(self.grid.nearest_plane(d_m), h, w)
    }

    pub fn map(&self, d: usize) -> PsfMap {
        let kernels = (0..self.grid.cells())
            .map(|c| self.kernel(d, c / self.grid.n_w, c % self.grid.n_w))
            .collect();
        PsfMap {
            n_h: self.grid.n_h,
            n_w: self.grid.n_w,
            kernels,
        }
    }

    /// Per-patch kernels for a patch-resolution depth map (row-major,
    /// `n_h * n_w` values in metres).
    pub fn map_for_depths(&self, depth_avg: &[f64]) -> Result<PsfMap> {
        if depth_avg.len() != self.grid.cells() {
            return Err(Error::DimensionMismatch(format!(
                "{} depth cells for a {}x{} patch grid",
                depth_avg.len(),
                self.grid.n_h,
                self.grid.n_w
            )));
        }
        let kernels = depth_avg
            .iter()
            .enumerate()
            .map(|(c, &d)| self.query(c / self.grid.n_w, c % self.grid.n_w, d))
            .collect();
        Ok(PsfMap {
            n_h: self.grid.n_h,
            n_w: self.grid.n_w,
            kernels,
        })
    }

    fn header_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.lens_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.lens_id.as_bytes());
        for v in [
            self.grid.n_h,
            self.grid.n_w,
            self.grid.patch_px,
            self.grid.kernel_size,
            self.grid.depths_m.len(),
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &d in &self.grid.depths_m {
            out.extend_from_slice(&(d as f32).to_le_bytes());
        }
        out
    }

    /// Serialized size in bytes.
    pub fn file_size(&self) -> usize {
        self.header_bytes().len() + self.data.len() * 4 + 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header_bytes();
        out.reserve(self.data.len() * 4 + 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(path, m);
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a PSF library (bad magic)"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
                stored,
                computed,
            });
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let id_len = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let id = r.take(id_len).ok_or_else(|| bad("truncated lens id"))?;
        let lens_id = String::from_utf8(id.to_vec()).map_err(|_| bad("lens id is not UTF-8"))?;
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            *d = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        }
        let [n_h, n_w, patch_px, kernel_size, n_depth] = dims;
        let depths_m = (0..n_depth)
            .map(|_| r.f32().map(|v| stored_depth(v as f64)))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated depth table"))?;
        let grid = PsfMapGrid {
            n_h,
            n_w,
            patch_px,
            kernel_size,
            depths_m,
        };
        grid.validate().map_err(|e| bad(&e.to_string()))?;
        let expected = n_depth
            .checked_mul(grid.cells())
            .and_then(|v| v.checked_mul(RGB * kernel_size * kernel_size))
            .ok_or_else(|| bad("dimensions overflow"))?;
        let payload = &body[r.pos..];
        if payload.len() != expected * 4 {
            return Err(bad(&format!(
                "payload holds {} floats, grid needs {expected}",
                payload.len() / 4
            )));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(bad("negative or non-finite PSF value"));
        }
        Ok(Self {
            lens_id,
            grid,
            data,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Builds the library for every depth plane of `grid`.
pub fn build_psflib(
    lens: &LensPrescription,
    grid: &PsfMapGrid,
    trace: &MapTrace,
    sensor: &SensorSpec,
    spectral: &SpectralResponse,
) -> Result<PsfLibrary> {
    grid.validate()?;
    check_sensor(grid, sensor)?;
    let maps = grid
        .depths_m
        .par_iter()
        .map(|&d| build_psf_map(lens, d, grid, trace, sensor, spectral))
        .collect::<Result<Vec<_>>>()?;
    PsfLibrary::from_maps(lens.id.clone(), grid.clone(), &maps)
}

//! Point spread functions from traced pupil grids.
//!
//! Rays are aimed over a rectangular pupil grid clipped to the circular stop,
//! traced to the sensor and deposited as Gaussian energy splats on a k×k
//! window centred on the d-line chief ray.

use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::lens::{LensPrescription, SensorSpec, SpectralResponse, LAMBDA_D_NM};
use crate::raytrace::{ObjectDistance, ObjectPoint, SequentialSystem, TraceStats};

/// Half-width of the square splat footprint, in pixels.
pub const SPLAT_RADIUS_PX: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPoint {
    pub field_deg: f64,
    pub azimuth_deg: f64,
    pub distance: ObjectDistance,
}

impl FieldPoint {
    pub fn meridional(field_deg: f64, distance: ObjectDistance) -> Self {
        Self {
            field_deg,
            azimuth_deg: 0.0,
            distance,
        }
    }

    pub fn object(&self) -> ObjectPoint {
        ObjectPoint::from_field(self.field_deg, self.azimuth_deg, self.distance)
    }

    fn vignetted(&self) -> Error {
        Error::FullyVignetted {
            field_deg: self.field_deg,
            depth: describe_distance(self.distance),
        }
    }
}

pub fn describe_distance(d: ObjectDistance) -> String {
    match d {
        ObjectDistance::Infinity => "inf".to_string(),
        ObjectDistance::Finite { mm } => format!("{} m", mm * 1e-3),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PsfSampling {
    /// Kernel side length in pixels (odd).
    pub kernel_size: usize,
    /// Pupil grid samples per side.
    pub pupil_samples: usize,
}

impl Default for PsfSampling {
    fn default() -> Self {
        Self {
            kernel_size: 41,
            pupil_samples: 128,
        }
    }
}

impl PsfSampling {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) || self.kernel_size < 3 {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd and at least 3, got {}",
                self.kernel_size
            )));
        }
        if self.pupil_samples < 2 {
            return Err(Error::InvalidArgument(
                "pupil grid needs at least 2 samples per side".into(),
            ));
        }
        Ok(())
    }
}

/// A normalized PSF kernel with its pixel pitch and sensor position.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfPatch {
    pub kernel: Kernel,
    pub pitch_h_mm: f64,
    pub pitch_w_mm: f64,
    /// Chief-ray landing point on the sensor.
    pub center_mm: (f64, f64),
}

/// Sensor landing points of one traced pupil grid.
#[derive(Debug, Clone)]
pub struct Spot {
    pub center_mm: (f64, f64),
    /// Landing offsets from `center_mm`, in pupil grid order.
    pub offsets_mm: Vec<(f64, f64)>,
    pub stats: TraceStats,
}

/// Cell centres of an `n`×`n` grid over [-1, 1]², kept inside the unit
/// circle, one `Vec` per grid row.
pub fn pupil_grid(n: usize) -> Vec<Vec<(f64, f64)>> {
    let coord = |i: usize| -1.0 + (2 * i + 1) as f64 / n as f64;
    (0..n)
        .map(|i| {
            let v = coord(i);
            (0..n)
                .map(coord)
                .filter(|u| u * u + v * v <= 1.0)
                .map(|u| (u, v))
                .collect()
        })
        .filter(|row: &Vec<(f64, f64)>| !row.is_empty())
        .collect()
}

/// Sensor landing point of the d-line chief ray, traced without vignetting.
pub fn chief_center(lens: &LensPrescription, field: &FieldPoint) -> Result<(f64, f64)> {
    let system = SequentialSystem::new(lens, LAMBDA_D_NM);
    let object = field.object();
    let chief = system.aim_chief(&object).map_err(|_| field.vignetted())?;
    let ray = system.launch(&object, chief.launch.0, chief.launch.1);
    let out = system
        .trace_to_sensor(&ray, false)
        .map_err(|_| field.vignetted())?;
    Ok((out.position.x, out.position.y))
}

/// Traces the pupil grid at one wavelength and records where each surviving
/// ray lands relative to the chief ray.
pub fn trace_spot(
    lens: &LensPrescription,
    field: &FieldPoint,
    wavelength_nm: f64,
    pupil_samples: usize,
) -> Result<Spot> {
    let center = chief_center(lens, field)?;
    let system = SequentialSystem::new(lens, wavelength_nm);
    let object = field.object();
    let stop_sd = lens.surfaces[lens.stop_index].semi_diameter_mm;
    let chief = system.aim_chief(&object).map_err(|_| field.vignetted())?;

    let rows: Vec<(Vec<(f64, f64)>, TraceStats)> = pupil_grid(pupil_samples)
        .into_par_iter()
        .map(|row| {
            let mut stats = TraceStats::default();
            let mut hits = Vec::with_capacity(row.len());
            let mut anchor = (chief, (0.0, 0.0));
            for (u, v) in row {
                stats.launched += 1;
                let target = (u * stop_sd, v * stop_sd);
                let guess = anchor.0.predict(anchor.1, target);
                let sol = match system.aim(&object, target, guess) {
                    Ok(sol) => sol,
                    Err(t) => {
                        stats.record(t);
                        continue;
                    }
                };
                anchor = (sol, target);
                let ray = system.launch(&object, sol.launch.0, sol.launch.1);
                match system.trace_to_sensor(&ray, true) {
                    Ok(out) => {
                        stats.arrived += 1;
                        hits.push((out.position.x - center.0, out.position.y - center.1));
                    }
                    Err(t) => stats.record(t),
                }
            }
            (hits, stats)
        })
        .collect();

    let mut stats = TraceStats::default();
    let mut offsets = Vec::new();
    for (hits, s) in rows {
        stats.merge(&s);
        offsets.extend(hits);
    }
    if stats.not_converged + stats.aim_failed > 0 {
        log::debug!(
            "field {:.3} deg at {} nm: {} rays lost to non-convergence",
            field.field_deg,
            wavelength_nm,
            stats.not_converged + stats.aim_failed
        );
    }
    if offsets.is_empty() {
        return Err(field.vignetted());
    }
    Ok(Spot {
        center_mm: center,
        offsets_mm: offsets,
        stats,
    })
}

/// Energy deposited at distance `r` from a ray landing point.
pub fn gaussian_energy(r_mm: f64, sigma_mm: f64) -> f64 {
    (-(r_mm * r_mm) / (2.0 * sigma_mm * sigma_mm)).exp() / ((2.0 * PI).sqrt() * sigma_mm)
}

/// Adds the splat of one ray landing at `(dx, dy)` mm from the window centre
/// to `acc` (k×k, row-major, rows along +y).
pub fn splat(acc: &mut [f64], k: usize, pitch: (f64, f64), sigma_mm: f64, dx: f64, dy: f64) {
    let half = (k / 2) as i64;
    let (ph, pw) = pitch;
    let cx = (dx / pw).round() as i64;
    let cy = (dy / ph).round() as i64;
    for j in -SPLAT_RADIUS_PX..=SPLAT_RADIUS_PX {
        let row = half + cy + j;
        if row < 0 || row >= k as i64 {
            continue;
        }
        let ey = dy - (cy + j) as f64 * ph;
        for i in -SPLAT_RADIUS_PX..=SPLAT_RADIUS_PX {
            let col = half + cx + i;
            if col < 0 || col >= k as i64 {
                continue;
            }
            let ex = dx - (cx + i) as f64 * pw;
            acc[row as usize * k + col as usize] += gaussian_energy(ex.hypot(ey), sigma_mm);
        }
    }
}

/// Unnormalized splat accumulation of a spot.
pub fn accumulate(spot: &Spot, k: usize, sensor: &SensorSpec) -> Vec<f64> {
    let mut acc = vec![0.0; k * k];
    let pitch = (sensor.pitch_h_mm, sensor.pitch_w_mm);
    let sigma = sensor.splat_sigma_mm();
    for &(dx, dy) in &spot.offsets_mm {
        splat(&mut acc, k, pitch, sigma, dx, dy);
    }
    acc
}

/// Single-wavelength PSF normalized to unit sum.
pub fn trace_psf_mono(
    lens: &LensPrescription,
    field: &FieldPoint,
    wavelength_nm: f64,
    sampling: &PsfSampling,
    sensor: &SensorSpec,
) -> Result<PsfPatch> {
    sampling.validate()?;
    let spot = trace_spot(lens, field, wavelength_nm, sampling.pupil_samples)?;
    let k = sampling.kernel_size;
    let acc = accumulate(&spot, k, sensor);
    let total: f64 = acc.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyPsf {
            field_deg: field.field_deg,
            depth: describe_distance(field.distance),
            kernel_size: k,
        });
    }
    let data = acc.iter().map(|&v| (v / total) as f32).collect();
    Ok(PsfPatch {
        kernel: Kernel::from_data(k, 1, data),
        pitch_h_mm: sensor.pitch_h_mm,
        pitch_w_mm: sensor.pitch_w_mm,
        center_mm: spot.center_mm,
    })
}

/// RGB PSF: per channel, the response-weighted sum of normalized
/// single-wavelength PSFs, renormalized.
pub fn trace_psf_rgb(
    lens: &LensPrescription,
    field: &FieldPoint,
    spectral: &SpectralResponse,
    sampling: &PsfSampling,
    sensor: &SensorSpec,
) -> Result<PsfPatch> {
    sampling.validate()?;
    let mut wavelengths: Vec<f64> = spectral.wavelengths().collect();
    wavelengths.sort_by(f64::total_cmp);
    wavelengths.dedup();
    let mono: Vec<PsfPatch> = wavelengths
        .par_iter()
        .map(|&l| trace_psf_mono(lens, field, l, sampling, sensor))
        .collect::<Result<_>>()?;
    let by_wavelength: HashMap<u64, &PsfPatch> =
        wavelengths.iter().map(|l| l.to_bits()).zip(&mono).collect();

    let k = sampling.kernel_size;
    let mut channels = Vec::with_capacity(3);
    for c in 0..3 {
        let mut acc = vec![0.0f64; k * k];
        for &(l, w) in spectral.channel(c) {
            let p = by_wavelength[&l.to_bits()];
            for (a, &v) in acc.iter_mut().zip(p.kernel.data()) {
                *a += w * v as f64;
            }
        }
        let total: f64 = acc.iter().sum();
        channels.push(Kernel::from_data(
            k,
            1,
            acc.iter().map(|&v| (v / total) as f32).collect(),
        ));
    }
    Ok(PsfPatch {
        kernel: Kernel::stack(&channels),
        pitch_h_mm: sensor.pitch_h_mm,
        pitch_w_mm: sensor.pitch_w_mm,
        center_mm: mono[0].center_mm,
    })
}

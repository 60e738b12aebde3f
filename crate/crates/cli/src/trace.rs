use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use lensforge::image_io::{BitDepth, RgbImage};
use lensforge::lens::{bundled, load_prescription, LensPrescription, SpectralResponse};
use lensforge::preset::sensor_for;
use lensforge::psf::{trace_psf_rgb, FieldPoint, PsfPatch, PsfSampling};
use lensforge::raytrace::{field_for_image_height, ObjectDistance};
use serde::Serialize;
use serde_json::json;

use crate::config::{GridArgs, Layers, TrainArgs};
use crate::manifest::{manifest_for, Manifest};
use crate::Invalid;

#[derive(Debug, Clone, Args, Serialize)]
pub struct TraceArgs {
    /// Bundled lens id or prescription TOML; repeat for a gallery
    #[arg(long, required = true)]
    pub lens: Vec<String>,
    /// Normalized field, the fraction of the sensor semi-diagonal (0 on axis, 1 at the corner); repeatable
    #[arg(long, conflicts_with = "field_deg")]
    pub field: Vec<f64>,
    /// Field angle in degrees; repeatable
    #[arg(long)]
    pub field_deg: Vec<f64>,
    /// Object distance in metres or "inf"; repeatable
    #[arg(long, required = true, value_parser = parse_depth)]
    pub depth: Vec<f64>,
    /// Output PNG; the float kernels go to the same path with a .json extension
    #[arg(long)]
    pub out: PathBuf,
    /// Output pixels per kernel pixel
    #[arg(long, default_value_t = 8)]
    pub scale: usize,
    #[command(flatten)]
    #[serde(skip)]
    pub grid: GridArgs,
}

pub fn parse_depth(s: &str) -> Result<f64, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(f64::INFINITY);
    }
    match s.parse::<f64>() {
        Ok(d) if d > 0.0 => Ok(d),
        _ => Err(format!(
            "expected a positive distance in metres or \"inf\", got {s:?}"
        )),
    }
}

/// Bundled id (case-insensitive) or a path to a prescription file.
pub fn resolve_lens(spec: &str) -> Result<LensPrescription> {
    if let Some(lens) = bundled::by_id(spec) {
        return Ok(lens);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Invalid(format!(
            "{spec:?} is neither a bundled lens nor a prescription file"
        ))
        .into());
    }
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_prescription(&text).with_context(|| path.display().to_string())
}

#[derive(Debug, Serialize)]
struct TracedPsf {
    lens: String,
    field_norm: Option<f64>,
    field_deg: f64,
    /// `None` is infinity.
    depth_m: Option<f64>,
    center_mm: (f64, f64),
    pitch_mm: (f64, f64),
    /// Channel-major R, G, B; each k*k row-major and unit-sum.
    rgb: Vec<Vec<f32>>,
}

pub fn run(layers: &Layers, args: TraceArgs) -> Result<()> {
    let resolved = layers.resolve(&args.grid, &TrainArgs::default(), None, None)?;
    let p = &resolved.preset;
    if args.scale == 0 {
        return Err(Invalid("scale must be positive".into()).into());
    }
    let sampling = PsfSampling {
        kernel_size: p.kernel_size,
        pupil_samples: p.pupil_samples,
    };
    let lenses = args
        .lens
        .iter()
        .map(|s| resolve_lens(s))
        .collect::<Result<Vec<_>>>()?;

    let fields: Vec<(Option<f64>, Option<f64>)> = if !args.field_deg.is_empty() {
        args.field_deg.iter().map(|&d| (None, Some(d))).collect()
    } else if !args.field.is_empty() {
        args.field.iter().map(|&n| (Some(n), None)).collect()
    } else {
        vec![(Some(0.0), None)]
    };
    for lens in &lenses {
        for &(norm, deg) in &fields {
            if let Some(n) = norm {
                if !(0.0..=1.0).contains(&n) {
                    return Err(Invalid(format!("normalized field {n} outside [0, 1]")).into());
                }
            }
            if let Some(d) = deg {
                if !(0.0..=lens.half_fov_deg()).contains(&d) {
                    return Err(Invalid(format!(
                        "field {d} deg outside [0, {}] for {}",
                        lens.half_fov_deg(),
                        lens.id
                    ))
                    .into());
                }
            }
        }
    }

    let spectral = SpectralResponse::default();
    let mut rows: Vec<Vec<PsfPatch>> = Vec::new();
    let mut traced = Vec::new();
    for lens in &lenses {
        let sensor = sensor_for(lens, p.sensor_height_px, p.sensor_width_px)?;
        for &(norm, deg) in &fields {
            let mut row = Vec::new();
            for &d in &args.depth {
                let distance = ObjectDistance::from_meters(d);
                let field_deg = match (norm, deg) {
                    (_, Some(deg)) => deg,
                    (Some(n), None) => field_for_image_height(
                        lens,
                        n * sensor.semi_diagonal_mm(),
                        distance,
                        1.5 * lens.half_fov_deg(),
                    )
                    .ok_or_else(|| lensforge::Error::FullyVignetted {
                        field_deg: f64::NAN,
                        depth: format!("{d} m"),
                    })?,
                    (None, None) => unreachable!("fields default to on-axis"),
                };
                let psf = trace_psf_rgb(
                    lens,
                    &FieldPoint::meridional(field_deg, distance),
                    &spectral,
                    &sampling,
                    &sensor,
                )?;
                log::info!("{} field {field_deg:.3} deg, depth {d} m", lens.id);
                traced.push(TracedPsf {
                    lens: lens.id.clone(),
                    field_norm: norm,
                    field_deg,
                    depth_m: d.is_finite().then_some(d),
                    center_mm: psf.center_mm,
                    pitch_mm: (psf.pitch_h_mm, psf.pitch_w_mm),
                    rgb: (0..3).map(|c| psf.kernel.channel(c).to_vec()).collect(),
                });
                row.push(psf);
            }
            rows.push(row);
        }
    }

    let gallery = gallery(&rows, p.kernel_size, args.scale);
    gallery.save_png(&args.out, BitDepth::Eight)?;
    let sidecar = args.out.with_extension("json");
    let body = json!({ "kernel_size": p.kernel_size, "psfs": traced });
    std::fs::write(&sidecar, serde_json::to_string_pretty(&body)? + "\n")?;

    let mut manifest = Manifest::new("trace-psf", json!({ "args": args, "resolved": resolved }));
    manifest.add_output(&args.out)?;
    manifest.add_output(&sidecar)?;
    manifest.write(&manifest_for(&args.out))?;
    println!("{}", args.out.display());
    Ok(())
}

/// Tiles of per-channel peak-normalized kernels, one row per (lens, field)
/// and one column per depth, separated by one tile pixel.
fn gallery(rows: &[Vec<PsfPatch>], k: usize, scale: usize) -> RgbImage {
    let tile = k * scale;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let h = rows.len() * tile + rows.len().saturating_sub(1) * scale;
    let w = cols * tile + cols.saturating_sub(1) * scale;
    let mut img = RgbImage::new(h, w);
    for (r, row) in rows.iter().enumerate() {
        for (c, psf) in row.iter().enumerate() {
            let peak = psf.kernel.peak_normalized();
            let (y0, x0) = (r * (tile + scale), c * (tile + scale));
            for ch in 0..3 {
                for y in 0..tile {
                    for x in 0..tile {
                        img.set(ch, y0 + y, x0 + x, peak.get(ch, y / scale, x / scale));
                    }
                }
            }
        }
    }
    img
}

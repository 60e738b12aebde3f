use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use lensforge::dof::{self, select_interval_from_point, PsfSource, RenderRequest, SharpInterval};
use lensforge::field::{psnr, train, FieldDataset, FieldModel};
use lensforge::image_io::{DepthMap, RgbImage};
use lensforge::lens::{bundled, LensPrescription, SpectralResponse};
use lensforge::preset::Preset;
use lensforge::psflib::{build_psflib as build_library, PsfLibrary};
use lensforge::sim::{embed_resolution, simulate_aberration, SimOptions};
use lensforge_service::{FieldGrid, LensAssets};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{GridArgs, Layers, TrainArgs};
use crate::manifest::{manifest_for, Manifest};
use crate::trace::{parse_depth, resolve_lens};
use crate::Invalid;

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Invalid(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(())
}

fn load_library(path: &Path) -> Result<PsfLibrary> {
    require_file(path, "library")?;
    Ok(PsfLibrary::load(path)?)
}

fn library_for(lens: &LensPrescription, p: &Preset) -> Result<PsfLibrary> {
    let start = Instant::now();
    let lib = build_library(
        lens,
        &p.grid()?,
        &p.map_trace(),
        &p.sensor_for(lens)?,
        &SpectralResponse::default(),
    )?;
    log::info!(
        "{}: {} planes of {}x{} PSFs in {:.1} s",
        lens.id,
        lib.grid.depths_m.len(),
        lib.grid.n_h,
        lib.grid.n_w,
        start.elapsed().as_secs_f64()
    );
    Ok(lib)
}

pub fn build_psflib(layers: &Layers, lens: &str, out: &Path, grid: &GridArgs) -> Result<()> {
    let resolved = layers.resolve(grid, &TrainArgs::default(), None, None)?;
    let lens = resolve_lens(lens)?;
    let lib = library_for(&lens, &resolved.preset)?;
    lib.save(out)?;
    let mut manifest = Manifest::new(
        "build-psflib",
        json!({ "lens": lens.to_toml(), "out": out, "resolved": resolved }),
    );
    manifest.add_output(out)?;
    manifest.write(&manifest_for(out))?;
    println!("{}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// JSON array of pairs: {"image", "depth", "lens_id", "seed", "offset"?: [y, x], "noise_sigma"?}; paths relative to this file
    #[arg(long)]
    pub pairs: PathBuf,
    /// PSF library per lens id; repeatable
    #[arg(long, required = true)]
    pub psflib: Vec<PathBuf>,
    /// Directory for the aberrated PNGs and manifest.json
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Noise std for pairs that do not set one [default: 0]
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Pair {
    image: PathBuf,
    depth: PathBuf,
    lens_id: String,
    seed: u64,
    #[serde(default)]
    offset: Option<(usize, usize)>,
    #[serde(default)]
    noise_sigma: Option<f64>,
}

pub fn simulate(layers: &Layers, args: SimulateArgs) -> Result<()> {
    let resolved = layers.resolve(
        &GridArgs::default(),
        &TrainArgs::default(),
        args.noise_sigma,
        None,
    )?;
    require_file(&args.pairs, "pair list")?;
    let text = std::fs::read_to_string(&args.pairs)?;
    let pairs: Vec<Pair> = serde_json::from_str(&text)
        .map_err(|e| Invalid(format!("pair list {}: {e}", args.pairs.display())))?;
    let base = args.pairs.parent().unwrap_or(Path::new("."));
    let libs = args
        .psflib
        .iter()
        .map(|p| load_library(p))
        .collect::<Result<Vec<_>>>()?;
    let lib_ids: Vec<&str> = libs.iter().map(|l| l.lens_id.as_str()).collect();
    for pair in &pairs {
        if !lib_ids.contains(&pair.lens_id.as_str()) {
            return Err(Invalid(format!(
                "no library for lens {:?} (have {lib_ids:?})",
                pair.lens_id
            ))
            .into());
        }
        require_file(&base.join(&pair.image), "image")?;
        require_file(&base.join(&pair.depth), "depth")?;
    }
    std::fs::create_dir_all(&args.out_dir)?;

    let mut manifest = Manifest::new(
        "simulate",
        json!({ "args": args, "pairs": pairs, "resolved": resolved }),
    );
    for (i, pair) in pairs.iter().enumerate() {
        let lib = libs
            .iter()
            .find(|l| l.lens_id == pair.lens_id)
            .expect("checked above");
        let (image, bits) = RgbImage::load_png(&base.join(&pair.image))?;
        let depth = DepthMap::load(&base.join(&pair.depth))?;
        let sensor = (lib.grid.height_px(), lib.grid.width_px());
        let offset = match pair.offset {
            Some(o) => o,
            None => embed_resolution((image.height, image.width), sensor, pair.seed)?,
        };
        let noise_sigma = pair.noise_sigma.unwrap_or(resolved.noise_sigma);
        let opts = SimOptions {
            noise_sigma,
            seed: pair.seed,
            offset,
        };
        let out = simulate_aberration(&image, &depth, lib, &opts)?;
        let stem = pair
            .image
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image");
        let path = args
            .out_dir
            .join(format!("{i:04}_{stem}_{}.png", pair.lens_id));
        out.save_png(&path, bits)?;
        log::info!("{} -> {}", pair.image.display(), path.display());
        manifest.add_output(&path)?;
        manifest.records.push(json!({
            "source": pair.image,
            "depth": pair.depth,
            "lens_id": pair.lens_id,
            "seed": pair.seed,
            "offset": offset,
            "noise_sigma": noise_sigma,
            "output": path,
        }));
    }
    manifest.write(&args.out_dir.join("manifest.json"))?;
    println!("{} images in {}", pairs.len(), args.out_dir.display());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// PSF libraries to fit; each contributes its lens id; repeatable
    #[arg(long, required = true)]
    pub psflib: Vec<PathBuf>,
    /// Output model (.olf)
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics CSV [default: <out stem>.metrics.csv]
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub train: TrainArgs,
}

pub fn fit_field(layers: &Layers, args: FitArgs) -> Result<()> {
    let mut resolved = layers.resolve(&GridArgs::default(), &args.train, None, None)?;
    let libs = args
        .psflib
        .iter()
        .map(|p| load_library(p))
        .collect::<Result<Vec<_>>>()?;
    let k = libs[0].grid.kernel_size;
    if libs.iter().any(|l| l.grid.kernel_size != k) {
        return Err(Invalid("libraries have different kernel sizes".into()).into());
    }
    let p = &mut resolved.preset;
    p.kernel_size = k;
    p.field.kernel_size = k;
    let ids: Vec<String> = libs.iter().map(|l| l.lens_id.clone()).collect();
    let refs: Vec<&PsfLibrary> = libs.iter().collect();
    let data = FieldDataset::from_libraries(
        &refs,
        &ids,
        p.depth_encoding,
        p.holdout_fraction,
        resolved.seed,
    )?;
    let mut model = FieldModel::new_random(p.field, ids.clone(), p.depth_encoding, resolved.seed)?;
    log::info!(
        "fitting {} parameters to {} cells ({} held out) of {:?}",
        model.param_count(),
        data.len(),
        data.heldout.len(),
        ids
    );
    let start = Instant::now();
    let report = train(&mut model, &data, &p.train)?;
    model.save(&args.out)?;

    let metrics = args.metrics.clone().unwrap_or_else(|| {
        let stem = args
            .out
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("model");
        args.out.with_file_name(format!("{stem}.metrics.csv"))
    });
    let mut csv = csv::Writer::from_path(&metrics)?;
    csv.write_record(["iteration", "loss", "train_psnr", "heldout_psnr"])?;
    for row in &report.metrics {
        csv.write_record([
            row.iteration.to_string(),
            format!("{:.6e}", row.loss),
            format!("{:.4}", row.train_psnr),
            format!("{:.4}", row.heldout_psnr),
        ])?;
    }
    csv.flush()?;

    let lib_bytes: usize = libs.iter().map(|l| l.file_size()).sum();
    let heldout = if data.heldout.is_empty() {
        None
    } else {
        Some(psnr(data.mse(&model, &data.heldout)))
    };
    log::info!(
        "done in {:.1} s; held-out PSNR {}; model {} B = {:.2}% of the libraries",
        start.elapsed().as_secs_f64(),
        heldout.map_or("n/a".into(), |v| format!("{v:.2} dB")),
        model.file_size(),
        100.0 * model.file_size() as f64 / lib_bytes as f64
    );
    let mut manifest = Manifest::new("fit-field", json!({ "args": args, "resolved": resolved }));
    manifest.add_output(&args.out)?;
    manifest.add_output(&metrics)?;
    manifest.write(&manifest_for(&args.out))?;
    println!("{}", args.out.display());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RenderArgs {
    /// All-in-focus PNG
    #[arg(long)]
    pub image: PathBuf,
    /// Depth map (.pfm, or 16-bit .png with a .json scale sidecar)
    #[arg(long)]
    pub depth: PathBuf,
    /// Lens id to render
    #[arg(long)]
    pub lens: String,
    /// PSF library source
    #[arg(long, conflicts_with = "field", required_unless_present = "field")]
    pub psflib: Option<PathBuf>,
    /// Neural field source (.olf), evaluated on the preset patch grid
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Depth range kept sharp, LO:HI in metres (HI may be "inf")
    #[arg(long, value_parser = parse_interval, conflicts_with = "focus")]
    pub sharp: Option<(f64, f64)>,
    /// Keep the depth at pixel Y,X sharp
    #[arg(long, value_parser = parse_pair)]
    pub focus: Option<(usize, usize)>,
    /// Half width in metres of the interval chosen by --focus
    #[arg(long, default_value_t = 0.5)]
    pub half_width: f64,
    /// Sensor pixel Y,X of the image's top-left corner [default: centred]
    #[arg(long, value_parser = parse_pair)]
    pub offset: Option<(usize, usize)>,
    /// Output PNG
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub grid: GridArgs,
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let lo = parse_depth(lo)?;
    let hi = parse_depth(hi)?;
    if lo > hi {
        return Err(format!("LO {lo} exceeds HI {hi}"));
    }
    Ok((lo, hi))
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("expected Y,X, got {s:?}");
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn render_dof(layers: &Layers, args: RenderArgs) -> Result<()> {
    let resolved = layers.resolve(&args.grid, &TrainArgs::default(), None, None)?;
    require_file(&args.image, "image")?;
    require_file(&args.depth, "depth")?;
    let (image, bits) = RgbImage::load_png(&args.image)?;
    let depth = DepthMap::load(&args.depth)?;

    let lib;
    let model;
    let source = match (&args.psflib, &args.field) {
        (Some(path), _) => {
            lib = load_library(path)?;
            PsfSource::Library(&lib)
        }
        (None, Some(path)) => {
            require_file(path, "field model")?;
            model = FieldModel::load(path)?;
            let g = FieldGrid::from_preset(&resolved.preset);
            PsfSource::Field {
                model: &model,
                n_h: g.n_h,
                n_w: g.n_w,
                patch_px: g.patch_px,
            }
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    let sharp = match (args.sharp, args.focus) {
        (Some((lo, hi)), _) => Some(SharpInterval::new(lo, hi)?),
        (None, Some((y, x))) => Some(select_interval_from_point(&depth, (y, x), args.half_width)?),
        (None, None) => None,
    };
    let layout = source.layout((0, 0));
    let (sh, sw) = (layout.n_h * layout.patch_px, layout.n_w * layout.patch_px);
    if image.height > sh || image.width > sw {
        return Err(Invalid(format!(
            "{}x{} image does not fit the {sh}x{sw} sensor",
            image.height, image.width
        ))
        .into());
    }
    let offset = args
        .offset
        .unwrap_or(((sh - image.height) / 2, (sw - image.width) / 2));
    let out = dof::render_dof(&RenderRequest {
        image: &image,
        depth: &depth,
        lens_id: &args.lens,
        sharp,
        source,
        offset,
    })?;
    out.save_png(&args.out, bits)?;
    let mut manifest = Manifest::new(
        "render-dof",
        json!({ "args": args, "interval": sharp.map(|s| (s.lo, s.hi)), "offset": offset, "resolved": resolved }),
    );
    manifest.add_output(&args.out)?;
    manifest.write(&manifest_for(&args.out))?;
    println!("{}", args.out.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Directory of .psfl libraries, .olf field models and lens .toml files
    #[arg(long, default_value = "assets")]
    pub assets: PathBuf,
    /// Listen port [default: 8787]
    #[arg(long)]
    pub port: Option<u16>,
    /// Listen address
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Directory served at / (the web UI bundle)
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Build preset libraries for the bundled lenses if the asset directory has none
    #[arg(long)]
    pub build_missing: bool,
    #[command(flatten)]
    pub grid: GridArgs,
}

pub fn serve(layers: &Layers, args: ServeArgs) -> Result<()> {
    let resolved = layers.resolve(&args.grid, &TrainArgs::default(), None, args.port)?;
    let has_libraries = args.assets.is_dir()
        && std::fs::read_dir(&args.assets)?
            .filter_map(|e| e.ok())
            .any(|e| e.path().extension().is_some_and(|x| x == "psfl"));
    if !has_libraries && args.build_missing {
        std::fs::create_dir_all(&args.assets)?;
        for lens in bundled::all() {
            let path = args
                .assets
                .join(format!("{}.psfl", lens.id.to_ascii_lowercase()));
            library_for(&lens, &resolved.preset)?.save(&path)?;
        }
    }
    let assets = if args.assets.is_dir() {
        LensAssets::from_dir(&args.assets).context("loading assets")?
    } else {
        log::warn!("asset directory {} does not exist", args.assets.display());
        LensAssets::new()
    };
    if assets.is_empty() {
        log::warn!("no lens assets loaded; /api/lenses will answer 503");
    }
    let addr = SocketAddr::new(args.host, resolved.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(lensforge_service::serve(addr, assets, args.static_dir))?;
    Ok(())
}

//! Controllable depth-of-field rendering: patches whose average depth falls
//! in a sharp interval keep the identity kernel, the rest get the lens PSF.

use crate::error::{Error, Result};
use crate::field::FieldModel;
use crate::image_io::{DepthMap, RgbImage};
use crate::kernel::Kernel;
use crate::psflib::{PsfLibrary, PsfMap};
use crate::sim::{add_noise_and_clamp, convolve_patchwise, pool_depth, PatchLayout};

/// Closed depth interval in metres; `hi` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpInterval {
    pub lo: f64,
    pub hi: f64,
}

impl SharpInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo <= 0.0 || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "sharp interval [{lo}, {hi}] needs 0 < lo <= hi"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Everything from `lo` to infinity.
    pub fn from(lo: f64) -> Result<Self> {
        Self::new(lo, f64::INFINITY)
    }

    pub fn contains(&self, d: f64) -> bool {
        self.lo <= d && d <= self.hi
    }
}

/// Replaces the kernel of every cell whose depth lies in `interval` by the
/// identity.
pub fn make_mask(map: &PsfMap, depth_avg: &[f64], interval: &SharpInterval) -> Result<PsfMap> {
    if depth_avg.len() != map.kernels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} depth cells for {} kernels",
            depth_avg.len(),
            map.kernels.len()
        )));
    }
    let kernels = map
        .kernels
        .iter()
        .zip(depth_avg)
        .map(|(k, &d)| {
            if interval.contains(d) {
                Kernel::delta(k.size(), k.channels())
            } else {
                k.clone()
            }
        })
        .collect();
    Ok(PsfMap {
        n_h: map.n_h,
        n_w: map.n_w,
        kernels,
    })
}

/// Where the depth-aware PSFs come from.
#[derive(Debug, Clone, Copy)]
pub enum PsfSource<'a> {
    Library(&'a PsfLibrary),
    /// A fitted field evaluated on an `n_h`×`n_w` grid of `patch_px` patches.
    Field {
        model: &'a FieldModel,
        n_h: usize,
        n_w: usize,
        patch_px: usize,
    },
}

impl PsfSource<'_> {
    pub fn layout(&self, offset: (usize, usize)) -> PatchLayout {
        match *self {
            PsfSource::Library(lib) => PatchLayout {
                patch_px: lib.grid.patch_px,
                n_h: lib.grid.n_h,
                n_w: lib.grid.n_w,
                offset,
            },
            PsfSource::Field {
                n_h, n_w, patch_px, ..
            } => PatchLayout {
                patch_px,
                n_h,
                n_w,
                offset,
            },
        }
    }

    fn psf_map(&self, depth_avg: &[f64], lens_id: &str) -> Result<PsfMap> {
        match *self {
            PsfSource::Library(lib) => {
                if lib.lens_id != lens_id {
                    return Err(Error::UnknownLens(lens_id.to_string()));
                }
                lib.map_for_depths(depth_avg)
            }
            PsfSource::Field {
                model, n_h, n_w, ..
            } => model.psf_map(depth_avg, n_h, n_w, lens_id),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RenderRequest<'a> {
    pub image: &'a RgbImage,
    pub depth: &'a DepthMap,
    pub lens_id: &'a str,
    /// `None` blurs every patch.
    pub sharp: Option<SharpInterval>,
    pub source: PsfSource<'a>,
    /// Sensor pixel of the image's top-left corner.
    pub offset: (usize, usize),
}

/// All-in-focus image plus depth to an image with lens bokeh outside the
/// sharp interval.
pub fn render_dof(req: &RenderRequest) -> Result<RgbImage> {
    let (image, depth) = (req.image, req.depth);
    if image.height != depth.height || image.width != depth.width {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{} but depth is {}x{}",
            image.height, image.width, depth.height, depth.width
        )));
    }
    let layout = req.source.layout(req.offset);
    let pooled = pool_depth(depth, &layout)?;
    let mut map = req.source.psf_map(&pooled.values, req.lens_id)?;
    if let Some(interval) = &req.sharp {
        map = make_mask(&map, &pooled.values, interval)?;
    }
    let mut out = convolve_patchwise(image, &map, &layout)?;
    add_noise_and_clamp(&mut out, 0.0, 0)?;
    Ok(out)
}

/// Interval of `half_width_m` either side of the depth at pixel `(y, x)`;
/// the lower end stays positive.
pub fn select_interval_from_point(
    depth: &DepthMap,
    pixel: (usize, usize),
    half_width_m: f64,
) -> Result<SharpInterval> {
    let (y, x) = pixel;
    if y >= depth.height || x >= depth.width {
        return Err(Error::InvalidArgument(format!(
            "pixel ({y}, {x}) outside the {}x{} depth map",
            depth.height, depth.width
        )));
    }
    if !(half_width_m >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "half width must be >= 0, got {half_width_m}"
        )));
    }
    let d = depth.get(y, x).ok_or_else(|| {
        Error::InvalidArgument(format!("no depth at pixel ({y}, {x}); pick another point"))
    })?;
    let lo = (d - half_width_m).max(f64::MIN_POSITIVE);
    SharpInterval::new(lo, d + half_width_m)
}

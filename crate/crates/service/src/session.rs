use std::collections::HashMap;
use std::sync::Arc;

use lensforge::image_io::{BitDepth, DepthMap, RgbImage};
use lensforge::psflib::{D_MAX_M, D_MIN_M};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::error::ServiceError;

const CACHE_ENTRIES: usize = 16;

/// Valid-depth summary for slider initialization. Depths are clamped to the
/// 0.7 to 10 m working range; holes are excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub hole_fraction: f64,
    pub height: usize,
    pub width: usize,
}

impl DepthStats {
    pub fn of(depth: &DepthMap) -> Option<Self> {
        let mut v: Vec<f64> = depth
            .values()
            .iter()
            .zip(depth.valid_mask())
            .filter(|(_, &ok)| ok)
            .map(|(&d, _)| d.clamp(D_MIN_M, D_MAX_M))
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Some(Self {
            min: v[0],
            max: v[n - 1],
            median,
            hole_fraction: depth.hole_fraction(),
            height: depth.height,
            width: depth.width,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RenderKey {
    pub lens_id: String,
    pub lo_bits: u64,
    pub hi_bits: u64,
    pub field: bool,
}

#[derive(Debug, Clone)]
pub struct CachedRender {
    pub png: Arc<Vec<u8>>,
    pub etag: String,
    pub scale: usize,
}

pub struct Session {
    pub image: RgbImage,
    pub bit_depth: BitDepth,
    pub depth: DepthMap,
    pub stats: DepthStats,
    /// Held for the duration of a render, so renders of one session run one
    /// at a time.
    pub cache: Mutex<HashMap<RenderKey, CachedRender>>,
}

impl Session {
    pub fn new(
        image: RgbImage,
        bit_depth: BitDepth,
        depth: DepthMap,
    ) -> Result<Self, ServiceError> {
        if image.height != depth.height || image.width != depth.width {
            return Err(ServiceError::upload(
                "depth",
                format!(
                    "depth is {}x{} but image is {}x{}",
                    depth.height, depth.width, image.height, image.width
                ),
            ));
        }
        let stats = DepthStats::of(&depth)
            .ok_or_else(|| ServiceError::upload("depth", "depth map has no valid pixels"))?;
        Ok(Self {
            image,
            bit_depth,
            depth,
            stats,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn remember(
        cache: &mut HashMap<RenderKey, CachedRender>,
        key: RenderKey,
        value: CachedRender,
    ) {
        if cache.len() >= CACHE_ENTRIES {
            cache.clear();
        }
        cache.insert(key, value);
    }
}

/// Smallest integer factor that fits `(h, w)` inside `(max_h, max_w)`.
pub fn preview_scale(h: usize, w: usize, max_h: usize, max_w: usize) -> usize {
    h.div_ceil(max_h).max(w.div_ceil(max_w)).max(1)
}

/// Box-filters the image and averages valid depths over `s`×`s` blocks;
/// a block with no valid depth stays a hole.
pub fn downscale(
    image: &RgbImage,
    depth: &DepthMap,
    s: usize,
) -> Result<(RgbImage, DepthMap), ServiceError> {
    if s == 1 {
        return Ok((image.clone(), depth.clone()));
    }
    let (h, w) = (image.height / s, image.width / s);
    if h == 0 || w == 0 {
        return Err(ServiceError::Invalid("image too small to preview".into()));
    }
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for dy in 0..s {
                    for dx in 0..s {
                        acc += image.get(c, y * s + dy, x * s + dx) as f64;
                    }
                }
                data.push((acc / (s * s) as f64) as f32);
            }
        }
    }
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (mut acc, mut n) = (0.0, 0usize);
            for dy in 0..s {
                for dx in 0..s {
                    if let Some(d) = depth.get(y * s + dy, x * s + dx) {
                        acc += d;
                        n += 1;
                    }
                }
            }
            values.push(if n == 0 { f64::NAN } else { acc / n as f64 });
        }
    }
    let render = |e: lensforge::Error| ServiceError::Render(e.to_string());
    Ok((
        RgbImage::from_planar(h, w, data).map_err(render)?,
        DepthMap::from_values(h, w, values).map_err(render)?,
    ))
}

//! Named parameter sets: `paper` is the full-resolution setup, `desk` is
//! small enough to build and fit on a laptop in seconds to minutes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DepthEncoding, FieldArch, TrainConfig};
use crate::lens::{LensPrescription, SensorSpec};
use crate::psflib::{default_depths, MapTrace, PsfMapGrid};
use crate::raytrace::{chief_ray_height, ObjectDistance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub sensor_height_px: usize,
    pub sensor_width_px: usize,
    pub patch_px: usize,
    pub kernel_size: usize,
    /// Finite planes between 0.7 and 10 m; an infinity plane is added.
    pub depth_planes: usize,
    pub n_fov: usize,
    pub pupil_samples: usize,
    pub field: FieldArch,
    pub depth_encoding: DepthEncoding,
    pub holdout_fraction: f64,
    pub train: TrainConfig,
}

impl Preset {
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            sensor_height_px: 1280,
            sensor_width_px: 1920,
            patch_px: 64,
            kernel_size: 41,
            depth_planes: 11,
            n_fov: 64,
            pupil_samples: 128,
            field: FieldArch {
                input_width: 512,
                hidden_layers: 5,
                hidden_width: 2048,
                kernel_size: 41,
            },
            depth_encoding: DepthEncoding::Linear,
            holdout_fraction: 0.1,
            train: TrainConfig::default(),
        }
    }

    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            sensor_height_px: 512,
            sensor_width_px: 768,
            patch_px: 64,
            kernel_size: 11,
            depth_planes: 11,
            n_fov: 16,
            pupil_samples: 64,
            field: FieldArch {
                input_width: 64,
                hidden_layers: 1,
                hidden_width: 64,
                kernel_size: 11,
            },
            depth_encoding: DepthEncoding::Linear,
            holdout_fraction: 0.1,
            train: TrainConfig {
                iterations: 20_000,
                learning_rate: 5e-3,
                eval_every: 1000,
                ..TrainConfig::default()
            },
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset {other:?} (expected \"paper\" or \"desk\")"
            ))),
        }
    }

    pub fn grid(&self) -> Result<PsfMapGrid> {
        if self.patch_px == 0
            || !self.sensor_height_px.is_multiple_of(self.patch_px)
            || !self.sensor_width_px.is_multiple_of(self.patch_px)
        {
            return Err(Error::InvalidArgument(format!(
                "{}x{} sensor is not divisible into {} px patches",
                self.sensor_height_px, self.sensor_width_px, self.patch_px
            )));
        }
        let grid = PsfMapGrid {
            n_h: self.sensor_height_px / self.patch_px,
            n_w: self.sensor_width_px / self.patch_px,
            patch_px: self.patch_px,
            kernel_size: self.kernel_size,
            depths_m: default_depths(self.depth_planes),
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn map_trace(&self) -> MapTrace {
        MapTrace {
            n_fov: self.n_fov,
            pupil_samples: self.pupil_samples,
        }
    }

    pub fn sensor_for(&self, lens: &LensPrescription) -> Result<SensorSpec> {
        sensor_for(lens, self.sensor_height_px, self.sensor_width_px)
    }
}

/// Sensor whose semi-diagonal equals the image height of the chief ray at
/// the lens's half field of view, object at infinity.
pub fn sensor_for(
    lens: &LensPrescription,
    height_px: usize,
    width_px: usize,
) -> Result<SensorSpec> {
    let half = lens.half_fov_deg();
    let r = chief_ray_height(lens, half, ObjectDistance::Infinity).map_err(|_| {
        Error::FullyVignetted {
            field_deg: half,
            depth: "inf".into(),
        }
    })?;
    SensorSpec::from_semi_diagonal(height_px, width_px, r)
}

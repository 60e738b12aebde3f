use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use lensforge::field::DepthEncoding;
use lensforge::preset::Preset;
use serde::{Deserialize, Serialize};

use crate::Invalid;

/// Values a config file may set. Anything given on the command line wins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub sensor_height_px: Option<usize>,
    pub sensor_width_px: Option<usize>,
    pub patch_px: Option<usize>,
    pub kernel_size: Option<usize>,
    pub depth_planes: Option<usize>,
    pub n_fov: Option<usize>,
    pub pupil_samples: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub eval_every: Option<usize>,
    pub input_width: Option<usize>,
    pub hidden_layers: Option<usize>,
    pub hidden_width: Option<usize>,
    pub depth_encoding: Option<DepthEncoding>,
    pub holdout_fraction: Option<f64>,
    pub port: Option<u16>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| Invalid(format!("config {}: {}", path.display(), e.message())).into())
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML file with default values for any flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Parameter preset: desk or paper [default: desk]
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Random seed [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

/// Sensor and PSF-grid overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct GridArgs {
    /// Sensor rows in pixels
    #[arg(long)]
    pub sensor_height_px: Option<usize>,
    /// Sensor columns in pixels
    #[arg(long)]
    pub sensor_width_px: Option<usize>,
    /// Patch size m in pixels
    #[arg(long)]
    pub patch_px: Option<usize>,
    /// PSF kernel size k (odd)
    #[arg(long)]
    pub kernel_size: Option<usize>,
    /// Finite depth planes between 0.7 and 10 m (an infinity plane is added)
    #[arg(long)]
    pub depth_planes: Option<usize>,
    /// Meridional field samples
    #[arg(long)]
    pub n_fov: Option<usize>,
    /// Pupil grid samples per side
    #[arg(long)]
    pub pupil_samples: Option<usize>,
}

/// Neural-field architecture and training overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Optimizer steps
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Cells per step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak AdamW rate (cosine-annealed to zero)
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// AdamW decoupled weight decay
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Metrics row every N iterations (0: only at the end)
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Width of the input layer
    #[arg(long)]
    pub input_width: Option<usize>,
    /// Number of hidden layers N
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    /// Width of each hidden layer
    #[arg(long)]
    pub hidden_width: Option<usize>,
    /// linear or inverse
    #[arg(long, value_parser = parse_encoding)]
    pub depth_encoding: Option<DepthEncoding>,
    /// Fraction of cells held out for evaluation
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
}

fn parse_encoding(s: &str) -> std::result::Result<DepthEncoding, String> {
    match s {
        "linear" => Ok(DepthEncoding::Linear),
        "inverse" => Ok(DepthEncoding::Inverse),
        other => Err(format!("expected linear or inverse, got {other:?}")),
    }
}

/// Fully resolved settings; this is what the config hash covers.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub preset: Preset,
    pub seed: u64,
    pub noise_sigma: f64,
    pub port: u16,
}

pub struct Layers {
    pub file: FileConfig,
    pub common: CommonArgs,
}

impl Layers {
    pub fn new(common: &CommonArgs) -> Result<Self> {
        let file = match &common.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Ok(Self {
            file,
            common: common.clone(),
        })
    }

    pub fn workers(&self) -> Option<usize> {
        self.common.workers.or(self.file.workers)
    }

    pub fn resolve(
        &self,
        grid: &GridArgs,
        train: &TrainArgs,
        noise: Option<f64>,
        port: Option<u16>,
    ) -> Result<Resolved> {
        let f = &self.file;
        let name = self
            .common
            .preset
            .clone()
            .or(f.preset.clone())
            .unwrap_or_else(|| "desk".into());
        let mut p = Preset::by_name(&name).map_err(|e| Invalid(e.to_string()))?;
        macro_rules! layer {
            ($dst:expr, $flag:expr, $file:expr) => {
                if let Some(v) = $flag.or($file) {
                    $dst = v;
                }
            };
        }
        layer!(
            p.sensor_height_px,
            grid.sensor_height_px,
            f.sensor_height_px
        );
        layer!(p.sensor_width_px, grid.sensor_width_px, f.sensor_width_px);
        layer!(p.patch_px, grid.patch_px, f.patch_px);
        layer!(p.kernel_size, grid.kernel_size, f.kernel_size);
        layer!(p.depth_planes, grid.depth_planes, f.depth_planes);
        layer!(p.n_fov, grid.n_fov, f.n_fov);
        layer!(p.pupil_samples, grid.pupil_samples, f.pupil_samples);
        layer!(p.train.iterations, train.iterations, f.iterations);
        layer!(p.train.batch_size, train.batch_size, f.batch_size);
        layer!(p.train.learning_rate, train.learning_rate, f.learning_rate);
        layer!(p.train.weight_decay, train.weight_decay, f.weight_decay);
        layer!(p.train.eval_every, train.eval_every, f.eval_every);
        layer!(p.field.input_width, train.input_width, f.input_width);
        layer!(p.field.hidden_layers, train.hidden_layers, f.hidden_layers);
        layer!(p.field.hidden_width, train.hidden_width, f.hidden_width);
        layer!(p.depth_encoding, train.depth_encoding, f.depth_encoding);
        layer!(
            p.holdout_fraction,
            train.holdout_fraction,
            f.holdout_fraction
        );
        p.field.kernel_size = p.kernel_size;
        let seed = self.common.seed.or(f.seed).unwrap_or(0);
        p.train.seed = seed;

        let r = Resolved {
            preset: p,
            seed,
            noise_sigma: noise.or(f.noise_sigma).unwrap_or(0.0),
            port: port.or(f.port).unwrap_or(lensforge_service::DEFAULT_PORT),
        };
        r.validate()?;
        Ok(r)
    }
}

impl Resolved {
    fn validate(&self) -> Result<()> {
        let p = &self.preset;
        p.grid().map_err(|e| Invalid(e.to_string()))?;
        p.field.validate().map_err(|e| Invalid(e.to_string()))?;
        let bad = |m: &str| -> Result<()> { Err(Invalid(m.to_string()).into()) };
        if p.n_fov < 2 {
            return bad("n_fov must be at least 2");
        }
        if p.pupil_samples == 0 {
            return bad("pupil_samples must be positive");
        }
        if p.train.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(p.train.learning_rate > 0.0 && p.train.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&p.holdout_fraction) {
            return bad("holdout_fraction must be in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        Ok(())
    }
}

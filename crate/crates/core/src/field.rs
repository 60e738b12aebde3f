//! Omni-Lens-Field: an MLP mapping normalized (h, w, d, lens) coordinates to
//! RGB PSF kernels, with backpropagation, AdamW training and a compact
//! binary file format.
//!
//! Weights live in f64 during training and are rounded to f32 once training
//! ends or a model is loaded, so the on-disk f32 weights reproduce the
//! in-memory model exactly.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::psflib::{PsfLibrary, PsfMap, D_MAX_M, D_MIN_M};

pub const MAGIC: &[u8; 4] = b"OLF1";
pub const INPUT_DIM: usize = 4;
const HEADS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DepthEncoding {
    /// `(d - d_min) / (d_max - d_min)`, clamped; infinity maps to 1.
    #[default]
    Linear,
    /// `(1/d_min - 1/d) / (1/d_min)`, clamped; infinity maps to 1.
    Inverse,
}

impl DepthEncoding {
    pub fn encode(self, d_m: f64) -> f64 {
        let v = match self {
            DepthEncoding::Linear => (d_m - D_MIN_M) / (D_MAX_M - D_MIN_M),
            DepthEncoding::Inverse => {
                let inv = if d_m.is_infinite() { 0.0 } else { 1.0 / d_m };
                (1.0 / D_MIN_M - inv) * D_MIN_M
            }
        };
        if v.is_nan() {
            1.0
        } else {
            v.clamp(0.0, 1.0)
        }
    }

    fn code(self) -> u32 {
        match self {
            DepthEncoding::Linear => 0,
            DepthEncoding::Inverse => 1,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(DepthEncoding::Linear),
            1 => Some(DepthEncoding::Inverse),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldArch {
    pub input_width: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub kernel_size: usize,
}

impl FieldArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0
            || self.kernel_size == 0
            || (self.hidden_layers > 0 && self.hidden_width == 0)
        {
            return Err(Error::InvalidArgument(
                "field layer widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every trunk layer.
    fn trunk_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(INPUT_DIM, self.input_width)];
        let mut prev = self.input_width;
        for _ in 0..self.hidden_layers {
            shapes.push((prev, self.hidden_width));
            prev = self.hidden_width;
        }
        shapes
    }

    fn trunk_out(&self) -> usize {
        if self.hidden_layers > 0 {
            self.hidden_width
        } else {
            self.input_width
        }
    }

    pub fn head_width(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    pub fn output_width(&self) -> usize {
        HEADS * self.head_width()
    }

    pub fn param_count(&self) -> usize {
        let trunk: usize = self.trunk_shapes().iter().map(|(i, o)| i * o + o).sum();
        trunk + HEADS * (self.trunk_out() * self.head_width() + self.head_width())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// `fan_in × fan_out`.
    w: Array2<f64>,
    b: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn uniform(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut sample = || rng.random_range(-bound..bound);
        Self {
            w: Array2::from_shape_simple_fn((fan_in, fan_out), &mut sample),
            b: Array1::from_shape_simple_fn(fan_out, &mut sample),
        }
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    pub arch: FieldArch,
    pub depth_encoding: DepthEncoding,
    /// Lens ids in encoding order; lens `i` is fed as `i / (count - 1)`.
    pub lens_ids: Vec<String>,
    trunk: Vec<Dense>,
    heads: Vec<Dense>,
}

/// Gradients in the same layout as the model's parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    trunk: Vec<Dense>,
    heads: Vec<Dense>,
}

impl Gradients {
    /// Flattened in parameter order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for d in self.trunk.iter().chain(&self.heads) {
            out.extend(d.w.iter());
            out.extend(d.b.iter());
        }
        out
    }
}

struct Activations {
    /// Input followed by every trunk layer's post-ReLU output.
    trunk: Vec<Array2<f64>>,
    /// Sigmoid outputs per head.
    heads: Vec<Array2<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl FieldModel {
    fn build(
        arch: FieldArch,
        lens_ids: Vec<String>,
        depth_encoding: DepthEncoding,
        mut make: impl FnMut(usize, usize) -> Dense,
    ) -> Result<Self> {
        arch.validate()?;
        if lens_ids.is_empty() {
            return Err(Error::InvalidArgument(
                "a field model needs at least one lens id".into(),
            ));
        }
        let trunk = arch
            .trunk_shapes()
            .into_iter()
            .map(|(i, o)| make(i, o))
            .collect();
        let heads = (0..HEADS)
            .map(|_| make(arch.trunk_out(), arch.head_width()))
            .collect();
        Ok(Self {
            arch,
            depth_encoding,
            lens_ids,
            trunk,
            heads,
        })
    }

    /// Uniform fan-in scaled initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new_random(
        arch: FieldArch,
        lens_ids: Vec<String>,
        depth_encoding: DepthEncoding,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::build(arch, lens_ids, depth_encoding, |i, o| {
            Dense::uniform(i, o, &mut rng)
        })?;
        model.round_to_f32();
        Ok(model)
    }

    pub fn zeros(
        arch: FieldArch,
        lens_ids: Vec<String>,
        depth_encoding: DepthEncoding,
    ) -> Result<Self> {
        Self::build(arch, lens_ids, depth_encoding, Dense::zeros)
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.trunk.iter_mut().chain(self.heads.iter_mut())
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain(self.heads.iter())
    }

    /// Parameters flattened in file order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for d in self.layers() {
            out.extend(d.w.iter());
            out.extend(d.b.iter());
        }
        out
    }

    /// Mutable access to parameter `index` in file order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for d in self.layers_mut() {
            let n = d.w.len();
            if index < n {
                return d
                    .w
                    .as_slice_mut()
                    .expect("standard layout")
                    .get_mut(index)
                    .expect("in range");
            }
            index -= n;
            let n = d.b.len();
            if index < n {
                return &mut d.b[index];
            }
            index -= n;
        }
        panic!("parameter index out of range");
    }

    pub fn round_to_f32(&mut self) {
        for d in self.layers_mut() {
            d.w.mapv_inplace(|v| v as f32 as f64);
            d.b.mapv_inplace(|v| v as f32 as f64);
        }
    }

    pub fn lens_index(&self, lens_id: &str) -> Result<usize> {
        self.lens_ids
            .iter()
            .position(|l| l == lens_id)
            .ok_or_else(|| Error::UnknownLens(lens_id.to_string()))
    }

    /// Normalized lens coordinate of lens `index`.
    pub fn lens_coord(&self, index: usize) -> f64 {
        if self.lens_ids.len() <= 1 {
            0.0
        } else {
            index as f64 / (self.lens_ids.len() - 1) as f64
        }
    }

    fn forward_cached(&self, x: ArrayView2<f64>) -> Activations {
        let mut trunk = Vec::with_capacity(self.trunk.len() + 1);
        trunk.push(x.to_owned());
        for layer in &self.trunk {
            let z = layer.apply(&trunk.last().expect("input").view());
            trunk.push(z.mapv(|v| v.max(0.0)));
        }
        let last = trunk.last().expect("trunk output").view();
        let heads = self
            .heads
            .iter()
            .map(|h| h.apply(&last).mapv(sigmoid))
            .collect();
        Activations { trunk, heads }
    }

    /// Outputs for a batch of inputs (`B × 4`), `B × 3k²` with channels
    /// concatenated in R, G, B order.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let acts = self.forward_cached(x);
        let views: Vec<_> = acts.heads.iter().map(|a| a.view()).collect();
        ndarray::concatenate(Axis(1), &views).expect("equal batch sizes")
    }

    /// Raw sigmoid kernel for one input (not renormalized).
    pub fn forward(&self, input: [f64; INPUT_DIM]) -> Kernel {
        let x = Array2::from_shape_vec((1, INPUT_DIM), input.to_vec()).expect("shape");
        let y = self.forward_batch(x.view());
        Kernel::from_data(
            self.arch.kernel_size,
            HEADS,
            y.iter().map(|&v| v as f32).collect(),
        )
    }

    /// Mean squared error over every output value of the batch, and its
    /// exact gradient.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> (f64, Gradients) {
        let acts = self.forward_cached(x);
        let batch = x.nrows();
        let hw = self.arch.head_width();
        let scale = 2.0 / (batch * self.arch.output_width()) as f64;
        let mut loss = 0.0;
        let last = acts.trunk.last().expect("trunk output");
        let mut d_trunk = Array2::<f64>::zeros(last.raw_dim());
        let mut head_grads = Vec::with_capacity(HEADS);
        for (c, (head, y)) in self.heads.iter().zip(&acts.heads).enumerate() {
            let t = targets.slice(s![.., c * hw..(c + 1) * hw]);
            let diff = y - &t;
            loss += diff.iter().map(|v| v * v).sum::<f64>();
            let dz = &diff * scale * &y.mapv(|v| v * (1.0 - v));
            head_grads.push(Dense {
                w: last.t().dot(&dz),
                b: dz.sum_axis(Axis(0)),
            });
            d_trunk += &dz.dot(&head.w.t());
        }
        loss /= (batch * self.arch.output_width()) as f64;

        let mut trunk_grads = Vec::with_capacity(self.trunk.len());
        let mut da = d_trunk;
        for (l, layer) in self.trunk.iter().enumerate().rev() {
            let out = &acts.trunk[l + 1];
            let dz = da * &out.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let input = &acts.trunk[l];
            trunk_grads.push(Dense {
                w: input.t().dot(&dz),
                b: dz.sum_axis(Axis(0)),
            });
            da = dz.dot(&layer.w.t());
        }
        trunk_grads.reverse();
        (
            loss,
            Gradients {
                trunk: trunk_grads,
                heads: head_grads,
            },
        )
    }

    pub fn loss(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> f64 {
        let y = self.forward_batch(x);
        let d = &y - &targets;
        d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64
    }

    /// Input vector for patch `(i, j)` of an `n_h × n_w` grid.
    pub fn encode(
        &self,
        i: usize,
        j: usize,
        n_h: usize,
        n_w: usize,
        d_m: f64,
        lens_index: usize,
    ) -> [f64; INPUT_DIM] {
        [
            unit_coord(i, n_h),
            unit_coord(j, n_w),
            self.depth_encoding.encode(d_m),
            self.lens_coord(lens_index),
        ]
    }

    /// Unit-sum PSF map for patch-resolution depths (row-major, `n_h * n_w`).
    pub fn psf_map(
        &self,
        depth_avg: &[f64],
        n_h: usize,
        n_w: usize,
        lens_id: &str,
    ) -> Result<PsfMap> {
        if depth_avg.len() != n_h * n_w {
            return Err(Error::DimensionMismatch(format!(
                "{} depth cells for a {n_h}x{n_w} grid",
                depth_avg.len()
            )));
        }
        let lens = self.lens_index(lens_id)?;
        let mut x = Array2::zeros((n_h * n_w, INPUT_DIM));
        for (c, &d) in depth_avg.iter().enumerate() {
            let v = self.encode(c / n_w, c % n_w, n_h, n_w, d, lens);
            x.row_mut(c).assign(&ndarray::arr1(&v));
        }
        let y = self.forward_batch(x.view());
        let k = self.arch.kernel_size;
        let kernels = y
            .rows()
            .into_iter()
            .map(|row| {
                Kernel::from_data(k, HEADS, row.iter().map(|&v| v as f32).collect()).normalized()
            })
            .collect();
        Ok(PsfMap { n_h, n_w, kernels })
    }

    fn header_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let a = &self.arch;
        for v in [
            INPUT_DIM,
            a.input_width,
            a.hidden_layers,
            a.hidden_width,
            a.kernel_size,
            self.depth_encoding.code() as usize,
            self.lens_ids.len(),
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for id in &self.lens_ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    pub fn header_len(&self) -> usize {
        self.header_bytes().len()
    }

    /// Serialized size: header, f32 parameters, CRC32.
    pub fn file_size(&self) -> usize {
        self.header_len() + 4 * self.param_count() + 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header_bytes();
        for v in self.flat_params() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(path, m);
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("not a field model (bad magic)"));
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
        let mut pos = 4;
        let u32_at = |pos: &mut usize| -> Result<u32> {
            let b = body
                .get(*pos..*pos + 4)
                .ok_or_else(|| bad("truncated header"))?;
            *pos += 4;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
        };
        let mut dims = [0u32; 7];
        for d in dims.iter_mut() {
            *d = u32_at(&mut pos)?;
        }
        let [input_dim, input_width, hidden_layers, hidden_width, kernel_size, enc, lens_count] =
            dims;
        if input_dim as usize != INPUT_DIM {
            return Err(bad(&format!(
                "input dimension {input_dim}, expected {INPUT_DIM}"
            )));
        }
        let depth_encoding =
            DepthEncoding::from_code(enc).ok_or_else(|| bad("unknown depth encoding"))?;
        let mut lens_ids = Vec::new();
        for _ in 0..lens_count {
            let n = u32_at(&mut pos)? as usize;
            let b = body
                .get(pos..pos + n)
                .ok_or_else(|| bad("truncated lens table"))?;
            pos += n;
            lens_ids.push(String::from_utf8(b.to_vec()).map_err(|_| bad("lens id is not UTF-8"))?);
        }
        let arch = FieldArch {
            input_width: input_width as usize,
            hidden_layers: hidden_layers as usize,
            hidden_width: hidden_width as usize,
            kernel_size: kernel_size as usize,
        };
        arch.validate().map_err(|e| bad(&e.to_string()))?;
        let payload = &body[pos..];
        if payload.len() != 4 * arch.param_count() {
            return Err(bad(&format!(
                "weights hold {} floats, architecture needs {}",
                payload.len() / 4,
                arch.param_count()
            )));
        }
        let mut model =
            Self::zeros(arch, lens_ids, depth_encoding).map_err(|e| bad(&e.to_string()))?;
        for (i, c) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(bad("non-finite weight"));
            }
            *model.param_mut(i) = v as f64;
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, path)
    }
}

fn unit_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

pub fn psnr(mse: f64) -> f64 {
    10.0 * (1.0 / mse).log10()
}

/// Training pairs drawn from one or more libraries. Targets are kernels
/// scaled so each channel peaks at 1.
#[derive(Debug, Clone)]
pub struct FieldDataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
}

impl FieldDataset {
    /// One sample per library cell; a seeded `holdout_fraction` of cells is
    /// kept out of training.
    pub fn from_libraries(
        libs: &[&PsfLibrary],
        lens_ids: &[String],
        encoding: DepthEncoding,
        holdout_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let Some(first) = libs.first() else {
            return Err(Error::InvalidArgument("no libraries to fit".into()));
        };
        let k = first.grid.kernel_size;
        if libs.iter().any(|l| l.grid.kernel_size != k) {
            return Err(Error::DimensionMismatch(
                "libraries must share the kernel size".into(),
            ));
        }
        if !(0.0..1.0).contains(&holdout_fraction) {
            return Err(Error::InvalidArgument(
                "holdout fraction must be in [0, 1)".into(),
            ));
        }
        let probe = FieldModel::zeros(
            FieldArch {
                input_width: 1,
                hidden_layers: 0,
                hidden_width: 0,
                kernel_size: k,
            },
            lens_ids.to_vec(),
            encoding,
        )?;
        let total: usize = libs
            .iter()
            .map(|l| l.grid.depths_m.len() * l.grid.cells())
            .sum();
        let width = HEADS * k * k;
        let mut inputs = Array2::zeros((total, INPUT_DIM));
        let mut targets = Array2::zeros((total, width));
        let mut row = 0;
        for lib in libs {
            let lens = probe.lens_index(&lib.lens_id)?;
            let g = &lib.grid;
            for (d, &depth) in g.depths_m.iter().enumerate() {
                for h in 0..g.n_h {
                    for w in 0..g.n_w {
                        let x = probe.encode(h, w, g.n_h, g.n_w, depth, lens);
                        inputs.row_mut(row).assign(&ndarray::arr1(&x));
                        let kern = lib.kernel(d, h, w).peak_normalized();
                        for (t, &v) in targets.row_mut(row).iter_mut().zip(kern.data()) {
                            *t = v as f64;
                        }
                        row += 1;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fce11));
        let n_hold = (total as f64 * holdout_fraction).round() as usize;
        let mut heldout = order[..n_hold].to_vec();
        let mut train = order[n_hold..].to_vec();
        heldout.sort_unstable();
        train.sort_unstable();
        Ok(Self {
            inputs,
            targets,
            train,
            heldout,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, rows: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (
            self.inputs.select(Axis(0), rows),
            self.targets.select(Axis(0), rows),
        )
    }

    /// Mean squared error of `model` over `rows`, evaluated in chunks.
    pub fn mse(&self, model: &FieldModel, rows: &[usize]) -> f64 {
        if rows.is_empty() {
            return f64::NAN;
        }
        let mut sum = 0.0;
        for chunk in rows.chunks(512) {
            let (x, t) = self.gather(chunk);
            sum += model.loss(x.view(), t.view()) * chunk.len() as f64;
        }
        sum / rows.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Iterations between metric rows.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 600_000,
            batch_size: 64,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            eval_every: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    /// Mean training-batch loss since the previous row.
    pub loss: f64,
    pub train_psnr: f64,
    pub heldout_psnr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub metrics: Vec<MetricRow>,
    /// Batch loss at every iteration.
    pub losses: Vec<f64>,
}

/// Cosine-annealed rate at iteration `t` of `total`.
pub fn cosine_lr(base: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    0.5 * base * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos())
}

/// AdamW state for a flattened parameter vector.
struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamW {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, model: &mut FieldModel, grads: &Gradients, lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        let mut idx = 0;
        let layers = model.trunk.iter_mut().chain(model.heads.iter_mut());
        let glayers = grads.trunk.iter().chain(grads.heads.iter());
        for (p, g) in layers.zip(glayers) {
            let pw = p.w.as_slice_mut().expect("standard layout").iter_mut();
            let gw = g.w.iter();
            let pb = p.b.iter_mut();
            let gb = g.b.iter();
            for (w, &gr) in pw.chain(pb).zip(gw.chain(gb)) {
                let m = &mut self.m[idx];
                let v = &mut self.v[idx];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gr;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gr * gr;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * *w);
                idx += 1;
            }
        }
    }
}

/// Fits `model` to the training cells of `data`, sampling batches uniformly
/// with replacement.
pub fn train(
    model: &mut FieldModel,
    data: &FieldDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("no training cells".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if data.targets.ncols() != model.arch.output_width() {
        return Err(Error::DimensionMismatch(format!(
            "targets have {} values, model outputs {}",
            data.targets.ncols(),
            model.arch.output_width()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(model.param_count());
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut metrics = Vec::new();
    let mut since = 0.0;
    let mut since_n = 0usize;
    let mut batch = vec![0usize; cfg.batch_size];
    for it in 0..cfg.iterations {
        for b in batch.iter_mut() {
            *b = data.train[rng.random_range(0..data.train.len())];
        }
        let (x, t) = data.gather(&batch);
        let (loss, grads) = model.loss_and_gradients(x.view(), t.view());
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                loss,
            });
        }
        losses.push(loss);
        since += loss;
        since_n += 1;
        opt.update(
            model,
            &grads,
            cosine_lr(cfg.learning_rate, it, cfg.iterations),
            cfg,
        );
        let done = it + 1;
        if cfg.eval_every > 0 && (done % cfg.eval_every == 0 || done == cfg.iterations) {
            let row = MetricRow {
                iteration: done,
                loss: since / since_n as f64,
                train_psnr: psnr(data.mse(model, &data.train)),
                heldout_psnr: psnr(data.mse(model, &data.heldout)),
            };
            log::info!(
                "iter {done}: loss {:.3e}, train {:.2} dB, held-out {:.2} dB",
                row.loss,
                row.train_psnr,
                row.heldout_psnr
            );
            metrics.push(row);
            since = 0.0;
            since_n = 0;
        }
    }
    model.round_to_f32();
    Ok(TrainReport { metrics, losses })
}

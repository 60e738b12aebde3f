//! Square multi-channel convolution kernels.
//!
//! Data is stored channel-major, then row-major: `data[(c * k + row) * k + col]`.
//! Row offsets follow +y on the sensor and column offsets follow +x, measured
//! from the centre pixel `(k - 1) / 2`.

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    k: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Kernel {
    pub fn zeros(k: usize, channels: usize) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        Self {
            k,
            channels,
            data: vec![0.0; channels * k * k],
        }
    }

    /// Identity kernel: one at the centre of every channel.
    pub fn delta(k: usize, channels: usize) -> Self {
        let mut out = Self::zeros(k, channels);
        let c = k / 2;
        for ch in 0..channels {
            out.data[(ch * k + c) * k + c] = 1.0;
        }
        out
    }

    pub fn from_data(k: usize, channels: usize, data: Vec<f32>) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        assert_eq!(data.len(), channels * k * k, "kernel data length");
        Self { k, channels, data }
    }

    /// Stacks single-channel kernels of equal size.
    pub fn stack(parts: &[Kernel]) -> Self {
        let k = parts[0].k;
        let mut data = Vec::with_capacity(parts.len() * k * k);
        for p in parts {
            assert_eq!(p.k, k);
            data.extend_from_slice(&p.data);
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        Self { k, channels, data }
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.k * self.k;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.k * self.k;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.k + row) * self.k + col]
    }

    pub fn channel_sum(&self, c: usize) -> f64 {
        self.channel(c).iter().map(|&v| v as f64).sum()
    }

    pub fn is_delta(&self) -> bool {
        let c = self.k / 2;
        (0..self.channels).all(|ch| {
            self.channel(ch).iter().enumerate().all(|(i, &v)| {
                if i == c * self.k + c {
                    v == 1.0
                } else {
                    v == 0.0
                }
            })
        })
    }

    /// Scales every channel to unit sum. Channels that sum to zero become deltas.
    pub fn normalize(&mut self) {
        let k = self.k;
        for ch in 0..self.channels {
            let total = self.channel_sum(ch);
            let chan = self.channel_mut(ch);
            if total > 0.0 {
                let inv = 1.0 / total;
                for v in chan.iter_mut() {
                    *v = (*v as f64 * inv) as f32;
                }
            } else {
                chan.fill(0.0);
                chan[(k / 2) * k + k / 2] = 1.0;
            }
        }
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    /// Largest entry per channel scaled to one.
    pub fn peak_normalized(&self) -> Self {
        let mut out = self.clone();
        for ch in 0..self.channels {
            let chan = out.channel_mut(ch);
            let peak = chan.iter().copied().fold(0.0f32, f32::max);
            if peak > 0.0 {
                for v in chan.iter_mut() {
                    *v /= peak;
                }
            }
        }
        out
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum()
    }

    /// L1 distance relative to the L1 mass of `reference`.
    pub fn relative_l1(&self, reference: &Self) -> f64 {
        let mass: f64 = reference.data.iter().map(|&v| (v as f64).abs()).sum();
        self.l1_distance(reference) / mass
    }

    /// `(1 - t) * a + t * b`.
    pub fn lerp(a: &Self, b: &Self, t: f64) -> Self {
        assert_eq!(a.data.len(), b.data.len());
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| ((1.0 - t) * x as f64 + t * y as f64) as f32)
            .collect();
        Self {
            k: a.k,
            channels: a.channels,
            data,
        }
    }

    /// Bilinear sample of channel `c` at fractional offsets from the centre;
    /// zero outside the window.
    fn sample(&self, c: usize, x: f64, y: f64) -> f64 {
        let half = (self.k / 2) as f64;
        let fx = x + half;
        let fy = y + half;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let mut acc = 0.0;
        for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
            for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                let xi = x0 as i64 + dx;
                let yi = y0 as i64 + dy;
                if xi >= 0 && yi >= 0 && (xi as usize) < self.k && (yi as usize) < self.k {
                    acc += w * self.get(c, yi as usize, xi as usize) as f64;
                }
            }
        }
        acc
    }

    /// Rotates the kernel counter-clockwise (from +x towards +y) by `angle`
    /// radians about its centre with bilinear resampling, then renormalizes
    /// each channel to its original sum.
    pub fn rotated(&self, angle: f64) -> Self {
        if angle == 0.0 {
            return self.clone();
        }
        let (s, c) = angle.sin_cos();
        let half = (self.k / 2) as f64;
        let mut out = Self::zeros(self.k, self.channels);
        for ch in 0..self.channels {
            let before = self.channel_sum(ch);
            for row in 0..self.k {
                for col in 0..self.k {
                    let x = col as f64 - half;
                    let y = row as f64 - half;
                    // inverse rotation of the output position
                    let sx = c * x + s * y;
                    let sy = -s * x + c * y;
                    out.data[(ch * self.k + row) * self.k + col] = self.sample(ch, sx, sy) as f32;
                }
            }
            rescale_channel(out.channel_mut(ch), before);
        }
        out
    }

    /// Resamples from `from_pitch` to `to_pitch` (mm per pixel, rows and
    /// columns) into a `k_out` window, preserving each channel's sum.
    pub fn resampled(&self, from_pitch: (f64, f64), to_pitch: (f64, f64), k_out: usize) -> Self {
        if from_pitch == to_pitch && k_out == self.k {
            return self.clone();
        }
        let half = (k_out / 2) as f64;
        let sy = to_pitch.0 / from_pitch.0;
        let sx = to_pitch.1 / from_pitch.1;
        let mut out = Self::zeros(k_out, self.channels);
        for ch in 0..self.channels {
            let before = self.channel_sum(ch);
            for row in 0..k_out {
                for col in 0..k_out {
                    let x = (col as f64 - half) * sx;
                    let y = (row as f64 - half) * sy;
                    out.data[(ch * k_out + row) * k_out + col] = self.sample(ch, x, y) as f32;
                }
            }
            rescale_channel(out.channel_mut(ch), before);
        }
        out
    }

    /// Mirror image across the vertical (column) axis: x -> -x.
    pub fn mirrored_x(&self) -> Self {
        let mut out = self.clone();
        let k = self.k;
        for ch in 0..self.channels {
            for row in 0..k {
                for col in 0..k {
                    out.data[(ch * k + row) * k + col] = self.get(ch, row, k - 1 - col);
                }
            }
        }
        out
    }

    /// Radial second moment `E[r²]` of channel `c` about its centroid, in
    /// pixel units squared.
    pub fn second_moment(&self, c: usize) -> f64 {
        let k = self.k;
        let chan = self.channel(c);
        let total: f64 = chan.iter().map(|&v| v as f64).sum();
        let (mut mx, mut my) = (0.0, 0.0);
        for row in 0..k {
            for col in 0..k {
                let w = chan[row * k + col] as f64;
                mx += w * col as f64;
                my += w * row as f64;
            }
        }
        mx /= total;
        my /= total;
        let mut m2 = 0.0;
        for row in 0..k {
            for col in 0..k {
                let w = chan[row * k + col] as f64;
                m2 += w * ((col as f64 - mx).powi(2) + (row as f64 - my).powi(2));
            }
        }
        m2 / total
    }
}

fn rescale_channel(chan: &mut [f32], target: f64) {
    let now: f64 = chan.iter().map(|&v| v as f64).sum();
    if now > 0.0 {
        let f = target / now;
        for v in chan.iter_mut() {
            *v = (*v as f64 * f) as f32;
        }
    }
}

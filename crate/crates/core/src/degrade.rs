//! Synthetic degradations and procedural clean images.
//!
//! Stand-ins for real datasets: a seeded generator produces piecewise-smooth
//! clean images, and five parameterized degradation models corrupt them.
//! Every function here is a pure function of its arguments, so a (spec, seed)
//! pair always yields the same image.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

const TAG_STREAKS: u64 = 0x5261_696e; // stream tag for rain geometry

/// Blur kernel family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlurKernel {
    Gaussian { size: usize, sigma: f64 },
    Motion { length: usize, angle_deg: f64 },
}

/// One synthetic degradation model with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Degradation {
    /// Additive white Gaussian noise; sigma quoted on the 0-255 scale.
    Noise { sigma: f64 },
    /// Additive bright oriented streaks.
    Rain { count: usize, length: f64, angle_deg: f64, intensity: f64 },
    /// Atmospheric scattering with scalar transmission: `x*t + A*(1-t)`.
    Haze { t: f64, airlight: f64 },
    Blur { kernel: BlurKernel },
    /// `gain * x^gamma` with `gain <= 1`, `gamma >= 1`.
    Lowlight { gamma: f64, gain: f64 },
}

impl Degradation {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Degradation::Noise { .. } => "noise",
            Degradation::Rain { .. } => "rain",
            Degradation::Haze { .. } => "haze",
            Degradation::Blur { .. } => "blur",
            Degradation::Lowlight { .. } => "lowlight",
        }
    }

    /// Up to four defining parameters, padded with zeros (CSV columns).
    pub fn params(&self) -> [f64; 4] {
        match *self {
            Degradation::Noise { sigma } => [sigma, 0.0, 0.0, 0.0],
            Degradation::Rain { count, length, angle_deg, intensity } => {
                [count as f64, length, angle_deg, intensity]
            }
            Degradation::Haze { t, airlight } => [t, airlight, 0.0, 0.0],
            Degradation::Blur { kernel: BlurKernel::Gaussian { size, sigma } } => {
                [size as f64, sigma, 0.0, 0.0]
            }
            Degradation::Blur { kernel: BlurKernel::Motion { length, angle_deg } } => {
                [length as f64, angle_deg, 1.0, 0.0]
            }
            Degradation::Lowlight { gamma, gain } => [gamma, gain, 0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(msg));
        match *self {
            Degradation::Noise { sigma } => {
                if !(sigma > 0.0 && sigma <= 255.0) {
                    return bad(format!("noise sigma {sigma} outside (0,255]"));
                }
            }
            Degradation::Rain { count, length, intensity, .. } => {
                if count == 0 || length <= 0.0 || intensity <= 0.0 {
                    return bad("rain needs positive count/length/intensity".into());
                }
            }
            Degradation::Haze { t, airlight } => {
                if !(t > 0.0 && t <= 1.0) {
                    return bad(format!("haze transmission {t} outside (0,1]"));
                }
                if !(0.0..=1.0).contains(&airlight) {
                    return bad(format!("haze airlight {airlight} outside [0,1]"));
                }
            }
            Degradation::Blur { kernel: BlurKernel::Gaussian { size, sigma } } => {
                if size < 3 || size % 2 == 0 {
                    return bad(format!("blur kernel size {size} must be odd and >= 3"));
                }
                if sigma <= 0.0 {
                    return bad(format!("blur sigma {sigma} must be positive"));
                }
            }
            Degradation::Blur { kernel: BlurKernel::Motion { length, .. } } => {
                if length < 3 || length % 2 == 0 {
                    return bad(format!("motion length {length} must be odd and >= 3"));
                }
            }
            Degradation::Lowlight { gamma, gain } => {
                if gamma < 1.0 {
                    return bad(format!("lowlight gamma {gamma} must be >= 1"));
                }
                if !(gain > 0.0 && gain <= 1.0) {
                    return bad(format!("lowlight gain {gain} outside (0,1]"));
                }
            }
        }
        Ok(())
    }

    /// The four analysis defaults: noise 25, rain, haze (t=0.5, A=0.8),
    /// Gaussian blur (k=9, sigma=2).
    pub fn analysis_defaults() -> Vec<Degradation> {
        vec![
            Degradation::Noise { sigma: 25.0 },
            Degradation::default_rain(),
            Degradation::Haze { t: 0.5, airlight: 0.8 },
            Degradation::Blur { kernel: BlurKernel::Gaussian { size: 9, sigma: 2.0 } },
        ]
    }

    pub fn default_rain() -> Degradation {
        Degradation::Rain { count: 40, length: 12.0, angle_deg: 75.0, intensity: 0.25 }
    }
}

/// A degradation model plus the seed that drives its randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    pub kind: Degradation,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: Degradation, seed: u64) -> Self {
        DegradationSpec { kind, seed }
    }

    /// Same degradation, different randomness stream.
    pub fn with_seed(&self, seed: u64) -> Self {
        DegradationSpec { kind: self.kind.clone(), seed }
    }
}

/// A clean/degraded pair sharing shape and the spec that produced it.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub clean: Tensor,
    pub degraded: Tensor,
    pub spec: DegradationSpec,
}

/// Apply a degradation to a clean `[3,H,W]` image in `[0,1]`.
pub fn apply(clean: &Tensor, spec: &DegradationSpec) -> Result<ImagePair> {
    spec.kind.validate()?;
    let shape = clean.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Dimension(format!("apply expects [3,H,W], got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let x = clean.to_vec();
    let mut rng = Rng::new(spec.seed);
    let out: Vec<f64> = match &spec.kind {
        Degradation::Noise { sigma } => {
            let s = sigma / 255.0;
            x.iter().map(|v| (v + s * rng.normal()).clamp(0.0, 1.0)).collect()
        }
        Degradation::Haze { t, airlight } => {
            let add = airlight * (1.0 - t);
            x.iter().map(|v| (v * t + add).clamp(0.0, 1.0)).collect()
        }
        Degradation::Lowlight { gamma, gain } => {
            x.iter().map(|v| (gain * v.powf(*gamma)).clamp(0.0, 1.0)).collect()
        }
        Degradation::Rain { count, length, angle_deg, intensity } => {
            let streaks = rain_layer(
                h,
                w,
                *count,
                *length,
                *angle_deg,
                *intensity,
                &mut Rng::new(derive_seed(spec.seed, TAG_STREAKS, 0)),
            );
            let plane = h * w;
            let mut out = x.clone();
            for c in 0..3 {
                for i in 0..plane {
                    out[c * plane + i] = (out[c * plane + i] + streaks[i]).clamp(0.0, 1.0);
                }
            }
            out
        }
        Degradation::Blur { kernel } => {
            let k = match kernel {
                BlurKernel::Gaussian { size, sigma } => gaussian_kernel(*size, *sigma),
                BlurKernel::Motion { length, angle_deg } => motion_kernel(*length, *angle_deg),
            };
            let plane = h * w;
            let mut out = vec![0.0; 3 * plane];
            for c in 0..3 {
                convolve_reflect(&x[c * plane..(c + 1) * plane], h, w, &k, &mut out[c * plane..(c + 1) * plane]);
            }
            for v in out.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            out
        }
    };
    Ok(ImagePair {
        clean: clean.detach(),
        degraded: Tensor::from_vec(out, &shape),
        spec: spec.clone(),
    })
}

/// Additive rain streak layer (single channel; streaks are near-white).
fn rain_layer(
    h: usize,
    w: usize,
    count: usize,
    length: f64,
    angle_deg: f64,
    intensity: f64,
    rng: &mut Rng,
) -> Vec<f64> {
    let mut layer = vec![0.0; h * w];
    for _ in 0..count {
        let cx = rng.uniform_in(0.0, w as f64);
        let cy = rng.uniform_in(0.0, h as f64);
        let len = length * rng.uniform_in(0.7, 1.3);
        let ang = (angle_deg + rng.uniform_in(-6.0, 6.0)).to_radians();
        let (dy, dx) = (ang.sin(), ang.cos());
        let amp = intensity * rng.uniform_in(0.6, 1.0);
        let steps = (len * 2.0).ceil() as usize;
        for s in 0..=steps {
            let f = s as f64 / steps as f64 - 0.5;
            let px = cx + f * len * dx;
            let py = cy + f * len * dy;
            // bilinear splat
            let x0 = px.floor();
            let y0 = py.floor();
            for (oy, ox) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                let xi = x0 + ox;
                let yi = y0 + oy;
                if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
                    continue;
                }
                let weight = (1.0 - (px - xi).abs()) * (1.0 - (py - yi).abs());
                let idx = yi as usize * w + xi as usize;
                layer[idx] = f64::max(layer[idx], amp * weight.max(0.0) * 0.5);
            }
        }
    }
    layer
}

fn gaussian_kernel(size: usize, sigma: f64) -> Kernel {
    let half = (size / 2) as isize;
    let mut values = vec![0.0; size * size];
    let mut total = 0.0;
    for y in 0..size {
        for x in 0..size {
            let dy = y as isize - half;
            let dx = x as isize - half;
            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            values[y * size + x] = v;
            total += v;
        }
    }
    for v in values.iter_mut() {
        *v /= total;
    }
    Kernel { size, values }
}

fn motion_kernel(length: usize, angle_deg: f64) -> Kernel {
    let size = length;
    let half = (size / 2) as f64;
    let ang = angle_deg.to_radians();
    let (dy, dx) = (ang.sin(), ang.cos());
    let mut values = vec![0.0; size * size];
    let steps = 4 * size;
    for s in 0..=steps {
        let f = s as f64 / steps as f64 - 0.5;
        let px = half + f * (size as f64 - 1.0) * dx;
        let py = half + f * (size as f64 - 1.0) * dy;
        let (xi, yi) = (px.round() as isize, py.round() as isize);
        if xi >= 0 && yi >= 0 && (xi as usize) < size && (yi as usize) < size {
            values[yi as usize * size + xi as usize] = 1.0;
        }
    }
    let total: f64 = values.iter().sum();
    for v in values.iter_mut() {
        *v /= total;
    }
    Kernel { size, values }
}

struct Kernel {
    size: usize,
    values: Vec<f64>,
}

/// Plain (non-autodiff) 2-D convolution with reflect padding.
fn convolve_reflect(x: &[f64], h: usize, w: usize, k: &Kernel, out: &mut [f64]) {
    let half = (k.size / 2) as isize;
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * n - 2 - i;
        }
        i.clamp(0, n - 1) as usize
    };
    for y in 0..h as isize {
        for x0 in 0..w as isize {
            let mut acc = 0.0;
            for ky in -half..=half {
                let iy = reflect(y + ky, h);
                for kx in -half..=half {
                    let ix = reflect(x0 + kx, w);
                    acc += x[iy * w + ix]
                        * k.values[(ky + half) as usize * k.size + (kx + half) as usize];
                }
            }
            out[y as usize * w + x0 as usize] = acc;
        }
    }
}

/// Procedural clean image: smooth gradients, a few geometric shapes, and a
/// touch of band-limited texture, rescaled into `[0.02, 0.98]`.
pub fn synth_clean(seed: u64, h: usize, w: usize) -> Tensor {
    assert!(h >= 16 && w >= 16, "contract violation: synth_clean needs H,W >= 16");
    let mut rng = Rng::new(seed);
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];

    // per-channel affine gradient base
    for c in 0..3 {
        let a = rng.uniform_in(0.2, 0.8);
        let gx = rng.uniform_in(-0.4, 0.4);
        let gy = rng.uniform_in(-0.4, 0.4);
        let gxy = rng.uniform_in(-0.3, 0.3);
        for y in 0..h {
            for x in 0..w {
                let fx = x as f64 / w as f64;
                let fy = y as f64 / h as f64;
                data[c * plane + y * w + x] = a + gx * fx + gy * fy + gxy * fx * fy;
            }
        }
    }

    // two shared low-frequency waves
    for _ in 0..2 {
        let fx = rng.uniform_in(0.5, 2.5);
        let fy = rng.uniform_in(0.5, 2.5);
        let phase = rng.uniform_in(0.0, std::f64::consts::TAU);
        let amp: [f64; 3] = [
            rng.uniform_in(0.03, 0.12),
            rng.uniform_in(0.03, 0.12),
            rng.uniform_in(0.03, 0.12),
        ];
        for y in 0..h {
            for x in 0..w {
                let v = (std::f64::consts::TAU
                    * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64)
                    + phase)
                    .sin();
                for c in 0..3 {
                    data[c * plane + y * w + x] += amp[c] * v;
                }
            }
        }
    }

    // geometric shapes with hard edges
    let n_shapes = 3 + rng.below(4);
    for _ in 0..n_shapes {
        let color: [f64; 3] = [rng.uniform(), rng.uniform(), rng.uniform()];
        let alpha = rng.uniform_in(0.5, 0.95);
        let cx = rng.uniform_in(0.1, 0.9) * w as f64;
        let cy = rng.uniform_in(0.1, 0.9) * h as f64;
        let rx = rng.uniform_in(0.05, 0.25) * w as f64;
        let ry = rng.uniform_in(0.05, 0.25) * h as f64;
        let circular = rng.flip();
        for y in 0..h {
            for x in 0..w {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                let inside = if circular { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    for c in 0..3 {
                        let v = &mut data[c * plane + y * w + x];
                        *v = (1.0 - alpha) * *v + alpha * color[c];
                    }
                }
            }
        }
    }

    // band-limited texture
    for _ in 0..5 {
        let fx = rng.uniform_in(3.0, 9.0) * if rng.flip() { 1.0 } else { -1.0 };
        let fy = rng.uniform_in(3.0, 9.0);
        let phase = rng.uniform_in(0.0, std::f64::consts::TAU);
        let amp = rng.uniform_in(0.01, 0.035);
        for y in 0..h {
            for x in 0..w {
                let v = (std::f64::consts::TAU
                    * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64)
                    + phase)
                    .sin();
                for c in 0..3 {
                    data[c * plane + y * w + x] += amp * v;
                }
            }
        }
    }

    // rescale into [0.02, 0.98]
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &data {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let span = (hi - lo).max(1e-9);
    for v in data.iter_mut() {
        *v = 0.02 + 0.96 * (*v - lo) / span;
    }
    Tensor::from_vec(data, &[3, h, w])
}

/// Crop the same window from clean and degraded, with optional shared
/// augmentation (horizontal flip, 90-degree rotations).
pub fn sample_patch(
    pair: &ImagePair,
    size: usize,
    rng: &mut Rng,
    augment: bool,
) -> Result<ImagePair> {
    let shape = pair.clean.shape();
    let (h, w) = (shape[1], shape[2]);
    if size > h.min(w) {
        return Err(Error::Contract(format!("patch size {size} exceeds image {h}x{w}")));
    }
    let y0 = if h == size { 0 } else { rng.below(h - size + 1) };
    let x0 = if w == size { 0 } else { rng.below(w - size + 1) };
    let mut clean = crop_chw(&pair.clean.data(), h, w, y0, x0, size);
    let mut degraded = crop_chw(&pair.degraded.data(), h, w, y0, x0, size);
    if augment {
        if rng.flip() {
            clean = hflip_chw(&clean, size, size);
            degraded = hflip_chw(&degraded, size, size);
        }
        let quarter_turns = rng.below(4);
        for _ in 0..quarter_turns {
            clean = rot90_chw(&clean, size, size);
            degraded = rot90_chw(&degraded, size, size);
        }
    }
    Ok(ImagePair {
        clean: Tensor::from_vec(clean, &[3, size, size]),
        degraded: Tensor::from_vec(degraded, &[3, size, size]),
        spec: pair.spec.clone(),
    })
}

fn crop_chw(data: &[f64], h: usize, w: usize, y0: usize, x0: usize, size: usize) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; 3 * size * size];
    for c in 0..3 {
        for y in 0..size {
            let src = c * plane + (y0 + y) * w + x0;
            let dst = c * size * size + y * size;
            out[dst..dst + size].copy_from_slice(&data[src..src + size]);
        }
    }
    out
}

fn hflip_chw(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; data.len()];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out[c * plane + y * w + x] = data[c * plane + y * w + (w - 1 - x)];
            }
        }
    }
    out
}

/// Rotate 90 degrees counterclockwise (square images only here).
fn rot90_chw(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    assert_eq!(h, w);
    let plane = h * w;
    let mut out = vec![0.0; data.len()];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out[c * plane + (w - 1 - x) * h + y] = data[c * plane + y * w + x];
            }
        }
    }
    out
}

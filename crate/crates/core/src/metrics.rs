//! PSNR and single-scale SSIM for `[3,H,W]` images in `[0,1]`.

use crate::tensor::Tensor;

/// Sentinel returned (and cap applied) for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio in dB over a unit dynamic range.
pub fn psnr(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "dimension error: psnr shapes differ");
    let da = a.data();
    let db = b.data();
    let mse: f64 = da
        .iter()
        .zip(db.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / da.len() as f64;
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut k = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let mut total = 0.0;
    for y in -half..=half {
        for x in -half..=half {
            let v = (-((x * x + y * y) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            k[((y + half) as usize) * SSIM_WINDOW + (x + half) as usize] = v;
            total += v;
        }
    }
    for v in k.iter_mut() {
        *v /= total;
    }
    k
}

/// Structural similarity: 11x11 Gaussian window (sigma 1.5), K1=0.01,
/// K2=0.03, dynamic range 1, averaged over valid positions and channels.
pub fn ssim(a: &Tensor, b: &Tensor) -> f64 {
    let s = a.shape();
    assert_eq!(s, b.shape(), "dimension error: ssim shapes differ");
    assert_eq!(s.len(), 3, "dimension error: ssim expects [C,H,W]");
    let (c, h, w) = (s[0], s[1], s[2]);
    assert!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        "contract violation: ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
    );
    let kernel = ssim_kernel();
    let c1 = (K1 * 1.0) * (K1 * 1.0);
    let c2 = (K2 * 1.0) * (K2 * 1.0);
    let da = a.data();
    let db = b.data();
    let plane = h * w;
    let half = SSIM_WINDOW / 2;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let xa = &da[ch * plane..(ch + 1) * plane];
        let xb = &db[ch * plane..(ch + 1) * plane];
        for cy in half..h - half {
            for cx in half..w - half {
                let (mut mu_a, mut mu_b) = (0.0, 0.0);
                let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
                for ky in 0..SSIM_WINDOW {
                    let iy = cy + ky - half;
                    for kx in 0..SSIM_WINDOW {
                        let ix = cx + kx - half;
                        let wgt = kernel[ky * SSIM_WINDOW + kx];
                        let va = xa[iy * w + ix];
                        let vb = xb[iy * w + ix];
                        mu_a += wgt * va;
                        mu_b += wgt * vb;
                        aa += wgt * va * va;
                        bb += wgt * vb * vb;
                        ab += wgt * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let v = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += v;
                count += 1;
            }
        }
    }
    total / count as f64
}

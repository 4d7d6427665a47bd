//! 2-D DFT and frequency-band partitioning.
//!
//! The spectrum of an `H x W` real signal is partitioned into `L` bands by
//! Chebyshev radius in centered frequency coordinates: band 1 is the DC cell
//! alone, the remaining radii are split into `L - 1` near-equal contiguous
//! intervals. Keeping each band's mask symmetric under frequency negation
//! guarantees a real inverse transform.

mod fft;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use fft::fft;

/// Maximum imaginary magnitude tolerated when inverting the spectrum of a
/// (supposedly) conjugate-symmetric signal.
pub const IMAG_RESIDUE_LIMIT: f64 = 1e-6;

/// Complex 2-D spectrum with uncentered (DC at index 0) storage.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub h: usize,
    pub w: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    /// True when the buffers have been physically shifted so the DC
    /// coefficient sits at `(h/2, w/2)`.
    pub centered: bool,
}

impl Spectrum {
    pub fn magnitude(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| (r * r + i * i).sqrt())
            .collect()
    }

    /// Total squared magnitude; by Parseval equals `H*W` times the signal
    /// energy for an unnormalized forward transform.
    pub fn energy(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(r, i)| r * r + i * i).sum()
    }

    /// Physically move DC to the center cell (for display-ordered outputs).
    pub fn fftshifted(&self) -> Spectrum {
        let (h, w) = (self.h, self.w);
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                let cu = (u + h / 2) % h;
                let cv = (v + w / 2) % w;
                re[cu * w + cv] = self.re[u * w + v];
                im[cu * w + cv] = self.im[u * w + v];
            }
        }
        Spectrum { h, w, re, im, centered: !self.centered }
    }
}

/// Distance of frequency index `i` from DC along an axis of length `n`;
/// identical to `|i' - floor(n/2)|` in centered coordinates.
#[inline]
pub fn axis_dist(i: usize, n: usize) -> usize {
    i.min(n - i)
}

/// Chebyshev radius of an uncentered spectrum cell.
#[inline]
pub fn radius(u: usize, v: usize, h: usize, w: usize) -> usize {
    axis_dist(u, h).max(axis_dist(v, w))
}

/// Largest Chebyshev radius present in an `h x w` spectrum.
#[inline]
pub fn max_radius(h: usize, w: usize) -> usize {
    (h / 2).max(w / 2)
}

/// Unnormalized forward 2-D DFT of a real `h x w` signal.
pub fn dft2d(x: &[f64], h: usize, w: usize) -> Spectrum {
    assert_eq!(x.len(), h * w, "dimension error: dft2d input size");
    assert!(h >= 1 && w >= 1, "dimension error: dft2d empty signal");
    let mut re = x.to_vec();
    let mut im = vec![0.0; h * w];
    // rows
    let mut row_im = vec![0.0; w];
    for r in 0..h {
        row_im[..w].fill(0.0);
        fft(&mut re[r * w..(r + 1) * w], &mut row_im, false);
        im[r * w..(r + 1) * w].copy_from_slice(&row_im);
    }
    // columns
    let mut cr = vec![0.0; h];
    let mut ci = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            cr[r] = re[r * w + c];
            ci[r] = im[r * w + c];
        }
        fft(&mut cr, &mut ci, false);
        for r in 0..h {
            re[r * w + c] = cr[r];
            im[r * w + c] = ci[r];
        }
    }
    Spectrum { h, w, re, im, centered: false }
}

/// Inverse 2-D DFT of a spectrum assumed conjugate-symmetric; returns the
/// real signal and rejects spectra whose inverse has a material imaginary
/// part (the sign of a symmetry-breaking mask).
pub fn idft2d(s: &Spectrum) -> Result<Vec<f64>> {
    assert!(!s.centered, "contract violation: idft2d expects uncentered storage");
    let (h, w) = (s.h, s.w);
    let mut re = s.re.clone();
    let mut im = s.im.clone();
    let mut cr = vec![0.0; h];
    let mut ci = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            cr[r] = re[r * w + c];
            ci[r] = im[r * w + c];
        }
        fft(&mut cr, &mut ci, true);
        for r in 0..h {
            re[r * w + c] = cr[r];
            im[r * w + c] = ci[r];
        }
    }
    let mut row_im = vec![0.0; w];
    let mut residue: f64 = 0.0;
    for r in 0..h {
        row_im.copy_from_slice(&im[r * w..(r + 1) * w]);
        fft(&mut re[r * w..(r + 1) * w], &mut row_im, true);
        for v in &row_im {
            residue = residue.max(v.abs());
        }
    }
    if residue > IMAG_RESIDUE_LIMIT {
        return Err(Error::SymmetryViolation { residue, limit: IMAG_RESIDUE_LIMIT });
    }
    Ok(re)
}

/// Radius intervals `(l_k, r_k)` for `bands` bands over an `h x w` spectrum.
///
/// Interval 0 is the DC cell alone; radii `1..=R` are split into
/// `bands - 1` contiguous intervals as equally as possible, with the
/// remainder going to the highest-frequency intervals. An interval with
/// `l > r` is empty (only possible when `bands - 1 > R`).
pub fn band_ranges(bands: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    assert!(bands >= 2, "contract violation: band_ranges requires at least 2 bands");
    let r_max = max_radius(h, w);
    let mut out = Vec::with_capacity(bands);
    out.push((0, 0));
    out.extend(split_span(1, r_max, bands - 1));
    out
}

/// Split the integer span `[lo, hi]` into `parts` contiguous intervals of
/// near-equal width, remainder assigned to the trailing intervals.
///
/// With fewer values than parts, the leading parts get one value each and
/// the surplus trailing intervals come out empty (encoded as `l > r`).
pub(crate) fn split_span(lo: usize, hi: usize, parts: usize) -> Vec<(usize, usize)> {
    assert!(parts >= 1);
    let total = if hi >= lo { hi - lo + 1 } else { 0 };
    let base = total / parts;
    let rem = total % parts;
    let mut out = Vec::with_capacity(parts);
    let mut cur = lo;
    for p in 0..parts {
        let size = if base == 0 {
            usize::from(p < total)
        } else {
            base + usize::from(p >= parts - rem)
        };
        if size == 0 {
            debug_assert!(cur >= 1);
            out.push((cur, cur - 1));
        } else {
            out.push((cur, cur + size - 1));
            cur += size;
        }
    }
    out
}

/// Zero every cell of `s` whose Chebyshev radius falls outside `[l, r]`.
pub fn mask_band(s: &Spectrum, l: usize, r: usize) -> Spectrum {
    let (h, w) = (s.h, s.w);
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let rad = radius(u, v, h, w);
            if rad >= l && rad <= r {
                re[u * w + v] = s.re[u * w + v];
                im[u * w + v] = s.im[u * w + v];
            }
        }
    }
    Spectrum { h, w, re, im, centered: s.centered }
}

/// A multichannel image split into `L` spatial-domain band components whose
/// spectra partition the input's spectrum. Summing the bands reconstructs
/// the input.
#[derive(Debug, Clone)]
pub struct BandSet {
    /// `L` tensors of the input's shape `[C,H,W]`.
    pub bands: Vec<Tensor>,
    pub ranges: Vec<(usize, usize)>,
}

/// Decompose `[C,H,W]` into `bands` frequency-band images, per channel.
pub fn decompose(x: &Tensor, bands: usize) -> Result<BandSet> {
    let shape = x.shape();
    assert_eq!(shape.len(), 3, "dimension error: decompose expects [C,H,W]");
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let ranges = band_ranges(bands, h, w);
    let data = x.to_vec();
    let mut out: Vec<Vec<f64>> = vec![vec![0.0; c * h * w]; bands];
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        let spec = dft2d(plane, h, w);
        for (k, &(l, r)) in ranges.iter().enumerate() {
            let masked = mask_band(&spec, l, r);
            let band = idft2d(&masked)?;
            out[k][ch * h * w..(ch + 1) * h * w].copy_from_slice(&band);
        }
    }
    Ok(BandSet {
        bands: out
            .into_iter()
            .map(|d| Tensor::from_vec(d, &[c, h, w]))
            .collect(),
        ranges,
    })
}

/// Single-band extraction of a real matrix, non-differentiable kernel.
pub fn band_filter_raw(z: &[f64], h: usize, w: usize, k: usize, bands: usize) -> Vec<f64> {
    assert!(
        k >= 1 && k <= bands,
        "contract violation: band index {k} out of 1..={bands}"
    );
    let ranges = band_ranges(bands, h, w);
    let (l, r) = ranges[k - 1];
    let spec = dft2d(z, h, w);
    let masked = mask_band(&spec, l, r);
    // radius masks are symmetric under frequency negation, so the inverse
    // of a real signal's masked spectrum is real by construction
    idft2d(&masked).expect("band mask preserved conjugate symmetry")
}

/// Differentiable band filter on a `[m,n]` tensor.
///
/// The filter is a linear, self-adjoint projection, so the backward pass is
/// the same filter applied to the upstream gradient.
pub fn band_filter(z: &Tensor, k: usize, bands: usize) -> Tensor {
    let shape = z.shape();
    assert_eq!(shape.len(), 2, "dimension error: band_filter expects a matrix");
    let (h, w) = (shape[0], shape[1]);
    let data = band_filter_raw(&z.data(), h, w, k, bands);
    let p = z.clone();
    Tensor::from_op(
        data,
        shape,
        vec![z.clone()],
        Box::new(move |node| {
            let g = node.grad.as_ref().unwrap();
            let d = band_filter_raw(g, h, w, k, bands);
            crate::tensor::accumulate_grad_owned(&p, d);
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::grad_check;
    use proptest::prelude::*;

    fn randn_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    /// O(n^4) double-loop DFT, the independent oracle.
    pub fn naive_dft2d(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        use std::f64::consts::PI;
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                let mut sr = 0.0;
                let mut si = 0.0;
                for y in 0..h {
                    for x2 in 0..w {
                        let ang = -2.0 * PI
                            * (u as f64 * y as f64 / h as f64
                                + v as f64 * x2 as f64 / w as f64);
                        let (s, c) = ang.sin_cos();
                        sr += x[y * w + x2] * c;
                        si += x[y * w + x2] * s;
                    }
                }
                re[u * w + v] = sr;
                im[u * w + v] = si;
            }
        }
        (re, im)
    }

    #[test]
    fn constant_image_is_pure_dc() {
        let c = 0.37;
        let x = vec![c; 16];
        let s = dft2d(&x, 4, 4);
        assert!((s.re[0] - 16.0 * c).abs() < 1e-12);
        assert!(s.im[0].abs() < 1e-12);
        for i in 1..16 {
            assert!(s.re[i].abs() < 1e-12 && s.im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let mut x = vec![0.0; 16];
        x[0] = 1.0;
        let s = dft2d(&x, 4, 4);
        for i in 0..16 {
            assert!((s.re[i] - 1.0).abs() < 1e-12 && s.im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_oracle_8x8() {
        let mut rng = Rng::new(101);
        let x = randn_vec(&mut rng, 64);
        let s = dft2d(&x, 8, 8);
        let (er, ei) = naive_dft2d(&x, 8, 8);
        for i in 0..64 {
            assert!((s.re[i] - er[i]).abs() < 1e-9);
            assert!((s.im[i] - ei[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_naive_oracle_non_pow2() {
        let mut rng = Rng::new(103);
        let x = randn_vec(&mut rng, 15 * 17);
        let s = dft2d(&x, 15, 17);
        let (er, ei) = naive_dft2d(&x, 15, 17);
        for i in 0..x.len() {
            assert!((s.re[i] - er[i]).abs() < 1e-8);
            assert!((s.im[i] - ei[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn roundtrip_identity() {
        let mut rng = Rng::new(107);
        for (h, w) in [(8, 8), (15, 17), (16, 8)] {
            let x = randn_vec(&mut rng, h * w);
            let back = idft2d(&dft2d(&x, h, w)).unwrap();
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let s = Spectrum { h: 4, w: 4, re: vec![0.0; 16], im: vec![0.0; 16], centered: false };
        assert!(idft2d(&s).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn asymmetric_spectrum_rejected() {
        let mut s = dft2d(&vec![1.0; 16], 4, 4);
        // corrupt one off-DC cell without its conjugate partner
        s.re[1] = 5.0;
        s.im[1] = 3.0;
        match idft2d(&s) {
            Err(crate::error::Error::SymmetryViolation { .. }) => {}
            other => panic!("expected symmetry violation, got {other:?}"),
        }
    }

    #[test]
    fn parseval_holds() {
        let mut rng = Rng::new(109);
        for (h, w) in [(8, 8), (15, 17)] {
            let x = randn_vec(&mut rng, h * w);
            let s = dft2d(&x, h, w);
            let sig: f64 = x.iter().map(|v| v * v).sum();
            let spec = s.energy() / (h * w) as f64;
            assert!(
                (sig - spec).abs() <= 1e-9 * sig.abs().max(1.0),
                "parseval: {sig} vs {spec}"
            );
        }
    }

    #[test]
    fn band_ranges_examples() {
        assert_eq!(band_ranges(2, 8, 8), vec![(0, 0), (1, 4)]);
        assert_eq!(
            band_ranges(5, 16, 16),
            vec![(0, 0), (1, 2), (3, 4), (5, 6), (7, 8)]
        );
        // non-square, odd: R = max(7, 8) = 8
        assert_eq!(band_ranges(2, 15, 17), vec![(0, 0), (1, 8)]);
    }

    #[test]
    fn band_two_of_l2_covers_all_non_dc_cells() {
        for (h, w) in [(8, 8), (15, 17), (16, 8)] {
            let ranges = band_ranges(2, h, w);
            let (l, r) = ranges[1];
            for u in 0..h {
                for v in 0..w {
                    let rad = radius(u, v, h, w);
                    if (u, v) != (0, 0) {
                        assert!(rad >= l && rad <= r, "cell ({u},{v}) uncovered");
                    }
                }
            }
        }
    }

    #[test]
    fn ranges_partition_all_radii() {
        for bands in [2usize, 3, 5] {
            for (h, w) in [(8usize, 8usize), (16, 16), (15, 17)] {
                let ranges = band_ranges(bands, h, w);
                let r_max = max_radius(h, w);
                let mut covered = vec![0u8; r_max + 1];
                for &(l, r) in &ranges {
                    if l > r {
                        continue;
                    }
                    for rad in l..=r {
                        covered[rad] += 1;
                    }
                }
                assert!(covered.iter().all(|c| *c == 1), "{bands} bands {h}x{w}");
            }
        }
    }

    #[test]
    fn degenerate_split_has_empty_high_bands() {
        // 4x4 has R = 2; five bands cannot all be non-empty
        let ranges = band_ranges(5, 4, 4);
        assert_eq!(ranges.len(), 5);
        let non_empty: Vec<_> = ranges.iter().filter(|(l, r)| l <= r).collect();
        assert_eq!(non_empty.len(), 3);
    }

    #[test]
    fn constant_image_decomposes_to_dc_band() {
        let x = Tensor::full(&[1, 8, 8], 0.8);
        let set = decompose(&x, 2).unwrap();
        for (a, b) in set.bands[0].data().iter().zip(x.data().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(set.bands[1].data().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn checkerboard_is_pure_highest_band() {
        let h = 8;
        let mut data = vec![0.0; h * h];
        for y in 0..h {
            for x in 0..h {
                data[y * h + x] = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        let img = Tensor::from_vec(data.clone(), &[1, h, h]);
        let set = decompose(&img, 2).unwrap();
        assert!(set.bands[0].data().iter().all(|v| v.abs() < 1e-10));
        for (a, b) in set.bands[1].data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn decomposition_reconstructs() {
        let mut rng = Rng::new(113);
        for bands in [2usize, 3, 5] {
            let x = Tensor::from_vec(randn_vec(&mut rng, 3 * 16 * 16), &[3, 16, 16]);
            let set = decompose(&x, bands).unwrap();
            let mut sum = vec![0.0; x.numel()];
            for b in &set.bands {
                for (s, v) in sum.iter_mut().zip(b.data().iter()) {
                    *s += v;
                }
            }
            for (s, v) in sum.iter().zip(x.data().iter()) {
                assert!((s - v).abs() < 1e-6, "reconstruction {bands} bands");
            }
        }
    }

    #[test]
    fn band_filter_dc_is_mean() {
        let mut rng = Rng::new(127);
        let z = randn_vec(&mut rng, 6 * 6);
        let mean = z.iter().sum::<f64>() / 36.0;
        let dc = band_filter_raw(&z, 6, 6, 1, 3);
        for v in &dc {
            assert!((v - mean).abs() < 1e-10);
        }
    }

    #[test]
    fn band_filter_partitions_idempotent_orthogonal() {
        let mut rng = Rng::new(131);
        let z = randn_vec(&mut rng, 8 * 8);
        let bands = 3;
        let mut sum = vec![0.0; 64];
        for k in 1..=bands {
            let f = band_filter_raw(&z, 8, 8, k, bands);
            for (s, v) in sum.iter_mut().zip(&f) {
                *s += v;
            }
            // idempotent
            let ff = band_filter_raw(&f, 8, 8, k, bands);
            for (a, b) in ff.iter().zip(&f) {
                assert!((a - b).abs() < 1e-9);
            }
            // orthogonal to other bands
            for j in 1..=bands {
                if j == k {
                    continue;
                }
                let fj = band_filter_raw(&f, 8, 8, j, bands);
                assert!(fj.iter().all(|v| v.abs() < 1e-9));
            }
        }
        for (s, v) in sum.iter().zip(&z) {
            assert!((s - v).abs() < 1e-6);
        }
    }

    #[test]
    fn band_filter_gradient_is_self_adjoint() {
        let mut rng = Rng::new(137);
        let z = Tensor::from_vec(randn_vec(&mut rng, 36), &[6, 6]).requires_grad(true);
        let probe = Tensor::from_vec(randn_vec(&mut rng, 36), &[6, 6]);
        let err = grad_check(|t| band_filter(t, 2, 3).mul(&probe).sum_all(), &z, 1e-5);
        assert!(err < 1e-4, "band filter grad err {err}");
    }

    #[test]
    fn fftshift_moves_dc_to_center() {
        let x = vec![1.0; 6 * 4];
        let s = dft2d(&x, 6, 4).fftshifted();
        assert!(s.centered);
        assert!((s.re[(6 / 2) * 4 + 4 / 2] - 24.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn prop_decompose_is_linear(seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let n = 8usize;
            let a = randn_vec(&mut rng, n * n);
            let b = randn_vec(&mut rng, n * n);
            let (ca, cb) = (rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0));
            let mixed: Vec<f64> = a.iter().zip(&b).map(|(x, y)| ca * x + cb * y).collect();
            for k in 1..=3usize {
                let fa = band_filter_raw(&a, n, n, k, 3);
                let fb = band_filter_raw(&b, n, n, k, 3);
                let fm = band_filter_raw(&mixed, n, n, k, 3);
                for i in 0..n * n {
                    prop_assert!((fm[i] - (ca * fa[i] + cb * fb[i])).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn prop_roundtrip_arbitrary_sizes(h in 2usize..12, w in 2usize..12, seed in 0u64..100) {
            let mut rng = Rng::new(seed * 7 + 1);
            let x = randn_vec(&mut rng, h * w);
            let back = idft2d(&dft2d(&x, h, w)).unwrap();
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

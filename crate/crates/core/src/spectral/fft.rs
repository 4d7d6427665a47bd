//! 1-D complex FFT: iterative radix-2 for power-of-two lengths, Bluestein's
//! chirp-z algorithm (over a padded power-of-two convolution) otherwise.

use std::f64::consts::PI;

/// In-place forward or inverse DFT of arbitrary length.
///
/// Forward is unnormalized; inverse divides by `n`.
pub fn fft(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    assert_eq!(n, im.len(), "fft: re/im length mismatch");
    if n <= 1 {
        return;
    }
    if inverse {
        // IDFT(x) = conj(DFT(conj(x))) / n
        for v in im.iter_mut() {
            *v = -*v;
        }
        fft(re, im, false);
        let inv = 1.0 / n as f64;
        for (r, i) in re.iter_mut().zip(im.iter_mut()) {
            *r *= inv;
            *i = -*i * inv;
        }
        return;
    }
    if n.is_power_of_two() {
        radix2(re, im);
    } else {
        bluestein(re, im);
    }
}

fn radix2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                // direct trig keeps accumulated error below recurrence drift
                let (s, c) = (ang * k as f64).sin_cos();
                let i = start + k;
                let j = start + k + half;
                let tr = re[j] * c - im[j] * s;
                let ti = re[j] * s + im[j] * c;
                re[j] = re[i] - tr;
                im[j] = im[i] - ti;
                re[i] += tr;
                im[i] += ti;
            }
        }
        len <<= 1;
    }
}

fn bluestein(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    let m = (2 * n - 1).next_power_of_two();

    // chirp c_j = exp(-i pi j^2 / n); j^2 taken mod 2n to keep angles exact
    let mut chirp_re = vec![0.0; n];
    let mut chirp_im = vec![0.0; n];
    for j in 0..n {
        let q = (j * j) % (2 * n);
        let ang = -PI * q as f64 / n as f64;
        let (s, c) = ang.sin_cos();
        chirp_re[j] = c;
        chirp_im[j] = s;
    }

    // a_j = x_j * c_j, zero padded to m
    let mut are = vec![0.0; m];
    let mut aim = vec![0.0; m];
    for j in 0..n {
        are[j] = re[j] * chirp_re[j] - im[j] * chirp_im[j];
        aim[j] = re[j] * chirp_im[j] + im[j] * chirp_re[j];
    }

    // b_j = conj(c_j) for |j| < n, wrapped circularly into length m
    let mut bre = vec![0.0; m];
    let mut bim = vec![0.0; m];
    bre[0] = chirp_re[0];
    bim[0] = -chirp_im[0];
    for j in 1..n {
        bre[j] = chirp_re[j];
        bim[j] = -chirp_im[j];
        bre[m - j] = bre[j];
        bim[m - j] = bim[j];
    }

    radix2(&mut are, &mut aim);
    radix2(&mut bre, &mut bim);
    for j in 0..m {
        let r = are[j] * bre[j] - aim[j] * bim[j];
        let i = are[j] * bim[j] + aim[j] * bre[j];
        are[j] = r;
        aim[j] = i;
    }
    // inverse FFT of the product
    for v in aim.iter_mut() {
        *v = -*v;
    }
    radix2(&mut are, &mut aim);
    let inv = 1.0 / m as f64;
    for k in 0..n {
        let cr = are[k] * inv;
        let ci = -aim[k] * inv;
        re[k] = cr * chirp_re[k] - ci * chirp_im[k];
        im[k] = cr * chirp_im[k] + ci * chirp_re[k];
    }
}

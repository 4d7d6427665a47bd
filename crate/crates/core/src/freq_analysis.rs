//! Residual-spectrum statistics: how each degradation shifts energy between
//! low and high frequency bands.
//!
//! The residual of a pair is the complex difference of the clean and
//! degraded spectra; its normalized amplitude is binned by Chebyshev radius
//! into a 20-bin histogram, and whole images are summarized by their
//! low/high amplitude ratio.

use std::io::Write;

use crate::degrade::{self, DegradationSpec, ImagePair};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::spectral::{dft2d, max_radius, radius, split_span};
use crate::tensor::Tensor;

const TAG_CLEAN: u64 = 0x636c_6561;
const TAG_DEGRADE: u64 = 0x6465_6772;

pub const HISTOGRAM_BINS: usize = 20;

/// Channel-averaged normalized residual amplitude over the spectrum grid.
#[derive(Debug, Clone)]
pub struct ResidualSpectrum {
    pub h: usize,
    pub w: usize,
    /// Nonnegative, sums to 1.
    pub amp: Vec<f64>,
}

/// Radius-binned amplitude histogram.
#[derive(Debug, Clone)]
pub struct BandHistogram {
    pub bins: Vec<f64>,
    pub bin_ranges: Vec<(usize, usize)>,
}

/// One pair's low/high ratios, for scatter summaries.
#[derive(Debug, Clone)]
pub struct RatioPoint {
    pub kind: String,
    pub clean_ratio: f64,
    pub degraded_ratio: f64,
}

/// `|F(clean) - F(degraded)|` per channel, channel-averaged and normalized
/// to unit total. Returns `None` when the residual is identically zero.
pub fn residual_spectrum(pair: &ImagePair) -> Option<ResidualSpectrum> {
    let shape = pair.clean.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let clean = pair.clean.data();
    let degraded = pair.degraded.data();
    let plane = h * w;
    let mut amp = vec![0.0; plane];
    for ch in 0..c {
        let sc = dft2d(&clean[ch * plane..(ch + 1) * plane], h, w);
        let sd = dft2d(&degraded[ch * plane..(ch + 1) * plane], h, w);
        for i in 0..plane {
            let dr = sc.re[i] - sd.re[i];
            let di = sc.im[i] - sd.im[i];
            amp[i] += (dr * dr + di * di).sqrt();
        }
    }
    let total: f64 = amp.iter().sum();
    if total <= 0.0 {
        return None;
    }
    for v in amp.iter_mut() {
        *v /= total;
    }
    Some(ResidualSpectrum { h, w, amp })
}

/// Bin amplitudes by Chebyshev radius into `n_bins` near-equal radius
/// intervals (remainder radii go to the outermost bins). The input is
/// normalized internally, so the bins sum to 1 unless the total is zero.
pub fn bin_histogram(amp: &[f64], h: usize, w: usize, n_bins: usize) -> BandHistogram {
    assert!(n_bins >= 2, "contract violation: need at least 2 bins");
    assert_eq!(amp.len(), h * w, "dimension error: bin_histogram input size");
    let r_max = max_radius(h, w);
    let bin_ranges = split_span(0, r_max, n_bins);
    let mut radius_to_bin = vec![0usize; r_max + 1];
    for (b, &(l, r)) in bin_ranges.iter().enumerate() {
        if l > r {
            continue;
        }
        for rad in l..=r {
            radius_to_bin[rad] = b;
        }
    }
    let total: f64 = amp.iter().sum();
    let mut bins = vec![0.0; n_bins];
    if total > 0.0 {
        for u in 0..h {
            for v in 0..w {
                bins[radius_to_bin[radius(u, v, h, w)]] += amp[u * w + v] / total;
            }
        }
    }
    BandHistogram { bins, bin_ranges }
}

/// Sum of spectrum amplitude below and above the cutoff radius.
///
/// Low includes DC and every cell with radius <= `cutoff_fraction * R`.
fn low_high_split(x: &Tensor, cutoff_fraction: f64) -> (f64, f64) {
    let shape = x.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let cutoff = cutoff_fraction * max_radius(h, w) as f64;
    let data = x.data();
    let (mut low, mut high) = (0.0, 0.0);
    for ch in 0..c {
        let s = dft2d(&data[ch * plane..(ch + 1) * plane], h, w);
        for u in 0..h {
            for v in 0..w {
                let a = {
                    let i = u * w + v;
                    (s.re[i] * s.re[i] + s.im[i] * s.im[i]).sqrt()
                };
                if (radius(u, v, h, w) as f64) <= cutoff {
                    low += a;
                } else {
                    high += a;
                }
            }
        }
    }
    (low / c as f64, high / c as f64)
}

/// Ratio of low- to high-frequency amplitude of an image's own spectrum.
///
/// Returns `+inf` when the image has no energy above the cutoff (e.g. a
/// constant image).
pub fn low_high_ratio(x: &Tensor, cutoff_fraction: f64) -> f64 {
    let (low, high) = low_high_split(x, cutoff_fraction);
    if high <= 0.0 {
        f64::INFINITY
    } else {
        low / high
    }
}

/// Fraction of spectrum amplitude above the cutoff radius, in `[0,1]`.
pub fn high_freq_fraction(x: &Tensor, cutoff_fraction: f64) -> f64 {
    let (low, high) = low_high_split(x, cutoff_fraction);
    if low + high <= 0.0 {
        0.0
    } else {
        high / (low + high)
    }
}

/// One analysis row: a synthesized pair's ratios and residual histogram.
#[derive(Debug, Clone)]
pub struct AnalysisRow {
    pub kind: String,
    pub seed: u64,
    pub params: [f64; 4],
    pub clean_ratio: f64,
    pub degraded_ratio: f64,
    pub bins: Vec<f64>,
}

pub fn csv_header() -> String {
    let mut cols: Vec<String> = vec![
        "kind".into(),
        "seed".into(),
        "param1".into(),
        "param2".into(),
        "param3".into(),
        "param4".into(),
        "clean_ratio".into(),
        "degraded_ratio".into(),
    ];
    for b in 0..HISTOGRAM_BINS {
        cols.push(format!("bin_{b:02}"));
    }
    cols.join(",")
}

impl AnalysisRow {
    pub fn to_csv(&self) -> String {
        let mut cols = vec![
            self.kind.clone(),
            self.seed.to_string(),
        ];
        cols.extend(self.params.iter().map(|p| format!("{p}")));
        cols.push(format!("{}", self.clean_ratio));
        cols.push(format!("{}", self.degraded_ratio));
        cols.extend(self.bins.iter().map(|b| format!("{b}")));
        cols.join(",")
    }
}

/// Synthesize `n_pairs` pairs per spec, measure them, and stream CSV rows.
///
/// `size` is the square procedural image size; `cutoff` the low/high split.
pub fn analyze<W: Write>(
    specs: &[DegradationSpec],
    n_pairs: usize,
    size: usize,
    cutoff: f64,
    out: &mut W,
) -> Result<Vec<AnalysisRow>> {
    if n_pairs == 0 {
        return Err(Error::Contract("analyze needs at least one pair".into()));
    }
    writeln!(out, "{}", csv_header())?;
    let mut rows = Vec::with_capacity(specs.len() * n_pairs);
    for spec in specs {
        for i in 0..n_pairs {
            let clean_seed = derive_seed(spec.seed, TAG_CLEAN, i as u64);
            let pair_seed = derive_seed(spec.seed, TAG_DEGRADE, i as u64);
            let clean = degrade::synth_clean(clean_seed, size, size);
            let pair = degrade::apply(&clean, &spec.with_seed(pair_seed))?;
            let bins = match residual_spectrum(&pair) {
                Some(res) => bin_histogram(&res.amp, res.h, res.w, HISTOGRAM_BINS).bins,
                None => vec![0.0; HISTOGRAM_BINS],
            };
            let row = AnalysisRow {
                kind: pair.spec.kind.kind_name().into(),
                seed: pair_seed,
                params: pair.spec.kind.params(),
                clean_ratio: low_high_ratio(&pair.clean, cutoff),
                degraded_ratio: low_high_ratio(&pair.degraded, cutoff),
                bins,
            };
            writeln!(out, "{}", row.to_csv())?;
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{apply, synth_clean, Degradation};

    fn pair_with(kind: Degradation, seed: u64) -> ImagePair {
        let clean = synth_clean(seed, 32, 32);
        apply(&clean, &DegradationSpec::new(kind, seed ^ 0xabcd)).unwrap()
    }

    #[test]
    fn zero_residual_is_flagged_empty() {
        let clean = synth_clean(1, 32, 32);
        let pair = ImagePair {
            clean: clean.detach(),
            degraded: clean.detach(),
            spec: DegradationSpec::new(Degradation::Noise { sigma: 25.0 }, 0),
        };
        assert!(residual_spectrum(&pair).is_none());
    }

    #[test]
    fn dc_offset_residual_concentrates_at_radius_zero() {
        let clean = synth_clean(2, 32, 32);
        let shifted: Vec<f64> = clean.data().iter().map(|v| v + 0.25).collect();
        let pair = ImagePair {
            clean: clean.detach(),
            degraded: Tensor::from_vec(shifted, &[3, 32, 32]),
            spec: DegradationSpec::new(Degradation::Noise { sigma: 25.0 }, 0),
        };
        let res = residual_spectrum(&pair).unwrap();
        assert!((res.amp[0] - 1.0).abs() < 1e-9);
        let hist = bin_histogram(&res.amp, res.h, res.w, HISTOGRAM_BINS);
        assert!((hist.bins[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nyquist_residual_sits_at_max_radius() {
        let h = 32;
        let clean = synth_clean(3, h, h);
        let plane = h * h;
        let mut degraded = clean.to_vec();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..h {
                    let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                    degraded[c * plane + y * h + x] += 0.05 * sign;
                }
            }
        }
        let pair = ImagePair {
            clean: clean.detach(),
            degraded: Tensor::from_vec(degraded, &[3, h, h]),
            spec: DegradationSpec::new(Degradation::Noise { sigma: 25.0 }, 0),
        };
        let res = residual_spectrum(&pair).unwrap();
        let hist = bin_histogram(&res.amp, res.h, res.w, HISTOGRAM_BINS);
        // all mass in the bin whose radius interval contains R
        let r_max = max_radius(res.h, res.w);
        let top = hist
            .bin_ranges
            .iter()
            .position(|&(l, r)| l <= r && l <= r_max && r_max <= r)
            .unwrap();
        assert!((hist.bins[top] - 1.0).abs() < 1e-9);
        // the residual lives in exactly one cell: the Nyquist corner
        let nyq = (h / 2) * h + h / 2;
        assert!((res.amp[nyq] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn residual_of_spatial_difference_matches_by_linearity() {
        // |F(clean) - F(degraded)| == |F(clean - degraded)|
        let pair = pair_with(Degradation::Noise { sigma: 25.0 }, 11);
        let diff: Vec<f64> = pair
            .clean
            .data()
            .iter()
            .zip(pair.degraded.data().iter())
            .map(|(a, b)| a - b)
            .collect();
        let res = residual_spectrum(&pair).unwrap();
        let plane = 32 * 32;
        let mut amp2 = vec![0.0; plane];
        for c in 0..3 {
            let s = dft2d(&diff[c * plane..(c + 1) * plane], 32, 32);
            for i in 0..plane {
                amp2[i] += (s.re[i] * s.re[i] + s.im[i] * s.im[i]).sqrt();
            }
        }
        let total: f64 = amp2.iter().sum();
        for (a, b) in res.amp.iter().zip(amp2.iter().map(|v| v / total)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_spectrum_bins_match_cell_counts() {
        let (h, w) = (16, 16);
        let amp = vec![1.0; h * w];
        let hist = bin_histogram(&amp, h, w, 4);
        // count cells per radius interval directly
        let total = (h * w) as f64;
        for (b, &(l, r)) in hist.bin_ranges.iter().enumerate() {
            let mut count = 0usize;
            for u in 0..h {
                for v in 0..w {
                    let rad = radius(u, v, h, w);
                    if l <= r && rad >= l && rad <= r {
                        count += 1;
                    }
                }
            }
            assert!(
                (hist.bins[b] - count as f64 / total).abs() < 1e-12,
                "bin {b}"
            );
        }
    }

    #[test]
    fn histogram_mass_is_conserved() {
        let pair = pair_with(Degradation::default_rain(), 17);
        let res = residual_spectrum(&pair).unwrap();
        let hist = bin_histogram(&res.amp, res.h, res.w, HISTOGRAM_BINS);
        let total: f64 = hist.bins.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(hist.bins.iter().all(|b| *b >= 0.0));
    }

    #[test]
    fn pure_dc_image_has_infinite_ratio() {
        let img = Tensor::full(&[3, 16, 16], 0.5);
        assert!(low_high_ratio(&img, 0.5).is_infinite());
    }

    #[test]
    fn checkerboard_ratio_is_near_zero() {
        let h = 16;
        let plane = h * h;
        let mut data = vec![0.0; 3 * plane];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..h {
                    data[c * plane + y * h + x] =
                        if (x + y) % 2 == 0 { 1.0 } else { -1.0 } + 1e-3;
                }
            }
        }
        let img = Tensor::from_vec(data, &[3, h, h]);
        assert!(low_high_ratio(&img, 0.5) < 0.05);
    }

    #[test]
    fn noise_lowers_the_ratio_on_most_pairs() {
        let mut down = 0;
        let n = 50;
        for i in 0..n {
            let pair = pair_with(Degradation::Noise { sigma: 25.0 }, 1000 + i);
            let rc = low_high_ratio(&pair.clean, 0.5);
            let rd = low_high_ratio(&pair.degraded, 0.5);
            if rd < rc {
                down += 1;
            }
        }
        assert!(down * 10 >= n * 9, "only {down}/{n} noise pairs moved down");
    }

    #[test]
    fn analyze_writes_header_and_rows() {
        let specs = vec![DegradationSpec::new(Degradation::Noise { sigma: 25.0 }, 5)];
        let mut buf = Vec::new();
        let rows = analyze(&specs, 3, 32, 0.5, &mut buf).unwrap();
        assert_eq!(rows.len(), 3);
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("kind,seed,param1"));
        assert_eq!(lines[0].split(',').count(), 8 + HISTOGRAM_BINS);
        assert_eq!(lines[1].split(',').count(), 8 + HISTOGRAM_BINS);
    }

    #[test]
    fn directions_match_for_noise_and_blur() {
        let mut sink = Vec::new();
        let specs = vec![
            DegradationSpec::new(Degradation::Noise { sigma: 25.0 }, 21),
            DegradationSpec::new(
                Degradation::Blur { kernel: crate::degrade::BlurKernel::Gaussian { size: 9, sigma: 2.0 } },
                22,
            ),
        ];
        let rows = analyze(&specs, 12, 32, 0.5, &mut sink).unwrap();
        let mean_delta = |kind: &str| {
            let sel: Vec<&AnalysisRow> = rows.iter().filter(|r| r.kind == kind).collect();
            sel.iter()
                .map(|r| {
                    let hc = 1.0 / (1.0 + r.clean_ratio);
                    let hd = 1.0 / (1.0 + r.degraded_ratio);
                    hd - hc
                })
                .sum::<f64>()
                / sel.len() as f64
        };
        assert!(mean_delta("noise") > 0.0);
        assert!(mean_delta("blur") < 0.0);
    }
}

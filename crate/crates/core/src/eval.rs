//! Checkpoint evaluation: restoration quality tables, modulation-ratio
//! reports, and the nearest-centroid separability probe.

use crate::degrade::{self, DegradationSpec};
use crate::error::Result;
use crate::metrics::{psnr, ssim};
use crate::rformer::RformerConfig;
use crate::rng::derive_seed;
use crate::train::{mean_ratio_per_band, train_learnable_toy, ModelBundle, ToyTrainConfig};

const TAG_EVAL_CLEAN: u64 = 0x6576_636c;
const TAG_EVAL_DEG: u64 = 0x6576_6467;

/// Restored-vs-degraded quality for one task.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub task: String,
    pub n: usize,
    pub psnr_in: f64,
    pub ssim_in: f64,
    pub psnr_out: f64,
    pub ssim_out: f64,
}

pub const EVAL_CSV_HEADER: &str = "task,n,psnr_in,ssim_in,psnr_out,ssim_out";

impl EvalRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.task, self.n, self.psnr_in, self.ssim_in, self.psnr_out, self.ssim_out
        )
    }
}

/// Evaluate a bundle on freshly synthesized held-out pairs.
///
/// Evaluation seeds live in their own derivation stream, so they never
/// collide with training samples of the same master seed.
pub fn evaluate(
    bundle: &ModelBundle,
    specs: &[DegradationSpec],
    n_pairs: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(specs.len());
    for (t, spec) in specs.iter().enumerate() {
        let mut acc = EvalRow {
            task: spec.kind.kind_name().into(),
            n: n_pairs,
            psnr_in: 0.0,
            ssim_in: 0.0,
            psnr_out: 0.0,
            ssim_out: 0.0,
        };
        for i in 0..n_pairs {
            let idx = (t * n_pairs + i) as u64;
            let clean = degrade::synth_clean(derive_seed(seed, TAG_EVAL_CLEAN, idx), size, size);
            let pair = degrade::apply(&clean, &spec.with_seed(derive_seed(seed, TAG_EVAL_DEG, idx)))?;
            let restored = bundle.restore(&pair.degraded)?;
            acc.psnr_in += psnr(&pair.degraded, &pair.clean);
            acc.ssim_in += ssim(&pair.degraded, &pair.clean);
            acc.psnr_out += psnr(&restored, &pair.clean);
            acc.ssim_out += ssim(&restored, &pair.clean);
        }
        let n = n_pairs as f64;
        acc.psnr_in /= n;
        acc.ssim_in /= n;
        acc.psnr_out /= n;
        acc.ssim_out /= n;
        rows.push(acc);
    }
    Ok(rows)
}

/// Mean embedded modulation ratio per band for one task.
#[derive(Debug, Clone)]
pub struct ModulationRow {
    pub task: String,
    /// Mean ratio for bands `2..=L`, averaged over layers, heads, samples.
    pub band_means: Vec<f64>,
}

pub fn modulation_csv_header(bands: usize) -> String {
    let mut cols = vec!["task".to_string(), "mode".to_string()];
    for k in 2..=bands {
        cols.push(format!("mean_m{}", k - 1));
    }
    cols.join(",")
}

impl ModulationRow {
    pub fn to_csv(&self, mode: &str) -> String {
        let mut cols = vec![self.task.clone(), mode.to_string()];
        cols.extend(self.band_means.iter().map(|v| format!("{v}")));
        cols.join(",")
    }
}

/// Embedded ratios: run degraded samples through the encoder + projection
/// and average the resulting per-layer, per-head ratios.
pub fn modulation_report(
    bundle: &ModelBundle,
    specs: &[DegradationSpec],
    samples: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<ModulationRow>> {
    let rcfg = &bundle.rformer.cfg;
    let mut rows = Vec::with_capacity(specs.len());
    for (t, spec) in specs.iter().enumerate() {
        let mut sums = vec![0.0; rcfg.mod_bands - 1];
        for i in 0..samples {
            let idx = (t * samples + i) as u64;
            let clean = degrade::synth_clean(derive_seed(seed, TAG_EVAL_CLEAN, idx), size, size);
            let pair = degrade::apply(&clean, &spec.with_seed(derive_seed(seed, TAG_EVAL_DEG, idx)))?;
            let d = bundle.dformer.forward(&pair.degraded)?;
            let ratios = bundle.proj.forward(&d);
            for (k, m) in mean_ratio_per_band(&ratios.to_vec(), rcfg).iter().enumerate() {
                sums[k] += m;
            }
        }
        rows.push(ModulationRow {
            task: spec.kind.kind_name().into(),
            band_means: sums.iter().map(|s| s / samples as f64).collect(),
        });
    }
    Ok(rows)
}

/// Learned ratios: train one fresh restorer per task with free ratio
/// parameters and report their mean per band.
pub fn modulation_report_learnable(
    specs: &[DegradationSpec],
    rcfg: &RformerConfig,
    toy: &ToyTrainConfig,
) -> Result<Vec<ModulationRow>> {
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let out = train_learnable_toy(spec, rcfg, toy)?;
        rows.push(ModulationRow {
            task: spec.kind.kind_name().into(),
            band_means: mean_ratio_per_band(&out.ratios.to_vec(), rcfg),
        });
    }
    Ok(rows)
}

/// Classify each test representation by its nearest class centroid
/// (computed from the labelled reference set); returns accuracy in [0,1].
pub fn nearest_centroid_accuracy(
    reference: &[(usize, Vec<f64>)],
    test: &[(usize, Vec<f64>)],
) -> f64 {
    assert!(!reference.is_empty() && !test.is_empty());
    let dim = reference[0].1.len();
    let n_classes = reference.iter().map(|(c, _)| *c).max().unwrap() + 1;
    let mut centroids = vec![vec![0.0; dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (c, v) in reference {
        counts[*c] += 1;
        for (s, x) in centroids[*c].iter_mut().zip(v) {
            *s += x;
        }
    }
    for (c, count) in counts.iter().enumerate() {
        assert!(*count > 0, "class {c} has no reference samples");
        for s in centroids[c].iter_mut() {
            *s /= *count as f64;
        }
    }
    let mut correct = 0usize;
    for (label, v) in test {
        let mut best = (f64::INFINITY, 0usize);
        for (c, centroid) in centroids.iter().enumerate() {
            let d2: f64 = centroid
                .iter()
                .zip(v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < best.0 {
                best = (d2, c);
            }
        }
        if best.1 == *label {
            correct += 1;
        }
    }
    correct as f64 / test.len() as f64
}

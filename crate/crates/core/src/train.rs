//! Two-stage training: contrastive encoder warm-up, then joint optimization
//! of the encoder, the degradation projection, and the restoration network.
//!
//! Everything is driven by one seeded generator in a fixed loop order, so a
//! run is bitwise reproducible (wall-clock timings aside).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointConfig};
use crate::config::RunConfig;
use crate::degrade::{self, DegradationSpec, ImagePair};
use crate::dformer::{momentum_update, Dformer, DformerConfig};
use crate::error::{Error, Result};
use crate::loss::{composite_loss, info_nce, l1_loss, NegativeQueue};
use crate::optim::{stage1_lr, stage2_lr, AdamW};
use crate::rformer::{learnable_ratios, DegradationProjection, Rformer, RformerConfig};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

const TAG_INIT: u64 = 0x696e_6974;
const TAG_DATA: u64 = 0x6461_7461;
const TAG_QUEUE: u64 = 0x7175_6575;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// Training patch side length.
    pub patch: usize,
    /// Procedural source image side length.
    pub image_size: usize,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Key-encoder momentum.
    pub momentum: f64,
    /// Negative queue capacity.
    pub queue: usize,
    pub stage1_lr: f64,
    /// Fraction of stage-1 epochs after which the lr drops by 10x.
    pub stage1_drop_frac: f64,
    pub stage2_lr: f64,
    /// Number of even-interval halvings across stage 2.
    pub stage2_halvings: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 30,
            stage2_epochs: 100,
            steps_per_epoch: 2,
            batch_size: 4,
            patch: 32,
            image_size: 64,
            tau: 0.07,
            momentum: 0.999,
            queue: 256,
            stage1_lr: 3e-4,
            stage1_drop_frac: 0.6,
            stage2_lr: 1e-4,
            stage2_halvings: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::Config("train: tau must be positive".into()));
        }
        if self.queue < self.batch_size {
            return Err(Error::Config("train: queue must hold at least one batch".into()));
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("train: batch and steps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config("train: momentum must be in [0,1]".into()));
        }
        if self.patch > self.image_size {
            return Err(Error::Config("train: patch larger than image".into()));
        }
        Ok(())
    }
}

/// One epoch's entry in the JSON-lines metric log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: u8,
    pub l_cl: f64,
    pub l_rec: Option<f64>,
    pub lr: f64,
    pub wall_ms: u128,
}

impl EpochLog {
    /// The deterministic portion (everything except wall-clock time).
    pub fn deterministic_key(&self) -> (usize, u8, u64, u64, u64) {
        (
            self.epoch,
            self.stage,
            self.l_cl.to_bits(),
            self.l_rec.unwrap_or(-1.0).to_bits(),
            self.lr.to_bits(),
        )
    }
}

/// Query encoder, momentum key encoder, degradation projection, restorer.
pub struct ModelBundle {
    pub dformer: Dformer,
    pub key_encoder: Dformer,
    pub proj: DegradationProjection,
    pub rformer: Rformer,
}

impl ModelBundle {
    pub fn new(dcfg: &DformerConfig, rcfg: &RformerConfig, seed: u64) -> Result<ModelBundle> {
        if dcfg.repr_dim != rcfg.repr_dim {
            return Err(Error::Config("repr_dim mismatch between encoders".into()));
        }
        let mut init_rng = Rng::new(derive_seed(seed, TAG_INIT, 0));
        let dformer = Dformer::new(dcfg, &mut init_rng)?;
        let key_encoder = Dformer::new(dcfg, &mut Rng::new(derive_seed(seed, TAG_INIT, 1)))?;
        // key starts as an exact copy of the query and never sees gradients
        momentum_update(&key_encoder.params(), &dformer.params(), 0.0)?;
        key_encoder.set_trainable(false);
        let proj = DegradationProjection::new(rcfg.repr_dim, rcfg.total_ratios(), &mut init_rng);
        let rformer = Rformer::new(rcfg, &mut init_rng)?;
        Ok(ModelBundle { dformer, key_encoder, proj, rformer })
    }

    /// All trainable parameters (query encoder, projection, restorer).
    pub fn trainable_params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.dformer.params();
        p.extend(self.proj.params());
        p.extend(self.rformer.params());
        p
    }

    /// Checkpoint sections, key encoder included for exact resumption.
    pub fn all_params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.trainable_params();
        p.extend(
            self.key_encoder
                .params()
                .into_iter()
                .map(|(n, t)| (format!("key.{n}"), t)),
        );
        p
    }

    /// Restore an image, embedding the modulation ratios from its own
    /// degradation representation.
    pub fn restore(&self, img: &Tensor) -> Result<Tensor> {
        let d = self.dformer.forward(img)?;
        let ratios = self.proj.forward(&d);
        self.rformer.forward(img, &ratios)
    }

    pub fn save(&self, path: &Path, seed: u64, stage: u32) -> Result<()> {
        let cfg = CheckpointConfig {
            dformer: Some(self.dformer.cfg.clone()),
            rformer: Some(self.rformer.cfg.clone()),
            learnable_ratios: false,
            seed,
            stage,
        };
        checkpoint::save(path, &cfg, &self.all_params())
    }

    pub fn load(path: &Path) -> Result<ModelBundle> {
        let ckpt = checkpoint::load(path)?;
        let dcfg = ckpt
            .config
            .dformer
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no dformer config".into()))?;
        let rcfg = ckpt
            .config
            .rformer
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no rformer config".into()))?;
        let bundle = ModelBundle::new(&dcfg, &rcfg, ckpt.config.seed)?;
        bundle.dformer.set_trainable(true);
        ckpt.load_into(&bundle.trainable_params())?;
        if ckpt.has_section("key.") {
            let keyed: Vec<(String, Tensor)> = bundle
                .key_encoder
                .params()
                .into_iter()
                .map(|(n, t)| (format!("key.{n}"), t))
                .collect();
            ckpt.load_into(&keyed)?;
        } else {
            momentum_update(&bundle.key_encoder.params(), &bundle.dformer.params(), 0.0)?;
        }
        bundle.key_encoder.set_trainable(false);
        Ok(bundle)
    }
}

/// One training sample: aligned anchor patch pair plus an independently
/// cropped positive patch of the same degraded image.
struct Sample {
    anchor: ImagePair,
    positive: ImagePair,
    img_seed: u64,
    deg_seed: u64,
}

fn draw_sample(
    specs: &[DegradationSpec],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Sample> {
    let spec = &specs[rng.below(specs.len())];
    let img_seed = rng.next_u64();
    let deg_seed = rng.next_u64();
    let clean = degrade::synth_clean(img_seed, cfg.image_size, cfg.image_size);
    let pair = degrade::apply(&clean, &spec.with_seed(deg_seed))?;
    let anchor = degrade::sample_patch(&pair, cfg.patch, rng, true)?;
    let positive = degrade::sample_patch(&pair, cfg.patch, rng, true)?;
    Ok(Sample { anchor, positive, img_seed, deg_seed })
}

fn nan_abort(stage: u8, seeds: &[(u64, u64)]) -> Error {
    Error::Numeric(format!(
        "stage {stage}: loss became non-finite; last batch (image, degradation) seeds: {seeds:?}"
    ))
}

pub struct TrainOutput {
    pub logs: Vec<EpochLog>,
    pub stage1_ckpt: Option<PathBuf>,
    pub best_ckpt: Option<PathBuf>,
    pub final_ckpt: PathBuf,
    pub metrics_path: PathBuf,
}

/// Run the full two-stage schedule described by a run config.
pub fn train(run: &RunConfig) -> Result<TrainOutput> {
    run.validate()?;
    let cfg = &run.train;
    let specs = run.specs()?;
    let out_dir = &run.paths.out_dir;
    fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics_file = fs::File::create(&metrics_path)?;

    let bundle = ModelBundle::new(&run.dformer, &run.rformer, run.seed)?;
    let repr_dim = run.dformer.repr_dim;

    // seeded random unit vectors prime the queue before any key is pushed
    let mut queue = NegativeQueue::new(cfg.queue, repr_dim);
    let mut qrng = Rng::new(derive_seed(run.seed, TAG_QUEUE, 0));
    for _ in 0..cfg.queue {
        let v: Vec<f64> = (0..repr_dim).map(|_| qrng.normal()).collect();
        queue.push(&Tensor::from_vec(v, &[repr_dim]).l2_normalize());
    }

    let mut data_rng = Rng::new(derive_seed(run.seed, TAG_DATA, 0));
    let mut logs = Vec::new();

    // stage 1: contrastive warm-up of the query encoder only
    let mut opt1 = AdamW::new(bundle.dformer.params());
    for epoch in 0..cfg.stage1_epochs {
        let started = Instant::now();
        let lr = stage1_lr(cfg.stage1_lr, epoch, cfg.stage1_epochs, cfg.stage1_drop_frac);
        let mut epoch_cl = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            opt1.zero_grad();
            let mut batch_seeds = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let sample = draw_sample(&specs, cfg, &mut data_rng)?;
                batch_seeds.push((sample.img_seed, sample.deg_seed));
                let d_q = bundle.dformer.forward(&sample.anchor.degraded)?;
                let d_k = bundle.key_encoder.forward(&sample.positive.degraded)?.detach();
                let l_cl = info_nce(&d_q, &d_k, &queue, cfg.tau);
                let val = l_cl.item();
                if !val.is_finite() {
                    return Err(nan_abort(1, &batch_seeds));
                }
                epoch_cl += val;
                l_cl.scale(1.0 / cfg.batch_size as f64).backward();
                queue.push(&d_k);
            }
            opt1.step(lr);
            momentum_update(
                &bundle.key_encoder.params(),
                &bundle.dformer.params(),
                cfg.momentum,
            )?;
        }
        let log = EpochLog {
            epoch,
            stage: 1,
            l_cl: epoch_cl / (cfg.steps_per_epoch * cfg.batch_size) as f64,
            l_rec: None,
            lr,
            wall_ms: started.elapsed().as_millis(),
        };
        writeln!(metrics_file, "{}", serde_json::to_string(&log)?)?;
        logs.push(log);
    }

    let stage1_ckpt = if cfg.stage1_epochs > 0 {
        let path = out_dir.join("stage1.ckpt");
        bundle.save(&path, run.seed, 1)?;
        Some(path)
    } else {
        None
    };

    // stage 2: joint training on the composite loss
    let mut opt2 = AdamW::new(bundle.trainable_params());
    let mut best: Option<(f64, PathBuf)> = None;
    for epoch in 0..cfg.stage2_epochs {
        let started = Instant::now();
        let lr = stage2_lr(cfg.stage2_lr, epoch, cfg.stage2_epochs, cfg.stage2_halvings);
        let mut epoch_cl = 0.0;
        let mut epoch_rec = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            opt2.zero_grad();
            let mut batch_seeds = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let sample = draw_sample(&specs, cfg, &mut data_rng)?;
                batch_seeds.push((sample.img_seed, sample.deg_seed));
                let d_q = bundle.dformer.forward(&sample.anchor.degraded)?;
                let ratios = bundle.proj.forward(&d_q);
                let restored = bundle.rformer.forward(&sample.anchor.degraded, &ratios)?;
                let l_rec = l1_loss(&restored, &sample.anchor.clean);
                let d_k = bundle.key_encoder.forward(&sample.positive.degraded)?.detach();
                let l_cl = info_nce(&d_q, &d_k, &queue, cfg.tau);
                let (vc, vr) = (l_cl.item(), l_rec.item());
                if !vc.is_finite() || !vr.is_finite() {
                    return Err(nan_abort(2, &batch_seeds));
                }
                epoch_cl += vc;
                epoch_rec += vr;
                composite_loss(&l_cl, &l_rec)
                    .scale(1.0 / cfg.batch_size as f64)
                    .backward();
                queue.push(&d_k);
            }
            opt2.step(lr);
            momentum_update(
                &bundle.key_encoder.params(),
                &bundle.dformer.params(),
                cfg.momentum,
            )?;
        }
        let denom = (cfg.steps_per_epoch * cfg.batch_size) as f64;
        let mean_rec = epoch_rec / denom;
        let log = EpochLog {
            epoch,
            stage: 2,
            l_cl: epoch_cl / denom,
            l_rec: Some(mean_rec),
            lr,
            wall_ms: started.elapsed().as_millis(),
        };
        writeln!(metrics_file, "{}", serde_json::to_string(&log)?)?;
        logs.push(log);
        if best.as_ref().is_none_or(|(b, _)| mean_rec < *b) {
            let path = out_dir.join("best.ckpt");
            bundle.save(&path, run.seed, 2)?;
            best = Some((mean_rec, path));
        }
    }

    let final_ckpt = out_dir.join("final.ckpt");
    bundle.save(&final_ckpt, run.seed, if cfg.stage2_epochs > 0 { 2 } else { 1 })?;
    Ok(TrainOutput {
        logs,
        stage1_ckpt,
        best_ckpt: best.map(|(_, p)| p),
        final_ckpt,
        metrics_path,
    })
}

// ── one-by-one toy training with free modulation ratios ────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patch: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig { steps: 240, batch_size: 2, lr: 1e-3, patch: 32, image_size: 64, seed: 0 }
    }
}

pub struct ToyOutput {
    pub rformer: Rformer,
    pub ratios: Tensor,
    pub step_losses: Vec<f64>,
}

/// Train a restorer with directly learnable modulation ratios on a single
/// degradation family, reconstruction loss only.
pub fn train_learnable_toy(
    task: &DegradationSpec,
    rcfg: &RformerConfig,
    cfg: &ToyTrainConfig,
) -> Result<ToyOutput> {
    rcfg.validate()?;
    let mut init_rng = Rng::new(derive_seed(cfg.seed, TAG_INIT, 2));
    let rformer = Rformer::new(rcfg, &mut init_rng)?;
    let ratios = learnable_ratios(rcfg);
    let mut params = rformer.params();
    params.push(("ratios".into(), ratios.clone()));
    let mut opt = AdamW::new(params);

    let train_cfg = TrainConfig {
        patch: cfg.patch,
        image_size: cfg.image_size,
        ..TrainConfig::default()
    };
    let specs = vec![task.clone()];
    let mut data_rng = Rng::new(derive_seed(cfg.seed, TAG_DATA, 1));
    let mut step_losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        opt.zero_grad();
        let mut total = 0.0;
        let mut batch_seeds = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let sample = draw_sample(&specs, &train_cfg, &mut data_rng)?;
            batch_seeds.push((sample.img_seed, sample.deg_seed));
            let restored = rformer.forward(&sample.anchor.degraded, &ratios)?;
            let l_rec = l1_loss(&restored, &sample.anchor.clean);
            let v = l_rec.item();
            if !v.is_finite() {
                return Err(nan_abort(2, &batch_seeds));
            }
            total += v;
            l_rec.scale(1.0 / cfg.batch_size as f64).backward();
        }
        opt.step(cfg.lr);
        step_losses.push(total / cfg.batch_size as f64);
    }
    Ok(ToyOutput { rformer, ratios, step_losses })
}

/// Mean modulation ratio per non-DC band, averaged over layers and heads.
pub fn mean_ratio_per_band(flat: &[f64], cfg: &RformerConfig) -> Vec<f64> {
    let per_band = cfg.mod_bands - 1;
    let groups = flat.len() / per_band;
    let mut means = vec![0.0; per_band];
    for g in 0..groups {
        for k in 0..per_band {
            means[k] += flat[g * per_band + k];
        }
    }
    for m in means.iter_mut() {
        *m /= groups as f64;
    }
    means
}

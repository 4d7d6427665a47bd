//! Frequency-aware degradation-estimation encoder.
//!
//! The input image is decomposed into `L` frequency-band images which run
//! through a shared convolutional stem and `K` stages of frequency-aware
//! transformer blocks. Each block applies intra-band windowed attention
//! (bands fully isolated), inter-band windowed attention (all bands of one
//! spatial window attend jointly, with a per-band embedding added to the
//! tokens), and an MLP, all with pre-norm residuals. Band streams are then
//! averaged, pooled, and projected to a unit-norm degradation vector.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spectral;
use crate::tensor::{kaiming_normal, trunc_normal, Tensor};
use crate::window::{
    chw_to_tokens, pad_reflect_chw, tokens_to_chw, LayerNorm, Mlp, WindowAttention, WindowPlan,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DformerConfig {
    /// Number of frequency bands L.
    pub bands: usize,
    /// Encoder stages K.
    pub stages: usize,
    /// Transformer blocks per stage N.
    pub blocks_per_stage: usize,
    /// Stem channel count; doubles per downsample.
    pub dim0: usize,
    /// Attention heads per stage.
    pub heads: Vec<usize>,
    pub window: usize,
    /// Output degradation-representation width.
    pub repr_dim: usize,
}

impl Default for DformerConfig {
    fn default() -> Self {
        DformerConfig {
            bands: 2,
            stages: 2,
            blocks_per_stage: 2,
            dim0: 16,
            heads: vec![2, 4],
            window: 8,
            repr_dim: 64,
        }
    }
}

impl DformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bands < 2 {
            return Err(Error::Config("dformer: bands must be >= 2".into()));
        }
        if self.stages == 0 || self.blocks_per_stage == 0 {
            return Err(Error::Config("dformer: stages and blocks must be >= 1".into()));
        }
        if self.heads.len() != self.stages {
            return Err(Error::Config(format!(
                "dformer: {} head counts for {} stages",
                self.heads.len(),
                self.stages
            )));
        }
        for (s, &h) in self.heads.iter().enumerate() {
            let dim = self.dim0 << s;
            if h == 0 || dim % h != 0 {
                return Err(Error::Config(format!(
                    "dformer: stage {s} dim {dim} not divisible by heads {h}"
                )));
            }
        }
        if self.window == 0 || self.repr_dim == 0 {
            return Err(Error::Config("dformer: window and repr_dim must be positive".into()));
        }
        Ok(())
    }

    /// Input sizes are reflect-padded up to a multiple of this.
    pub fn size_multiple(&self) -> usize {
        self.window << (self.stages - 1)
    }

    pub fn stage_dim(&self, stage: usize) -> usize {
        self.dim0 << stage
    }
}

/// One frequency-aware transformer block.
struct FaBlock {
    norm1: LayerNorm,
    intra: WindowAttention,
    norm2: LayerNorm,
    inter: WindowAttention,
    /// `[L, dim]` absolute band embedding added before inter-band attention.
    band_embed: Tensor,
    norm3: LayerNorm,
    mlp: Mlp,
    shift: bool,
}

impl FaBlock {
    fn new(dim: usize, heads: usize, window: usize, bands: usize, shift: bool, rng: &mut Rng) -> Self {
        FaBlock {
            norm1: LayerNorm::new(dim),
            intra: WindowAttention::new(dim, heads, window, 1, rng),
            norm2: LayerNorm::new(dim),
            inter: WindowAttention::new(dim, heads, window, bands, rng),
            // zero-init keeps inter-band attention band-symmetric at start
            band_embed: Tensor::zeros(&[bands, dim]).requires_grad(true),
            norm3: LayerNorm::new(dim),
            mlp: Mlp::new(dim, 4 * dim, rng),
            shift,
        }
    }

    /// Per-band token matrices in, same shapes out.
    fn forward(&self, bands: &[Tensor], plan: &WindowPlan) -> Vec<Tensor> {
        let l = bands.len();
        let dim = bands[0].dim(1);
        let w2 = plan.window * plan.window;

        // intra-band attention: bands are processed independently with
        // shared weights, so no cross-band information can flow
        let mut current: Vec<Tensor> = bands
            .iter()
            .map(|x| {
                let att = self.intra.forward_tokens(&self.norm1.forward(x), plan, None);
                x.add(&att)
            })
            .collect();

        // inter-band attention: all bands of one spatial window attend
        // jointly; band identity enters through the embedding
        let embedded: Vec<Tensor> = current
            .iter()
            .enumerate()
            .map(|(b, x)| {
                let emb_idx: Vec<usize> = (b * dim..(b + 1) * dim).collect();
                let emb = self.band_embed.gather(Rc::new(emb_idx), &[dim]);
                self.norm2.forward(x).add_bias_rows(&emb)
            })
            .collect();
        let mut inter_parts: Vec<Vec<Tensor>> = vec![Vec::with_capacity(plan.n_windows); l];
        let band_rows: Vec<Rc<Vec<usize>>> = (0..l)
            .map(|b| Rc::new((b * w2..(b + 1) * w2).collect::<Vec<usize>>()))
            .collect();
        for wi in 0..plan.n_windows {
            let gathered: Vec<Tensor> = embedded
                .iter()
                .map(|x| x.gather_rows(Rc::clone(&plan.window_rows[wi])))
                .collect();
            let refs: Vec<&Tensor> = gathered.iter().collect();
            let joint = Tensor::concat(&refs, 0);
            let mask = plan.masks[wi]
                .as_ref()
                .map(|m| WindowPlan::tiled_mask(m, w2, l));
            let out = self.inter.attend_window(&joint, mask.as_ref(), None);
            for (b, parts) in inter_parts.iter_mut().enumerate() {
                parts.push(out.gather_rows(Rc::clone(&band_rows[b])));
            }
        }
        for (b, parts) in inter_parts.into_iter().enumerate() {
            let refs: Vec<&Tensor> = parts.iter().collect();
            let stacked = Tensor::concat(&refs, 0);
            let att = stacked.gather_rows(Rc::clone(&plan.unpartition));
            current[b] = current[b].add(&att);
        }

        // feed-forward
        current
            .iter()
            .map(|x| x.add(&self.mlp.forward(&self.norm3.forward(x))))
            .collect()
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.norm1.collect_params(&format!("{prefix}.n1"), out);
        self.intra.collect_params(&format!("{prefix}.intra"), out);
        self.norm2.collect_params(&format!("{prefix}.n2"), out);
        self.inter.collect_params(&format!("{prefix}.inter"), out);
        out.push((format!("{prefix}.band_embed"), self.band_embed.clone()));
        self.norm3.collect_params(&format!("{prefix}.n3"), out);
        self.mlp.collect_params(prefix, out);
    }
}

struct Stage {
    blocks: Vec<FaBlock>,
    /// 4x4 stride-2 conv doubling channels, absent after the last stage.
    downsample: Option<(Tensor, Tensor)>,
}

/// Degradation-estimation encoder.
pub struct Dformer {
    pub cfg: DformerConfig,
    stem_w: Tensor,
    stem_b: Tensor,
    stages: Vec<Stage>,
    head_w1: Tensor,
    head_b1: Tensor,
    head_w2: Tensor,
    head_b2: Tensor,
}

impl Dformer {
    pub fn new(cfg: &DformerConfig, rng: &mut Rng) -> Result<Dformer> {
        cfg.validate()?;
        let stem_w = kaiming_normal(rng, &[cfg.dim0, 3, 3, 3]);
        let stem_b = Tensor::zeros(&[cfg.dim0]).requires_grad(true);
        let mut stages = Vec::with_capacity(cfg.stages);
        for s in 0..cfg.stages {
            let dim = cfg.stage_dim(s);
            let blocks = (0..cfg.blocks_per_stage)
                .map(|b| FaBlock::new(dim, cfg.heads[s], cfg.window, cfg.bands, b % 2 == 1, rng))
                .collect();
            let downsample = if s + 1 < cfg.stages {
                let w = kaiming_normal(rng, &[2 * dim, dim, 4, 4]);
                let b = Tensor::zeros(&[2 * dim]).requires_grad(true);
                Some((w, b))
            } else {
                None
            };
            stages.push(Stage { blocks, downsample });
        }
        let final_dim = cfg.stage_dim(cfg.stages - 1);
        Ok(Dformer {
            cfg: cfg.clone(),
            stem_w,
            stem_b,
            stages,
            head_w1: trunc_normal(rng, &[final_dim, cfg.repr_dim], 0.02),
            head_b1: Tensor::zeros(&[cfg.repr_dim]).requires_grad(true),
            head_w2: trunc_normal(rng, &[cfg.repr_dim, cfg.repr_dim], 0.02),
            head_b2: Tensor::zeros(&[cfg.repr_dim]).requires_grad(true),
        })
    }

    /// Frequency decomposition of the input image into `L` band images.
    pub fn decompose_input(img: &Tensor, bands: usize) -> Result<Vec<Tensor>> {
        Ok(spectral::decompose(img, bands)?.bands)
    }

    /// Encode an image into a unit-norm degradation representation.
    pub fn forward(&self, img: &Tensor) -> Result<Tensor> {
        let shape = img.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Dimension(format!("dformer expects [3,H,W], got {shape:?}")));
        }
        let mult = self.cfg.size_multiple();
        let hp = shape[1].div_ceil(mult) * mult;
        let wp = shape[2].div_ceil(mult) * mult;
        let padded = pad_reflect_chw(img, hp, wp);

        let band_imgs = Self::decompose_input(&padded, self.cfg.bands)?;
        // shared stem across bands
        let mut tokens: Vec<Tensor> = band_imgs
            .iter()
            .map(|b| chw_to_tokens(&b.conv2d(&self.stem_w, 1, 1).add_bias_channels(&self.stem_b)))
            .collect();

        let (mut h, mut w) = (hp, wp);
        for stage in &self.stages {
            let plain = WindowPlan::new(h, w, self.cfg.window, 0);
            let shifted = WindowPlan::new(h, w, self.cfg.window, self.cfg.window / 2);
            for block in &stage.blocks {
                let plan = if block.shift { &shifted } else { &plain };
                tokens = block.forward(&tokens, plan);
            }
            if let Some((dw, db)) = &stage.downsample {
                tokens = tokens
                    .iter()
                    .map(|t| {
                        let maps = tokens_to_chw(t, h, w);
                        let down = maps.conv2d(dw, 2, 1).add_bias_channels(db);
                        chw_to_tokens(&down)
                    })
                    .collect();
                h /= 2;
                w /= 2;
            }
        }

        // fuse band streams by averaging, then pool and project
        let mut fused = tokens[0].clone();
        for t in &tokens[1..] {
            fused = fused.add(t);
        }
        let fused = fused.scale(1.0 / tokens.len() as f64);
        let final_dim = self.cfg.stage_dim(self.cfg.stages - 1);
        let pooled = tokens_to_chw(&fused, h, w).avg_pool_global();
        let repr = pooled
            .reshape(&[1, final_dim])
            .linear(&self.head_w1, &self.head_b1)
            .gelu()
            .linear(&self.head_w2, &self.head_b2)
            .reshape(&[self.cfg.repr_dim]);
        Ok(repr.l2_normalize())
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        out.push(("dformer.stem.w".into(), self.stem_w.clone()));
        out.push(("dformer.stem.b.bias".into(), self.stem_b.clone()));
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.blocks.iter().enumerate() {
                block.collect_params(&format!("dformer.s{s}.b{b}"), &mut out);
            }
            if let Some((w, bias)) = &stage.downsample {
                out.push((format!("dformer.s{s}.down.w"), w.clone()));
                out.push((format!("dformer.s{s}.down.b.bias"), bias.clone()));
            }
        }
        out.push(("dformer.head.w1".into(), self.head_w1.clone()));
        out.push(("dformer.head.b1.bias".into(), self.head_b1.clone()));
        out.push(("dformer.head.w2".into(), self.head_w2.clone()));
        out.push(("dformer.head.b2.bias".into(), self.head_b2.clone()));
        out
    }

    /// Freeze or unfreeze every parameter (key encoders are frozen).
    pub fn set_trainable(&self, flag: bool) {
        for (_, p) in self.params() {
            p.set_requires_grad(flag);
        }
    }
}

/// Momentum update: `key <- m * key + (1 - m) * query`, matched by name.
pub fn momentum_update(
    key: &[(String, Tensor)],
    query: &[(String, Tensor)],
    m: f64,
) -> Result<()> {
    if key.len() != query.len() {
        return Err(Error::Contract(format!(
            "momentum_update: parameter trees differ in size ({} vs {})",
            key.len(),
            query.len()
        )));
    }
    for ((kn, kt), (qn, qt)) in key.iter().zip(query) {
        if kn != qn || kt.shape() != qt.shape() {
            return Err(Error::Contract(format!(
                "momentum_update: mismatched entries {kn} vs {qn}"
            )));
        }
        let q = qt.to_vec();
        kt.update_data(|data| {
            for (k, qv) in data.iter_mut().zip(&q) {
                *k = m * *k + (1.0 - m) * qv;
            }
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::synth_clean;

    fn tiny_cfg() -> DformerConfig {
        DformerConfig {
            bands: 2,
            stages: 1,
            blocks_per_stage: 1,
            dim0: 4,
            heads: vec![2],
            window: 4,
            repr_dim: 8,
        }
    }

    #[test]
    fn decompose_input_constant_image() {
        let img = Tensor::full(&[3, 16, 16], 0.4);
        let bands = Dformer::decompose_input(&img, 2).unwrap();
        for (a, b) in bands[0].data().iter().zip(img.data().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(bands[1].data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn decompose_input_reconstructs_and_band2_zero_mean() {
        let img = synth_clean(3, 16, 16);
        let bands = Dformer::decompose_input(&img, 2).unwrap();
        let mut sum = vec![0.0; img.numel()];
        for b in &bands {
            for (s, v) in sum.iter_mut().zip(b.data().iter()) {
                *s += v;
            }
        }
        for (s, v) in sum.iter().zip(img.data().iter()) {
            assert!((s - v).abs() < 1e-6);
        }
        let plane = 16 * 16;
        let b2 = bands[1].data();
        for c in 0..3 {
            let mean: f64 = b2[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
            assert!(mean.abs() < 1e-6, "band 2 channel {c} mean {mean}");
        }
    }

    #[test]
    fn output_is_unit_norm_and_deterministic() {
        let cfg = tiny_cfg();
        let model = Dformer::new(&cfg, &mut Rng::new(5)).unwrap();
        let img = synth_clean(9, 16, 20); // already a multiple of the window
        let d1 = model.forward(&img).unwrap();
        let d2 = model.forward(&img).unwrap();
        assert_eq!(d1.shape(), vec![8]);
        let norm: f64 = d1.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9, "norm {norm}");
        assert_eq!(d1.to_vec(), d2.to_vec());
    }

    #[test]
    fn odd_sizes_are_padded() {
        let cfg = tiny_cfg();
        let model = Dformer::new(&cfg, &mut Rng::new(5)).unwrap();
        let img = synth_clean(11, 18, 21);
        let d = model.forward(&img).unwrap();
        assert_eq!(d.numel(), 8);
    }

    #[test]
    fn intra_band_isolation_is_exact() {
        // perturb band-2 content; band-1 intra outputs must be bit-identical.
        let cfg = tiny_cfg();
        let mut rng = Rng::new(31);
        let block = FaBlock::new(4, 2, 4, 2, false, &mut rng);
        let plan = WindowPlan::new(8, 8, 4, 0);
        let n = 64;
        let b1 = Tensor::from_vec((0..n * 4).map(|_| rng.normal()).collect(), &[n, 4]);
        let b2a = Tensor::from_vec((0..n * 4).map(|_| rng.normal()).collect(), &[n, 4]);
        let b2b = Tensor::from_vec((0..n * 4).map(|_| rng.normal()).collect(), &[n, 4]);
        let intra_only = |bands: &[Tensor]| -> Vec<Vec<f64>> {
            bands
                .iter()
                .map(|x| {
                    block
                        .intra
                        .forward_tokens(&block.norm1.forward(x), &plan, None)
                        .to_vec()
                })
                .collect()
        };
        let oa = intra_only(&[b1.clone(), b2a]);
        let ob = intra_only(&[b1.clone(), b2b]);
        assert_eq!(oa[0], ob[0]);
        let _ = cfg;
    }

    #[test]
    fn momentum_update_endpoints() {
        let cfg = tiny_cfg();
        let q = Dformer::new(&cfg, &mut Rng::new(1)).unwrap();
        let k = Dformer::new(&cfg, &mut Rng::new(2)).unwrap();

        // m = 1 leaves the key unchanged
        let before: Vec<Vec<f64>> = k.params().iter().map(|(_, t)| t.to_vec()).collect();
        momentum_update(&k.params(), &q.params(), 1.0).unwrap();
        for ((_, t), b) in k.params().iter().zip(&before) {
            assert_eq!(&t.to_vec(), b);
        }
        // m = 0 copies the query
        momentum_update(&k.params(), &q.params(), 0.0).unwrap();
        for ((_, kt), (_, qt)) in k.params().iter().zip(q.params().iter()) {
            assert_eq!(kt.to_vec(), qt.to_vec());
        }
    }

    #[test]
    fn momentum_update_elementwise() {
        let cfg = tiny_cfg();
        let q = Dformer::new(&cfg, &mut Rng::new(3)).unwrap();
        let k = Dformer::new(&cfg, &mut Rng::new(4)).unwrap();
        let kb: Vec<Vec<f64>> = k.params().iter().map(|(_, t)| t.to_vec()).collect();
        let qb: Vec<Vec<f64>> = q.params().iter().map(|(_, t)| t.to_vec()).collect();
        momentum_update(&k.params(), &q.params(), 0.999).unwrap();
        for (i, (_, t)) in k.params().iter().enumerate() {
            for (j, v) in t.to_vec().iter().enumerate() {
                let expect = 0.999 * kb[i][j] + 0.001 * qb[i][j];
                assert!((v - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn momentum_update_rejects_mismatched_trees() {
        let q = Dformer::new(&tiny_cfg(), &mut Rng::new(1)).unwrap();
        let mut other = tiny_cfg();
        other.dim0 = 8;
        other.heads = vec![4];
        let k = Dformer::new(&other, &mut Rng::new(2)).unwrap();
        assert!(momentum_update(&k.params(), &q.params(), 0.5).is_err());
    }

    #[test]
    fn bad_config_rejected() {
        let mut cfg = tiny_cfg();
        cfg.heads = vec![3]; // dim0 = 4 not divisible
        assert!(Dformer::new(&cfg, &mut Rng::new(0)).is_err());
        let mut cfg = tiny_cfg();
        cfg.bands = 1;
        assert!(Dformer::new(&cfg, &mut Rng::new(0)).is_err());
    }
}

//! Degradation-adaptive restoration transformer.
//!
//! A small U-shaped windowed-attention network. Every attention layer's
//! post-softmax map `z` is modulated per head as
//! `z' = z + sum_k m_k * BandFilter_k(z)` over the non-DC frequency bands,
//! with the ratios `m` either embedded from a degradation representation by
//! a two-layer MLP or learned directly as free parameters. All ratios are
//! zero at initialization, so the untrained network modulates nothing, and
//! the zero-initialized output projection plus the global residual make it
//! an exact identity mapping.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{kaiming_normal, trunc_normal, Tensor};
use crate::window::{
    chw_to_tokens, crop_chw, pad_reflect_chw, tokens_to_chw, upsample_nearest_2x, LayerNorm, Mlp,
    Modulation, WindowAttention, WindowPlan,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RformerConfig {
    /// Channel widths of the encoder stages; the bottleneck doubles the last.
    pub dims: Vec<usize>,
    /// Attention heads per encoder stage (mirrored by the decoder).
    pub heads: Vec<usize>,
    pub bottleneck_heads: usize,
    pub blocks_per_stage: usize,
    pub window: usize,
    /// Frequency bands used for attention-map modulation.
    pub mod_bands: usize,
    /// Width of the degradation representation driving the projection.
    pub repr_dim: usize,
}

impl Default for RformerConfig {
    fn default() -> Self {
        RformerConfig {
            dims: vec![16, 32],
            heads: vec![2, 4],
            bottleneck_heads: 8,
            blocks_per_stage: 2,
            window: 8,
            mod_bands: 2,
            repr_dim: 64,
        }
    }
}

impl RformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.len() != self.heads.len() {
            return Err(Error::Config("rformer: dims and heads must align".into()));
        }
        for (i, (&d, &h)) in self.dims.iter().zip(&self.heads).enumerate() {
            if h == 0 || d % h != 0 {
                return Err(Error::Config(format!(
                    "rformer: stage {i} dim {d} not divisible by heads {h}"
                )));
            }
        }
        let bdim = self.bottleneck_dim();
        if self.bottleneck_heads == 0 || bdim % self.bottleneck_heads != 0 {
            return Err(Error::Config("rformer: bottleneck heads must divide dim".into()));
        }
        if self.blocks_per_stage == 0 || self.window == 0 {
            return Err(Error::Config("rformer: blocks and window must be positive".into()));
        }
        if self.mod_bands < 2 {
            return Err(Error::Config("rformer: mod_bands must be >= 2".into()));
        }
        Ok(())
    }

    pub fn bottleneck_dim(&self) -> usize {
        2 * *self.dims.last().unwrap()
    }

    /// Input sizes are reflect-padded up to a multiple of this.
    pub fn size_multiple(&self) -> usize {
        self.window << self.dims.len()
    }

    /// Head count of every attention layer, in network order:
    /// encoder stages, bottleneck, then decoder stages in reverse.
    pub fn layer_heads(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for &h in &self.heads {
            out.extend(std::iter::repeat(h).take(self.blocks_per_stage));
        }
        out.extend(std::iter::repeat(self.bottleneck_heads).take(self.blocks_per_stage));
        for &h in self.heads.iter().rev() {
            out.extend(std::iter::repeat(h).take(self.blocks_per_stage));
        }
        out
    }

    /// Total scalar modulation ratios: per layer, per head, `L - 1` bands.
    pub fn total_ratios(&self) -> usize {
        self.layer_heads().iter().sum::<usize>() * (self.mod_bands - 1)
    }
}

/// One pre-norm attention + MLP block with degradation-adaptive attention.
struct RBlock {
    norm1: LayerNorm,
    attn: WindowAttention,
    norm2: LayerNorm,
    mlp: Mlp,
    shift: bool,
}

impl RBlock {
    fn new(dim: usize, heads: usize, window: usize, shift: bool, rng: &mut Rng) -> Self {
        RBlock {
            norm1: LayerNorm::new(dim),
            attn: WindowAttention::new(dim, heads, window, 1, rng),
            norm2: LayerNorm::new(dim),
            mlp: Mlp::new(dim, 4 * dim, rng),
            shift,
        }
    }

    fn forward(&self, x: &Tensor, plan: &WindowPlan, mods: Option<&[Modulation<'_>]>) -> Tensor {
        let att = self
            .attn
            .forward_tokens(&self.norm1.forward(x), plan, mods);
        let x = x.add(&att);
        x.add(&self.mlp.forward(&self.norm2.forward(&x)))
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.norm1.collect_params(&format!("{prefix}.n1"), out);
        self.attn.collect_params(prefix, out);
        self.norm2.collect_params(&format!("{prefix}.n2"), out);
        self.mlp.collect_params(prefix, out);
    }
}

struct EncStage {
    blocks: Vec<RBlock>,
    down_w: Tensor,
    down_b: Tensor,
}

struct DecStage {
    up_w: Tensor,
    up_b: Tensor,
    fuse_w: Tensor,
    fuse_b: Tensor,
    blocks: Vec<RBlock>,
}

/// Restoration network.
pub struct Rformer {
    pub cfg: RformerConfig,
    in_w: Tensor,
    in_b: Tensor,
    enc: Vec<EncStage>,
    bottleneck: Vec<RBlock>,
    dec: Vec<DecStage>,
    out_w: Tensor,
    out_b: Tensor,
}

impl Rformer {
    pub fn new(cfg: &RformerConfig, rng: &mut Rng) -> Result<Rformer> {
        cfg.validate()?;
        let d0 = cfg.dims[0];
        let in_w = kaiming_normal(rng, &[d0, 3, 3, 3]);
        let in_b = Tensor::zeros(&[d0]).requires_grad(true);

        let mut enc = Vec::with_capacity(cfg.dims.len());
        for (s, &dim) in cfg.dims.iter().enumerate() {
            let next = if s + 1 < cfg.dims.len() { cfg.dims[s + 1] } else { cfg.bottleneck_dim() };
            let blocks = (0..cfg.blocks_per_stage)
                .map(|b| RBlock::new(dim, cfg.heads[s], cfg.window, b % 2 == 1, rng))
                .collect();
            enc.push(EncStage {
                blocks,
                down_w: kaiming_normal(rng, &[next, dim, 4, 4]),
                down_b: Tensor::zeros(&[next]).requires_grad(true),
            });
        }

        let bdim = cfg.bottleneck_dim();
        let bottleneck = (0..cfg.blocks_per_stage)
            .map(|b| RBlock::new(bdim, cfg.bottleneck_heads, cfg.window, b % 2 == 1, rng))
            .collect();

        let mut dec = Vec::with_capacity(cfg.dims.len());
        for (s, &dim) in cfg.dims.iter().enumerate().rev() {
            let above = if s + 1 < cfg.dims.len() { cfg.dims[s + 1] } else { bdim };
            let blocks = (0..cfg.blocks_per_stage)
                .map(|b| RBlock::new(dim, cfg.heads[s], cfg.window, b % 2 == 1, rng))
                .collect();
            dec.push(DecStage {
                up_w: kaiming_normal(rng, &[dim, above, 3, 3]),
                up_b: Tensor::zeros(&[dim]).requires_grad(true),
                fuse_w: kaiming_normal(rng, &[dim, 2 * dim, 1, 1]),
                fuse_b: Tensor::zeros(&[dim]).requires_grad(true),
                blocks,
            });
        }

        // zero-initialized output projection: the untrained network is an
        // exact identity on its input
        let out_w = Tensor::zeros(&[3, d0, 3, 3]).requires_grad(true);
        let out_b = Tensor::zeros(&[3]).requires_grad(true);

        Ok(Rformer { cfg: cfg.clone(), in_w, in_b, enc, bottleneck, dec, out_w, out_b })
    }

    /// Slice per-layer, per-head scalar ratio tensors out of the flat
    /// ratio vector (gradients flow back into it).
    fn slice_ratios(&self, ratios: &Tensor) -> Vec<Vec<Vec<Tensor>>> {
        let per_band = self.cfg.mod_bands - 1;
        let expected = self.cfg.total_ratios();
        assert_eq!(
            ratios.numel(),
            expected,
            "dimension error: ratio vector has {} entries, expected {expected}",
            ratios.numel()
        );
        let mut offset = 0;
        let mut layers = Vec::new();
        for heads in self.cfg.layer_heads() {
            let mut per_head = Vec::with_capacity(heads);
            for _ in 0..heads {
                let mut bands = Vec::with_capacity(per_band);
                for _ in 0..per_band {
                    bands.push(ratios.gather(Rc::new(vec![offset]), &[1]));
                    offset += 1;
                }
                per_head.push(bands);
            }
            layers.push(per_head);
        }
        layers
    }

    /// Restore an image guided by a flat modulation-ratio vector.
    ///
    /// `ratios` comes from [`DegradationProjection::forward`] (embedded
    /// mode) or is itself a trainable parameter (learnable mode).
    pub fn forward(&self, img: &Tensor, ratios: &Tensor) -> Result<Tensor> {
        let shape = img.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Dimension(format!("rformer expects [3,H,W], got {shape:?}")));
        }
        let (h0, w0) = (shape[1], shape[2]);
        let mult = self.cfg.size_multiple();
        let hp = h0.div_ceil(mult) * mult;
        let wp = w0.div_ceil(mult) * mult;
        let padded = pad_reflect_chw(img, hp, wp);

        let layer_ratios = self.slice_ratios(ratios);
        let mut layer_idx = 0;

        fn mods_at<'a>(
            layers: &'a [Vec<Vec<Tensor>>],
            idx: &mut usize,
            heads: usize,
            bands: usize,
        ) -> Vec<Modulation<'a>> {
            let layer = &layers[*idx];
            debug_assert_eq!(layer.len(), heads);
            *idx += 1;
            layer
                .iter()
                .map(|b| Modulation { ratios: b, bands })
                .collect()
        }

        let mut x = padded.conv2d(&self.in_w, 1, 1).add_bias_channels(&self.in_b);
        let (mut h, mut w) = (hp, wp);
        let mut skips: Vec<(Tensor, usize, usize)> = Vec::new();

        for (s, stage) in self.enc.iter().enumerate() {
            let plain = WindowPlan::new(h, w, self.cfg.window, 0);
            let shifted = WindowPlan::new(h, w, self.cfg.window, self.cfg.window / 2);
            let mut tokens = chw_to_tokens(&x);
            for block in &stage.blocks {
                let mods = mods_at(&layer_ratios, &mut layer_idx, self.cfg.heads[s], self.cfg.mod_bands);
                let plan = if block.shift { &shifted } else { &plain };
                tokens = block.forward(&tokens, plan, Some(&mods));
            }
            x = tokens_to_chw(&tokens, h, w);
            skips.push((x.clone(), h, w));
            x = x.conv2d(&stage.down_w, 2, 1).add_bias_channels(&stage.down_b);
            h /= 2;
            w /= 2;
        }

        {
            let plain = WindowPlan::new(h, w, self.cfg.window, 0);
            let shifted = WindowPlan::new(h, w, self.cfg.window, self.cfg.window / 2);
            let mut tokens = chw_to_tokens(&x);
            for block in &self.bottleneck {
                let mods = mods_at(&layer_ratios, &mut layer_idx, self.cfg.bottleneck_heads, self.cfg.mod_bands);
                let plan = if block.shift { &shifted } else { &plain };
                tokens = block.forward(&tokens, plan, Some(&mods));
            }
            x = tokens_to_chw(&tokens, h, w);
        }

        for (d, stage) in self.dec.iter().enumerate() {
            let s = self.cfg.dims.len() - 1 - d;
            let (skip, sh, sw) = skips.pop().expect("skip per decoder stage");
            x = upsample_nearest_2x(&x);
            x = x.conv2d(&stage.up_w, 1, 1).add_bias_channels(&stage.up_b);
            h = sh;
            w = sw;
            let fused = Tensor::concat(&[&x, &skip], 0)
                .conv2d(&stage.fuse_w, 1, 0)
                .add_bias_channels(&stage.fuse_b);
            let plain = WindowPlan::new(h, w, self.cfg.window, 0);
            let shifted = WindowPlan::new(h, w, self.cfg.window, self.cfg.window / 2);
            let mut tokens = chw_to_tokens(&fused);
            for block in &stage.blocks {
                let mods = mods_at(&layer_ratios, &mut layer_idx, self.cfg.heads[s], self.cfg.mod_bands);
                let plan = if block.shift { &shifted } else { &plain };
                tokens = block.forward(&tokens, plan, Some(&mods));
            }
            x = tokens_to_chw(&tokens, h, w);
        }

        let delta = x.conv2d(&self.out_w, 1, 1).add_bias_channels(&self.out_b);
        let restored = padded.add(&delta);
        Ok(crop_chw(&restored, h0, w0))
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        out.push(("rformer.in.w".into(), self.in_w.clone()));
        out.push(("rformer.in.b.bias".into(), self.in_b.clone()));
        for (s, stage) in self.enc.iter().enumerate() {
            for (b, block) in stage.blocks.iter().enumerate() {
                block.collect_params(&format!("rformer.enc{s}.b{b}"), &mut out);
            }
            out.push((format!("rformer.enc{s}.down.w"), stage.down_w.clone()));
            out.push((format!("rformer.enc{s}.down.b.bias"), stage.down_b.clone()));
        }
        for (b, block) in self.bottleneck.iter().enumerate() {
            block.collect_params(&format!("rformer.mid.b{b}"), &mut out);
        }
        for (d, stage) in self.dec.iter().enumerate() {
            out.push((format!("rformer.dec{d}.up.w"), stage.up_w.clone()));
            out.push((format!("rformer.dec{d}.up.b.bias"), stage.up_b.clone()));
            out.push((format!("rformer.dec{d}.fuse.w"), stage.fuse_w.clone()));
            out.push((format!("rformer.dec{d}.fuse.b.bias"), stage.fuse_b.clone()));
            for (b, block) in stage.blocks.iter().enumerate() {
                block.collect_params(&format!("rformer.dec{d}.b{b}"), &mut out);
            }
        }
        out.push(("rformer.out.w".into(), self.out_w.clone()));
        out.push(("rformer.out.b.bias".into(), self.out_b.clone()));
        out
    }
}

/// Two-layer MLP embedding a degradation representation into modulation
/// ratios. The final layer is zero-initialized so every representation maps
/// to zero ratios before training.
pub struct DegradationProjection {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl DegradationProjection {
    pub fn new(repr_dim: usize, total_ratios: usize, rng: &mut Rng) -> Self {
        DegradationProjection {
            w1: trunc_normal(rng, &[repr_dim, repr_dim], 0.02),
            b1: Tensor::zeros(&[repr_dim]).requires_grad(true),
            w2: Tensor::zeros(&[repr_dim, total_ratios]).requires_grad(true),
            b2: Tensor::zeros(&[total_ratios]).requires_grad(true),
        }
    }

    /// `[repr_dim]` representation to `[total_ratios]` flat ratio vector.
    pub fn forward(&self, d: &Tensor) -> Tensor {
        let repr_dim = self.w1.dim(0);
        d.reshape(&[1, repr_dim])
            .linear(&self.w1, &self.b1)
            .gelu()
            .linear(&self.w2, &self.b2)
            .reshape(&[self.w2.dim(1)])
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("proj.w1".into(), self.w1.clone()),
            ("proj.b1.bias".into(), self.b1.clone()),
            ("proj.w2".into(), self.w2.clone()),
            ("proj.b2.bias".into(), self.b2.clone()),
        ]
    }
}

/// Free modulation-ratio parameters for the one-by-one (non-embedded) mode.
pub fn learnable_ratios(cfg: &RformerConfig) -> Tensor {
    Tensor::zeros(&[cfg.total_ratios()]).requires_grad(true)
}

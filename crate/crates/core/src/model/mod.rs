//! The bone-image generator and the conditional patch discriminator.
//!
//! The generator is a fully convolutional encoder-decoder with skip
//! connections. The decoder emits an image at each of its finest `n_scales`
//! resolutions; the per-scale outputs are upsampled bilinearly to full
//! resolution, summed element-wise and passed through `tanh`, so coarse
//! scales set the overall appearance and fine scales add detail.
//!
//! The discriminator scores gradient-domain patches: its input stacks the
//! Sobel x/y derivatives of a conditioning (standard-image) patch with those
//! of a real or generated bone patch, and its output is a probability that
//! the bone patch is real.

pub mod checkpoint;
pub mod layers;
pub mod tensor;

use crate::error::{Result, VdeError};
use crate::image::Image;
use crate::scalar::Scalar;
use layers::{
    leaky_relu, leaky_relu_backward, sigmoid, tanh_backward, tanh_forward, Conv2d, Conv2dGrad,
    Deconv2d, Deconv2dGrad, Dense, DenseGrad, InstanceNorm, InstanceNormCache, InstanceNormGrad,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensor::{upsample_bilinear, upsample_bilinear_adjoint, Tensor};

/// Normalization inside conv blocks; plain blocks by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    None,
    Instance,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    /// Number of decoder resolutions that emit an output image (>= 2).
    pub n_scales: usize,
    /// Channel width after the first encoder stage.
    pub base_channels: usize,
    /// Number of 2x downsampling stages; input dims must divide by `2^depth`.
    pub depth: usize,
    /// Negative slope of the encoder rectifier.
    pub leaky_slope: f64,
    pub norm: NormKind,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_scales: 3,
            base_channels: 32,
            depth: 4,
            leaky_slope: 0.2,
            norm: NormKind::None,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(VdeError::InvalidSpec(
                "generator depth and base_channels must be positive".into(),
            ));
        }
        if self.n_scales < 2 {
            return Err(VdeError::InvalidSpec(format!(
                "n_scales must be >= 2, got {}",
                self.n_scales
            )));
        }
        if self.n_scales > self.depth {
            return Err(VdeError::InvalidSpec(format!(
                "n_scales ({}) must not exceed depth ({})",
                self.n_scales, self.depth
            )));
        }
        Ok(())
    }

    /// Channel width at encoder stage `i`, capped at 8x the base width.
    pub fn channels(&self, i: usize) -> usize {
        (self.base_channels << i.min(3)).min(self.base_channels * 8)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSpec {
    /// Square patch side; must divide by `2^n_layers`.
    pub patch_size: usize,
    pub n_layers: usize,
    pub base_channels: usize,
    pub leaky_slope: f64,
    pub norm: NormKind,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            patch_size: 64,
            n_layers: 3,
            base_channels: 16,
            leaky_slope: 0.2,
            norm: NormKind::None,
        }
    }
}

impl DiscriminatorSpec {
    /// Condition gx, condition gy, bone gx, bone gy.
    pub const IN_CHANNELS: usize = 4;

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.base_channels == 0 {
            return Err(VdeError::InvalidSpec(
                "discriminator n_layers and base_channels must be positive".into(),
            ));
        }
        if self.patch_size % (1 << self.n_layers) != 0 || self.patch_size == 0 {
            return Err(VdeError::InvalidSpec(format!(
                "patch_size {} must be a positive multiple of 2^{}",
                self.patch_size, self.n_layers
            )));
        }
        Ok(())
    }

    pub fn channels(&self, i: usize) -> usize {
        (self.base_channels << i.min(3)).min(self.base_channels * 8)
    }
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// One encoder stage: strided conv, optional norm, leaky rectifier.
#[derive(Debug, Clone)]
struct EncStage<F: Scalar> {
    conv: Conv2d<F>,
    norm: Option<InstanceNorm<F>>,
}

/// One decoder stage: deconv upsample, skip concat, fuse conv, rectifier.
#[derive(Debug, Clone)]
struct DecStage<F: Scalar> {
    deconv: Deconv2d<F>,
    fuse: Conv2d<F>,
    norm: Option<InstanceNorm<F>>,
    /// Skip channels concatenated after the deconv (0 at full resolution).
    skip_ch: usize,
}

/// Generator parameters: the spec plus every layer's weights.
#[derive(Debug, Clone)]
pub struct Generator<F: Scalar> {
    pub spec: GeneratorSpec,
    enc: Vec<EncStage<F>>,
    bottleneck: Conv2d<F>,
    /// Decoder stages ordered coarse-to-fine; `dec[j]` produces the features
    /// at resolution `input / 2^(depth-1-j)`.
    dec: Vec<DecStage<F>>,
    /// `heads[s]` maps the decoder features at resolution `input / 2^s` to a
    /// single-channel scale output (linear).
    heads: Vec<Conv2d<F>>,
}

/// Gradients mirroring [`Generator`]'s parameter arrays.
#[derive(Debug, Clone)]
pub struct GeneratorGrads<F: Scalar> {
    enc: Vec<(Conv2dGrad<F>, Option<InstanceNormGrad<F>>)>,
    bottleneck: Conv2dGrad<F>,
    dec: Vec<(Deconv2dGrad<F>, Conv2dGrad<F>, Option<InstanceNormGrad<F>>)>,
    heads: Vec<Conv2dGrad<F>>,
}

/// Forward activations needed by the backward pass.
pub struct GeneratorCache<F: Scalar> {
    input: Tensor<F>,
    enc_pre: Vec<Tensor<F>>,
    enc_norm: Vec<Option<InstanceNormCache<F>>>,
    enc_act: Vec<Tensor<F>>,
    bott_pre: Tensor<F>,
    bott_act: Tensor<F>,
    dec_deconv_pre: Vec<Tensor<F>>,
    dec_concat: Vec<Tensor<F>>,
    dec_norm: Vec<Option<InstanceNormCache<F>>>,
    dec_pre: Vec<Tensor<F>>,
    dec_act: Vec<Tensor<F>>,
    pub scale_outputs: Vec<Tensor<F>>,
    pub output: Tensor<F>,
}

/// Generator forward products: the bone image in normalized space plus the
/// native-resolution scale outputs (index 0 = full resolution).
pub struct GeneratorOutput<F: Scalar> {
    pub bone_norm: Image<F>,
    pub scale_outputs: Vec<Image<F>>,
}

/// Build a generator with fan-in-scaled Gaussian weights, deterministic for
/// a fixed seed.
pub fn build_generator<F: Scalar>(spec: &GeneratorSpec, rng_seed: u64) -> Result<Generator<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let d = spec.depth;
    let mut enc = Vec::with_capacity(d);
    for i in 0..d {
        let in_ch = if i == 0 { 1 } else { spec.channels(i - 1) };
        let conv = Conv2d::init(in_ch, spec.channels(i), 4, 2, 1, &mut rng);
        let norm = (spec.norm == NormKind::Instance && i > 0)
            .then(|| InstanceNorm::init(spec.channels(i)));
        enc.push(EncStage { conv, norm });
    }
    let top = spec.channels(d - 1);
    let bottleneck = Conv2d::init(top, top, 3, 1, 1, &mut rng);

    // stage producing resolution input/2^s, built coarse-to-fine
    let mut dec = Vec::with_capacity(d);
    for s in (0..d).rev() {
        let in_ch = if s == d - 1 { top } else { spec.channels(s + 1 - 1) };
        let out_ch = if s == 0 {
            spec.base_channels
        } else {
            spec.channels(s - 1)
        };
        let skip_ch = if s == 0 { 0 } else { spec.channels(s - 1) };
        let deconv = Deconv2d::init(in_ch, out_ch, 4, 2, 1, &mut rng);
        let fuse = Conv2d::init(out_ch + skip_ch, out_ch, 3, 1, 1, &mut rng);
        let norm =
            (spec.norm == NormKind::Instance).then(|| InstanceNorm::init(out_ch));
        dec.push(DecStage {
            deconv,
            fuse,
            norm,
            skip_ch,
        });
    }

    let mut heads = Vec::with_capacity(spec.n_scales);
    for s in 0..spec.n_scales {
        let feat_ch = if s == 0 {
            spec.base_channels
        } else {
            spec.channels(s - 1)
        };
        heads.push(Conv2d::init(feat_ch, 1, 3, 1, 1, &mut rng));
    }

    Ok(Generator {
        spec: spec.clone(),
        enc,
        bottleneck,
        dec,
        heads,
    })
}

impl<F: Scalar> Generator<F> {
    /// Decoder stage index (into `self.dec`) that produces resolution
    /// `input / 2^s`.
    fn dec_index(&self, s: usize) -> usize {
        self.spec.depth - 1 - s
    }

    pub fn forward_full(&self, input: &Tensor<F>) -> Result<GeneratorCache<F>> {
        let div = 1usize << self.spec.depth;
        if input.height % div != 0 || input.width % div != 0 || input.channels != 1 {
            return Err(VdeError::InvalidArgument(format!(
                "generator input {}x{}x{} not divisible by 2^{}",
                input.channels, input.height, input.width, self.spec.depth
            )));
        }
        let slope = self.spec.leaky_slope;
        let d = self.spec.depth;

        let mut enc_pre = Vec::with_capacity(d);
        let mut enc_norm = Vec::with_capacity(d);
        let mut enc_act = Vec::with_capacity(d);
        let mut cur = input.clone();
        for stage in &self.enc {
            let conv_out = stage.conv.forward(&cur);
            let (pre, ncache) = match &stage.norm {
                Some(n) => {
                    let (t, c) = n.forward(&conv_out);
                    (t, Some(c))
                }
                None => (conv_out, None),
            };
            let act = leaky_relu(&pre, slope);
            enc_pre.push(pre);
            enc_norm.push(ncache);
            cur = act.clone();
            enc_act.push(act);
        }

        let bott_pre = self.bottleneck.forward(&cur);
        let bott_act = leaky_relu(&bott_pre, 0.0);

        let mut dec_deconv_pre = Vec::with_capacity(d);
        let mut dec_concat = Vec::with_capacity(d);
        let mut dec_norm = Vec::with_capacity(d);
        let mut dec_pre = Vec::with_capacity(d);
        let mut dec_act: Vec<Tensor<F>> = Vec::with_capacity(d);
        let mut cur = bott_act.clone();
        for (j, stage) in self.dec.iter().enumerate() {
            let s = d - 1 - j; // resolution exponent this stage produces
            let up_pre = stage.deconv.forward(&cur);
            let up_act = leaky_relu(&up_pre, 0.0);
            let concat = if stage.skip_ch > 0 {
                Tensor::concat_channels(&[&up_act, &enc_act[s - 1]])?
            } else {
                up_act
            };
            let fuse_out = stage.fuse.forward(&concat);
            let (pre, ncache) = match &stage.norm {
                Some(n) => {
                    let (t, c) = n.forward(&fuse_out);
                    (t, Some(c))
                }
                None => (fuse_out, None),
            };
            let act = leaky_relu(&pre, 0.0);
            dec_deconv_pre.push(up_pre);
            dec_concat.push(concat);
            dec_norm.push(ncache);
            dec_pre.push(pre);
            cur = act.clone();
            dec_act.push(act);
        }

        // scale heads: head s reads the features at resolution input/2^s
        let mut scale_outputs = Vec::with_capacity(self.spec.n_scales);
        for (s, head) in self.heads.iter().enumerate() {
            let feat = &dec_act[self.dec_index(s)];
            scale_outputs.push(head.forward(feat));
        }

        // upsample each to full resolution, sum, tanh
        let mut sum = Tensor::zeros(1, input.height, input.width);
        for (s, o) in scale_outputs.iter().enumerate() {
            let up = upsample_bilinear(o, 1 << s);
            sum.add_assign(&up);
        }
        let output = tanh_forward(&sum);

        Ok(GeneratorCache {
            input: input.clone(),
            enc_pre,
            enc_norm,
            enc_act,
            bott_pre,
            bott_act,
            dec_deconv_pre,
            dec_concat,
            dec_norm,
            dec_pre,
            dec_act,
            scale_outputs,
            output,
        })
    }

    /// Forward pass on a normalized image; the pure-inference entry point.
    pub fn forward_image(&self, standard_norm: &Image<F>) -> Result<GeneratorOutput<F>> {
        let cache = self.forward_full(&Tensor::from_image(standard_norm))?;
        Ok(GeneratorOutput {
            bone_norm: cache.output.channel_to_image(0)?,
            scale_outputs: cache
                .scale_outputs
                .iter()
                .map(|t| t.channel_to_image(0))
                .collect::<Result<_>>()?,
        })
    }

    /// Backpropagate through the whole network.
    ///
    /// `d_output` is the loss gradient with respect to the final (tanh)
    /// image; `d_scales[s]`, when present, is an extra gradient on the
    /// native-resolution scale output `s` (used by per-scale supervision).
    pub fn backward(
        &self,
        cache: &GeneratorCache<F>,
        d_output: &Tensor<F>,
        d_scales: &[Option<Tensor<F>>],
        grads: &mut GeneratorGrads<F>,
    ) {
        let d = self.spec.depth;
        let slope = self.spec.leaky_slope;
        let d_sum = tanh_backward(&cache.output, d_output);

        // head gradients, fed into the decoder features
        let mut d_dec_act: Vec<Option<Tensor<F>>> = (0..d).map(|_| None).collect();
        for (s, head) in self.heads.iter().enumerate() {
            let mut d_o = upsample_bilinear_adjoint(&d_sum, 1 << s);
            if let Some(extra) = d_scales.get(s).and_then(|o| o.as_ref()) {
                d_o.add_assign(extra);
            }
            let j = self.dec_index(s);
            let feat = &cache.dec_act[j];
            let d_feat = head.backward(feat, &d_o, &mut grads.heads[s]);
            match &mut d_dec_act[j] {
                Some(t) => t.add_assign(&d_feat),
                None => d_dec_act[j] = Some(d_feat),
            }
        }

        // decoder stages fine-to-coarse; skip gradients feed the encoder
        let mut d_skip: Vec<Option<Tensor<F>>> = (0..d).map(|_| None).collect();
        let mut d_into_coarser: Option<Tensor<F>> = None;
        for j in (0..d).rev() {
            let s = d - 1 - j;
            let stage = &self.dec[j];
            let mut d_act = d_dec_act[j].take().unwrap_or_else(|| {
                let t = &cache.dec_act[j];
                Tensor::zeros(t.channels, t.height, t.width)
            });
            if let Some(extra) = d_into_coarser.take() {
                d_act.add_assign(&extra);
            }
            let d_pre = leaky_relu_backward(&cache.dec_pre[j], &d_act, 0.0);
            let d_fuse_out = match (&stage.norm, &cache.dec_norm[j]) {
                (Some(n), Some(c)) => {
                    let g = grads.dec[j].2.as_mut().expect("norm grads present");
                    n.backward(c, &d_pre, g)
                }
                _ => d_pre,
            };
            let d_concat = stage
                .fuse
                .backward(&cache.dec_concat[j], &d_fuse_out, &mut grads.dec[j].1);
            let (d_up_act, ds) = if stage.skip_ch > 0 {
                let (a, b) = d_concat.split_channels(d_concat.channels - stage.skip_ch);
                (a, Some(b))
            } else {
                (d_concat, None)
            };
            if let Some(b) = ds {
                match &mut d_skip[s - 1] {
                    Some(t) => t.add_assign(&b),
                    None => d_skip[s - 1] = Some(b),
                }
            }
            let d_up_pre = leaky_relu_backward(&cache.dec_deconv_pre[j], &d_up_act, 0.0);
            let deconv_in = if j == 0 {
                &cache.bott_act
            } else {
                &cache.dec_act[j - 1]
            };
            let d_in = stage
                .deconv
                .backward(deconv_in, &d_up_pre, &mut grads.dec[j].0);
            d_into_coarser = Some(d_in);
        }

        // bottleneck
        let d_bott_act = d_into_coarser.expect("decoder produced a gradient");
        let d_bott_pre = leaky_relu_backward(&cache.bott_pre, &d_bott_act, 0.0);
        let d_top = self
            .bottleneck
            .backward(&cache.enc_act[d - 1], &d_bott_pre, &mut grads.bottleneck);
        match &mut d_skip[d - 1] {
            Some(t) => t.add_assign(&d_top),
            None => d_skip[d - 1] = Some(d_top),
        }

        // encoder, deep to shallow
        let mut d_down: Option<Tensor<F>> = None;
        for i in (0..d).rev() {
            let mut d_act = d_skip[i].take().unwrap_or_else(|| {
                let t = &cache.enc_act[i];
                Tensor::zeros(t.channels, t.height, t.width)
            });
            if let Some(extra) = d_down.take() {
                d_act.add_assign(&extra);
            }
            let d_pre = leaky_relu_backward(&cache.enc_pre[i], &d_act, slope);
            let stage = &self.enc[i];
            let d_conv_out = match (&stage.norm, &cache.enc_norm[i]) {
                (Some(n), Some(c)) => {
                    let g = grads.enc[i].1.as_mut().expect("norm grads present");
                    n.backward(c, &d_pre, g)
                }
                _ => d_pre,
            };
            let conv_in = if i == 0 {
                &cache.input
            } else {
                &cache.enc_act[i - 1]
            };
            let d_in = stage.conv.backward(conv_in, &d_conv_out, &mut grads.enc[i].0);
            d_down = Some(d_in);
        }
    }

    pub fn grads_zeros(&self) -> GeneratorGrads<F> {
        GeneratorGrads {
            enc: self
                .enc
                .iter()
                .map(|s| (s.conv.grad_zeros(), s.norm.as_ref().map(|n| n.grad_zeros())))
                .collect(),
            bottleneck: self.bottleneck.grad_zeros(),
            dec: self
                .dec
                .iter()
                .map(|s| {
                    (
                        s.deconv.grad_zeros(),
                        s.fuse.grad_zeros(),
                        s.norm.as_ref().map(|n| n.grad_zeros()),
                    )
                })
                .collect(),
            heads: self.heads.iter().map(|h| h.grad_zeros()).collect(),
        }
    }

    /// Named parameter arrays in a fixed traversal order.
    pub fn named_arrays(&self) -> Vec<(String, &Vec<F>)> {
        let mut out = Vec::new();
        for (i, s) in self.enc.iter().enumerate() {
            out.push((format!("enc{i}.weight"), &s.conv.weight));
            out.push((format!("enc{i}.bias"), &s.conv.bias));
            if let Some(n) = &s.norm {
                out.push((format!("enc{i}.gamma"), &n.gamma));
                out.push((format!("enc{i}.beta"), &n.beta));
            }
        }
        out.push(("bottleneck.weight".into(), &self.bottleneck.weight));
        out.push(("bottleneck.bias".into(), &self.bottleneck.bias));
        for (j, s) in self.dec.iter().enumerate() {
            out.push((format!("dec{j}.deconv.weight"), &s.deconv.weight));
            out.push((format!("dec{j}.deconv.bias"), &s.deconv.bias));
            out.push((format!("dec{j}.fuse.weight"), &s.fuse.weight));
            out.push((format!("dec{j}.fuse.bias"), &s.fuse.bias));
            if let Some(n) = &s.norm {
                out.push((format!("dec{j}.gamma"), &n.gamma));
                out.push((format!("dec{j}.beta"), &n.beta));
            }
        }
        for (s, h) in self.heads.iter().enumerate() {
            out.push((format!("head{s}.weight"), &h.weight));
            out.push((format!("head{s}.bias"), &h.bias));
        }
        out
    }

    /// Mutable parameter arrays in the same order as [`Self::named_arrays`].
    pub fn arrays_mut(&mut self) -> Vec<&mut Vec<F>> {
        let mut out: Vec<&mut Vec<F>> = Vec::new();
        for s in &mut self.enc {
            out.push(&mut s.conv.weight);
            out.push(&mut s.conv.bias);
            if let Some(n) = &mut s.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out.push(&mut self.bottleneck.weight);
        out.push(&mut self.bottleneck.bias);
        for s in &mut self.dec {
            out.push(&mut s.deconv.weight);
            out.push(&mut s.deconv.bias);
            out.push(&mut s.fuse.weight);
            out.push(&mut s.fuse.bias);
            if let Some(n) = &mut s.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        for h in &mut self.heads {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_arrays().iter().map(|(_, a)| a.len()).sum()
    }

    /// Verify array shapes against the spec and that every weight is finite.
    pub fn audit(&self) -> Result<()> {
        let spec = &self.spec;
        if self.enc.len() != spec.depth
            || self.dec.len() != spec.depth
            || self.heads.len() != spec.n_scales
        {
            return Err(VdeError::InvalidSpec("stage count mismatch".into()));
        }
        for (i, s) in self.enc.iter().enumerate() {
            let in_ch = if i == 0 { 1 } else { spec.channels(i - 1) };
            if s.conv.in_ch != in_ch || s.conv.out_ch != spec.channels(i) {
                return Err(VdeError::InvalidSpec(format!("enc{i} channel mismatch")));
            }
            audit_shape(&s.conv.weight, s.conv.out_ch * s.conv.in_ch * s.conv.k * s.conv.k, "enc weight")?;
        }
        for (name, arr) in self.named_arrays() {
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(VdeError::InvalidSpec(format!("non-finite weight in {name}")));
            }
        }
        Ok(())
    }
}

fn audit_shape<F: Scalar>(arr: &[F], expected: usize, what: &str) -> Result<()> {
    if arr.len() != expected {
        return Err(VdeError::InvalidSpec(format!(
            "{what}: {} values, expected {expected}",
            arr.len()
        )));
    }
    Ok(())
}

impl<F: Scalar> GeneratorGrads<F> {
    pub fn arrays(&self) -> Vec<&Vec<F>> {
        let mut out: Vec<&Vec<F>> = Vec::new();
        for (c, n) in &self.enc {
            out.push(&c.weight);
            out.push(&c.bias);
            if let Some(n) = n {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out.push(&self.bottleneck.weight);
        out.push(&self.bottleneck.bias);
        for (d, f, n) in &self.dec {
            out.push(&d.weight);
            out.push(&d.bias);
            out.push(&f.weight);
            out.push(&f.bias);
            if let Some(n) = n {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        for h in &self.heads {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Vec<F>> {
        let mut out: Vec<&mut Vec<F>> = Vec::new();
        for (c, n) in &mut self.enc {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
            if let Some(n) = n {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out.push(&mut self.bottleneck.weight);
        out.push(&mut self.bottleneck.bias);
        for (d, f, n) in &mut self.dec {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
            out.push(&mut f.weight);
            out.push(&mut f.bias);
            if let Some(n) = n {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        for h in &mut self.heads {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.arrays_mut().into_iter().zip(other.arrays()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for a in self.arrays_mut() {
            for x in a.iter_mut() {
                *x *= factor;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct DiscStage<F: Scalar> {
    conv: Conv2d<F>,
    norm: Option<InstanceNorm<F>>,
}

/// Conditional patch discriminator parameters.
#[derive(Debug, Clone)]
pub struct Discriminator<F: Scalar> {
    pub spec: DiscriminatorSpec,
    stages: Vec<DiscStage<F>>,
    head: Dense<F>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorGrads<F: Scalar> {
    stages: Vec<(Conv2dGrad<F>, Option<InstanceNormGrad<F>>)>,
    head: DenseGrad<F>,
}

pub struct DiscriminatorCache<F: Scalar> {
    input: Tensor<F>,
    pre: Vec<Tensor<F>>,
    norm: Vec<Option<InstanceNormCache<F>>>,
    act: Vec<Tensor<F>>,
    /// Sigmoid output; backward needs it for the logistic derivative.
    pub prob: F,
}

pub fn build_discriminator<F: Scalar>(
    spec: &DiscriminatorSpec,
    rng_seed: u64,
) -> Result<Discriminator<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut stages = Vec::with_capacity(spec.n_layers);
    for i in 0..spec.n_layers {
        let in_ch = if i == 0 {
            DiscriminatorSpec::IN_CHANNELS
        } else {
            spec.channels(i - 1)
        };
        let conv = Conv2d::init(in_ch, spec.channels(i), 4, 2, 1, &mut rng);
        let norm = (spec.norm == NormKind::Instance && i > 0)
            .then(|| InstanceNorm::init(spec.channels(i)));
        stages.push(DiscStage { conv, norm });
    }
    let side = spec.patch_size >> spec.n_layers;
    let head = Dense::init(spec.channels(spec.n_layers - 1) * side * side, &mut rng);
    Ok(Discriminator {
        spec: spec.clone(),
        stages,
        head,
    })
}

impl<F: Scalar> Discriminator<F> {
    /// Score a 4-channel gradient patch; returns the probability that the
    /// bone channels show a real bone image (1 = real) plus the cache.
    pub fn forward_full(&self, patch: &Tensor<F>) -> Result<DiscriminatorCache<F>> {
        if patch.channels != DiscriminatorSpec::IN_CHANNELS
            || patch.height != self.spec.patch_size
            || patch.width != self.spec.patch_size
        {
            return Err(VdeError::InvalidArgument(format!(
                "discriminator expects {}x{p}x{p}, got {}x{}x{}",
                DiscriminatorSpec::IN_CHANNELS,
                patch.channels,
                patch.height,
                patch.width,
                p = self.spec.patch_size
            )));
        }
        let slope = self.spec.leaky_slope;
        let mut pre = Vec::with_capacity(self.stages.len());
        let mut norm = Vec::with_capacity(self.stages.len());
        let mut act = Vec::with_capacity(self.stages.len());
        let mut cur = patch.clone();
        for stage in &self.stages {
            let conv_out = stage.conv.forward(&cur);
            let (p, c) = match &stage.norm {
                Some(n) => {
                    let (t, c) = n.forward(&conv_out);
                    (t, Some(c))
                }
                None => (conv_out, None),
            };
            let a = leaky_relu(&p, slope);
            pre.push(p);
            norm.push(c);
            cur = a.clone();
            act.push(a);
        }
        let logit = self.head.forward(&cur.data);
        let prob = sigmoid(logit);
        Ok(DiscriminatorCache {
            input: patch.clone(),
            pre,
            norm,
            act,
            prob,
        })
    }

    pub fn forward(&self, patch: &Tensor<F>) -> Result<F> {
        Ok(self.forward_full(patch)?.prob)
    }

    /// Backward from `dL/d prob`; accumulates parameter gradients and
    /// returns the gradient with respect to the input patch.
    pub fn backward(
        &self,
        cache: &DiscriminatorCache<F>,
        d_prob: F,
        grads: &mut DiscriminatorGrads<F>,
    ) -> Tensor<F> {
        let slope = self.spec.leaky_slope;
        let p = cache.prob;
        let d_logit = d_prob * p * (F::one() - p);
        let last = cache.act.last().expect("at least one stage");
        let d_flat = self.head.backward(&last.data, d_logit, &mut grads.head);
        let mut d_act = Tensor {
            channels: last.channels,
            height: last.height,
            width: last.width,
            data: d_flat,
        };
        for i in (0..self.stages.len()).rev() {
            let stage = &self.stages[i];
            let d_pre = leaky_relu_backward(&cache.pre[i], &d_act, slope);
            let d_conv_out = match (&stage.norm, &cache.norm[i]) {
                (Some(n), Some(c)) => {
                    let g = grads.stages[i].1.as_mut().expect("norm grads present");
                    n.backward(c, &d_pre, g)
                }
                _ => d_pre,
            };
            let conv_in = if i == 0 {
                &cache.input
            } else {
                &cache.act[i - 1]
            };
            d_act = stage.conv.backward(conv_in, &d_conv_out, &mut grads.stages[i].0);
        }
        d_act
    }

    pub fn grads_zeros(&self) -> DiscriminatorGrads<F> {
        DiscriminatorGrads {
            stages: self
                .stages
                .iter()
                .map(|s| (s.conv.grad_zeros(), s.norm.as_ref().map(|n| n.grad_zeros())))
                .collect(),
            head: self.head.grad_zeros(),
        }
    }

    pub fn named_arrays(&self) -> Vec<(String, &Vec<F>)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("layer{i}.weight"), &s.conv.weight));
            out.push((format!("layer{i}.bias"), &s.conv.bias));
            if let Some(n) = &s.norm {
                out.push((format!("layer{i}.gamma"), &n.gamma));
                out.push((format!("layer{i}.beta"), &n.beta));
            }
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Vec<F>> {
        let mut out: Vec<&mut Vec<F>> = Vec::new();
        for s in &mut self.stages {
            out.push(&mut s.conv.weight);
            out.push(&mut s.conv.bias);
            if let Some(n) = &mut s.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_arrays().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn audit(&self) -> Result<()> {
        if self.stages.len() != self.spec.n_layers {
            return Err(VdeError::InvalidSpec("layer count mismatch".into()));
        }
        let side = self.spec.patch_size >> self.spec.n_layers;
        let expect = self.spec.channels(self.spec.n_layers - 1) * side * side;
        audit_shape(&self.head.weight, expect, "discriminator head")?;
        for (name, arr) in self.named_arrays() {
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(VdeError::InvalidSpec(format!("non-finite weight in {name}")));
            }
        }
        Ok(())
    }
}

impl<F: Scalar> DiscriminatorGrads<F> {
    pub fn arrays(&self) -> Vec<&Vec<F>> {
        let mut out: Vec<&Vec<F>> = Vec::new();
        for (c, n) in &self.stages {
            out.push(&c.weight);
            out.push(&c.bias);
            if let Some(n) = n {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Vec<F>> {
        let mut out: Vec<&mut Vec<F>> = Vec::new();
        for (c, n) in &mut self.stages {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
            if let Some(n) = n {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.arrays_mut().into_iter().zip(other.arrays()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for a in self.arrays_mut() {
            for x in a.iter_mut() {
                *x *= factor;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::normalize;

    fn tiny_spec() -> GeneratorSpec {
        GeneratorSpec {
            n_scales: 2,
            base_channels: 2,
            depth: 2,
            ..GeneratorSpec::default()
        }
    }

    fn norm_input(size: usize, seed: u64) -> Image<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px: Vec<f64> = (0..size * size).map(|_| rng.gen_range(0.0..100.0)).collect();
        normalize(&Image::from_pixels(size, size, px).unwrap())
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_generator::<f32>(&tiny_spec(), 7).unwrap();
        let b = build_generator::<f32>(&tiny_spec(), 7).unwrap();
        for ((na, aa), (nb, ab)) in a.named_arrays().iter().zip(b.named_arrays().iter()) {
            assert_eq!(na, nb);
            assert!(aa.iter().zip(ab.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let c = build_generator::<f32>(&tiny_spec(), 8).unwrap();
        assert_ne!(
            a.named_arrays()[0].1[0].to_bits(),
            c.named_arrays()[0].1[0].to_bits()
        );
    }

    #[test]
    fn audit_passes_for_default_spec() {
        let spec = GeneratorSpec {
            depth: 4,
            base_channels: 16,
            n_scales: 3,
            ..GeneratorSpec::default()
        };
        let g = build_generator::<f32>(&spec, 1).unwrap();
        g.audit().unwrap();
        let d = build_discriminator::<f32>(&DiscriminatorSpec::default(), 2).unwrap();
        d.audit().unwrap();
    }

    #[test]
    fn param_count_matches_hand_count_for_tiny_spec() {
        // depth=2, base=4, n_scales=2, no norm:
        // enc0: conv 1->4 k4 (4*1*16=64) + 4
        // enc1: conv 4->8 k4 (8*4*16=512) + 8
        // bottleneck: conv 8->8 k3 (8*8*9=576) + 8
        // dec0 (coarse): deconv 8->4 k4 (8*4*16=512) + 4; fuse (4+4)->4 k3 (4*8*9=288) + 4
        // dec1 (fine):   deconv 4->4 k4 (4*4*16=256) + 4; fuse 4->4 k3 (4*4*9=144) + 4
        // head0 (full): conv 4->1 k3 (36) + 1
        // head1 (half): conv 4->1 k3 (36) + 1
        let expected = 64 + 4 + 512 + 8 + 576 + 8 + 512 + 4 + 288 + 4 + 256 + 4 + 144 + 4 + 36 + 1 + 36 + 1;
        let spec = GeneratorSpec {
            n_scales: 2,
            base_channels: 4,
            depth: 2,
            ..GeneratorSpec::default()
        };
        let g = build_generator::<f64>(&spec, 0).unwrap();
        assert_eq!(g.param_count(), expected);
    }

    #[test]
    fn forward_shape_range_and_determinism() {
        let g = build_generator::<f64>(&tiny_spec(), 3).unwrap();
        let input = norm_input(16, 5);
        let out = g.forward_image(&input).unwrap();
        assert_eq!(out.bone_norm.width(), 16);
        assert_eq!(out.bone_norm.height(), 16);
        assert!(out.bone_norm.pixels().iter().all(|v| v.abs() < 1.0));
        assert_eq!(out.scale_outputs.len(), 2);
        assert_eq!(out.scale_outputs[0].width(), 16);
        assert_eq!(out.scale_outputs[1].width(), 8);

        let out2 = g.forward_image(&input).unwrap();
        assert_eq!(out.bone_norm.pixels(), out2.bone_norm.pixels());
    }

    #[test]
    fn forward_rejects_bad_dims() {
        let g = build_generator::<f64>(&tiny_spec(), 3).unwrap();
        let input = norm_input(15, 5);
        assert!(g.forward_image(&input).is_err());
    }

    #[test]
    fn multiscale_consistency_zeroing_fine_scales() {
        // zero every head except the coarsest: output == tanh(upsample(coarsest))
        let spec = GeneratorSpec {
            n_scales: 3,
            base_channels: 4,
            depth: 3,
            ..GeneratorSpec::default()
        };
        let mut g = build_generator::<f64>(&spec, 11).unwrap();
        for s in 0..2 {
            g.heads[s].weight.iter_mut().for_each(|w| *w = 0.0);
            g.heads[s].bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let input = norm_input(24, 9);
        let cache = g.forward_full(&Tensor::from_image(&input)).unwrap();
        let coarsest = &cache.scale_outputs[2];
        let up = upsample_bilinear(coarsest, 4);
        for (a, b) in cache.output.data.iter().zip(&up.data) {
            assert_eq!(*a, b.tanh());
        }
    }

    #[test]
    fn translation_covariance_in_the_interior() {
        let spec = GeneratorSpec {
            n_scales: 2,
            base_channels: 4,
            depth: 3,
            ..GeneratorSpec::default()
        };
        let g = build_generator::<f64>(&spec, 21).unwrap();
        let shift = 1usize << spec.depth; // one full downsample stride
        let n = 192;
        let big = norm_input(n, 33);

        let shifted = {
            let mut px = vec![0.0f64; n * n];
            for y in 0..n {
                for x in 0..n {
                    let sx = if x >= shift { x - shift } else { 0 };
                    px[y * n + x] = big.get(sx, y);
                }
            }
            Image::from_pixels(n, n, px).unwrap()
        };
        let a = g.forward_image(&big).unwrap().bone_norm;
        let b = g.forward_image(&shifted).unwrap().bone_norm;
        // compare a 64-pixel interior crop; the margin keeps the compared
        // receptive fields clear of both borders
        let margin = (n - 64) / 2;
        for y in margin..n - margin {
            for x in margin..n - margin {
                let va = a.get(x - shift, y);
                let vb = b.get(x, y);
                assert!(
                    (va - vb).abs() < 1e-4,
                    "covariance violated at ({x},{y}): {va} vs {vb}"
                );
            }
        }
    }

    #[test]
    fn discriminator_output_in_open_unit_interval() {
        let spec = DiscriminatorSpec {
            patch_size: 16,
            n_layers: 2,
            base_channels: 4,
            ..DiscriminatorSpec::default()
        };
        let d = build_discriminator::<f64>(&spec, 5).unwrap();
        let patch = {
            use rand::{Rng, SeedableRng};
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            Tensor {
                channels: 4,
                height: 16,
                width: 16,
                data: (0..4 * 256).map(|_| rng.gen_range(-8.0..8.0)).collect(),
            }
        };
        let p = d.forward(&patch).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(p, d.forward(&patch).unwrap());

        let wrong = Tensor::zeros(4, 8, 8);
        assert!(d.forward(&wrong).is_err());
    }
}

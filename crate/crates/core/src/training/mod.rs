//! Hybrid-loss adversarial training.
//!
//! One training cycle runs `n_d` discriminator mini-batches followed by
//! `n_g` generator mini-batches, consuming a fresh mini-batch per step and
//! truncating the tail cycle when the epoch runs out of batches.
//!
//! The discriminator minimizes
//! `L_D = -E[log D(real)] - E[log(1 - D(fake))]`; the generator minimizes
//! the non-saturating `L_G = -E[log D(fake)] + lambda * L1(fake, target)`
//! (plus optional per-scale L1 terms). Probabilities are clamped to
//! `[1e-7, 1 - 1e-7]` before the logarithms, with zero gradient through an
//! active clamp, so losses stay finite.

pub mod adam;

use crate::error::{Result, VdeError};
use crate::image::filter::{downsample_area, sobel, sobel_adjoint};
use crate::image::{extract_patch, normalize, warp::augment, DESample, GradientField, Image};
use crate::model::checkpoint::save_checkpoint;
use crate::model::tensor::Tensor;
use crate::model::{
    build_discriminator, build_generator, Discriminator, DiscriminatorGrads, DiscriminatorSpec,
    Generator, GeneratorGrads, GeneratorSpec,
};
use crate::phantom::{load_sample, ManifestEntry, Split};
use crate::scalar::Scalar;
pub use adam::Adam;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Probability clamp applied before logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Hybrid loss weight on the L1 term.
    pub lambda: f64,
    /// Generator steps per cycle.
    pub n_g: usize,
    /// Discriminator steps per cycle.
    pub n_d: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Random patch locations per image per discriminator/generator step.
    pub patch_count_per_image: usize,
    /// Optional weights for L1 supervision of the native-resolution scale
    /// outputs (index 0 = full resolution). Empty means none.
    pub scale_supervision_weights: Vec<f64>,
    /// Augmentation: translation range in pixels, rotation range in degrees.
    pub tx_range: f64,
    pub rot_range: f64,
    /// Augmented copies of the train set per epoch (>= 1); each copy draws
    /// its own paired transform.
    pub aug_multiplicity: usize,
    pub seed: u64,
    /// Checkpoint every K epochs (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: 1000.0,
            n_g: 3,
            n_d: 1,
            batch_size: 3,
            learning_rate: 1e-4,
            epochs: 100,
            patch_count_per_image: 4,
            scale_supervision_weights: Vec::new(),
            tx_range: 80.0,
            rot_range: 15.0,
            aug_multiplicity: 1,
            seed: 0,
            checkpoint_every: 25,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(VdeError::InvalidArgument("lambda must be >= 0".into()));
        }
        if self.n_g == 0 || self.n_d == 0 || self.batch_size == 0 {
            return Err(VdeError::InvalidArgument(
                "n_g, n_d and batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(VdeError::InvalidArgument(
                "learning_rate must be positive".into(),
            ));
        }
        if self.tx_range < 0.0 || self.rot_range < 0.0 {
            return Err(VdeError::InvalidArgument(
                "augmentation ranges must be >= 0".into(),
            ));
        }
        if self.aug_multiplicity == 0 {
            return Err(VdeError::InvalidArgument(
                "aug_multiplicity must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    D,
    G,
}

impl std::fmt::Display for StepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepKind::D => write!(f, "D"),
            StepKind::G => write!(f, "G"),
        }
    }
}

/// One optimizer step's logged losses. Fields that do not apply to the step
/// kind are zero, keeping every record finite.
#[derive(Debug, Clone)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub kind: StepKind,
    pub l_d: f64,
    pub l_g_adv: f64,
    pub l_g_l1: f64,
    pub l_g_total: f64,
}

/// Mean absolute difference between two same-size normalized images.
pub fn l1_loss<F: Scalar>(generated: &Image<F>, target: &Image<F>) -> Result<F> {
    if !generated.same_dims(target) {
        return Err(VdeError::DimensionMismatch {
            context: "l1_loss",
            a_h: generated.height(),
            a_w: generated.width(),
            b_h: target.height(),
            b_w: target.width(),
        });
    }
    let mut acc = F::zero();
    for (&a, &b) in generated.pixels().iter().zip(target.pixels()) {
        acc += (a - b).abs();
    }
    Ok(acc / F::from_usize_c(generated.pixels().len()))
}

/// Clamp a probability into `[PROB_EPS, 1 - PROB_EPS]`; the flag reports
/// whether the value passed through unclamped (and therefore carries
/// gradient).
#[inline]
fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_EPS {
        (PROB_EPS, false)
    } else if p > 1.0 - PROB_EPS {
        (1.0 - PROB_EPS, false)
    } else {
        (p, true)
    }
}

/// Per-sample adversarial losses: `l_d = -ln(d_real) - ln(1 - d_fake)` and
/// the non-saturating generator term `l_g_adv = -ln(d_fake)`, with inputs
/// clamped away from 0 and 1.
pub fn adversarial_losses(d_real: f64, d_fake: f64) -> (f64, f64) {
    let (cr, _) = clamp_prob(d_real);
    let (cf, _) = clamp_prob(d_fake);
    (-cr.ln() - (1.0 - cf).ln(), -cf.ln())
}

/// A training pair prepared for one step: normalized tensors plus the Sobel
/// gradients of the normalized standard image (the discriminator condition).
pub struct PreparedSample<F: Scalar> {
    pub standard_norm: Image<F>,
    pub bone_norm: Image<F>,
    pub cond_grad: GradientField<F>,
}

impl<F: Scalar> PreparedSample<F> {
    pub fn from_raw(sample: &DESample<F>) -> Result<Self> {
        let standard_norm = normalize(&sample.standard);
        let bone_norm = normalize(&sample.bone);
        let cond_grad = sobel(&standard_norm)?;
        Ok(Self {
            standard_norm,
            bone_norm,
            cond_grad,
        })
    }
}

/// Stack condition and bone gradient patches into the discriminator's
/// 4-channel input (cond gx, cond gy, bone gx, bone gy).
pub fn pack_patch_input<F: Scalar>(
    cond: &GradientField<F>,
    bone: &GradientField<F>,
    cx: usize,
    cy: usize,
    size: usize,
) -> Result<Tensor<F>> {
    let planes = [
        extract_patch(&cond.gx, cx, cy, size)?,
        extract_patch(&cond.gy, cx, cy, size)?,
        extract_patch(&bone.gx, cx, cy, size)?,
        extract_patch(&bone.gy, cx, cy, size)?,
    ];
    let mut data = Vec::with_capacity(4 * size * size);
    for p in &planes {
        data.extend_from_slice(p.pixels());
    }
    Ok(Tensor {
        channels: 4,
        height: size,
        width: size,
        data,
    })
}

/// Draw `count` patch centers that keep a `size` patch inside `w` x `h`.
fn sample_patch_centers(
    rng: &mut ChaCha8Rng,
    w: usize,
    h: usize,
    size: usize,
    count: usize,
) -> Result<Vec<(usize, usize)>> {
    if size > w || size > h {
        return Err(VdeError::InvalidArgument(format!(
            "patch size {size} exceeds image {w}x{h}"
        )));
    }
    let half = size / 2;
    Ok((0..count)
        .map(|_| {
            let cx = rng.gen_range(half..=w - size + half);
            let cy = rng.gen_range(half..=h - size + half);
            (cx, cy)
        })
        .collect())
}

fn check_finite(value: f64, epoch: usize, step: usize, what: &str) -> Result<()> {
    if !value.is_finite() {
        return Err(VdeError::TrainingDiverged {
            epoch,
            step,
            detail: format!("{what} is {value}"),
        });
    }
    Ok(())
}

/// Per-image products of the generator loss computation.
struct GenImageResult<F: Scalar> {
    grads: GeneratorGrads<F>,
    adv: f64,
    l1: f64,
    scale_l1: f64,
}

/// Batch-mean generator loss components.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLoss {
    pub adv: f64,
    pub l1: f64,
    pub scale_l1: f64,
}

impl GeneratorLoss {
    /// The logged total: `adv + lambda * l1 + scale terms`.
    pub fn total(&self, lambda: f64) -> f64 {
        self.adv + lambda * self.l1 + self.scale_l1
    }
}

/// Compute the generator objective and its parameter gradients on a batch at
/// fixed patch locations (one location list per image), without updating any
/// weights. This is the exact quantity `generator_step` descends, exposed so
/// the gradients can be checked against finite differences.
pub fn generator_loss_and_grads<F: Scalar>(
    gen: &Generator<F>,
    disc: &Discriminator<F>,
    batch: &[PreparedSample<F>],
    config: &TrainingConfig,
    centers: &[Vec<(usize, usize)>],
) -> Result<(GeneratorLoss, GeneratorGrads<F>)> {
    let inv_b = 1.0 / batch.len() as f64;
    let results: Vec<Result<GenImageResult<F>>> = batch
        .par_iter()
        .zip(centers.par_iter())
        .map(|(sample, locs)| generator_image_pass(gen, disc, sample, locs, config, inv_b))
        .collect();
    let mut grads = gen.grads_zeros();
    let mut loss = GeneratorLoss {
        adv: 0.0,
        l1: 0.0,
        scale_l1: 0.0,
    };
    for r in results {
        let r = r?;
        grads.add_assign(&r.grads);
        loss.adv += r.adv * inv_b;
        loss.l1 += r.l1 * inv_b;
        loss.scale_l1 += r.scale_l1 * inv_b;
    }
    Ok((loss, grads))
}

/// One generator update on a mini-batch: backpropagates
/// `L_G = mean(-ln D(fake)) + lambda * mean L1 + scale terms` into the
/// generator only. The discriminator is read, never written.
pub fn generator_step<F: Scalar>(
    gen: &mut Generator<F>,
    disc: &Discriminator<F>,
    batch: &[PreparedSample<F>],
    config: &TrainingConfig,
    adam: &mut Adam<F>,
    rng: &mut ChaCha8Rng,
    epoch: usize,
    step: usize,
) -> Result<LossRecord> {
    let patch = disc.spec.patch_size;
    let centers: Vec<Vec<(usize, usize)>> = batch
        .iter()
        .map(|s| {
            sample_patch_centers(
                rng,
                s.standard_norm.width(),
                s.standard_norm.height(),
                patch,
                config.patch_count_per_image,
            )
        })
        .collect::<Result<_>>()?;

    let (loss, grads) = generator_loss_and_grads(gen, disc, batch, config, &centers)?;
    let total = loss.total(config.lambda);
    check_finite(total, epoch, step, "generator loss")?;

    adam.step(gen.arrays_mut(), grads.arrays(), config.learning_rate);
    Ok(LossRecord {
        epoch,
        step,
        kind: StepKind::G,
        l_d: 0.0,
        l_g_adv: loss.adv,
        l_g_l1: loss.l1,
        l_g_total: total,
    })
}

fn generator_image_pass<F: Scalar>(
    gen: &Generator<F>,
    disc: &Discriminator<F>,
    sample: &PreparedSample<F>,
    locs: &[(usize, usize)],
    config: &TrainingConfig,
    inv_b: f64,
) -> Result<GenImageResult<F>> {
    let x = Tensor::from_image(&sample.standard_norm);
    let cache = gen.forward_full(&x)?;
    let out_img = cache.output.channel_to_image(0)?;
    let n_pix = out_img.pixels().len();

    // L1 term and its gradient
    let l1 = l1_loss(&out_img, &sample.bone_norm)?.to_f64_c();
    let l1_scale = F::from_f64_c(config.lambda * inv_b / n_pix as f64);
    let mut d_out = Tensor::zeros(1, out_img.height(), out_img.width());
    for (i, (&o, &t)) in out_img
        .pixels()
        .iter()
        .zip(sample.bone_norm.pixels())
        .enumerate()
    {
        let sign = if o > t {
            F::one()
        } else if o < t {
            -F::one()
        } else {
            F::zero()
        };
        d_out.data[i] = sign * l1_scale;
    }

    // adversarial term through the discriminator and the Sobel stage
    let mut adv = 0.0f64;
    let mut scratch = disc.grads_zeros();
    if !locs.is_empty() {
        let fake_grad = sobel(&out_img)?;
        let mut d_gx = Image::constant(out_img.width(), out_img.height(), F::zero())?;
        let mut d_gy = d_gx.clone();
        let mut dgx_px = d_gx.pixels().to_vec();
        let mut dgy_px = d_gy.pixels().to_vec();
        let inv_p = 1.0 / locs.len() as f64;
        for &(cx, cy) in locs {
            let input = pack_patch_input(&sample.cond_grad, &fake_grad, cx, cy, disc.spec.patch_size)?;
            let dcache = disc.forward_full(&input)?;
            let (cf, active) = clamp_prob(dcache.prob.to_f64_c());
            adv += -cf.ln() * inv_p;
            if active {
                let d_prob = F::from_f64_c(-1.0 / cf * inv_p * inv_b);
                let d_patch = disc.backward(&dcache, d_prob, &mut scratch);
                scatter_patch(&mut dgx_px, out_img.width(), d_patch.channel(2), cx, cy, disc.spec.patch_size);
                scatter_patch(&mut dgy_px, out_img.width(), d_patch.channel(3), cx, cy, disc.spec.patch_size);
            }
        }
        d_gx = Image::from_pixels(out_img.width(), out_img.height(), dgx_px)?;
        d_gy = Image::from_pixels(out_img.width(), out_img.height(), dgy_px)?;
        let d_from_sobel = sobel_adjoint(&d_gx, &d_gy)?;
        for (dst, &g) in d_out.data.iter_mut().zip(d_from_sobel.pixels()) {
            *dst += g;
        }
    }

    // optional per-scale supervision on the native-resolution outputs
    let mut scale_l1_total = 0.0f64;
    let mut d_scales: Vec<Option<Tensor<F>>> = vec![None; cache.scale_outputs.len()];
    for (s, &w) in config.scale_supervision_weights.iter().enumerate() {
        if w == 0.0 || s >= cache.scale_outputs.len() {
            continue;
        }
        let so = cache.scale_outputs[s].channel_to_image(0)?;
        let target = downsample_area(&sample.bone_norm, 1 << s)?;
        let sl1 = l1_loss(&so, &target)?.to_f64_c();
        scale_l1_total += w * sl1;
        let scale = F::from_f64_c(w * inv_b / so.pixels().len() as f64);
        let mut d = Tensor::zeros(1, so.height(), so.width());
        for (i, (&o, &t)) in so.pixels().iter().zip(target.pixels()).enumerate() {
            let sign = if o > t {
                F::one()
            } else if o < t {
                -F::one()
            } else {
                F::zero()
            };
            d.data[i] = sign * scale;
        }
        d_scales[s] = Some(d);
    }

    let mut grads = gen.grads_zeros();
    gen.backward(&cache, &d_out, &d_scales, &mut grads);
    Ok(GenImageResult {
        grads,
        adv,
        l1,
        scale_l1: scale_l1_total,
    })
}

fn scatter_patch<F: Scalar>(
    full: &mut [F],
    full_w: usize,
    patch: &[F],
    cx: usize,
    cy: usize,
    size: usize,
) {
    let half = size / 2;
    let (x0, y0) = (cx - half, cy - half);
    for py in 0..size {
        let row = (y0 + py) * full_w + x0;
        for px in 0..size {
            full[row + px] += patch[py * size + px];
        }
    }
}

/// One discriminator update on a mini-batch: real and generated bone
/// gradient patches at matched locations, conditioned on the standard-image
/// gradients. The generator is read, never written.
pub fn discriminator_step<F: Scalar>(
    gen: &Generator<F>,
    disc: &mut Discriminator<F>,
    batch: &[PreparedSample<F>],
    config: &TrainingConfig,
    adam: &mut Adam<F>,
    rng: &mut ChaCha8Rng,
    epoch: usize,
    step: usize,
) -> Result<LossRecord> {
    let patch = disc.spec.patch_size;
    let n_patches = config.patch_count_per_image;
    let b = batch.len();
    let centers: Vec<Vec<(usize, usize)>> = batch
        .iter()
        .map(|s| {
            sample_patch_centers(
                rng,
                s.standard_norm.width(),
                s.standard_norm.height(),
                patch,
                n_patches,
            )
        })
        .collect::<Result<_>>()?;

    let inv_b = 1.0 / b as f64;
    struct DiscImageResult<F: Scalar> {
        grads: DiscriminatorGrads<F>,
        l_d: f64,
    }
    let disc_ref: &Discriminator<F> = disc;
    let results: Vec<Result<DiscImageResult<F>>> = batch
        .par_iter()
        .zip(centers.par_iter())
        .map(|(sample, locs)| -> Result<DiscImageResult<F>> {
            let x = Tensor::from_image(&sample.standard_norm);
            let fake_img = gen.forward_full(&x)?.output.channel_to_image(0)?;
            let fake_grad = sobel(&fake_img)?;
            let real_grad = sobel(&sample.bone_norm)?;
            let inv_p = 1.0 / locs.len().max(1) as f64;
            let mut grads = disc_ref.grads_zeros();
            let mut l_d = 0.0f64;
            for &(cx, cy) in locs {
                let real_in = pack_patch_input(&sample.cond_grad, &real_grad, cx, cy, patch)?;
                let fake_in = pack_patch_input(&sample.cond_grad, &fake_grad, cx, cy, patch)?;
                let rcache = disc_ref.forward_full(&real_in)?;
                let fcache = disc_ref.forward_full(&fake_in)?;
                let (cr, r_active) = clamp_prob(rcache.prob.to_f64_c());
                let (cf, f_active) = clamp_prob(fcache.prob.to_f64_c());
                l_d += (-cr.ln() - (1.0 - cf).ln()) * inv_p;
                if r_active {
                    let d_prob = F::from_f64_c(-1.0 / cr * inv_p * inv_b);
                    disc_ref.backward(&rcache, d_prob, &mut grads);
                }
                if f_active {
                    let d_prob = F::from_f64_c(1.0 / (1.0 - cf) * inv_p * inv_b);
                    disc_ref.backward(&fcache, d_prob, &mut grads);
                }
            }
            Ok(DiscImageResult { grads, l_d })
        })
        .collect();

    let mut grads = disc.grads_zeros();
    let mut l_d = 0.0f64;
    for r in results {
        let r = r?;
        grads.add_assign(&r.grads);
        l_d += r.l_d * inv_b;
    }
    check_finite(l_d, epoch, step, "discriminator loss")?;

    adam.step(disc.arrays_mut(), grads.arrays(), config.learning_rate);
    Ok(LossRecord {
        epoch,
        step,
        kind: StepKind::D,
        l_d,
        l_g_adv: 0.0,
        l_g_l1: 0.0,
        l_g_total: 0.0,
    })
}

/// Run one epoch over the given mini-batches with the alternating schedule:
/// `n_d` discriminator steps then `n_g` generator steps per cycle, each step
/// consuming one fresh batch, the tail cycle truncated.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<F: Scalar>(
    gen: &mut Generator<F>,
    disc: &mut Discriminator<F>,
    batches: &[Vec<PreparedSample<F>>],
    config: &TrainingConfig,
    adam_g: &mut Adam<F>,
    adam_d: &mut Adam<F>,
    epoch: usize,
    step_counter: &mut usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LossRecord>> {
    if batches.is_empty() {
        return Err(VdeError::InvalidArgument("empty dataset".into()));
    }
    let mut records = Vec::new();
    let mut i = 0usize;
    let n = batches.len();
    while i < n {
        for _ in 0..config.n_d {
            if i >= n {
                break;
            }
            *step_counter += 1;
            records.push(discriminator_step(
                gen,
                disc,
                &batches[i],
                config,
                adam_d,
                rng,
                epoch,
                *step_counter,
            )?);
            i += 1;
        }
        for _ in 0..config.n_g {
            if i >= n {
                break;
            }
            *step_counter += 1;
            records.push(generator_step(
                gen,
                disc,
                &batches[i],
                config,
                adam_g,
                rng,
                epoch,
                *step_counter,
            )?);
            i += 1;
        }
    }
    Ok(records)
}

const GEN_SEED_TAG: u64 = 0x6765_6e65;
const DISC_SEED_TAG: u64 = 0x6469_7363;

/// Weight-initialization seed derived from the config seed, for the
/// generator (`true`) or discriminator (`false`). Exposed so an `epochs=0`
/// run can reproduce the initialization checkpoint exactly.
pub fn init_seed(config_seed: u64, generator: bool) -> u64 {
    if generator {
        mix_seed(config_seed, GEN_SEED_TAG, 0)
    } else {
        mix_seed(config_seed, DISC_SEED_TAG, 0)
    }
}

fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9e3779b97f4a7c15) ^ b.wrapping_mul(0xd2b74407b1ce6e93);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mean validation L1 (no augmentation) of the generator on a sample set.
pub fn validation_l1<F: Scalar>(gen: &Generator<F>, samples: &[DESample<F>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(VdeError::InvalidArgument("empty validation set".into()));
    }
    let losses: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| -> Result<f64> {
            let x = normalize(&s.standard);
            let t = normalize(&s.bone);
            let out = gen.forward_image(&x)?;
            Ok(l1_loss(&out.bone_norm, &t)?.to_f64_c())
        })
        .collect();
    let mut acc = 0.0;
    for l in losses {
        acc += l?;
    }
    Ok(acc / samples.len() as f64)
}

/// Products of a full training run.
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub loss_log_path: PathBuf,
    pub val_log_path: PathBuf,
    /// Mean validation L1 per epoch; index 0 is the untrained network.
    pub val_l1: Vec<f64>,
    pub records: Vec<LossRecord>,
}

pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| VdeError::io(format!("creating {}", path.display()), e))?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| VdeError::io(format!("writing {}", path.display()), e);
    writeln!(out, "epoch,step,kind,l_d,l_g_adv,l_g_l1,l_g_total").map_err(io_err)?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, r.step, r.kind, r.l_d, r.l_g_adv, r.l_g_l1, r.l_g_total
        )
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Train on a manifest's train split, validating on its test split.
///
/// Each epoch draws a fresh paired augmentation per sample, shuffles the
/// train order, and runs the alternating schedule. Checkpoints land in
/// `out_dir` (`checkpoint_epoch_K.ckpt` every `checkpoint_every` epochs,
/// `checkpoint_final.ckpt` at the end) together with `loss_log.csv` and
/// `val_log.csv`. Fully deterministic for a fixed config.
pub fn train<F: Scalar>(
    gen_spec: &GeneratorSpec,
    disc_spec: &DiscriminatorSpec,
    config: &TrainingConfig,
    entries: &[ManifestEntry],
    out_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| VdeError::io(format!("creating {}", out_dir.display()), e))?;

    let train_entries: Vec<&ManifestEntry> =
        entries.iter().filter(|e| e.split == Split::Train).collect();
    let val_entries: Vec<&ManifestEntry> =
        entries.iter().filter(|e| e.split == Split::Test).collect();
    if train_entries.is_empty() {
        return Err(VdeError::InvalidArgument(
            "manifest has no train split".into(),
        ));
    }

    let train_samples: Vec<DESample<F>> = train_entries
        .par_iter()
        .map(|e| load_sample::<F>(e))
        .collect::<Result<_>>()?;
    let val_samples: Vec<DESample<F>> = val_entries
        .par_iter()
        .map(|e| load_sample::<F>(e))
        .collect::<Result<_>>()?;

    let mut gen = build_generator::<F>(gen_spec, init_seed(config.seed, true))?;
    let mut disc = build_discriminator::<F>(disc_spec, init_seed(config.seed, false))?;
    let mut adam_g = Adam::new(&gen.named_arrays().iter().map(|(_, a)| *a).collect::<Vec<_>>());
    let mut adam_d = Adam::new(&disc.named_arrays().iter().map(|(_, a)| *a).collect::<Vec<_>>());

    let mut val_l1 = Vec::with_capacity(config.epochs + 1);
    if !val_samples.is_empty() {
        val_l1.push(validation_l1(&gen, &val_samples)?);
    }

    let mut records = Vec::new();
    let mut step_counter = 0usize;
    for epoch in 1..=config.epochs {
        // fresh paired augmentations (aug_multiplicity draws per sample)
        // and a fresh order each epoch
        let n_copies = train_samples.len() * config.aug_multiplicity;
        let mut order: Vec<usize> = (0..n_copies).collect();
        let mut order_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1, epoch as u64));
        for i in (1..order.len()).rev() {
            let j = order_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let prepared: Vec<PreparedSample<F>> = order
            .par_iter()
            .map(|&copy| -> Result<PreparedSample<F>> {
                let idx = copy % train_samples.len();
                let aug = augment(
                    &train_samples[idx],
                    mix_seed(config.seed, epoch as u64, copy as u64),
                    config.tx_range,
                    config.rot_range,
                )?;
                PreparedSample::from_raw(&aug)
            })
            .collect::<Result<_>>()?;
        let batches: Vec<Vec<PreparedSample<F>>> = {
            let mut batches = Vec::new();
            let mut it = prepared.into_iter().peekable();
            while it.peek().is_some() {
                batches.push(it.by_ref().take(config.batch_size).collect());
            }
            batches
        };

        let mut step_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 2, epoch as u64));
        let epoch_records = train_epoch(
            &mut gen,
            &mut disc,
            &batches,
            config,
            &mut adam_g,
            &mut adam_d,
            epoch,
            &mut step_counter,
            &mut step_rng,
        )?;
        records.extend(epoch_records);

        if !val_samples.is_empty() {
            val_l1.push(validation_l1(&gen, &val_samples)?);
        }
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && epoch != config.epochs
        {
            save_checkpoint(
                &out_dir.join(format!("checkpoint_epoch_{epoch}.ckpt")),
                &gen,
                &disc,
            )?;
        }
    }

    let checkpoint_path = out_dir.join("checkpoint_final.ckpt");
    save_checkpoint(&checkpoint_path, &gen, &disc)?;
    let loss_log_path = out_dir.join("loss_log.csv");
    write_loss_log(&loss_log_path, &records)?;
    let val_log_path = out_dir.join("val_log.csv");
    {
        let file = std::fs::File::create(&val_log_path)
            .map_err(|e| VdeError::io(format!("creating {}", val_log_path.display()), e))?;
        let mut out = std::io::BufWriter::new(file);
        let io_err = |e: std::io::Error| VdeError::io(format!("writing {}", val_log_path.display()), e);
        writeln!(out, "epoch,val_l1").map_err(io_err)?;
        for (epoch, v) in val_l1.iter().enumerate() {
            writeln!(out, "{epoch},{v}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)?;
    }

    Ok(TrainOutcome {
        checkpoint_path,
        loss_log_path,
        val_log_path,
        val_l1,
        records,
    })
}

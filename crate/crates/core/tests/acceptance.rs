//! Acceptance suite: one test per release criterion, each printing a
//! `[PASS]` line with the measured values. Tolerances are pinned in the
//! assertions. The two training criteria share a single smoke run through
//! `smoke_runs()`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use vde_core::froc::{
    bootstrap_ci, classify_marks, froc_curve, percentile, sensitivity_at_fp, FrocCase, Mark,
};
use vde_core::image::filter::{gaussian_kernel_1d, sobel};
use vde_core::image::{denormalize, extract_patch, normalize, DESample, Image};
use vde_core::metrics::{psnr, rmae, ssim};
use vde_core::model::checkpoint::{checkpoint_to_bytes, load_checkpoint};
use vde_core::model::{
    build_discriminator, build_generator, DiscriminatorSpec, GeneratorSpec, NormKind,
};
use vde_core::phantom::{generate_dataset, generate_sample, LesionRecord, PhantomSpec, Split};
use vde_core::suppress::{
    cross_projection_tensor, default_threshold, poisson_reintegrate, suppress_bone,
    transform_gradients, PoissonOptions, SHADOW_FLOOR,
};
use vde_core::training::{
    self, adversarial_losses, discriminator_step, generator_loss_and_grads, generator_step,
    init_seed, l1_loss, train_epoch, Adam, PreparedSample, StepKind, TrainOutcome, TrainingConfig,
};

fn phantom(seed: u64, size: usize, noise: f64) -> DESample<f64> {
    let spec = PhantomSpec {
        size,
        noise_sigma: noise,
        seed,
        ..PhantomSpec::default()
    };
    generate_sample::<f64>(&spec, &format!("acc_{seed}")).unwrap().0
}

fn rand_image(n: usize, seed: u64, lo: f64, hi: f64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_pixels(n, n, (0..n * n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

// ---------------------------------------------------------------------------
// criterion 1: normalization round trip
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_normalization_round_trip() {
    let t0 = std::time::Instant::now();
    let mut max_rel = 0.0f64;
    for seed in 0..100u64 {
        let sample = phantom(seed, 64, 0.02);
        let img = sample.standard;
        let norm = normalize(&img);
        // endpoints map to exactly -1 and +1
        let (lo, hi) = img.pixel_extremes();
        let arg_lo = img.pixels().iter().position(|&v| v == lo).unwrap();
        let arg_hi = img.pixels().iter().position(|&v| v == hi).unwrap();
        assert_eq!(norm.pixels()[arg_lo], -1.0, "seed {seed}: min must map to -1");
        assert_eq!(norm.pixels()[arg_hi], 1.0, "seed {seed}: max must map to +1");

        let (back, clamped) = denormalize(&norm, norm.intensity_min(), norm.intensity_max()).unwrap();
        assert_eq!(clamped, 0);
        let range = hi - lo;
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            max_rel = max_rel.max((a - b).abs() / range);
        }
    }
    assert!(max_rel < 1e-6, "round-trip error {max_rel:e}");
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 5.0, "criterion 1 took {dt:.1}s (budget 5s)");
    println!("[PASS] criterion 1: normalization round trip (max relative error {max_rel:.2e}, {dt:.2}s)");
}

// ---------------------------------------------------------------------------
// criterion 2: filter oracles
// ---------------------------------------------------------------------------

/// Dense 3x3 Sobel sweep with border replication, written independently of
/// the library implementation.
fn sobel_dense_oracle(img: &Image<f64>) -> (Vec<f64>, Vec<f64>) {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let (w, h) = (img.width(), img.height());
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut ax = 0.0;
            let mut ay = 0.0;
            for ky in 0..3 {
                for kx in 0..3 {
                    let sy = clamp(y as isize + ky as isize - 1, h);
                    let sx = clamp(x as isize + kx as isize - 1, w);
                    let v = img.get(sx, sy);
                    ax += KX[ky][kx] * v;
                    ay += KX[kx][ky] * v;
                }
            }
            gx[y * w + x] = ax;
            gy[y * w + x] = ay;
        }
    }
    (gx, gy)
}

#[test]
fn criterion_02_filter_oracles() {
    let t0 = std::time::Instant::now();
    for seed in 0..20u64 {
        let img = rand_image(16, 1000 + seed, -50.0, 50.0);
        let g = sobel(&img).unwrap();
        let (ox, oy) = sobel_dense_oracle(&img);
        assert_eq!(g.gx.pixels(), &ox[..], "seed {seed}: gx differs from dense oracle");
        assert_eq!(g.gy.pixels(), &oy[..], "seed {seed}: gy differs from dense oracle");
    }

    // Gaussian kernel normalization at the clinical-scale parameters
    for (k, sigma) in [(201usize, 50.0f64), (13, 3.16), (11, 1.5)] {
        let taps: Vec<f64> = gaussian_kernel_1d(k, sigma).unwrap();
        let mut sum2d = 0.0;
        for a in &taps {
            for b in &taps {
                sum2d += a * b;
            }
        }
        assert!((sum2d - 1.0).abs() < 1e-12, "kernel {k}/{sigma} sums to {sum2d}");
    }

    // impulse response equals the kernel
    let k = 7usize;
    let sigma = 1.4;
    let mut px = vec![0.0f64; 21 * 21];
    px[10 * 21 + 10] = 1.0;
    let impulse = Image::from_pixels(21, 21, px).unwrap();
    let blurred = vde_core::image::filter::gaussian_blur(&impulse, k, sigma).unwrap();
    let taps: Vec<f64> = gaussian_kernel_1d(k, sigma).unwrap();
    for dy in 0..k {
        for dx in 0..k {
            let got = blurred.get(10 - k / 2 + dx, 10 - k / 2 + dy);
            let expect = taps[dy] * taps[dx];
            assert!((got - expect).abs() < 1e-15, "impulse tap ({dx},{dy})");
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "criterion 2 took {dt:.1}s (budget 10s)");
    println!("[PASS] criterion 2: filter oracles (Sobel exact on 20 images, kernel sum exact to 1e-12, {dt:.2}s)");
}

// ---------------------------------------------------------------------------
// shared smoke training (criteria 3 and 6)
// ---------------------------------------------------------------------------

struct SmokeRuns {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    run_a: TrainOutcome,
    run_b: TrainOutcome,
}

fn smoke_gen_spec() -> GeneratorSpec {
    GeneratorSpec {
        n_scales: 3,
        base_channels: 16,
        depth: 4,
        norm: NormKind::Instance,
        ..GeneratorSpec::default()
    }
}

fn smoke_disc_spec() -> DiscriminatorSpec {
    DiscriminatorSpec {
        patch_size: 64,
        n_layers: 3,
        base_channels: 16,
        norm: NormKind::Instance,
        ..DiscriminatorSpec::default()
    }
}

/// Reference training settings (lambda 1000, N_G 3, N_D 1, batch 3,
/// learning rate 1e-4) with augmentation scaled to the phantom size.
fn smoke_training_config() -> TrainingConfig {
    TrainingConfig {
        lambda: 1000.0,
        n_g: 3,
        n_d: 1,
        batch_size: 3,
        learning_rate: 1e-4,
        epochs: 5,
        patch_count_per_image: 4,
        scale_supervision_weights: vec![],
        tx_range: 3.0,
        rot_range: 15.0,
        aug_multiplicity: 4,
        seed: 1,
        checkpoint_every: 0,
    }
}

fn smoke_runs() -> &'static SmokeRuns {
    static RUNS: OnceLock<SmokeRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let spec = PhantomSpec {
            size: 64,
            ..PhantomSpec::default()
        };
        let entries = generate_dataset(32, 42, &spec, 0.8, &data).unwrap();
        let cfg = smoke_training_config();
        let run_a = training::train::<f32>(
            &smoke_gen_spec(),
            &smoke_disc_spec(),
            &cfg,
            &entries,
            &dir.path().join("run_a"),
        )
        .unwrap();
        let run_b = training::train::<f32>(
            &smoke_gen_spec(),
            &smoke_disc_spec(),
            &cfg,
            &entries,
            &dir.path().join("run_b"),
        )
        .unwrap();
        SmokeRuns { dir, run_a, run_b }
    })
}

// ---------------------------------------------------------------------------
// criterion 3: loss identities
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_loss_identities() {
    let img = rand_image(8, 77, -1.0, 1.0);
    assert_eq!(l1_loss(&img, &img).unwrap(), 0.0);

    let (l_d, l_g) = adversarial_losses(0.5, 0.5);
    assert!((l_d - 2.0 * std::f64::consts::LN_2).abs() < 1e-9);
    assert!((l_g - std::f64::consts::LN_2).abs() < 1e-9);

    // every logged generator step of the smoke run decomposes exactly
    let runs = smoke_runs();
    let text = std::fs::read_to_string(&runs.run_a.loss_log_path).unwrap();
    let mut checked = 0usize;
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let (l_d, adv, l1, total): (f64, f64, f64, f64) = (
            cols[3].parse().unwrap(),
            cols[4].parse().unwrap(),
            cols[5].parse().unwrap(),
            cols[6].parse().unwrap(),
        );
        assert!(l_d.is_finite() && total.is_finite());
        assert_eq!(total, adv + 1000.0 * l1, "row: {line}");
        checked += 1;
    }
    assert!(checked > 0);
    println!("[PASS] criterion 3: loss identities (l_d(0.5,0.5) = 2 ln 2, total decomposition exact on {checked} steps)");
}

// ---------------------------------------------------------------------------
// criterion 4: finite-difference gradient check
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_gradient_check() {
    let t0 = std::time::Instant::now();
    let gen_spec = GeneratorSpec {
        n_scales: 2,
        base_channels: 2,
        depth: 2,
        ..GeneratorSpec::default()
    };
    let disc_spec = DiscriminatorSpec {
        patch_size: 8,
        n_layers: 2,
        base_channels: 4,
        ..DiscriminatorSpec::default()
    };
    let mut gen = build_generator::<f64>(&gen_spec, 5).unwrap();
    let disc = build_discriminator::<f64>(&disc_spec, 6).unwrap();
    let cfg = TrainingConfig {
        batch_size: 1,
        patch_count_per_image: 2,
        ..TrainingConfig::default()
    };

    // One 16x16 sample cropped from a phantom. The bone target is
    // binarized so its normalized values sit exactly at -1/+1: the h = 1e-3
    // probes then never cross an |out - target| kink of the L1 term (the
    // untrained tanh output stays strictly inside (-1, 1)), keeping central
    // differences valid at every sampled coordinate.
    let sample = {
        let s = phantom(9, 64, 0.0);
        let crop = |img: &Image<f64>| extract_patch(img, 24, 24, 16).unwrap();
        let bone = crop(&s.bone)
            .map(|v| if v > 0.05 { 1.0 } else { 0.0 })
            .unwrap();
        let pair = DESample::new("g", crop(&s.standard), bone, None).unwrap();
        PreparedSample::from_raw(&pair).unwrap()
    };
    let batch = vec![sample];
    let centers = vec![vec![(5usize, 6usize), (10, 9)]];

    let (_, grads) = generator_loss_and_grads(&gen, &disc, &batch, &cfg, &centers).unwrap();
    let flat_grads: Vec<f64> = grads.arrays().iter().flat_map(|a| a.iter().copied()).collect();
    let n_params: usize = gen.named_arrays().iter().map(|(_, a)| a.len()).sum();
    assert_eq!(flat_grads.len(), n_params);

    let loss_at = |gen: &vde_core::model::Generator<f64>| -> f64 {
        let (loss, _) = generator_loss_and_grads(gen, &disc, &batch, &cfg, &centers).unwrap();
        loss.total(cfg.lambda)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let h = 1e-3;
    let mut ok = 0usize;
    let mut worst: f64 = 0.0;
    const SAMPLES: usize = 200;
    for _ in 0..SAMPLES {
        let idx = rng.gen_range(0..n_params);
        // locate the array owning flat index idx
        let (mut arr_i, mut off) = (0usize, idx);
        loop {
            let len = gen.arrays_mut()[arr_i].len();
            if off < len {
                break;
            }
            off -= len;
            arr_i += 1;
        }
        let orig = gen.arrays_mut()[arr_i][off];
        gen.arrays_mut()[arr_i][off] = orig + h;
        let up = loss_at(&gen);
        gen.arrays_mut()[arr_i][off] = orig - h;
        let down = loss_at(&gen);
        gen.arrays_mut()[arr_i][off] = orig;
        let fd = (up - down) / (2.0 * h);
        let analytic = flat_grads[idx];
        let denom = analytic.abs().max(fd.abs());
        let rel = if denom > 0.0 { (analytic - fd).abs() / denom } else { 0.0 };
        let pass = rel < 1e-3 || (analytic - fd).abs() < 1e-7;
        if pass {
            ok += 1;
        } else {
            worst = worst.max(rel);
        }
    }
    let frac = ok as f64 / SAMPLES as f64;
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 120.0, "criterion 4 took {dt:.1}s (budget 120s)");
    assert!(
        frac >= 0.99,
        "only {ok}/{SAMPLES} gradient coordinates within tolerance (worst rel {worst:e})"
    );
    println!("[PASS] criterion 4: gradient check ({ok}/{SAMPLES} coordinates within 1e-3, {dt:.1}s)");
}

// ---------------------------------------------------------------------------
// criterion 5: alternating schedule and isolation
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_schedule_and_isolation() {
    let gen_spec = GeneratorSpec {
        n_scales: 2,
        base_channels: 2,
        depth: 2,
        ..GeneratorSpec::default()
    };
    let disc_spec = DiscriminatorSpec {
        patch_size: 8,
        n_layers: 2,
        base_channels: 4,
        ..DiscriminatorSpec::default()
    };
    let cfg = TrainingConfig {
        n_d: 1,
        n_g: 3,
        batch_size: 1,
        patch_count_per_image: 2,
        ..TrainingConfig::default()
    };
    let tiny = |seed: u64| -> PreparedSample<f64> {
        let s = phantom(seed, 64, 0.0);
        let crop = |img: &Image<f64>| extract_patch(img, 24, 24, 16).unwrap();
        let pair = DESample::new("s", crop(&s.standard), crop(&s.bone), None).unwrap();
        PreparedSample::from_raw(&pair).unwrap()
    };

    // (a) recorded sequence from train_epoch with n = 8
    let mut gen = build_generator::<f64>(&gen_spec, 21).unwrap();
    let mut disc = build_discriminator::<f64>(&disc_spec, 22).unwrap();
    let batches: Vec<Vec<PreparedSample<f64>>> = (0..8).map(|i| vec![tiny(100 + i)]).collect();
    let mut adam_g = Adam::new(&gen.named_arrays().iter().map(|(_, a)| *a).collect::<Vec<_>>());
    let mut adam_d = Adam::new(&disc.named_arrays().iter().map(|(_, a)| *a).collect::<Vec<_>>());
    let mut step = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let records = train_epoch(
        &mut gen, &mut disc, &batches, &cfg, &mut adam_g, &mut adam_d, 1, &mut step, &mut rng,
    )
    .unwrap();
    let kinds: Vec<StepKind> = records.iter().map(|r| r.kind).collect();
    use StepKind::{D, G};
    assert_eq!(kinds, vec![D, G, G, G, D, G, G, G]);

    // (b) bitwise isolation per step, driving the same schedule manually
    let bits = |arrays: &[(String, &Vec<f64>)]| -> Vec<u64> {
        arrays.iter().flat_map(|(_, a)| a.iter().map(|v| v.to_bits())).collect()
    };
    let mut gen = build_generator::<f64>(&gen_spec, 24).unwrap();
    let mut disc = build_discriminator::<f64>(&disc_spec, 25).unwrap();
    let mut adam_g = Adam::new(&gen.named_arrays().iter().map(|(_, a)| *a).collect::<Vec<_>>());
    let mut adam_d = Adam::new(&disc.named_arrays().iter().map(|(_, a)| *a).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for (i, kind) in [D, G, G, G, D, G, G, G].into_iter().enumerate() {
        let batch = vec![tiny(200 + i as u64)];
        match kind {
            D => {
                let g_before = bits(&gen.named_arrays());
                discriminator_step(&gen, &mut disc, &batch, &cfg, &mut adam_d, &mut rng, 1, i + 1)
                    .unwrap();
                assert_eq!(bits(&gen.named_arrays()), g_before, "D step {i} touched G");
            }
            G => {
                let d_before = bits(&disc.named_arrays());
                generator_step(&mut gen, &disc, &batch, &cfg, &mut adam_g, &mut rng, 1, i + 1)
                    .unwrap();
                assert_eq!(bits(&disc.named_arrays()), d_before, "G step {i} touched D");
            }
        }
    }
    println!("[PASS] criterion 5: schedule D,G,G,G,D,G,G,G with bitwise step isolation");
}

// ---------------------------------------------------------------------------
// criterion 6: smoke training
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_smoke_training() {
    let t0 = std::time::Instant::now();
    let runs = smoke_runs();
    let val = &runs.run_a.val_l1;
    assert!(val.len() >= 2, "validation log too short");
    let ratio = val[5] / val[0];
    assert!(
        ratio <= 0.5,
        "validation L1 at epoch 5 is {:.4} of epoch 0 ({} -> {})",
        ratio,
        val[0],
        val[5]
    );

    let log_a = std::fs::read(&runs.run_a.loss_log_path).unwrap();
    let log_b = std::fs::read(&runs.run_b.loss_log_path).unwrap();
    assert_eq!(log_a, log_b, "loss logs differ between identical runs");
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "[PASS] criterion 6: smoke training (val L1 {:.4} -> {:.4}, ratio {:.2}; deterministic logs; {dt:.0}s incl. shared setup)",
        val[0], val[5], ratio
    );
}

// ---------------------------------------------------------------------------
// criterion 7: phantom learning quality
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_phantom_learning_quality() {
    let t0 = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spec = PhantomSpec {
        size: 128,
        ..PhantomSpec::default()
    };
    // 220 phantoms split 200 train / 20 held out
    let entries = generate_dataset(220, 77, &spec, 200.0 / 220.0, &data).unwrap();
    let n_test = entries.iter().filter(|e| e.split == Split::Test).count();
    assert_eq!(n_test, 20);

    let gen_spec = GeneratorSpec {
        n_scales: 3,
        base_channels: 12,
        depth: 4,
        norm: NormKind::Instance,
        ..GeneratorSpec::default()
    };
    let disc_spec = DiscriminatorSpec {
        patch_size: 64,
        n_layers: 3,
        base_channels: 12,
        norm: NormKind::Instance,
        ..DiscriminatorSpec::default()
    };
    let cfg = TrainingConfig {
        epochs: 50,
        tx_range: 5.0,
        rot_range: 15.0,
        seed: 7,
        checkpoint_every: 0,
        ..TrainingConfig::default()
    };

    let outcome =
        training::train::<f32>(&gen_spec, &disc_spec, &cfg, &entries, dir.path()).unwrap();
    let (trained, _) = load_checkpoint::<f64>(&outcome.checkpoint_path).unwrap();
    let untrained = build_generator::<f64>(&gen_spec, init_seed(cfg.seed, true)).unwrap();

    let evaluate = |gen: &vde_core::model::Generator<f64>| -> (f64, f64) {
        let mut psnrs = Vec::new();
        let mut ssims = Vec::new();
        for entry in entries.iter().filter(|e| e.split == Split::Test) {
            let sample = vde_core::phantom::load_sample::<f64>(entry).unwrap();
            let norm = normalize(&sample.standard);
            let out = gen.forward_image(&norm).unwrap();
            let (lo, hi) = sample.bone.pixel_extremes();
            let (bone_raw, _) = denormalize(&out.bone_norm, lo, hi).unwrap();
            let range = hi - lo;
            psnrs.push(psnr(&bone_raw, &sample.bone, Some(range)).unwrap().db);
            ssims.push(ssim(&bone_raw, &sample.bone, Some(range)).unwrap());
        }
        (
            psnrs.iter().sum::<f64>() / psnrs.len() as f64,
            100.0 * ssims.iter().sum::<f64>() / ssims.len() as f64,
        )
    };
    let (psnr_untrained, ssim_untrained) = evaluate(&untrained);
    let (psnr_trained, ssim_trained) = evaluate(&trained);
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 7200.0, "criterion 7 took {dt:.0}s (budget 2h)");
    assert!(
        psnr_trained - psnr_untrained >= 10.0,
        "PSNR gain {:.2} dB < 10 dB (untrained {psnr_untrained:.2}, trained {psnr_trained:.2})",
        psnr_trained - psnr_untrained
    );
    assert!(
        ssim_trained >= 85.0,
        "trained SSIMx100 {ssim_trained:.1} < 85"
    );
    println!(
        "[PASS] criterion 7: phantom learning (bone PSNR {psnr_untrained:.2} -> {psnr_trained:.2} dB, SSIMx100 {ssim_untrained:.1} -> {ssim_trained:.1}, {dt:.0}s)"
    );
}

// ---------------------------------------------------------------------------
// criterion 8: suppression correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_suppression_correctness() {
    let t0 = std::time::Instant::now();
    let opts = PoissonOptions {
        tolerance: 1e-6,
        spectral_floor: SHADOW_FLOOR,
    };

    // (a) zero-bone passthrough
    let sample = phantom(3, 128, 0.0);
    let zero_bone = Image::constant(128, 128, 0.0f64).unwrap();
    let thr = default_threshold(&zero_bone).unwrap();
    let pass = suppress_bone(&sample.standard, &zero_bone, thr, &opts).unwrap();
    let range = sample.standard.intensity_max() - sample.standard.intensity_min();
    let pass_err = sample
        .standard
        .pixels()
        .iter()
        .zip(pass.soft.pixels())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(
        pass_err < 1e-4 * range,
        "zero-bone passthrough error {pass_err:e} vs range {range}"
    );

    // (b) self-projection annihilates above-threshold gradients
    let std_img = &sample.standard;
    let g = sobel(std_img).unwrap();
    let thr = default_threshold(std_img).unwrap();
    let tensors = cross_projection_tensor(&g, thr).unwrap();
    let edited = transform_gradients(&g, &tensors).unwrap();
    for i in 0..edited.gx.pixels().len() {
        let mag_in = (g.gx.pixels()[i].powi(2) + g.gy.pixels()[i].powi(2)).sqrt();
        if mag_in > thr {
            let mag_out = (edited.gx.pixels()[i].powi(2) + edited.gy.pixels()[i].powi(2)).sqrt();
            assert!(mag_out < 1e-6, "residual gradient {mag_out:e} at pixel {i}");
        }
    }

    // (c) reintegration recovers a known image from its own gradient field
    let smooth = {
        let n = 64;
        Image::from_pixels(
            n,
            n,
            (0..n * n)
                .map(|i| {
                    let (x, y) = ((i % n) as f64, (i / n) as f64);
                    (x / 17.0).sin() * (y / 11.0).cos() + 0.3 * (x / 5.0 + y / 7.0).sin()
                })
                .collect::<Vec<_>>(),
        )
        .unwrap()
    };
    let field = sobel(&smooth).unwrap();
    let rec = poisson_reintegrate(&field, smooth.mean(), &PoissonOptions::default()).unwrap();
    let (lo, hi) = smooth.pixel_extremes();
    let rec_err = smooth
        .pixels()
        .iter()
        .zip(rec.image.pixels())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(
        rec_err < 1e-3 * (hi - lo),
        "reintegration error {rec_err:e} vs range {}",
        hi - lo
    );

    // (d) PSNR gain of suppression with ground-truth bone on 20 phantoms
    let mut gains = Vec::new();
    for seed in 0..20u64 {
        let s = phantom(seed, 128, 0.0);
        let soft_gt = s.soft.as_ref().unwrap();
        let (lo, hi) = soft_gt.pixel_extremes();
        let r = hi - lo;
        let thr = default_threshold(&s.bone).unwrap();
        let sup = suppress_bone(&s.standard, &s.bone, thr, &opts).unwrap();
        let before = psnr(&s.standard, soft_gt, Some(r)).unwrap().db;
        let after = psnr(&sup.soft, soft_gt, Some(r)).unwrap().db;
        gains.push(after - before);
    }
    let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 300.0, "criterion 8 took {dt:.1}s (budget 5min)");
    assert!(mean_gain >= 6.0, "mean suppression gain {mean_gain:.2} dB < 6 dB");
    println!(
        "[PASS] criterion 8: suppression (passthrough {pass_err:.1e}, recovery {rec_err:.1e}, mean gain {mean_gain:+.2} dB, {dt:.1}s)"
    );
}

// ---------------------------------------------------------------------------
// criterion 9: metric oracles
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_metric_oracles() {
    let taps: Vec<f64> = gaussian_kernel_1d(11, 1.5).unwrap();
    let ssim_oracle = |a: &Image<f64>, b: &Image<f64>, range: f64| -> f64 {
        let c1 = (0.01 * range) * (0.01 * range);
        let c2 = (0.03 * range) * (0.03 * range);
        let mut total = 0.0;
        let mut count = 0usize;
        for wy in 0..=a.height() - 11 {
            for wx in 0..=a.width() - 11 {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wgt = taps[dy] * taps[dx];
                        let va = a.get(wx + dx, wy + dy);
                        let vb = b.get(wx + dx, wy + dy);
                        mx += wgt * va;
                        my += wgt * vb;
                        mxx += wgt * va * va;
                        myy += wgt * vb * vb;
                        mxy += wgt * va * vb;
                    }
                }
                let (vx, vy, cov) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total / count as f64
    };

    for seed in 0..20u64 {
        let a = rand_image(16, 3000 + seed, 0.0, 10.0);
        let b = rand_image(16, 4000 + seed, 0.0, 10.0);
        let range = 10.0;

        // PSNR vs double loop
        let mut mse = 0.0;
        for y in 0..16 {
            for x in 0..16 {
                mse += (a.get(x, y) - b.get(x, y)).powi(2);
            }
        }
        mse /= 256.0;
        let psnr_oracle = 10.0 * (range * range / mse).log10();
        assert!((psnr(&a, &b, Some(range)).unwrap().db - psnr_oracle).abs() < 1e-6);

        // SSIM vs sliding-window oracle
        assert!((ssim(&a, &b, Some(range)).unwrap() - ssim_oracle(&a, &b, range)).abs() < 1e-6);

        // RMAE vs double loop
        let (mut num, mut den) = (0.0, 0.0);
        for y in 0..16 {
            for x in 0..16 {
                num += (a.get(x, y) - b.get(x, y)).abs();
                den += b.get(x, y).abs();
            }
        }
        assert!((rmae(&a, &b).unwrap() - 100.0 * num / den).abs() < 1e-6);
    }

    // PSNR monotone under increasing noise
    let base = rand_image(16, 5000, 0.0, 1.0);
    let noise = rand_image(16, 5001, -1.0, 1.0);
    let mut last = f64::INFINITY;
    for level in 1..=5 {
        let sigma = 0.01 * level as f64;
        let noisy = Image::from_pixels(
            16,
            16,
            base.pixels()
                .iter()
                .zip(noise.pixels())
                .map(|(&p, &n)| p + sigma * n)
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let db = psnr(&noisy, &base, Some(1.0)).unwrap().db;
        assert!(db < last, "PSNR not monotone at level {level}");
        last = db;
    }

    // self similarity
    assert_eq!(ssim(&base, &base, Some(1.0)).unwrap(), 1.0);
    println!("[PASS] criterion 9: metric oracles (20 pairs within 1e-6, PSNR monotone, SSIM self = 1)");
}

// ---------------------------------------------------------------------------
// criterion 10: FROC oracles
// ---------------------------------------------------------------------------

fn lesion(id: &str, x: f64, y: f64) -> LesionRecord {
    LesionRecord {
        image_id: id.into(),
        x,
        y,
        radius: 5.0,
    }
}

fn mark(id: &str, x: f64, y: f64, score: f64) -> Mark {
    Mark {
        image_id: id.into(),
        x,
        y,
        score,
    }
}

/// Threshold-by-threshold recount, fully independent of the curve builder.
fn curve_recount_oracle(cases: &[FrocCase], radius: f64) -> Vec<(f64, f64)> {
    let mut scores: Vec<f64> = cases
        .iter()
        .flat_map(|c| c.marks.iter().map(|m| m.score))
        .collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    scores.dedup();
    let total: usize = cases.iter().map(|c| c.lesions.len()).sum();
    scores
        .iter()
        .map(|&t| {
            let mut tp = 0;
            let mut fp = 0;
            for case in cases {
                let kept = FrocCase {
                    image_id: case.image_id.clone(),
                    lesions: case.lesions.clone(),
                    marks: case.marks.iter().filter(|m| m.score >= t).cloned().collect(),
                };
                let c = classify_marks(&kept, radius).unwrap();
                tp += c.lesion_localizations.len();
                fp += c.non_lesion_localizations.len();
            }
            (fp as f64 / cases.len() as f64, tp as f64 / total as f64)
        })
        .collect()
}

#[test]
fn criterion_10_froc_oracles() {
    let t0 = std::time::Instant::now();
    // handcrafted 3-case fixture
    let fixture = vec![
        FrocCase {
            image_id: "a".into(),
            lesions: vec![lesion("a", 10.0, 10.0), lesion("a", 40.0, 12.0)],
            marks: vec![
                mark("a", 11.0, 10.0, 0.9),
                mark("a", 8.0, 10.0, 0.6),
                mark("a", 41.0, 11.0, 0.4),
                mark("a", 25.0, 25.0, 0.7),
            ],
        },
        FrocCase {
            image_id: "b".into(),
            lesions: vec![lesion("b", 20.0, 20.0)],
            marks: vec![mark("b", 50.0, 50.0, 0.8), mark("b", 21.0, 20.0, 0.5)],
        },
        FrocCase {
            image_id: "c".into(),
            lesions: vec![],
            marks: vec![mark("c", 5.0, 5.0, 0.3)],
        },
    ];
    let curve = froc_curve(&fixture, 5.0).unwrap();
    assert_eq!(curve.points, curve_recount_oracle(&fixture, 5.0));

    // perfect detector
    let perfect = vec![
        FrocCase {
            image_id: "p1".into(),
            lesions: vec![lesion("p1", 10.0, 10.0)],
            marks: vec![mark("p1", 10.0, 10.0, 1.0)],
        },
        FrocCase {
            image_id: "p2".into(),
            lesions: vec![lesion("p2", 30.0, 30.0)],
            marks: vec![mark("p2", 30.0, 30.0, 1.0)],
        },
    ];
    let pcurve = froc_curve(&perfect, 5.0).unwrap();
    assert_eq!(sensitivity_at_fp(&pcurve, 0.0), 1.0);
    assert_eq!(sensitivity_at_fp(&pcurve, 1.0), 1.0);

    // degenerate CI with identical cases
    let case = fixture[0].clone();
    let same = vec![case.clone(), case.clone(), case];
    let ci = bootstrap_ci(&same, 5.0, &[1.0], 500, 3).unwrap();
    assert_eq!(ci.levels[0].lo95, ci.levels[0].mean);
    assert_eq!(ci.levels[0].mean, ci.levels[0].hi95);

    // exhaustive-resample oracle on a 5-case toy set
    let toy = vec![
        FrocCase {
            image_id: "t0".into(),
            lesions: vec![lesion("t0", 10.0, 10.0)],
            marks: vec![mark("t0", 10.0, 10.0, 0.9)],
        },
        FrocCase {
            image_id: "t1".into(),
            lesions: vec![lesion("t1", 10.0, 10.0)],
            marks: vec![mark("t1", 40.0, 40.0, 0.8)],
        },
        FrocCase {
            image_id: "t2".into(),
            lesions: vec![lesion("t2", 10.0, 10.0), lesion("t2", 40.0, 10.0)],
            marks: vec![mark("t2", 10.0, 11.0, 0.7), mark("t2", 25.0, 30.0, 0.55)],
        },
        FrocCase {
            image_id: "t3".into(),
            lesions: vec![],
            marks: vec![mark("t3", 15.0, 15.0, 0.6)],
        },
        FrocCase {
            image_id: "t4".into(),
            lesions: vec![lesion("t4", 20.0, 20.0)],
            marks: vec![mark("t4", 21.0, 20.0, 0.5), mark("t4", 50.0, 20.0, 0.95)],
        },
    ];
    let fp_levels = [1.0, 2.0];
    let mut sens: Vec<Vec<f64>> = vec![Vec::new(); fp_levels.len()];
    let n = toy.len();
    for code in 0..n.pow(5) {
        let mut c = code;
        let resample: Vec<FrocCase> = (0..5)
            .map(|_| {
                let pick = toy[c % n].clone();
                c /= n;
                pick
            })
            .collect();
        if resample.iter().all(|r| r.lesions.is_empty()) {
            continue; // mirrored by the bootstrap's skip rule
        }
        let curve = froc_curve(&resample, 5.0).unwrap();
        for (li, &fp) in fp_levels.iter().enumerate() {
            sens[li].push(sensitivity_at_fp(&curve, fp));
        }
    }
    let report = bootstrap_ci(&toy, 5.0, &fp_levels, 50_000, 11).unwrap();
    for (li, level) in report.levels.iter().enumerate() {
        let mut vals = sens[li].clone();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let lo = percentile(&vals, 0.025);
        let hi = percentile(&vals, 0.975);
        assert!(
            (level.mean - mean).abs() <= 0.02,
            "fp {}: mean {} vs exhaustive {}",
            level.fp,
            level.mean,
            mean
        );
        assert!((level.lo95 - lo).abs() <= 0.02, "fp {}: lo {} vs {}", level.fp, level.lo95, lo);
        assert!((level.hi95 - hi).abs() <= 0.02, "fp {}: hi {} vs {}", level.fp, level.hi95, hi);
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 60.0, "criterion 10 took {dt:.1}s (budget 1min)");
    println!("[PASS] criterion 10: FROC oracles (fixture exact, degenerate CI, exhaustive CI within 0.02, {dt:.1}s)");
}

// ---------------------------------------------------------------------------
// supporting check: epochs = 0 leaves the initialization untouched
// ---------------------------------------------------------------------------

#[test]
fn training_zero_epochs_checkpoint_equals_init() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spec = PhantomSpec {
        size: 64,
        ..PhantomSpec::default()
    };
    let entries = generate_dataset(4, 5, &spec, 0.75, &data).unwrap();
    let gen_spec = smoke_gen_spec();
    let disc_spec = smoke_disc_spec();
    let cfg = TrainingConfig {
        epochs: 0,
        ..smoke_training_config()
    };
    let outcome = training::train::<f32>(&gen_spec, &disc_spec, &cfg, &entries, dir.path()).unwrap();
    let written = std::fs::read(&outcome.checkpoint_path).unwrap();
    let init_gen = build_generator::<f32>(&gen_spec, init_seed(cfg.seed, true)).unwrap();
    let init_disc = build_discriminator::<f32>(&disc_spec, init_seed(cfg.seed, false)).unwrap();
    let expected = checkpoint_to_bytes(&init_gen, &init_disc).unwrap();
    assert_eq!(written, expected);
}

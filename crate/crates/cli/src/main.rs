//! `vde` — virtual dual-energy radiography pipeline.
//!
//! Subcommands: `phantom-gen` (synthetic dataset), `train` (adversarial
//! training), `infer` (standard image -> virtual bone image), `suppress`
//! (standard + bone -> virtual soft tissue), `eval` (PSNR/SSIM/RMAE over a
//! manifest's test split), `froc` (lesion-localization curves and bootstrap
//! confidence intervals).
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use vde_core::image::{denormalize, io as imgio, normalize, Image};
use vde_core::metrics;
use vde_core::model::checkpoint::{load_checkpoint, save_checkpoint};
use vde_core::model::{build_discriminator, build_generator};
use vde_core::phantom;
use vde_core::suppress;
use vde_core::training;
use vde_core::froc;

#[derive(Parser)]
#[command(name = "vde", version, about = "virtual dual-energy radiography pipeline")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master random seed for the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dual-energy phantom dataset plus manifest.
    PhantomGen(PhantomGenArgs),
    /// Train the bone-image generator on a manifest's train split.
    Train(TrainArgs),
    /// Produce virtual bone images from standard images.
    Infer(InferArgs),
    /// Suppress bone in a standard image given a bone image.
    Suppress(SuppressArgs),
    /// Compute PSNR/SSIM/RMAE over a manifest's test split.
    Eval(EvalArgs),
    /// FROC analysis of lesion-localization marks.
    Froc(FrocArgs),
}

#[derive(Args)]
struct PhantomGenArgs {
    /// Number of phantoms (>= 1).
    #[arg(long)]
    n: Option<usize>,
    /// Square image side in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Fraction of cases assigned to the train split.
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest; generated on the fly under --out for profiles.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Preset run: "smoke" (32 phantoms at 64x64, 5 epochs) or
    /// "phantom128" (200 phantoms at 128x128, 50 epochs).
    #[arg(long)]
    profile: Option<String>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A .png/.pfm image, or a directory of them.
    #[arg(long)]
    input: PathBuf,
    /// Raw calibration bounds applied to the output bone image.
    #[arg(long)]
    bone_min: Option<f64>,
    #[arg(long)]
    bone_max: Option<f64>,
}

#[derive(Args)]
struct SuppressArgs {
    #[arg(long)]
    standard: PathBuf,
    #[arg(long)]
    bone: PathBuf,
    /// Bone edge threshold; derived from the bone image when omitted.
    #[arg(long)]
    threshold: Option<f64>,
    /// Dump low, delta, tensor planes and the solver residual here.
    #[arg(long)]
    debug_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct FrocArgs {
    /// Lesion ground truth CSV (image_id,x,y,radius).
    #[arg(long)]
    lesions: PathBuf,
    /// Marks CSV (image_id,x,y,score) for the primary curve.
    #[arg(long)]
    marks: PathBuf,
    /// Optional second marks CSV overlaid for comparison.
    #[arg(long)]
    marks2: Option<PathBuf>,
    #[arg(long, default_value = "virtual-de")]
    label: String,
    #[arg(long, default_value = "standard")]
    label2: String,
    /// Acceptance radius in pixels.
    #[arg(long)]
    radius: Option<f64>,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<vde_core::VdeError> for CliError {
    fn from(e: vde_core::VdeError) -> Self {
        match e {
            vde_core::VdeError::InvalidArgument(_) | vde_core::VdeError::InvalidSpec(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("VDE_NUM_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run() -> Result<ExitCode, CliError> {
    let cli = Cli::parse();
    init_thread_pool();
    let mut cfg = RunConfig::load(cli.config.as_deref()).map_err(CliError::Usage)?;
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", cli.out.display())))?;

    match &cli.command {
        Command::PhantomGen(args) => cmd_phantom_gen(&cli, &mut cfg, args),
        Command::Train(args) => cmd_train(&cli, &mut cfg, args),
        Command::Infer(args) => cmd_infer(&cli, &cfg, args),
        Command::Suppress(args) => cmd_suppress(&cli, &cfg, args),
        Command::Eval(args) => cmd_eval(&cli, &cfg, args),
        Command::Froc(args) => cmd_froc(&cli, &cfg, args),
    }
}

fn cmd_phantom_gen(
    cli: &Cli,
    cfg: &mut RunConfig,
    args: &PhantomGenArgs,
) -> Result<ExitCode, CliError> {
    if let Some(n) = args.n {
        cfg.dataset.n = n;
    }
    if let Some(size) = args.size {
        cfg.phantom.size = size;
    }
    if let Some(f) = args.train_fraction {
        cfg.dataset.train_fraction = f;
    }
    if let Some(seed) = cli.seed {
        cfg.dataset.base_seed = seed;
    }
    if cfg.dataset.n == 0 {
        return Err(CliError::Usage("--n must be >= 1".into()));
    }
    if !(cfg.dataset.train_fraction >= 0.0 && cfg.dataset.train_fraction <= 1.0) {
        return Err(CliError::Usage("--train-fraction must lie in [0, 1]".into()));
    }
    let entries = phantom::generate_dataset(
        cfg.dataset.n,
        cfg.dataset.base_seed,
        &cfg.phantom,
        cfg.dataset.train_fraction,
        &cli.out,
    )?;
    let n_train = entries
        .iter()
        .filter(|e| e.split == phantom::Split::Train)
        .count();
    println!(
        "wrote {} phantoms ({} train / {} test) to {}",
        entries.len(),
        n_train,
        entries.len() - n_train,
        cli.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(cli: &Cli, cfg: &mut RunConfig, args: &TrainArgs) -> Result<ExitCode, CliError> {
    match args.profile.as_deref() {
        Some("smoke") => cfg.apply_smoke_profile(),
        Some("phantom128") => cfg.apply_phantom128_profile(),
        Some(other) => {
            return Err(CliError::Usage(format!(
                "unknown profile '{other}' (expected 'smoke' or 'phantom128')"
            )))
        }
        None => {}
    }
    if let Some(epochs) = args.epochs {
        cfg.training.epochs = epochs;
    }
    if let Some(seed) = cli.seed {
        cfg.training.seed = seed;
        cfg.dataset.base_seed = seed;
    }

    let entries = match &args.manifest {
        Some(path) => phantom::read_manifest(path)?,
        None => {
            if args.profile.is_none() {
                return Err(CliError::Usage(
                    "either --manifest or --profile is required".into(),
                ));
            }
            let data_dir = cli.out.join("phantoms");
            phantom::generate_dataset(
                cfg.dataset.n,
                cfg.dataset.base_seed,
                &cfg.phantom,
                cfg.dataset.train_fraction,
                &data_dir,
            )?
        }
    };

    let t = &cfg.training;
    println!(
        "training config: lambda={} n_g={} n_d={} batch_size={} learning_rate={} epochs={} \
         patches_per_image={} tx_range={} rot_range={} seed={}",
        t.lambda,
        t.n_g,
        t.n_d,
        t.batch_size,
        t.learning_rate,
        t.epochs,
        t.patch_count_per_image,
        t.tx_range,
        t.rot_range,
        t.seed
    );
    if cli.verbose {
        println!(
            "generator: depth={} base_channels={} n_scales={}; discriminator: patch={} layers={} base_channels={}",
            cfg.generator.depth,
            cfg.generator.base_channels,
            cfg.generator.n_scales,
            cfg.discriminator.patch_size,
            cfg.discriminator.n_layers,
            cfg.discriminator.base_channels
        );
    }

    if cfg.training.epochs == 0 {
        // no-op run: the checkpoint is the seeded initialization
        let gen = build_generator::<f32>(&cfg.generator, training_init_seed(cfg, true))?;
        let disc = build_discriminator::<f32>(&cfg.discriminator, training_init_seed(cfg, false))?;
        let path = cli.out.join("checkpoint_final.ckpt");
        save_checkpoint(&path, &gen, &disc)?;
        println!("epochs=0: wrote initialization checkpoint {}", path.display());
        return Ok(ExitCode::SUCCESS);
    }

    let outcome = training::train::<f32>(
        &cfg.generator,
        &cfg.discriminator,
        &cfg.training,
        &entries,
        &cli.out,
    )?;
    if let (Some(first), Some(last)) = (outcome.val_l1.first(), outcome.val_l1.last()) {
        println!("validation L1: epoch 0 = {first:.6}, final = {last:.6}");
    }
    println!(
        "checkpoint: {}\nloss log: {}",
        outcome.checkpoint_path.display(),
        outcome.loss_log_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Seeds used by `train` for the initial weights; epochs=0 must match them.
fn training_init_seed(cfg: &RunConfig, generator: bool) -> u64 {
    training::init_seed(cfg.training.seed, generator)
}

fn list_inputs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", input.display())))?
            .filter_map(|r| r.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png") | Some("pfm")
                )
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::Usage(format!(
                "no .png/.pfm images in {}",
                input.display()
            )));
        }
        Ok(files)
    } else if input.exists() {
        Ok(vec![input.to_path_buf()])
    } else {
        Err(CliError::Usage(format!("{} does not exist", input.display())))
    }
}

fn cmd_infer(cli: &Cli, cfg: &RunConfig, args: &InferArgs) -> Result<ExitCode, CliError> {
    let (gen, _disc) = load_checkpoint::<f32>(&args.checkpoint)?;
    let inputs = list_inputs(&args.input)?;
    for path in &inputs {
        let raw = imgio::read_image::<f32>(path)?;
        let norm = normalize(&raw);
        let out = gen.forward_image(&norm)?;
        let lo = args
            .bone_min
            .or(cfg.infer.calibration_min)
            .unwrap_or(raw.intensity_min() as f64) as f32;
        let hi = args
            .bone_max
            .or(cfg.infer.calibration_max)
            .unwrap_or(raw.intensity_max() as f64) as f32;
        let (bone, _clamped) = denormalize(&out.bone_norm, lo, hi)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image");
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("pfm");
        let out_path = cli.out.join(format!("{stem}_bone.{ext}"));
        imgio::write_image(&out_path, &bone, &format!("{stem}_bone"))?;
        if cli.verbose {
            println!("{} -> {}", path.display(), out_path.display());
        }
    }
    println!("inferred {} image(s) into {}", inputs.len(), cli.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_suppress(cli: &Cli, cfg: &RunConfig, args: &SuppressArgs) -> Result<ExitCode, CliError> {
    let standard = imgio::read_image::<f64>(&args.standard)?;
    let bone = imgio::read_image::<f64>(&args.bone)?;
    let threshold = match args.threshold.or(cfg.suppress.threshold) {
        Some(t) => {
            if !(t > 0.0) {
                return Err(CliError::Usage("--threshold must be positive".into()));
            }
            t
        }
        None => suppress::default_threshold(&bone)?,
    };
    let opts = suppress::PoissonOptions {
        tolerance: cfg.suppress.solver_tolerance,
        spectral_floor: cfg.suppress.spectral_floor,
    };
    let result = suppress::suppress_bone(&standard, &bone, threshold, &opts)?;

    let stem = args
        .standard
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let soft_path = cli.out.join(format!("{stem}_soft.pfm"));
    imgio::write_image(&soft_path, &result.soft, &format!("{stem}_soft"))?;
    let preview_path = cli.out.join(format!("{stem}_soft.png"));
    imgio::write_png16(&preview_path, &result.soft)?;

    if let Some(dir) = &args.debug_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        imgio::write_pfm(&dir.join("low.pfm"), &result.low)?;
        imgio::write_pfm(&dir.join("delta.pfm"), &result.delta)?;
        let (w, h) = (result.tensors.width, result.tensors.height);
        for (name, plane) in [
            ("d11", &result.tensors.d11),
            ("d12", &result.tensors.d12),
            ("d22", &result.tensors.d22),
        ] {
            let img = Image::from_pixels(w, h, plane.clone())?;
            imgio::write_pfm(&dir.join(format!("{name}.pfm")), &img)?;
        }
        imgio::write_pfm(&dir.join("reintegrated.pfm"), &result.reintegrated.image)?;
        let residual = Image::constant(w, h, result.reintegrated.field_residual_rms)?;
        imgio::write_pfm(&dir.join("residual.pfm"), &residual)?;
    }

    println!(
        "suppressed {} -> {} (threshold {:.3e}, normal residual {:.3e}, field residual rms {:.3e})",
        args.standard.display(),
        soft_path.display(),
        threshold,
        result.reintegrated.normal_residual_rel,
        result.reintegrated.field_residual_rms
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(cli: &Cli, cfg: &RunConfig, args: &EvalArgs) -> Result<ExitCode, CliError> {
    let entries = phantom::read_manifest(&args.manifest)?;
    let (gen, _disc) = load_checkpoint::<f64>(&args.checkpoint)?;
    let opts = suppress::PoissonOptions {
        tolerance: cfg.suppress.solver_tolerance,
        spectral_floor: cfg.suppress.spectral_floor,
    };
    let threshold = cfg.suppress.threshold;
    let outcome = metrics::evaluate_pairs::<f64, _>(&entries, |sample| {
        let norm = normalize(&sample.standard);
        let out = gen.forward_image(&norm)?;
        // ground-truth bone bounds applied to the normalized virtual image
        let (lo, hi) = sample.bone.pixel_extremes();
        let (bone_raw, _) = denormalize(&out.bone_norm, lo, hi)?;
        let thr = match threshold {
            Some(t) => t,
            None => suppress::default_threshold(&bone_raw)?,
        };
        let soft = suppress::suppress_bone(&sample.standard, &bone_raw, thr, &opts)?.soft;
        Ok((bone_raw, soft))
    });
    let csv_path = cli.out.join("metrics.csv");
    metrics::write_eval_csv(&csv_path, &outcome)?;
    println!("evaluated {} case(s) -> {}", outcome.cases.len(), csv_path.display());
    if !outcome.missing.is_empty() {
        eprintln!("failed cases: {}", outcome.missing.join(", "));
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_froc(cli: &Cli, cfg: &RunConfig, args: &FrocArgs) -> Result<ExitCode, CliError> {
    let radius = args.radius.unwrap_or(cfg.froc.radius);
    if !(radius > 0.0) {
        return Err(CliError::Usage("--radius must be positive".into()));
    }
    let seed = cli.seed.unwrap_or(cfg.froc.bootstrap_seed);
    let lesions = phantom::read_lesions_csv(&args.lesions)?;

    let mut curves: Vec<(String, froc::FrocCurve)> = Vec::new();
    for (label, path) in std::iter::once((args.label.clone(), args.marks.clone())).chain(
        args.marks2
            .iter()
            .map(|p| (args.label2.clone(), p.clone())),
    ) {
        let marks = froc::read_marks_csv(&path)?;
        let cases = froc::assemble_cases(&lesions, &marks);
        let curve = froc::froc_curve(&cases, radius)?;
        froc::write_curve_csv(&cli.out.join(format!("froc_{label}.csv")), &curve)?;
        let report = froc::bootstrap_ci(&cases, radius, &cfg.froc.fp_levels, cfg.froc.n_boot, seed)?;
        froc::write_bootstrap_csv(&cli.out.join(format!("bootstrap_{label}.csv")), &report)?;
        for l in &report.levels {
            println!(
                "{label}: sensitivity at {} FP/image = {:.3} ({:.3}-{:.3})",
                l.fp, l.mean, l.lo95, l.hi95
            );
        }
        curves.push((label, curve));
    }
    let refs: Vec<(&str, &froc::FrocCurve)> =
        curves.iter().map(|(l, c)| (l.as_str(), c)).collect();
    froc::write_curve_svg(&cli.out.join("froc.svg"), &refs)?;
    println!("wrote {}", cli.out.join("froc.svg").display());
    Ok(ExitCode::SUCCESS)
}

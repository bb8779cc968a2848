//! Dev harness: PSNR gain of suppression on noise-free phantoms.
use vde_core::metrics::psnr;
use vde_core::phantom::{generate_sample, PhantomSpec};
use vde_core::suppress::{default_threshold, suppress_bone, PoissonOptions};

fn main() {
    let mut gains = Vec::new();
    let t0 = std::time::Instant::now();
    for seed in 0..20u64 {
        let spec = PhantomSpec {
            size: 128,
            noise_sigma: 0.0,
            rib_thickness: std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(3.0),
            seed,
            ..PhantomSpec::default()
        };
        let (s, _) = generate_sample::<f64>(&spec, "x").unwrap();
        let soft_gt = s.soft.as_ref().unwrap();
        let thr = default_threshold(&s.bone).unwrap();
        let opts = PoissonOptions { tolerance: 1e-6, spectral_floor: 3e-2 };
        let sup = suppress_bone(&s.standard, &s.bone, thr, &opts).unwrap();
        let range = {
            let (lo, hi) = soft_gt.pixel_extremes();
            hi - lo
        };
        let before = psnr(&s.standard, soft_gt, Some(range)).unwrap().db;
        let after = psnr(&sup.soft, soft_gt, Some(range)).unwrap().db;
        println!(
            "seed {seed}: before {before:.2} dB, after {after:.2} dB, gain {:.2} (residual {:.1e})",
            after - before,
            sup.reintegrated.normal_residual_rel
        );
        gains.push(after - before);
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    println!("mean gain: {mean:.2} dB in {:.1}s", t0.elapsed().as_secs_f64());
}

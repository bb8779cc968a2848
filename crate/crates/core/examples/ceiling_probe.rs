//! Dev harness: suppression-gain ceiling vs phantom geometry.
use vde_core::image::filter::gaussian_blur;
use vde_core::metrics::psnr;
use vde_core::phantom::{generate_sample, PhantomSpec};
use vde_core::suppress::*;

fn main() {
    for (rib_t, spine_note) in [(3.0, "floor 3e-2"), (2.5, "floor 3e-2"), (2.0, "floor 3e-2")] {
        let mut gains = Vec::new();
        let mut ceilings = Vec::new();
        for seed in 0..6u64 {
            let spec = PhantomSpec {
                size: 128,
                noise_sigma: 0.0,
                rib_thickness: rib_t,
                seed,
                ..PhantomSpec::default()
            };
            let (s, _) = generate_sample::<f64>(&spec, "x").unwrap();
            let soft_gt = s.soft.as_ref().unwrap();
            let range = {
                let (lo, hi) = soft_gt.pixel_extremes();
                hi - lo
            };
            let before = psnr(&s.standard, soft_gt, Some(range)).unwrap().db;

            // ceiling: perfect removal of delta-band bone leaves blur(bone)
            let (k, sg) = scaled_blur_params(128, 128);
            let blur_bone = gaussian_blur(&s.bone, k, sg).unwrap();
            let ideal = soft_gt.add(&blur_bone).unwrap();
            let ceiling = psnr(&ideal, soft_gt, Some(range)).unwrap().db - before;

            let thr = default_threshold(&s.bone).unwrap();
            let opts = PoissonOptions { tolerance: 1e-6, spectral_floor: 3e-2 };
            let sup = suppress_bone(&s.standard, &s.bone, thr, &opts).unwrap();
            let after = psnr(&sup.soft, soft_gt, Some(range)).unwrap().db;
            gains.push(after - before);
            ceilings.push(ceiling);
        }
        let mg = gains.iter().sum::<f64>() / gains.len() as f64;
        let mc = ceilings.iter().sum::<f64>() / ceilings.len() as f64;
        println!("rib {rib_t} ({spine_note}): mean gain {mg:+.2} dB, ceiling {mc:+.2} dB");
    }
}

//! Dev harness: sweep the spectral floor.
use vde_core::image::filter::sobel;
use vde_core::image::Image;
use vde_core::metrics::psnr;
use vde_core::phantom::{generate_sample, PhantomSpec};
use vde_core::suppress::*;

fn main() {
    for floor in [1e-2, 2e-2, 3e-2, 5e-2, 8e-2] {
        let opts = PoissonOptions { tolerance: 1e-6, spectral_floor: floor };
        let op_opts = PoissonOptions::default();
        // (1) passthrough error with zero bone
        let spec = PhantomSpec { size: 128, noise_sigma: 0.0, seed: 3, ..PhantomSpec::default() };
        let (s, _) = generate_sample::<f64>(&spec, "x").unwrap();
        let zero_bone = Image::constant(128, 128, 0.0).unwrap();
        let thr0 = default_threshold(&zero_bone).unwrap();
        let pass = suppress_bone(&s.standard, &zero_bone, thr0, &opts).unwrap();
        let range = s.standard.intensity_max() - s.standard.intensity_min();
        let pass_err = s
            .standard
            .pixels()
            .iter()
            .zip(pass.soft.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / range;

        // (2) smooth-image recovery error
        let smooth = Image::from_pixels(
            64,
            64,
            (0..64 * 64)
                .map(|i| {
                    let (x, y) = ((i % 64) as f64, (i / 64) as f64);
                    (x / 21.0).sin() * (y / 13.0).cos()
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let rec = poisson_reintegrate(&sobel(&smooth).unwrap(), smooth.mean(), &op_opts).unwrap();
        let (lo, hi) = smooth.pixel_extremes();
        let rec_err = smooth
            .pixels()
            .iter()
            .zip(rec.image.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / (hi - lo);

        // (3) mean suppression gain over 6 phantoms
        let mut gains = Vec::new();
        for seed in 0..6u64 {
            let spec = PhantomSpec { size: 128, noise_sigma: 0.0, seed, ..PhantomSpec::default() };
            let (s, _) = generate_sample::<f64>(&spec, "x").unwrap();
            let soft_gt = s.soft.as_ref().unwrap();
            let thr = default_threshold(&s.bone).unwrap();
            let sup = suppress_bone(&s.standard, &s.bone, thr, &opts).unwrap();
            let r = {
                let (lo, hi) = soft_gt.pixel_extremes();
                hi - lo
            };
            let before = psnr(&s.standard, soft_gt, Some(r)).unwrap().db;
            let after = psnr(&sup.soft, soft_gt, Some(r)).unwrap().db;
            gains.push(after - before);
        }
        let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
        println!(
            "floor {floor:.0e}: passthrough {pass_err:.2e} | recovery {rec_err:.2e} | mean gain {mean_gain:+.2} dB"
        );
    }
}

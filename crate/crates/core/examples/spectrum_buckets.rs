//! Dev harness: energy of the spectral solution, bucketed by eigenvalue sum.
use vde_core::image::filter::sobel;
use vde_core::phantom::{generate_sample, PhantomSpec};
use vde_core::suppress::*;

fn main() {
    let spec = PhantomSpec { size: 128, noise_sigma: 0.0, seed: 0, ..PhantomSpec::default() };
    let (s, _) = generate_sample::<f64>(&spec, "x").unwrap();
    let d = decompose(&s.standard).unwrap();
    let thr = default_threshold(&s.bone).unwrap();
    let bg = sobel(&s.bone).unwrap();
    let dg = sobel(&d.delta).unwrap();
    let t = cross_projection_tensor(&bg, thr).unwrap();
    let edited = transform_gradients(&dg, &t).unwrap();

    for (name, field) in [("consistent (sobel delta)", &dg), ("projected", &edited)] {
        let (lam, energy, vn2) = debug_spectral_energy(field).unwrap();
        // bucket by log10(lambda sum)
        let mut buckets = std::collections::BTreeMap::new();
        let mut sig_buckets = std::collections::BTreeMap::new();
        for i in 0..lam.len() {
            let b = if lam[i] <= 0.0 { -99 } else { lam[i].log10().floor() as i32 };
            *buckets.entry(b).or_insert(0.0f64) += energy[i];
            let s2 = if lam[i] <= 0.0 { 0.0 } else { lam[i] / vn2[i] };
            let sb = if s2 <= 0.0 { -99 } else { s2.log10().floor() as i32 };
            *sig_buckets.entry(sb).or_insert(0.0f64) += energy[i];
        }
        println!("--- {name}: spatial-energy by log10(lambda_sum) bucket");
        for (b, e) in &buckets {
            if *e > 1e-9 {
                println!("  1e{b:>3}: {e:.4}");
            }
        }
        println!("    by log10(sigma^2) bucket:");
        for (b, e) in &sig_buckets {
            if *e > 1e-9 {
                println!("  1e{b:>3}: {e:.4}");
            }
        }
    }
}

//! Dev harness: inspect suppression stages on one phantom.
use vde_core::image::filter::sobel;
use vde_core::phantom::{generate_sample, PhantomSpec};
use vde_core::suppress::*;

fn stats(name: &str, px: &[f64]) {
    let lo = px.iter().cloned().fold(f64::MAX, f64::min);
    let hi = px.iter().cloned().fold(f64::MIN, f64::max);
    let mean = px.iter().sum::<f64>() / px.len() as f64;
    let rms = (px.iter().map(|v| v * v).sum::<f64>() / px.len() as f64).sqrt();
    println!("{name:>14}: min {lo:+.4} max {hi:+.4} mean {mean:+.4} rms {rms:.4}");
}

fn main() {
    let spec = PhantomSpec { size: 128, noise_sigma: 0.0, seed: 0, ..PhantomSpec::default() };
    let (s, _) = generate_sample::<f64>(&spec, "x").unwrap();
    let soft_gt = s.soft.as_ref().unwrap();
    stats("standard", s.standard.pixels());
    stats("bone", s.bone.pixels());
    stats("soft gt", soft_gt.pixels());

    let d = decompose(&s.standard).unwrap();
    stats("low", d.low.pixels());
    stats("delta", d.delta.pixels());

    let thr = default_threshold(&s.bone).unwrap();
    println!("threshold: {thr:.6e}");
    let bg = sobel(&s.bone).unwrap();
    let dg = sobel(&d.delta).unwrap();
    let t = cross_projection_tensor(&bg, thr).unwrap();
    let edited = transform_gradients(&dg, &t).unwrap();
    stats("delta gx", dg.gx.pixels());
    stats("edited gx", edited.gx.pixels());
    let n_identity = (0..t.d11.len()).filter(|&i| t.d11[i] == 1.0 && t.d22[i] == 1.0).count();
    println!("identity tensors: {n_identity}/{}", t.d11.len());

    let r = poisson_reintegrate(&edited, d.delta.mean(), &PoissonOptions::default()).unwrap();
    stats("reintegrated", r.image.pixels());
    println!("field residual rms: {:.4e}", r.field_residual_rms);

    // reference: reintegrate the UNEDITED delta gradients (should recover delta)
    let r2 = poisson_reintegrate(&dg, d.delta.mean(), &PoissonOptions::default()).unwrap();
    stats("reint(delta)", r2.image.pixels());
    let err: f64 = r2.image.pixels().iter().zip(d.delta.pixels()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |reint(delta) - delta| = {err:.3e}");
}

//! Dev harness: where does the reintegrated energy live spectrally?
use vde_core::image::filter::{gaussian_blur, sobel};
use vde_core::image::Image;
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
    let r = poisson_reintegrate(&edited, d.delta.mean(), &PoissonOptions::default()).unwrap();

    // how smooth is the junk? compare u, blur(u), delta
    let u = &r.image;
    let blur_u = gaussian_blur(u, 13, 3.16).unwrap();
    let rms = |im: &Image<f64>| (im.pixels().iter().map(|v| v * v).sum::<f64>() / im.pixels().len() as f64).sqrt();
    println!("rms u = {:.4}, rms blur(u) = {:.4}, rms (u - blur(u)) = {:.4}",
        rms(u), rms(&blur_u), rms(&u.sub(&blur_u).unwrap()));
    println!("rms delta = {:.4}, rms blur(delta) = {:.4}", rms(&d.delta), rms(&gaussian_blur(&d.delta, 13, 3.16).unwrap()));
}

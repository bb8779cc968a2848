//! Geometric augmentation: paired random translation and rotation.

use super::{DESample, Image};
use crate::error::Result;
use crate::scalar::Scalar;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Apply a rigid transform to an image: rotate by `angle_deg`
/// (counterclockwise in image coordinates, about the geometric center) and
/// then translate by `(tx, ty)` pixels. Resampling is bilinear; samples that
/// fall outside the source are filled with the image's recorded raw minimum,
/// which reads as background/air in a radiograph.
///
/// An all-zero transform returns an exact copy (no resampling path).
pub fn warp_image<F: Scalar>(image: &Image<F>, tx: f64, ty: f64, angle_deg: f64) -> Image<F> {
    if tx == 0.0 && ty == 0.0 && angle_deg == 0.0 {
        return image.clone();
    }
    let (w, h) = (image.width(), image.height());
    let cx = (w as f64 - 1.0) * 0.5;
    let cy = (h as f64 - 1.0) * 0.5;
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let fill = image.intensity_min().to_f64_c();
    let src = image.pixels();

    let mut out = vec![F::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            // invert: undo the translation, then the rotation
            let dx = x as f64 - tx - cx;
            let dy = y as f64 - ty - cy;
            let mut sx = cos * dx + sin * dy + cx;
            let mut sy = -sin * dx + cos * dy + cy;

            // tolerate rounding right at the border (e.g. exact 180-degree
            // rotations land on w-1 plus an ulp)
            const EDGE_EPS: f64 = 1e-9;
            if sx > -EDGE_EPS && sx < 0.0 {
                sx = 0.0;
            }
            if sy > -EDGE_EPS && sy < 0.0 {
                sy = 0.0;
            }
            let (x_max, y_max) = ((w - 1) as f64, (h - 1) as f64);
            if sx > x_max && sx < x_max + EDGE_EPS {
                sx = x_max;
            }
            if sy > y_max && sy < y_max + EDGE_EPS {
                sy = y_max;
            }

            let v = if sx < 0.0 || sy < 0.0 || sx > x_max || sy > y_max {
                fill
            } else {
                let x0 = sx.floor() as usize;
                let y0 = sy.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let fx = sx - x0 as f64;
                let fy = sy - y0 as f64;
                let p00 = src[y0 * w + x0].to_f64_c();
                let p10 = src[y0 * w + x1].to_f64_c();
                let p01 = src[y1 * w + x0].to_f64_c();
                let p11 = src[y1 * w + x1].to_f64_c();
                let top = p00 + (p10 - p00) * fx;
                let bot = p01 + (p11 - p01) * fx;
                top + (bot - top) * fy
            };
            out[y * w + x] = F::from_f64_c(v);
        }
    }
    Image {
        height: h,
        width: w,
        pixels: out,
        intensity_min: image.intensity_min(),
        intensity_max: image.intensity_max(),
        constant_input: false,
    }
}

/// Draw one paired augmentation for a dual-energy sample: a single random
/// translation in `[-tx_range, tx_range]` (each axis) and rotation in
/// `[-rot_range, rot_range]` degrees, applied identically to every image in
/// the sample. Deterministic for a fixed seed.
pub fn augment<F: Scalar>(
    sample: &DESample<F>,
    rng_seed: u64,
    tx_range: f64,
    rot_range: f64,
) -> Result<DESample<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (tx, ty, rot) = if tx_range == 0.0 && rot_range == 0.0 {
        (0.0, 0.0, 0.0)
    } else {
        let tx = if tx_range > 0.0 {
            rng.gen_range(-tx_range..=tx_range)
        } else {
            0.0
        };
        let ty = if tx_range > 0.0 {
            rng.gen_range(-tx_range..=tx_range)
        } else {
            0.0
        };
        let rot = if rot_range > 0.0 {
            rng.gen_range(-rot_range..=rot_range)
        } else {
            0.0
        };
        (tx, ty, rot)
    };
    DESample::new(
        sample.id.clone(),
        warp_image(&sample.standard, tx, ty, rot),
        warp_image(&sample.bone, tx, ty, rot),
        sample.soft.as_ref().map(|s| warp_image(s, tx, ty, rot)),
    )
}

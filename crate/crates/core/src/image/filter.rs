//! Spatial filters: 3x3 Sobel derivatives and separable Gaussian blur.
//!
//! All filters replicate the border pixel when a tap falls outside the
//! image. The wide low-pass blur used by bone suppression reaches far past
//! the borders, where zero padding would fabricate a dark rim; replication
//! keeps the local mean.

use super::{ensure_same_dims, GradientField, Image};
use crate::error::{Result, VdeError};
use crate::scalar::Scalar;

/// Sobel x kernel, row-major. The y kernel is its transpose.
const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

#[inline]
fn clamp_idx(v: isize, limit: usize) -> usize {
    v.clamp(0, limit as isize - 1) as usize
}

/// Compute x/y image derivatives with the standard 3x3 Sobel kernels
/// (correlation, so a ramp increasing along +x yields positive `gx`).
///
/// Taps are accumulated in row-major kernel order; the result is bit-equal
/// to a direct dense 3x3 sweep.
pub fn sobel<F: Scalar>(image: &Image<F>) -> Result<GradientField<F>> {
    if image.height() < 3 || image.width() < 3 {
        return Err(VdeError::InvalidImage(format!(
            "sobel needs at least 3x3, got {}x{}",
            image.height(),
            image.width()
        )));
    }
    let (w, h) = (image.width(), image.height());
    let src = image.pixels();
    let mut gx = vec![F::zero(); w * h];
    let mut gy = vec![F::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut ax = F::zero();
            let mut ay = F::zero();
            for ky in 0..3 {
                let sy = clamp_idx(y as isize + ky as isize - 1, h);
                for kx in 0..3 {
                    let sx = clamp_idx(x as isize + kx as isize - 1, w);
                    let v = src[sy * w + sx];
                    ax = ax + F::from_f64_c(SOBEL_X[ky][kx]) * v;
                    // y kernel is the transpose of the x kernel
                    ay = ay + F::from_f64_c(SOBEL_X[kx][ky]) * v;
                }
            }
            gx[y * w + x] = ax;
            gy[y * w + x] = ay;
        }
    }
    GradientField::new(
        Image::from_pixels(w, h, gx)?,
        Image::from_pixels(w, h, gy)?,
    )
}

/// Adjoint of [`sobel`] as a linear operator (including the border
/// replication): scatters `d_gx`/`d_gy` back through the taps. This is what
/// backpropagation through the Sobel stage and the normal equations of the
/// reintegration solver need.
pub fn sobel_adjoint<F: Scalar>(d_gx: &Image<F>, d_gy: &Image<F>) -> Result<Image<F>> {
    ensure_same_dims(d_gx, d_gy, "sobel_adjoint gx/gy")?;
    let (w, h) = (d_gx.width(), d_gx.height());
    let gx = d_gx.pixels();
    let gy = d_gy.pixels();
    let mut out = vec![F::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let vx = gx[y * w + x];
            let vy = gy[y * w + x];
            for ky in 0..3 {
                let sy = clamp_idx(y as isize + ky as isize - 1, h);
                for kx in 0..3 {
                    let sx = clamp_idx(x as isize + kx as isize - 1, w);
                    out[sy * w + sx] +=
                        F::from_f64_c(SOBEL_X[ky][kx]) * vx + F::from_f64_c(SOBEL_X[kx][ky]) * vy;
                }
            }
        }
    }
    Image::from_pixels(w, h, out)
}

/// 1D Gaussian taps of odd length, normalized to sum 1.
pub fn gaussian_kernel_1d<F: Scalar>(kernel_size: usize, sigma: f64) -> Result<Vec<F>> {
    if kernel_size % 2 == 0 || kernel_size == 0 {
        return Err(VdeError::InvalidArgument(format!(
            "gaussian kernel size must be odd, got {kernel_size}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(VdeError::InvalidArgument(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let half = (kernel_size / 2) as isize;
    let mut taps = Vec::with_capacity(kernel_size);
    let mut sum = 0.0f64;
    for i in -half..=half {
        let t = (-0.5 * (i as f64 / sigma).powi(2)).exp();
        taps.push(t);
        sum += t;
    }
    Ok(taps.into_iter().map(|t| F::from_f64_c(t / sum)).collect())
}

/// Separable Gaussian blur with border replication.
///
/// Errors when the kernel is degenerate for the image (larger than four
/// times the smaller image dimension).
pub fn gaussian_blur<F: Scalar>(image: &Image<F>, kernel_size: usize, sigma: f64) -> Result<Image<F>> {
    let min_dim = image.width().min(image.height());
    if kernel_size > 4 * min_dim {
        return Err(VdeError::InvalidArgument(format!(
            "gaussian kernel size {kernel_size} exceeds 4x image dimension {min_dim}"
        )));
    }
    let taps = gaussian_kernel_1d::<F>(kernel_size, sigma)?;
    let (w, h) = (image.width(), image.height());
    let half = (kernel_size / 2) as isize;
    let src = image.pixels();

    // horizontal pass
    let mut tmp = vec![F::zero(); w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = F::zero();
            for (i, &t) in taps.iter().enumerate() {
                let sx = clamp_idx(x as isize + i as isize - half, w);
                acc = acc + t * row[sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    // vertical pass
    let mut out = vec![F::zero(); w * h];
    for x in 0..w {
        for y in 0..h {
            let mut acc = F::zero();
            for (i, &t) in taps.iter().enumerate() {
                let sy = clamp_idx(y as isize + i as isize - half, h);
                acc = acc + t * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    Ok(Image::from_pixels(w, h, out)?
        .with_bounds(image.intensity_min(), image.intensity_max()))
}

/// Area (box-average) downsampling by an integer factor that divides both
/// dimensions. Used to build coarse-scale supervision targets.
pub fn downsample_area<F: Scalar>(image: &Image<F>, factor: usize) -> Result<Image<F>> {
    if factor == 0 || image.width() % factor != 0 || image.height() % factor != 0 {
        return Err(VdeError::InvalidArgument(format!(
            "downsample factor {factor} does not divide {}x{}",
            image.width(),
            image.height()
        )));
    }
    let (w, h) = (image.width() / factor, image.height() / factor);
    let norm = F::from_usize_c(factor * factor);
    let src = image.pixels();
    let sw = image.width();
    let mut out = vec![F::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = F::zero();
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += src[(y * factor + dy) * sw + x * factor + dx];
                }
            }
            out[y * w + x] = acc / norm;
        }
    }
    Ok(Image::from_pixels(w, h, out)?
        .with_bounds(image.intensity_min(), image.intensity_max()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_x(w: usize, h: usize) -> Image<f64> {
        let px: Vec<f64> = (0..w * h).map(|i| (i % w) as f64).collect();
        Image::from_pixels(w, h, px).unwrap()
    }

    #[test]
    fn sobel_constant_is_zero() {
        let g = sobel(&Image::constant(5, 4, 3.0f64).unwrap()).unwrap();
        assert!(g.gx.pixels().iter().all(|&v| v == 0.0));
        assert!(g.gy.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sobel_ramp_interior() {
        let g = sobel(&ramp_x(8, 6)).unwrap();
        for y in 1..5 {
            for x in 1..7 {
                assert_eq!(g.gx.get(x, y), 8.0, "gx at ({x},{y})");
                assert_eq!(g.gy.get(x, y), 0.0, "gy at ({x},{y})");
            }
        }
        // transposed ramp: roles swap by kernel symmetry
        let ramp_y = Image::from_pixels(6, 8, (0..48).map(|i| (i / 6) as f64).collect()).unwrap();
        let g = sobel(&ramp_y).unwrap();
        for y in 1..7 {
            for x in 1..5 {
                assert_eq!(g.gy.get(x, y), 8.0);
                assert_eq!(g.gx.get(x, y), 0.0);
            }
        }
    }

    #[test]
    fn sobel_offset_invariance() {
        let i = ramp_x(7, 7);
        let j = i.map(|v| v + 11.0).unwrap();
        let gi = sobel(&i).unwrap();
        let gj = sobel(&j).unwrap();
        assert_eq!(gi.gx.pixels(), gj.gx.pixels());
        assert_eq!(gi.gy.pixels(), gj.gy.pixels());
    }

    #[test]
    fn sobel_adjoint_is_transpose() {
        // <S u, v> == <u, S^T v> for random-ish u, v
        let w = 9;
        let h = 7;
        let u = Image::from_pixels(
            w,
            h,
            (0..w * h).map(|i| ((i * 31 + 7) % 13) as f64 - 6.0).collect::<Vec<_>>(),
        )
        .unwrap();
        let vx = Image::from_pixels(
            w,
            h,
            (0..w * h).map(|i| ((i * 17 + 3) % 11) as f64 - 5.0).collect::<Vec<_>>(),
        )
        .unwrap();
        let vy = Image::from_pixels(
            w,
            h,
            (0..w * h).map(|i| ((i * 23 + 5) % 9) as f64 - 4.0).collect::<Vec<_>>(),
        )
        .unwrap();
        let su = sobel(&u).unwrap();
        let lhs: f64 = su
            .gx
            .pixels()
            .iter()
            .zip(vx.pixels())
            .chain(su.gy.pixels().iter().zip(vy.pixels()))
            .map(|(a, b)| a * b)
            .sum();
        let stv = sobel_adjoint(&vx, &vy).unwrap();
        let rhs: f64 = u.pixels().iter().zip(stv.pixels()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn gaussian_kernel_normalized() {
        let k: Vec<f64> = gaussian_kernel_1d(11, 1.5).unwrap();
        let s: f64 = k.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blur_constant_unchanged() {
        let b = gaussian_blur(&Image::constant(9, 9, 4.25f64).unwrap(), 5, 1.0).unwrap();
        for &p in b.pixels() {
            assert!((p - 4.25).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_impulse_is_kernel() {
        let k = 5usize;
        let sigma = 1.2;
        let mut px = vec![0.0f64; 11 * 11];
        px[5 * 11 + 5] = 1.0;
        let img = Image::from_pixels(11, 11, px).unwrap();
        let b = gaussian_blur(&img, k, sigma).unwrap();
        let taps: Vec<f64> = gaussian_kernel_1d(k, sigma).unwrap();
        for dy in 0..k {
            for dx in 0..k {
                let expect = taps[dy] * taps[dx];
                let got = b.get(5 - k / 2 + dx, 5 - k / 2 + dy);
                assert!((got - expect).abs() < 1e-15, "tap ({dx},{dy})");
            }
        }
        // outside the kernel support: zero
        assert_eq!(b.get(0, 0), 0.0);
    }

    #[test]
    fn blur_rejects_degenerate_kernel() {
        let img = Image::constant(8, 8, 1.0f64).unwrap();
        assert!(gaussian_blur(&img, 33, 4.0).is_err());
        assert!(gaussian_blur(&img, 31, 4.0).is_ok());
    }

    #[test]
    fn blur_linearity() {
        let a = ramp_x(12, 12);
        let b = a.map(|v| (v * 0.7 - 3.0).sin()).unwrap();
        let combo = Image::from_pixels(
            12,
            12,
            a.pixels()
                .iter()
                .zip(b.pixels())
                .map(|(&x, &y)| 2.0 * x - 0.5 * y)
                .collect::<Vec<f64>>(),
        )
        .unwrap();
        let ba = gaussian_blur(&a, 7, 1.5).unwrap();
        let bb = gaussian_blur(&b, 7, 1.5).unwrap();
        let bc = gaussian_blur(&combo, 7, 1.5).unwrap();
        for i in 0..combo.pixels().len() {
            let expect = 2.0 * ba.pixels()[i] - 0.5 * bb.pixels()[i];
            assert!((bc.pixels()[i] - expect).abs() < 1e-6 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn downsample_area_averages() {
        let i = Image::from_pixels(4, 2, vec![1.0, 3.0, 5.0, 7.0, 2.0, 4.0, 6.0, 8.0]).unwrap();
        let d = downsample_area(&i, 2).unwrap();
        assert_eq!(d.pixels(), &[2.5, 6.5]);
    }
}

//! Image container and the shared pixel-level operations: per-image
//! normalization to `[-1, 1]`, patch extraction, and the paired geometric
//! augmentation. Filters live in [`filter`], file formats in [`io`].

pub mod filter;
pub mod io;
pub mod warp;

use crate::error::{Result, VdeError};
use crate::scalar::Scalar;

/// Single-channel 2D image with recorded raw intensity bounds.
///
/// Pixels are stored row-major; `(x, y)` indexes column `x` of row `y`.
/// The intensity bounds travel with the image: a raw-space image satisfies
/// `intensity_min <= pixel <= intensity_max`, while a normalized image (in
/// `[-1, 1]`) carries the bounds of the raw image it came from so it can be
/// inverted. Images are immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<F: Scalar> {
    height: usize,
    width: usize,
    pixels: Vec<F>,
    intensity_min: F,
    intensity_max: F,
    /// Set by [`normalize`] when the input had zero dynamic range.
    constant_input: bool,
}

impl<F: Scalar> Image<F> {
    /// Build an image from row-major pixels with explicit raw bounds.
    ///
    /// Rejects empty grids, non-finite pixels and inverted bounds.
    pub fn new(width: usize, height: usize, pixels: Vec<F>, min: F, max: F) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(VdeError::InvalidImage("zero-sized image".into()));
        }
        if pixels.len() != width * height {
            return Err(VdeError::InvalidImage(format!(
                "pixel buffer has {} values, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(VdeError::InvalidImage("non-finite pixel value".into()));
        }
        if !(min.is_finite() && max.is_finite()) || min > max {
            return Err(VdeError::InvalidImage(format!(
                "invalid intensity bounds [{min}, {max}]"
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
            intensity_min: min,
            intensity_max: max,
            constant_input: false,
        })
    }

    /// Build an image, taking the bounds from the pixel extremes.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<F>) -> Result<Self> {
        let (mut lo, mut hi) = (F::infinity(), F::neg_infinity());
        for &p in &pixels {
            if p < lo {
                lo = p;
            }
            if p > hi {
                hi = p;
            }
        }
        Self::new(width, height, pixels, lo, hi)
    }

    /// Constant image of value `v`.
    pub fn constant(width: usize, height: usize, v: F) -> Result<Self> {
        Self::new(width, height, vec![v; width * height], v, v)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[F] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> F {
        self.pixels[y * self.width + x]
    }

    pub fn intensity_min(&self) -> F {
        self.intensity_min
    }

    pub fn intensity_max(&self) -> F {
        self.intensity_max
    }

    /// True when this image was produced by normalizing a zero-range input.
    pub fn constant_input(&self) -> bool {
        self.constant_input
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Replace the recorded bounds, keeping pixels untouched.
    pub fn with_bounds(mut self, min: F, max: F) -> Self {
        self.intensity_min = min;
        self.intensity_max = max;
        self
    }

    /// Minimum and maximum over the stored pixels (not the recorded bounds).
    pub fn pixel_extremes(&self) -> (F, F) {
        let mut lo = self.pixels[0];
        let mut hi = self.pixels[0];
        for &p in &self.pixels[1..] {
            if p < lo {
                lo = p;
            }
            if p > hi {
                hi = p;
            }
        }
        (lo, hi)
    }

    pub fn mean(&self) -> F {
        let sum: F = self.pixels.iter().copied().sum();
        sum / F::from_usize_c(self.pixels.len())
    }

    /// Apply `f` pixelwise; bounds are recomputed from the result.
    pub fn map(&self, mut f: impl FnMut(F) -> F) -> Result<Self> {
        let pixels: Vec<F> = self.pixels.iter().map(|&p| f(p)).collect();
        Self::from_pixels(self.width, self.height, pixels)
    }

    /// Pixelwise `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "image add", |a, b| a + b)
    }

    /// Pixelwise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "image sub", |a, b| a - b)
    }

    fn zip(&self, other: &Self, context: &'static str, f: impl Fn(F, F) -> F) -> Result<Self> {
        ensure_same_dims(self, other, context)?;
        let pixels: Vec<F> = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_pixels(self.width, self.height, pixels)
    }

    /// Convert pixels to another scalar type, preserving bounds and flags.
    pub fn cast<G: Scalar>(&self) -> Image<G> {
        Image {
            height: self.height,
            width: self.width,
            pixels: self
                .pixels
                .iter()
                .map(|&p| G::from_f64_c(p.to_f64_c()))
                .collect(),
            intensity_min: G::from_f64_c(self.intensity_min.to_f64_c()),
            intensity_max: G::from_f64_c(self.intensity_max.to_f64_c()),
            constant_input: self.constant_input,
        }
    }
}

pub(crate) fn ensure_same_dims<F: Scalar>(
    a: &Image<F>,
    b: &Image<F>,
    context: &'static str,
) -> Result<()> {
    if !a.same_dims(b) {
        return Err(VdeError::DimensionMismatch {
            context,
            a_h: a.height(),
            a_w: a.width(),
            b_h: b.height(),
            b_w: b.width(),
        });
    }
    Ok(())
}

/// One dual-energy case: the standard (high-kVp) image, the bone image, and
/// optionally the ground-truth soft-tissue image. All images share dimensions.
#[derive(Debug, Clone)]
pub struct DESample<F: Scalar> {
    pub id: String,
    pub standard: Image<F>,
    pub bone: Image<F>,
    pub soft: Option<Image<F>>,
}

impl<F: Scalar> DESample<F> {
    pub fn new(
        id: impl Into<String>,
        standard: Image<F>,
        bone: Image<F>,
        soft: Option<Image<F>>,
    ) -> Result<Self> {
        ensure_same_dims(&standard, &bone, "DESample standard/bone")?;
        if let Some(s) = &soft {
            ensure_same_dims(&standard, s, "DESample standard/soft")?;
        }
        Ok(Self {
            id: id.into(),
            standard,
            bone,
            soft,
        })
    }
}

/// Per-pixel x/y derivative planes, same dimensions as the source image.
#[derive(Debug, Clone)]
pub struct GradientField<F: Scalar> {
    pub gx: Image<F>,
    pub gy: Image<F>,
}

impl<F: Scalar> GradientField<F> {
    pub fn new(gx: Image<F>, gy: Image<F>) -> Result<Self> {
        ensure_same_dims(&gx, &gy, "gradient field gx/gy")?;
        Ok(Self { gx, gy })
    }

    pub fn width(&self) -> usize {
        self.gx.width()
    }

    pub fn height(&self) -> usize {
        self.gx.height()
    }
}

/// Map an image linearly to `[-1, 1]`: the raw minimum goes to -1, the raw
/// maximum to +1. The output records the input's pixel extremes as its
/// bounds so [`denormalize`] can invert the map.
///
/// A constant input has no usable range; by convention it maps to all zeros
/// with [`Image::constant_input`] set, so degenerate synthetic cases flow
/// through the pipeline instead of erroring.
pub fn normalize<F: Scalar>(image: &Image<F>) -> Image<F> {
    let (lo, hi) = image.pixel_extremes();
    let range = hi - lo;
    let two = F::from_f64_c(2.0);
    if range == F::zero() {
        return Image {
            height: image.height,
            width: image.width,
            pixels: vec![F::zero(); image.pixels.len()],
            intensity_min: lo,
            intensity_max: hi,
            constant_input: true,
        };
    }
    let pixels: Vec<F> = image
        .pixels
        .iter()
        .map(|&p| two * ((p - lo) / range) - F::one())
        .collect();
    Image {
        height: image.height,
        width: image.width,
        pixels,
        intensity_min: lo,
        intensity_max: hi,
        constant_input: false,
    }
}

/// Invert [`normalize`]: -1 maps to `target_min`, +1 to `target_max`,
/// linearly in between. Inputs outside `[-1, 1]` are clamped; the number of
/// clamped pixels is returned alongside the image.
pub fn denormalize<F: Scalar>(
    image: &Image<F>,
    target_min: F,
    target_max: F,
) -> Result<(Image<F>, usize)> {
    if !(target_min.is_finite() && target_max.is_finite()) || target_max < target_min {
        return Err(VdeError::InvalidArgument(format!(
            "denormalize bounds [{target_min}, {target_max}]"
        )));
    }
    let half = F::from_f64_c(0.5);
    let range = target_max - target_min;
    let mut clamped = 0usize;
    let pixels: Vec<F> = image
        .pixels
        .iter()
        .map(|&p| {
            let p = if p < -F::one() {
                clamped += 1;
                -F::one()
            } else if p > F::one() {
                clamped += 1;
                F::one()
            } else {
                p
            };
            target_min + (p + F::one()) * half * range
        })
        .collect();
    let out = Image {
        height: image.height,
        width: image.width,
        pixels,
        intensity_min: target_min,
        intensity_max: target_max,
        constant_input: false,
    };
    Ok((out, clamped))
}

/// Extract the `size` x `size` sub-grid centered at `(cx, cy)`.
///
/// The patch spans columns `cx - size/2 .. cx - size/2 + size` (likewise for
/// rows), so odd sizes are symmetric around the center pixel. The patch must
/// lie fully inside the image. Bounds metadata is inherited from the source.
pub fn extract_patch<F: Scalar>(
    image: &Image<F>,
    cx: usize,
    cy: usize,
    size: usize,
) -> Result<Image<F>> {
    if size == 0 {
        return Err(VdeError::InvalidArgument("patch size 0".into()));
    }
    let half = size / 2;
    if cx < half || cy < half {
        return Err(VdeError::InvalidArgument(format!(
            "patch of size {size} at ({cx}, {cy}) exceeds image bounds"
        )));
    }
    let x0 = cx - half;
    let y0 = cy - half;
    if x0 + size > image.width || y0 + size > image.height {
        return Err(VdeError::InvalidArgument(format!(
            "patch of size {size} at ({cx}, {cy}) exceeds image {}x{}",
            image.width, image.height
        )));
    }
    let mut pixels = Vec::with_capacity(size * size);
    for y in y0..y0 + size {
        pixels.extend_from_slice(&image.pixels[y * image.width + x0..y * image.width + x0 + size]);
    }
    Ok(Image {
        height: size,
        width: size,
        pixels,
        intensity_min: image.intensity_min,
        intensity_max: image.intensity_max,
        constant_input: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, px: &[f64]) -> Image<f64> {
        Image::from_pixels(w, h, px.to_vec()).unwrap()
    }

    #[test]
    fn normalize_endpoints() {
        // [[0,100],[50,25]] -> [[-1,+1],[0,-0.5]]
        let i = img(2, 2, &[0.0, 100.0, 50.0, 25.0]);
        let n = normalize(&i);
        assert_eq!(n.pixels(), &[-1.0, 1.0, 0.0, -0.5]);
        assert_eq!(n.intensity_min(), 0.0);
        assert_eq!(n.intensity_max(), 100.0);
        assert!(!n.constant_input());
    }

    #[test]
    fn normalize_constant_maps_to_zeros() {
        let i = Image::constant(3, 3, 7.0f64).unwrap();
        let n = normalize(&i);
        assert!(n.pixels().iter().all(|&p| p == 0.0));
        assert!(n.constant_input());
        assert_eq!(n.intensity_min(), 7.0);
    }

    #[test]
    fn normalize_rejects_nan_at_construction() {
        let r = Image::from_pixels(2, 1, vec![f64::NAN, 1.0]);
        assert!(r.is_err());
    }

    #[test]
    fn denormalize_endpoints_and_midpoint() {
        let i = img(2, 1, &[-1.0, 1.0]);
        let (d, clamped) = denormalize(&i, 0.0, 200.0).unwrap();
        assert_eq!(d.pixels(), &[0.0, 200.0]);
        assert_eq!(clamped, 0);

        let z = Image::constant(3, 2, 0.0f64).unwrap();
        let (d, _) = denormalize(&z, 10.0, 30.0).unwrap();
        assert!(d.pixels().iter().all(|&p| p == 20.0));
    }

    #[test]
    fn denormalize_reports_clamping() {
        let i = Image::new(3, 1, vec![-1.5, 0.0, 2.0], -2.0, 2.0).unwrap();
        let (d, clamped) = denormalize(&i, 0.0, 10.0).unwrap();
        assert_eq!(clamped, 2);
        assert_eq!(d.pixels(), &[0.0, 5.0, 10.0]);
    }

    #[test]
    fn round_trip_within_tolerance() {
        let mut px = Vec::new();
        for k in 0..256 {
            px.push((k as f64 * 37.0) % 211.0 + 3.5);
        }
        let i = img(16, 16, &px);
        let n = normalize(&i);
        let (d, _) = denormalize(&n, n.intensity_min(), n.intensity_max()).unwrap();
        let range = i.intensity_max() - i.intensity_min();
        for (a, b) in i.pixels().iter().zip(d.pixels()) {
            assert!((a - b).abs() <= 1e-6 * range);
        }
    }

    #[test]
    fn patch_identity_and_point() {
        let i = img(4, 4, &(0..16).map(|v| v as f64).collect::<Vec<_>>());
        let full = extract_patch(&i, 2, 2, 4).unwrap();
        assert_eq!(full.pixels(), i.pixels());

        let one = extract_patch(&i, 3, 2, 1).unwrap();
        assert_eq!(one.pixels(), &[i.get(3, 2)]);
    }

    #[test]
    fn patch_matches_slice_oracle() {
        let i = img(8, 6, &(0..48).map(|v| (v % 8) as f64).collect::<Vec<_>>());
        let p = extract_patch(&i, 4, 3, 3).unwrap();
        for dy in 0..3 {
            for dx in 0..3 {
                assert_eq!(p.get(dx, dy), i.get(3 + dx, 2 + dy));
            }
        }
    }

    #[test]
    fn patch_out_of_bounds_errors() {
        let i = img(4, 4, &[0.0; 16]);
        assert!(extract_patch(&i, 0, 0, 3).is_err());
        assert!(extract_patch(&i, 3, 3, 4).is_err());
    }
}

//! Minimal CHW tensor used by the networks.

use crate::error::{Result, VdeError};
use crate::image::Image;
use crate::scalar::Scalar;

/// Dense channels-height-width tensor. Index `(c, y, x)` maps to
/// `data[(c * height + y) * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Scalar> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![F::zero(); channels * height * width],
        }
    }

    pub fn from_image(image: &Image<F>) -> Self {
        Self {
            channels: 1,
            height: image.height(),
            width: image.width(),
            data: image.pixels().to_vec(),
        }
    }

    /// View channel `c` of a single-channel-compatible tensor as an image.
    pub fn channel_to_image(&self, c: usize) -> Result<Image<F>> {
        if c >= self.channels {
            return Err(VdeError::InvalidArgument(format!(
                "channel {c} out of {}",
                self.channels
            )));
        }
        let plane = self.channel(c).to_vec();
        Image::from_pixels(self.width, self.height, plane)
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[F] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [F] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// Stack tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<F>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| VdeError::InvalidArgument("concat of zero tensors".into()))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.height != first.height || p.width != first.width {
                return Err(VdeError::InvalidArgument(
                    "concat_channels spatial mismatch".into(),
                ));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            channels,
            height: first.height,
            width: first.width,
            data,
        })
    }

    /// Split the leading `left` channels from the rest (inverse of concat).
    pub fn split_channels(&self, left: usize) -> (Tensor<F>, Tensor<F>) {
        let n = self.height * self.width;
        (
            Tensor {
                channels: left,
                height: self.height,
                width: self.width,
                data: self.data[..left * n].to_vec(),
            },
            Tensor {
                channels: self.channels - left,
                height: self.height,
                width: self.width,
                data: self.data[left * n..].to_vec(),
            },
        )
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Bilinear upsampling by an integer factor, half-pixel (pixel-center
/// aligned) convention: output pixel `X` samples source coordinate
/// `(X + 0.5) / f - 0.5`, clamped at the borders.
pub fn upsample_bilinear<F: Scalar>(input: &Tensor<F>, factor: usize) -> Tensor<F> {
    if factor == 1 {
        return input.clone();
    }
    let (c, ih, iw) = (input.channels, input.height, input.width);
    let (oh, ow) = (ih * factor, iw * factor);
    let mut out = Tensor::zeros(c, oh, ow);
    let weights_1d = upsample_taps(factor, ih);
    let weights_1d_x = upsample_taps(factor, iw);
    for ch in 0..c {
        let src = input.channel(ch);
        let dst = out.channel_mut(ch);
        for oy in 0..oh {
            let (y0, y1, wy) = weights_1d[oy];
            for ox in 0..ow {
                let (x0, x1, wx) = weights_1d_x[ox];
                let p00 = src[y0 * iw + x0].to_f64_c();
                let p01 = src[y0 * iw + x1].to_f64_c();
                let p10 = src[y1 * iw + x0].to_f64_c();
                let p11 = src[y1 * iw + x1].to_f64_c();
                let top = p00 + (p01 - p00) * wx;
                let bot = p10 + (p11 - p10) * wx;
                dst[oy * ow + ox] = F::from_f64_c(top + (bot - top) * wy);
            }
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear`]: scatter output gradients back through
/// the interpolation weights.
pub fn upsample_bilinear_adjoint<F: Scalar>(d_out: &Tensor<F>, factor: usize) -> Tensor<F> {
    if factor == 1 {
        return d_out.clone();
    }
    let (c, oh, ow) = (d_out.channels, d_out.height, d_out.width);
    let (ih, iw) = (oh / factor, ow / factor);
    let mut d_in = Tensor::zeros(c, ih, iw);
    let weights_1d = upsample_taps(factor, ih);
    let weights_1d_x = upsample_taps(factor, iw);
    for ch in 0..c {
        let src = d_out.channel(ch);
        let dst = d_in.channel_mut(ch);
        for oy in 0..oh {
            let (y0, y1, wy) = weights_1d[oy];
            for ox in 0..ow {
                let (x0, x1, wx) = weights_1d_x[ox];
                let g = src[oy * ow + ox].to_f64_c();
                dst[y0 * iw + x0] += F::from_f64_c(g * (1.0 - wx) * (1.0 - wy));
                dst[y0 * iw + x1] += F::from_f64_c(g * wx * (1.0 - wy));
                dst[y1 * iw + x0] += F::from_f64_c(g * (1.0 - wx) * wy);
                dst[y1 * iw + x1] += F::from_f64_c(g * wx * wy);
            }
        }
    }
    d_in
}

/// Per output index: (lower source index, upper source index, upper weight).
fn upsample_taps(factor: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let out_len = in_len * factor;
    (0..out_len)
        .map(|o| {
            let s = (o as f64 + 0.5) / factor as f64 - 0.5;
            if s <= 0.0 {
                (0, 0, 0.0)
            } else if s >= (in_len - 1) as f64 {
                (in_len - 1, in_len - 1, 0.0)
            } else {
                let lo = s.floor() as usize;
                (lo, lo + 1, s - lo as f64)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor {
            channels: 2,
            height: 2,
            width: 2,
            data: (0..8).map(|v| v as f64).collect(),
        };
        let b = Tensor {
            channels: 1,
            height: 2,
            width: 2,
            data: (8..12).map(|v| v as f64).collect(),
        };
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.channels, 3);
        let (ra, rb) = c.split_channels(2);
        assert_eq!(ra.data, a.data);
        assert_eq!(rb.data, b.data);
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let t = Tensor {
            channels: 1,
            height: 3,
            width: 3,
            data: vec![2.5f64; 9],
        };
        let u = upsample_bilinear(&t, 4);
        assert_eq!(u.height, 12);
        assert!(u.data.iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn upsample_adjoint_is_transpose() {
        // <U a, b> == <a, U^T b>
        let a = Tensor {
            channels: 1,
            height: 4,
            width: 3,
            data: (0..12).map(|i| ((i * 7 + 1) % 5) as f64 - 2.0).collect(),
        };
        let b = Tensor {
            channels: 1,
            height: 8,
            width: 6,
            data: (0..48).map(|i| ((i * 11 + 3) % 7) as f64 - 3.0).collect(),
        };
        let ua = upsample_bilinear(&a, 2);
        let lhs: f64 = ua.data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
        let utb = upsample_bilinear_adjoint(&b, 2);
        let rhs: f64 = a.data.iter().zip(&utb.data).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}

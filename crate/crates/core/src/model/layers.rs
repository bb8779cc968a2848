//! Network building blocks with hand-written backward passes.
//!
//! Every layer exposes `forward` (pure) and `backward`; backward takes the
//! cached forward inputs, accumulates parameter gradients into a matching
//! grad struct, and returns the gradient with respect to the layer input.
//! The finite-difference check in the test suite pins these adjoints down.

use super::tensor::Tensor;
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// Strided 2D convolution (zero padding).
///
/// Weight layout: `[out_ch][in_ch][k][k]`, row-major flattened.
#[derive(Debug, Clone)]
pub struct Conv2d<F: Scalar> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrad<F: Scalar> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Conv2d<F> {
    /// Fan-in scaled Gaussian init (`std = sqrt(2 / (in_ch * k * k))`),
    /// zero biases.
    pub fn init(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("std > 0");
        let weight = (0..out_ch * in_ch * k * k)
            .map(|_| F::from_f64_c(dist.sample(rng)))
            .collect();
        Self {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            weight,
            bias: vec![F::zero(); out_ch],
        }
    }

    pub fn grad_zeros(&self) -> Conv2dGrad<F> {
        Conv2dGrad {
            weight: vec![F::zero(); self.weight.len()],
            bias: vec![F::zero(); self.bias.len()],
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, input: &Tensor<F>) -> Tensor<F> {
        debug_assert_eq!(input.channels, self.in_ch);
        let (ih, iw) = (input.height, input.width);
        let (oh, ow) = self.out_dims(ih, iw);
        let (s, k, p) = (self.stride, self.k, self.pad);
        let mut out = Tensor::zeros(self.out_ch, oh, ow);
        let plane = oh * ow;
        // output channels are independent; accumulate each output row in a
        // hot buffer and write it once
        out.data
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(o, dst)| {
                let mut acc = vec![F::zero(); ow];
                for oy in 0..oh {
                    acc.iter_mut().for_each(|v| *v = self.bias[o]);
                    for i in 0..self.in_ch {
                        let src = input.channel(i);
                        for ky in 0..k {
                            let iy = (oy * s + ky).wrapping_sub(p);
                            if iy >= ih {
                                continue;
                            }
                            let in_row = &src[iy * iw..(iy + 1) * iw];
                            for kx in 0..k {
                                let w = self.weight[((o * self.in_ch + i) * k + ky) * k + kx];
                                let (ox_lo, ox_hi) = valid_range(kx, p, s, iw, ow);
                                if ox_lo >= ox_hi {
                                    continue;
                                }
                                let base = ox_lo * s + kx - p;
                                let n = ox_hi - ox_lo;
                                if s == 1 {
                                    axpy(&mut acc[ox_lo..ox_hi], &in_row[base..base + n], w);
                                } else {
                                    for (d, sv) in acc[ox_lo..ox_hi]
                                        .iter_mut()
                                        .zip(in_row[base..].iter().step_by(s))
                                    {
                                        *d += w * *sv;
                                    }
                                }
                            }
                        }
                    }
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(&acc);
                }
            });
        out
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(
        &self,
        input: &Tensor<F>,
        d_out: &Tensor<F>,
        grad: &mut Conv2dGrad<F>,
    ) -> Tensor<F> {
        let (ih, iw) = (input.height, input.width);
        let (oh, ow) = (d_out.height, d_out.width);
        let (s, k, p) = (self.stride, self.k, self.pad);
        let mut d_in = Tensor::zeros(self.in_ch, ih, iw);

        for o in 0..self.out_ch {
            let mut b_acc = F::zero();
            for &g in d_out.channel(o) {
                b_acc += g;
            }
            grad.bias[o] += b_acc;
        }

        // input channels are independent for both d_in and the weight grads;
        // accumulate each d_in row hot and write it once per plane pass
        let in_plane = ih * iw;
        let kk = k * k;
        let w_grads: Vec<&mut [F]> = grad.weight.chunks_mut(kk).collect();
        // regroup the per-(o, i) weight-gradient tiles by input channel
        let mut by_input: Vec<Vec<&mut [F]>> = (0..self.in_ch).map(|_| Vec::new()).collect();
        for (oi, tile) in w_grads.into_iter().enumerate() {
            by_input[oi % self.in_ch].push(tile);
        }

        d_in.data
            .par_chunks_mut(in_plane)
            .zip(by_input.into_par_iter())
            .enumerate()
            .for_each(|(i, (dst, mut tiles))| {
                let src = input.channel(i);
                let mut acc = vec![F::zero(); iw];
                for iy in 0..ih {
                    acc.iter_mut().for_each(|v| *v = F::zero());
                    let in_row = &src[iy * iw..(iy + 1) * iw];
                    for (o, tile) in tiles.iter_mut().enumerate() {
                        let dup = d_out.channel(o);
                        for ky in 0..k {
                            // output rows that read input row iy via tap ky
                            let t = (iy + p).wrapping_sub(ky);
                            if t % s != 0 {
                                continue;
                            }
                            let oy = t / s;
                            if oy >= oh || iy + p < ky {
                                continue;
                            }
                            let d_out_row = &dup[oy * ow..(oy + 1) * ow];
                            for kx in 0..k {
                                let widx_local = ky * k + kx;
                                let w = self.weight[(o * self.in_ch + i) * kk + widx_local];
                                let (ox_lo, ox_hi) = valid_range(kx, p, s, iw, ow);
                                if ox_lo >= ox_hi {
                                    continue;
                                }
                                let base = ox_lo * s + kx - p;
                                let n = ox_hi - ox_lo;
                                if s == 1 {
                                    tile[widx_local] +=
                                        dot8(&d_out_row[ox_lo..ox_hi], &in_row[base..base + n]);
                                    axpy(&mut acc[base..base + n], &d_out_row[ox_lo..ox_hi], w);
                                } else {
                                    let mut w_acc = F::zero();
                                    for ((g, iv), d) in d_out_row[ox_lo..ox_hi]
                                        .iter()
                                        .zip(in_row[base..].iter().step_by(s))
                                        .zip(acc[base..].iter_mut().step_by(s))
                                    {
                                        w_acc += *g * *iv;
                                        *d += w * *g;
                                    }
                                    tile[widx_local] += w_acc;
                                }
                            }
                        }
                    }
                    dst[iy * iw..(iy + 1) * iw].copy_from_slice(&acc);
                }
            });
        d_in
    }
}

/// `dst += w * src`, elementwise over equal-length slices. `mul_add` lets
/// the backend emit fused multiply-adds where the target supports them.
#[inline]
fn axpy<F: Scalar>(dst: &mut [F], src: &[F], w: F) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = s.mul_add(w, *d);
    }
}

/// Dot product with eight independent accumulators so the reduction
/// vectorizes.
#[inline]
fn dot8<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = x[l].mul_add(y[l], acc[l]);
        }
    }
    let mut tail = F::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = x.mul_add(*y, tail);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Output-column range for which `ox * s + kx - p` stays inside `[0, iw)`.
#[inline]
fn valid_range(kx: usize, p: usize, s: usize, iw: usize, ow: usize) -> (usize, usize) {
    let lo = if kx >= p { 0 } else { (p - kx + s - 1) / s };
    let hi = if iw + p > kx {
        ow.min((iw + p - kx + s - 1) / s)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Transposed convolution (stride-2 kernel-4 pad-1 gives exact 2x upsampling).
///
/// Weight layout: `[in_ch][out_ch][k][k]`.
#[derive(Debug, Clone)]
pub struct Deconv2d<F: Scalar> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct Deconv2dGrad<F: Scalar> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Deconv2d<F> {
    pub fn init(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("std > 0");
        let weight = (0..in_ch * out_ch * k * k)
            .map(|_| F::from_f64_c(dist.sample(rng)))
            .collect();
        Self {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            weight,
            bias: vec![F::zero(); out_ch],
        }
    }

    pub fn grad_zeros(&self) -> Deconv2dGrad<F> {
        Deconv2dGrad {
            weight: vec![F::zero(); self.weight.len()],
            bias: vec![F::zero(); self.bias.len()],
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.k - 2 * self.pad,
            (w - 1) * self.stride + self.k - 2 * self.pad,
        )
    }

    pub fn forward(&self, input: &Tensor<F>) -> Tensor<F> {
        debug_assert_eq!(input.channels, self.in_ch);
        let (ih, iw) = (input.height, input.width);
        let (oh, ow) = self.out_dims(ih, iw);
        let (s, k, p) = (self.stride, self.k, self.pad);
        let mut out = Tensor::zeros(self.out_ch, oh, ow);
        let plane = oh * ow;
        out.data
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(o, dst)| {
                let mut acc = vec![F::zero(); ow];
                for oy in 0..oh {
                    acc.iter_mut().for_each(|v| *v = self.bias[o]);
                    for i in 0..self.in_ch {
                        let src = input.channel(i);
                        for ky in 0..k {
                            // input rows feeding output row oy via tap ky
                            let t = (oy + p).wrapping_sub(ky);
                            if oy + p < ky || t % s != 0 {
                                continue;
                            }
                            let iy = t / s;
                            if iy >= ih {
                                continue;
                            }
                            let in_row = &src[iy * iw..(iy + 1) * iw];
                            for kx in 0..k {
                                let w = self.weight[((i * self.out_ch + o) * k + ky) * k + kx];
                                let (ix_lo, ix_hi) = valid_range(kx, p, s, ow, iw);
                                if ix_lo >= ix_hi {
                                    continue;
                                }
                                let base = ix_lo * s + kx - p;
                                for (d, sv) in acc[base..]
                                    .iter_mut()
                                    .step_by(s)
                                    .zip(&in_row[ix_lo..ix_hi])
                                {
                                    *d += w * *sv;
                                }
                            }
                        }
                    }
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(&acc);
                }
            });
        out
    }

    pub fn backward(
        &self,
        input: &Tensor<F>,
        d_out: &Tensor<F>,
        grad: &mut Deconv2dGrad<F>,
    ) -> Tensor<F> {
        let (ih, iw) = (input.height, input.width);
        let (oh, ow) = (d_out.height, d_out.width);
        let (s, k, p) = (self.stride, self.k, self.pad);
        let mut d_in = Tensor::zeros(self.in_ch, ih, iw);

        for o in 0..self.out_ch {
            let mut b_acc = F::zero();
            for &g in d_out.channel(o) {
                b_acc += g;
            }
            grad.bias[o] += b_acc;
        }

        let in_plane = ih * iw;
        let kk = k * k;
        d_in.data
            .par_chunks_mut(in_plane)
            .zip(grad.weight.par_chunks_mut(self.out_ch * kk))
            .enumerate()
            .for_each(|(i, (dst, w_tiles))| {
                let src = input.channel(i);
                let mut acc = vec![F::zero(); iw];
                for iy in 0..ih {
                    acc.iter_mut().for_each(|v| *v = F::zero());
                    let in_row = &src[iy * iw..(iy + 1) * iw];
                    for o in 0..self.out_ch {
                        let dup = d_out.channel(o);
                        for ky in 0..k {
                            let oy = (iy * s + ky).wrapping_sub(p);
                            if oy >= oh {
                                continue;
                            }
                            let d_out_row = &dup[oy * ow..(oy + 1) * ow];
                            for kx in 0..k {
                                let widx_local = o * kk + ky * k + kx;
                                let w = self.weight[(i * self.out_ch + o) * kk + ky * k + kx];
                                let (ix_lo, ix_hi) = valid_range(kx, p, s, ow, iw);
                                if ix_lo >= ix_hi {
                                    continue;
                                }
                                let base = ix_lo * s + kx - p;
                                let mut w_acc = F::zero();
                                for ((g, iv), d) in d_out_row[base..]
                                    .iter()
                                    .step_by(s)
                                    .zip(&in_row[ix_lo..ix_hi])
                                    .zip(acc[ix_lo..ix_hi].iter_mut())
                                {
                                    w_acc += *g * *iv;
                                    *d += w * *g;
                                }
                                w_tiles[widx_local] += w_acc;
                            }
                        }
                    }
                    dst[iy * iw..(iy + 1) * iw].copy_from_slice(&acc);
                }
            });
        d_in
    }
}

/// Fully-connected head mapping a flattened tensor to one logit.
#[derive(Debug, Clone)]
pub struct Dense<F: Scalar> {
    pub in_features: usize,
    pub weight: Vec<F>,
    /// Single-element bias, kept as a vector for uniform parameter plumbing.
    pub bias: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct DenseGrad<F: Scalar> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn init(in_features: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / in_features as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("std > 0");
        Self {
            in_features,
            weight: (0..in_features)
                .map(|_| F::from_f64_c(dist.sample(rng)))
                .collect(),
            bias: vec![F::zero()],
        }
    }

    pub fn grad_zeros(&self) -> DenseGrad<F> {
        DenseGrad {
            weight: vec![F::zero(); self.weight.len()],
            bias: vec![F::zero()],
        }
    }

    pub fn forward(&self, input: &[F]) -> F {
        debug_assert_eq!(input.len(), self.in_features);
        let mut acc = self.bias[0];
        for (w, x) in self.weight.iter().zip(input) {
            acc += *w * *x;
        }
        acc
    }

    pub fn backward(&self, input: &[F], d_logit: F, grad: &mut DenseGrad<F>) -> Vec<F> {
        for (gw, x) in grad.weight.iter_mut().zip(input) {
            *gw += d_logit * *x;
        }
        grad.bias[0] += d_logit;
        self.weight.iter().map(|&w| w * d_logit).collect()
    }
}

/// Per-channel instance normalization with learnable scale and shift.
#[derive(Debug, Clone)]
pub struct InstanceNorm<F: Scalar> {
    pub channels: usize,
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct InstanceNormGrad<F: Scalar> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
}

pub struct InstanceNormCache<F: Scalar> {
    /// Normalized activations, kept for the backward pass.
    x_hat: Tensor<F>,
    inv_std: Vec<F>,
}

const INSTANCE_NORM_EPS: f64 = 1e-5;

impl<F: Scalar> InstanceNorm<F> {
    pub fn init(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![F::one(); channels],
            beta: vec![F::zero(); channels],
        }
    }

    pub fn grad_zeros(&self) -> InstanceNormGrad<F> {
        InstanceNormGrad {
            gamma: vec![F::zero(); self.channels],
            beta: vec![F::zero(); self.channels],
        }
    }

    pub fn forward(&self, input: &Tensor<F>) -> (Tensor<F>, InstanceNormCache<F>) {
        let n = F::from_usize_c(input.height * input.width);
        let eps = F::from_f64_c(INSTANCE_NORM_EPS);
        let mut out = Tensor::zeros(input.channels, input.height, input.width);
        let mut x_hat = Tensor::zeros(input.channels, input.height, input.width);
        let mut inv_std = Vec::with_capacity(input.channels);
        for c in 0..input.channels {
            let src = input.channel(c);
            let mut mean = F::zero();
            for &v in src {
                mean += v;
            }
            mean = mean / n;
            let mut var = F::zero();
            for &v in src {
                let d = v - mean;
                var += d * d;
            }
            var = var / n;
            let is = (var + eps).sqrt().recip();
            inv_std.push(is);
            let (g, b) = (self.gamma[c], self.beta[c]);
            let xh = x_hat.channel_mut(c);
            let dst = out.channel_mut(c);
            for i in 0..src.len() {
                let h = (src[i] - mean) * is;
                xh[i] = h;
                dst[i] = g * h + b;
            }
        }
        (out, InstanceNormCache { x_hat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &InstanceNormCache<F>,
        d_out: &Tensor<F>,
        grad: &mut InstanceNormGrad<F>,
    ) -> Tensor<F> {
        let n = F::from_usize_c(d_out.height * d_out.width);
        let mut d_in = Tensor::zeros(d_out.channels, d_out.height, d_out.width);
        for c in 0..d_out.channels {
            let dy = d_out.channel(c);
            let xh = cache.x_hat.channel(c);
            let mut sum_dy = F::zero();
            let mut sum_dy_xh = F::zero();
            for i in 0..dy.len() {
                sum_dy += dy[i];
                sum_dy_xh += dy[i] * xh[i];
            }
            grad.beta[c] += sum_dy;
            grad.gamma[c] += sum_dy_xh;
            let scale = self.gamma[c] * cache.inv_std[c];
            let mean_dy = sum_dy / n;
            let mean_dy_xh = sum_dy_xh / n;
            let dst = d_in.channel_mut(c);
            for i in 0..dy.len() {
                dst[i] = scale * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
            }
        }
        d_in
    }
}

/// Leaky rectifier; `slope = 0` is the plain rectifier.
pub fn leaky_relu<F: Scalar>(input: &Tensor<F>, slope: f64) -> Tensor<F> {
    let a = F::from_f64_c(slope);
    let data = input
        .data
        .iter()
        .map(|&v| if v > F::zero() { v } else { a * v })
        .collect();
    Tensor {
        channels: input.channels,
        height: input.height,
        width: input.width,
        data,
    }
}

pub fn leaky_relu_backward<F: Scalar>(input: &Tensor<F>, d_out: &Tensor<F>, slope: f64) -> Tensor<F> {
    let a = F::from_f64_c(slope);
    let data = input
        .data
        .iter()
        .zip(&d_out.data)
        .map(|(&x, &g)| if x > F::zero() { g } else { a * g })
        .collect();
    Tensor {
        channels: input.channels,
        height: input.height,
        width: input.width,
        data,
    }
}

pub fn tanh_forward<F: Scalar>(input: &Tensor<F>) -> Tensor<F> {
    let data = input.data.iter().map(|&v| v.tanh()).collect();
    Tensor {
        channels: input.channels,
        height: input.height,
        width: input.width,
        data,
    }
}

/// Backward through tanh given the forward *output*.
pub fn tanh_backward<F: Scalar>(output: &Tensor<F>, d_out: &Tensor<F>) -> Tensor<F> {
    let data = output
        .data
        .iter()
        .zip(&d_out.data)
        .map(|(&y, &g)| g * (F::one() - y * y))
        .collect();
    Tensor {
        channels: output.channels,
        height: output.height,
        width: output.width,
        data,
    }
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    (F::one() + (-x).exp()).recip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng(seed);
        Tensor {
            channels: c,
            height: h,
            width: w,
            data: (0..c * h * w).map(|_| r.gen_range(-1.0..1.0)).collect(),
        }
    }

    /// Finite-difference check of one layer's full adjoint via a quadratic
    /// scalar loss L = 0.5 * sum(y^2).
    fn conv_fd_check(stride: usize, k: usize, pad: usize) {
        let mut r = rng(9);
        let conv = Conv2d::<f64>::init(2, 3, k, stride, pad, &mut r);
        let x = rand_tensor(2, 8, 8, 10);

        let loss = |c: &Conv2d<f64>, x: &Tensor<f64>| -> f64 {
            let y = c.forward(x);
            y.data.iter().map(|v| 0.5 * v * v).sum()
        };

        let y = conv.forward(&x);
        let mut grad = conv.grad_zeros();
        let d_in = conv.backward(&x, &y, &mut grad);

        let h = 1e-6;
        // a few weight coordinates
        for &wi in &[0usize, 5, 11, conv.weight.len() - 1] {
            let mut cp = conv.clone();
            cp.weight[wi] += h;
            let up = loss(&cp, &x);
            cp.weight[wi] -= 2.0 * h;
            let dn = loss(&cp, &x);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - grad.weight[wi]).abs() < 1e-5 * fd.abs().max(1.0),
                "conv w[{wi}]: fd {fd} vs {}",
                grad.weight[wi]
            );
        }
        // a few input coordinates
        for &xi in &[0usize, 17, 63, x.data.len() - 1] {
            let mut xp = x.clone();
            xp.data[xi] += h;
            let up = loss(&conv, &xp);
            xp.data[xi] -= 2.0 * h;
            let dn = loss(&conv, &xp);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - d_in.data[xi]).abs() < 1e-5 * fd.abs().max(1.0),
                "conv x[{xi}]: fd {fd} vs {}",
                d_in.data[xi]
            );
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        conv_fd_check(1, 3, 1);
        conv_fd_check(2, 4, 1);
    }

    #[test]
    fn conv_out_dims() {
        let mut r = rng(0);
        let c = Conv2d::<f64>::init(1, 1, 4, 2, 1, &mut r);
        assert_eq!(c.out_dims(16, 16), (8, 8));
        let c = Conv2d::<f64>::init(1, 1, 3, 1, 1, &mut r);
        assert_eq!(c.out_dims(16, 12), (16, 12));
    }

    #[test]
    fn deconv_doubles_resolution_and_matches_fd() {
        let mut r = rng(3);
        let dc = Deconv2d::<f64>::init(2, 2, 4, 2, 1, &mut r);
        assert_eq!(dc.out_dims(8, 8), (16, 16));

        let x = rand_tensor(2, 5, 5, 4);
        let loss = |d: &Deconv2d<f64>, x: &Tensor<f64>| -> f64 {
            let y = d.forward(x);
            y.data.iter().map(|v| 0.5 * v * v).sum()
        };
        let y = dc.forward(&x);
        let mut grad = dc.grad_zeros();
        let d_in = dc.backward(&x, &y, &mut grad);
        let h = 1e-6;
        for &wi in &[0usize, 7, 31, dc.weight.len() - 1] {
            let mut cp = dc.clone();
            cp.weight[wi] += h;
            let up = loss(&cp, &x);
            cp.weight[wi] -= 2.0 * h;
            let dn = loss(&cp, &x);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - grad.weight[wi]).abs() < 1e-5 * fd.abs().max(1.0));
        }
        for &xi in &[0usize, 12, x.data.len() - 1] {
            let mut xp = x.clone();
            xp.data[xi] += h;
            let up = loss(&dc, &xp);
            xp.data[xi] -= 2.0 * h;
            let dn = loss(&dc, &xp);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - d_in.data[xi]).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn instance_norm_normalizes_and_matches_fd() {
        let norm = InstanceNorm::<f64>::init(2);
        let x = rand_tensor(2, 6, 6, 8);
        let (y, _) = norm.forward(&x);
        for c in 0..2 {
            let ch = y.channel(c);
            let mean: f64 = ch.iter().sum::<f64>() / ch.len() as f64;
            assert!(mean.abs() < 1e-10);
        }

        let loss = |n: &InstanceNorm<f64>, x: &Tensor<f64>| -> f64 {
            let (y, _) = n.forward(x);
            y.data.iter().enumerate().map(|(i, v)| v * (i as f64 * 0.1).sin()).sum()
        };
        let (_, cache) = norm.forward(&x);
        let d_out = Tensor {
            channels: 2,
            height: 6,
            width: 6,
            data: (0..72).map(|i| (i as f64 * 0.1).sin()).collect(),
        };
        let mut grad = norm.grad_zeros();
        let d_in = norm.backward(&cache, &d_out, &mut grad);
        let h = 1e-6;
        for &xi in &[0usize, 30, 71] {
            let mut xp = x.clone();
            xp.data[xi] += h;
            let up = loss(&norm, &xp);
            xp.data[xi] -= 2.0 * h;
            let dn = loss(&norm, &xp);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - d_in.data[xi]).abs() < 1e-4 * fd.abs().max(1e-2),
                "in[{xi}]: {fd} vs {}",
                d_in.data[xi]
            );
        }
    }

    #[test]
    fn sigmoid_range_and_symmetry() {
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
        assert!(sigmoid(30.0f64) < 1.0);
        assert!(sigmoid(-30.0f64) > 0.0);
    }
}

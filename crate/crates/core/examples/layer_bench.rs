//! Rough layer timing harness (dev tool).
use std::time::Instant;
use vde_core::model::layers::{Conv2d, Deconv2d};
use vde_core::model::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn time_it(name: &str, mut f: impl FnMut()) {
    let n = 20;
    let t0 = Instant::now();
    for _ in 0..n {
        f();
    }
    println!("{name}: {:.2} ms/iter", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // fuse conv at full res: 16->16 k3 s1 at 128x128 (added skip: 32->16)
    let conv = Conv2d::<f32>::init(32, 16, 3, 1, 1, &mut rng);
    let x = Tensor::<f32>::zeros(32, 128, 128);
    let y = conv.forward(&x);
    time_it("conv 32->16 k3 s1 @128 fwd", || {
        let _ = conv.forward(&x);
    });
    let mut g = conv.grad_zeros();
    time_it("conv 32->16 k3 s1 @128 bwd", || {
        let _ = conv.backward(&x, &y, &mut g);
    });

    let conv2 = Conv2d::<f32>::init(64, 32, 3, 1, 1, &mut rng);
    let x2 = Tensor::<f32>::zeros(64, 64, 64);
    let y2 = conv2.forward(&x2);
    time_it("conv 64->32 k3 s1 @64 fwd", || {
        let _ = conv2.forward(&x2);
    });
    let mut g2 = conv2.grad_zeros();
    time_it("conv 64->32 k3 s1 @64 bwd", || {
        let _ = conv2.backward(&x2, &y2, &mut g2);
    });

    let dc = Deconv2d::<f32>::init(16, 16, 4, 2, 1, &mut rng);
    let xd = Tensor::<f32>::zeros(16, 64, 64);
    let yd = dc.forward(&xd);
    time_it("deconv 16->16 k4 s2 @64->128 fwd", || {
        let _ = dc.forward(&xd);
    });
    let mut gd = dc.grad_zeros();
    time_it("deconv 16->16 k4 s2 @64->128 bwd", || {
        let _ = dc.backward(&xd, &yd, &mut gd);
    });

    // encoder conv k4 s2
    let ec = Conv2d::<f32>::init(16, 32, 4, 2, 1, &mut rng);
    let xe = Tensor::<f32>::zeros(16, 64, 64);
    let ye = ec.forward(&xe);
    time_it("conv 16->32 k4 s2 @64 fwd", || {
        let _ = ec.forward(&xe);
    });
    let mut ge = ec.grad_zeros();
    time_it("conv 16->32 k4 s2 @64 bwd", || {
        let _ = ec.backward(&xe, &ye, &mut ge);
    });
}

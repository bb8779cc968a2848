//! Virtual dual-energy radiography pipeline.
//!
//! A standard (high-kVp) chest radiograph is mapped to a virtual bone image
//! by a multi-scale conditional adversarial network; the bone image then
//! drives gradient-domain bone suppression to produce a virtual soft-tissue
//! image. The crate also ships the synthetic phantom generator used for
//! training and evaluation, the image-quality metrics (PSNR / SSIM / RMAE),
//! and FROC lesion-localization analysis with bootstrap confidence
//! intervals.
//!
//! All numeric code is generic over the scalar type (`f32` or `f64`, see
//! [`scalar::Scalar`]); the aliases below pin the concrete types used by the
//! command-line pipeline: `f32` for network training and inference, `f64`
//! for the suppression solver and the evaluation stack.

pub mod error;
pub mod froc;
pub mod image;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod scalar;
pub mod suppress;
pub mod training;

pub use error::{Result, VdeError};

/// Working image type for network training and inference.
pub type Image32 = image::Image<f32>;
/// Working image type for the suppression and evaluation paths.
pub type Image64 = image::Image<f64>;
pub type DESample32 = image::DESample<f32>;
pub type DESample64 = image::DESample<f64>;
pub type Generator32 = model::Generator<f32>;
pub type Generator64 = model::Generator<f64>;
pub type Discriminator32 = model::Discriminator<f32>;
pub type Discriminator64 = model::Discriminator<f64>;

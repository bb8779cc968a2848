//! Image-quality metrics: PSNR, SSIM and RMAE, plus the per-case evaluation
//! report writer.
//!
//! Conventions: PSNR and SSIM default their data range to the reference
//! image's pixel extremes per case; SSIM uses an 11-tap Gaussian window
//! (sigma 1.5) with the standard stabilizing constants `k1 = 0.01`,
//! `k2 = 0.03`, evaluated at window positions fully inside the image; RMAE
//! normalizes by the reference's absolute sum. Identical inputs give a PSNR
//! of exactly +inf, reported capped at 99 dB with an `exact` flag so CSV
//! output stays numeric. SSIM is symmetric; RMAE is not (it is relative to
//! the reference).

use crate::error::{Result, VdeError};
use crate::image::{ensure_same_dims, filter::gaussian_kernel_1d, DESample, Image};
use crate::phantom::{load_sample, ManifestEntry, Split};
use crate::scalar::Scalar;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

/// Sentinel reported for infinite PSNR (identical images).
pub const PSNR_EXACT_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB.
pub struct Psnr {
    pub db: f64,
    /// Set when the images were identical (zero MSE); `db` holds the cap.
    pub exact: bool,
}

/// `data_range = None` uses the reference's pixel extremes.
pub fn psnr<F: Scalar>(test: &Image<F>, reference: &Image<F>, data_range: Option<f64>) -> Result<Psnr> {
    ensure_same_dims(test, reference, "psnr")?;
    let range = match data_range {
        Some(r) => r,
        None => {
            let (lo, hi) = reference.pixel_extremes();
            (hi - lo).to_f64_c()
        }
    };
    if !(range > 0.0) {
        return Err(VdeError::InvalidArgument(format!(
            "psnr data range must be positive, got {range}"
        )));
    }
    let mut mse = 0.0f64;
    for (&a, &b) in test.pixels().iter().zip(reference.pixels()) {
        let d = a.to_f64_c() - b.to_f64_c();
        mse += d * d;
    }
    mse /= test.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(Psnr {
            db: PSNR_EXACT_CAP_DB,
            exact: true,
        });
    }
    Ok(Psnr {
        db: 10.0 * (range * range / mse).log10(),
        exact: false,
    })
}

/// Mean structural similarity over all fully-interior window positions,
/// Gaussian-weighted local statistics.
pub fn ssim<F: Scalar>(test: &Image<F>, reference: &Image<F>, data_range: Option<f64>) -> Result<f64> {
    ensure_same_dims(test, reference, "ssim")?;
    let (w, h) = (test.width(), test.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(VdeError::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let range = match data_range {
        Some(r) => r,
        None => {
            let (lo, hi) = reference.pixel_extremes();
            (hi - lo).to_f64_c()
        }
    };
    if !(range > 0.0) {
        return Err(VdeError::InvalidArgument(format!(
            "ssim data range must be positive, got {range}"
        )));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let taps: Vec<f64> = gaussian_kernel_1d(SSIM_WINDOW, SSIM_SIGMA)?;

    let x: Vec<f64> = test.pixels().iter().map(|v| v.to_f64_c()).collect();
    let y: Vec<f64> = reference.pixels().iter().map(|v| v.to_f64_c()).collect();

    let mut total = 0.0f64;
    let mut count = 0usize;
    for wy in 0..=h - SSIM_WINDOW {
        for wx in 0..=w - SSIM_WINDOW {
            let mut mx = 0.0;
            let mut my = 0.0;
            let mut mxx = 0.0;
            let mut myy = 0.0;
            let mut mxy = 0.0;
            for dy in 0..SSIM_WINDOW {
                let row = (wy + dy) * w + wx;
                let ty = taps[dy];
                for dx in 0..SSIM_WINDOW {
                    let wgt = ty * taps[dx];
                    let a = x[row + dx];
                    let b = y[row + dx];
                    mx += wgt * a;
                    my += wgt * b;
                    mxx += wgt * a * a;
                    myy += wgt * b * b;
                    mxy += wgt * a * b;
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let cov = mxy - mx * my;
            let val = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += val;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Relative mean absolute error in percent:
/// `100 * sum|test - reference| / sum|reference|`.
pub fn rmae<F: Scalar>(test: &Image<F>, reference: &Image<F>) -> Result<f64> {
    ensure_same_dims(test, reference, "rmae")?;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&a, &b) in test.pixels().iter().zip(reference.pixels()) {
        num += (a.to_f64_c() - b.to_f64_c()).abs();
        den += b.to_f64_c().abs();
    }
    if den == 0.0 {
        return Err(VdeError::InvalidArgument(
            "rmae reference is all zeros".into(),
        ));
    }
    Ok(100.0 * num / den)
}

/// All three metrics for one image pair.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub psnr_db: f64,
    /// SSIM in `[-1, 1]`; CSV output reports it multiplied by 100.
    pub ssim: f64,
    pub rmae_percent: f64,
    pub data_range: f64,
    pub exact: bool,
}

pub fn metric_report<F: Scalar>(test: &Image<F>, reference: &Image<F>) -> Result<MetricReport> {
    let (lo, hi) = reference.pixel_extremes();
    let range = (hi - lo).to_f64_c();
    let p = psnr(test, reference, Some(range))?;
    Ok(MetricReport {
        psnr_db: p.db,
        ssim: ssim(test, reference, Some(range))?,
        rmae_percent: rmae(test, reference)?,
        data_range: range,
        exact: p.exact,
    })
}

/// One evaluated case: reports for the generated bone image and for the
/// suppressed soft-tissue image.
#[derive(Debug, Clone)]
pub struct CaseReport {
    pub case_id: String,
    pub bone: MetricReport,
    pub soft: MetricReport,
}

/// Outcome of a dataset evaluation; `missing` lists cases that could not be
/// processed (the run continues past them).
pub struct EvalOutcome {
    pub cases: Vec<CaseReport>,
    pub missing: Vec<String>,
}

/// Evaluate every test-split case of a manifest: `predict` maps a loaded
/// sample to its raw-space (virtual bone, virtual soft) pair, and each pair
/// is scored against the ground truth. Cases that fail to load or predict
/// are listed in `missing` and the run continues.
pub fn evaluate_pairs<F, P>(entries: &[ManifestEntry], predict: P) -> EvalOutcome
where
    F: Scalar,
    P: Fn(&DESample<F>) -> Result<(Image<F>, Image<F>)> + Sync,
{
    let test: Vec<&ManifestEntry> = entries.iter().filter(|e| e.split == Split::Test).collect();
    let results: Vec<(String, Result<CaseReport>)> = test
        .par_iter()
        .map(|entry| {
            let report = (|| -> Result<CaseReport> {
                let sample = load_sample::<F>(entry)?;
                let soft_gt = sample.soft.clone().ok_or_else(|| {
                    VdeError::InvalidArgument(format!("case {} has no soft image", entry.id))
                })?;
                let (bone_hat, soft_hat) = predict(&sample)?;
                Ok(CaseReport {
                    case_id: entry.id.clone(),
                    bone: metric_report(&bone_hat, &sample.bone)?,
                    soft: metric_report(&soft_hat, &soft_gt)?,
                })
            })();
            (entry.id.clone(), report)
        })
        .collect();

    let mut cases = Vec::new();
    let mut missing = Vec::new();
    for (id, r) in results {
        match r {
            Ok(c) => cases.push(c),
            Err(_) => missing.push(id),
        }
    }
    EvalOutcome { cases, missing }
}

/// Mean and sample standard deviation of a column.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Write the evaluation CSV: one row per case per image kind, then four
/// footer rows (mean and std for each kind). Header:
/// `case_id,kind,psnr_db,ssim_x100,rmae_percent,exact_flag`.
pub fn write_eval_csv(path: &Path, outcome: &EvalOutcome) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| VdeError::io(format!("creating {}", path.display()), e))?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| VdeError::io(format!("writing {}", path.display()), e);
    writeln!(out, "case_id,kind,psnr_db,ssim_x100,rmae_percent,exact_flag").map_err(io_err)?;
    let row = |r: &MetricReport| -> (f64, f64, f64, u8) {
        (r.psnr_db, r.ssim * 100.0, r.rmae_percent, r.exact as u8)
    };
    for c in &outcome.cases {
        for (kind, rep) in [("bone", &c.bone), ("soft", &c.soft)] {
            let (p, s, r, e) = row(rep);
            writeln!(out, "{},{kind},{p},{s},{r},{e}", c.case_id).map_err(io_err)?;
        }
    }
    for kind in ["bone", "soft"] {
        let reports: Vec<&MetricReport> = outcome
            .cases
            .iter()
            .map(|c| if kind == "bone" { &c.bone } else { &c.soft })
            .collect();
        let ps: Vec<f64> = reports.iter().map(|r| r.psnr_db).collect();
        let ss: Vec<f64> = reports.iter().map(|r| r.ssim * 100.0).collect();
        let rs: Vec<f64> = reports.iter().map(|r| r.rmae_percent).collect();
        let (pm, pd) = mean_std(&ps);
        let (sm, sd) = mean_std(&ss);
        let (rm, rd) = mean_std(&rs);
        writeln!(out, "mean,{kind},{pm},{sm},{rm},0").map_err(io_err)?;
        writeln!(out, "std,{kind},{pd},{sd},{rd},0").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

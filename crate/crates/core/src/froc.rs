//! Free-response ROC analysis of lesion-localization marks.
//!
//! A mark inside the acceptance radius of at least one lesion center is a
//! lesion localization; it is assigned to the nearest such lesion, and each
//! lesion is credited at most once, by its highest-scoring qualifying mark.
//! Every other mark is a non-lesion localization. Sweeping thresholds over
//! the distinct mark scores yields the FROC curve (sensitivity versus false
//! positives per image); confidence intervals come from case-level
//! bootstrap resampling.

use crate::error::{Result, VdeError};
use crate::phantom::LesionRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// One scored observer/detector mark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub image_id: String,
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Lesion ground truth plus marks for one image. `lesions` may be empty
/// (a normal case).
#[derive(Debug, Clone)]
pub struct FrocCase {
    pub image_id: String,
    pub lesions: Vec<LesionRecord>,
    pub marks: Vec<Mark>,
}

/// Marks partitioned by [`classify_marks`].
#[derive(Debug, Clone)]
pub struct ClassifiedMarks {
    /// `(lesion index, credited mark)` pairs; at most one per lesion.
    pub lesion_localizations: Vec<(usize, Mark)>,
    pub non_lesion_localizations: Vec<Mark>,
}

/// Partition a case's marks into lesion and non-lesion localizations under
/// the acceptance `radius`.
pub fn classify_marks(case: &FrocCase, radius: f64) -> Result<ClassifiedMarks> {
    if !(radius > 0.0) {
        return Err(VdeError::InvalidArgument(format!(
            "acceptance radius must be positive, got {radius}"
        )));
    }
    // nearest qualifying lesion per mark (ties to the lowest lesion index)
    let mut assigned: Vec<Option<usize>> = Vec::with_capacity(case.marks.len());
    for m in &case.marks {
        let mut best: Option<(f64, usize)> = None;
        for (li, l) in case.lesions.iter().enumerate() {
            let d = ((m.x - l.x).powi(2) + (m.y - l.y).powi(2)).sqrt();
            if d <= radius {
                let better = match best {
                    None => true,
                    Some((bd, _)) => d < bd,
                };
                if better {
                    best = Some((d, li));
                }
            }
        }
        assigned.push(best.map(|(_, li)| li));
    }
    // credit each lesion by its highest-scoring assigned mark
    let mut credited: Vec<Option<usize>> = vec![None; case.lesions.len()];
    for (mi, a) in assigned.iter().enumerate() {
        if let Some(li) = a {
            let replace = match credited[*li] {
                None => true,
                Some(prev) => case.marks[mi].score > case.marks[prev].score,
            };
            if replace {
                credited[*li] = Some(mi);
            }
        }
    }
    let credited_set: Vec<usize> = credited.iter().flatten().copied().collect();
    let mut lesion_localizations = Vec::new();
    for (li, mi) in credited.iter().enumerate() {
        if let Some(mi) = mi {
            lesion_localizations.push((li, case.marks[*mi].clone()));
        }
    }
    let non_lesion_localizations = case
        .marks
        .iter()
        .enumerate()
        .filter(|(mi, _)| !credited_set.contains(mi))
        .map(|(_, m)| m.clone())
        .collect();
    Ok(ClassifiedMarks {
        lesion_localizations,
        non_lesion_localizations,
    })
}

/// FROC operating points at descending score thresholds; both coordinates
/// are non-decreasing along the curve.
#[derive(Debug, Clone, PartialEq)]
pub struct FrocCurve {
    pub points: Vec<(f64, f64)>,
}

/// Build the FROC curve for a case set. Errors when the set contains no
/// lesions; a set with no marks yields the single point `(0, 0)`.
pub fn froc_curve(cases: &[FrocCase], radius: f64) -> Result<FrocCurve> {
    if cases.is_empty() {
        return Err(VdeError::InvalidArgument("no cases".into()));
    }
    let total_lesions: usize = cases.iter().map(|c| c.lesions.len()).sum();
    if total_lesions == 0 {
        return Err(VdeError::InvalidArgument(
            "froc curve needs at least one lesion".into(),
        ));
    }
    let n_images = cases.len() as f64;

    let mut ll_scores = Vec::new();
    let mut nl_scores = Vec::new();
    for case in cases {
        let classified = classify_marks(case, radius)?;
        ll_scores.extend(classified.lesion_localizations.iter().map(|(_, m)| m.score));
        nl_scores.extend(classified.non_lesion_localizations.iter().map(|m| m.score));
    }

    let mut thresholds: Vec<f64> = ll_scores.iter().chain(nl_scores.iter()).copied().collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    thresholds.dedup();
    if thresholds.is_empty() {
        return Ok(FrocCurve {
            points: vec![(0.0, 0.0)],
        });
    }

    let points = thresholds
        .iter()
        .map(|&t| {
            let tp = ll_scores.iter().filter(|&&s| s >= t).count() as f64;
            let fp = nl_scores.iter().filter(|&&s| s >= t).count() as f64;
            (fp / n_images, tp / total_lesions as f64)
        })
        .collect();
    Ok(FrocCurve { points })
}

/// Sensitivity at the largest operating point with `fp_per_image <= fp`
/// (step interpolation); 0 when the curve starts above `fp`.
pub fn sensitivity_at_fp(curve: &FrocCurve, fp: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|(f, _)| *f <= fp)
        .map(|(_, s)| *s)
        .fold(0.0, f64::max)
}

/// Bootstrap summary for one false-positive level.
#[derive(Debug, Clone)]
pub struct BootstrapLevel {
    pub fp: f64,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
}

#[derive(Debug, Clone)]
pub struct BootstrapReport {
    pub levels: Vec<BootstrapLevel>,
    pub n_boot: usize,
    /// Replicates dropped because the resample held no lesions.
    pub skipped: usize,
}

/// Case-level bootstrap of sensitivity at the given FP levels: resample
/// cases with replacement, rebuild the curve per replicate, and report the
/// replicate mean with 2.5/97.5 percentile bounds. Replicates are seeded
/// substreams of `seed`, so the result is deterministic and independent of
/// scheduling.
pub fn bootstrap_ci(
    cases: &[FrocCase],
    radius: f64,
    fp_levels: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    if n_boot < 100 {
        return Err(VdeError::InvalidArgument(format!(
            "n_boot must be >= 100, got {n_boot}"
        )));
    }
    // validate inputs once up front
    froc_curve(cases, radius)?;

    let replicates: Vec<Option<Vec<f64>>> = (0..n_boot)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(seed, rep as u64));
            let resample: Vec<FrocCase> = (0..cases.len())
                .map(|_| cases[rng.gen_range(0..cases.len())].clone())
                .collect();
            if resample.iter().all(|c| c.lesions.is_empty()) {
                return None;
            }
            let curve = froc_curve(&resample, radius).expect("lesions present");
            Some(
                fp_levels
                    .iter()
                    .map(|&fp| sensitivity_at_fp(&curve, fp))
                    .collect(),
            )
        })
        .collect();

    let kept: Vec<&Vec<f64>> = replicates.iter().flatten().collect();
    let skipped = n_boot - kept.len();
    if kept.is_empty() {
        return Err(VdeError::InvalidArgument(
            "all bootstrap replicates were degenerate".into(),
        ));
    }
    let levels = fp_levels
        .iter()
        .enumerate()
        .map(|(li, &fp)| {
            let mut vals: Vec<f64> = kept.iter().map(|r| r[li]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).expect("finite sensitivities"));
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            BootstrapLevel {
                fp,
                mean,
                lo95: percentile(&vals, 0.025),
                hi95: percentile(&vals, 0.975),
            }
        })
        .collect();
    Ok(BootstrapReport {
        levels,
        n_boot,
        skipped,
    })
}

fn replicate_seed(master: u64, rep: u64) -> u64 {
    let mut z = master ^ rep.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Linear-interpolation percentile of sorted values (`q` in `[0, 1]`).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

// ---------------------------------------------------------------------------
// CSV and SVG output
// ---------------------------------------------------------------------------

pub fn read_marks_csv(path: &Path) -> Result<Vec<Mark>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| VdeError::format(path.display().to_string(), e.to_string()))?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec.map_err(|e| VdeError::format(path.display().to_string(), e.to_string()))?);
    }
    Ok(out)
}

pub fn write_curve_csv(path: &Path, curve: &FrocCurve) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| VdeError::io(format!("creating {}", path.display()), e))?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| VdeError::io(format!("writing {}", path.display()), e);
    writeln!(out, "fp_per_image,sensitivity").map_err(io_err)?;
    for (fp, s) in &curve.points {
        writeln!(out, "{fp},{s}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_bootstrap_csv(path: &Path, report: &BootstrapReport) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| VdeError::io(format!("creating {}", path.display()), e))?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| VdeError::io(format!("writing {}", path.display()), e);
    writeln!(out, "fp_per_image,mean_sensitivity,lo95,hi95,n_boot,skipped").map_err(io_err)?;
    for l in &report.levels {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            l.fp, l.mean, l.lo95, l.hi95, report.n_boot, report.skipped
        )
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Render one or two FROC curves as a standalone SVG plot (step curves,
/// fixed axes `[0, fp_max] x [0, 1]`).
pub fn write_curve_svg(path: &Path, curves: &[(&str, &FrocCurve)]) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const ML: f64 = 60.0; // left margin
    const MB: f64 = 50.0; // bottom margin
    const MT: f64 = 20.0;
    const MR: f64 = 20.0;
    let colors = ["#1f77b4", "#d62728", "#2ca02c"];

    let fp_max = curves
        .iter()
        .flat_map(|(_, c)| c.points.iter().map(|(f, _)| *f))
        .fold(1.0f64, f64::max)
        .ceil();

    let px = |fp: f64| ML + (fp / fp_max) * (W - ML - MR);
    let py = |s: f64| H - MB - s * (H - MB - MT);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB
    ));
    // ticks and labels
    let x_ticks = (fp_max.round() as usize).max(1);
    for i in 0..=x_ticks {
        let fp = i as f64 * fp_max / x_ticks as f64;
        let x = px(fp);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            H - MB,
            H - MB + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{fp:.1}</text>\n",
            H - MB + 18.0
        ));
    }
    for i in 0..=5 {
        let s = i as f64 / 5.0;
        let y = py(s);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{ML}\" y2=\"{y}\" stroke=\"black\"/>\n",
            ML - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{s:.1}</text>\n",
            ML - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">false positives per image</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">sensitivity</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    ));

    for (ci, (label, curve)) in curves.iter().enumerate() {
        let color = colors[ci % colors.len()];
        // step path starting from (0, 0)
        let mut d = format!("M {} {}", px(0.0), py(0.0));
        let mut prev_s = 0.0;
        for (fp, s) in &curve.points {
            d.push_str(&format!(" L {} {}", px(*fp), py(prev_s)));
            d.push_str(&format!(" L {} {}", px(*fp), py(*s)));
            prev_s = *s;
        }
        d.push_str(&format!(" L {} {}", px(fp_max), py(prev_s)));
        svg.push_str(&format!(
            "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n"
        ));
        // legend
        let ly = MT + 16.0 + 18.0 * ci as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            W - 180.0,
            W - 150.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\">{label}</text>\n",
            W - 144.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| VdeError::io(format!("writing {}", path.display()), e))
}

/// Group marks and lesions into cases (union of image ids, sorted).
pub fn assemble_cases(lesions: &[LesionRecord], marks: &[Mark]) -> Vec<FrocCase> {
    let mut ids: Vec<String> = lesions
        .iter()
        .map(|l| l.image_id.clone())
        .chain(marks.iter().map(|m| m.image_id.clone()))
        .collect();
    ids.sort();
    ids.dedup();
    ids.into_iter()
        .map(|id| FrocCase {
            lesions: lesions.iter().filter(|l| l.image_id == id).cloned().collect(),
            marks: marks.iter().filter(|m| m.image_id == id).cloned().collect(),
            image_id: id,
        })
        .collect()
}

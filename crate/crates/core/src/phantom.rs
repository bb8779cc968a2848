//! Procedural dual-energy chest phantoms.
//!
//! Each sample is a (standard, bone, soft) triple composed additively in
//! normalized log-attenuation space: `standard = soft + bone + noise`. The
//! soft image is a smooth background of Gaussian blobs plus bright disk
//! nodules (recorded as lesions for FROC analysis); the bone image holds
//! curved rib bands, a vertical spine band and small bright calcification
//! disks. Additivity keeps the ideal output of the suppression stage
//! analytically known, and every sample is a pure function of its spec.

use crate::error::{Result, VdeError};
use crate::image::{DESample, Image};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Parameters of one synthetic phantom.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    /// Square image side in pixels (>= 64).
    pub size: usize,
    pub n_ribs: usize,
    /// Rib band thickness in pixels.
    pub rib_thickness: f64,
    pub calcification_count: usize,
    pub calcification_radius: f64,
    pub soft_blob_count: usize,
    /// Bright soft-tissue disk "nodules", recorded as lesions.
    pub nodule_count: usize,
    pub nodule_radius: f64,
    /// Additive Gaussian noise on the standard image (normalized units).
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 128,
            n_ribs: 8,
            rib_thickness: 2.0,
            calcification_count: 3,
            calcification_radius: 2.0,
            soft_blob_count: 6,
            nodule_count: 2,
            nodule_radius: 6.0,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 64 {
            return Err(VdeError::InvalidArgument(format!(
                "phantom size must be >= 64, got {}",
                self.size
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(VdeError::InvalidArgument(
                "noise_sigma must be >= 0".into(),
            ));
        }
        if self.rib_thickness < 0.0 || self.calcification_radius < 0.0 || self.nodule_radius < 0.0
        {
            return Err(VdeError::InvalidArgument(
                "phantom radii must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Ground-truth lesion: a nodule disk in the soft-tissue image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionRecord {
    pub image_id: String,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

/// Anti-aliased disk: 1 at the core, linear falloff over the last pixel.
fn disk_profile(dist: f64, radius: f64) -> f64 {
    (radius + 0.5 - dist).clamp(0.0, 1.0)
}

/// Quadratic Bezier point at parameter `t`.
fn bezier(p0: (f64, f64), p1: (f64, f64), p2: (f64, f64), t: f64) -> (f64, f64) {
    let u = 1.0 - t;
    (
        u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0,
        u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1,
    )
}

/// Stamp an anti-aliased band of `thickness` along a quadratic Bezier curve,
/// additive with `amp`, using max-composition per pixel so self-overlap does
/// not double intensity.
fn stamp_bezier_band(
    canvas: &mut [f64],
    size: usize,
    p0: (f64, f64),
    p1: (f64, f64),
    p2: (f64, f64),
    thickness: f64,
    amp: f64,
) {
    let half = thickness * 0.5;
    let n_samples = (size * 3).max(64);
    let pts: Vec<(f64, f64)> = (0..=n_samples)
        .map(|i| bezier(p0, p1, p2, i as f64 / n_samples as f64))
        .collect();

    // bounding box of the curve, padded by the band radius
    let pad = half + 1.5;
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    let x0 = ((x_lo - pad).floor().max(0.0)) as usize;
    let x1 = ((x_hi + pad).ceil().min(size as f64 - 1.0)) as usize;
    let y0 = ((y_lo - pad).floor().max(0.0)) as usize;
    let y1 = ((y_hi + pad).ceil().min(size as f64 - 1.0)) as usize;
    if x0 > x1 || y0 > y1 {
        return;
    }

    for y in y0..=y1 {
        for x in x0..=x1 {
            let (fx, fy) = (x as f64, y as f64);
            let mut d2 = f64::MAX;
            for &(cx, cy) in &pts {
                let dd = (fx - cx) * (fx - cx) + (fy - cy) * (fy - cy);
                if dd < d2 {
                    d2 = dd;
                }
            }
            let profile = disk_profile(d2.sqrt(), half);
            if profile > 0.0 {
                canvas[y * size + x] += amp * profile;
            }
        }
    }
}

fn stamp_disk(canvas: &mut [f64], size: usize, cx: f64, cy: f64, radius: f64, amp: f64) {
    let pad = radius + 1.5;
    let x0 = ((cx - pad).floor().max(0.0)) as usize;
    let x1 = ((cx + pad).ceil().min(size as f64 - 1.0)) as usize;
    let y0 = ((cy - pad).floor().max(0.0)) as usize;
    let y1 = ((cy + pad).ceil().min(size as f64 - 1.0)) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            canvas[y * size + x] += amp * disk_profile(d, radius);
        }
    }
}

/// Generate one phantom triple plus its lesion records. Deterministic for a
/// fixed spec; all three images share the same bounds metadata.
pub fn generate_sample<F: Scalar>(
    spec: &PhantomSpec,
    id: &str,
) -> Result<(DESample<F>, Vec<LesionRecord>)> {
    spec.validate()?;
    let s = spec.size;
    let sf = s as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // --- soft tissue: constant base + smooth random blobs ---
    let mut soft = vec![0.2f64; s * s];
    for _ in 0..spec.soft_blob_count {
        let cx = rng.gen_range(0.1 * sf..0.9 * sf);
        let cy = rng.gen_range(0.1 * sf..0.9 * sf);
        let sigma = rng.gen_range(sf / 8.0..sf / 3.0);
        let amp = rng.gen_range(0.1..0.45);
        for y in 0..s {
            for x in 0..s {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                soft[y * s + x] += amp * (-0.5 * d2 / (sigma * sigma)).exp();
            }
        }
    }

    // --- nodules: conspicuous bright disks, kept away from the border ---
    let mut lesions = Vec::with_capacity(spec.nodule_count);
    for _ in 0..spec.nodule_count {
        let margin = 2.0 * spec.nodule_radius + 4.0;
        let cx = rng.gen_range(margin..sf - margin);
        let cy = rng.gen_range(margin..sf - margin);
        let amp = rng.gen_range(0.2..0.35);
        stamp_disk(&mut soft, s, cx, cy, spec.nodule_radius, amp);
        lesions.push(LesionRecord {
            image_id: id.to_string(),
            x: cx,
            y: cy,
            radius: spec.nodule_radius,
        });
    }

    // --- bone: spine band + curved ribs + calcifications, all >= 0 ---
    let mut bone = vec![0.0f64; s * s];
    if spec.n_ribs > 0 {
        // vertical spine band around the image center
        let spine_x = sf * rng.gen_range(0.45..0.55);
        let spine_w = sf / 24.0;
        stamp_bezier_band(
            &mut bone,
            s,
            (spine_x, 0.0),
            (spine_x, sf * 0.5),
            (spine_x, sf - 1.0),
            spine_w,
            0.24,
        );
        for r in 0..spec.n_ribs {
            let frac = (r as f64 + 0.7) / (spec.n_ribs as f64 + 0.7);
            let y_base = frac * sf * 0.95;
            let sag = rng.gen_range(0.05..0.16) * sf;
            let amp = rng.gen_range(0.3..0.5);
            stamp_bezier_band(
                &mut bone,
                s,
                (0.0, y_base),
                (sf * 0.5, y_base - sag),
                (sf - 1.0, y_base + rng.gen_range(-0.03..0.03) * sf),
                spec.rib_thickness,
                amp,
            );
        }
    }
    for _ in 0..spec.calcification_count {
        let cx = rng.gen_range(0.1 * sf..0.9 * sf);
        let cy = rng.gen_range(0.1 * sf..0.9 * sf);
        stamp_disk(&mut bone, s, cx, cy, spec.calcification_radius, 0.5);
    }

    // --- standard = soft + bone + noise ---
    let mut standard = vec![0.0f64; s * s];
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| VdeError::InvalidArgument(e.to_string()))?;
        for i in 0..s * s {
            standard[i] = soft[i] + bone[i] + normal.sample(&mut rng);
        }
    } else {
        for i in 0..s * s {
            standard[i] = soft[i] + bone[i];
        }
    }

    // shared bounds across the triple
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for v in soft.iter().chain(bone.iter()).chain(standard.iter()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }

    let to_image = |data: Vec<f64>| -> Result<Image<F>> {
        let pixels: Vec<F> = data.into_iter().map(F::from_f64_c).collect();
        Image::new(s, s, pixels, F::from_f64_c(lo), F::from_f64_c(hi))
    };
    let sample = DESample::new(
        id,
        to_image(standard)?,
        to_image(bone)?,
        Some(to_image(soft)?),
    )?;
    Ok((sample, lesions))
}

/// One manifest row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub standard_path: PathBuf,
    pub bone_path: PathBuf,
    pub soft_path: PathBuf,
    pub lesions_path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// FNV-1a, used for the split assignment so it depends only on the id.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Assign train/test splits by ranking id hashes: the `n_test` ids with the
/// largest hashes form the test split, giving exact split counts while
/// keeping the assignment a function of the ids alone.
pub fn assign_splits(ids: &[String], train_fraction: f64) -> Vec<Split> {
    let n = ids.len();
    let n_train = (train_fraction * n as f64).round().clamp(0.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (fnv1a(ids[i].as_bytes()), i));
    let mut splits = vec![Split::Train; n];
    for &i in order.iter().skip(n_train) {
        splits[i] = Split::Test;
    }
    splits
}

/// Derive the per-sample seed from the dataset base seed (splitmix64 step).
pub fn sample_seed(base_seed: u64, index: u64) -> u64 {
    let mut z = base_seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Write the lesion CSV (`image_id,x,y,radius`).
pub fn write_lesions_csv(path: &Path, lesions: &[LesionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| VdeError::format(path.display().to_string(), e.to_string()))?;
    for l in lesions {
        w.serialize(l)
            .map_err(|e| VdeError::format(path.display().to_string(), e.to_string()))?;
    }
    w.flush()
        .map_err(|e| VdeError::io(format!("flushing {}", path.display()), e))
}

pub fn read_lesions_csv(path: &Path) -> Result<Vec<LesionRecord>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| VdeError::format(path.display().to_string(), e.to_string()))?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec.map_err(|e| VdeError::format(path.display().to_string(), e.to_string()))?);
    }
    Ok(out)
}

/// Generate `n` phantoms under `out_dir` and write the manifest
/// (`manifest.json`, a JSON array of entries). Images go to PFM files with
/// JSON sidecars; lesions to per-sample CSVs. Per-sample work runs in
/// parallel; the manifest is written once at the end.
pub fn generate_dataset(
    n: usize,
    base_seed: u64,
    spec_template: &PhantomSpec,
    train_fraction: f64,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    if n == 0 {
        return Err(VdeError::InvalidArgument("dataset size must be >= 1".into()));
    }
    spec_template.validate()?;
    fs::create_dir_all(out_dir)
        .map_err(|e| VdeError::io(format!("creating {}", out_dir.display()), e))?;

    let ids: Vec<String> = (0..n).map(|i| format!("case_{i:04}")).collect();
    let splits = assign_splits(&ids, train_fraction);

    let entries: Vec<Result<ManifestEntry>> = ids
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let mut spec = spec_template.clone();
            spec.seed = sample_seed(base_seed, i as u64);
            let (sample, lesions) = generate_sample::<f32>(&spec, id)?;
            let standard_path = out_dir.join(format!("{id}_standard.pfm"));
            let bone_path = out_dir.join(format!("{id}_bone.pfm"));
            let soft_path = out_dir.join(format!("{id}_soft.pfm"));
            let lesions_path = out_dir.join(format!("{id}_lesions.csv"));
            crate::image::io::write_image(&standard_path, &sample.standard, id)?;
            crate::image::io::write_image(&bone_path, &sample.bone, id)?;
            crate::image::io::write_image(&soft_path, sample.soft.as_ref().unwrap(), id)?;
            write_lesions_csv(&lesions_path, &lesions)?;
            Ok(ManifestEntry {
                id: id.clone(),
                standard_path,
                bone_path,
                soft_path,
                lesions_path,
                split: splits[i],
            })
        })
        .collect();

    let entries: Vec<ManifestEntry> = entries.into_iter().collect::<Result<_>>()?;
    write_manifest(&out_dir.join("manifest.json"), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let json = serde_json::to_string_pretty(entries)
        .map_err(|e| VdeError::format(path.display().to_string(), e.to_string()))?;
    fs::write(path, json).map_err(|e| VdeError::io(format!("writing {}", path.display()), e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text =
        fs::read_to_string(path).map_err(|e| VdeError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text)
        .map_err(|e| VdeError::format(path.display().to_string(), e.to_string()))
}

/// Load the image triple for a manifest entry.
pub fn load_sample<F: Scalar>(entry: &ManifestEntry) -> Result<DESample<F>> {
    let standard = crate::image::io::read_image(&entry.standard_path)?;
    let bone = crate::image::io::read_image(&entry.bone_path)?;
    let soft = crate::image::io::read_image(&entry.soft_path)?;
    DESample::new(entry.id.clone(), standard, bone, Some(soft))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn empty_spec(size: usize) -> PhantomSpec {
        PhantomSpec {
            size,
            n_ribs: 0,
            calcification_count: 0,
            soft_blob_count: 0,
            nodule_count: 0,
            noise_sigma: 0.0,
            seed: 5,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn empty_composition_standard_equals_soft() {
        let (s, lesions) = generate_sample::<f64>(&empty_spec(64), "t").unwrap();
        assert!(lesions.is_empty());
        assert!(s.bone.pixels().iter().all(|&v| v == 0.0));
        assert_eq!(s.standard.pixels(), s.soft.as_ref().unwrap().pixels());
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = PhantomSpec {
            size: 64,
            seed: 99,
            ..PhantomSpec::default()
        };
        let (a, la) = generate_sample::<f32>(&spec, "t").unwrap();
        let (b, lb) = generate_sample::<f32>(&spec, "t").unwrap();
        assert_eq!(a.standard.pixels(), b.standard.pixels());
        assert_eq!(a.bone.pixels(), b.bone.pixels());
        assert_eq!(la, lb);
    }

    #[test]
    fn additive_identity_without_noise() {
        let spec = PhantomSpec {
            size: 64,
            noise_sigma: 0.0,
            seed: 3,
            ..PhantomSpec::default()
        };
        let (s, _) = generate_sample::<f64>(&spec, "t").unwrap();
        let soft = s.soft.as_ref().unwrap();
        for i in 0..soft.pixels().len() {
            let sum = soft.pixels()[i] + s.bone.pixels()[i];
            assert_eq!(s.standard.pixels()[i], sum);
        }
    }

    #[test]
    fn bone_nonnegative() {
        for seed in 0..4 {
            let spec = PhantomSpec {
                size: 64,
                seed,
                ..PhantomSpec::default()
            };
            let (s, _) = generate_sample::<f64>(&spec, "t").unwrap();
            assert!(s.bone.pixels().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn nodules_conspicuous_against_annulus() {
        for seed in 0..6 {
            let spec = PhantomSpec {
                size: 96,
                seed,
                nodule_count: 3,
                ..PhantomSpec::default()
            };
            let (s, lesions) = generate_sample::<f64>(&spec, "t").unwrap();
            let soft = s.soft.as_ref().unwrap();
            for l in &lesions {
                let (mut disk_sum, mut disk_n) = (0.0, 0usize);
                let (mut ann_sum, mut ann_n) = (0.0, 0usize);
                for y in 0..96usize {
                    for x in 0..96usize {
                        let d = ((x as f64 - l.x).powi(2) + (y as f64 - l.y).powi(2)).sqrt();
                        if d <= l.radius {
                            disk_sum += soft.get(x, y);
                            disk_n += 1;
                        } else if d <= 2.0 * l.radius {
                            ann_sum += soft.get(x, y);
                            ann_n += 1;
                        }
                    }
                }
                assert!(
                    disk_sum / disk_n as f64 > ann_sum / ann_n as f64,
                    "seed {seed}: nodule at ({}, {}) not conspicuous",
                    l.x,
                    l.y
                );
            }
        }
    }

    #[test]
    fn split_counts_exact() {
        let ids: Vec<String> = (0..10).map(|i| format!("case_{i:04}")).collect();
        let splits = assign_splits(&ids, 0.8);
        assert_eq!(splits.iter().filter(|s| **s == Split::Train).count(), 8);
        assert_eq!(splits.iter().filter(|s| **s == Split::Test).count(), 2);
    }

    #[test]
    fn dataset_single_sample_layout() {
        let dir = tempdir().unwrap();
        let entries = generate_dataset(1, 7, &empty_spec(64), 0.8, dir.path()).unwrap();
        assert_eq!(entries.len(), 1);
        assert!(entries[0].standard_path.exists());
        assert!(entries[0].bone_path.exists());
        assert!(entries[0].soft_path.exists());
        assert!(entries[0].lesions_path.exists());
        let back = read_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn dataset_regeneration_is_byte_identical() {
        let spec = PhantomSpec {
            size: 64,
            ..PhantomSpec::default()
        };
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        generate_dataset(4, 11, &spec, 0.75, dir_a.path()).unwrap();
        generate_dataset(4, 11, &spec, 0.75, dir_b.path()).unwrap();
        for name in [
            "manifest.json",
            "case_0000_standard.pfm",
            "case_0002_bone.pfm",
            "case_0003_lesions.csv",
        ] {
            let a = fs::read(dir_a.path().join(name)).unwrap();
            let mut b = fs::read(dir_b.path().join(name)).unwrap();
            if name == "manifest.json" {
                // manifests embed absolute paths; compare with dirs swapped
                let sa = String::from_utf8(a.clone()).unwrap();
                let sb = String::from_utf8(b).unwrap();
                let sb = sb.replace(
                    dir_b.path().to_str().unwrap(),
                    dir_a.path().to_str().unwrap(),
                );
                assert_eq!(sa, sb);
                b = sa.into_bytes();
            }
            assert_eq!(a, b, "file {name} differs between regenerations");
        }
    }
}

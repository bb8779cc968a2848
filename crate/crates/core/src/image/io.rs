//! Image file formats.
//!
//! Two containers are supported, selected by extension:
//!
//! * `.pfm` — grayscale portable float map (`Pf`), little-endian
//!   (scale -1.0), bottom-to-top scanlines. Lossless for `f32` data; the
//!   pipeline's working format.
//! * `.png` — 16-bit grayscale. Raw intensities are mapped linearly onto
//!   the 0..65535 code range using the image's recorded bounds.
//!
//! Either container may be accompanied by a JSON sidecar
//! (`<stem>.json`, `{id, intensity_min, intensity_max}`) carrying the raw
//! bounds. Without a sidecar, bounds are inferred from the stored pixel
//! extremes.

use super::Image;
use crate::error::{Result, VdeError};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Per-image sidecar record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageMeta {
    pub id: String,
    pub intensity_min: f64,
    pub intensity_max: f64,
}

/// Sidecar path convention: the image path with its extension replaced by
/// `json` (`foo.pfm` -> `foo.json`).
pub fn sidecar_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("json")
}

pub fn write_sidecar(image_path: &Path, meta: &ImageMeta) -> Result<()> {
    let path = sidecar_path(image_path);
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| VdeError::format(path.display().to_string(), e.to_string()))?;
    fs::write(&path, json).map_err(|e| VdeError::io(format!("writing {}", path.display()), e))
}

pub fn read_sidecar(image_path: &Path) -> Result<Option<ImageMeta>> {
    let path = sidecar_path(image_path);
    if !path.exists() {
        return Ok(None);
    }
    let text =
        fs::read_to_string(&path).map_err(|e| VdeError::io(format!("reading {}", path.display()), e))?;
    let meta = serde_json::from_str(&text)
        .map_err(|e| VdeError::format(path.display().to_string(), e.to_string()))?;
    Ok(Some(meta))
}

/// Write a grayscale PFM (bottom-to-top scanlines, scale -1.0 = little endian).
pub fn write_pfm<F: Scalar>(path: &Path, image: &Image<F>) -> Result<()> {
    let file = fs::File::create(path)
        .map_err(|e| VdeError::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| VdeError::io(format!("writing {}", path.display()), e);
    write!(w, "Pf\n{} {}\n-1.0\n", image.width(), image.height()).map_err(io_err)?;
    for y in (0..image.height()).rev() {
        for x in 0..image.width() {
            w.write_all(&image.get(x, y).to_f32_c().to_le_bytes())
                .map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Read a grayscale PFM. Bounds come from the sidecar when present,
/// otherwise from the stored extremes.
pub fn read_pfm<F: Scalar>(path: &Path) -> Result<Image<F>> {
    let bytes =
        fs::read(path).map_err(|e| VdeError::io(format!("reading {}", path.display()), e))?;
    let display = path.display().to_string();
    let ferr = |d: &str| VdeError::format(display.clone(), d.to_string());

    // header: four whitespace-delimited tokens, then one whitespace byte
    fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start != *pos).then(|| &bytes[start..*pos])
    }

    let mut pos = 0usize;
    let magic = token(&bytes, &mut pos).ok_or_else(|| ferr("truncated PFM header"))?;
    if magic != b"Pf" {
        return Err(ferr("not a grayscale PFM (expected 'Pf')"));
    }
    let parse_num = |t: Option<&[u8]>, what: &str| -> Result<f64> {
        t.and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| ferr(&format!("bad {what}")))
    };
    let width = parse_num(token(&bytes, &mut pos), "width")? as usize;
    let height = parse_num(token(&bytes, &mut pos), "height")? as usize;
    let scale = parse_num(token(&bytes, &mut pos), "scale")?;
    if width == 0 || height == 0 {
        return Err(ferr("zero dimension"));
    }
    if scale >= 0.0 {
        return Err(ferr("big-endian PFM not supported"));
    }
    pos += 1; // single whitespace after the scale token
    let expected = width * height * 4;
    if bytes.len() < pos + expected {
        return Err(ferr("truncated PFM data"));
    }
    let mut pixels = vec![F::zero(); width * height];
    for y in 0..height {
        let dst_y = height - 1 - y;
        for x in 0..width {
            let o = pos + (y * width + x) * 4;
            let v = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
            pixels[dst_y * width + x] = F::from_f32_c(v);
        }
    }
    let img = Image::from_pixels(width, height, pixels)?;
    match read_sidecar(path)? {
        Some(meta) => Ok(img.with_bounds(
            F::from_f64_c(meta.intensity_min),
            F::from_f64_c(meta.intensity_max),
        )),
        None => Ok(img),
    }
}

/// Write a 16-bit grayscale PNG, mapping the recorded bounds onto 0..65535.
/// A constant-range image writes as all zeros.
pub fn write_png16<F: Scalar>(path: &Path, image: &Image<F>) -> Result<()> {
    let lo = image.intensity_min().to_f64_c();
    let hi = image.intensity_max().to_f64_c();
    let range = hi - lo;
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        image.width() as u32,
        image.height() as u32,
    );
    for (x, y, p) in buf.enumerate_pixels_mut() {
        let v = image.get(x as usize, y as usize).to_f64_c();
        let code = if range > 0.0 {
            (((v - lo) / range) * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        *p = image::Luma([code]);
    }
    buf.save(path)
        .map_err(|e| VdeError::format(path.display().to_string(), e.to_string()))
}

/// Read a grayscale PNG (8- or 16-bit). With a sidecar, codes are mapped back
/// into `[intensity_min, intensity_max]`; without one, raw code values are
/// kept and bounds are inferred from the stored extremes.
pub fn read_png16<F: Scalar>(path: &Path) -> Result<Image<F>> {
    let dynimg = image::open(path)
        .map_err(|e| VdeError::format(path.display().to_string(), e.to_string()))?;
    let gray = dynimg.into_luma16();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let meta = read_sidecar(path)?;
    let mut pixels = vec![F::zero(); w * h];
    match &meta {
        Some(m) => {
            let range = m.intensity_max - m.intensity_min;
            for (x, y, p) in gray.enumerate_pixels() {
                let v = m.intensity_min + (p.0[0] as f64 / 65535.0) * range;
                pixels[y as usize * w + x as usize] = F::from_f64_c(v);
            }
            Ok(Image::from_pixels(w, h, pixels)?.with_bounds(
                F::from_f64_c(m.intensity_min),
                F::from_f64_c(m.intensity_max),
            ))
        }
        None => {
            for (x, y, p) in gray.enumerate_pixels() {
                pixels[y as usize * w + x as usize] = F::from_f64_c(p.0[0] as f64);
            }
            Image::from_pixels(w, h, pixels)
        }
    }
}

/// Read an image by extension (`.pfm` or `.png`).
pub fn read_image<F: Scalar>(path: &Path) -> Result<Image<F>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => read_pfm(path),
        Some("png") => read_png16(path),
        other => Err(VdeError::InvalidArgument(format!(
            "unsupported image extension {:?} for {}",
            other,
            path.display()
        ))),
    }
}

/// Write an image by extension (`.pfm` or `.png`) plus its sidecar.
pub fn write_image<F: Scalar>(path: &Path, image: &Image<F>, id: &str) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => write_pfm(path, image)?,
        Some("png") => write_png16(path, image)?,
        other => {
            return Err(VdeError::InvalidArgument(format!(
                "unsupported image extension {:?} for {}",
                other,
                path.display()
            )))
        }
    }
    write_sidecar(
        path,
        &ImageMeta {
            id: id.to_string(),
            intensity_min: image.intensity_min().to_f64_c(),
            intensity_max: image.intensity_max().to_f64_c(),
        },
    )
}

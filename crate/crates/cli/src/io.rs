//! Frames, masks and rasters on disk.
//!
//! Only lossless formats are read: PNG, PNM, TIFF and BMP, 8 or 16 bits,
//! grey or RGB. Values are scaled to `[0, 255]` whatever the bit depth.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use sobolev_track::viz;
use sobolev_track::{Grid2D, RegionMask, ScalarField};

use crate::error::CliError;

const EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm", "pbm", "tif", "tiff", "bmp"];

fn data_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {msg}", path.display()))
}

/// Expands `%d` or `%0Nd` with `k`.
fn expand(pattern: &str, k: usize) -> Option<String> {
    let start = pattern.find('%')?;
    let rest = &pattern[start + 1..];
    let end = rest.find('d')?;
    let spec = &rest[..end];
    let width: usize = if spec.is_empty() { 0 } else { spec.parse().ok()? };
    Some(format!("{}{:0width$}{}", &pattern[..start], k, &rest[end + 1..]))
}

/// Files named by a sequence spec: a directory (its image files in name
/// order) or a numbered pattern, counted up from 0 or 1 until a file is
/// missing.
pub fn resolve_sequence(spec: &str) -> Result<Vec<PathBuf>, CliError> {
    let dir = Path::new(spec);
    if dir.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| data_err(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(data_err(dir, "no image files"));
        }
        return Ok(files);
    }
    if spec.contains('%') {
        let at = |k| expand(spec, k).map(PathBuf::from);
        let first = at(0).ok_or_else(|| CliError::Usage(format!("bad sequence pattern {spec:?}")))?;
        let mut k = if first.exists() { 0 } else { 1 };
        let mut files = Vec::new();
        while let Some(p) = at(k).filter(|p| p.exists()) {
            files.push(p);
            k += 1;
        }
        if files.is_empty() {
            return Err(CliError::Data(format!("no files match {spec:?}")));
        }
        return Ok(files);
    }
    Err(CliError::Data(format!("{spec}: not a directory or numbered pattern")))
}

pub fn load_image(path: &Path) -> Result<ScalarField, CliError> {
    if !path.exists() {
        return Err(data_err(path, "no such file"));
    }
    let img = image::open(path).map_err(|e| data_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let grid = Grid2D::new(w, h).map_err(|e| data_err(path, e))?;
    let scale16 = 255.0 / 65535.0;
    let (channels, data): (usize, Vec<f64>) = match &img {
        DynamicImage::ImageLuma8(b) => (1, b.as_raw().iter().map(|&v| v as f64).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.as_raw().iter().map(|&v| v as f64).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.as_raw().iter().map(|&v| v as f64 * scale16).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.as_raw().iter().map(|&v| v as f64 * scale16).collect()),
        other => {
            return Err(data_err(
                path,
                format!("unsupported pixel format {:?}; expected 8/16-bit grey or RGB", other.color()),
            ))
        }
    };
    ScalarField::from_vec(grid, channels, data).map_err(|e| data_err(path, e))
}

/// Loads every frame of a sequence; all must share size and channel count.
pub fn load_frames(spec: &str) -> Result<Vec<ScalarField>, CliError> {
    let files = resolve_sequence(spec)?;
    let mut out: Vec<ScalarField> = Vec::with_capacity(files.len());
    for f in &files {
        let img = load_image(f)?;
        if let Some(first) = out.first() {
            if first.grid() != img.grid() || first.channels() != img.channels() {
                return Err(data_err(
                    f,
                    format!(
                        "size {}x{}x{} differs from the first frame's {}x{}x{}",
                        img.grid().width(),
                        img.grid().height(),
                        img.channels(),
                        first.grid().width(),
                        first.grid().height(),
                        first.channels()
                    ),
                ));
            }
        }
        out.push(img);
    }
    Ok(out)
}

/// A single-channel image; values of at least 128 are inside.
pub fn load_mask(path: &Path) -> Result<RegionMask, CliError> {
    let img = load_image(path)?;
    if img.channels() != 1 {
        return Err(data_err(path, "mask must be single-channel"));
    }
    let bits = img.data().iter().map(|&v| v >= 128.0).collect();
    RegionMask::from_bits(img.grid(), bits).map_err(|e| data_err(path, e))
}

pub fn load_masks(spec: &str) -> Result<Vec<RegionMask>, CliError> {
    resolve_sequence(spec)?.iter().map(|p| load_mask(p)).collect()
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => fs::create_dir_all(d).map_err(|e| data_err(d, e)),
        _ => Ok(()),
    }
}

fn size(grid: Grid2D) -> (u32, u32) {
    (grid.width() as u32, grid.height() as u32)
}

/// 8-bit PNG, 255 inside.
pub fn save_mask(path: &Path, mask: &RegionMask) -> Result<(), CliError> {
    ensure_parent(path)?;
    let (w, h) = size(mask.grid());
    let data = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(w, h, data).expect("buffer matches grid");
    img.save(path).map_err(|e| data_err(path, e))
}

pub fn save_rgb(path: &Path, rgb: &viz::Rgb) -> Result<(), CliError> {
    ensure_parent(path)?;
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(rgb.width as u32, rgb.height as u32, rgb.data.clone()).expect("buffer matches size");
    img.save(path).map_err(|e| data_err(path, e))
}

/// 16-bit PNG, `[0, 255]` mapped onto the full range; undefined pixels
/// are written as 0.
pub fn save_field(path: &Path, f: &ScalarField) -> Result<(), CliError> {
    ensure_parent(path)?;
    let (w, h) = size(f.grid());
    let data: Vec<u16> = f
        .data()
        .iter()
        .map(|&v| if v.is_nan() { 0 } else { (v.clamp(0.0, 255.0) * 65535.0 / 255.0).round() as u16 })
        .collect();
    let res = match f.channels() {
        1 => ImageBuffer::<Luma<u16>, _>::from_raw(w, h, data).expect("buffer matches grid").save(path),
        3 => ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, data).expect("buffer matches grid").save(path),
        c => return Err(data_err(path, format!("cannot write {c}-channel image"))),
    };
    res.map_err(|e| data_err(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| data_err(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| data_err(path, e))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    ensure_parent(path)?;
    csv::Writer::from_path(path).map_err(|e| data_err(path, e))
}

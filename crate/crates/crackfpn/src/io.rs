//! Raster files: RGB photos, single-channel masks and probability maps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crackfpn_core::{BinaryMask, ProbMask, RasterImage};
use image::{ColorType, GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Label intensities strictly above this value are crack pixels.
pub const DEFAULT_CRACK_THRESHOLD: u8 = 127;

fn decode(path: &Path) -> Result<image::DynamicImage> {
    if !path.is_file() {
        return Err(Error::input(path, "no such file"));
    }
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn load_image(path: &Path) -> Result<RasterImage> {
    let img = decode(path)?;
    if img.color() != ColorType::Rgb8 {
        return Err(Error::input(path, format!("expected 8-bit RGB, found {:?}", img.color())));
    }
    let rgb = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(RasterImage::new(h as usize, w as usize, rgb.into_raw())?)
}

pub fn load_mask(path: &Path, crack_threshold: u8) -> Result<BinaryMask> {
    let img = decode(path)?;
    if img.color() != ColorType::L8 {
        return Err(Error::input(path, format!("expected 8-bit grayscale mask, found {:?}", img.color())));
    }
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    Ok(BinaryMask::from_gray(h as usize, w as usize, gray.as_raw(), crack_threshold)?)
}

/// Loads an image and its label, rejecting mismatched extents.
pub fn load_pair(image: &Path, mask: &Path, crack_threshold: u8) -> Result<(RasterImage, BinaryMask)> {
    let img = load_image(image)?;
    let m = load_mask(mask, crack_threshold)?;
    if !m.same_extent(img.height(), img.width()) {
        return Err(Error::input(
            mask,
            format!("mask {}x{} does not match image {}x{}", m.height(), m.width(), img.height(), img.width()),
        ));
    }
    Ok((img, m))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn save_gray(path: &Path, h: usize, w: usize, data: Vec<u8>) -> Result<()> {
    ensure_parent(path)?;
    let img = GrayImage::from_raw(w as u32, h as u32, data).expect("buffer matches extent");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Crack pixels are written as 255, background as 0.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    save_gray(path, mask.height(), mask.width(), mask.to_gray())
}

/// Probabilities are written as `round(p·255)`, halves rounding up.
pub fn save_prob(prob: &ProbMask, path: &Path) -> Result<()> {
    save_gray(path, prob.height(), prob.width(), prob.to_gray())
}

pub fn save_image(img: &RasterImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .expect("buffer matches extent");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn is_raster(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// Raster files of a directory keyed by file stem, sorted by stem.
pub fn list_rasters(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::input(dir, "not a directory"));
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !is_raster(&path) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::input(&path, format!("id {stem} also used by {}", prev.display())));
        }
    }
    Ok(out)
}

/// Image/label files paired by stem; every image needs a label and vice versa.
pub fn pair_directories(images: &Path, labels: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let imgs = list_rasters(images)?;
    let labs = list_rasters(labels)?;
    if imgs.is_empty() {
        return Err(Error::input(images, "no images found"));
    }
    if let Some(id) = imgs.keys().find(|k| !labs.contains_key(*k)) {
        return Err(Error::input(labels, format!("image {id} has no label")));
    }
    if let Some(id) = labs.keys().find(|k| !imgs.contains_key(*k)) {
        return Err(Error::input(images, format!("label {id} has no image")));
    }
    Ok(imgs
        .into_iter()
        .map(|(id, p)| {
            let l = labs[&id].clone();
            (id, p, l)
        })
        .collect())
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

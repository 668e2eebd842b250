//! On-disk dataset layout:
//!
//! ```text
//! root/
//!   catalog.json
//!   source/images/*.png   8-bit RGB
//!   source/labels/*.png   8-bit single channel, raw class ids (same stem)
//!   target/images/*.png
//!   target_eval/          optional, images/ + labels/ as in source/
//! ```
//!
//! Samples are ordered lexicographically by filename; decoding is
//! parallelized per file without affecting that order.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::{
    validate_labeled, validate_pixels, ClassCatalog, DomainPairDataset, LabeledImage,
    UnlabeledImage,
};

pub fn load_catalog(root: &Path) -> Result<ClassCatalog> {
    let path = root.join("catalog.json");
    if !path.is_file() {
        return Err(Error::MissingInput(path));
    }
    let catalog: ClassCatalog = serde_json::from_str(&fs::read_to_string(&path)?)?;
    catalog.validate()?;
    Ok(catalog)
}

pub fn save_catalog(root: &Path, catalog: &ClassCatalog) -> Result<()> {
    catalog.validate()?;
    fs::create_dir_all(root)?;
    fs::write(root.join("catalog.json"), serde_json::to_string_pretty(catalog)?)?;
    Ok(())
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        return Err(Error::Structural(format!("missing directory {}", dir.display())));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Structural(format!("unreadable filename in {}", dir.display())))?
                .to_string();
            out.push((stem, path));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn decode_rgb(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::<f32>::zeros((h as usize, w as usize, 3));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize, x as usize, c]] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

fn decode_labels(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let mut out = Array2::<u8>::zeros((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        out[[y as usize, x as usize]] = p.0[0];
    }
    Ok(out)
}

fn load_labeled_split(dir: &Path, catalog: &ClassCatalog) -> Result<Vec<LabeledImage>> {
    let images = png_stems(&dir.join("images"))?;
    let labels = png_stems(&dir.join("labels"))?;
    if images.is_empty() {
        return Err(Error::Structural(format!("no images in {}", dir.join("images").display())));
    }
    if images.len() != labels.len() {
        return Err(Error::Structural(format!(
            "{}: {} images but {} label maps",
            dir.display(),
            images.len(),
            labels.len()
        )));
    }
    type Stem = (String, PathBuf);
    let pairs: Vec<(&Stem, &Stem)> = images.iter().zip(labels.iter()).collect();
    for (img, lab) in &pairs {
        if img.0 != lab.0 {
            return Err(Error::Structural(format!(
                "{}: image stem `{}` has no matching label (found `{}`)",
                dir.display(),
                img.0,
                lab.0
            )));
        }
    }
    pairs
        .par_iter()
        .map(|((stem, img_path), (_, lab_path))| {
            let sample = LabeledImage {
                pixels: decode_rgb(img_path)?,
                labels: decode_labels(lab_path)?,
                id: stem.clone(),
            };
            validate_labeled(&sample, catalog).map_err(|e| match e {
                Error::Validation(msg) => {
                    Error::Validation(format!("{}: {msg}", lab_path.display()))
                }
                other => other,
            })?;
            Ok(sample)
        })
        .collect()
}

fn load_unlabeled_split(dir: &Path) -> Result<Vec<UnlabeledImage>> {
    let images = png_stems(&dir.join("images"))?;
    if images.is_empty() {
        return Err(Error::Structural(format!("no images in {}", dir.join("images").display())));
    }
    images
        .par_iter()
        .map(|(stem, path)| {
            let sample = UnlabeledImage { pixels: decode_rgb(path)?, id: stem.clone() };
            validate_pixels(&sample.pixels, &sample.id)?;
            Ok(sample)
        })
        .collect()
}

/// Load a dataset laid out as documented in the module header. All images
/// are normalized to [0,1] and label maps validated against `catalog`.
pub fn load_dataset(root: &Path, catalog: &ClassCatalog) -> Result<DomainPairDataset> {
    if !root.is_dir() {
        return Err(Error::Structural(format!("dataset root {} does not exist", root.display())));
    }
    let source = load_labeled_split(&root.join("source"), catalog)?;
    let target = load_unlabeled_split(&root.join("target"))?;
    let eval_dir = root.join("target_eval");
    let target_eval =
        if eval_dir.is_dir() { Some(load_labeled_split(&eval_dir, catalog)?) } else { None };
    Ok(DomainPairDataset { source, target, target_eval, catalog: catalog.clone() })
}

pub(crate) fn pixels_to_rgb8(pixels: &Array3<f32>) -> RgbImage {
    let (h, w, _) = pixels.dim();
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                px.0[c] = (pixels[[y, x, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    img
}

fn labels_to_luma8(labels: &Array2<u8>) -> GrayImage {
    let (h, w) = labels.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.get_pixel_mut(x as u32, y as u32).0[0] = labels[[y, x]];
        }
    }
    img
}

/// Write one labeled sample into a split directory (`<dir>/images`,
/// `<dir>/labels`).
pub fn save_labeled(dir: &Path, sample: &LabeledImage) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("labels"))?;
    pixels_to_rgb8(&sample.pixels).save(dir.join("images").join(format!("{}.png", sample.id)))?;
    labels_to_luma8(&sample.labels).save(dir.join("labels").join(format!("{}.png", sample.id)))?;
    Ok(())
}

pub fn save_unlabeled(dir: &Path, sample: &UnlabeledImage) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    pixels_to_rgb8(&sample.pixels).save(dir.join("images").join(format!("{}.png", sample.id)))?;
    Ok(())
}

/// Write a whole dataset in the on-disk layout.
pub fn save_dataset(root: &Path, dataset: &DomainPairDataset) -> Result<()> {
    dataset.validate()?;
    save_catalog(root, &dataset.catalog)?;
    for s in &dataset.source {
        save_labeled(&root.join("source"), s)?;
    }
    for t in &dataset.target {
        save_unlabeled(&root.join("target"), t)?;
    }
    if let Some(eval) = &dataset.target_eval {
        for s in eval {
            save_labeled(&root.join("target_eval"), s)?;
        }
    }
    Ok(())
}

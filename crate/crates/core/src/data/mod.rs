//! Data model for the labeled source / unlabeled target domain pair, plus
//! the on-disk dataset format.
//!
//! Images are RGB rasters normalized to [0,1]; label maps are per-pixel
//! class ids validated against a [`ClassCatalog`]. Target samples carry no
//! labels by type, which is what keeps training unsupervised on the target
//! side: held-out labeled target data lives in a separate `target_eval`
//! split that only evaluation code touches.

mod io;

pub use io::{load_catalog, load_dataset, save_catalog, save_dataset, save_labeled, save_unlabeled};

use ndarray::{Array2, Array3, s};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An image plus its per-pixel semantic annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// (H, W, 3), values in [0,1].
    pub pixels: Array3<f32>,
    /// (H, W) class ids.
    pub labels: Array2<u8>,
    pub id: String,
}

/// An image without annotation (the target domain during training).
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledImage {
    /// (H, W, 3), values in [0,1].
    pub pixels: Array3<f32>,
    pub id: String,
}

/// One semantic class: id, readable name, display color, and the corpus
/// frequency once computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u8,
    pub name: String,
    pub color: [u8; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
}

/// The set of semantic classes shared by both domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCatalog {
    pub entries: Vec<ClassEntry>,
}

impl ClassCatalog {
    /// Build a catalog from (name, color) pairs; ids are assigned 0..n-1.
    pub fn new(classes: Vec<(String, [u8; 3])>) -> Result<Self> {
        let entries = classes
            .into_iter()
            .enumerate()
            .map(|(i, (name, color))| ClassEntry { id: i as u8, name, color, frequency: None })
            .collect();
        let catalog = ClassCatalog { entries };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Validation("catalog has no classes".into()));
        }
        if self.entries.len() > 256 {
            return Err(Error::Validation("catalog exceeds 256 classes".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::Validation(format!(
                    "class ids must be 0..{} in order, found id {} at position {}",
                    self.entries.len() - 1,
                    e.id,
                    i
                )));
            }
        }
        // Display colors must be unique for color encoding to be invertible.
        for (i, a) in self.entries.iter().enumerate() {
            for b in &self.entries[i + 1..] {
                if a.color == b.color {
                    return Err(Error::Validation(format!(
                        "classes `{}` and `{}` share display color {:?}",
                        a.name, b.name, a.color
                    )));
                }
            }
        }
        if let Some(sum) = self.frequency_sum() {
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "class frequencies sum to {sum}, expected 1 within 1e-9"
                )));
            }
        }
        Ok(())
    }

    /// Sum of populated frequencies; `None` when no class has one yet.
    pub fn frequency_sum(&self) -> Option<f64> {
        if self.entries.iter().all(|e| e.frequency.is_none()) {
            return None;
        }
        Some(self.entries.iter().filter_map(|e| e.frequency).sum())
    }

    pub fn frequencies_populated(&self) -> bool {
        self.entries.iter().all(|e| e.frequency.is_some())
    }

    pub fn frequency(&self, class_id: u8) -> Option<f64> {
        self.entries.get(class_id as usize).and_then(|e| e.frequency)
    }
}

/// The full dataset: labeled source, unlabeled target, optional held-out
/// labeled target split used only for evaluation.
#[derive(Debug, Clone)]
pub struct DomainPairDataset {
    pub source: Vec<LabeledImage>,
    pub target: Vec<UnlabeledImage>,
    pub target_eval: Option<Vec<LabeledImage>>,
    pub catalog: ClassCatalog,
}

impl DomainPairDataset {
    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        for img in &self.source {
            validate_labeled(img, &self.catalog)?;
        }
        for img in &self.target {
            validate_pixels(&img.pixels, &img.id)?;
        }
        if let Some(eval) = &self.target_eval {
            for img in eval {
                validate_labeled(img, &self.catalog)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_pixels(pixels: &Array3<f32>, id: &str) -> Result<()> {
    if pixels.dim().2 != 3 {
        return Err(Error::Validation(format!("sample `{id}`: pixels must be (H,W,3)")));
    }
    if pixels.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Validation(format!("sample `{id}`: pixel values outside [0,1]")));
    }
    Ok(())
}

pub(crate) fn validate_labeled(img: &LabeledImage, catalog: &ClassCatalog) -> Result<()> {
    validate_pixels(&img.pixels, &img.id)?;
    let (h, w, _) = img.pixels.dim();
    if img.labels.dim() != (h, w) {
        return Err(Error::Validation(format!(
            "sample `{}`: image is {}x{} but label map is {}x{}",
            img.id,
            h,
            w,
            img.labels.dim().0,
            img.labels.dim().1
        )));
    }
    let num_classes = catalog.num_classes();
    if let Some(&bad) = img.labels.iter().find(|&&l| (l as usize) >= num_classes) {
        return Err(Error::Validation(format!(
            "sample `{}`: label value {} exceeds class count {}",
            img.id, bad, num_classes
        )));
    }
    Ok(())
}

/// Crop window sampled for a given output size; both pixels and labels of a
/// labeled sample use the identical window.
fn sample_window(h: usize, w: usize, size: usize, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
    if size > h || size > w {
        return Err(Error::Validation(format!(
            "crop size {size} exceeds image dimensions {h}x{w}"
        )));
    }
    let y = if h == size { 0 } else { rng.gen_range(0..=h - size) };
    let x = if w == size { 0 } else { rng.gen_range(0..=w - size) };
    Ok((y, x))
}

/// Random square crop of a labeled sample. The same `rng` state yields the
/// same window, bit for bit.
pub fn random_crop_labeled(
    sample: &LabeledImage,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledImage> {
    let (h, w, _) = sample.pixels.dim();
    let (y, x) = sample_window(h, w, size, rng)?;
    Ok(LabeledImage {
        pixels: sample.pixels.slice(s![y..y + size, x..x + size, ..]).to_owned(),
        labels: sample.labels.slice(s![y..y + size, x..x + size]).to_owned(),
        id: sample.id.clone(),
    })
}

/// Random square crop of an unlabeled sample.
pub fn random_crop_unlabeled(
    sample: &UnlabeledImage,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<UnlabeledImage> {
    let (h, w, _) = sample.pixels.dim();
    let (y, x) = sample_window(h, w, size, rng)?;
    Ok(UnlabeledImage {
        pixels: sample.pixels.slice(s![y..y + size, x..x + size, ..]).to_owned(),
        id: sample.id.clone(),
    })
}

/// Map a label raster to its display colors. Invertible via
/// [`decode_label_colors`] because catalog colors are unique.
pub fn encode_label_colors(labels: &Array2<u8>, catalog: &ClassCatalog) -> Result<Array3<u8>> {
    let (h, w) = labels.dim();
    let mut out = Array3::<u8>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let id = labels[[y, x]] as usize;
            let entry = catalog
                .entries
                .get(id)
                .ok_or_else(|| Error::Validation(format!("label value {id} not in catalog")))?;
            out[[y, x, 0]] = entry.color[0];
            out[[y, x, 1]] = entry.color[1];
            out[[y, x, 2]] = entry.color[2];
        }
    }
    Ok(out)
}

/// Inverse of [`encode_label_colors`].
pub fn decode_label_colors(colors: &Array3<u8>, catalog: &ClassCatalog) -> Result<Array2<u8>> {
    let (h, w, c) = colors.dim();
    if c != 3 {
        return Err(Error::Validation("color map must be (H,W,3)".into()));
    }
    let mut out = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let rgb = [colors[[y, x, 0]], colors[[y, x, 1]], colors[[y, x, 2]]];
            let entry = catalog
                .entries
                .iter()
                .find(|e| e.color == rgb)
                .ok_or_else(|| Error::Validation(format!("color {rgb:?} not in catalog")))?;
            out[[y, x]] = entry.id;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;

    fn catalog3() -> ClassCatalog {
        ClassCatalog::new(vec![
            ("bg".into(), [0, 0, 0]),
            ("a".into(), [255, 0, 0]),
            ("b".into(), [0, 255, 0]),
        ])
        .unwrap()
    }

    fn sample(h: usize, w: usize) -> LabeledImage {
        LabeledImage {
            pixels: Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
                ((y * 31 + x * 7 + c) % 256) as f32 / 255.0
            }),
            // position-unique pattern: no two crop windows coincide
            labels: Array2::from_shape_fn((h, w), |(y, x)| ((y * 31 + x * 17) % 256) as u8),
            id: "s0".into(),
        }
    }

    #[test]
    fn crop_uses_identical_window_for_pixels_and_labels() {
        let img = sample(16, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let crop = random_crop_labeled(&img, 8, &mut rng).unwrap();
        assert_eq!(crop.pixels.dim(), (8, 8, 3));
        assert_eq!(crop.labels.dim(), (8, 8));
        // locate the window by matching the label pattern
        let mut found = false;
        'outer: for y in 0..=8 {
            for x in 0..=16 {
                let lw = img.labels.slice(s![y..y + 8, x..x + 8]);
                if lw == crop.labels {
                    let pw = img.pixels.slice(s![y..y + 8, x..x + 8, ..]);
                    assert_eq!(pw, crop.pixels, "pixel window differs from label window");
                    found = true;
                    break 'outer;
                }
            }
        }
        assert!(found);
    }

    #[test]
    fn identical_rng_state_gives_identical_crop() {
        let img = sample(64, 64);
        let a = random_crop_labeled(&img, 17, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_crop_labeled(&img, 17, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn full_size_crop_is_identity() {
        let img = sample(12, 12);
        let crop = random_crop_labeled(&img, 12, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(crop.pixels, img.pixels);
        assert_eq!(crop.labels, img.labels);
    }

    #[test]
    fn oversized_crop_errors() {
        let img = sample(8, 8);
        let err = random_crop_labeled(&img, 9, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn color_roundtrip_is_exact() {
        let catalog = catalog3();
        let labels = Array2::from_shape_fn((7, 5), |(y, x)| ((y * x) % 3) as u8);
        let colors = encode_label_colors(&labels, &catalog).unwrap();
        let back = decode_label_colors(&colors, &catalog).unwrap();
        assert_eq!(labels, back);
    }

    #[test]
    fn all_zero_labels_give_uniform_class0_color() {
        let catalog = catalog3();
        let labels = Array2::<u8>::zeros((4, 4));
        let colors = encode_label_colors(&labels, &catalog).unwrap();
        assert!(colors.iter().all(|&v| v == 0));
    }

    #[test]
    fn two_ids_map_to_two_distinct_colors_at_matching_pixels() {
        let catalog = catalog3();
        let labels = ndarray::array![[0u8, 1u8], [1u8, 0u8]];
        let colors = encode_label_colors(&labels, &catalog).unwrap();
        assert_eq!(colors.slice(s![0, 0, ..]).to_vec(), vec![0, 0, 0]);
        assert_eq!(colors.slice(s![0, 1, ..]).to_vec(), vec![255, 0, 0]);
        assert_eq!(colors.slice(s![1, 0, ..]).to_vec(), vec![255, 0, 0]);
    }

    #[test]
    fn invalid_label_id_is_rejected() {
        let catalog = catalog3();
        let labels = ndarray::array![[0u8, 7u8]];
        assert!(encode_label_colors(&labels, &catalog).is_err());
        let img = LabeledImage {
            pixels: Array3::zeros((1, 2, 3)),
            labels,
            id: "bad".into(),
        };
        let err = validate_labeled(&img, &catalog).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }

    #[test]
    fn duplicate_colors_rejected() {
        let result = ClassCatalog::new(vec![
            ("a".into(), [1, 2, 3]),
            ("b".into(), [1, 2, 3]),
        ]);
        assert!(result.is_err());
    }

    #[test]
    fn frequency_sum_validation() {
        let mut catalog = catalog3();
        catalog.entries[0].frequency = Some(0.5);
        catalog.entries[1].frequency = Some(0.25);
        catalog.entries[2].frequency = Some(0.25);
        catalog.validate().unwrap();
        catalog.entries[2].frequency = Some(0.3);
        assert!(catalog.validate().is_err());
    }
}

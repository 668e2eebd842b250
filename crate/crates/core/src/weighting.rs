//! Corpus-wide class frequencies and the per-pixel weight masks consumed by
//! the weighted reconstruction loss.
//!
//! A mask holds, at each pixel, the frequency of that pixel's class over
//! the whole source training split. The reconstruction loss multiplies by
//! `1 - w`, so pixels of rare classes are reconstructed most strictly.

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{ClassCatalog, LabeledImage};
use crate::error::{Error, Result};

/// Per-pixel class-frequency mask aligned to one source label map.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    /// (H, W) values in [0,1]; `values[y][x]` is the corpus frequency of
    /// the class at `labels[y][x]`, exactly.
    pub values: Array2<f64>,
    pub source_labels_id: String,
}

/// Count pixels per class over the full source split and populate the
/// catalog frequencies. Counting is a one-time corpus-level pass; the
/// per-image counts merge associatively so the result is independent of
/// dataset order and of parallel chunking.
pub fn compute_class_frequencies(
    source: &[LabeledImage],
    catalog: &ClassCatalog,
) -> Result<ClassCatalog> {
    if source.is_empty() {
        return Err(Error::Validation("cannot compute class frequencies of an empty source set".into()));
    }
    let num_classes = catalog.num_classes();
    let counts = source
        .par_iter()
        .map(|img| {
            let mut local = vec![0u64; num_classes];
            for &l in img.labels.iter() {
                let idx = l as usize;
                if idx >= num_classes {
                    return Err(Error::Validation(format!(
                        "sample `{}`: label value {} exceeds class count {}",
                        img.id, l, num_classes
                    )));
                }
                local[idx] += 1;
            }
            Ok(local)
        })
        .try_reduce(
            || vec![0u64; num_classes],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                Ok(a)
            },
        )?;
    let total: u64 = counts.iter().sum();
    let mut out = catalog.clone();
    for (entry, &count) in out.entries.iter_mut().zip(&counts) {
        entry.frequency = Some(count as f64 / total as f64);
    }
    let populated: Vec<usize> =
        counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, _)| i).collect();
    if populated.len() == 1 {
        eprintln!(
            "warning: source corpus contains a single class (id {}); the weighted \
             source reconstruction term will be identically zero",
            populated[0]
        );
    }
    out.validate()?;
    Ok(out)
}

/// Per-pixel frequency lookup. Requires populated frequencies.
pub fn build_weight_mask(
    labels: &Array2<u8>,
    catalog: &ClassCatalog,
    source_labels_id: &str,
) -> Result<WeightMask> {
    if !catalog.frequencies_populated() {
        return Err(Error::Validation(
            "catalog frequencies are not populated; run compute_class_frequencies first".into(),
        ));
    }
    let num_classes = catalog.num_classes();
    let mut values = Array2::<f64>::zeros(labels.dim());
    for (v, &l) in values.iter_mut().zip(labels.iter()) {
        if (l as usize) >= num_classes {
            return Err(Error::Validation(format!(
                "label value {l} exceeds class count {num_classes}"
            )));
        }
        *v = catalog.frequency(l).unwrap();
    }
    Ok(WeightMask { values, source_labels_id: source_labels_id.to_string() })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use rand::{Rng, SeedableRng};

    fn catalog(n: usize) -> ClassCatalog {
        ClassCatalog::new(
            (0..n).map(|i| (format!("c{i}"), [i as u8, (i * 3) as u8, (i * 7) as u8])).collect(),
        )
        .unwrap()
    }

    fn labeled(labels: Array2<u8>) -> LabeledImage {
        let (h, w) = labels.dim();
        LabeledImage { pixels: Array3::zeros((h, w, 3)), labels, id: "x".into() }
    }

    #[test]
    fn direct_count_2x2() {
        let source = vec![labeled(array![[0u8, 0u8], [0u8, 1u8]])];
        let cat = compute_class_frequencies(&source, &catalog(2)).unwrap();
        assert_eq!(cat.frequency(0), Some(0.75));
        assert_eq!(cat.frequency(1), Some(0.25));
    }

    #[test]
    fn single_class_corpus() {
        let source = vec![labeled(Array2::from_elem((4, 4), 1u8))];
        let cat = compute_class_frequencies(&source, &catalog(3)).unwrap();
        assert_eq!(cat.frequency(0), Some(0.0));
        assert_eq!(cat.frequency(1), Some(1.0));
        assert_eq!(cat.frequency(2), Some(0.0));
    }

    #[test]
    fn empty_source_errors() {
        assert!(compute_class_frequencies(&[], &catalog(2)).is_err());
    }

    /// Independent brute-force oracle: count pixels with plain nested loops
    /// over a concatenated corpus, no per-image merge.
    fn oracle_frequencies(source: &[LabeledImage], num_classes: usize) -> Vec<f64> {
        let mut counts = vec![0u64; num_classes];
        let mut total = 0u64;
        for img in source {
            for y in 0..img.labels.dim().0 {
                for x in 0..img.labels.dim().1 {
                    counts[img.labels[[y, x]] as usize] += 1;
                    total += 1;
                }
            }
        }
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    #[test]
    fn frequencies_match_counting_oracle_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100);
        let source: Vec<LabeledImage> = (0..100)
            .map(|_| labeled(Array2::from_shape_fn((16, 16), |_| rng.gen_range(0..5u8))))
            .collect();
        let cat = compute_class_frequencies(&source, &catalog(5)).unwrap();
        let oracle = oracle_frequencies(&source, 5);
        for c in 0..5 {
            assert_eq!(cat.frequency(c as u8), Some(oracle[c]), "class {c}");
        }
        let sum: f64 = (0..5).map(|c| cat.frequency(c).unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn frequencies_invariant_to_order() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut source: Vec<LabeledImage> = (0..20)
            .map(|_| labeled(Array2::from_shape_fn((8, 8), |_| rng.gen_range(0..4u8))))
            .collect();
        let a = compute_class_frequencies(&source, &catalog(4)).unwrap();
        source.reverse();
        let b = compute_class_frequencies(&source, &catalog(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mask_is_exact_lookup() {
        let mut cat = catalog(2);
        cat.entries[0].frequency = Some(0.9);
        cat.entries[1].frequency = Some(0.1);
        let mask = build_weight_mask(&array![[0u8, 1u8]], &cat, "m").unwrap();
        assert_eq!(mask.values, array![[0.9, 0.1]]);
    }

    #[test]
    fn mask_against_lookup_oracle_on_random_maps() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let source: Vec<LabeledImage> = (0..30)
            .map(|_| labeled(Array2::from_shape_fn((16, 16), |_| rng.gen_range(0..5u8))))
            .collect();
        let cat = compute_class_frequencies(&source, &catalog(5)).unwrap();
        for img in source.iter().take(5) {
            let mask = build_weight_mask(&img.labels, &cat, &img.id).unwrap();
            for y in 0..16 {
                for x in 0..16 {
                    let expect = cat.frequency(img.labels[[y, x]]).unwrap();
                    assert_eq!(mask.values[[y, x]], expect);
                }
            }
            // elementwise sum equals sum over classes of count*freq
            // (different association order, so compare to f64 roundoff)
            let elementwise: f64 = mask.values.iter().sum();
            let mut by_class = 0.0;
            for c in 0..5u8 {
                let count = img.labels.iter().filter(|&&l| l == c).count() as f64;
                by_class += count * cat.frequency(c).unwrap();
            }
            let rel = (elementwise - by_class).abs() / by_class.max(1e-12);
            assert!(rel < 1e-12, "{elementwise} vs {by_class}");
        }
    }

    #[test]
    fn single_class_dataset_masks_are_one() {
        let source = vec![labeled(Array2::zeros((4, 4)))];
        let cat = compute_class_frequencies(&source, &catalog(2)).unwrap();
        let mask = build_weight_mask(&source[0].labels, &cat, "z").unwrap();
        assert!(mask.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unpopulated_frequencies_error() {
        let cat = catalog(2);
        assert!(build_weight_mask(&array![[0u8]], &cat, "m").is_err());
    }

    #[test]
    fn absent_class_gets_weight_one_later() {
        // class 2 absent from corpus: frequency 0, so (1-w)=1 for any later
        // pixel of that class
        let source = vec![labeled(array![[0u8, 1u8]])];
        let cat = compute_class_frequencies(&source, &catalog(3)).unwrap();
        assert_eq!(cat.frequency(2), Some(0.0));
        let mask = build_weight_mask(&array![[2u8]], &cat, "later").unwrap();
        assert_eq!(mask.values[[0, 0]], 0.0);
    }
}

//! Dataset adaptation: run every image of one domain through a trained
//! generator and write a new dataset whose annotations are reused
//! untouched. Label files are copied byte for byte.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::data::{load_catalog, load_dataset, save_unlabeled, UnlabeledImage};
use crate::error::{Error, Result};
use crate::models::{read_snapshot, DualHeadDiscriminatorSpec, Generator, GeneratorSpec};
use crate::nn::{Graph, ParamStore, Scalar};

use super::{from_model_batch, to_model_batch, GanSystem};

/// Which mapping to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    SourceToTarget,
    TargetToSource,
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "s2t" | "st" | "source-to-target" => Ok(Direction::SourceToTarget),
            "t2s" | "ts" | "target-to-source" => Ok(Direction::TargetToSource),
            other => Err(Error::Config(format!(
                "unknown direction `{other}` (expected s2t or t2s)"
            ))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::SourceToTarget => write!(f, "s2t"),
            Direction::TargetToSource => write!(f, "t2s"),
        }
    }
}

/// Translate a set of [0,1] HWC images through a generator, in inference
/// batches. Deterministic: no sampling anywhere.
pub fn translate_batch<A: Scalar>(
    gen: &Generator,
    store: &ParamStore<A>,
    images: &[&Array3<f32>],
) -> Result<Vec<Array3<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(8) {
        let (h, w, _) = chunk[0].dim();
        gen.check_input(h, w).map_err(|e| {
            Error::Validation(format!("{e}; pad the images to a multiple of the model stride"))
        })?;
        for img in chunk {
            if img.dim() != (h, w, 3) {
                // mixed sizes fall back to singleton batches
                return translate_singletons(gen, store, images);
            }
        }
        let x = to_model_batch::<A>(chunk);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let y = gen.forward(&mut g, store, xv);
        out.extend(from_model_batch(g.value(y)));
    }
    Ok(out)
}

fn translate_singletons<A: Scalar>(
    gen: &Generator,
    store: &ParamStore<A>,
    images: &[&Array3<f32>],
) -> Result<Vec<Array3<f32>>> {
    images
        .iter()
        .map(|img| {
            let (h, w, _) = img.dim();
            gen.check_input(h, w).map_err(|e| {
                Error::Validation(format!(
                    "{e}; pad the images to a multiple of the model stride"
                ))
            })?;
            let x = to_model_batch::<A>(&[img]);
            let mut g = Graph::new();
            let xv = g.constant(x);
            let y = gen.forward(&mut g, store, xv);
            Ok(from_model_batch(g.value(y)).remove(0))
        })
        .collect()
}

fn copy_tree(from: &Path, to: &Path) -> Result<()> {
    if !from.is_dir() {
        return Ok(());
    }
    fs::create_dir_all(to)?;
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        let src = entry.path();
        let dst = to.join(entry.file_name());
        if src.is_dir() {
            copy_tree(&src, &dst)?;
        } else {
            fs::copy(&src, &dst)?;
        }
    }
    Ok(())
}

/// Load a GAN snapshot and rebuild its system with the stored parameters.
pub fn system_from_snapshot<A: Scalar>(snapshot_path: &Path) -> Result<GanSystem<A>> {
    let raw = read_snapshot(snapshot_path)?;
    if raw.meta["kind"].as_str() != Some("gan") {
        return Err(Error::SpecMismatch(format!(
            "{} is not a translation-system snapshot",
            snapshot_path.display()
        )));
    }
    let gen_spec: GeneratorSpec = serde_json::from_value(raw.meta["generator"].clone())?;
    let disc_spec: DualHeadDiscriminatorSpec =
        serde_json::from_value(raw.meta["discriminator"].clone())?;
    let mut sys = GanSystem::<A>::build(&gen_spec, &disc_spec, 0)?;
    raw.load_into_store(&mut sys.store)?;
    Ok(sys)
}

/// Translate one domain of a dataset on disk and write the result as a new
/// dataset under `out_root`. The untranslated domain and every label file
/// are copied byte-identically; sample ids and counts are preserved.
pub fn adapt_dataset(
    snapshot_path: &Path,
    dataset_root: &Path,
    out_root: &Path,
    direction: Direction,
) -> Result<usize> {
    let catalog = load_catalog(dataset_root)?;
    let dataset = load_dataset(dataset_root, &catalog)?;
    let sys = system_from_snapshot::<f32>(snapshot_path)?;
    if sys.d_t.spec.num_classes != catalog.num_classes() {
        return Err(Error::SpecMismatch(format!(
            "snapshot was trained for {} classes but the dataset catalog has {}",
            sys.d_t.spec.num_classes,
            catalog.num_classes()
        )));
    }

    fs::create_dir_all(out_root)?;
    fs::copy(dataset_root.join("catalog.json"), out_root.join("catalog.json"))?;

    let translated = match direction {
        Direction::SourceToTarget => {
            let refs: Vec<&Array3<f32>> = dataset.source.iter().map(|s| &s.pixels).collect();
            let adapted = translate_batch(&sys.g_st, &sys.store, &refs)?;
            for (sample, pixels) in dataset.source.iter().zip(adapted) {
                save_unlabeled(
                    &out_root.join("source"),
                    &UnlabeledImage { pixels, id: sample.id.clone() },
                )?;
            }
            // labels are reused untouched: byte-for-byte copies
            copy_tree(&dataset_root.join("source/labels"), &out_root.join("source/labels"))?;
            copy_tree(&dataset_root.join("target"), &out_root.join("target"))?;
            copy_tree(&dataset_root.join("target_eval"), &out_root.join("target_eval"))?;
            dataset.source.len()
        }
        Direction::TargetToSource => {
            let refs: Vec<&Array3<f32>> = dataset.target.iter().map(|t| &t.pixels).collect();
            let adapted = translate_batch(&sys.g_ts, &sys.store, &refs)?;
            for (sample, pixels) in dataset.target.iter().zip(adapted) {
                save_unlabeled(
                    &out_root.join("target"),
                    &UnlabeledImage { pixels, id: sample.id.clone() },
                )?;
            }
            copy_tree(&dataset_root.join("source"), &out_root.join("source"))?;
            copy_tree(&dataset_root.join("target_eval"), &out_root.join("target_eval"))?;
            dataset.target.len()
        }
    };
    Ok(translated)
}

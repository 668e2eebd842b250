//! Downstream segmentation training, evaluation metrics, the ablation
//! runner, and the semantic preservation score.

mod metrics;

pub use metrics::{ConfusionMatrix, MetricsReport};

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_catalog, load_dataset, random_crop_labeled, DomainPairDataset, LabeledImage};
use crate::error::{Error, Result};
use crate::models::{
    read_snapshot, seeded_initializer, store_arrays, write_snapshot, Segmenter, SegmenterSpec,
};
use crate::nn::{Adam, Graph, ParamStore};
use crate::trainer::{
    adapt_dataset, labels_batch, to_model_batch, train, AblationArm, Direction, TrainConfig,
};

/// Hyperparameters of one segmenter training run. Defaults echo the
/// full-scale protocol (100k iterations, batch 4, lr 1e-4, 1024 crops);
/// toy runs override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegTrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub crop_size: usize,
    pub seed: u64,
    pub log_interval: u64,
    pub spec: SegmenterSpec,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            iterations: 100_000,
            batch_size: 4,
            learning_rate: 1e-4,
            crop_size: 1024,
            seed: 0,
            log_interval: 100,
            spec: SegmenterSpec::default(),
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.iterations == 0 || self.batch_size == 0 || self.crop_size == 0 {
            return Err(Error::Config("segmenter config counts must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log_interval must be positive".into()));
        }
        let div = 1usize << self.spec.encoder_stages;
        if !self.crop_size.is_multiple_of(div) {
            return Err(Error::Config(format!(
                "crop_size {} must be divisible by {div}",
                self.crop_size
            )));
        }
        Ok(())
    }
}

/// A segmenter plus its parameters.
pub struct TrainedSegmenter {
    pub model: Segmenter,
    pub store: ParamStore<f32>,
}

impl TrainedSegmenter {
    pub fn save(&self, path: &Path, seed: u64, iterations: u64) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "segmenter",
            "spec": self.model.spec,
            "seed": seed,
            "iterations": iterations,
        });
        write_snapshot(path, &meta, &store_arrays(&self.store))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = read_snapshot(path)?;
        if raw.meta["kind"].as_str() != Some("segmenter") {
            return Err(Error::SpecMismatch(format!(
                "{} is not a segmenter snapshot",
                path.display()
            )));
        }
        let spec: SegmenterSpec = serde_json::from_value(raw.meta["spec"].clone())?;
        let mut store = ParamStore::new();
        let mut init = seeded_initializer(&mut store, 0);
        let model = Segmenter::build(&mut init, "seg", &spec)?;
        raw.load_into_store(&mut store)?;
        Ok(TrainedSegmenter { model, store })
    }

    /// Argmax class map for one [0,1] HWC image. Ties resolve to the lowest
    /// class id.
    pub fn predict(&self, pixels: &Array3<f32>) -> Result<Array2<u8>> {
        Ok(self.predict_batch(&[pixels])?.remove(0))
    }

    pub fn predict_batch(&self, images: &[&Array3<f32>]) -> Result<Vec<Array2<u8>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(8) {
            let (h, w, _) = chunk[0].dim();
            self.model.check_input(h, w)?;
            let x = to_model_batch::<f32>(chunk);
            let mut g = Graph::new();
            let xv = g.constant(x);
            let logits = self.model.forward(&mut g, &self.store, xv);
            let lv = crate::nn::as4(g.value(logits));
            let (b, c, hh, ww) = lv.dim();
            for bi in 0..b {
                let mut map = Array2::<u8>::zeros((hh, ww));
                for y in 0..hh {
                    for x in 0..ww {
                        let mut best = 0usize;
                        let mut best_v = lv[[bi, 0, y, x]];
                        for ci in 1..c {
                            let v = lv[[bi, ci, y, x]];
                            if v > best_v {
                                best_v = v;
                                best = ci;
                            }
                        }
                        map[[y, x]] = best as u8;
                    }
                }
                out.push(map);
            }
        }
        Ok(out)
    }
}

/// One line of the segmenter training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegLogRecord {
    pub iteration: u64,
    pub wall_ms: u64,
    pub cross_entropy: f64,
}

/// Train a segmenter from scratch on labeled images with seeded shuffling
/// and cropping. Deterministic for a fixed config.
pub fn train_segmenter(
    images: &[LabeledImage],
    config: &SegTrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainedSegmenter> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::Validation("cannot train a segmenter on an empty set".into()));
    }
    for img in images {
        let (h, w, _) = img.pixels.dim();
        if config.crop_size > h || config.crop_size > w {
            return Err(Error::Config(format!(
                "crop_size {} exceeds image `{}` ({h}x{w})",
                config.crop_size, img.id
            )));
        }
    }
    let num_classes = config.spec.num_classes;
    if let Some(&bad) =
        images.iter().flat_map(|i| i.labels.iter()).find(|&&l| l as usize >= num_classes)
    {
        return Err(Error::Validation(format!(
            "label {bad} exceeds segmenter class count {num_classes}"
        )));
    }

    let mut store = ParamStore::<f32>::new();
    let mut init = seeded_initializer(&mut store, config.seed);
    let model = Segmenter::build(&mut init, "seg", &config.spec)?;
    let mut adam = Adam::new(&store, config.learning_rate, 0.9, 0.999, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5E67));

    let mut order: Vec<usize> = Vec::new();
    let mut pos = 0usize;
    let start = Instant::now();
    let mut log = match log_path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent)?;
            }
            Some(std::io::BufWriter::new(std::fs::File::create(p)?))
        }
        None => None,
    };

    for it in 1..=config.iterations {
        let mut crops = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if pos >= order.len() {
                use rand::seq::SliceRandom;
                order = (0..images.len()).collect();
                order.shuffle(&mut rng);
                pos = 0;
            }
            let idx = order[pos];
            pos += 1;
            crops.push(random_crop_labeled(&images[idx], config.crop_size, &mut rng)?);
        }
        let pixel_refs: Vec<&Array3<f32>> = crops.iter().map(|c| &c.pixels).collect();
        let x = to_model_batch::<f32>(&pixel_refs);
        let label_refs: Vec<&Array2<u8>> = crops.iter().map(|c| &c.labels).collect();
        let y = labels_batch(&label_refs);

        let mut g = Graph::new();
        let xv = g.constant(x);
        let logits = model.forward(&mut g, &store, xv);
        let ce = g.softmax_ce_mean(logits, &y);
        g.backward(ce);
        let loss = g.scalar(ce) as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { term: "cross_entropy".into(), step: it });
        }
        let grads: Vec<_> = g.param_grads().map(|(id, gr)| (id, gr.clone())).collect();
        adam.step(&mut store, grads.iter().map(|(id, gr)| (*id, gr)));

        if let Some(log) = log.as_mut() {
            if it == 1 || it % config.log_interval == 0 || it == config.iterations {
                use std::io::Write;
                let record = SegLogRecord {
                    iteration: it,
                    wall_ms: start.elapsed().as_millis() as u64,
                    cross_entropy: loss,
                };
                serde_json::to_writer(&mut *log, &record)?;
                log.write_all(b"\n")?;
            }
        }
    }
    if let Some(mut log) = log {
        use std::io::Write;
        log.flush()?;
    }
    Ok(TrainedSegmenter { model, store })
}

/// Evaluate a segmenter on held-out labeled data. Per-image confusion
/// matrices are computed in parallel and merged associatively, so the
/// report is independent of evaluation order.
pub fn evaluate(
    segmenter: &TrainedSegmenter,
    eval_set: &[LabeledImage],
    arm: &str,
) -> Result<MetricsReport> {
    if eval_set.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    let num_classes = segmenter.model.spec.num_classes;
    let confusion = eval_set
        .par_iter()
        .map(|img| -> Result<ConfusionMatrix> {
            let pred = segmenter.predict(&img.pixels)?;
            let mut cm = ConfusionMatrix::new(num_classes);
            cm.add_maps(&img.labels, &pred)?;
            Ok(cm)
        })
        .try_reduce(
            || ConfusionMatrix::new(num_classes),
            |mut a, b| {
                a.merge(&b);
                Ok(a)
            },
        )?;
    Ok(MetricsReport::from_confusion(arm, &confusion))
}

/// Pixel accuracy of an oracle segmenter on translated images, scored
/// against the labels the images carried through translation. High values
/// mean the translation kept the semantic structure legible in the target
/// domain.
pub fn semantic_preservation_score(
    oracle: &TrainedSegmenter,
    adapted: &[LabeledImage],
) -> Result<f64> {
    if adapted.is_empty() {
        return Err(Error::Validation("no adapted samples to score".into()));
    }
    let num_classes = oracle.model.spec.num_classes;
    let confusion = adapted
        .par_iter()
        .map(|img| -> Result<ConfusionMatrix> {
            let pred = oracle.predict(&img.pixels)?;
            let mut cm = ConfusionMatrix::new(num_classes);
            cm.add_maps(&img.labels, &pred)?;
            Ok(cm)
        })
        .try_reduce(
            || ConfusionMatrix::new(num_classes),
            |mut a, b| {
                a.merge(&b);
                Ok(a)
            },
        )?;
    Ok(confusion.pixel_accuracy())
}

/// Full-scale reference results (mIoU, accuracy) per arm, shown in report
/// footers for context; they are not reproduced at this scale.
pub const FULL_SCALE_REFERENCE: [(AblationArm, f64, f64); 5] = [
    (AblationArm::A, 18.23, 60.43),
    (AblationArm::B, 29.45, 78.13),
    (AblationArm::C, 31.33, 79.85),
    (AblationArm::D, 29.43, 79.20),
    (AblationArm::E, 34.27, 84.48),
];

/// One completed (arm, seed) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub arm: AblationArm,
    pub seed: u64,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub report_path: PathBuf,
}

/// Mean metrics of one arm across seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: AblationArm,
    pub label: String,
    pub seeds: usize,
    pub mean_miou: f64,
    pub mean_pixel_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
    pub summaries: Vec<ArmSummary>,
}

impl AblationReport {
    pub fn summary(&self, arm: AblationArm) -> Option<&ArmSummary> {
        self.summaries.iter().find(|s| s.arm == arm)
    }

    /// Ladder-shaped text table with per-seed values, means, and the
    /// full-scale reference footer.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("arm  variant                 seeds  mIoU     acc\n");
        for s in &self.summaries {
            out.push_str(&format!(
                "({}) {:<22} {:>5}  {:>6.2}  {:>6.2}\n",
                s.arm,
                s.label,
                s.seeds,
                100.0 * s.mean_miou,
                100.0 * s.mean_pixel_accuracy
            ));
        }
        out.push_str("\nper-cell results:\n");
        for c in &self.cells {
            out.push_str(&format!(
                "({}) seed {:<3}  mIoU {:>6.2}  acc {:>6.2}\n",
                c.arm,
                c.seed,
                100.0 * c.miou,
                100.0 * c.pixel_accuracy
            ));
        }
        out.push_str(
            "\nfull-scale GTA->Cityscapes reference (context only, not reproduced here):\n",
        );
        for (arm, miou, acc) in FULL_SCALE_REFERENCE {
            out.push_str(&format!(
                "({arm}) {:<22} mIoU {miou:>6.2}  acc {acc:>6.2}\n",
                arm.label()
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,variant,seed,miou,pixel_accuracy\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                c.arm,
                c.arm.label(),
                c.seed,
                c.miou,
                c.pixel_accuracy
            ));
        }
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},mean,{:.6},{:.6}\n",
                s.arm, s.label, s.mean_miou, s.mean_pixel_accuracy
            ));
        }
        out
    }
}

/// Configuration of one ablation campaign.
#[derive(Debug, Clone)]
pub struct AblationPlan {
    pub arms: Vec<AblationArm>,
    pub seeds: Vec<u64>,
    pub gan: TrainConfig,
    pub seg: SegTrainConfig,
    pub jobs: usize,
}

/// Run the ladder: for each (arm, seed), train the translation system if
/// the arm uses one, adapt the source split, train a segmenter on the
/// (adapted or raw) source data, and evaluate on the held-out labeled
/// target split. Each completed cell is persisted immediately.
pub fn run_ablation(
    dataset_root: &Path,
    plan: &AblationPlan,
    run_dir: &Path,
) -> Result<AblationReport> {
    let catalog = load_catalog(dataset_root)?;
    let dataset = load_dataset(dataset_root, &catalog)?;
    if dataset.target_eval.is_none() {
        return Err(Error::Structural(
            "ablation requires a labeled target_eval split".into(),
        ));
    }
    if plan.arms.is_empty() || plan.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one arm and one seed".into()));
    }
    std::fs::create_dir_all(run_dir)?;

    let cells_def: Vec<(AblationArm, u64)> = plan
        .arms
        .iter()
        .flat_map(|&arm| plan.seeds.iter().map(move |&seed| (arm, seed)))
        .collect();

    let run_cell = |&(arm, seed): &(AblationArm, u64)| -> Result<AblationCell> {
        run_ablation_cell(dataset_root, &dataset, plan, run_dir, arm, seed)
    };

    let cells: Vec<AblationCell> = if plan.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(plan.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build ablation pool: {e}")))?;
        pool.install(|| cells_def.par_iter().map(run_cell).collect::<Result<Vec<_>>>())?
    } else {
        cells_def.iter().map(run_cell).collect::<Result<Vec<_>>>()?
    };

    let mut summaries = Vec::new();
    for &arm in &plan.arms {
        let of_arm: Vec<&AblationCell> = cells.iter().filter(|c| c.arm == arm).collect();
        summaries.push(ArmSummary {
            arm,
            label: arm.label().to_string(),
            seeds: of_arm.len(),
            mean_miou: of_arm.iter().map(|c| c.miou).sum::<f64>() / of_arm.len() as f64,
            mean_pixel_accuracy: of_arm.iter().map(|c| c.pixel_accuracy).sum::<f64>()
                / of_arm.len() as f64,
        });
    }
    let report = AblationReport { cells, summaries };
    std::fs::write(run_dir.join("ablation.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(run_dir.join("ablation.csv"), report.to_csv())?;
    std::fs::write(run_dir.join("ablation.txt"), report.render_table())?;
    Ok(report)
}

fn run_ablation_cell(
    dataset_root: &Path,
    dataset: &DomainPairDataset,
    plan: &AblationPlan,
    run_dir: &Path,
    arm: AblationArm,
    seed: u64,
) -> Result<AblationCell> {
    let cell_dir = run_dir.join(format!("cell_{arm}_s{seed}"));
    std::fs::create_dir_all(&cell_dir)?;

    // 1. translation training + dataset adaptation (non-baseline arms)
    let train_images: Vec<LabeledImage> = if arm.uses_gan() {
        let mut gan_config = plan.gan.clone();
        gan_config.ablation_arm = arm;
        gan_config.seed = seed;
        let outcome = train::<f32>(&gan_config, dataset, &cell_dir.join("gan"), None)?;
        let adapted_root = cell_dir.join("adapted");
        adapt_dataset(
            &outcome.snapshot_path,
            dataset_root,
            &adapted_root,
            Direction::SourceToTarget,
        )?;
        let catalog = load_catalog(&adapted_root)?;
        load_dataset(&adapted_root, &catalog)?.source
    } else {
        dataset.source.clone()
    };

    // 2. downstream segmenter on (adapted | raw) source data
    let mut seg_config = plan.seg.clone();
    seg_config.seed = seed;
    let segmenter = train_segmenter(
        &train_images,
        &seg_config,
        Some(&cell_dir.join("seg_train.jsonl")),
    )?;
    segmenter.save(&cell_dir.join("segmenter.bin"), seed, seg_config.iterations)?;

    // 3. evaluation on held-out labeled target data
    let eval_set = dataset.target_eval.as_ref().unwrap();
    let report = evaluate(&segmenter, eval_set, &format!("{arm}"))?;
    let report_path = cell_dir.join("metrics.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;

    Ok(AblationCell {
        arm,
        seed,
        miou: report.miou,
        pixel_accuracy: report.pixel_accuracy,
        report_path,
    })
}

//! Alternating minimax training of the cycle system, plus dataset
//! adaptation once trained.
//!
//! Each step runs one discriminator update followed by one generator
//! update. Every logged record reports the loss terms evaluated after the
//! step's discriminator update and before its generator update, so the
//! stored totals recompose exactly from the stored parts.

mod adapt;
mod manifest;

pub use adapt::{adapt_dataset, Direction};
pub use manifest::{dataset_fingerprint, RunManifest, SubstrateInfo};

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array3, ArrayD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    random_crop_labeled, random_crop_unlabeled, ClassCatalog, DomainPairDataset, LabeledImage,
    UnlabeledImage,
};
use crate::error::{Error, Result};
use crate::losses::{
    graph_adversarial_value, graph_generator_adv, graph_pixel_ce, AdvMode, LossBreakdown,
    LossWeights,
};
use crate::models::{
    read_snapshot, seeded_initializer, store_arrays, write_snapshot, DualHeadDiscriminator,
    DualHeadDiscriminatorSpec, Generator, GeneratorSpec, RawSnapshot, SnapshotArray,
};
use crate::nn::{Adam, AdamState, Graph, ParamId, ParamStore, Scalar, Var};
use crate::weighting::{build_weight_mask, compute_class_frequencies};

/// The ablation ladder. Each arm enables a subset of the full system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationArm {
    /// Source-only baseline: no translation at all.
    A,
    /// Single direction adversarial + semantic head, no reconstruction.
    B,
    /// (b) plus frequency-weighted source reconstruction.
    C,
    /// Plain two-direction cycle, no semantic head, unweighted.
    D,
    /// Full method: cycle + semantic heads + weighting.
    E,
}

impl AblationArm {
    pub fn uses_gan(self) -> bool {
        self != AblationArm::A
    }

    /// Both mapping directions (and both discriminators) active.
    pub fn bidirectional(self) -> bool {
        matches!(self, AblationArm::D | AblationArm::E)
    }

    pub fn semantic(self) -> bool {
        matches!(self, AblationArm::B | AblationArm::C | AblationArm::E)
    }

    /// Reconstruction weighting by (1 - class frequency).
    pub fn weighted(self) -> bool {
        matches!(self, AblationArm::C | AblationArm::E)
    }

    /// Any reconstruction term at all.
    pub fn reconstruction(self) -> bool {
        matches!(self, AblationArm::C | AblationArm::D | AblationArm::E)
    }

    pub fn all() -> [AblationArm; 5] {
        [AblationArm::A, AblationArm::B, AblationArm::C, AblationArm::D, AblationArm::E]
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationArm::A => "synthetic",
            AblationArm::B => "gan+sem",
            AblationArm::C => "gan+sem+weight",
            AblationArm::D => "cycle",
            AblationArm::E => "cycle+sem+weight",
        }
    }
}

impl fmt::Display for AblationArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            AblationArm::A => 'a',
            AblationArm::B => 'b',
            AblationArm::C => 'c',
            AblationArm::D => 'd',
            AblationArm::E => 'e',
        };
        write!(f, "{c}")
    }
}

impl FromStr for AblationArm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "a" => Ok(AblationArm::A),
            "b" => Ok(AblationArm::B),
            "c" => Ok(AblationArm::C),
            "d" => Ok(AblationArm::D),
            "e" => Ok(AblationArm::E),
            other => Err(Error::Config(format!("unknown ablation arm `{other}`"))),
        }
    }
}

/// All hyperparameters of one GAN training run. Defaults follow the
/// full-scale protocol (300k steps, lr 1e-4, batch 2, 512 crops); toy runs
/// override the scale-dependent fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub crop_size: usize,
    pub seed: u64,
    pub ablation_arm: AblationArm,
    /// Use the literal minimax generator objective instead of the
    /// non-saturating default.
    pub saturating_adv: bool,
    pub log_interval: u64,
    pub snapshot_interval: u64,
    /// Discriminator updates per generator update.
    pub disc_steps_per_gen: u32,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub generator: GeneratorSpec,
    pub discriminator: DualHeadDiscriminatorSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            learning_rate: 1e-4,
            batch_size: 2,
            total_steps: 300_000,
            crop_size: 512,
            seed: 0,
            ablation_arm: AblationArm::E,
            saturating_adv: false,
            log_interval: 100,
            snapshot_interval: 5000,
            disc_steps_per_gen: 1,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            generator: GeneratorSpec::default(),
            discriminator: DualHeadDiscriminatorSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn adv_mode(&self) -> AdvMode {
        if self.saturating_adv { AdvMode::Saturating } else { AdvMode::NonSaturating }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.ablation_arm.uses_gan() && self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.crop_size == 0 {
            return Err(Error::Config("crop_size must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.log_interval == 0 || self.snapshot_interval == 0 {
            return Err(Error::Config("log/snapshot intervals must be positive".into()));
        }
        if self.disc_steps_per_gen == 0 {
            return Err(Error::Config("disc_steps_per_gen must be positive".into()));
        }
        let div = 1usize
            << self.generator.downsampling_stages.max(self.discriminator.encoder_stages);
        if !self.crop_size.is_multiple_of(div) {
            return Err(Error::Config(format!(
                "crop_size {} must be divisible by {div} for the configured model depths",
                self.crop_size
            )));
        }
        Ok(())
    }
}

/// One line of the training run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub wall_ms: u64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

/// The four networks over a single parameter store.
pub struct GanSystem<A: Scalar> {
    pub store: ParamStore<A>,
    pub g_st: Generator,
    pub g_ts: Generator,
    pub d_t: DualHeadDiscriminator,
    pub d_s: DualHeadDiscriminator,
    gen_ids: Vec<ParamId>,
    disc_ids: Vec<ParamId>,
}

impl<A: Scalar> GanSystem<A> {
    pub fn build(
        gen_spec: &GeneratorSpec,
        disc_spec: &DualHeadDiscriminatorSpec,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut init = seeded_initializer(&mut store, seed);
        let g_st = Generator::build(&mut init, "g_st", gen_spec)?;
        let g_ts = Generator::build(&mut init, "g_ts", gen_spec)?;
        let gen_end = store.len();
        let mut init = seeded_initializer(&mut store, seed.wrapping_add(1));
        let d_t = DualHeadDiscriminator::build(&mut init, "d_t", disc_spec)?;
        let d_s = DualHeadDiscriminator::build(&mut init, "d_s", disc_spec)?;
        let gen_ids = (0..gen_end as u32).map(ParamId).collect();
        let disc_ids = (gen_end as u32..store.len() as u32).map(ParamId).collect();
        Ok(GanSystem { store, g_st, g_ts, d_t, d_s, gen_ids, disc_ids })
    }

    pub fn generator_param_ids(&self) -> &[ParamId] {
        &self.gen_ids
    }

    pub fn discriminator_param_ids(&self) -> &[ParamId] {
        &self.disc_ids
    }
}

/// Stack [0,1] HWC images into a model batch (B,3,H,W) in [-1,1].
pub fn to_model_batch<A: Scalar>(images: &[&ndarray::Array3<f32>]) -> ArrayD<A> {
    let (h, w, _) = images[0].dim();
    let b = images.len();
    let mut out = ndarray::Array4::<A>::zeros((b, 3, h, w));
    for (bi, img) in images.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out[[bi, c, y, x]] = A::from_f64(img[[y, x, c]] as f64 * 2.0 - 1.0);
                }
            }
        }
    }
    out.into_dyn()
}

/// Inverse remap: (B,3,H,W) in [-1,1] back to [0,1] HWC images.
pub fn from_model_batch<A: Scalar>(batch: &ArrayD<A>) -> Vec<ndarray::Array3<f32>> {
    let v = crate::nn::as4(batch);
    let (b, _, h, w) = v.dim();
    (0..b)
        .map(|bi| {
            ndarray::Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
                let raw = v[[bi, c, y, x]].to_f64().unwrap();
                (((raw + 1.0) / 2.0) as f32).clamp(0.0, 1.0)
            })
        })
        .collect()
}

pub(crate) fn labels_batch(labels: &[&ndarray::Array2<u8>]) -> Array3<usize> {
    let (h, w) = labels[0].dim();
    Array3::from_shape_fn((labels.len(), h, w), |(b, y, x)| labels[b][[y, x]] as usize)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ShuffleQueue {
    order: Vec<usize>,
    pos: usize,
}

impl ShuffleQueue {
    fn new(len: usize) -> Self {
        ShuffleQueue { order: (0..len).collect(), pos: len }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }
}

/// Live training state: system, optimizers, data order, rng, step counter.
pub struct Trainer<A: Scalar> {
    pub sys: GanSystem<A>,
    adam_g: Adam<A>,
    adam_d: Adam<A>,
    rng: ChaCha8Rng,
    step: u64,
    config: TrainConfig,
    catalog: ClassCatalog,
    source_queue: ShuffleQueue,
    target_queue: ShuffleQueue,
}

/// What a finished (or no-op) training run hands back.
pub struct TrainOutcome {
    pub snapshot_path: PathBuf,
    pub log_path: PathBuf,
    pub manifest_path: PathBuf,
    pub steps_run: u64,
}

impl<A: Scalar> Trainer<A> {
    pub fn new(config: TrainConfig, dataset: &DomainPairDataset) -> Result<Self> {
        config.validate()?;
        if config.discriminator.num_classes != dataset.catalog.num_classes() {
            return Err(Error::Config(format!(
                "discriminator emits {} classes but the catalog has {}",
                config.discriminator.num_classes,
                dataset.catalog.num_classes()
            )));
        }
        for img in &dataset.source {
            let (h, w, _) = img.pixels.dim();
            if config.crop_size > h || config.crop_size > w {
                return Err(Error::Config(format!(
                    "crop_size {} exceeds source image `{}` ({h}x{w})",
                    config.crop_size, img.id
                )));
            }
        }
        let catalog = compute_class_frequencies(&dataset.source, &dataset.catalog)?;
        let sys = GanSystem::build(&config.generator, &config.discriminator, config.seed)?;
        let adam_g = Adam::new(
            &sys.store,
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            1e-8,
        );
        let adam_d = Adam::new(
            &sys.store,
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            1e-8,
        );
        let rng = ChaCha8Rng::seed_from_u64(
            config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x5EED),
        );
        let source_queue = ShuffleQueue::new(dataset.source.len());
        let target_queue = ShuffleQueue::new(dataset.target.len());
        Ok(Trainer {
            sys,
            adam_g,
            adam_d,
            rng,
            step: 0,
            config,
            catalog,
            source_queue,
            target_queue,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    /// Sample and crop the next batch. Single-threaded on purpose: the
    /// delivered sequence is a pure function of the seed.
    pub fn next_batch(
        &mut self,
        dataset: &DomainPairDataset,
    ) -> Result<(Vec<LabeledImage>, Vec<UnlabeledImage>)> {
        let n = self.config.batch_size;
        let mut batch_s = Vec::with_capacity(n);
        let mut batch_t = Vec::with_capacity(n);
        for _ in 0..n {
            let i = self.source_queue.next(&mut self.rng);
            batch_s.push(random_crop_labeled(
                &dataset.source[i],
                self.config.crop_size,
                &mut self.rng,
            )?);
        }
        for _ in 0..n {
            let i = self.target_queue.next(&mut self.rng);
            batch_t.push(random_crop_unlabeled(
                &dataset.target[i],
                self.config.crop_size,
                &mut self.rng,
            )?);
        }
        Ok((batch_s, batch_t))
    }

    /// Run one generator forward without recording gradients.
    fn apply_generator(&self, which: GenSide, input: &ArrayD<A>) -> ArrayD<A> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let gen = match which {
            GenSide::SourceToTarget => &self.sys.g_st,
            GenSide::TargetToSource => &self.sys.g_ts,
        };
        let y = gen.forward(&mut g, &self.sys.store, x);
        g.value(y).clone()
    }

    /// Discriminator phase: update both discriminators on
    /// `-L_adv + lambda_sem * L_sem` with the generators frozen (fakes are
    /// fed as constants). Returns the updated parameter ids.
    fn disc_phase(
        &mut self,
        x_s: &ArrayD<A>,
        x_t: &ArrayD<A>,
        y_s: &Array3<usize>,
    ) -> Result<Vec<ParamId>> {
        let arm = self.config.ablation_arm;
        let fake_t = self.apply_generator(GenSide::SourceToTarget, x_s);
        let fake_s =
            arm.bidirectional().then(|| self.apply_generator(GenSide::TargetToSource, x_t));

        let mut g = Graph::new();
        let x_s_v = g.constant(x_s.clone());
        let x_t_v = g.constant(x_t.clone());
        let fake_t_v = g.constant(fake_t);

        let real_t = self.sys.d_t.forward(&mut g, &self.sys.store, x_t_v, false);
        let fake_t_out = self.sys.d_t.forward(&mut g, &self.sys.store, fake_t_v, arm.semantic());
        let adv_st = graph_adversarial_value(&mut g, real_t.domain_score, fake_t_out.domain_score);
        let mut adv_sum = adv_st;

        let mut sem_terms: Vec<Var> = Vec::new();
        if let Some(seg) = fake_t_out.seg_logits {
            sem_terms.push(graph_pixel_ce(&mut g, seg, y_s));
        }
        if arm.bidirectional() {
            let fake_s_v = g.constant(fake_s.unwrap());
            // one real-source forward serves the adversarial term and, when
            // the semantic head is on, its source-side training term
            let real_s = self.sys.d_s.forward(&mut g, &self.sys.store, x_s_v, arm.semantic());
            let fake_s_out = self.sys.d_s.forward(&mut g, &self.sys.store, fake_s_v, false);
            let adv_ts =
                graph_adversarial_value(&mut g, real_s.domain_score, fake_s_out.domain_score);
            adv_sum = g.add(adv_sum, adv_ts);
            if let Some(seg) = real_s.seg_logits {
                sem_terms.push(graph_pixel_ce(&mut g, seg, y_s));
            }
        }

        let mut loss = g.scale(adv_sum, -A::one());
        if !sem_terms.is_empty() && self.config.weights.lambda_sem > 0.0 {
            let mut sem_sum = sem_terms[0];
            for t in &sem_terms[1..] {
                sem_sum = g.add(sem_sum, *t);
            }
            let weighted = g.scale(sem_sum, A::from_f64(self.config.weights.lambda_sem));
            loss = g.add(loss, weighted);
        }
        g.backward(loss);

        let disc_set: std::collections::BTreeSet<ParamId> =
            self.sys.disc_ids.iter().copied().collect();
        let grads: Vec<(ParamId, ArrayD<A>)> = g
            .param_grads()
            .filter(|(id, _)| disc_set.contains(id))
            .map(|(id, gr)| (id, gr.clone()))
            .collect();
        let ids = grads.iter().map(|(id, _)| *id).collect();
        self.adam_d.step(&mut self.sys.store, grads.iter().map(|(id, gr)| (*id, gr)));
        Ok(ids)
    }

    /// Generator phase: build the full objective graph (including the
    /// discriminator real-side evaluations used for logging), update the
    /// generators, and return the step's loss breakdown.
    fn gen_phase(
        &mut self,
        x_s: &ArrayD<A>,
        x_t: &ArrayD<A>,
        y_s: &Array3<usize>,
        w_mask: &ArrayD<A>,
    ) -> Result<(LossBreakdown, Vec<ParamId>)> {
        let arm = self.config.ablation_arm;
        let mode = self.config.adv_mode();
        let mut g = Graph::new();
        let x_s_v = g.constant(x_s.clone());
        let x_t_v = g.constant(x_t.clone());

        // S->T direction
        let fake_t = self.sys.g_st.forward(&mut g, &self.sys.store, x_s_v);
        let d_t_fake = self.sys.d_t.forward(&mut g, &self.sys.store, fake_t, arm.semantic());
        let g_adv_st = graph_generator_adv(&mut g, d_t_fake.domain_score, mode);
        let d_t_real = self.sys.d_t.forward(&mut g, &self.sys.store, x_t_v, false);
        let adv_st =
            graph_adversarial_value(&mut g, d_t_real.domain_score, d_t_fake.domain_score);
        let sem_st = d_t_fake.seg_logits.map(|seg| graph_pixel_ce(&mut g, seg, y_s));

        // T->S direction (cycle arms)
        let mut g_adv_ts = None;
        let mut adv_ts = None;
        let mut sem_ts = None;
        let mut rec = None;
        if arm.bidirectional() {
            let fake_s = self.sys.g_ts.forward(&mut g, &self.sys.store, x_t_v);
            let d_s_fake = self.sys.d_s.forward(&mut g, &self.sys.store, fake_s, false);
            g_adv_ts = Some(graph_generator_adv(&mut g, d_s_fake.domain_score, mode));
            let d_s_real = self.sys.d_s.forward(&mut g, &self.sys.store, x_s_v, arm.semantic());
            adv_ts = Some(graph_adversarial_value(
                &mut g,
                d_s_real.domain_score,
                d_s_fake.domain_score,
            ));
            sem_ts = d_s_real.seg_logits.map(|seg| graph_pixel_ce(&mut g, seg, y_s));

            let cyc_t = self.sys.g_st.forward(&mut g, &self.sys.store, fake_s);
            let cyc_s = self.sys.g_ts.forward(&mut g, &self.sys.store, fake_t);
            let target_term = g.l1_mean(cyc_t, x_t_v);
            let source_weights = if arm.weighted() {
                w_mask.mapv(|v| A::one() - v)
            } else {
                // unweighted cycle: the frequency mask is forced to zero
                ArrayD::ones(w_mask.raw_dim())
            };
            let source_term = g.weighted_l1_mean(cyc_s, x_s_v, source_weights);
            rec = Some(g.add(target_term, source_term));
        } else if arm.reconstruction() {
            // single-direction weighted reconstruction between the source
            // image and its adapted version
            let source_weights = w_mask.mapv(|v| A::one() - v);
            rec = Some(g.weighted_l1_mean(fake_t, x_s_v, source_weights));
        }

        // compose L_G
        let mut total = g_adv_st;
        if let Some(t) = g_adv_ts {
            total = g.add(total, t);
        }
        if self.config.weights.lambda_sem > 0.0 {
            let sem_sum = match (sem_st, sem_ts) {
                (Some(a), Some(b)) => Some(g.add(a, b)),
                (Some(a), None) => Some(a),
                (None, Some(b)) => Some(b),
                (None, None) => None,
            };
            if let Some(s) = sem_sum {
                let weighted = g.scale(s, A::from_f64(self.config.weights.lambda_sem));
                total = g.add(total, weighted);
            }
        }
        if let Some(r) = rec {
            if self.config.weights.lambda_rec > 0.0 {
                let weighted = g.scale(r, A::from_f64(self.config.weights.lambda_rec));
                total = g.add(total, weighted);
            }
        }

        g.backward(total);

        let gen_set: std::collections::BTreeSet<ParamId> =
            self.sys.gen_ids.iter().copied().collect();
        let grads: Vec<(ParamId, ArrayD<A>)> = g
            .param_grads()
            .filter(|(id, _)| gen_set.contains(id))
            .map(|(id, gr)| (id, gr.clone()))
            .collect();
        let ids: Vec<ParamId> = grads.iter().map(|(id, _)| *id).collect();
        self.adam_g.step(&mut self.sys.store, grads.iter().map(|(id, gr)| (*id, gr)));

        let scalar =
            |g: &Graph<A>, v: Option<Var>| v.map(|v| g.scalar(v).to_f64().unwrap()).unwrap_or(0.0);
        let mut breakdown = LossBreakdown {
            adv_st: g.scalar(adv_st).to_f64().unwrap(),
            adv_ts: scalar(&g, adv_ts),
            g_adv_st: g.scalar(g_adv_st).to_f64().unwrap(),
            g_adv_ts: scalar(&g, g_adv_ts),
            sem_st: scalar(&g, sem_st),
            sem_ts: scalar(&g, sem_ts),
            rec: scalar(&g, rec),
            total_d: 0.0,
            total_g: 0.0,
        };
        breakdown.total_d = breakdown.recomposed_total_d(&self.config.weights);
        breakdown.total_g = breakdown.recomposed_total_g(&self.config.weights);
        Ok((breakdown, ids))
    }

    /// One full training step: `disc_steps_per_gen` discriminator updates,
    /// then one generator update.
    pub fn train_step(
        &mut self,
        batch_s: &[LabeledImage],
        batch_t: &[UnlabeledImage],
    ) -> Result<LossBreakdown> {
        let (breakdown, _, _) = self.train_step_instrumented(batch_s, batch_t)?;
        Ok(breakdown)
    }

    /// As [`Self::train_step`] but also reporting which parameters received
    /// gradients in each phase.
    pub fn train_step_instrumented(
        &mut self,
        batch_s: &[LabeledImage],
        batch_t: &[UnlabeledImage],
    ) -> Result<(LossBreakdown, Vec<ParamId>, Vec<ParamId>)> {
        let arm = self.config.ablation_arm;
        if !arm.uses_gan() {
            return Err(Error::Config("ablation arm `a` performs no GAN training".into()));
        }
        let pixels_s: Vec<&ndarray::Array3<f32>> = batch_s.iter().map(|s| &s.pixels).collect();
        let pixels_t: Vec<&ndarray::Array3<f32>> = batch_t.iter().map(|t| &t.pixels).collect();
        let x_s = to_model_batch::<A>(&pixels_s);
        let x_t = to_model_batch::<A>(&pixels_t);
        let label_refs: Vec<&ndarray::Array2<u8>> = batch_s.iter().map(|s| &s.labels).collect();
        let y_s = labels_batch(&label_refs);

        // per-pixel frequency mask; lookup over the already-cropped labels
        // is identical to cropping a full-image mask with the same window
        let (h, w) = batch_s[0].labels.dim();
        let mut w_mask = ndarray::Array3::<A>::zeros((batch_s.len(), h, w));
        for (bi, s) in batch_s.iter().enumerate() {
            let mask = build_weight_mask(&s.labels, &self.catalog, &s.id)?;
            for y in 0..h {
                for x in 0..w {
                    w_mask[[bi, y, x]] = A::from_f64(mask.values[[y, x]]);
                }
            }
        }
        let w_mask = w_mask.into_dyn();

        let mut d_ids = Vec::new();
        for _ in 0..self.config.disc_steps_per_gen {
            d_ids = self.disc_phase(&x_s, &x_t, &y_s)?;
        }
        let (breakdown, g_ids) = self.gen_phase(&x_s, &x_t, &y_s, &w_mask)?;

        self.step += 1;
        for (term, value) in breakdown.terms() {
            if !value.is_finite() {
                return Err(Error::NonFinite { term: term.to_string(), step: self.step });
            }
        }
        Ok((breakdown, d_ids, g_ids))
    }

    fn snapshot_meta(&self) -> serde_json::Value {
        let seed_hex: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        let pos = self.rng.get_word_pos();
        serde_json::json!({
            "kind": "gan",
            "step": self.step,
            "generator": self.config.generator,
            "discriminator": self.config.discriminator,
            "weights": self.config.weights,
            "saturating_adv": self.config.saturating_adv,
            "ablation_arm": self.config.ablation_arm,
            "rng": {
                "seed_hex": seed_hex,
                "word_pos_hi": (pos >> 64) as u64,
                "word_pos_lo": pos as u64,
            },
            "source_queue": self.source_queue,
            "target_queue": self.target_queue,
        })
    }

    /// Write model parameters, both optimizer states and the data-path rng
    /// into one self-describing snapshot file.
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let mut arrays = store_arrays(&self.sys.store);
        push_adam_arrays(&mut arrays, "adam_g", &self.adam_g.export_state());
        push_adam_arrays(&mut arrays, "adam_d", &self.adam_d.export_state());
        write_snapshot(path, &self.snapshot_meta(), &arrays)
    }

    /// Restore a trainer from a snapshot produced under the same config.
    pub fn resume(config: TrainConfig, dataset: &DomainPairDataset, path: &Path) -> Result<Self> {
        let raw = read_snapshot(path)?;
        let mut trainer = Trainer::new(config, dataset)?;
        check_spec(&raw, "generator", &trainer.config.generator)?;
        check_spec(&raw, "discriminator", &trainer.config.discriminator)?;
        raw.load_into_store(&mut trainer.sys.store)?;
        let g_state = pop_adam_arrays(&raw, "adam_g", &trainer.sys.store)?;
        let d_state = pop_adam_arrays(&raw, "adam_d", &trainer.sys.store)?;
        trainer.adam_g.import_state(&g_state)?;
        trainer.adam_d.import_state(&d_state)?;
        trainer.step = raw.meta["step"].as_u64().ok_or_else(|| {
            Error::Validation("snapshot metadata is missing the step counter".into())
        })?;
        let seed_hex = raw.meta["rng"]["seed_hex"]
            .as_str()
            .ok_or_else(|| Error::Validation("snapshot missing rng state".into()))?;
        let mut seed = [0u8; 32];
        for (i, chunk) in seed_hex.as_bytes().chunks(2).enumerate().take(32) {
            let s = std::str::from_utf8(chunk).unwrap();
            seed[i] = u8::from_str_radix(s, 16)
                .map_err(|_| Error::Validation("bad rng seed in snapshot".into()))?;
        }
        let hi = raw.meta["rng"]["word_pos_hi"].as_u64().unwrap_or(0) as u128;
        let lo = raw.meta["rng"]["word_pos_lo"].as_u64().unwrap_or(0) as u128;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos((hi << 64) | lo);
        trainer.rng = rng;
        trainer.source_queue = serde_json::from_value(raw.meta["source_queue"].clone())?;
        trainer.target_queue = serde_json::from_value(raw.meta["target_queue"].clone())?;
        Ok(trainer)
    }
}

fn check_spec<S: Serialize>(raw: &RawSnapshot, key: &str, expected: &S) -> Result<()> {
    let stored = &raw.meta[key];
    let expect = serde_json::to_value(expected).unwrap();
    if *stored != expect {
        return Err(Error::SpecMismatch(format!(
            "snapshot {key} spec {stored} does not match configured {expect}"
        )));
    }
    Ok(())
}

fn push_adam_arrays(arrays: &mut Vec<SnapshotArray>, prefix: &str, state: &AdamState) {
    arrays.push(SnapshotArray {
        name: format!("{prefix}.t"),
        shape: vec![1],
        data: vec![state.t as f64],
    });
    for (i, m) in state.m.iter().enumerate() {
        arrays.push(SnapshotArray {
            name: format!("{prefix}.m{i}"),
            shape: vec![m.len()],
            data: m.clone(),
        });
    }
    for (i, v) in state.v.iter().enumerate() {
        arrays.push(SnapshotArray {
            name: format!("{prefix}.v{i}"),
            shape: vec![v.len()],
            data: v.clone(),
        });
    }
}

fn pop_adam_arrays<A: Scalar>(
    raw: &RawSnapshot,
    prefix: &str,
    store: &ParamStore<A>,
) -> Result<AdamState> {
    let t = raw
        .array(&format!("{prefix}.t"))
        .ok_or_else(|| Error::SpecMismatch(format!("snapshot missing {prefix} state")))?
        .data[0] as u64;
    let mut m = Vec::with_capacity(store.len());
    let mut v = Vec::with_capacity(store.len());
    for i in 0..store.len() {
        m.push(
            raw.array(&format!("{prefix}.m{i}"))
                .ok_or_else(|| Error::SpecMismatch(format!("snapshot missing {prefix}.m{i}")))?
                .data
                .clone(),
        );
        v.push(
            raw.array(&format!("{prefix}.v{i}"))
                .ok_or_else(|| Error::SpecMismatch(format!("snapshot missing {prefix}.v{i}")))?
                .data
                .clone(),
        );
    }
    Ok(AdamState { t, m, v })
}

#[derive(Debug, Clone, Copy)]
enum GenSide {
    SourceToTarget,
    TargetToSource,
}

/// Both composed objectives as nodes of one fully differentiable graph.
pub struct ObjectiveNodes {
    pub l_d: Var,
    pub l_g: Var,
    pub l_adv: Var,
    pub l_sem: Option<Var>,
    pub l_rec: Option<Var>,
}

/// Build the complete objective graph with nothing detached: the fakes are
/// produced in-graph, so both `L_D` and `L_G` are differentiable functions
/// of every parameter. The training step itself freezes the opposite side
/// per phase; this builder exists for whole-system gradient verification.
#[allow(clippy::too_many_arguments)]
pub fn build_objective_graph<A: Scalar>(
    sys: &GanSystem<A>,
    arm: AblationArm,
    mode: AdvMode,
    weights: &LossWeights,
    x_s: &ArrayD<A>,
    x_t: &ArrayD<A>,
    y_s: &Array3<usize>,
    w_mask: &ArrayD<A>,
) -> (Graph<A>, ObjectiveNodes) {
    assert!(arm.uses_gan(), "arm `a` has no objectives");
    let mut g = Graph::new();
    let x_s_v = g.constant(x_s.clone());
    let x_t_v = g.constant(x_t.clone());

    let fake_t = sys.g_st.forward(&mut g, &sys.store, x_s_v);
    let d_t_real = sys.d_t.forward(&mut g, &sys.store, x_t_v, false);
    let d_t_fake = sys.d_t.forward(&mut g, &sys.store, fake_t, arm.semantic());
    let adv_st = graph_adversarial_value(&mut g, d_t_real.domain_score, d_t_fake.domain_score);
    let g_adv_st = graph_generator_adv(&mut g, d_t_fake.domain_score, mode);
    let mut adv_sum = adv_st;
    let mut g_adv_sum = g_adv_st;

    let mut sem_terms: Vec<Var> = Vec::new();
    if let Some(seg) = d_t_fake.seg_logits {
        sem_terms.push(graph_pixel_ce(&mut g, seg, y_s));
    }

    let mut rec = None;
    if arm.bidirectional() {
        let fake_s = sys.g_ts.forward(&mut g, &sys.store, x_t_v);
        let d_s_real = sys.d_s.forward(&mut g, &sys.store, x_s_v, arm.semantic());
        let d_s_fake = sys.d_s.forward(&mut g, &sys.store, fake_s, false);
        let adv_ts = graph_adversarial_value(&mut g, d_s_real.domain_score, d_s_fake.domain_score);
        adv_sum = g.add(adv_sum, adv_ts);
        let g_adv_ts = graph_generator_adv(&mut g, d_s_fake.domain_score, mode);
        g_adv_sum = g.add(g_adv_sum, g_adv_ts);
        if let Some(seg) = d_s_real.seg_logits {
            sem_terms.push(graph_pixel_ce(&mut g, seg, y_s));
        }
        let cyc_t = sys.g_st.forward(&mut g, &sys.store, fake_s);
        let cyc_s = sys.g_ts.forward(&mut g, &sys.store, fake_t);
        let target_term = g.l1_mean(cyc_t, x_t_v);
        let source_weights = if arm.weighted() {
            w_mask.mapv(|v| A::one() - v)
        } else {
            ArrayD::ones(w_mask.raw_dim())
        };
        let source_term = g.weighted_l1_mean(cyc_s, x_s_v, source_weights);
        rec = Some(g.add(target_term, source_term));
    } else if arm.reconstruction() {
        let source_weights = w_mask.mapv(|v| A::one() - v);
        rec = Some(g.weighted_l1_mean(fake_t, x_s_v, source_weights));
    }

    let l_sem = match sem_terms.as_slice() {
        [] => None,
        [one] => Some(*one),
        [first, rest @ ..] => {
            let mut sum = *first;
            for t in rest {
                sum = g.add(sum, *t);
            }
            Some(sum)
        }
    };

    // L_D = -L_adv + lambda_sem * L_sem
    let mut l_d = g.scale(adv_sum, -A::one());
    if let Some(sem) = l_sem {
        let weighted = g.scale(sem, A::from_f64(weights.lambda_sem));
        l_d = g.add(l_d, weighted);
    }
    // L_G = g_adv + lambda_sem * L_sem + lambda_rec * L_rec
    let mut l_g = g_adv_sum;
    if let Some(sem) = l_sem {
        let weighted = g.scale(sem, A::from_f64(weights.lambda_sem));
        l_g = g.add(l_g, weighted);
    }
    if let Some(r) = rec {
        let weighted = g.scale(r, A::from_f64(weights.lambda_rec));
        l_g = g.add(l_g, weighted);
    }

    (g, ObjectiveNodes { l_d, l_g, l_adv: adv_sum, l_sem, l_rec: rec })
}

/// Train the system on a dataset, writing the manifest, the run log and
/// snapshots under `run_dir`. Arm `a` is a no-op passthrough that still
/// writes a step-0 snapshot and manifest.
pub fn train<A: Scalar>(
    config: &TrainConfig,
    dataset: &DomainPairDataset,
    run_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.validate()?;
    std::fs::create_dir_all(run_dir.join("snapshots"))?;
    std::fs::create_dir_all(run_dir.join("logs"))?;

    // the manifest goes down before any heavy work
    let catalog = compute_class_frequencies(&dataset.source, &dataset.catalog)?;
    let manifest_path = run_dir.join("manifest.json");
    let mut manifest = RunManifest::new(config.clone(), dataset, &catalog)?;
    manifest.write(&manifest_path)?;

    let log_path = run_dir.join("logs").join("train.jsonl");
    let snapshot_path = run_dir.join("snapshots").join("latest.bin");

    if !config.ablation_arm.uses_gan() {
        // arm (a): no GAN training occurs
        let trainer = Trainer::<A>::new(config.clone(), dataset)?;
        trainer.save_snapshot(&snapshot_path)?;
        if !log_path.exists() {
            std::fs::write(&log_path, "")?;
        }
        manifest.finalize(&manifest_path, 0.0)?;
        return Ok(TrainOutcome { snapshot_path, log_path, manifest_path, steps_run: 0 });
    }

    let mut trainer = match resume_from {
        Some(path) => Trainer::<A>::resume(config.clone(), dataset, path)?,
        None => Trainer::<A>::new(config.clone(), dataset)?,
    };

    let start = Instant::now();
    let mut log = std::io::BufWriter::new(
        std::fs::OpenOptions::new().create(true).append(true).open(&log_path)?,
    );
    let started_at = trainer.step;
    while trainer.step < config.total_steps {
        let (batch_s, batch_t) = trainer.next_batch(dataset)?;
        let losses = trainer.train_step(&batch_s, &batch_t)?;
        let step = trainer.step;
        if step == 1 || step % config.log_interval == 0 || step == config.total_steps {
            let record = LogRecord { step, wall_ms: start.elapsed().as_millis() as u64, losses };
            serde_json::to_writer(&mut log, &record)?;
            log.write_all(b"\n")?;
            log.flush()?;
        }
        if step.is_multiple_of(config.snapshot_interval) && step != config.total_steps {
            trainer
                .save_snapshot(&run_dir.join("snapshots").join(format!("step_{step:08}.bin")))?;
            trainer.save_snapshot(&snapshot_path)?;
        }
    }
    log.flush()?;
    trainer.save_snapshot(&snapshot_path)?;
    manifest.finalize(&manifest_path, start.elapsed().as_secs_f64())?;
    Ok(TrainOutcome {
        snapshot_path,
        log_path,
        manifest_path,
        steps_run: trainer.step - started_at,
    })
}

/// Parse a run log written by [`train`].
pub fn read_run_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

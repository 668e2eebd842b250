//! Model builders and forward contracts: residual encoder-decoder
//! generators, dual-head discriminators (shared encoder feeding a domain
//! score head and a segmentation decoder), and the standalone downstream
//! segmenter.
//!
//! Images are (B,3,H,W) in the model-internal [-1,1] range; the remap from
//! the data model's [0,1] happens at the training boundary.

mod snapshot;

pub use snapshot::{read_snapshot, store_arrays, write_snapshot, RawSnapshot, SnapshotArray};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Act, Conv2d, ConvBlock, Graph, Initializer, Norm, ParamStore, ResidualBlock, Scalar, Var};

/// Generator architecture parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub base_channels: usize,
    pub num_residual_blocks: usize,
    pub downsampling_stages: usize,
    /// Scale of the bounded residual the network adds to its input;
    /// 0 makes the generator the identity map.
    #[serde(default = "default_residual_scale")]
    pub residual_scale: f64,
}

fn default_residual_scale() -> f64 {
    2.0
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            base_channels: 32,
            num_residual_blocks: 4,
            downsampling_stages: 2,
            residual_scale: 2.0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 1 || self.num_residual_blocks < 1 || self.downsampling_stages < 1 {
            return Err(Error::Config("generator spec counts must be >= 1".into()));
        }
        if self.residual_scale < 0.0 {
            return Err(Error::Config("residual_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// Dual-head discriminator architecture parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualHeadDiscriminatorSpec {
    pub base_channels: usize,
    pub encoder_stages: usize,
    pub num_classes: usize,
}

impl Default for DualHeadDiscriminatorSpec {
    fn default() -> Self {
        DualHeadDiscriminatorSpec { base_channels: 32, encoder_stages: 3, num_classes: 5 }
    }
}

impl DualHeadDiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 1 || self.encoder_stages < 1 {
            return Err(Error::Config("discriminator spec counts must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("discriminator needs at least 2 classes".into()));
        }
        Ok(())
    }
}

/// Spec for the downstream segmenter (same encoder-decoder body as the
/// discriminator's segmentation path, without a domain head).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmenterSpec {
    pub base_channels: usize,
    pub encoder_stages: usize,
    pub num_classes: usize,
}

impl Default for SegmenterSpec {
    fn default() -> Self {
        SegmenterSpec { base_channels: 16, encoder_stages: 3, num_classes: 5 }
    }
}

impl SegmenterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 1 || self.encoder_stages < 1 {
            return Err(Error::Config("segmenter spec counts must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("segmenter needs at least 2 classes".into()));
        }
        Ok(())
    }
}

fn check_divisible(h: usize, w: usize, stages: usize, what: &str) -> Result<()> {
    let div = 1usize << stages;
    if h == 0 || w == 0 || !h.is_multiple_of(div) || !w.is_multiple_of(div) {
        return Err(Error::Validation(format!(
            "{what}: input {h}x{w} must be divisible by 2^{stages} = {div}"
        )));
    }
    Ok(())
}

/// Residual encoder-decoder image translator. Output equals the input plus
/// a bounded learned residual, clamped back to [-1,1], so spatial size is
/// preserved and `residual_scale = 0` yields the identity map.
#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: GeneratorSpec,
    stem: ConvBlock,
    downs: Vec<ConvBlock>,
    blocks: Vec<ResidualBlock>,
    ups: Vec<ConvBlock>,
    head: Conv2d,
}

impl Generator {
    pub fn build<A: Scalar>(
        init: &mut Initializer<'_, A>,
        prefix: &str,
        spec: &GeneratorSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let base = spec.base_channels;
        let stem = ConvBlock::new(init, &format!("{prefix}.stem"), 3, base, 3, 1, Norm::Instance, Act::Relu);
        let mut downs = Vec::new();
        let mut ch = base;
        for i in 0..spec.downsampling_stages {
            downs.push(ConvBlock::new(
                init,
                &format!("{prefix}.down{i}"),
                ch,
                ch * 2,
                3,
                2,
                Norm::Instance,
                Act::Relu,
            ));
            ch *= 2;
        }
        let blocks = (0..spec.num_residual_blocks)
            .map(|i| ResidualBlock::new(init, &format!("{prefix}.res{i}"), ch))
            .collect();
        let mut ups = Vec::new();
        for i in 0..spec.downsampling_stages {
            ups.push(ConvBlock::new(
                init,
                &format!("{prefix}.up{i}"),
                ch,
                ch / 2,
                3,
                1,
                Norm::Instance,
                Act::Relu,
            ));
            ch /= 2;
        }
        let head = Conv2d::new(init, &format!("{prefix}.head"), base, 3, 3, 1, 1);
        Ok(Generator { spec: *spec, stem, downs, blocks, ups, head })
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        check_divisible(h, w, self.spec.downsampling_stages, "generator")
    }

    /// (B,3,H,W) in [-1,1] -> (B,3,H,W) in [-1,1].
    pub fn forward<A: Scalar>(&self, g: &mut Graph<A>, store: &ParamStore<A>, x: Var) -> Var {
        let mut h = self.stem.forward(g, store, x);
        for d in &self.downs {
            h = d.forward(g, store, h);
        }
        for b in &self.blocks {
            h = b.forward(g, store, h);
        }
        for u in &self.ups {
            h = g.upsample2x(h);
            h = u.forward(g, store, h);
        }
        let delta = self.head.forward(g, store, h);
        let bounded = g.tanh(delta);
        let scaled = g.scale(bounded, A::from_f64(self.spec.residual_scale));
        let sum = g.add(x, scaled);
        g.clamp_unit(sum)
    }
}

/// Shared encoder-decoder body: the encoder feeds both the segmentation
/// decoder (with skip connections) and, in the discriminator, the domain
/// head on the deepest features.
#[derive(Debug, Clone)]
struct UNetBody {
    encoders: Vec<ConvBlock>,
    decoders: Vec<ConvBlock>,
    post_up: ConvBlock,
    seg_head: Conv2d,
    stages: usize,
}

impl UNetBody {
    fn build<A: Scalar>(
        init: &mut Initializer<'_, A>,
        prefix: &str,
        base: usize,
        stages: usize,
        num_classes: usize,
    ) -> Self {
        let mut encoders = Vec::new();
        let mut ch = 3;
        for i in 0..stages {
            let out = base << i;
            // no normalization on the first conv, the usual choice
            let norm = if i == 0 { Norm::None } else { Norm::Instance };
            encoders.push(ConvBlock::new(
                init,
                &format!("{prefix}.enc{i}"),
                ch,
                out,
                3,
                2,
                norm,
                Act::LeakyRelu(0.2),
            ));
            ch = out;
        }
        let mut decoders = Vec::new();
        for i in (0..stages.saturating_sub(1)).rev() {
            let skip_ch = base << i;
            let in_ch = (base << (i + 1)) + skip_ch;
            decoders.push(ConvBlock::new(
                init,
                &format!("{prefix}.dec{i}"),
                in_ch,
                skip_ch,
                3,
                1,
                Norm::Instance,
                Act::Relu,
            ));
        }
        let post_up = ConvBlock::new(
            init,
            &format!("{prefix}.post"),
            base,
            base,
            3,
            1,
            Norm::Instance,
            Act::Relu,
        );
        let seg_head = Conv2d::new(init, &format!("{prefix}.seg"), base, num_classes, 3, 1, 1);
        UNetBody { encoders, decoders, post_up, seg_head, stages }
    }

    fn encode<A: Scalar>(&self, g: &mut Graph<A>, store: &ParamStore<A>, x: Var) -> Vec<Var> {
        let mut features = Vec::with_capacity(self.stages);
        let mut h = x;
        for e in &self.encoders {
            h = e.forward(g, store, h);
            features.push(h);
        }
        features
    }

    fn decode<A: Scalar>(&self, g: &mut Graph<A>, store: &ParamStore<A>, features: &[Var]) -> Var {
        let mut h = *features.last().unwrap();
        for (d, level) in self.decoders.iter().zip((0..self.stages - 1).rev()) {
            h = g.upsample2x(h);
            h = g.concat_channels(h, features[level]);
            h = d.forward(g, store, h);
        }
        h = g.upsample2x(h);
        h = self.post_up.forward(g, store, h);
        self.seg_head.forward(g, store, h)
    }
}

/// Output of a dual-head discriminator forward pass.
pub struct DiscOutput {
    /// (B,1,h,w) post-sigmoid patch scores at the bottleneck resolution.
    pub domain_score: Var,
    /// (B,num_classes,H,W) segmentation logits; absent when the head was
    /// skipped (ablations without a semantic head).
    pub seg_logits: Option<Var>,
}

/// Discriminator with a realism head and a segmentation head on one shared
/// encoder.
#[derive(Debug, Clone)]
pub struct DualHeadDiscriminator {
    pub spec: DualHeadDiscriminatorSpec,
    body: UNetBody,
    domain_hidden: ConvBlock,
    domain_out: Conv2d,
}

impl DualHeadDiscriminator {
    pub fn build<A: Scalar>(
        init: &mut Initializer<'_, A>,
        prefix: &str,
        spec: &DualHeadDiscriminatorSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let body =
            UNetBody::build(init, prefix, spec.base_channels, spec.encoder_stages, spec.num_classes);
        let deep = spec.base_channels << (spec.encoder_stages - 1);
        let domain_hidden = ConvBlock::new(
            init,
            &format!("{prefix}.dom0"),
            deep,
            deep,
            3,
            1,
            Norm::None,
            Act::LeakyRelu(0.2),
        );
        let domain_out = Conv2d::new(init, &format!("{prefix}.dom1"), deep, 1, 3, 1, 1);
        Ok(DualHeadDiscriminator { spec: *spec, body, domain_hidden, domain_out })
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        check_divisible(h, w, self.spec.encoder_stages, "discriminator")
    }

    /// Forward through the shared encoder, then the domain head and, when
    /// `with_seg`, the segmentation decoder.
    pub fn forward<A: Scalar>(
        &self,
        g: &mut Graph<A>,
        store: &ParamStore<A>,
        x: Var,
        with_seg: bool,
    ) -> DiscOutput {
        let features = self.body.encode(g, store, x);
        let deep = *features.last().unwrap();
        let dh = self.domain_hidden.forward(g, store, deep);
        let dl = self.domain_out.forward(g, store, dh);
        let domain_score = g.sigmoid(dl);
        let seg_logits = with_seg.then(|| self.body.decode(g, store, &features));
        DiscOutput { domain_score, seg_logits }
    }
}

/// Downstream segmentation network trained from scratch on (original or
/// adapted) labeled data.
#[derive(Debug, Clone)]
pub struct Segmenter {
    pub spec: SegmenterSpec,
    body: UNetBody,
}

impl Segmenter {
    pub fn build<A: Scalar>(
        init: &mut Initializer<'_, A>,
        prefix: &str,
        spec: &SegmenterSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let body =
            UNetBody::build(init, prefix, spec.base_channels, spec.encoder_stages, spec.num_classes);
        Ok(Segmenter { spec: *spec, body })
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        check_divisible(h, w, self.spec.encoder_stages, "segmenter")
    }

    /// (B,3,H,W) in [-1,1] -> (B,num_classes,H,W) logits.
    pub fn forward<A: Scalar>(&self, g: &mut Graph<A>, store: &ParamStore<A>, x: Var) -> Var {
        let features = self.body.encode(g, store, x);
        self.body.decode(g, store, &features)
    }
}

/// Convenience: a store plus a seeded initializer for model construction.
pub fn seeded_initializer<A: Scalar>(store: &mut ParamStore<A>, seed: u64) -> Initializer<'_, A> {
    Initializer::new(store, ChaCha8Rng::seed_from_u64(seed))
}

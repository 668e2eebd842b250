//! Training objectives: the two-direction adversarial loss, the semantic
//! discriminator loss, the weighted cycle reconstruction loss, and their
//! composition into the discriminator and generator totals.
//!
//! Each loss exists once, as a graph builder; the plain functions below
//! validate inputs, build a throwaway graph over constants and return the
//! scalar, so the tested values and the training path cannot drift apart.

use ndarray::{Array3, ArrayD, ArrayViewD, Ix3, Ix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Scalar, Var};

/// Probabilities are clamped to [EPS, 1-EPS] before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Relative importance of the semantic and reconstruction terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_sem: f64,
    pub lambda_rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_sem: 1.0, lambda_rec: 3.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_sem < 0.0 || self.lambda_rec < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generator-side adversarial objective form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvMode {
    /// Minimize E[log(1 - D(G(x)))]: the literal minimax form.
    Saturating,
    /// Minimize -E[log D(G(x))]: the standard practical variant.
    NonSaturating,
}

/// Every loss term of one training step, plus the composed totals.
///
/// `adv_*` hold the two-direction adversarial values (the quantity the
/// discriminators maximize); `g_adv_*` hold the generator-side adversarial
/// terms actually minimized, which differ from `adv_*` under the
/// non-saturating mode. `sem_st` is the target-side segmentation head on
/// adapted source images; `sem_ts` the source-side head on raw source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv_st: f64,
    pub adv_ts: f64,
    pub g_adv_st: f64,
    pub g_adv_ts: f64,
    pub sem_st: f64,
    pub sem_ts: f64,
    pub rec: f64,
    pub total_d: f64,
    pub total_g: f64,
}

impl LossBreakdown {
    pub fn recomposed_total_d(&self, weights: &LossWeights) -> f64 {
        -(self.adv_st + self.adv_ts) + weights.lambda_sem * (self.sem_st + self.sem_ts)
    }

    pub fn recomposed_total_g(&self, weights: &LossWeights) -> f64 {
        (self.g_adv_st + self.g_adv_ts)
            + weights.lambda_sem * (self.sem_st + self.sem_ts)
            + weights.lambda_rec * self.rec
    }

    pub fn terms(&self) -> [(&'static str, f64); 9] {
        [
            ("adv_st", self.adv_st),
            ("adv_ts", self.adv_ts),
            ("g_adv_st", self.g_adv_st),
            ("g_adv_ts", self.g_adv_ts),
            ("sem_st", self.sem_st),
            ("sem_ts", self.sem_ts),
            ("rec", self.rec),
            ("total_d", self.total_d),
            ("total_g", self.total_g),
        ]
    }

    /// Check finiteness of every term and that the stored totals recompose
    /// from the parts within 1e-6 relative.
    pub fn validate(&self, weights: &LossWeights) -> Result<()> {
        for (name, v) in self.terms() {
            if !v.is_finite() {
                return Err(Error::Validation(format!("loss term `{name}` is not finite ({v})")));
            }
        }
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
        let rd = self.recomposed_total_d(weights);
        if rel(rd, self.total_d) > 1e-6 {
            return Err(Error::Validation(format!(
                "total_d {} does not recompose from parts ({rd})",
                self.total_d
            )));
        }
        let rg = self.recomposed_total_g(weights);
        if rel(rg, self.total_g) > 1e-6 {
            return Err(Error::Validation(format!(
                "total_g {} does not recompose from parts ({rg})",
                self.total_g
            )));
        }
        Ok(())
    }
}

fn validate_scores<A: Scalar>(scores: &ArrayViewD<'_, A>, what: &str) -> Result<()> {
    for &v in scores.iter() {
        if !v.is_finite() {
            return Err(Error::Validation(format!("{what}: score is not finite")));
        }
        let f = v.to_f64().unwrap();
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Validation(format!(
                "{what}: score {f} is outside [0,1]; expected post-sigmoid probabilities"
            )));
        }
    }
    Ok(())
}

// ---- graph builders (single source of truth for each objective) ----

/// mean log(clamp(x)) over a score map.
fn mean_log<A: Scalar>(g: &mut Graph<A>, scores: Var) -> Var {
    let l = g.log_clamped(scores, A::from_f64(PROB_EPS));
    g.mean_all(l)
}

/// The two-term adversarial value for one direction:
/// `E[log D(real)] + E[log(1 - D(fake))]`. The discriminator maximizes
/// this; its objective is the negation.
pub fn graph_adversarial_value<A: Scalar>(g: &mut Graph<A>, d_real: Var, d_fake: Var) -> Var {
    let real_term = mean_log(g, d_real);
    let flipped = g.one_minus(d_fake);
    let fake_term = mean_log(g, flipped);
    g.add(real_term, fake_term)
}

/// Generator-side adversarial term for one direction.
pub fn graph_generator_adv<A: Scalar>(g: &mut Graph<A>, d_fake: Var, mode: AdvMode) -> Var {
    match mode {
        AdvMode::Saturating => {
            let flipped = g.one_minus(d_fake);
            mean_log(g, flipped)
        }
        AdvMode::NonSaturating => {
            let ml = mean_log(g, d_fake);
            g.scale(ml, -A::one())
        }
    }
}

/// Mean per-pixel cross entropy of one segmentation head.
pub fn graph_pixel_ce<A: Scalar>(
    g: &mut Graph<A>,
    seg_logits: Var,
    labels: &Array3<usize>,
) -> Var {
    g.softmax_ce_mean(seg_logits, labels)
}

/// Cycle reconstruction: plain L1 on the target cycle plus (1-w)-weighted
/// L1 on the source cycle, channel-averaged. `w` holds per-pixel class
/// frequencies (B,H,W).
pub fn graph_weighted_cycle<A: Scalar>(
    g: &mut Graph<A>,
    target_cycle: Var,
    x_t: Var,
    source_cycle: Var,
    x_s: Var,
    w: &ArrayD<A>,
) -> Var {
    let target_term = g.l1_mean(target_cycle, x_t);
    let one_minus_w = w.mapv(|v| A::one() - v);
    let source_term = g.weighted_l1_mean(source_cycle, x_s, one_minus_w);
    g.add(target_term, source_term)
}

// ---- plain validated entry points ----

/// Discriminator and generator objectives for one direction, from
/// post-sigmoid score maps. Returns `(d_objective, g_objective)`.
pub fn adversarial_loss_pair<A: Scalar>(
    d_on_real: &ArrayD<A>,
    d_on_fake: &ArrayD<A>,
    mode: AdvMode,
) -> Result<(A, A)> {
    validate_scores(&d_on_real.view(), "d_on_real")?;
    validate_scores(&d_on_fake.view(), "d_on_fake")?;
    let mut g = Graph::new();
    let real = g.constant(d_on_real.clone());
    let fake = g.constant(d_on_fake.clone());
    let value = graph_adversarial_value(&mut g, real, fake);
    let d_obj = g.scale(value, -A::one());
    let g_obj = graph_generator_adv(&mut g, fake, mode);
    Ok((g.scalar(d_obj), g.scalar(g_obj)))
}

/// The adversarial value itself (what the discriminator maximizes); at
/// probabilities it is non-positive, with supremum 0.
pub fn adversarial_value<A: Scalar>(d_on_real: &ArrayD<A>, d_on_fake: &ArrayD<A>) -> Result<A> {
    validate_scores(&d_on_real.view(), "d_on_real")?;
    validate_scores(&d_on_fake.view(), "d_on_fake")?;
    let mut g = Graph::new();
    let real = g.constant(d_on_real.clone());
    let fake = g.constant(d_on_fake.clone());
    let value = graph_adversarial_value(&mut g, real, fake);
    Ok(g.scalar(value))
}

/// Semantic discriminator loss: cross entropy of the target-side head on
/// adapted source images plus the source-side head on raw source images,
/// both against the source labels. Logits are (B,C,H,W); labels (B,H,W).
pub fn semantic_loss<A: Scalar>(
    seg_logits_on_adapted: &ArrayD<A>,
    seg_logits_on_source: &ArrayD<A>,
    labels: &Array3<usize>,
) -> Result<A> {
    for (name, logits) in
        [("adapted", seg_logits_on_adapted), ("source", seg_logits_on_source)]
    {
        let v = logits
            .view()
            .into_dimensionality::<Ix4>()
            .map_err(|_| Error::Validation(format!("{name} logits must be (B,C,H,W)")))?;
        let (b, c, h, w) = v.dim();
        if labels.dim() != (b, h, w) {
            return Err(Error::Validation(format!(
                "{name} logits {b}x{c}x{h}x{w} do not match labels {:?}",
                labels.dim()
            )));
        }
        if labels.iter().any(|&l| l >= c) {
            return Err(Error::Validation("label id out of range for logit channels".into()));
        }
    }
    let mut g = Graph::new();
    let adapted = g.constant(seg_logits_on_adapted.clone());
    let source = g.constant(seg_logits_on_source.clone());
    let ce_a = graph_pixel_ce(&mut g, adapted, labels);
    let ce_s = graph_pixel_ce(&mut g, source, labels);
    let total = g.add(ce_a, ce_s);
    Ok(g.scalar(total))
}

/// Weighted cycle reconstruction loss over image batches (B,C,H,W) with a
/// frequency mask (B,H,W) aligned to `x_s`.
pub fn weighted_cycle_loss<A: Scalar>(
    target_cycle: &ArrayD<A>,
    x_t: &ArrayD<A>,
    source_cycle: &ArrayD<A>,
    x_s: &ArrayD<A>,
    w: &ArrayD<A>,
) -> Result<A> {
    if target_cycle.shape() != x_t.shape() {
        return Err(Error::Validation("target cycle / x_t shape mismatch".into()));
    }
    if source_cycle.shape() != x_s.shape() {
        return Err(Error::Validation("source cycle / x_s shape mismatch".into()));
    }
    let xs = x_s
        .view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| Error::Validation("x_s must be (B,C,H,W)".into()))?;
    let wv = w
        .view()
        .into_dimensionality::<Ix3>()
        .map_err(|_| Error::Validation("weight mask must be (B,H,W)".into()))?;
    let (b, _, h, wd) = xs.dim();
    if wv.dim() != (b, h, wd) {
        return Err(Error::Validation("weight mask does not align with x_s".into()));
    }
    let mut g = Graph::new();
    let tc = g.constant(target_cycle.clone());
    let xt = g.constant(x_t.clone());
    let sc = g.constant(source_cycle.clone());
    let xsv = g.constant(x_s.clone());
    let total = graph_weighted_cycle(&mut g, tc, xt, sc, xsv, w);
    Ok(g.scalar(total))
}

/// Compose the final objectives:
/// `L_D = -L_adv + lambda_sem * L_sem` and
/// `L_G =  L_adv + lambda_sem * L_sem + lambda_rec * L_rec`,
/// with both directions' adversarial terms already summed into `l_adv`.
pub fn compose_losses(
    l_adv: f64,
    l_sem: f64,
    l_rec: f64,
    weights: &LossWeights,
) -> Result<(f64, f64)> {
    weights.validate()?;
    for (name, v) in [("l_adv", l_adv), ("l_sem", l_sem), ("l_rec", l_rec)] {
        if !v.is_finite() {
            return Err(Error::Validation(format!("loss part `{name}` is not finite ({v})")));
        }
    }
    let l_d = -l_adv + weights.lambda_sem * l_sem;
    let l_g = l_adv + weights.lambda_sem * l_sem + weights.lambda_rec * l_rec;
    Ok((l_d, l_g))
}

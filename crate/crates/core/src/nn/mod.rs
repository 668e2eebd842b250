//! Minimal reverse-mode autodiff over `ndarray`, sized for desk-scale
//! convolutional training.
//!
//! A [`Graph`] records eager operations and replays them backwards to
//! accumulate parameter gradients. Everything is generic over [`Scalar`]
//! so the same model code runs in `f32` for training and in `f64` for
//! finite-difference verification.

mod adam;
mod conv;
mod init;
mod layers;

pub use adam::{Adam, AdamState};
pub use init::Initializer;
pub use layers::{Act, Conv2d, ConvBlock, InstanceNorm, Norm, ResidualBlock};

use ndarray::{ArrayD, Axis, Ix3, Ix4, IxDyn, NdFloat, Zip};
use num_traits::Float;


/// Floating-point element type usable by the graph.
pub trait Scalar: NdFloat + Send + Sync {
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}
impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Handle to a named parameter array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) u32);

/// Owned, named parameter arrays. One store backs one model system; the
/// optimizer and snapshot container address parameters by [`ParamId`].
#[derive(Debug, Clone)]
pub struct ParamStore<A: Scalar> {
    names: Vec<String>,
    values: Vec<ArrayD<A>>,
}

impl<A: Scalar> ParamStore<A> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<A>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.values.len() as u32);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<A> {
        &self.values[id.0 as usize]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<A> {
        &mut self.values[id.0 as usize]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(|i| ParamId(i as u32))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len() as u32).map(ParamId)
    }

    /// Total number of scalar parameters across all arrays.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &ArrayD<A>)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (ParamId(i as u32), self.names[i].as_str(), v))
    }
}

impl<A: Scalar> Default for ParamStore<A> {
    fn default() -> Self {
        Self::new()
    }
}

/// Node handle within a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Gradient accumulation target handed to backward closures.
pub struct GradSink<'a, A: Scalar> {
    grads: &'a mut [Option<ArrayD<A>>],
    requires: &'a [bool],
}

impl<'a, A: Scalar> GradSink<'a, A> {
    /// Whether gradients for `node` are needed at all (some parameter is
    /// reachable through it). Lets expensive ops skip dead branches.
    pub fn wants(&self, node: usize) -> bool {
        self.requires[node]
    }

    pub fn add(&mut self, node: usize, contrib: ArrayD<A>) {
        if !self.requires[node] {
            return;
        }
        match &mut self.grads[node] {
            Some(g) => {
                Zip::from(g).and(&contrib).for_each(|a, &b| *a += b);
            }
            slot @ None => *slot = Some(contrib),
        }
    }
}

type BackFn<A> = Box<dyn Fn(&[ArrayD<A>], &ArrayD<A>, &mut GradSink<A>)>;

/// Eager computation tape. Ops compute their value immediately and record
/// a closure that routes output gradients to their parents.
pub struct Graph<A: Scalar> {
    values: Vec<ArrayD<A>>,
    grads: Vec<Option<ArrayD<A>>>,
    backs: Vec<Option<BackFn<A>>>,
    requires: Vec<bool>,
    bound: Vec<(ParamId, Var)>,
}

impl<A: Scalar> Graph<A> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            grads: Vec::new(),
            backs: Vec::new(),
            requires: Vec::new(),
            bound: Vec::new(),
        }
    }

    fn push(&mut self, value: ArrayD<A>, requires: bool, back: Option<BackFn<A>>) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.backs.push(back);
        self.requires.push(requires);
        Var(self.values.len() - 1)
    }

    fn requires_any(&self, parents: &[Var]) -> bool {
        parents.iter().any(|p| self.requires[p.0])
    }

    pub fn value(&self, v: Var) -> &ArrayD<A> {
        &self.values[v.0]
    }

    /// Value of a scalar (single-element) node.
    pub fn scalar(&self, v: Var) -> A {
        let val = &self.values[v.0];
        assert_eq!(val.len(), 1, "node is not scalar");
        val.iter().next().copied().unwrap()
    }

    /// Insert an input the graph will not differentiate through.
    pub fn constant(&mut self, value: ArrayD<A>) -> Var {
        self.push(value, false, None)
    }

    /// Bind a parameter as a differentiable leaf. Binding the same id twice
    /// returns the same node, so gradients from multiple uses accumulate.
    pub fn param(&mut self, store: &ParamStore<A>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.bound.iter().find(|(pid, _)| *pid == id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), true, None);
        self.bound.push((id, v));
        v
    }

    /// Run reverse accumulation from a scalar root.
    pub fn backward(&mut self, root: Var) {
        let root_val = &self.values[root.0];
        assert_eq!(root_val.len(), 1, "backward root must be scalar");
        self.grads[root.0] = Some(ArrayD::ones(root_val.raw_dim()));
        for i in (0..=root.0).rev() {
            if !self.requires[i] {
                self.grads[i] = None;
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            if let Some(back) = self.backs[i].take() {
                let mut sink = GradSink { grads: &mut self.grads, requires: &self.requires };
                back(&self.values, &g, &mut sink);
            } else {
                // Leaf: keep the accumulated gradient readable.
                self.grads[i] = Some(g);
            }
        }
    }

    /// Accumulated gradients of bound parameters, in binding order.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &ArrayD<A>)> {
        self.bound
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }

    pub fn grad(&self, v: Var) -> Option<&ArrayD<A>> {
        self.grads[v.0].as_ref()
    }

    // ---- elementwise ops ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].shape(), self.values[b.0].shape());
        let value = &self.values[a.0] + &self.values[b.0];
        let req = self.requires_any(&[a, b]);
        self.push(
            value,
            req,
            Some(Box::new(move |_vals, gout, sink| {
                sink.add(a.0, gout.clone());
                sink.add(b.0, gout.clone());
            })),
        )
    }

    pub fn scale(&mut self, x: Var, s: A) -> Var {
        let value = self.values[x.0].mapv(|v| v * s);
        let req = self.requires[x.0];
        self.push(
            value,
            req,
            Some(Box::new(move |_vals, gout, sink| {
                sink.add(x.0, gout.mapv(|g| g * s));
            })),
        )
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].shape(), self.values[b.0].shape());
        let value = &self.values[a.0] * &self.values[b.0];
        let req = self.requires_any(&[a, b]);
        self.push(
            value,
            req,
            Some(Box::new(move |vals, gout, sink| {
                if sink.wants(a.0) {
                    sink.add(a.0, gout * &vals[b.0]);
                }
                if sink.wants(b.0) {
                    sink.add(b.0, gout * &vals[a.0]);
                }
            })),
        )
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let one = A::one();
        let value = self.values[x.0].mapv(|v| one - v);
        let req = self.requires[x.0];
        self.push(
            value,
            req,
            Some(Box::new(move |_vals, gout, sink| {
                sink.add(x.0, gout.mapv(|g| -g));
            })),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let zero = A::zero();
        let value = self.values[x.0].mapv(|v| if v > zero { v } else { zero });
        let req = self.requires[x.0];
        self.push(
            value,
            req,
            Some(Box::new(move |vals, gout, sink| {
                let mut gx = gout.clone();
                Zip::from(&mut gx).and(&vals[x.0]).for_each(|g, &v| {
                    if v <= A::zero() {
                        *g = A::zero();
                    }
                });
                sink.add(x.0, gx);
            })),
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: A) -> Var {
        let zero = A::zero();
        let value = self.values[x.0].mapv(|v| if v > zero { v } else { v * slope });
        let req = self.requires[x.0];
        self.push(
            value,
            req,
            Some(Box::new(move |vals, gout, sink| {
                let mut gx = gout.clone();
                Zip::from(&mut gx).and(&vals[x.0]).for_each(|g, &v| {
                    if v <= A::zero() {
                        *g *= slope;
                    }
                });
                sink.add(x.0, gx);
            })),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.values[x.0].mapv(Float::tanh);
        let req = self.requires[x.0];
        self.push(
            value,
            req,
            Some(Box::new(move |vals, gout, sink| {
                // vals[out] is this node's own value; capture via closure arg
                // is not possible, so recompute tanh from the input.
                let mut gx = gout.clone();
                Zip::from(&mut gx).and(&vals[x.0]).for_each(|g, &v| {
                    let t = v.tanh();
                    *g *= A::one() - t * t;
                });
                sink.add(x.0, gx);
            })),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let one = A::one();
        let value = self.values[x.0].mapv(|v| one / (one + (-v).exp()));
        let req = self.requires[x.0];
        let out_idx = self.values.len();
        self.push(
            value,
            req,
            Some(Box::new(move |vals, gout, sink| {
                let y = &vals[out_idx];
                let mut gx = gout.clone();
                Zip::from(&mut gx).and(y).for_each(|g, &s| {
                    *g = *g * s * (A::one() - s);
                });
                sink.add(x.0, gx);
            })),
        )
    }

    /// Clamp to [-1, 1]; gradient passes through strictly inside the range.
    pub fn clamp_unit(&mut self, x: Var) -> Var {
        let one = A::one();
        let value = self.values[x.0].mapv(|v| v.max(-one).min(one));
        let req = self.requires[x.0];
        self.push(
            value,
            req,
            Some(Box::new(move |vals, gout, sink| {
                let one = A::one();
                let mut gx = gout.clone();
                Zip::from(&mut gx).and(&vals[x.0]).for_each(|g, &v| {
                    if v < -one || v > one {
                        *g = A::zero();
                    }
                });
                sink.add(x.0, gx);
            })),
        )
    }

    /// ln(clamp(x, eps, 1-eps)). Gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, eps: A) -> Var {
        let hi = A::one() - eps;
        let value = self.values[x.0].mapv(|v| v.max(eps).min(hi).ln());
        let req = self.requires[x.0];
        self.push(
            value,
            req,
            Some(Box::new(move |vals, gout, sink| {
                let mut gx = gout.clone();
                Zip::from(&mut gx).and(&vals[x.0]).for_each(|g, &v| {
                    if v > eps && v < hi {
                        *g /= v;
                    } else {
                        *g = A::zero();
                    }
                });
                sink.add(x.0, gx);
            })),
        )
    }

    /// Mean over every element; yields a scalar node.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = A::from_f64(self.values[x.0].len() as f64);
        let sum = self.values[x.0].iter().fold(A::zero(), |acc, &v| acc + v);
        let value = ArrayD::from_elem(IxDyn(&[]), sum / n);
        let req = self.requires[x.0];
        self.push(
            value,
            req,
            Some(Box::new(move |vals, gout, sink| {
                let g = gout.iter().next().copied().unwrap() / n;
                sink.add(x.0, ArrayD::from_elem(vals[x.0].raw_dim(), g));
            })),
        )
    }

    /// mean |a - b| over all elements.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].shape(), self.values[b.0].shape());
        let n = A::from_f64(self.values[a.0].len() as f64);
        let mut sum = A::zero();
        Zip::from(&self.values[a.0]).and(&self.values[b.0]).for_each(|&x, &y| {
            sum += (x - y).abs();
        });
        let value = ArrayD::from_elem(IxDyn(&[]), sum / n);
        let req = self.requires_any(&[a, b]);
        self.push(
            value,
            req,
            Some(Box::new(move |vals, gout, sink| {
                let g = gout.iter().next().copied().unwrap() / n;
                let mut ga = ArrayD::zeros(vals[a.0].raw_dim());
                Zip::from(&mut ga)
                    .and(&vals[a.0])
                    .and(&vals[b.0])
                    .for_each(|d, &x, &y| {
                        *d = if x > y {
                            g
                        } else if x < y {
                            -g
                        } else {
                            A::zero()
                        };
                    });
                if sink.wants(b.0) {
                    sink.add(b.0, ga.mapv(|v| -v));
                }
                sink.add(a.0, ga);
            })),
        )
    }

    /// mean over (B,C,H,W) of w[b,h,w] * |a - b| with the per-pixel weight
    /// broadcast across channels. `weights` is a constant (B,H,W) array.
    pub fn weighted_l1_mean(&mut self, a: Var, b: Var, weights: ArrayD<A>) -> Var {
        let av = self.values[a.0]
            .view()
            .into_dimensionality::<Ix4>()
            .expect("weighted_l1_mean expects (B,C,H,W)");
        let bv = self.values[b.0].view().into_dimensionality::<Ix4>().unwrap();
        let wv = weights.view().into_dimensionality::<Ix3>().expect("weights must be (B,H,W)");
        let (bs, ch, h, w) = av.dim();
        assert_eq!(av.dim(), bv.dim());
        assert_eq!(wv.dim(), (bs, h, w));
        let n = A::from_f64((bs * ch * h * w) as f64);
        let mut sum = A::zero();
        for bi in 0..bs {
            for ci in 0..ch {
                for yi in 0..h {
                    for xi in 0..w {
                        sum += wv[[bi, yi, xi]] * (av[[bi, ci, yi, xi]] - bv[[bi, ci, yi, xi]]).abs();
                    }
                }
            }
        }
        let value = ArrayD::from_elem(IxDyn(&[]), sum / n);
        let req = self.requires_any(&[a, b]);
        self.push(
            value,
            req,
            Some(Box::new(move |vals, gout, sink| {
                let g = gout.iter().next().copied().unwrap() / n;
                let av = vals[a.0].view().into_dimensionality::<Ix4>().unwrap();
                let bv = vals[b.0].view().into_dimensionality::<Ix4>().unwrap();
                let wv = weights.view().into_dimensionality::<Ix3>().unwrap();
                let (bs, ch, h, w) = av.dim();
                let mut ga = ndarray::Array4::<A>::zeros((bs, ch, h, w));
                for bi in 0..bs {
                    for ci in 0..ch {
                        for yi in 0..h {
                            for xi in 0..w {
                                let d = av[[bi, ci, yi, xi]] - bv[[bi, ci, yi, xi]];
                                let s = if d > A::zero() {
                                    A::one()
                                } else if d < A::zero() {
                                    -A::one()
                                } else {
                                    A::zero()
                                };
                                ga[[bi, ci, yi, xi]] = g * wv[[bi, yi, xi]] * s;
                            }
                        }
                    }
                }
                let ga = ga.into_dyn();
                if sink.wants(b.0) {
                    sink.add(b.0, ga.mapv(|v| -v));
                }
                sink.add(a.0, ga);
            })),
        )
    }

    /// Mean per-pixel cross entropy of (B,C,H,W) logits against (B,H,W)
    /// class-id labels, computed with the usual max-shift stabilization.
    pub fn softmax_ce_mean(&mut self, logits: Var, labels: &ndarray::Array3<usize>) -> Var {
        let lv = self.values[logits.0]
            .view()
            .into_dimensionality::<Ix4>()
            .expect("softmax_ce_mean expects (B,C,H,W) logits");
        let (bs, nc, h, w) = lv.dim();
        assert_eq!(labels.dim(), (bs, h, w), "label/logit spatial mismatch");
        let n = A::from_f64((bs * h * w) as f64);
        let mut sum = A::zero();
        for bi in 0..bs {
            for yi in 0..h {
                for xi in 0..w {
                    let y = labels[[bi, yi, xi]];
                    debug_assert!(y < nc);
                    let mut m = lv[[bi, 0, yi, xi]];
                    for ci in 1..nc {
                        m = m.max(lv[[bi, ci, yi, xi]]);
                    }
                    let mut lse = A::zero();
                    for ci in 0..nc {
                        lse += (lv[[bi, ci, yi, xi]] - m).exp();
                    }
                    sum += m + lse.ln() - lv[[bi, y, yi, xi]];
                }
            }
        }
        let value = ArrayD::from_elem(IxDyn(&[]), sum / n);
        let req = self.requires[logits.0];
        let labels = labels.clone();
        self.push(
            value,
            req,
            Some(Box::new(move |vals, gout, sink| {
                let g = gout.iter().next().copied().unwrap() / n;
                let lv = vals[logits.0].view().into_dimensionality::<Ix4>().unwrap();
                let (bs, nc, h, w) = lv.dim();
                let mut gl = ndarray::Array4::<A>::zeros((bs, nc, h, w));
                for bi in 0..bs {
                    for yi in 0..h {
                        for xi in 0..w {
                            let y = labels[[bi, yi, xi]];
                            let mut m = lv[[bi, 0, yi, xi]];
                            for ci in 1..nc {
                                m = m.max(lv[[bi, ci, yi, xi]]);
                            }
                            let mut z = A::zero();
                            for ci in 0..nc {
                                z += (lv[[bi, ci, yi, xi]] - m).exp();
                            }
                            for ci in 0..nc {
                                let p = (lv[[bi, ci, yi, xi]] - m).exp() / z;
                                let t = if ci == y { A::one() } else { A::zero() };
                                gl[[bi, ci, yi, xi]] = g * (p - t);
                            }
                        }
                    }
                }
                sink.add(logits.0, gl.into_dyn());
            })),
        )
    }

    /// Nearest-neighbor 2x spatial upsampling of (B,C,H,W).
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let xv = self.values[x.0]
            .view()
            .into_dimensionality::<Ix4>()
            .expect("upsample2x expects (B,C,H,W)");
        let (bs, ch, h, w) = xv.dim();
        let mut out = ndarray::Array4::<A>::zeros((bs, ch, 2 * h, 2 * w));
        for bi in 0..bs {
            for ci in 0..ch {
                for yi in 0..h {
                    for xi in 0..w {
                        let v = xv[[bi, ci, yi, xi]];
                        out[[bi, ci, 2 * yi, 2 * xi]] = v;
                        out[[bi, ci, 2 * yi, 2 * xi + 1]] = v;
                        out[[bi, ci, 2 * yi + 1, 2 * xi]] = v;
                        out[[bi, ci, 2 * yi + 1, 2 * xi + 1]] = v;
                    }
                }
            }
        }
        let req = self.requires[x.0];
        self.push(
            out.into_dyn(),
            req,
            Some(Box::new(move |vals, gout, sink| {
                let gv = gout.view().into_dimensionality::<Ix4>().unwrap();
                let (bs, ch, h2, w2) = gv.dim();
                let (h, w) = (h2 / 2, w2 / 2);
                let mut gx = ndarray::Array4::<A>::zeros((bs, ch, h, w));
                for bi in 0..bs {
                    for ci in 0..ch {
                        for yi in 0..h {
                            for xi in 0..w {
                                gx[[bi, ci, yi, xi]] = gv[[bi, ci, 2 * yi, 2 * xi]]
                                    + gv[[bi, ci, 2 * yi, 2 * xi + 1]]
                                    + gv[[bi, ci, 2 * yi + 1, 2 * xi]]
                                    + gv[[bi, ci, 2 * yi + 1, 2 * xi + 1]];
                            }
                        }
                    }
                }
                let _ = vals;
                sink.add(x.0, gx.into_dyn());
            })),
        )
    }

    /// Concatenate two (B,C,H,W) tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let av = self.values[a.0].view().into_dimensionality::<Ix4>().unwrap();
        let bv = self.values[b.0].view().into_dimensionality::<Ix4>().unwrap();
        let ca = av.dim().1;
        let value = ndarray::concatenate(Axis(1), &[av, bv]).expect("concat shape mismatch");
        let req = self.requires_any(&[a, b]);
        self.push(
            value.into_dyn(),
            req,
            Some(Box::new(move |vals, gout, sink| {
                let gv = gout.view().into_dimensionality::<Ix4>().unwrap();
                if sink.wants(a.0) {
                    let ga = gv.slice(ndarray::s![.., ..ca, .., ..]).to_owned();
                    sink.add(a.0, ga.into_dyn());
                }
                if sink.wants(b.0) {
                    let gb = gv.slice(ndarray::s![.., ca.., .., ..]).to_owned();
                    sink.add(b.0, gb.into_dyn());
                }
                let _ = vals;
            })),
        )
    }

    /// 2D convolution of (B,Cin,H,W) with (Cout,Cin,K,K) weights plus bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let out = conv::conv2d_forward(&self.values[x.0], &self.values[w.0], &self.values[b.0], stride, pad);
        let req = self.requires_any(&[x, w, b]);
        self.push(
            out,
            req,
            Some(Box::new(move |vals, gout, sink| {
                let (gx, gw, gb) = conv::conv2d_backward(
                    &vals[x.0],
                    &vals[w.0],
                    gout,
                    stride,
                    pad,
                    sink.wants(x.0),
                );
                if let Some(gx) = gx {
                    sink.add(x.0, gx);
                }
                sink.add(w.0, gw);
                sink.add(b.0, gb);
            })),
        )
    }

    /// Per-sample, per-channel normalization with affine parameters.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: A) -> Var {
        let xv = self.values[x.0]
            .view()
            .into_dimensionality::<Ix4>()
            .expect("instance_norm expects (B,C,H,W)");
        let gv = &self.values[gamma.0];
        let bv = &self.values[beta.0];
        let (bs, ch, h, w) = xv.dim();
        assert_eq!(gv.len(), ch);
        assert_eq!(bv.len(), ch);
        let n = A::from_f64((h * w) as f64);
        let mut out = ndarray::Array4::<A>::zeros((bs, ch, h, w));
        for bi in 0..bs {
            for ci in 0..ch {
                let plane = xv.slice(ndarray::s![bi, ci, .., ..]);
                let mean = plane.iter().fold(A::zero(), |a, &v| a + v) / n;
                let var = plane.iter().fold(A::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
                let inv = A::one() / (var + eps).sqrt();
                let ga = gv.as_slice().unwrap()[ci];
                let be = bv.as_slice().unwrap()[ci];
                let mut o = out.slice_mut(ndarray::s![bi, ci, .., ..]);
                Zip::from(&mut o).and(&plane).for_each(|dst, &v| {
                    *dst = (v - mean) * inv * ga + be;
                });
            }
        }
        let req = self.requires_any(&[x, gamma, beta]);
        self.push(
            out.into_dyn(),
            req,
            Some(Box::new(move |vals, gout, sink| {
                let xv = vals[x.0].view().into_dimensionality::<Ix4>().unwrap();
                let gv = &vals[gamma.0];
                let go = gout.view().into_dimensionality::<Ix4>().unwrap();
                let (bs, ch, h, w) = xv.dim();
                let n = A::from_f64((h * w) as f64);
                let mut gx = ndarray::Array4::<A>::zeros((bs, ch, h, w));
                let mut ggamma = ArrayD::<A>::zeros(vals[gamma.0].raw_dim());
                let mut gbeta = ArrayD::<A>::zeros(vals[beta.0].raw_dim());
                for bi in 0..bs {
                    for ci in 0..ch {
                        let plane = xv.slice(ndarray::s![bi, ci, .., ..]);
                        let gplane = go.slice(ndarray::s![bi, ci, .., ..]);
                        let mean = plane.iter().fold(A::zero(), |a, &v| a + v) / n;
                        let var =
                            plane.iter().fold(A::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
                        let inv = A::one() / (var + eps).sqrt();
                        let ga = gv.as_slice().unwrap()[ci];
                        // Accumulate dgamma/dbeta and the two reduction terms.
                        let mut sum_g = A::zero();
                        let mut sum_gxh = A::zero();
                        Zip::from(&gplane).and(&plane).for_each(|&g, &v| {
                            let xh = (v - mean) * inv;
                            sum_g += g;
                            sum_gxh += g * xh;
                        });
                        ggamma.as_slice_mut().unwrap()[ci] += sum_gxh;
                        gbeta.as_slice_mut().unwrap()[ci] += sum_g;
                        if sink.wants(x.0) {
                            let mean_g = sum_g / n;
                            let mean_gxh = sum_gxh / n;
                            let mut gxp = gx.slice_mut(ndarray::s![bi, ci, .., ..]);
                            Zip::from(&mut gxp).and(&gplane).and(&plane).for_each(
                                |dst, &g, &v| {
                                    let xh = (v - mean) * inv;
                                    *dst = ga * inv * (g - mean_g - xh * mean_gxh);
                                },
                            );
                        }
                    }
                }
                if sink.wants(x.0) {
                    sink.add(x.0, gx.into_dyn());
                }
                sink.add(gamma.0, ggamma);
                sink.add(beta.0, gbeta);
            })),
        )
    }
}

impl<A: Scalar> Default for Graph<A> {
    fn default() -> Self {
        Self::new()
    }
}

/// Reshape helper: (B,C,H,W) view of a dynamic array.
pub fn as4<A: Scalar>(arr: &ArrayD<A>) -> ndarray::ArrayView4<'_, A> {
    arr.view().into_dimensionality::<Ix4>().expect("expected 4-d array")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    /// Central-difference gradient of `f` with respect to one parameter array.
    fn numeric_grad<F: FnMut(&ParamStore<f64>) -> f64>(
        store: &mut ParamStore<f64>,
        id: ParamId,
        mut f: F,
        step: f64,
    ) -> ArrayD<f64> {
        let mut grad = ArrayD::zeros(store.value(id).raw_dim());
        for idx in 0..store.value(id).len() {
            let orig = store.value(id).as_slice().unwrap()[idx];
            store.value_mut(id).as_slice_mut().unwrap()[idx] = orig + step;
            let fp = f(store);
            store.value_mut(id).as_slice_mut().unwrap()[idx] = orig - step;
            let fm = f(store);
            store.value_mut(id).as_slice_mut().unwrap()[idx] = orig;
            grad.as_slice_mut().unwrap()[idx] = (fp - fm) / (2.0 * step);
        }
        grad
    }

    fn rand_array(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut r = rng(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| r.gen_range(-1.0..1.0))
    }

    fn assert_grads_close(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>, tol: f64) {
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!(
                ((a - n).abs() / denom) < tol,
                "gradient mismatch: analytic {a}, numeric {n}"
            );
        }
    }

    #[test]
    fn conv2d_matches_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", rand_array(&[3, 2, 3, 3], 1) * 0.5);
        let b = store.add("b", rand_array(&[3], 2) * 0.1);
        let x = rand_array(&[2, 2, 6, 6], 3);

        let eval = |store: &ParamStore<f64>, xin: &ArrayD<f64>| {
            let mut g = Graph::new();
            let xv = g.constant(xin.clone());
            let wv = g.param(store, w);
            let bv = g.param(store, b);
            let out = g.conv2d(xv, wv, bv, 1, 1);
            let t = g.tanh(out);
            let m = g.mean_all(t);
            (g, m)
        };

        // analytic
        let (mut g, m) = eval(&store, &x);
        g.backward(m);
        let gw = g.param_grads().find(|(id, _)| *id == w).unwrap().1.clone();
        let gb = g.param_grads().find(|(id, _)| *id == b).unwrap().1.clone();

        let nw = numeric_grad(&mut store, w, |s| { let (g, m) = eval(s, &x); g.scalar(m) }, 1e-5);
        let nb = numeric_grad(&mut store, b, |s| { let (g, m) = eval(s, &x); g.scalar(m) }, 1e-5);
        assert_grads_close(&gw, &nw, 1e-5);
        assert_grads_close(&gb, &nb, 1e-5);
    }

    #[test]
    fn strided_conv_and_input_grad_match_fd() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", rand_array(&[4, 3, 3, 3], 7) * 0.4);
        let b = store.add("b", rand_array(&[4], 8) * 0.1);
        let xin = store.add("x", rand_array(&[1, 3, 8, 8], 9));

        let eval = |store: &ParamStore<f64>| {
            let mut g = Graph::new();
            let xv = g.param(store, xin);
            let wv = g.param(store, w);
            let bv = g.param(store, b);
            let out = g.conv2d(xv, wv, bv, 2, 1);
            let r = g.leaky_relu(out, 0.2);
            let m = g.mean_all(r);
            (g, m)
        };
        let (mut g, m) = eval(&store);
        g.backward(m);
        let gx = g.param_grads().find(|(id, _)| *id == xin).unwrap().1.clone();
        let nx = numeric_grad(&mut store, xin, |s| { let (g, m) = eval(s); g.scalar(m) }, 1e-5);
        assert_grads_close(&gx, &nx, 1e-5);
    }

    #[test]
    fn instance_norm_matches_fd() {
        let mut store = ParamStore::<f64>::new();
        let gamma = store.add("gamma", rand_array(&[3], 4) * 0.5 + 1.0);
        let beta = store.add("beta", rand_array(&[3], 5) * 0.2);
        let xin = store.add("x", rand_array(&[2, 3, 5, 5], 6));

        let eval = |store: &ParamStore<f64>| {
            let mut g = Graph::new();
            let xv = g.param(store, xin);
            let ga = g.param(store, gamma);
            let be = g.param(store, beta);
            let out = g.instance_norm(xv, ga, be, 1e-5);
            let t = g.tanh(out);
            let m = g.mean_all(t);
            (g, m)
        };
        let (mut g, m) = eval(&store);
        g.backward(m);
        for id in [gamma, beta, xin] {
            let analytic = g.param_grads().find(|(i, _)| *i == id).unwrap().1.clone();
            let numeric = numeric_grad(&mut store, id, |s| { let (g, m) = eval(s); g.scalar(m) }, 1e-5);
            assert_grads_close(&analytic, &numeric, 1e-4);
        }
    }

    #[test]
    fn softmax_ce_matches_fd_and_uniform_value() {
        let mut store = ParamStore::<f64>::new();
        let logits = store.add("l", rand_array(&[1, 3, 4, 4], 11));
        let labels = Array3::from_shape_fn((1, 4, 4), |(_, y, x)| (y + x) % 3);

        let eval = |store: &ParamStore<f64>| {
            let mut g = Graph::new();
            let lv = g.param(store, logits);
            let ce = g.softmax_ce_mean(lv, &labels);
            (g, ce)
        };
        let (mut g, ce) = eval(&store);
        g.backward(ce);
        let analytic = g.param_grads().next().unwrap().1.clone();
        let numeric = numeric_grad(&mut store, logits, |s| { let (g, c) = eval(s); g.scalar(c) }, 1e-5);
        assert_grads_close(&analytic, &numeric, 1e-5);

        // uniform logits -> ln C
        let mut g2 = Graph::<f64>::new();
        let uniform = g2.constant(ArrayD::zeros(IxDyn(&[2, 5, 3, 3])));
        let labels2 = Array3::from_elem((2, 3, 3), 4usize);
        let ce2 = g2.softmax_ce_mean(uniform, &labels2);
        assert!((g2.scalar(ce2) - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn upsample_concat_and_weighted_l1_match_fd() {
        let mut store = ParamStore::<f64>::new();
        let xid = store.add("x", rand_array(&[1, 2, 3, 3], 21));
        let yid = store.add("y", rand_array(&[1, 2, 6, 6], 22));
        let weights = rand_array(&[1, 6, 6], 23).mapv(|v| v.abs());

        let eval = |store: &ParamStore<f64>| {
            let mut g = Graph::new();
            let x = g.param(store, xid);
            let y = g.param(store, yid);
            let up = g.upsample2x(x);
            let cat = g.concat_channels(up, y);
            let cat2 = g.concat_channels(y, up);
            let halves = g.add(cat, cat2);
            let t = g.tanh(halves);
            let z = g.constant(ArrayD::zeros(IxDyn(&[1, 4, 6, 6])));
            let l = g.weighted_l1_mean(t, z, weights.clone());
            (g, l)
        };
        let (mut g, l) = eval(&store);
        g.backward(l);
        for id in [xid, yid] {
            let analytic = g.param_grads().find(|(i, _)| *i == id).unwrap().1.clone();
            let numeric = numeric_grad(&mut store, id, |s| { let (g, l) = eval(s); g.scalar(l) }, 1e-6);
            assert_grads_close(&analytic, &numeric, 1e-4);
        }
    }

    #[test]
    fn param_bound_twice_accumulates_gradient() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", ArrayD::from_elem(IxDyn(&[2]), 0.3));
        let mut g = Graph::new();
        let v1 = g.param(&store, p);
        let v2 = g.param(&store, p);
        assert_eq!(v1, v2);
        let s = g.add(v1, v2); // 2p
        let m = g.mean_all(s);
        g.backward(m);
        let grad = g.param_grads().next().unwrap().1.clone();
        // d(mean(2p))/dp = 2/len = 1.0 per element
        for v in grad.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_clamped_and_sigmoid_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(ArrayD::from_elem(IxDyn(&[1]), 0.5));
        let l = g.log_clamped(x, 1e-7);
        let m = g.mean_all(l);
        assert!((g.scalar(m) - 0.5f64.ln()).abs() < 1e-12);

        let mut g2 = Graph::<f64>::new();
        let z = g2.constant(ArrayD::zeros(IxDyn(&[3])));
        let s = g2.sigmoid(z);
        for v in g2.value(s).iter() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_branch_gradients_are_skipped() {
        // A constant-only branch must not allocate gradients.
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 0.5));
        let mut g = Graph::new();
        let c = g.constant(ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 1.0));
        let pv = g.param(&store, p);
        let s = g.add(c, pv);
        let m = g.mean_all(s);
        g.backward(m);
        assert!(g.grad(c).is_none());
        assert!(g.grad(pv).is_some());
    }

    #[test]
    fn f32_and_f64_agree_on_small_forward() {
        let x64 = rand_array(&[1, 2, 4, 4], 31);
        let w64 = rand_array(&[2, 2, 3, 3], 32);
        let b64 = rand_array(&[2], 33);
        let mut g64 = Graph::<f64>::new();
        let (x, w, b) = (g64.constant(x64.clone()), g64.constant(w64.clone()), g64.constant(b64.clone()));
        let out = g64.conv2d(x, w, b, 1, 1);
        let m64 = g64.mean_all(out);

        let mut g32 = Graph::<f32>::new();
        let (x, w, b) = (
            g32.constant(x64.mapv(|v| v as f32)),
            g32.constant(w64.mapv(|v| v as f32)),
            g32.constant(b64.mapv(|v| v as f32)),
        );
        let out = g32.conv2d(x, w, b, 1, 1);
        let m32 = g32.mean_all(out);

        assert!((g64.scalar(m64) - g32.scalar(m32) as f64).abs() < 1e-5);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", ArrayD::from_elem(IxDyn(&[4]), 2.0));
        let mut adam = Adam::new(&store, 0.1, 0.9, 0.999, 1e-8);
        for _ in 0..400 {
            let mut g = Graph::new();
            let pv = g.param(&store, p);
            let sq = g.mul_elem(pv, pv);
            let loss = g.mean_all(sq);
            g.backward(loss);
            let grads: Vec<(ParamId, ArrayD<f64>)> =
                g.param_grads().map(|(id, gr)| (id, gr.clone())).collect();
            adam.step(&mut store, grads.iter().map(|(id, g)| (*id, g)));
        }
        for v in store.value(p).iter() {
            assert!(v.abs() < 0.05, "value {v} did not descend");
        }
    }
}

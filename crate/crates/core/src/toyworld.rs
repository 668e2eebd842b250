//! Procedural paired-domain benchmark with pixel-perfect semantics.
//!
//! Scenes are random arrangements of rectangles, circles and triangles over
//! a background class; later shapes occlude earlier ones. The same scene
//! geometry is rendered under two different appearance styles to create a
//! controlled domain gap: a flat, clean "synthetic" look for the source
//! domain and a textured, noisy, vignetted "real" look for the target.
//! Everything is a pure function of `(seed, index)`.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    save_dataset, ClassCatalog, DomainPairDataset, LabeledImage, UnlabeledImage,
};
use crate::error::{Error, Result};

/// Parameters of the scene distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_size: usize,
    /// Total class count including the background class 0.
    pub num_classes: usize,
    pub shape_count_range: (usize, usize),
    /// At least 1. Shape class c is drawn with probability proportional
    /// to `skew^-(c-1)`, so higher ids cover fewer pixels.
    pub class_frequency_skew: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_size: 64,
            num_classes: 5,
            shape_count_range: (3, 6),
            class_frequency_skew: 2.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Config(format!("image_size {} < 16", self.image_size)));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::Config(format!("num_classes {} outside 2..=256", self.num_classes)));
        }
        if self.shape_count_range.0 > self.shape_count_range.1 {
            return Err(Error::Config(format!(
                "shape_count_range ({}, {}) is inverted",
                self.shape_count_range.0, self.shape_count_range.1
            )));
        }
        if self.class_frequency_skew < 1.0 {
            return Err(Error::Config(format!(
                "class_frequency_skew {} < 1",
                self.class_frequency_skew
            )));
        }
        Ok(())
    }
}

/// Appearance of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    /// Base color per class, values in [0,1].
    pub palette: Vec<[f32; 3]>,
    /// Strength of the multiplicative procedural texture, in [0,1].
    pub texture_amplitude: f32,
    /// Std of additive Gaussian pixel noise, >= 0.
    pub noise_sigma: f32,
    /// Vignetting strength, in [0,1].
    pub illumination_gradient: f32,
}

impl DomainStyle {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.palette.len() != num_classes {
            return Err(Error::Config(format!(
                "palette has {} colors for {} classes",
                self.palette.len(),
                num_classes
            )));
        }
        for c in &self.palette {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config("palette colors must be in [0,1]".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.texture_amplitude) {
            return Err(Error::Config("texture_amplitude outside [0,1]".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.illumination_gradient) {
            return Err(Error::Config("illumination_gradient outside [0,1]".into()));
        }
        Ok(())
    }
}

/// Flat, clean, saturated colors: the "synthetic" look. The last class is
/// deliberately colored close to class 1 so that appearance alone barely
/// separates them; preserving it through translation requires semantics.
pub fn default_source_style(num_classes: usize) -> DomainStyle {
    let base = [
        [0.16, 0.16, 0.18], // background: dark slate
        [0.82, 0.18, 0.18], // red
        [0.20, 0.75, 0.30], // green
        [0.18, 0.30, 0.82], // blue
        [0.60, 0.14, 0.16], // dark red, near class 1
    ];
    DomainStyle {
        palette: build_palette(&base, num_classes, 0.23),
        texture_amplitude: 0.05,
        noise_sigma: 0.01,
        illumination_gradient: 0.0,
    }
}

/// Textured, noisy, vignetted, differently colored: the "real" look.
pub fn default_target_style(num_classes: usize) -> DomainStyle {
    let base = [
        [0.44, 0.38, 0.30], // background: warm gray
        [0.85, 0.55, 0.15], // orange
        [0.15, 0.55, 0.60], // teal
        [0.55, 0.20, 0.65], // violet
        [0.87, 0.82, 0.25], // yellow, far from orange
    ];
    DomainStyle {
        palette: build_palette(&base, num_classes, 0.61),
        texture_amplitude: 0.35,
        noise_sigma: 0.05,
        illumination_gradient: 0.6,
    }
}

fn build_palette(base: &[[f32; 3]; 5], num_classes: usize, hue_offset: f32) -> Vec<[f32; 3]> {
    let mut palette: Vec<[f32; 3]> = base.iter().take(num_classes).copied().collect();
    // Extra classes beyond the curated five walk the hue circle.
    let golden = 0.618_034f32;
    for i in palette.len()..num_classes {
        let hue = (hue_offset + golden * i as f32).fract();
        palette.push(hsv_to_rgb(hue, 0.65, 0.75));
    }
    palette
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Display catalog for a toy world: distinct saturated colors per class.
pub fn toy_catalog(num_classes: usize) -> Result<ClassCatalog> {
    let mut classes = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let name = if c == 0 { "background".to_string() } else { format!("class{c}") };
        let color = if c == 0 {
            [0u8, 0u8, 0u8]
        } else {
            let rgb = hsv_to_rgb((0.137 * c as f32).fract(), 0.9, 0.95);
            [
                (rgb[0] * 255.0).round() as u8,
                (rgb[1] * 255.0).round() as u8,
                (rgb[2] * 255.0).round() as u8,
            ]
        };
        classes.push((name, color));
    }
    ClassCatalog::new(classes)
}

/// splitmix64-style mixing so every (seed, index, role) triple yields an
/// independent stream.
fn mix_seed(seed: u64, index: u64, role: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(role.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Rect,
    Circle,
    Triangle,
}

/// Generate the semantic map for scene `index`. Background is class 0;
/// shapes are drawn in order so later ones occlude earlier ones.
pub fn generate_scene(spec: &SceneSpec, index: u64) -> Result<Array2<u8>> {
    spec.validate()?;
    let s = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index, 1));
    let mut map = Array2::<u8>::zeros((s, s));
    let count = if spec.shape_count_range.0 == spec.shape_count_range.1 {
        spec.shape_count_range.0
    } else {
        rng.gen_range(spec.shape_count_range.0..=spec.shape_count_range.1)
    };

    // class weights skew^-(c-1) for shape classes 1..num_classes-1
    let shape_classes = spec.num_classes - 1;
    let weights: Vec<f64> =
        (0..shape_classes).map(|i| spec.class_frequency_skew.powi(-(i as i32))).collect();
    let total_w: f64 = weights.iter().sum();

    for _ in 0..count {
        let mut pick = rng.gen_range(0.0..total_w);
        let mut class = 1u8;
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                class = (i + 1) as u8;
                break;
            }
            pick -= w;
        }
        let kind = match rng.gen_range(0..3) {
            0 => ShapeKind::Rect,
            1 => ShapeKind::Circle,
            _ => ShapeKind::Triangle,
        };
        let sf = s as f64;
        match kind {
            ShapeKind::Rect => {
                let cx = rng.gen_range(0.0..sf);
                let cy = rng.gen_range(0.0..sf);
                let hw = rng.gen_range(0.08..0.22) * sf;
                let hh = rng.gen_range(0.08..0.22) * sf;
                draw_rect(&mut map, cx, cy, hw, hh, class);
            }
            ShapeKind::Circle => {
                let cx = rng.gen_range(0.0..sf);
                let cy = rng.gen_range(0.0..sf);
                let r = rng.gen_range(0.08..0.20) * sf;
                draw_circle(&mut map, cx, cy, r, class);
            }
            ShapeKind::Triangle => {
                let cx = rng.gen_range(0.0..sf);
                let cy = rng.gen_range(0.0..sf);
                let mut pts = [[0.0f64; 2]; 3];
                for p in &mut pts {
                    p[0] = cx + rng.gen_range(-0.25..0.25) * sf;
                    p[1] = cy + rng.gen_range(-0.25..0.25) * sf;
                }
                draw_triangle(&mut map, &pts, class);
            }
        }
    }
    Ok(map)
}

fn draw_rect(map: &mut Array2<u8>, cx: f64, cy: f64, hw: f64, hh: f64, class: u8) {
    let s = map.dim().0 as isize;
    let x0 = ((cx - hw).floor() as isize).max(0);
    let x1 = ((cx + hw).ceil() as isize).min(s - 1);
    let y0 = ((cy - hh).floor() as isize).max(0);
    let y1 = ((cy + hh).ceil() as isize).min(s - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            if (fx - cx).abs() <= hw && (fy - cy).abs() <= hh {
                map[[y as usize, x as usize]] = class;
            }
        }
    }
}

fn draw_circle(map: &mut Array2<u8>, cx: f64, cy: f64, r: f64, class: u8) {
    let s = map.dim().0 as isize;
    let x0 = ((cx - r).floor() as isize).max(0);
    let x1 = ((cx + r).ceil() as isize).min(s - 1);
    let y0 = ((cy - r).floor() as isize).max(0);
    let y1 = ((cy + r).ceil() as isize).min(s - 1);
    let r2 = r * r;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let d2 = (fx - cx) * (fx - cx) + (fy - cy) * (fy - cy);
            if d2 <= r2 {
                map[[y as usize, x as usize]] = class;
            }
        }
    }
}

fn draw_triangle(map: &mut Array2<u8>, pts: &[[f64; 2]; 3], class: u8) {
    let s = map.dim().0 as isize;
    let minx = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let maxx = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let miny = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let maxy = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let x0 = (minx.floor() as isize).max(0);
    let x1 = (maxx.ceil() as isize).min(s - 1);
    let y0 = (miny.floor() as isize).max(0);
    let y1 = (maxy.ceil() as isize).min(s - 1);
    let edge = |a: &[f64; 2], b: &[f64; 2], px: f64, py: f64| {
        (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
    };
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let e0 = edge(&pts[0], &pts[1], fx, fy);
            let e1 = edge(&pts[1], &pts[2], fx, fy);
            let e2 = edge(&pts[2], &pts[0], fx, fy);
            let inside = (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0)
                || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0);
            if inside {
                map[[y as usize, x as usize]] = class;
            }
        }
    }
}

/// Render a semantic map under a style. Consumes `rng` for the texture
/// field parameters first and then, when `noise_sigma > 0`, one normal
/// draw per pixel channel, so a zero-noise render with the same rng state
/// is the matching "clean" image.
pub fn render(map: &Array2<u8>, style: &DomainStyle, rng: &mut ChaCha8Rng) -> Result<Array3<f32>> {
    let (h, w) = map.dim();
    let num_classes = style.palette.len();
    if let Some(&bad) = map.iter().find(|&&c| c as usize >= num_classes) {
        return Err(Error::Validation(format!("semantic map value {bad} has no palette entry")));
    }
    // texture field parameters are always drawn to keep rng alignment
    let fx = rng.gen_range(2.0..6.0) * std::f32::consts::TAU / w as f32;
    let fy = rng.gen_range(2.0..6.0) * std::f32::consts::TAU / h as f32;
    let px = rng.gen_range(0.0..std::f32::consts::TAU);
    let py = rng.gen_range(0.0..std::f32::consts::TAU);

    let mut out = Array3::<f32>::zeros((h, w, 3));
    let cx = (w as f32 - 1.0) / 2.0;
    let cy = (h as f32 - 1.0) / 2.0;
    let rmax2 = cx * cx + cy * cy;
    for y in 0..h {
        for x in 0..w {
            let color = style.palette[map[[y, x]] as usize];
            let tex = 1.0
                + style.texture_amplitude
                    * 0.5
                    * ((fx * x as f32 + px).sin() * (fy * y as f32 + py).sin());
            let r2 = (x as f32 - cx) * (x as f32 - cx) + (y as f32 - cy) * (y as f32 - cy);
            let vign = 1.0 - style.illumination_gradient * 0.5 * (r2 / rmax2);
            for c in 0..3 {
                out[[y, x, c]] = color[c] * tex * vign;
            }
        }
    }
    if style.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f64, style.noise_sigma as f64).unwrap();
        for v in out.iter_mut() {
            *v += normal.sample(rng) as f32;
        }
    }
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

/// Quantize to the 8-bit grid used on disk so the in-memory dataset equals
/// its reloaded form exactly.
fn quantize(pixels: &mut Array3<f32>) {
    pixels.mapv_inplace(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
}

/// Generate a full domain-pair dataset and write it to `root` in the
/// standard layout. Source and target draw from the same scene
/// distribution but disjoint scene indices (the domains are unpaired);
/// held-out labeled target-style samples land in `target_eval`.
pub fn generate_dataset(
    spec: &SceneSpec,
    source_style: &DomainStyle,
    target_style: &DomainStyle,
    n_source: usize,
    n_target: usize,
    n_eval: usize,
    root: &Path,
) -> Result<DomainPairDataset> {
    spec.validate()?;
    source_style.validate(spec.num_classes)?;
    target_style.validate(spec.num_classes)?;
    if source_style == target_style {
        return Err(Error::Config("source and target styles must differ".into()));
    }
    if n_source == 0 || n_target == 0 || n_eval == 0 {
        return Err(Error::Config("sample counts must be positive".into()));
    }

    let mut source = Vec::with_capacity(n_source);
    for i in 0..n_source {
        let map = generate_scene(spec, i as u64)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, i as u64, 2));
        let mut pixels = render(&map, source_style, &mut rng)?;
        quantize(&mut pixels);
        source.push(LabeledImage { pixels, labels: map, id: format!("{i:06}") });
    }

    let mut target = Vec::with_capacity(n_target);
    for i in 0..n_target {
        let scene_index = (n_source + i) as u64;
        let map = generate_scene(spec, scene_index)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, scene_index, 3));
        let mut pixels = render(&map, target_style, &mut rng)?;
        quantize(&mut pixels);
        target.push(UnlabeledImage { pixels, id: format!("{i:06}") });
    }

    let mut target_eval = Vec::with_capacity(n_eval);
    for i in 0..n_eval {
        let scene_index = (n_source + n_target + i) as u64;
        let map = generate_scene(spec, scene_index)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, scene_index, 3));
        let mut pixels = render(&map, target_style, &mut rng)?;
        quantize(&mut pixels);
        target_eval.push(LabeledImage { pixels, labels: map, id: format!("{i:06}") });
    }

    let dataset = DomainPairDataset {
        source,
        target,
        target_eval: Some(target_eval),
        catalog: toy_catalog(spec.num_classes)?,
    };
    save_dataset(root, &dataset)?;
    Ok(dataset)
}

/// Labeled target-style samples from a reserved index range, used to train
/// the oracle segmenter for semantic preservation scoring. These indices
/// never overlap the dataset splits.
pub fn oracle_training_set(
    spec: &SceneSpec,
    target_style: &DomainStyle,
    count: usize,
) -> Result<Vec<LabeledImage>> {
    spec.validate()?;
    target_style.validate(spec.num_classes)?;
    let base = 1u64 << 40;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let scene_index = base + i as u64;
        let map = generate_scene(spec, scene_index)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, scene_index, 3));
        let mut pixels = render(&map, target_style, &mut rng)?;
        quantize(&mut pixels);
        out.push(LabeledImage { pixels, labels: map, id: format!("oracle_{i:06}") });
    }
    Ok(out)
}

//! Deterministic synthetic video world.
//!
//! Sequences contain one bright textured target (rectangle or ellipse)
//! walking over a dark noisy background, with optional distractors from
//! the same texture family. Ground truth is the rasterized bounding box
//! of the drawn target pixels, so the stored box and the visible object
//! agree exactly. Everything is a pure function of `(seed, config)`.
//!
//! The module also owns crop geometry (square context crops with an
//! invertible affine transform), training-pair sampling with uniform
//! shift/scale augmentation, negative pairs, and the scale/ratio
//! statistics of the generated data.

use crate::codec::BBox;
use crate::imgio;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Motion and shape dynamics of every object in a sequence.
#[derive(Clone, Copy, Debug)]
pub struct Dynamics {
    /// Std-dev of per-frame center steps, px.
    pub translation_sigma: f64,
    /// Std-dev of per-frame log area steps (`ln s_T - ln s_{T-1}`).
    pub log_scale_sigma: f64,
    /// Std-dev of per-frame log aspect-ratio steps.
    pub log_ratio_sigma: f64,
    /// Number of same-family distractor objects.
    pub distractors: usize,
}

impl Default for Dynamics {
    fn default() -> Self {
        Dynamics {
            translation_sigma: 2.5,
            log_scale_sigma: 0.02,
            log_ratio_sigma: 0.015,
            distractors: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub frame_h: usize,
    pub frame_w: usize,
    pub length: usize,
    /// Size of the shared texture family.
    pub textures: usize,
    /// Initial object side lengths are drawn from this range.
    pub init_size: (f64, f64),
    /// Hard clamp on object side lengths.
    pub size_bounds: (f64, f64),
    pub dynamics: Dynamics,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            frame_h: 160,
            frame_w: 160,
            length: 60,
            textures: 8,
            init_size: (26.0, 46.0),
            size_bounds: (16.0, 72.0),
            dynamics: Dynamics::default(),
        }
    }
}

/// One generated video: frames, per-frame ground truth, and provenance.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub frames: Vec<Tensor<f32>>,
    pub gt: Vec<BBox>,
    pub seed: u64,
    pub texture_id: usize,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect,
    Ellipse,
}

#[derive(Clone, Copy, Debug)]
struct TextureParams {
    base: [f64; 3],
    freq_u: f64,
    freq_v: f64,
    phase: f64,
    kind: u8,
}

impl TextureParams {
    /// Textures are global: id k looks the same in every sequence.
    fn derive(id: usize) -> TextureParams {
        let mut r = Rng::new(0x7465_7874).fork(id as u64);
        TextureParams {
            base: [r.uniform(0.55, 0.95), r.uniform(0.55, 0.95), r.uniform(0.55, 0.95)],
            freq_u: r.uniform(0.25, 0.9),
            freq_v: r.uniform(0.25, 0.9),
            phase: r.uniform(0.0, std::f64::consts::TAU),
            kind: (id % 4) as u8,
        }
    }

    /// Channel value at object-local coordinates; stays >= 0.7 * base so
    /// objects are separable from the dark background by luminance.
    fn sample(&self, u: f64, v: f64, c: usize) -> f32 {
        let p = match self.kind {
            0 => (self.freq_u * u + self.phase).sin(),
            1 => (self.freq_v * v + self.phase).sin(),
            2 => (self.freq_u * u + self.phase).sin() * (self.freq_v * v).cos(),
            _ => (self.freq_u * (u * u + v * v).sqrt() + self.phase).sin(),
        };
        (self.base[c] * (0.85 + 0.15 * p)) as f32
    }
}

#[derive(Clone, Debug)]
struct ObjectState {
    shape: Shape,
    tex: TextureParams,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl ObjectState {
    fn contains(&self, px: f64, py: f64) -> bool {
        let dx = px - self.cx;
        let dy = py - self.cy;
        match self.shape {
            Shape::Rect => dx.abs() <= self.w / 2.0 && dy.abs() <= self.h / 2.0,
            Shape::Ellipse => {
                let nx = dx / (self.w / 2.0);
                let ny = dy / (self.h / 2.0);
                nx * nx + ny * ny <= 1.0
            }
        }
    }

    fn step(&mut self, cfg: &WorldConfig, r: &mut Rng) {
        let d = &cfg.dynamics;
        self.cx += r.normal_scaled(0.0, d.translation_sigma);
        self.cy += r.normal_scaled(0.0, d.translation_sigma);
        let g = r.normal_scaled(0.0, d.log_scale_sigma / 2.0);
        let q = r.normal_scaled(0.0, d.log_ratio_sigma / 2.0);
        self.w = (self.w * (g + q).exp()).clamp(cfg.size_bounds.0, cfg.size_bounds.1);
        self.h = (self.h * (g - q).exp()).clamp(cfg.size_bounds.0, cfg.size_bounds.1);
        self.clamp_into_frame(cfg);
    }

    fn clamp_into_frame(&mut self, cfg: &WorldConfig) {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        self.cx = self.cx.clamp(hw + 1.0, cfg.frame_w as f64 - hw - 1.0);
        self.cy = self.cy.clamp(hh + 1.0, cfg.frame_h as f64 - hh - 1.0);
    }
}

fn spawn_object(cfg: &WorldConfig, r: &mut Rng, texture_id: usize, index: usize) -> ObjectState {
    let mut obj = ObjectState {
        shape: if index.is_multiple_of(2) { Shape::Rect } else { Shape::Ellipse },
        tex: TextureParams::derive(texture_id),
        cx: r.uniform(0.2, 0.8) * cfg.frame_w as f64,
        cy: r.uniform(0.2, 0.8) * cfg.frame_h as f64,
        w: r.uniform(cfg.init_size.0, cfg.init_size.1),
        h: r.uniform(cfg.init_size.0, cfg.init_size.1),
    };
    obj.clamp_into_frame(cfg);
    obj
}

/// Generates a sequence; `masks[t]` marks the pixels the target covers
/// in frame `t` (drawn last, so never occluded).
pub fn gen_sequence_with_masks(
    cfg: &WorldConfig,
    seed: u64,
    texture_id: usize,
) -> Result<(Sequence, Vec<Vec<bool>>)> {
    if cfg.length < 2 {
        return Err(Error::Invalid {
            what: "sequence length",
            detail: format!("need >= 2 frames, got {}", cfg.length),
        });
    }
    let (h, w) = (cfg.frame_h, cfg.frame_w);
    let mut rng = Rng::new(seed).fork(0x73657175); // "sequ"
    // target shape alternates with the seed so both families appear
    let mut target = spawn_object(cfg, &mut rng, texture_id, (seed % 2) as usize);
    let mut distractors: Vec<ObjectState> = Vec::new();
    for k in 0..cfg.dynamics.distractors {
        let tex = (texture_id + 1 + rng.below(cfg.textures.max(2) - 1)) % cfg.textures.max(2);
        let mut obj = spawn_object(cfg, &mut rng, tex, k + 1);
        // keep initial placements off the target
        for _ in 0..20 {
            let b = BBox::from_center(obj.cx, obj.cy, obj.w, obj.h)?;
            let t = BBox::from_center(target.cx, target.cy, target.w, target.h)?;
            if crate::codec::iou(&b, &t) < 0.2 {
                break;
            }
            obj.cx = rng.uniform(0.15, 0.85) * w as f64;
            obj.cy = rng.uniform(0.15, 0.85) * h as f64;
            obj.clamp_into_frame(cfg);
        }
        distractors.push(obj);
    }

    let mut frames = Vec::with_capacity(cfg.length);
    let mut gt = Vec::with_capacity(cfg.length);
    let mut masks = Vec::with_capacity(cfg.length);
    for t in 0..cfg.length {
        if t > 0 {
            for d in distractors.iter_mut() {
                d.step(cfg, &mut rng);
            }
            target.step(cfg, &mut rng);
        }
        let mut frame = Tensor::zeros(&[3, h, w]);
        let mut noise = rng.fork(0x6e6f_6973_6500 | t as u64);
        let data = frame.data_mut();
        for i in 0..h * w {
            let v = noise.uniform(0.05, 0.25) as f32;
            data[i] = v;
            data[h * w + i] = v * 0.95;
            data[2 * h * w + i] = v * 1.05;
        }
        for d in &distractors {
            draw_object(&mut frame, d, None);
        }
        let mut mask = vec![false; h * w];
        draw_object(&mut frame, &target, Some(&mut mask));
        let gt_box = mask_bbox(&mask, h, w).ok_or(Error::Invalid {
            what: "target",
            detail: format!("target renders to no pixels in frame {t}"),
        })?;
        frames.push(frame);
        gt.push(gt_box);
        masks.push(mask);
    }
    Ok((Sequence { frames, gt, seed, texture_id }, masks))
}

pub fn gen_sequence(cfg: &WorldConfig, seed: u64, texture_id: usize) -> Result<Sequence> {
    Ok(gen_sequence_with_masks(cfg, seed, texture_id)?.0)
}

/// Generates `count` sequences with round-robin texture assignment.
pub fn gen_world(cfg: &WorldConfig, base_seed: u64, count: usize) -> Result<Vec<Sequence>> {
    (0..count)
        .map(|i| gen_sequence(cfg, base_seed.wrapping_add(i as u64), i % cfg.textures.max(1)))
        .collect()
}

fn draw_object(frame: &mut Tensor<f32>, obj: &ObjectState, mut mask: Option<&mut Vec<bool>>) {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let x_lo = ((obj.cx - obj.w / 2.0).floor().max(0.0)) as usize;
    let x_hi = ((obj.cx + obj.w / 2.0).ceil().min(w as f64)) as usize;
    let y_lo = ((obj.cy - obj.h / 2.0).floor().max(0.0)) as usize;
    let y_hi = ((obj.cy + obj.h / 2.0).ceil().min(h as f64)) as usize;
    let data = frame.data_mut();
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if !obj.contains(px, py) {
                continue;
            }
            let (u, v) = (px - obj.cx, py - obj.cy);
            for c in 0..3 {
                data[(c * h + y) * w + x] = obj.tex.sample(u, v, c);
            }
            if let Some(m) = mask.as_deref_mut() {
                m[y * w + x] = true;
            }
        }
    }
}

fn mask_bbox(mask: &[bool], h: usize, w: usize) -> Option<BBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return None;
    }
    BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64).ok()
}

/// Luminance-threshold bounding box of the bright object pixels of a
/// rendered frame; test oracle for geometry consistency (use only with
/// zero distractors).
pub fn luminance_bbox(frame: &Tensor<f32>, threshold: f32) -> Option<BBox> {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let d = frame.data();
    let mask: Vec<bool> = (0..h * w)
        .map(|i| (d[i] + d[h * w + i] + d[2 * h * w + i]) / 3.0 > threshold)
        .collect();
    mask_bbox(&mask, h, w)
}

// ── crop geometry ────────────────────────────────────────────────────

/// Invertible axis-aligned transform between patch and image space:
/// `image = origin + patch * scale` on both axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropTransform {
    pub x0: f64,
    pub y0: f64,
    pub scale: f64,
}

impl CropTransform {
    pub fn to_image_pt(&self, px: f64, py: f64) -> (f64, f64) {
        (self.x0 + px * self.scale, self.y0 + py * self.scale)
    }

    pub fn to_patch_pt(&self, ix: f64, iy: f64) -> (f64, f64) {
        ((ix - self.x0) / self.scale, (iy - self.y0) / self.scale)
    }

    pub fn to_image_box(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.to_image_pt(b.x0, b.y0);
        let (x1, y1) = self.to_image_pt(b.x1, b.y1);
        BBox { x0, y0, x1, y1 }
    }

    pub fn to_patch_box(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.to_patch_pt(b.x0, b.y0);
        let (x1, y1) = self.to_patch_pt(b.x1, b.y1);
        BBox { x0, y0, x1, y1 }
    }
}

/// Extracts a square window of side `side` centered at `(cx, cy)`,
/// resampled bilinearly to `out_size`; out-of-frame area takes the
/// per-channel frame mean.
pub fn crop_square(
    frame: &Tensor<f32>,
    cx: f64,
    cy: f64,
    side: f64,
    out_size: usize,
) -> Result<(Tensor<f32>, CropTransform)> {
    if out_size == 0 || !side.is_finite() || side <= 0.0 {
        return Err(Error::Invalid {
            what: "crop",
            detail: format!("side {side}, out_size {out_size}"),
        });
    }
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let scale = side / out_size as f64;
    let tf = CropTransform { x0: cx - side / 2.0, y0: cy - side / 2.0, scale };

    let d = frame.data();
    let mut fill = [0.0f32; 3];
    for (c, f) in fill.iter_mut().enumerate() {
        *f = d[c * h * w..(c + 1) * h * w].iter().sum::<f32>() / (h * w) as f32;
    }

    let mut out = Tensor::zeros(&[3, out_size, out_size]);
    let o = out.data_mut();
    for oy in 0..out_size {
        for ox in 0..out_size {
            let (ix, iy) = tf.to_image_pt(ox as f64 + 0.5, oy as f64 + 0.5);
            // frame pixel (r, c) is a sample at center (c + 0.5, r + 0.5)
            let gx = ix - 0.5;
            let gy = iy - 0.5;
            let fx = gx.floor();
            let fy = gy.floor();
            let wx = gx - fx;
            let wy = gy - fy;
            for c in 0..3 {
                let tap = |dx: i64, dy: i64| -> f32 {
                    let x = fx as i64 + dx;
                    let y = fy as i64 + dy;
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        fill[c]
                    } else {
                        d[(c * h + y as usize) * w + x as usize]
                    }
                };
                let v = tap(0, 0) as f64 * (1.0 - wx) * (1.0 - wy)
                    + tap(1, 0) as f64 * wx * (1.0 - wy)
                    + tap(0, 1) as f64 * (1.0 - wx) * wy
                    + tap(1, 1) as f64 * wx * wy;
                o[(c * out_size + oy) * out_size + ox] = v as f32;
            }
        }
    }
    Ok((out, tf))
}

/// Side length of the canonical context crop: `sqrt((w+p)(h+p))` with
/// `p = context * (w + h)`.
pub fn context_side(b: &BBox, context: f64) -> f64 {
    let pad = context * (b.width() + b.height());
    ((b.width() + pad) * (b.height() + pad)).sqrt()
}

/// Square context crop around a box center.
pub fn crop_patch(
    frame: &Tensor<f32>,
    center_box: &BBox,
    out_size: usize,
    context: f64,
) -> Result<(Tensor<f32>, CropTransform)> {
    let (cx, cy) = center_box.center();
    crop_square(frame, cx, cy, context_side(center_box, context), out_size)
}

// ── training pairs ───────────────────────────────────────────────────

/// Crop sizes shared by the sampler and the tracker.
#[derive(Clone, Copy, Debug)]
pub struct CropSpec {
    pub template_size: usize,
    pub search_size: usize,
    /// Context margin factor of the template crop (canonical 0.5).
    pub context: f64,
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec { template_size: 64, search_size: 128, context: 0.5 }
    }
}

impl CropSpec {
    /// The search window scales the template window by the patch ratio.
    pub fn search_side(&self, b: &BBox) -> f64 {
        context_side(b, self.context) * self.search_size as f64 / self.template_size as f64
    }
}

/// One template/search training example. `gt_in_search` is in search
/// patch coordinates and present exactly when the pair is positive.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub template: Tensor<f32>,
    pub search: Tensor<f32>,
    pub gt_in_search: Option<BBox>,
    pub is_negative: bool,
    /// Maps search-patch coordinates back to source-frame coordinates
    /// (kept composed through augmentation).
    pub search_transform: CropTransform,
}

/// Frame indices for a training pair: `1 <= |i - j| <= max_interval`.
fn choose_pair_indices(len: usize, max_interval: usize, rng: &mut Rng) -> (usize, usize) {
    let max_interval = max_interval.max(1);
    let i = rng.below(len);
    let lo = i.saturating_sub(max_interval);
    let hi = (i + max_interval).min(len - 1);
    let mut j = lo + rng.below(hi - lo + 1);
    if j == i {
        j = if i < hi { i + 1 } else { i - 1 };
    }
    (i, j)
}

/// Samples a positive pair: template around frame-i ground truth,
/// search around frame-j ground truth, with `1 <= |i - j| <= max_interval`
/// whenever the sequence allows it.
pub fn sample_pair(
    seq: &Sequence,
    max_interval: usize,
    crop: &CropSpec,
    rng: &mut Rng,
) -> Result<TrainingPair> {
    let len = seq.frames.len();
    if len < 2 {
        return Err(Error::Invalid { what: "sequence", detail: "need >= 2 frames".into() });
    }
    let (i, j) = choose_pair_indices(len, max_interval, rng);
    let (template, _) = crop_patch(&seq.frames[i], &seq.gt[i], crop.template_size, crop.context)?;
    let (cx, cy) = seq.gt[j].center();
    let side = crop.search_side(&seq.gt[j]);
    let (search, tf) = crop_square(&seq.frames[j], cx, cy, side, crop.search_size)?;
    let gt_in_search = tf.to_patch_box(&seq.gt[j]);
    Ok(TrainingPair {
        template,
        search,
        gt_in_search: Some(gt_in_search),
        is_negative: false,
        search_transform: tf,
    })
}

/// Uniform shift/scale augmentation of the search patch; the box and
/// the stored transform stay consistent with the resampled pixels.
pub fn augment(
    pair: &TrainingPair,
    rng: &mut Rng,
    max_shift: f64,
    scale_range: (f64, f64),
) -> Result<TrainingPair> {
    if !(scale_range.0 > 0.0 && scale_range.1 >= scale_range.0) || max_shift < 0.0 {
        return Err(Error::Invalid {
            what: "augment bounds",
            detail: format!("max_shift {max_shift}, scale_range {scale_range:?}"),
        });
    }
    let dx = rng.uniform(-max_shift, max_shift);
    let dy = rng.uniform(-max_shift, max_shift);
    let f = rng.uniform(scale_range.0, scale_range.1);
    if dx == 0.0 && dy == 0.0 && f == 1.0 {
        return Ok(pair.clone());
    }
    let n = pair.search.shape()[1];
    let c = n as f64 / 2.0;
    // content at old position q lands at p = c + d + f*(q - c)
    let src_of = |p: f64, d: f64| (p - c - d) / f + c;

    let (h, w) = (n, n);
    let d = pair.search.data();
    let mut fill = [0.0f32; 3];
    for (ch, fv) in fill.iter_mut().enumerate() {
        *fv = d[ch * h * w..(ch + 1) * h * w].iter().sum::<f32>() / (h * w) as f32;
    }
    let mut out = Tensor::zeros(&[3, n, n]);
    let o = out.data_mut();
    for oy in 0..n {
        for ox in 0..n {
            let sx = src_of(ox as f64 + 0.5, dx) - 0.5;
            let sy = src_of(oy as f64 + 0.5, dy) - 0.5;
            let fx = sx.floor();
            let fy = sy.floor();
            let wx = sx - fx;
            let wy = sy - fy;
            for ch in 0..3 {
                let tap = |ddx: i64, ddy: i64| -> f32 {
                    let x = fx as i64 + ddx;
                    let y = fy as i64 + ddy;
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        fill[ch]
                    } else {
                        d[(ch * h + y as usize) * w + x as usize]
                    }
                };
                let v = tap(0, 0) as f64 * (1.0 - wx) * (1.0 - wy)
                    + tap(1, 0) as f64 * wx * (1.0 - wy)
                    + tap(0, 1) as f64 * (1.0 - wx) * wy
                    + tap(1, 1) as f64 * wx * wy;
                o[(ch * n + oy) * n + ox] = v as f32;
            }
        }
    }
    let map_box = |b: &BBox| BBox {
        x0: c + dx + f * (b.x0 - c),
        y0: c + dy + f * (b.y0 - c),
        x1: c + dx + f * (b.x1 - c),
        y1: c + dy + f * (b.y1 - c),
    };
    // compose the patch->image transform with the inverse content map
    let t = &pair.search_transform;
    let s = t.scale;
    let new_tf = CropTransform {
        x0: t.x0 + s * (c - (c + dx) / f),
        y0: t.y0 + s * (c - (c + dy) / f),
        scale: s / f,
    };
    Ok(TrainingPair {
        template: pair.template.clone(),
        search: out,
        gt_in_search: pair.gt_in_search.as_ref().map(map_box),
        is_negative: pair.is_negative,
        search_transform: new_tf,
    })
}

/// Template from `a`, search from `b`: the search contains only the
/// other sequence's object, so every cell is a negative.
pub fn make_negative_pair(
    a: &Sequence,
    b: &Sequence,
    crop: &CropSpec,
    rng: &mut Rng,
) -> Result<TrainingPair> {
    if a.texture_id == b.texture_id {
        return Err(Error::Invalid {
            what: "negative pair",
            detail: format!("sequences share texture {}", a.texture_id),
        });
    }
    let i = rng.below(a.frames.len());
    let j = rng.below(b.frames.len());
    let (template, _) = crop_patch(&a.frames[i], &a.gt[i], crop.template_size, crop.context)?;
    let (cx, cy) = b.gt[j].center();
    let side = crop.search_side(&b.gt[j]);
    let (search, tf) = crop_square(&b.frames[j], cx, cy, side, crop.search_size)?;
    Ok(TrainingPair {
        template,
        search,
        gt_in_search: None,
        is_negative: true,
        search_transform: tf,
    })
}

/// Mixed positive/negative pair stream over a set of sequences.
pub struct PairSampler<'a> {
    pub sequences: &'a [Sequence],
    pub crop: CropSpec,
    pub max_interval: usize,
    pub negative_ratio: f64,
    pub max_shift: f64,
    pub scale_range: (f64, f64),
    pub rng: Rng,
}

impl<'a> PairSampler<'a> {
    pub fn next_pair(&mut self) -> Result<TrainingPair> {
        let negative = self.sequences.len() >= 2 && self.rng.bernoulli(self.negative_ratio);
        if negative {
            let ai = self.rng.below(self.sequences.len());
            // walk forward until the texture differs
            let mut bi = self.rng.below(self.sequences.len());
            for _ in 0..self.sequences.len() {
                if self.sequences[bi].texture_id != self.sequences[ai].texture_id {
                    break;
                }
                bi = (bi + 1) % self.sequences.len();
            }
            if self.sequences[bi].texture_id == self.sequences[ai].texture_id {
                // single-texture world; fall through to a positive pair
            } else {
                return make_negative_pair(
                    &self.sequences[ai],
                    &self.sequences[bi],
                    &self.crop,
                    &mut self.rng,
                );
            }
        }
        let seq = &self.sequences[self.rng.below(self.sequences.len())];
        let pair = sample_pair(seq, self.max_interval, &self.crop, &mut self.rng)?;
        augment(&pair, &mut self.rng, self.max_shift, self.scale_range)
    }
}

// ── serialization ────────────────────────────────────────────────────

const PAIR_MAGIC: &[u8; 4] = b"SFPR";

impl TrainingPair {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PAIR_MAGIC);
        let tz = self.template.shape()[1] as u32;
        let xz = self.search.shape()[1] as u32;
        out.extend_from_slice(&tz.to_le_bytes());
        out.extend_from_slice(&xz.to_le_bytes());
        out.push(self.is_negative as u8);
        out.push(self.gt_in_search.is_some() as u8);
        for v in [
            self.search_transform.x0,
            self.search_transform.y0,
            self.search_transform.scale,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(b) = &self.gt_in_search {
            for v in [b.x0, b.y0, b.x1, b.y1] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for t in [&self.template, &self.search] {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TrainingPair> {
        let bad = |detail: &str| Error::Parse {
            path: "<pair bytes>".into(),
            line: 0,
            detail: detail.into(),
        };
        if bytes.len() < 12 || &bytes[0..4] != PAIR_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut pos = 4usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > bytes.len() {
                return Err(bad("truncated"));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        let tz = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let xz = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let is_negative = take(1)?[0] != 0;
        let has_gt = take(1)?[0] != 0;
        let mut read_f64 = || -> Result<f64> {
            if pos + 8 > bytes.len() {
                return Err(bad("truncated"));
            }
            let v = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
            pos += 8;
            Ok(v)
        };
        let x0 = read_f64()?;
        let y0 = read_f64()?;
        let scale = read_f64()?;
        let gt_in_search = if has_gt {
            Some(BBox::new(read_f64()?, read_f64()?, read_f64()?, read_f64()?)?)
        } else {
            None
        };
        if is_negative == gt_in_search.is_some() {
            return Err(bad("negative flag inconsistent with ground-truth presence"));
        }
        let mut read_tensor = |size: usize| -> Result<Tensor<f32>> {
            let n = 3 * size * size;
            if pos + 4 * n > bytes.len() {
                return Err(bad("truncated tensor"));
            }
            let mut data = Vec::with_capacity(n);
            for k in 0..n {
                data.push(f32::from_le_bytes(bytes[pos + 4 * k..pos + 4 * k + 4].try_into().unwrap()));
            }
            pos += 4 * n;
            Tensor::from_vec(&[3, size, size], data)
        };
        let template = read_tensor(tz)?;
        let search = read_tensor(xz)?;
        Ok(TrainingPair {
            template,
            search,
            gt_in_search,
            is_negative,
            search_transform: CropTransform { x0, y0, scale },
        })
    }
}

/// Writes `seq_dir/frame_%06d.ppm` plus `groundtruth.csv` with lines
/// `frame_index,x0,y0,x1,y1` at 1e-3 precision.
pub fn save_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    for (t, (frame, gt)) in seq.frames.iter().zip(seq.gt.iter()).enumerate() {
        imgio::write_ppm(&dir.join(format!("frame_{t:06}.ppm")), frame)?;
        writeln!(&mut csv, "{t},{:.3},{:.3},{:.3},{:.3}", gt.x0, gt.y0, gt.x1, gt.y1)?;
    }
    fs::write(dir.join("groundtruth.csv"), csv)?;
    Ok(())
}

pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let gt_path = dir.join("groundtruth.csv");
    let text = fs::read_to_string(&gt_path)?;
    let mut gt = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let err = |detail: String| Error::Parse {
            path: gt_path.display().to_string(),
            line: lineno + 1,
            detail,
        };
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", fields.len())));
        }
        let idx: usize = fields[0].parse().map_err(|e| err(format!("bad index: {e}")))?;
        if idx != gt.len() {
            return Err(err(format!("frame index {idx} out of order")));
        }
        let mut vals = [0.0f64; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = fields[k + 1]
                .trim()
                .parse()
                .map_err(|e| err(format!("bad coordinate: {e}")))?;
        }
        gt.push(BBox::new(vals[0], vals[1], vals[2], vals[3])?);
    }
    let mut frames = Vec::with_capacity(gt.len());
    for t in 0..gt.len() {
        frames.push(imgio::read_ppm(&dir.join(format!("frame_{t:06}.ppm")))?);
    }
    Ok(Sequence { frames, gt, seed: 0, texture_id: 0 })
}

// ── statistics ───────────────────────────────────────────────────────

/// Fixed-width histogram over an automatic range.
#[derive(Clone, Debug)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub total: usize,
}

impl Histogram {
    pub fn build(values: &[f64], bins: usize) -> Histogram {
        let mut lo = f64::MAX;
        let mut hi = f64::MIN;
        for &v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if values.is_empty() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi <= lo {
            hi = lo + 1e-9;
        }
        let mut counts = vec![0usize; bins];
        for &v in values {
            let k = (((v - lo) / (hi - lo)) * bins as f64) as usize;
            counts[k.min(bins - 1)] += 1;
        }
        Histogram { lo, hi, counts, total: values.len() }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!(
                "{:.6},{:.6},{c}\n",
                self.lo + i as f64 * width,
                self.lo + (i + 1) as f64 * width
            ));
        }
        s
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Relative scale change and aspect ratio statistics of a sequence set.
#[derive(Clone, Debug)]
pub struct ScaleRatioStats {
    /// `s_T / s_{T-1}` with `s = w * h`.
    pub scale_hist: Histogram,
    /// `w / h` per frame.
    pub ratio_hist: Histogram,
    /// (q25, median, q75) of the relative scale.
    pub scale_quantiles: (f64, f64, f64),
    pub ratio_quantiles: (f64, f64, f64),
}

pub fn scale_ratio_stats(seqs: &[Sequence], bins: usize) -> Result<ScaleRatioStats> {
    let mut scales = Vec::new();
    let mut ratios = Vec::new();
    for seq in seqs {
        if seq.gt.len() < 2 {
            return Err(Error::Invalid { what: "stats input", detail: "need >= 2 frames".into() });
        }
        for t in 0..seq.gt.len() {
            ratios.push(seq.gt[t].width() / seq.gt[t].height());
            if t > 0 {
                scales.push(seq.gt[t].area() / seq.gt[t - 1].area());
            }
        }
    }
    let mut s_sorted = scales.clone();
    s_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut r_sorted = ratios.clone();
    r_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ScaleRatioStats {
        scale_hist: Histogram::build(&scales, bins),
        ratio_hist: Histogram::build(&ratios, bins),
        scale_quantiles: (
            quantile(&s_sorted, 0.25),
            quantile(&s_sorted, 0.5),
            quantile(&s_sorted, 0.75),
        ),
        ratio_quantiles: (
            quantile(&r_sorted, 0.25),
            quantile(&r_sorted, 0.5),
            quantile(&r_sorted, 0.75),
        ),
    })
}

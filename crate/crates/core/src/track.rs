//! Online tracking runtime.
//!
//! Per frame: crop the search window around the previous box, run the
//! head, decode per-cell candidate boxes, penalize scale/ratio change,
//! blend in the cosine window, pick the argmax, and update the state
//! with linearly interpolated size. The head is abstracted behind
//! [`HeadSource`] so the trained model, the anchor-maxout variant, and
//! the ground-truth oracle stub all drive the same post-processing.
//!
//! Two formula readings are kept for the penalty and window (see
//! [`PenaltyMode`] / [`WindowMode`]): the normalized/standard forms used
//! by default, and verbatim modes for fidelity experiments.

use crate::codec::BBox;
use crate::model::{HeadOutput, ScoreGrid, SiamModel, TemplateFeats};
use crate::synth::{crop_square, CropSpec, CropTransform, Sequence};
use crate::tape::sigmoid;
use crate::tensor::Tensor;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowMode {
    /// Outer product of 1-D Hann windows, peak 1 at the center.
    StandardHann,
    /// Verbatim radial form `0.5 - 0.5*cos(2*pi*dist/((N-1)/2 - 1))`;
    /// note it evaluates to 0 at the center.
    Verbatim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyMode {
    /// `exp(-k * (max(r/r', r'/r) * max(s/s', s'/s) - 1))`: 1 at no
    /// change, <= 1 otherwise.
    Normalized,
    /// Verbatim `exp(k * max(r/r', r'/r) * max(s/s', s'/s))`, which is
    /// `e^k` at no change.
    Verbatim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeDef {
    /// `sqrt((w + p)(h + p))` with `p = (w + h) / 2`.
    PaddedSqrt,
    /// Plain area `w * h`.
    Area,
}

#[derive(Clone, Copy, Debug)]
pub struct PostprocConfig {
    /// Penalty strength.
    pub k: f64,
    /// Window influence in [0, 1].
    pub omega: f64,
    /// Size update rate in [0, 1].
    pub alpha: f64,
    pub window_mode: WindowMode,
    pub penalty_mode: PenaltyMode,
    pub size_def: SizeDef,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        PostprocConfig {
            k: 0.04,
            omega: 0.3,
            alpha: 0.4,
            window_mode: WindowMode::StandardHann,
            penalty_mode: PenaltyMode::Normalized,
            size_def: SizeDef::PaddedSqrt,
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 0.0 || !(0.0..=1.0).contains(&self.omega) || !(0.0..=1.0).contains(&self.alpha)
        {
            return Err(Error::Invalid {
                what: "postproc config",
                detail: format!("{self:?}"),
            });
        }
        Ok(())
    }
}

/// Raw per-cell candidates produced by a head for one frame: selection
/// scores in [0, 1] and decoded boxes in the grid's label frame.
/// `anchor_boxes` carries the winning pre-set anchor per cell when the
/// head is anchor-based (feeds the IoU-bias analysis).
#[derive(Clone, Debug)]
pub struct CellCandidates {
    pub n: usize,
    pub score: Vec<f64>,
    pub boxes: Vec<BBox>,
    pub anchor_boxes: Option<Vec<BBox>>,
}

/// Anything that can score a search patch over the grid.
pub trait HeadSource {
    fn grid(&self) -> ScoreGrid;
    fn crop_spec(&self) -> CropSpec;
    /// Computes template features from the first frame; called once.
    fn init_template(&mut self, frame: &Tensor<f32>, gt: &BBox) -> Result<()>;
    fn candidates(
        &self,
        patch: &Tensor<f32>,
        frame_idx: usize,
        tf: &CropTransform,
    ) -> Result<CellCandidates>;
}

/// The trained per-pixel model as a head source. `fuse_quality: false`
/// selects on raw classification scores (the quality-ablation lever).
pub struct ModelHead {
    pub model: SiamModel,
    pub fuse_quality: bool,
    feats: Option<TemplateFeats<f32>>,
}

impl ModelHead {
    pub fn new(model: SiamModel) -> ModelHead {
        ModelHead { model, fuse_quality: true, feats: None }
    }

    pub fn cls_only(model: SiamModel) -> ModelHead {
        ModelHead { model, fuse_quality: false, feats: None }
    }
}

/// Elementwise product of classification and quality probabilities.
pub fn fuse_scores(cls_prob: &[f64], quality_prob: &[f64]) -> Vec<f64> {
    cls_prob.iter().zip(quality_prob).map(|(c, q)| c * q).collect()
}

impl HeadSource for ModelHead {
    fn grid(&self) -> ScoreGrid {
        self.model.cfg.score_grid().expect("validated at init")
    }

    fn crop_spec(&self) -> CropSpec {
        CropSpec {
            template_size: self.model.cfg.template_size,
            search_size: self.model.cfg.search_size,
            context: 0.5,
        }
    }

    fn init_template(&mut self, frame: &Tensor<f32>, gt: &BBox) -> Result<()> {
        let spec = self.crop_spec();
        let (patch, _) = crate::synth::crop_patch(frame, gt, spec.template_size, spec.context)?;
        self.feats = Some(self.model.template_feats(&patch)?);
        Ok(())
    }

    fn candidates(
        &self,
        patch: &Tensor<f32>,
        _frame_idx: usize,
        _tf: &CropTransform,
    ) -> Result<CellCandidates> {
        let feats = self.feats.as_ref().ok_or(Error::Invalid {
            what: "tracker state",
            detail: "candidates() before init_template()".into(),
        })?;
        let out: HeadOutput = self.model.forward_infer(feats, patch)?;
        let n = out.cls.shape()[1];
        let nn = n * n;
        let cls_prob: Vec<f64> = out.cls.data()[..nn].iter().map(|&v| sigmoid(v as f64)).collect();
        // an Off-mode quality head was never trained; never fuse it
        let use_quality =
            self.fuse_quality && self.model.cfg.quality_mode != crate::codec::QualityMode::Off;
        let quality_prob: Vec<f64> = match (&out.quality, use_quality) {
            (Some(q), true) => q.data().iter().map(|&v| sigmoid(v as f64)).collect(),
            _ => vec![1.0; nn],
        };
        let score = fuse_scores(&cls_prob, &quality_prob);
        let d = out.distances.data();
        let stride = self.model.cfg.stride;
        let mut boxes = Vec::with_capacity(nn);
        for y in 0..n {
            for x in 0..n {
                let i = y * n + x;
                boxes.push(crate::codec::decode_box(
                    x,
                    y,
                    (d[i] as f64, d[nn + i] as f64, d[2 * nn + i] as f64, d[3 * nn + i] as f64),
                    stride,
                ));
            }
        }
        Ok(CellCandidates { n, score, boxes, anchor_boxes: None })
    }
}

/// Ground-truth oracle: score 1 at cells inside the ground-truth box
/// with exact distances there, score 0 elsewhere with neutral (raw 0)
/// distances. Used to verify the post-processing machinery independently
/// of any trained weights.
pub struct OracleStub {
    pub gt: Vec<BBox>,
    pub grid: ScoreGrid,
    pub crop: CropSpec,
}

impl OracleStub {
    pub fn for_sequence(seq: &Sequence, grid: ScoreGrid, crop: CropSpec) -> OracleStub {
        OracleStub { gt: seq.gt.clone(), grid, crop }
    }
}

impl HeadSource for OracleStub {
    fn grid(&self) -> ScoreGrid {
        self.grid
    }

    fn crop_spec(&self) -> CropSpec {
        self.crop
    }

    fn init_template(&mut self, _frame: &Tensor<f32>, _gt: &BBox) -> Result<()> {
        Ok(())
    }

    fn candidates(
        &self,
        _patch: &Tensor<f32>,
        frame_idx: usize,
        tf: &CropTransform,
    ) -> Result<CellCandidates> {
        let gt_img = self.gt.get(frame_idx).ok_or(Error::Invalid {
            what: "oracle stub",
            detail: format!("no ground truth for frame {frame_idx}"),
        })?;
        let shift = self.grid.label_shift();
        let gt_label = tf.to_patch_box(gt_img).translated(-shift, -shift);
        let n = self.grid.n;
        let s = self.grid.stride;
        let mut score = vec![0.0; n * n];
        let mut boxes = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let (px, py) = crate::model::map_feature_to_image(x, y, s);
                let (px, py) = (px as f64, py as f64);
                if gt_label.contains(px, py) {
                    score[y * n + x] = 1.0;
                    boxes.push(crate::codec::decode_box(
                        x,
                        y,
                        (px - gt_label.x0, py - gt_label.y0, gt_label.x1 - px, gt_label.y1 - py),
                        s,
                    ));
                } else {
                    let d = s as f64;
                    boxes.push(crate::codec::decode_box(x, y, (d, d, d, d), s));
                }
            }
        }
        Ok(CellCandidates { n, score, boxes, anchor_boxes: None })
    }
}

// ── post-processing pieces ───────────────────────────────────────────

fn size_measure(b: &BBox, def: SizeDef) -> f64 {
    match def {
        SizeDef::PaddedSqrt => {
            let p = (b.width() + b.height()) / 2.0;
            ((b.width() + p) * (b.height() + p)).sqrt()
        }
        SizeDef::Area => b.area(),
    }
}

/// Scale/ratio change penalty per candidate cell; 0 for degenerate
/// candidates.
pub fn penalty_map(boxes: &[BBox], prev: &BBox, k: f64, cfg: &PostprocConfig) -> Vec<f64> {
    let r_prev = prev.width() / prev.height();
    let s_prev = size_measure(prev, cfg.size_def);
    boxes
        .iter()
        .map(|b| {
            if !(b.width() > 0.0 && b.height() > 0.0)
                || !b.width().is_finite()
                || !b.height().is_finite()
            {
                return 0.0;
            }
            let r = b.width() / b.height();
            let s = size_measure(b, cfg.size_def);
            let change = (r / r_prev).max(r_prev / r) * (s / s_prev).max(s_prev / s);
            match cfg.penalty_mode {
                PenaltyMode::Normalized => (-k * (change - 1.0)).exp(),
                PenaltyMode::Verbatim => (k * change).exp(),
            }
        })
        .collect()
}

/// The cosine window over the grid.
pub fn window_map(n: usize, mode: WindowMode) -> Vec<f64> {
    let mut w = vec![0.0; n * n];
    match mode {
        WindowMode::StandardHann => {
            let hann: Vec<f64> = (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos())
                .collect();
            for y in 0..n {
                for x in 0..n {
                    w[y * n + x] = hann[y] * hann[x];
                }
            }
        }
        WindowMode::Verbatim => {
            let c = (n - 1) as f64 / 2.0;
            let denom = ((n - 1) as f64 / 2.0 - 1.0).max(1e-9);
            for y in 0..n {
                for x in 0..n {
                    let dist = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
                    w[y * n + x] = 0.5 - 0.5 * (std::f64::consts::TAU * dist / denom).cos();
                }
            }
        }
    }
    w
}

/// `s~ = s_bar * (1 - omega) + window * omega`.
pub fn blend_window(s_bar: &[f64], window: &[f64], omega: f64) -> Vec<f64> {
    s_bar
        .iter()
        .zip(window)
        .map(|(s, w)| s * (1.0 - omega) + w * omega)
        .collect()
}

/// Per-frame tracking telemetry.
#[derive(Clone, Copy, Debug)]
pub struct FrameTelemetry {
    pub frame: usize,
    /// Max fused model score before penalty/window.
    pub max_score: f64,
    pub sel_row: usize,
    pub sel_col: usize,
    /// Penalty value at the selected cell.
    pub penalty_at_sel: f64,
    /// Blended score at the selected cell.
    pub stilde_at_sel: f64,
    /// Set when every blended score was zero and the previous box was
    /// kept.
    pub lost: bool,
    /// Winning pre-set anchor at the selected cell, frame coordinates
    /// (anchor heads only).
    pub sel_anchor_box: Option<BBox>,
}

#[derive(Clone, Debug)]
pub struct TrackerState {
    pub prev_box: BBox,
    pub frame_idx: usize,
}

/// Tracks one sequence; `boxes[0]` is the given first-frame box.
#[derive(Clone, Debug)]
pub struct TrackOutput {
    pub boxes: Vec<BBox>,
    pub telemetry: Vec<FrameTelemetry>,
    /// Blended score maps per tracked frame, when requested.
    pub score_maps: Option<Vec<Vec<f64>>>,
}

pub struct Tracker<H: HeadSource> {
    pub head: H,
    pub postproc: PostprocConfig,
    pub state: TrackerState,
}

impl<H: HeadSource> Tracker<H> {
    /// Computes template features from frame 0 and fixes them for the
    /// rest of the sequence.
    pub fn init(mut head: H, frame0: &Tensor<f32>, gt0: &BBox, postproc: PostprocConfig) -> Result<Self> {
        postproc.validate()?;
        if gt0.width() < 2.0 || gt0.height() < 2.0 {
            return Err(Error::Invalid {
                what: "initial box",
                detail: format!("{gt0:?} is below the 2 px minimum"),
            });
        }
        head.init_template(frame0, gt0)?;
        Ok(Tracker { head, postproc, state: TrackerState { prev_box: *gt0, frame_idx: 0 } })
    }

    /// Processes one frame and returns the predicted box.
    pub fn step(&mut self, frame: &Tensor<f32>) -> Result<(BBox, FrameTelemetry, Vec<f64>)> {
        self.state.frame_idx += 1;
        let frame_idx = self.state.frame_idx;
        let prev = self.state.prev_box;
        let spec = self.head.crop_spec();
        let grid = self.head.grid();
        let (cx, cy) = prev.center();
        let side = spec.search_side(&prev);
        let (patch, tf) = crop_square(frame, cx, cy, side, spec.search_size)?;
        let cand = self.head.candidates(&patch, frame_idx, &tf)?;
        let n = cand.n;

        // candidate boxes to frame coordinates
        let shift = grid.label_shift();
        let boxes_img: Vec<BBox> = cand
            .boxes
            .iter()
            .map(|b| tf.to_image_box(&b.translated(shift, shift)))
            .collect();

        let p = penalty_map(&boxes_img, &prev, self.postproc.k, &self.postproc);
        let s_bar: Vec<f64> = cand.score.iter().zip(&p).map(|(s, pv)| s * pv).collect();
        let w = window_map(n, self.postproc.window_mode);
        let s_tilde = blend_window(&s_bar, &w, self.postproc.omega);

        let max_model_score = cand.score.iter().copied().fold(0.0f64, f64::max);
        let mut best = 0usize;
        let mut best_v = f64::MIN;
        for (i, &v) in s_tilde.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        if best_v <= 0.0 {
            // nothing scored: keep the previous box, flag the frame
            let telemetry = FrameTelemetry {
                frame: frame_idx,
                max_score: max_model_score,
                sel_row: 0,
                sel_col: 0,
                penalty_at_sel: 0.0,
                stilde_at_sel: 0.0,
                lost: true,
                sel_anchor_box: None,
            };
            return Ok((prev, telemetry, s_tilde));
        }

        let b_curr = boxes_img[best];
        let alpha_eff = (s_bar[best] * self.postproc.alpha).clamp(0.0, 1.0);
        let new_w = ((1.0 - alpha_eff) * prev.width() + alpha_eff * b_curr.width()).max(2.0);
        let new_h = ((1.0 - alpha_eff) * prev.height() + alpha_eff * b_curr.height()).max(2.0);
        // the predicted center stays inside the search-patch footprint
        let (fx0, fy0) = tf.to_image_pt(0.0, 0.0);
        let (fx1, fy1) = tf.to_image_pt(spec.search_size as f64, spec.search_size as f64);
        let (bx, by) = b_curr.center();
        let pred = BBox::from_center(bx.clamp(fx0, fx1), by.clamp(fy0, fy1), new_w, new_h)?;
        self.state.prev_box = pred;
        let sel_anchor_box = cand.anchor_boxes.as_ref().map(|ab| {
            tf.to_image_box(&ab[best].translated(shift, shift))
        });
        let telemetry = FrameTelemetry {
            frame: frame_idx,
            max_score: max_model_score,
            sel_row: best / n,
            sel_col: best % n,
            penalty_at_sel: p[best],
            stilde_at_sel: best_v,
            lost: false,
            sel_anchor_box,
        };
        Ok((pred, telemetry, s_tilde))
    }
}

/// Runs a full sequence: frame 0 seeds the state, frames 1.. are
/// tracked in order.
pub fn track_sequence<H: HeadSource>(
    head: H,
    seq: &Sequence,
    postproc: PostprocConfig,
    keep_maps: bool,
) -> Result<TrackOutput> {
    if seq.frames.is_empty() {
        return Err(Error::Invalid { what: "sequence", detail: "no frames".into() });
    }
    let mut tracker = Tracker::init(head, &seq.frames[0], &seq.gt[0], postproc)?;
    let mut boxes = vec![seq.gt[0]];
    let mut telemetry = Vec::with_capacity(seq.frames.len().saturating_sub(1));
    let mut maps = keep_maps.then(Vec::new);
    for frame in &seq.frames[1..] {
        let (b, t, m) = tracker.step(frame)?;
        boxes.push(b);
        telemetry.push(t);
        if let Some(ms) = maps.as_mut() {
            ms.push(m);
        }
    }
    Ok(TrackOutput { boxes, telemetry, score_maps: maps })
}

/// `frame,x0,y0,x1,y1,max_score,sel_row,sel_col`; the init frame carries
/// the given box with sentinel selection `-1,-1`.
pub fn results_csv(out: &TrackOutput) -> String {
    let mut s = String::from("frame,x0,y0,x1,y1,max_score,sel_row,sel_col\n");
    for (i, b) in out.boxes.iter().enumerate() {
        if i == 0 {
            let _ = writeln!(s, "0,{:.6},{:.6},{:.6},{:.6},1.000000,-1,-1", b.x0, b.y0, b.x1, b.y1);
        } else {
            let t = &out.telemetry[i - 1];
            let _ = writeln!(
                s,
                "{i},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
                b.x0, b.y0, b.x1, b.y1, t.max_score, t.sel_row, t.sel_col
            );
        }
    }
    s
}

/// Reads back a results CSV: boxes plus per-frame max scores.
pub fn read_results(path: &Path) -> Result<(Vec<BBox>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut boxes = Vec::new();
    let mut scores = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            detail,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, got {}", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|e| err(format!("bad number {s}: {e}")))
        };
        boxes.push(BBox::new(num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?)?);
        scores.push(num(f[5])?);
    }
    Ok((boxes, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScoreGrid;
    use crate::rng::Rng;
    use crate::synth::{gen_sequence, Dynamics, WorldConfig};

    fn demo_grid() -> ScoreGrid {
        ScoreGrid { n: 5, stride: 8, origin: 47.5 }
    }

    #[test]
    fn window_hann_center_and_corners() {
        let w = window_map(5, WindowMode::StandardHann);
        assert!((w[12] - 1.0).abs() < 1e-12);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[24], 0.0);
        // verbatim form evaluates to 0 at the center (documented
        // discrepancy with its stated purpose)
        let wl = window_map(5, WindowMode::Verbatim);
        assert!(wl[12].abs() < 1e-12);
    }

    #[test]
    fn blend_identities() {
        let s = vec![0.3, 0.9, 0.1];
        let w = vec![1.0, 0.5, 0.0];
        assert_eq!(blend_window(&s, &w, 0.0), s);
        assert_eq!(blend_window(&s, &w, 1.0), w);
        // convex blend stays in [0,1]
        let mut r = Rng::new(1);
        for _ in 0..100 {
            let s: Vec<f64> = (0..9).map(|_| r.unit_f64()).collect();
            let w: Vec<f64> = (0..9).map(|_| r.unit_f64()).collect();
            let om = r.unit_f64();
            for v in blend_window(&s, &w, om) {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn fuse_score_identities() {
        let cls = vec![0.2, 0.8, 0.5];
        assert_eq!(fuse_scores(&cls, &[1.0, 1.0, 1.0]), cls);
        let fused = fuse_scores(&cls, &[0.5, 0.0, 1.0]);
        assert_eq!(fused[1], 0.0);
        for (f, c) in fused.iter().zip(&cls) {
            assert!(f <= c);
        }
    }

    #[test]
    fn penalty_no_change_values() {
        let prev = BBox::from_center(50.0, 50.0, 20.0, 10.0).unwrap();
        let cfg = PostprocConfig { k: 0.3, ..Default::default() };
        let p = penalty_map(&[prev], &prev, 0.3, &cfg);
        assert!((p[0] - 1.0).abs() < 1e-12);
        let lit = PostprocConfig { penalty_mode: PenaltyMode::Verbatim, ..cfg };
        let p = penalty_map(&[prev], &prev, 0.3, &lit);
        assert!((p[0] - (0.3f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn penalty_decreases_for_scale_change() {
        let prev = BBox::from_center(50.0, 50.0, 20.0, 20.0).unwrap();
        let double = BBox::from_center(50.0, 50.0, 28.3, 28.3).unwrap();
        let cfg = PostprocConfig::default();
        let p = penalty_map(&[double], &prev, 0.1, &cfg);
        assert!(p[0] < 1.0);
        // area size definition is selectable
        let area_cfg = PostprocConfig { size_def: SizeDef::Area, ..cfg };
        let pa = penalty_map(&[double], &prev, 0.1, &area_cfg);
        assert!(pa[0] < p[0], "area measure penalizes doubling harder");
    }

    #[test]
    fn argmax_invariant_under_uniform_scaling() {
        let mut r = Rng::new(3);
        for _ in 0..50 {
            let s: Vec<f64> = (0..25).map(|_| r.unit_f64()).collect();
            let arg = |v: &[f64]| {
                v.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0
            };
            let scaled: Vec<f64> = s.iter().map(|v| v * 0.37).collect();
            assert_eq!(arg(&s), arg(&scaled));
        }
    }

    fn quiet_world(seed: u64, translation: f64) -> Sequence {
        let cfg = WorldConfig {
            length: 20,
            dynamics: Dynamics {
                translation_sigma: translation,
                log_scale_sigma: 0.0,
                log_ratio_sigma: 0.0,
                distractors: 0,
            },
            ..Default::default()
        };
        gen_sequence(&cfg, seed, 0).unwrap()
    }

    #[test]
    fn oracle_stub_reproduces_stationary_gt() {
        let seq = quiet_world(5, 0.0);
        let stub = OracleStub::for_sequence(&seq, demo_grid(), CropSpec::default());
        let pp = PostprocConfig { k: 0.0, omega: 0.0, ..Default::default() };
        let out = track_sequence(stub, &seq, pp, false).unwrap();
        for (pred, gt) in out.boxes.iter().zip(&seq.gt) {
            assert!((pred.x0 - gt.x0).abs() <= 1.0, "{pred:?} vs {gt:?}");
            assert!((pred.y1 - gt.y1).abs() <= 1.0);
        }
    }

    #[test]
    fn oracle_stub_tracks_moving_target_without_window() {
        let seq = quiet_world(6, 2.0);
        let stub = OracleStub::for_sequence(&seq, demo_grid(), CropSpec::default());
        let pp = PostprocConfig { k: 0.0, omega: 0.0, ..Default::default() };
        let out = track_sequence(stub, &seq, pp, false).unwrap();
        for (pred, gt) in out.boxes.iter().zip(&seq.gt).skip(1) {
            let (pc, gc) = (pred.center(), gt.center());
            assert!((pc.0 - gc.0).abs() <= 1.0 && (pc.1 - gc.1).abs() <= 1.0);
        }
    }

    #[test]
    fn heavy_window_induces_lag_on_moving_target() {
        // motion must be fast enough that the target leaves the center
        // cell between frames, otherwise the window changes nothing
        let seq = quiet_world(7, 6.0);
        let err_with_omega = |omega: f64| -> f64 {
            let stub = OracleStub::for_sequence(&seq, demo_grid(), CropSpec::default());
            let pp = PostprocConfig { k: 0.0, omega, ..Default::default() };
            let out = track_sequence(stub, &seq, pp, false).unwrap();
            out.boxes
                .iter()
                .zip(&seq.gt)
                .skip(1)
                .map(|(p, g)| {
                    let (pc, gc) = (p.center(), g.center());
                    ((pc.0 - gc.0).powi(2) + (pc.1 - gc.1).powi(2)).sqrt()
                })
                .sum::<f64>()
        };
        let low = err_with_omega(0.0);
        let high = err_with_omega(0.9);
        assert!(high > low + 1.0, "window must induce lag: {low} vs {high}");
    }

    #[test]
    fn alpha_zero_keeps_previous_size() {
        let seq = quiet_world(8, 1.5);
        let stub = OracleStub::for_sequence(&seq, demo_grid(), CropSpec::default());
        let pp = PostprocConfig { k: 0.0, omega: 0.0, alpha: 0.0, ..Default::default() };
        let out = track_sequence(stub, &seq, pp, false).unwrap();
        let (w0, h0) = (seq.gt[0].width(), seq.gt[0].height());
        for b in &out.boxes {
            assert!((b.width() - w0).abs() < 1e-9);
            assert!((b.height() - h0).abs() < 1e-9);
        }
    }

    #[test]
    fn full_score_and_alpha_half_average_sizes() {
        // one synthetic step: s_bar at selection = 1, alpha = 0.5 ->
        // new size is the arithmetic mean
        let prev = BBox::from_center(60.0, 60.0, 20.0, 20.0).unwrap();
        let curr = BBox::from_center(60.0, 60.0, 30.0, 10.0).unwrap();
        let alpha_eff: f64 = 1.0 * 0.5;
        let w = (1.0 - alpha_eff) * prev.width() + alpha_eff * curr.width();
        let h = (1.0 - alpha_eff) * prev.height() + alpha_eff * curr.height();
        assert_eq!(w, 25.0);
        assert_eq!(h, 15.0);
    }

    #[test]
    fn results_csv_roundtrip() {
        let seq = quiet_world(9, 1.0);
        let stub = OracleStub::for_sequence(&seq, demo_grid(), CropSpec::default());
        let out = track_sequence(stub, &seq, PostprocConfig::default(), false).unwrap();
        let csv = results_csv(&out);
        let dir = std::env::temp_dir().join("sfpp_track_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("results.csv");
        std::fs::write(&path, &csv).unwrap();
        let (boxes, scores) = read_results(&path).unwrap();
        assert_eq!(boxes.len(), out.boxes.len());
        assert_eq!(scores.len(), out.boxes.len());
        for (a, b) in boxes.iter().zip(&out.boxes) {
            assert!((a.x0 - b.x0).abs() < 1e-5);
        }
    }

    #[test]
    fn predicted_center_stays_in_search_footprint() {
        // a head emitting wild distances cannot drag the center outside
        // the search window
        struct WildHead;
        impl HeadSource for WildHead {
            fn grid(&self) -> ScoreGrid {
                demo_grid()
            }
            fn crop_spec(&self) -> CropSpec {
                CropSpec::default()
            }
            fn init_template(&mut self, _f: &Tensor<f32>, _g: &BBox) -> crate::Result<()> {
                Ok(())
            }
            fn candidates(
                &self,
                _p: &Tensor<f32>,
                _i: usize,
                _tf: &CropTransform,
            ) -> crate::Result<CellCandidates> {
                let n = 5;
                let boxes = (0..25)
                    .map(|i| {
                        crate::codec::decode_box(i % n, i / n, (900.0, 2.0, 2.0, 900.0), 8)
                    })
                    .collect();
                Ok(CellCandidates { n, score: vec![1.0; 25], boxes, anchor_boxes: None })
            }
        }
        let seq = quiet_world(12, 1.0);
        let pp = PostprocConfig { k: 0.0, omega: 0.0, ..Default::default() };
        let mut tracker = Tracker::init(WildHead, &seq.frames[0], &seq.gt[0], pp).unwrap();
        let spec = CropSpec::default();
        for frame in &seq.frames[1..4] {
            let prev = tracker.state.prev_box;
            let side = spec.search_side(&prev);
            let (cx, cy) = prev.center();
            let (pred, _, _) = tracker.step(frame).unwrap();
            let (px, py) = pred.center();
            assert!(px >= cx - side / 2.0 - 1e-9 && px <= cx + side / 2.0 + 1e-9);
            assert!(py >= cy - side / 2.0 - 1e-9 && py <= cy + side / 2.0 + 1e-9);
        }
    }

    #[test]
    fn tracker_rejects_degenerate_init_box() {
        let seq = quiet_world(10, 1.0);
        let stub = OracleStub::for_sequence(&seq, demo_grid(), CropSpec::default());
        let tiny = BBox::new(10.0, 10.0, 11.0, 11.5).unwrap();
        assert!(Tracker::init(stub, &seq.frames[0], &tiny, PostprocConfig::default()).is_err());
    }

    #[test]
    fn deterministic_tracking() {
        let seq = quiet_world(11, 2.0);
        let run = || {
            let stub = OracleStub::for_sequence(&seq, demo_grid(), CropSpec::default());
            results_csv(&track_sequence(stub, &seq, PostprocConfig::default(), false).unwrap())
        };
        assert_eq!(run(), run());
    }
}

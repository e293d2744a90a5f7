//! Anchor-based head variant for the ambiguity ablation.
//!
//! Same backbone, adjustment layers, correlation, and towers as the
//! per-pixel model; only the 1x1 output heads change: K classification
//! channels (one per anchor) and 4K offset-regression channels. At
//! selection time the per-cell score is the max over anchors and the
//! winning anchor's decoded box becomes the cell's candidate, so the
//! shared post-processing sees the same interface as the per-pixel
//! tracker. There is no quality branch.
//!
//! Training: focal loss on all anchor logits (positives by IoU against
//! the anchor box, best anchor forced positive) plus smooth-L1 on the
//! standard (dx, dy, dw, dh) offsets at positive anchors.

use crate::codec::{iou, BBox, QualityMode};
use crate::eval::ScoreHistograms;
use crate::loss::{LossConfig, LossReport};
use crate::model::{forward_pair, init_model, map_feature_to_image, ModelConfig, ScoreGrid, SiamModel, TemplateFeats};
use crate::synth::{CropSpec, CropTransform};
use crate::tape::{sigmoid, Tape, ValId};
use crate::tensor::Tensor;
use crate::track::{CellCandidates, HeadSource};
use crate::{Error, Result};
use std::collections::BTreeMap;

/// Pre-set anchor shapes, identical at every cell.
#[derive(Clone, Debug)]
pub struct AnchorConfig {
    /// Aspect ratios (w / h).
    pub ratios: Vec<f64>,
    /// Anchor side scales in label-frame pixels (area = scale^2).
    pub scales: Vec<f64>,
    /// IoU threshold for positive assignment.
    pub pos_iou: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        // one scale near the canonical object size in the search patch
        AnchorConfig { ratios: vec![0.5, 1.0, 2.0], scales: vec![32.0], pos_iou: 0.5 }
    }
}

impl AnchorConfig {
    pub fn k(&self) -> usize {
        self.ratios.len() * self.scales.len()
    }

    /// (w, h) of anchor index `a`.
    pub fn shape(&self, a: usize) -> (f64, f64) {
        let ratio = self.ratios[a % self.ratios.len()];
        let scale = self.scales[a / self.ratios.len()];
        (scale * ratio.sqrt(), scale / ratio.sqrt())
    }

    /// Anchor box of index `a` at grid cell `(x, y)`, label frame.
    pub fn anchor_box(&self, a: usize, x: usize, y: usize, stride: usize) -> BBox {
        let (px, py) = map_feature_to_image(x, y, stride);
        let (w, h) = self.shape(a);
        BBox {
            x0: px as f64 - w / 2.0,
            y0: py as f64 - h / 2.0,
            x1: px as f64 + w / 2.0,
            y1: py as f64 + h / 2.0,
        }
    }
}

/// Standard anchor-offset decode: `cx = ax + dx*aw`, `w = aw*exp(dw)`.
pub fn anchor_decode(anchor: &BBox, offsets: (f64, f64, f64, f64)) -> Result<BBox> {
    let (dx, dy, dw, dh) = offsets;
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = acx + dx * aw;
    let cy = acy + dy * ah;
    let w = aw * dw.exp();
    let h = ah * dh.exp();
    if !(w.is_finite() && h.is_finite() && cx.is_finite() && cy.is_finite()) {
        return Err(Error::NonFinite {
            op: "anchor_decode",
            detail: format!("offsets {offsets:?} overflow"),
        });
    }
    BBox::from_center(cx, cy, w, h)
}

/// Inverse of [`anchor_decode`].
pub fn encode_offsets(anchor: &BBox, target: &BBox) -> (f64, f64, f64, f64) {
    let (acx, acy) = anchor.center();
    let (tcx, tcy) = target.center();
    (
        (tcx - acx) / anchor.width(),
        (tcy - acy) / anchor.height(),
        (target.width() / anchor.width()).ln(),
        (target.height() / anchor.height()).ln(),
    )
}

/// Per-cell max over anchor scores plus the winning anchor index.
pub fn maxout_score(per_anchor: &[f64], k: usize, cells: usize) -> (Vec<f64>, Vec<usize>) {
    assert_eq!(per_anchor.len(), k * cells, "score layout mismatch");
    let mut best = vec![f64::MIN; cells];
    let mut idx = vec![0usize; cells];
    for a in 0..k {
        for c in 0..cells {
            let v = per_anchor[a * cells + c];
            if v > best[c] {
                best[c] = v;
                idx[c] = a;
            }
        }
    }
    (best, idx)
}

/// Builds an anchor-head model sharing the per-pixel trunk layout.
pub fn init_anchor_model(base: &ModelConfig, anchors: &AnchorConfig, seed: u64) -> Result<SiamModel> {
    let k = anchors.k();
    if k == 0 {
        return Err(Error::Invalid { what: "anchors", detail: "empty anchor set".into() });
    }
    let cfg = ModelConfig {
        cls_out_channels: k,
        reg_out_channels: 4 * k,
        quality_head: false,
        quality_mode: QualityMode::Off,
        ..base.clone()
    };
    init_model(&cfg, seed)
}

/// Anchor label assignment over the grid for one ground-truth box
/// (label frame). Positives have anchor IoU >= `pos_iou`; if none
/// qualifies, the single best anchor-cell is forced positive.
pub struct AnchorTargets {
    pub k: usize,
    pub n: usize,
    /// `[k * n * n]` 0/1 labels, anchor-major.
    pub cls_star: Vec<f64>,
    /// `[4k * n * n]` offset targets (dx, dy, dw, dh per anchor).
    pub offsets: Vec<f64>,
    /// Elementwise mask over the offset layout.
    pub offset_mask: Vec<bool>,
    /// Per-logit positive mask (same layout as `cls_star`).
    pub pos_mask: Vec<bool>,
    pub n_pos: usize,
}

pub fn assign_anchors(
    gt: Option<&BBox>,
    anchors: &AnchorConfig,
    grid: &ScoreGrid,
) -> AnchorTargets {
    let k = anchors.k();
    let n = grid.n;
    let cells = n * n;
    let mut t = AnchorTargets {
        k,
        n,
        cls_star: vec![0.0; k * cells],
        offsets: vec![0.0; 4 * k * cells],
        offset_mask: vec![false; 4 * k * cells],
        pos_mask: vec![false; k * cells],
        n_pos: 0,
    };
    let Some(gt) = gt else { return t };
    let mut best: (usize, f64) = (0, -1.0);
    for a in 0..k {
        for y in 0..n {
            for x in 0..n {
                let idx = a * cells + y * n + x;
                let ab = anchors.anchor_box(a, x, y, grid.stride);
                let v = iou(&ab, gt);
                if v > best.1 {
                    best = (idx, v);
                }
                if v >= anchors.pos_iou {
                    t.pos_mask[idx] = true;
                }
            }
        }
    }
    if t.pos_mask.iter().all(|&m| !m) && best.1 > 0.05 {
        t.pos_mask[best.0] = true;
    }
    for a in 0..k {
        for y in 0..n {
            for x in 0..n {
                let idx = a * cells + y * n + x;
                if !t.pos_mask[idx] {
                    continue;
                }
                t.cls_star[idx] = 1.0;
                t.n_pos += 1;
                let ab = anchors.anchor_box(a, x, y, grid.stride);
                let (dx, dy, dw, dh) = encode_offsets(&ab, gt);
                let cell = y * n + x;
                for (c, v) in [dx, dy, dw, dh].into_iter().enumerate() {
                    let o = (4 * a + c) * cells + cell;
                    t.offsets[o] = v;
                    t.offset_mask[o] = true;
                }
            }
        }
    }
    t
}

/// Training objective of the anchor variant, pluggable into
/// [`crate::train::train_with_objective`].
#[allow(clippy::type_complexity)]
pub fn anchor_objective(
    anchors: AnchorConfig,
) -> impl Fn(
    &mut Tape<f32>,
    &BTreeMap<String, ValId>,
    &ModelConfig,
    &crate::synth::TrainingPair,
    &LossConfig,
) -> Result<(ValId, LossReport)> {
    move |tape, ids, cfg, pair, loss_cfg| {
        let z = tape.input(pair.template.clone());
        let x = tape.input(pair.search.clone());
        let head = forward_pair(tape, ids, cfg, z, x)?;
        let grid = cfg.score_grid()?;
        let gt_label = pair.gt_in_search.as_ref().map(|b| {
            let shift = grid.label_shift();
            b.translated(-shift, -shift)
        });
        let targets = assign_anchors(gt_label.as_ref(), &anchors, &grid);
        let n_pos_eff = targets.n_pos.max(loss_cfg.n_pos_floor) as f32;

        let stars: Vec<f32> = targets.cls_star.iter().map(|&v| v as f32).collect();
        let focal = tape.focal_loss(
            head.cls,
            &stars,
            loss_cfg.focal_gamma as f32,
            loss_cfg.focal_alpha as f32,
        )?;
        let cls_term = tape.scale(focal, 1.0 / n_pos_eff)?;
        let mut report = LossReport {
            n_pos: targets.n_pos,
            cls_term: tape.value(cls_term).item()? as f64,
            ..Default::default()
        };
        let mut total = cls_term;
        if targets.n_pos > 0 {
            let off_t: Vec<f32> = targets.offsets.iter().map(|&v| v as f32).collect();
            let sl1 = tape.smooth_l1_masked(head.reg_raw, &off_t, &targets.offset_mask)?;
            let reg_term = tape.scale(sl1, 1.0 / n_pos_eff)?;
            report.reg_term = tape.value(reg_term).item()? as f64;
            let weighted = tape.scale(reg_term, loss_cfg.lambda_weight as f32)?;
            total = tape.add(total, weighted)?;
        }
        report.total = tape.value(total).item()? as f64;
        Ok((total, report))
    }
}

/// The anchor model as a tracking head: maxout over anchor scores,
/// winning anchor decoded per cell. `CellCandidates.anchor_boxes`
/// carries the winning anchor shapes for the IoU-bias analysis.
pub struct AnchorHead {
    pub model: SiamModel,
    pub anchors: AnchorConfig,
    feats: Option<TemplateFeats<f32>>,
}

impl AnchorHead {
    pub fn new(model: SiamModel, anchors: AnchorConfig) -> Result<AnchorHead> {
        if model.cfg.cls_out_channels != anchors.k() {
            return Err(Error::Invalid {
                what: "anchor head",
                detail: format!(
                    "model has {} score channels, anchor set has {}",
                    model.cfg.cls_out_channels,
                    anchors.k()
                ),
            });
        }
        Ok(AnchorHead { model, anchors, feats: None })
    }
}

impl HeadSource for AnchorHead {
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
        let out = self.model.forward_infer(feats, patch)?;
        let k = self.anchors.k();
        let n = out.cls.shape()[1];
        let cells = n * n;
        let probs: Vec<f64> = out.cls.data().iter().map(|&v| sigmoid(v as f64)).collect();
        let (score, winner) = maxout_score(&probs, k, cells);
        let grid = self.grid();
        let raw = out.reg_raw.data();
        let mut boxes = Vec::with_capacity(cells);
        let mut anchor_boxes = Vec::with_capacity(cells);
        for y in 0..n {
            for x in 0..n {
                let cell = y * n + x;
                let a = winner[cell];
                let ab = self.anchors.anchor_box(a, x, y, grid.stride);
                let off = (
                    raw[(4 * a) * cells + cell] as f64,
                    raw[(4 * a + 1) * cells + cell] as f64,
                    raw[(4 * a + 2) * cells + cell] as f64,
                    raw[(4 * a + 3) * cells + cell] as f64,
                );
                boxes.push(anchor_decode(&ab, off)?);
                anchor_boxes.push(ab);
            }
        }
        Ok(CellCandidates { n, score, boxes, anchor_boxes: Some(anchor_boxes) })
    }
}

/// Paired IoU histograms: predicted-vs-gt and winning-anchor-vs-gt,
/// split by tracking outcome.
#[derive(Clone, Debug)]
pub struct AnchorIouReport {
    pub pred: ScoreHistograms,
    pub anchor: ScoreHistograms,
    pub mean_pred_iou: f64,
    pub mean_anchor_iou: f64,
}

/// `pred[i]`, `anchor[i]`, `gt[i]` describe scored frame `i` (first
/// frame excluded upstream). Success/failure follows the IoU == 0 rule
/// on the predicted box.
pub fn anchor_iou_analysis(
    pred: &[BBox],
    winning_anchor: &[BBox],
    gt: &[BBox],
) -> Result<AnchorIouReport> {
    if pred.len() != gt.len() || winning_anchor.len() != gt.len() {
        return Err(Error::Invalid {
            what: "anchor analysis input",
            detail: format!("{} / {} / {} frames", pred.len(), winning_anchor.len(), gt.len()),
        });
    }
    let mut pred_succ = Vec::new();
    let mut pred_fail = Vec::new();
    let mut anch_succ = Vec::new();
    let mut anch_fail = Vec::new();
    let mut sum_p = 0.0;
    let mut sum_a = 0.0;
    for i in 0..pred.len() {
        let ip = iou(&pred[i], &gt[i]);
        let ia = iou(&winning_anchor[i], &gt[i]);
        sum_p += ip;
        sum_a += ia;
        if ip == 0.0 {
            pred_fail.push(ip);
            anch_fail.push(ia);
        } else {
            pred_succ.push(ip);
            anch_succ.push(ia);
        }
    }
    let len = pred.len().max(1) as f64;
    Ok(AnchorIouReport {
        pred: crate::eval::score_histograms(&pred_succ, &pred_fail),
        anchor: crate::eval::score_histograms(&anch_succ, &anch_fail),
        mean_pred_iou: sum_p / len,
        mean_anchor_iou: sum_a / len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn anchor_decode_identities() {
        let a = BBox::from_center(20.0, 20.0, 16.0, 8.0).unwrap();
        let same = anchor_decode(&a, (0.0, 0.0, 0.0, 0.0)).unwrap();
        assert!((same.x0 - a.x0).abs() < 1e-12);
        assert!((same.y1 - a.y1).abs() < 1e-12);
        // dw = ln 2 doubles the width
        let wide = anchor_decode(&a, (0.0, 0.0, (2.0f64).ln(), 0.0)).unwrap();
        assert!((wide.width() - 32.0).abs() < 1e-9);
        // dx = 1 shifts the center by exactly the anchor width
        let moved = anchor_decode(&a, (1.0, 0.0, 0.0, 0.0)).unwrap();
        assert!((moved.center().0 - 36.0).abs() < 1e-9);
        assert!(anchor_decode(&a, (0.0, 0.0, 1e4, 0.0)).is_err());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let mut r = Rng::new(1);
        for _ in 0..200 {
            let a = BBox::from_center(
                r.uniform(10.0, 40.0),
                r.uniform(10.0, 40.0),
                r.uniform(8.0, 40.0),
                r.uniform(8.0, 40.0),
            )
            .unwrap();
            let t = BBox::from_center(
                r.uniform(10.0, 40.0),
                r.uniform(10.0, 40.0),
                r.uniform(8.0, 40.0),
                r.uniform(8.0, 40.0),
            )
            .unwrap();
            let back = anchor_decode(&a, encode_offsets(&a, &t)).unwrap();
            assert!((back.x0 - t.x0).abs() <= 1e-6);
            assert!((back.y0 - t.y0).abs() <= 1e-6);
            assert!((back.x1 - t.x1).abs() <= 1e-6);
            assert!((back.y1 - t.y1).abs() <= 1e-6);
        }
    }

    #[test]
    fn maxout_basics() {
        // K = 1 is the identity
        let (s, idx) = maxout_score(&[0.3, 0.7], 1, 2);
        assert_eq!(s, vec![0.3, 0.7]);
        assert_eq!(idx, vec![0, 0]);
        // picks the max and its index
        let (s, idx) = maxout_score(&[0.2, 0.1, 0.9, 0.3, 0.1, 0.2], 3, 2);
        assert_eq!(s, vec![0.9, 0.3]);
        assert_eq!(idx, vec![1, 1]);
        // maxout dominates every input map
        let scores = [0.2, 0.5, 0.4, 0.1];
        let (m, _) = maxout_score(&scores, 2, 2);
        for a in 0..2 {
            for c in 0..2 {
                assert!(m[c] >= scores[a * 2 + c]);
            }
        }
    }

    #[test]
    fn anchor_shapes_have_equal_area() {
        let cfg = AnchorConfig::default();
        for a in 0..cfg.k() {
            let (w, h) = cfg.shape(a);
            assert!((w * h - 32.0 * 32.0).abs() < 1e-6);
        }
        assert_eq!(cfg.k(), 3);
    }

    #[test]
    fn assignment_marks_overlapping_anchors() {
        let grid = ScoreGrid { n: 5, stride: 8, origin: 47.5 };
        let anchors = AnchorConfig::default();
        // a square target dead-center on the grid
        let gt = BBox::from_center(20.0, 20.0, 32.0, 32.0).unwrap();
        let t = assign_anchors(Some(&gt), &anchors, &grid);
        assert!(t.n_pos > 0);
        // the ratio-1 anchor at the center cell must be positive
        let cells = 25;
        let center_idx = cells + 2 * 5 + 2; // anchor 1 (ratio 1), cell (2,2)
        assert!(t.pos_mask[center_idx], "center square anchor should match");
        // offsets at positives are finite and masked consistently
        for (i, &m) in t.offset_mask.iter().enumerate() {
            if m {
                assert!(t.offsets[i].is_finite());
            } else {
                assert_eq!(t.offsets[i], 0.0);
            }
        }
        // no ground truth -> all negative
        let none = assign_anchors(None, &anchors, &grid);
        assert_eq!(none.n_pos, 0);
    }

    #[test]
    fn off_grid_target_forces_best_anchor_when_overlapping() {
        let grid = ScoreGrid { n: 5, stride: 8, origin: 47.5 };
        let anchors = AnchorConfig::default();
        // small box between cells: below pos_iou everywhere
        let gt = BBox::from_center(14.0, 14.0, 10.0, 10.0).unwrap();
        let t = assign_anchors(Some(&gt), &anchors, &grid);
        assert_eq!(t.n_pos, 1, "exactly the best anchor is forced positive");
    }

    #[test]
    fn analysis_histograms_coincide_when_pred_equals_anchor() {
        let gt: Vec<BBox> =
            (0..10).map(|i| BBox::from_center(50.0 + i as f64, 50.0, 20.0, 20.0).unwrap()).collect();
        let anchors: Vec<BBox> =
            (0..10).map(|i| BBox::from_center(49.0 + i as f64, 50.0, 22.0, 18.0).unwrap()).collect();
        let rep = anchor_iou_analysis(&anchors, &anchors, &gt).unwrap();
        assert_eq!(rep.pred.count_success, rep.anchor.count_success);
        assert!((rep.mean_pred_iou - rep.mean_anchor_iou).abs() < 1e-12);
        // pred == gt concentrates the histogram at 1
        let perfect = anchor_iou_analysis(&gt, &anchors, &gt).unwrap();
        assert_eq!(perfect.pred.count_success[19], 10);
        assert!((perfect.mean_pred_iou - 1.0).abs() < 1e-12);
    }
}

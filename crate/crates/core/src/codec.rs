//! Ground-truth coding for the per-pixel heads.
//!
//! A score-map cell (x, y) owns the image pixel
//! `(floor(s/2) + x*s, floor(s/2) + y*s)`. Cells whose pixel falls inside
//! the ground-truth box (edges inclusive) are positives and carry the
//! four distances to the box sides plus a quality target; everything
//! else is masked out. Decoding inverts the distances back to a box.

use crate::model::map_feature_to_image;
use crate::{Error, Result};

/// Axis-aligned box, `x1 > x0`, `y1 > y0`, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) || !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
            return Err(Error::Invalid {
                what: "bbox",
                detail: format!("degenerate box ({x0}, {y0}, {x1}, {y1})"),
            });
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x0 && px <= self.x1 && py >= self.y0 && py <= self.y1
    }

    /// Shifted copy (positive offsets move right/down).
    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox { x0: self.x0 + dx, y0: self.y0 + dy, x1: self.x1 + dx, y1: self.y1 + dy }
    }
}

/// Which quality target the quality head learns, or none at all
/// (selection then uses raw classification).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QualityMode {
    /// Static center-prior target: `sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b))`.
    Pss,
    /// IoU between the currently predicted box and ground truth,
    /// recomputed from the live prediction at every loss evaluation.
    Iou,
    /// No quality branch in the objective or the score fusion.
    Off,
}

impl QualityMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pss" => Ok(QualityMode::Pss),
            "iou" => Ok(QualityMode::Iou),
            "none" | "off" => Ok(QualityMode::Off),
            other => Err(Error::Invalid {
                what: "quality_mode",
                detail: format!("expected pss|iou|none, got {other}"),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            QualityMode::Pss => "pss",
            QualityMode::Iou => "iou",
            QualityMode::Off => "none",
        }
    }
}

/// Per-cell training targets over an n x n grid.
///
/// Layouts are row-major; `reg_star` is `[4, n, n]` flattened as
/// (l, t, r, b) channel planes. Values are stored in f64 and converted
/// at the loss boundary.
#[derive(Clone, Debug)]
pub struct TargetMaps {
    pub n: usize,
    /// 1.0 at positive cells, 0.0 elsewhere.
    pub cls_star: Vec<f64>,
    /// Quality target at positives (PSS or self-IoU), 0 at negatives.
    pub quality_star: Vec<f64>,
    /// Distance targets at positives, 0 at negatives.
    pub reg_star: Vec<f64>,
    /// Positive mask, one entry per cell.
    pub pos_mask: Vec<bool>,
    pub n_pos: usize,
}

impl TargetMaps {
    /// All-negative maps (negative pairs, or gt outside grid coverage).
    pub fn all_negative(n: usize) -> TargetMaps {
        TargetMaps {
            n,
            cls_star: vec![0.0; n * n],
            quality_star: vec![0.0; n * n],
            reg_star: vec![0.0; 4 * n * n],
            pos_mask: vec![false; n * n],
            n_pos: 0,
        }
    }
}

/// Distances below this are lifted before the PSS ratio so that a pixel
/// exactly on a box edge stays a valid positive.
pub const EDGE_FLOOR: f64 = 1e-6;

/// Prior spatial score of a cell from its four side distances.
pub fn pss(l: f64, t: f64, r: f64, b: f64) -> Result<f64> {
    if l <= 0.0 || t <= 0.0 || r <= 0.0 || b <= 0.0 {
        return Err(Error::Invalid {
            what: "pss input",
            detail: format!("distances must be positive, got ({l}, {t}, {r}, {b})"),
        });
    }
    Ok(((l.min(r) / l.max(r)) * (t.min(b) / t.max(b))).sqrt())
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Builds the per-cell label, quality, and regression targets for a
/// ground-truth box given grid size `n` and stride `s`.
///
/// A box entirely outside the grid coverage yields `n_pos == 0`, which
/// is not an error: the objective treats it like a negative pair.
pub fn assign_and_encode(gt: &BBox, n: usize, s: usize, mode: QualityMode) -> TargetMaps {
    let mut maps = TargetMaps::all_negative(n);
    for y in 0..n {
        for x in 0..n {
            let (px, py) = map_feature_to_image(x, y, s);
            let (px, py) = (px as f64, py as f64);
            if !gt.contains(px, py) {
                continue;
            }
            let cell = y * n + x;
            let l = (px - gt.x0).max(EDGE_FLOOR);
            let t = (py - gt.y0).max(EDGE_FLOOR);
            let r = (gt.x1 - px).max(EDGE_FLOOR);
            let b = (gt.y1 - py).max(EDGE_FLOOR);
            maps.cls_star[cell] = 1.0;
            maps.pos_mask[cell] = true;
            maps.n_pos += 1;
            let nn = n * n;
            maps.reg_star[cell] = l;
            maps.reg_star[nn + cell] = t;
            maps.reg_star[2 * nn + cell] = r;
            maps.reg_star[3 * nn + cell] = b;
            maps.quality_star[cell] = match mode {
                QualityMode::Pss => pss(l, t, r, b).expect("floored distances are positive"),
                // Self-IoU of the target box with itself; the live value
                // is recomputed against the prediction at loss time.
                QualityMode::Iou => 1.0,
                QualityMode::Off => 0.0,
            };
        }
    }
    maps
}

/// Inverts the distance coding at one cell back to a box.
pub fn decode_box(x: usize, y: usize, distances: (f64, f64, f64, f64), s: usize) -> BBox {
    let (px, py) = map_feature_to_image(x, y, s);
    let (px, py) = (px as f64, py as f64);
    let (l, t, r, b) = distances;
    BBox { x0: px - l, y0: py - t, x1: px + r, y1: py + b }
}

//! The training objective.
//!
//! Focal loss over every cell for classification, BCE over positive
//! cells for the quality head, IoU loss over positive cells for the box
//! regression. Each term is divided by the positive count (floored for
//! negative pairs) and the quality/regression side carries the lambda
//! weight:
//!
//! `total = cls + lambda * (quality + reg)`, every term >= 0.
//!
//! In IoU quality mode the quality target is recomputed from the live
//! prediction at every evaluation (treated as a constant w.r.t. the
//! gradient); PSS targets are static per frame.

use crate::codec::{QualityMode, TargetMaps};
use crate::model::{decode_distances, TapeHead};
use crate::tape::{Tape, ValId};
use crate::tensor::Elem;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    /// Weight of the quality and regression terms.
    pub lambda_weight: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// Lower bound on the positive-count normalizer (negative pairs
    /// would otherwise divide by zero).
    pub n_pos_floor: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_weight: 1.0, focal_gamma: 2.0, focal_alpha: 0.25, n_pos_floor: 1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.focal_gamma < 0.0
            || !(0.0..1.0).contains(&self.focal_alpha)
            || self.focal_alpha <= 0.0
            || self.lambda_weight < 0.0
            || self.n_pos_floor == 0
        {
            return Err(Error::Invalid {
                what: "loss config",
                detail: format!("{self:?}"),
            });
        }
        Ok(())
    }
}

/// Scalar summary of one objective evaluation. The stored terms are
/// already normalized by the (floored) positive count;
/// `total = cls_term + lambda * quality_term + lambda * reg_term`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossReport {
    pub total: f64,
    pub cls_term: f64,
    pub quality_term: f64,
    pub reg_term: f64,
    pub n_pos: usize,
    /// Positive cells whose IoU fell below the 1e-6 clamp.
    pub clamped_cells: usize,
}

fn to_e<E: Elem>(v: &[f64]) -> Vec<E> {
    v.iter().map(|&x| E::from_f64(x)).collect()
}

/// Distance-form IoU between prediction and target at one cell.
fn cell_iou(dist: &[f64], dist_star: &[f64], cells: usize, i: usize) -> f64 {
    let (l, t, r, b) = (dist[i], dist[cells + i], dist[2 * cells + i], dist[3 * cells + i]);
    let (ls, ts, rs, bs) = (
        dist_star[i],
        dist_star[cells + i],
        dist_star[2 * cells + i],
        dist_star[3 * cells + i],
    );
    let inter = (l.min(ls) + r.min(rs)) * (t.min(ts) + b.min(bs));
    let union = (l + r) * (t + b) + (ls + rs) * (ts + bs) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Builds the full objective on the tape and reports its terms.
///
/// `head.reg_raw` is decoded to distances internally (`stride * exp`).
/// With no positive cells only the classification term remains; the
/// other two are exactly zero.
pub fn total_loss<E: Elem>(
    tape: &mut Tape<E>,
    head: &TapeHead,
    targets: &TargetMaps,
    mode: QualityMode,
    stride: usize,
    cfg: &LossConfig,
) -> Result<(ValId, LossReport)> {
    cfg.validate()?;
    let cells = targets.n * targets.n;
    if tape.value(head.cls).numel() != cells * tape.shape(head.cls)[0] {
        return Err(Error::Shape {
            op: "total_loss",
            detail: format!(
                "head grid {:?} vs target grid {}x{}",
                tape.shape(head.cls),
                targets.n,
                targets.n
            ),
        });
    }
    let n_pos_eff = targets.n_pos.max(cfg.n_pos_floor) as f64;
    let inv = E::from_f64(1.0 / n_pos_eff);

    let focal_sum = tape.focal_loss(
        head.cls,
        &to_e::<E>(&targets.cls_star),
        E::from_f64(cfg.focal_gamma),
        E::from_f64(cfg.focal_alpha),
    )?;
    let cls_term = tape.scale(focal_sum, inv)?;

    let mut report = LossReport {
        n_pos: targets.n_pos,
        cls_term: tape.value(cls_term).item()?.to_f64(),
        ..Default::default()
    };

    let mut total = cls_term;
    if targets.n_pos > 0 {
        let dist = decode_distances(tape, head.reg_raw, stride)?;
        let (iou_sum, clamped) =
            tape.iou_loss_masked(dist, &to_e::<E>(&targets.reg_star), &targets.pos_mask)?;
        report.clamped_cells = clamped;
        let reg_term = tape.scale(iou_sum, inv)?;
        report.reg_term = tape.value(reg_term).item()?.to_f64();
        let mut weighted = reg_term;

        if mode != QualityMode::Off {
            let q_id = head.quality.ok_or(Error::Invalid {
                what: "quality head",
                detail: format!("quality mode {} needs a quality head", mode.name()),
            })?;
            let q_star: Vec<f64> = match mode {
                QualityMode::Pss => targets.quality_star.clone(),
                QualityMode::Iou => {
                    // live target: IoU of the current predicted box with
                    // ground truth, per positive cell
                    let dv: Vec<f64> = tape.value(dist).data().iter().map(|v| v.to_f64()).collect();
                    let mut q = vec![0.0; cells];
                    for (i, q_out) in q.iter_mut().enumerate() {
                        if targets.pos_mask[i] {
                            *q_out = cell_iou(&dv, &targets.reg_star, cells, i);
                        }
                    }
                    q
                }
                QualityMode::Off => unreachable!(),
            };
            let bce_sum = tape.bce_masked(q_id, &to_e::<E>(&q_star), &targets.pos_mask)?;
            let quality_term = tape.scale(bce_sum, inv)?;
            report.quality_term = tape.value(quality_term).item()?.to_f64();
            weighted = tape.add(weighted, quality_term)?;
        }

        let weighted = tape.scale(weighted, E::from_f64(cfg.lambda_weight))?;
        total = tape.add(total, weighted)?;
    }
    report.total = tape.value(total).item()?.to_f64();
    Ok((total, report))
}

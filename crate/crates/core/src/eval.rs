//! Tracking metrics and diagnostic score analyses.
//!
//! Overlap metrics follow the usual one-pass-evaluation conventions:
//! the first frame is given to the tracker and excluded from scoring, a
//! frame fails when its overlap with ground truth is exactly zero, and
//! SR@t counts frames with IoU >= t. EAO is out of scope; accuracy and
//! failure counts act as surrogates.

use crate::codec::{iou, BBox};
use crate::{Error, Result};
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalReport {
    /// Mean IoU over all scored frames.
    pub ao: f64,
    /// Fraction of scored frames with IoU >= 0.5.
    pub sr50: f64,
    /// Fraction of scored frames with IoU >= 0.75.
    pub sr75: f64,
    /// Fraction of scored frames with center error <= 20 px.
    pub precision20: f64,
    /// Frames whose IoU is exactly zero.
    pub failures: usize,
    /// Mean IoU over non-failure frames.
    pub accuracy: f64,
    /// Number of scored frames.
    pub frames: usize,
}

/// Per-frame IoUs of a tracked sequence, first frame excluded.
pub fn frame_ious(pred: &[BBox], gt: &[BBox]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::Invalid {
            what: "eval input",
            detail: format!("{} predictions vs {} ground truths", pred.len(), gt.len()),
        });
    }
    Ok(pred.iter().zip(gt).skip(1).map(|(p, g)| iou(p, g)).collect())
}

fn center_error(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

/// Metrics for one sequence.
pub fn eval_sequence(pred: &[BBox], gt: &[BBox]) -> Result<EvalReport> {
    eval_set(std::slice::from_ref(&(pred, gt)))
}

/// Metrics pooled over several sequences (per-frame aggregation,
/// deterministic in input order).
pub fn eval_set(pairs: &[(&[BBox], &[BBox])]) -> Result<EvalReport> {
    let mut ious = Vec::new();
    let mut centers = Vec::new();
    for (pred, gt) in pairs {
        ious.extend(frame_ious(pred, gt)?);
        centers.extend(pred.iter().zip(*gt).skip(1).map(|(p, g)| center_error(p, g)));
    }
    let frames = ious.len();
    if frames == 0 {
        return Ok(EvalReport::default());
    }
    let ao = ious.iter().sum::<f64>() / frames as f64;
    let sr50 = ious.iter().filter(|&&v| v >= 0.5).count() as f64 / frames as f64;
    let sr75 = ious.iter().filter(|&&v| v >= 0.75).count() as f64 / frames as f64;
    let precision20 = centers.iter().filter(|&&c| c <= 20.0).count() as f64 / frames as f64;
    let failures = ious.iter().filter(|&&v| v == 0.0).count();
    let ok: Vec<f64> = ious.iter().copied().filter(|&v| v > 0.0).collect();
    let accuracy = if ok.is_empty() { 0.0 } else { ok.iter().sum::<f64>() / ok.len() as f64 };
    Ok(EvalReport { ao, sr50, sr75, precision20, failures, accuracy, frames })
}

/// Flat `key=value` lines for the summary file.
pub fn summary_kv(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "frames={}", r.frames);
    let _ = writeln!(s, "AO={:.6}", r.ao);
    let _ = writeln!(s, "SR50={:.6}", r.sr50);
    let _ = writeln!(s, "SR75={:.6}", r.sr75);
    let _ = writeln!(s, "precision20={:.6}", r.precision20);
    let _ = writeln!(s, "failures={}", r.failures);
    let _ = writeln!(s, "accuracy={:.6}", r.accuracy);
    s
}

/// Two-sample Kolmogorov-Smirnov statistic, `max |F_a - F_b|` over the
/// pooled sample points. Symmetric, in [0, 1].
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        let fa = i as f64 / sa.len() as f64;
        let fb = j as f64 / sb.len() as f64;
        d = d.max((fa - fb).abs());
    }
    d
}

/// Max-score histograms split by tracking outcome, 20 uniform bins over
/// [0, 1], plus the KS statistic between the two samples.
#[derive(Clone, Debug)]
pub struct ScoreHistograms {
    pub bins: usize,
    pub count_success: Vec<usize>,
    pub count_failure: Vec<usize>,
    pub ks: f64,
    /// Set when either class is empty (KS is reported as 0).
    pub degenerate: bool,
}

pub fn score_histograms(success: &[f64], failure: &[f64]) -> ScoreHistograms {
    let bins = 20usize;
    let fill = |vals: &[f64]| {
        let mut c = vec![0usize; bins];
        for &v in vals {
            let k = (v.clamp(0.0, 1.0) * bins as f64) as usize;
            c[k.min(bins - 1)] += 1;
        }
        c
    };
    ScoreHistograms {
        bins,
        count_success: fill(success),
        count_failure: fill(failure),
        ks: ks_statistic(success, failure),
        degenerate: success.is_empty() || failure.is_empty(),
    }
}

impl ScoreHistograms {
    /// `bin_lo,bin_hi,count_success,count_failure`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count_success,count_failure\n");
        let w = 1.0 / self.bins as f64;
        for i in 0..self.bins {
            let _ = writeln!(
                s,
                "{:.6},{:.6},{},{}",
                i as f64 * w,
                (i + 1) as f64 * w,
                self.count_success[i],
                self.count_failure[i]
            );
        }
        s
    }
}

/// Splits per-frame max scores by the VOT-style failure rule
/// (IoU == 0) and returns (success_scores, failure_scores).
pub fn split_scores_by_outcome(
    ious: &[f64],
    max_scores: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut success = Vec::new();
    let mut failure = Vec::new();
    for (&v, &s) in ious.iter().zip(max_scores) {
        if v == 0.0 {
            failure.push(s);
        } else {
            success.push(s);
        }
    }
    (success, failure)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn unit_at(offset: f64) -> BBox {
        b(offset, 0.0, offset + 10.0, 10.0)
    }

    #[test]
    fn perfect_tracking_scores_one() {
        let gt = vec![unit_at(0.0), unit_at(1.0), unit_at(2.0)];
        let rep = eval_sequence(&gt, &gt).unwrap();
        assert_eq!(rep.ao, 1.0);
        assert_eq!(rep.sr50, 1.0);
        assert_eq!(rep.sr75, 1.0);
        assert_eq!(rep.failures, 0);
        assert_eq!(rep.frames, 2);
    }

    #[test]
    fn hand_computed_mixture() {
        // per-frame IoUs 1.0, 0.5, 0.0 -> AO 0.5, SR50 2/3, failures 1
        let gt = vec![unit_at(0.0), unit_at(0.0), unit_at(0.0), unit_at(0.0)];
        let pred = vec![
            unit_at(0.0),
            unit_at(0.0),            // IoU 1.0
            b(0.0, 0.0, 10.0, 5.0),  // contained half-area box: IoU 0.5
            unit_at(100.0),          // disjoint
        ];
        let rep = eval_sequence(&pred, &gt).unwrap();
        assert!((rep.ao - 0.5).abs() < 1e-9, "ao {}", rep.ao);
        assert!((rep.sr50 - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(rep.failures, 1);
        // accuracy over non-failures: (1 + 0.5)/2
        assert!((rep.accuracy - 0.75).abs() < 1e-9);
        assert!(rep.accuracy >= rep.ao);
    }

    #[test]
    fn sr_thresholds_are_inclusive() {
        // IoUs 0.6 and 0.4 -> SR50 = 0.5, SR75 = 0
        let gt = vec![unit_at(0.0), b(0.0, 0.0, 10.0, 10.0), b(0.0, 0.0, 10.0, 10.0)];
        let pred = vec![
            unit_at(0.0),
            b(0.0, 0.0, 10.0, 6.0),  // IoU 0.6
            b(0.0, 0.0, 10.0, 4.0),  // IoU 0.4
        ];
        let rep = eval_sequence(&pred, &gt).unwrap();
        assert!((rep.sr50 - 0.5).abs() < 1e-9);
        assert_eq!(rep.sr75, 0.0);
        assert!(rep.sr75 <= rep.sr50);
    }

    #[test]
    fn mismatched_lengths_error() {
        let gt = vec![unit_at(0.0), unit_at(1.0)];
        let pred = vec![unit_at(0.0)];
        assert!(eval_sequence(&pred, &gt).is_err());
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a = vec![0.1, 0.5, 0.9, 0.3];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        let lo = vec![0.1, 0.2, 0.15];
        let hi = vec![0.8, 0.9, 0.95];
        assert_eq!(ks_statistic(&lo, &hi), 1.0);
        // symmetry
        let b = vec![0.2, 0.6, 0.7];
        assert_eq!(ks_statistic(&a, &b), ks_statistic(&b, &a));
        assert!(ks_statistic(&a, &b) <= 1.0);
    }

    #[test]
    fn histogram_splits_and_counts() {
        let (succ, fail) = split_scores_by_outcome(&[0.7, 0.0, 0.9], &[0.8, 0.2, 0.85]);
        assert_eq!(succ, vec![0.8, 0.85]);
        assert_eq!(fail, vec![0.2]);
        let h = score_histograms(&succ, &fail);
        assert!(!h.degenerate);
        assert_eq!(h.count_success.iter().sum::<usize>(), 2);
        assert_eq!(h.count_failure.iter().sum::<usize>(), 1);
        let csv = h.to_csv();
        assert_eq!(csv.lines().count(), 21);
        assert!(csv.starts_with("bin_lo,bin_hi,count_success,count_failure\n"));
        // degenerate case reports ks = 0
        let d = score_histograms(&[], &[0.5]);
        assert!(d.degenerate);
        assert_eq!(d.ks, 0.0);
    }

    #[test]
    fn pooled_eval_merges_sequences() {
        let gt1 = vec![unit_at(0.0), unit_at(0.0)];
        let pred1 = vec![unit_at(0.0), unit_at(0.0)];
        let gt2 = vec![unit_at(0.0), unit_at(0.0)];
        let pred2 = vec![unit_at(0.0), unit_at(100.0)];
        let rep = eval_set(&[
            (pred1.as_slice(), gt1.as_slice()),
            (pred2.as_slice(), gt2.as_slice()),
        ])
        .unwrap();
        assert_eq!(rep.frames, 2);
        assert!((rep.ao - 0.5).abs() < 1e-9);
        assert_eq!(rep.failures, 1);
    }

    #[test]
    fn report_orderings_hold_on_random_inputs() {
        use crate::rng::Rng;
        let mut r = Rng::new(4);
        for _ in 0..100 {
            let len = 2 + r.below(30);
            let gt: Vec<BBox> = (0..len)
                .map(|_| {
                    BBox::from_center(r.uniform(20.0, 80.0), r.uniform(20.0, 80.0), 10.0, 12.0)
                        .unwrap()
                })
                .collect();
            let pred: Vec<BBox> = gt
                .iter()
                .map(|g| {
                    let (cx, cy) = g.center();
                    BBox::from_center(
                        cx + r.uniform(-30.0, 30.0),
                        cy + r.uniform(-30.0, 30.0),
                        r.uniform(4.0, 20.0),
                        r.uniform(4.0, 20.0),
                    )
                    .unwrap()
                })
                .collect();
            let rep = eval_sequence(&pred, &gt).unwrap();
            assert!(rep.sr75 <= rep.sr50 + 1e-12);
            assert!((0.0..=1.0).contains(&rep.ao));
            assert!(rep.failures <= rep.frames);
            if rep.failures > 0 {
                assert!(rep.accuracy >= rep.ao - 1e-12);
            }
        }
    }

    #[test]
    fn summary_is_key_value_lines() {
        let rep = EvalReport { ao: 0.5, frames: 10, ..Default::default() };
        let s = summary_kv(&rep);
        assert!(s.contains("AO=0.500000"));
        assert!(s.contains("frames=10"));
    }
}

//! Finite-difference oracle battery over every differentiable op and
//! the full training objective, run in f64.
//!
//! Each check compares the tape's analytic gradient against central
//! differences on freshly sampled random instances; the full-objective
//! check differentiates through the entire model forward plus loss with
//! respect to every parameter tensor (a sampled coordinate subset keeps
//! the runtime in seconds).

use crate::codec::{assign_and_encode, BBox, QualityMode};
use crate::loss::{total_loss, LossConfig};
use crate::model::{forward_pair, ModelConfig, SiamModel, TapeHead};
use crate::rng::Rng;
use crate::tape::{finite_diff_check, FdReport, Tape};
use crate::tensor::Tensor;
use crate::Result;
use std::collections::BTreeMap;

/// One named oracle outcome.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn merge(name: &str, reports: Vec<FdReport>) -> CheckResult {
    let max_rel_err = reports.iter().fold(0.0f64, |m, r| m.max(r.max_rel_err));
    CheckResult {
        name: name.to_string(),
        instances: reports.len(),
        max_rel_err,
        pass: reports.iter().all(|r| r.pass),
    }
}

fn rand_t(r: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.uniform(lo, hi)).collect()).expect("shape")
}

fn away_from_zero(t: &mut Tensor<f64>, margin: f64) {
    for v in t.data_mut() {
        if v.abs() < margin {
            *v += if *v >= 0.0 { margin } else { -margin };
        }
    }
}

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

pub fn check_conv2d(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut r = Rng::new(seed).fork(1);
    let mut reports = Vec::new();
    for i in 0..instances {
        let stride = 1 + i % 2;
        let x = rand_t(&mut r, &[2, 6, 6], -1.0, 1.0);
        let k = rand_t(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        reports.push(finite_diff_check(
            |t, xid| {
                let kid = t.input(k.clone());
                let y = t.conv2d(xid, kid, stride, 1)?;
                t.sum(y)
            },
            &x,
            EPS,
            TOL,
            None,
        )?);
        reports.push(finite_diff_check(
            |t, kid| {
                let xid = t.input(x.clone());
                let y = t.conv2d(xid, kid, stride, 1)?;
                t.sum(y)
            },
            &k,
            EPS,
            TOL,
            None,
        )?);
    }
    Ok(merge("conv2d", reports))
}

pub fn check_xcorr(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut r = Rng::new(seed).fork(2);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let t0 = rand_t(&mut r, &[2, 3, 3], -1.0, 1.0);
        let s0 = rand_t(&mut r, &[2, 5, 5], -1.0, 1.0);
        reports.push(finite_diff_check(
            |t, sid| {
                let tid = t.input(t0.clone());
                let y = t.xcorr_depthwise(tid, sid)?;
                t.sum(y)
            },
            &s0,
            EPS,
            TOL,
            None,
        )?);
        reports.push(finite_diff_check(
            |t, tid| {
                let sid = t.input(s0.clone());
                let y = t.xcorr_depthwise(tid, sid)?;
                t.sum(y)
            },
            &t0,
            EPS,
            TOL,
            None,
        )?);
    }
    Ok(merge("xcorr_depthwise", reports))
}

/// relu/add/mul/exp/scale composed into one chain (relu probed away
/// from its kink).
pub fn check_elementwise(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut r = Rng::new(seed).fork(3);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let mut x = rand_t(&mut r, &[4, 4], -1.0, 1.0);
        away_from_zero(&mut x, 0.05);
        let other = rand_t(&mut r, &[4, 4], -1.0, 1.0);
        reports.push(finite_diff_check(
            |t, xid| {
                let o = t.input(other.clone());
                let a = t.relu(xid)?;
                let b = t.mul(a, o)?;
                let c = t.scale(b, 0.7)?;
                let d = t.exp(c)?;
                let e = t.add(d, o)?;
                t.sum(e)
            },
            &x,
            EPS,
            TOL,
            None,
        )?);
    }
    Ok(merge("elementwise", reports))
}

pub fn check_focal(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut r = Rng::new(seed).fork(4);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let x = rand_t(&mut r, &[5, 5], -3.0, 3.0);
        let stars: Vec<f64> = (0..25).map(|_| if r.bernoulli(0.3) { 1.0 } else { 0.0 }).collect();
        reports.push(finite_diff_check(
            |t, xid| t.focal_loss(xid, &stars, 2.0, 0.25),
            &x,
            1e-6,
            TOL,
            None,
        )?);
    }
    Ok(merge("focal_loss", reports))
}

pub fn check_bce(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut r = Rng::new(seed).fork(5);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let x = rand_t(&mut r, &[5, 5], -3.0, 3.0);
        let q: Vec<f64> = (0..25).map(|_| r.unit_f64()).collect();
        let mask: Vec<bool> = (0..25).map(|_| r.bernoulli(0.5)).collect();
        reports.push(finite_diff_check(
            |t, xid| t.bce_masked(xid, &q, &mask),
            &x,
            1e-6,
            TOL,
            None,
        )?);
    }
    Ok(merge("bce_loss", reports))
}

pub fn check_iou_loss(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut r = Rng::new(seed).fork(6);
    let mut reports = Vec::new();
    for _ in 0..instances {
        let mut d = rand_t(&mut r, &[4, 3, 3], 0.5, 4.0);
        let dstar: Vec<f64> = (0..36).map(|_| r.uniform(0.5, 4.0)).collect();
        // keep clear of the min() ties
        for (v, s) in d.data_mut().iter_mut().zip(dstar.iter()) {
            if (*v - s).abs() < 0.05 {
                *v += 0.1;
            }
        }
        let mask: Vec<bool> = (0..9).map(|_| r.bernoulli(0.6)).collect();
        reports.push(finite_diff_check(
            |t, xid| Ok(t.iou_loss_masked(xid, &dstar, &mask)?.0),
            &d,
            1e-6,
            TOL,
            None,
        )?);
    }
    Ok(merge("iou_loss", reports))
}

/// A small model config for the end-to-end objective check (f64 forward
/// passes stay cheap).
pub fn tiny_objective_config(quality_mode: QualityMode) -> ModelConfig {
    ModelConfig {
        backbone_channels: vec![8, 12, 12, 16],
        template_size: 64,
        search_size: 96,
        head_tower_depth: 1,
        quality_mode,
        ..Default::default()
    }
}

/// Differentiates the full objective (model forward on both patches,
/// decode, focal + BCE + IoU) with respect to every parameter tensor
/// and the search patch, on `coords_per_tensor` sampled coordinates.
pub fn check_full_objective(
    instances: usize,
    coords_per_tensor: usize,
    seed: u64,
) -> Result<CheckResult> {
    let cfg = tiny_objective_config(QualityMode::Pss);
    let model = crate::model::init_model(&cfg, seed ^ 0x5eed)?;
    let params64: BTreeMap<String, Tensor<f64>> = model.params_f64();
    let mut r = Rng::new(seed).fork(7);
    let grid = cfg.score_grid()?;
    let mut reports = Vec::new();

    for _ in 0..instances {
        let z = rand_t(&mut r, &[3, cfg.template_size, cfg.template_size], 0.0, 1.0);
        let x = rand_t(&mut r, &[3, cfg.search_size, cfg.search_size], 0.0, 1.0);
        let gt = BBox::from_center(
            r.uniform(12.0, 28.0),
            r.uniform(12.0, 28.0),
            r.uniform(10.0, 24.0),
            r.uniform(10.0, 24.0),
        )?;
        let targets = assign_and_encode(&gt, grid.n, grid.stride, cfg.quality_mode);
        let loss_cfg = LossConfig::default();

        // objective as a function of one substituted tensor
        let build = |t: &mut Tape<f64>,
                     replace: &str,
                     xid: crate::tape::ValId|
         -> Result<crate::tape::ValId> {
            let mut ids = BTreeMap::new();
            for (name, tensor) in &params64 {
                if name == replace {
                    ids.insert(name.clone(), xid);
                } else {
                    ids.insert(name.clone(), t.input(tensor.clone()));
                }
            }
            let (zi, xi) = if replace == "<search_patch>" {
                (t.input(z.clone()), xid)
            } else {
                (t.input(z.clone()), t.input(x.clone()))
            };
            let head: TapeHead = forward_pair(t, &ids, &cfg, zi, xi)?;
            Ok(total_loss(t, &head, &targets, cfg.quality_mode, cfg.stride, &loss_cfg)?.0)
        };

        let mut check_tensor = |name: &str, tensor: &Tensor<f64>| -> Result<()> {
            let n = tensor.numel();
            let count = coords_per_tensor.min(n);
            let coords: Vec<usize> = (0..count).map(|_| r.below(n)).collect();
            reports.push(finite_diff_check(
                |t, xid| build(t, name, xid),
                tensor,
                EPS,
                TOL,
                Some(&coords),
            )?);
            Ok(())
        };
        for (name, tensor) in &params64 {
            check_tensor(name, tensor)?;
        }
        check_tensor("<search_patch>", &x)?;
    }
    Ok(merge("full_objective", reports))
}

/// The complete battery at the acceptance budget.
pub fn run_battery(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_conv2d(20, seed)?,
        check_xcorr(20, seed)?,
        check_elementwise(20, seed)?,
        check_focal(20, seed)?,
        check_bce(20, seed)?,
        check_iou_loss(20, seed)?,
        check_full_objective(20, 3, seed)?,
    ])
}

/// Re-exported for callers of [`run_battery`] with a custom SiamModel.
pub fn model_for_tests(seed: u64) -> Result<SiamModel> {
    crate::model::init_model(&tiny_objective_config(QualityMode::Pss), seed)
}

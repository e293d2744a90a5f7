//! Optimization harness: SGD with momentum, linear warmup followed by
//! cosine annealing, name-prefix parameter freezing, CSV loss logging,
//! and a binary checkpoint format with exact round-trips.
//!
//! Training is bit-deterministic given `(seed, config)`: one pair
//! sampler stream, one tape per batch, single-threaded updates.

use crate::codec::{assign_and_encode, QualityMode, TargetMaps};
use crate::loss::{total_loss, LossConfig, LossReport};
use crate::model::{forward_pair, register_params, ModelConfig, SiamModel};
use crate::synth::{PairSampler, Sequence, TrainingPair};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_start_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub pairs_per_epoch: usize,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Parameters whose name starts with any of these prefixes receive
    /// no updates; their gradients are discarded.
    pub freeze: Vec<String>,
    pub max_interval: usize,
    pub negative_ratio: f64,
    pub aug_max_shift: f64,
    pub aug_scale_range: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 2e-3,
            warmup_start_lr: 1e-7,
            warmup_epochs: 1,
            total_epochs: 6,
            pairs_per_epoch: 2000,
            momentum: 0.9,
            batch_size: 8,
            seed: 1,
            freeze: Vec::new(),
            max_interval: 20,
            negative_ratio: 0.1,
            aug_max_shift: 8.0,
            aug_scale_range: (0.85, 1.18),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // total_epochs == 0 is the explicit "no training" case
        if (self.total_epochs > 0 && self.warmup_epochs >= self.total_epochs)
            || self.base_lr <= 0.0
            || self.warmup_start_lr <= 0.0
            || self.batch_size == 0
            || self.pairs_per_epoch == 0
            || !(0.0..=1.0).contains(&self.momentum)
        {
            return Err(Error::Invalid {
                what: "train config",
                detail: format!("{self:?}"),
            });
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.pairs_per_epoch / self.batch_size).max(1)
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch() * self.total_epochs
    }

    pub fn warmup_steps(&self) -> usize {
        self.steps_per_epoch() * self.warmup_epochs
    }
}

/// Learning rate at a global step: linear from `warmup_start_lr` to
/// `base_lr` across warmup, then `base_lr * 0.5 * (1 + cos(pi * p))`
/// with `p` running over the post-warmup steps. Both sides equal
/// `base_lr` at the junction.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let w = cfg.warmup_steps();
    let total = cfg.total_steps();
    if step < w {
        cfg.warmup_start_lr + (cfg.base_lr - cfg.warmup_start_lr) * step as f64 / w as f64
    } else {
        let span = (total - w).max(1);
        let progress = (step - w) as f64 / span as f64;
        cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// One SGD-momentum update: `v <- m*v + g; p <- p - lr*v`.
///
/// A non-finite gradient aborts the step (parameters and velocity are
/// left untouched).
pub fn sgd_momentum_step(
    params: &mut BTreeMap<String, Tensor<f32>>,
    grads: &BTreeMap<String, Tensor<f32>>,
    velocity: &mut BTreeMap<String, Tensor<f32>>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    for g in grads.values() {
        g.check_finite("sgd gradient")?;
    }
    for (name, g) in grads {
        let p = params.get_mut(name).ok_or(Error::Invalid {
            what: "sgd step",
            detail: format!("gradient for unknown parameter {name}"),
        })?;
        let v = velocity
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = (momentum as f32) * *vv + *gv;
            *pv -= (lr as f32) * *vv;
        }
    }
    Ok(())
}

/// Per-step line of the training log.
#[derive(Clone, Copy, Debug)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub report: LossReport,
}

pub fn loss_log_csv(log: &[StepLog]) -> String {
    let mut s = String::from("step,lr,total,cls,quality,reg,n_pos\n");
    for l in log {
        let _ = writeln!(
            s,
            "{},{:.8e},{:.6},{:.6},{:.6},{:.6},{}",
            l.step, l.lr, l.report.total, l.report.cls_term, l.report.quality_term,
            l.report.reg_term, l.report.n_pos
        );
    }
    s
}

/// Builds targets for a pair in the score grid's label frame.
pub fn pair_targets(pair: &TrainingPair, model_cfg: &ModelConfig) -> Result<TargetMaps> {
    let grid = model_cfg.score_grid()?;
    match &pair.gt_in_search {
        None => Ok(TargetMaps::all_negative(grid.n)),
        Some(gt_patch) => {
            let shift = grid.label_shift();
            let gt_label = gt_patch.translated(-shift, -shift);
            Ok(assign_and_encode(&gt_label, grid.n, grid.stride, model_cfg.quality_mode))
        }
    }
}

/// Loss objective of one pair, built on the given tape. Returns the
/// scalar loss id and the report. Custom variants (the anchor head)
/// plug in their own function with this shape.
pub type PairObjective = dyn Fn(
    &mut Tape<f32>,
    &BTreeMap<String, crate::tape::ValId>,
    &ModelConfig,
    &TrainingPair,
    &LossConfig,
) -> Result<(crate::tape::ValId, LossReport)>;

/// The per-pixel objective: forward both patches, decode, apply the
/// focal + quality-BCE + IoU objective against the encoded targets.
pub fn per_pixel_objective(
    tape: &mut Tape<f32>,
    ids: &BTreeMap<String, crate::tape::ValId>,
    cfg: &ModelConfig,
    pair: &TrainingPair,
    loss_cfg: &LossConfig,
) -> Result<(crate::tape::ValId, LossReport)> {
    let z = tape.input(pair.template.clone());
    let x = tape.input(pair.search.clone());
    let head = forward_pair(tape, ids, cfg, z, x)?;
    let targets = pair_targets(pair, cfg)?;
    total_loss(tape, &head, &targets, cfg.quality_mode, cfg.stride, loss_cfg)
}

/// Trains a model on the given sequences. Deterministic per
/// `(seed, config)`; returns the per-step loss log.
pub fn train(
    model: &mut SiamModel,
    world: &[Sequence],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<Vec<StepLog>> {
    train_with_objective(model, world, cfg, loss_cfg, &per_pixel_objective)
}

pub fn train_with_objective(
    model: &mut SiamModel,
    world: &[Sequence],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    objective: &PairObjective,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if cfg.total_epochs == 0 {
        return Ok(Vec::new());
    }
    if world.is_empty() {
        return Err(Error::Invalid { what: "training world", detail: "no sequences".into() });
    }
    let mut sampler = PairSampler {
        sequences: world,
        crop: crate::synth::CropSpec {
            template_size: model.cfg.template_size,
            search_size: model.cfg.search_size,
            context: 0.5,
        },
        max_interval: cfg.max_interval,
        negative_ratio: cfg.negative_ratio,
        max_shift: cfg.aug_max_shift,
        scale_range: cfg.aug_scale_range,
        rng: train_rng(cfg.seed),
    };
    let mut velocity: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    let mut log = Vec::with_capacity(cfg.total_steps());
    let inv_batch = 1.0 / cfg.batch_size as f32;

    for step in 0..cfg.total_steps() {
        let lr = lr_at(step, cfg);
        let mut batch_grads: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        let mut batch_report = LossReport::default();
        for _ in 0..cfg.batch_size {
            let pair = sampler.next_pair()?;
            let mut tape: Tape<f32> = Tape::new();
            let ids = register_params(&mut tape, &model.params);
            let (loss_id, report) = objective(&mut tape, &ids, &model.cfg, &pair, loss_cfg)
                .map_err(|e| Error::Train { step, detail: e.to_string() })?;
            if !report.total.is_finite() {
                return Err(Error::Train {
                    step,
                    detail: format!("non-finite loss on a {} pair", if pair.is_negative { "negative" } else { "positive" }),
                });
            }
            let grads = tape.backward(loss_id)?;
            for (name, id) in &ids {
                if is_frozen(name, &cfg.freeze) {
                    continue; // gradient discarded, not accumulated
                }
                if let Some(g) = grads.get(*id) {
                    match batch_grads.get_mut(name) {
                        Some(acc) => {
                            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a += *v * inv_batch;
                            }
                        }
                        None => {
                            let mut t = g.clone();
                            for v in t.data_mut() {
                                *v *= inv_batch;
                            }
                            batch_grads.insert(name.clone(), t);
                        }
                    }
                }
            }
            batch_report.total += report.total / cfg.batch_size as f64;
            batch_report.cls_term += report.cls_term / cfg.batch_size as f64;
            batch_report.quality_term += report.quality_term / cfg.batch_size as f64;
            batch_report.reg_term += report.reg_term / cfg.batch_size as f64;
            batch_report.n_pos += report.n_pos;
            batch_report.clamped_cells += report.clamped_cells;
        }
        sgd_momentum_step(&mut model.params, &batch_grads, &mut velocity, lr, cfg.momentum)
            .map_err(|e| Error::Train { step, detail: e.to_string() })?;
        log.push(StepLog { step, lr, report: batch_report });
    }
    Ok(log)
}

fn is_frozen(name: &str, freeze: &[String]) -> bool {
    freeze.iter().any(|p| name.starts_with(p.as_str()))
}

fn train_rng(seed: u64) -> crate::rng::Rng {
    crate::rng::Rng::new(seed).fork(0x747261696e) // "train"
}

// ── checkpoints ──────────────────────────────────────────────────────

const CKPT_MAGIC: &[u8; 4] = b"SFPP";
const CKPT_VERSION: u32 = 1;

/// Named f32 arrays: model parameters, optimizer momentum buffers
/// (`momentum.<name>`), the step counter, and a numeric echo of the
/// model config (`cfg.*` entries).
///
/// Wire format: magic `SFPP`, u32 LE version, u32 LE entry count; per
/// entry a u16 LE name length, the UTF-8 name, u8 rank, rank u32 LE
/// dims, then the f32 LE values.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub entries: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn from_model(model: &SiamModel, velocity: &BTreeMap<String, Tensor<f32>>, step: usize) -> Checkpoint {
        let mut entries = BTreeMap::new();
        for (k, v) in &model.params {
            entries.insert(k.clone(), v.clone());
        }
        for (k, v) in velocity {
            entries.insert(format!("momentum.{k}"), v.clone());
        }
        entries.insert("step".into(), Tensor::scalar(step as f32));
        let c = &model.cfg;
        let mut num = |k: &str, v: f32| {
            entries.insert(format!("cfg.{k}"), Tensor::scalar(v));
        };
        num("template_size", c.template_size as f32);
        num("search_size", c.search_size as f32);
        num("stride", c.stride as f32);
        num("head_tower_depth", c.head_tower_depth as f32);
        num("crop_border", c.crop_border as f32);
        num("quality_mode", match c.quality_mode {
            QualityMode::Pss => 0.0,
            QualityMode::Iou => 1.0,
            QualityMode::Off => 2.0,
        });
        num("cls_out_channels", c.cls_out_channels as f32);
        num("reg_out_channels", c.reg_out_channels as f32);
        num("quality_head", c.quality_head as u8 as f32);
        entries.insert(
            "cfg.backbone_channels".into(),
            Tensor::from_vec(
                &[c.backbone_channels.len()],
                c.backbone_channels.iter().map(|&v| v as f32).collect(),
            )
            .expect("shape matches"),
        );
        Checkpoint { entries }
    }

    /// Rebuilds the model (and optimizer state) stored in the file.
    pub fn into_model(self) -> Result<(SiamModel, BTreeMap<String, Tensor<f32>>, usize)> {
        let get = |k: &str| -> Result<f32> {
            self.entries
                .get(&format!("cfg.{k}"))
                .ok_or(Error::Checkpoint { offset: 0, detail: format!("missing cfg.{k}") })?
                .item()
        };
        let quality_mode = match get("quality_mode")? as u32 {
            0 => QualityMode::Pss,
            1 => QualityMode::Iou,
            _ => QualityMode::Off,
        };
        let cfg = ModelConfig {
            backbone_channels: self
                .entries
                .get("cfg.backbone_channels")
                .ok_or(Error::Checkpoint { offset: 0, detail: "missing cfg.backbone_channels".into() })?
                .data()
                .iter()
                .map(|&v| v as usize)
                .collect(),
            stride: get("stride")? as usize,
            template_size: get("template_size")? as usize,
            search_size: get("search_size")? as usize,
            head_tower_depth: get("head_tower_depth")? as usize,
            crop_border: get("crop_border")? as usize,
            quality_mode,
            cls_out_channels: get("cls_out_channels")? as usize,
            reg_out_channels: get("reg_out_channels")? as usize,
            quality_head: get("quality_head")? != 0.0,
        };
        cfg.validate()?;
        let step = self
            .entries
            .get("step")
            .ok_or(Error::Checkpoint { offset: 0, detail: "missing step".into() })?
            .item()? as usize;
        let mut params = BTreeMap::new();
        let mut velocity = BTreeMap::new();
        for (k, v) in self.entries {
            if k == "step" || k.starts_with("cfg.") {
                continue;
            }
            if let Some(name) = k.strip_prefix("momentum.") {
                velocity.insert(name.to_string(), v);
            } else {
                params.insert(k, v);
            }
        }
        Ok((SiamModel { cfg, params }, velocity, step))
    }

    /// Single-element entries go out as rank 0 (the wire format's
    /// scalar form); loading normalizes them back to shape `[1]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            if t.shape() == [1] {
                out.push(0u8);
            } else {
                out.push(t.shape().len() as u8);
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let err = |offset: usize, detail: String| Error::Checkpoint { offset: offset as u64, detail };
        if bytes.len() < 12 {
            return Err(err(bytes.len(), "file shorter than header".into()));
        }
        if &bytes[0..4] != CKPT_MAGIC {
            return Err(err(0, format!("bad magic {:?}", &bytes[0..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(err(4, format!("unsupported version {version} (expected {CKPT_VERSION})")));
        }
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut pos = 12usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            if pos + 2 > bytes.len() {
                return Err(err(pos, "truncated at name length".into()));
            }
            let name_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
            pos += 2;
            if pos + name_len > bytes.len() {
                return Err(err(pos, "truncated inside name".into()));
            }
            let name = std::str::from_utf8(&bytes[pos..pos + name_len])
                .map_err(|e| err(pos, format!("name not UTF-8: {e}")))?
                .to_string();
            pos += name_len;
            if pos >= bytes.len() {
                return Err(err(pos, "truncated at rank".into()));
            }
            let rank = bytes[pos] as usize;
            pos += 1;
            let mut shape = Vec::with_capacity(rank.max(1));
            for _ in 0..rank {
                if pos + 4 > bytes.len() {
                    return Err(err(pos, "truncated inside dims".into()));
                }
                shape.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
                pos += 4;
            }
            if rank == 0 {
                shape.push(1);
            }
            let n: usize = shape.iter().product();
            if pos + 4 * n > bytes.len() {
                return Err(err(pos, format!("truncated inside data of {name}")));
            }
            let mut data = Vec::with_capacity(n);
            for k in 0..n {
                data.push(f32::from_le_bytes(bytes[pos + 4 * k..pos + 4 * k + 4].try_into().unwrap()));
            }
            pos += 4 * n;
            entries.insert(name, Tensor::from_vec(&shape, data)?);
        }
        if pos != bytes.len() {
            return Err(err(pos, format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Checkpoint { entries })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::synth::{gen_world, WorldConfig};

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            warmup_epochs: 1,
            total_epochs: 2,
            pairs_per_epoch: 16,
            batch_size: 4,
            ..Default::default()
        }
    }

    #[test]
    fn lr_schedule_endpoints_and_midpoint() {
        let cfg = TrainConfig {
            warmup_epochs: 2,
            total_epochs: 6,
            pairs_per_epoch: 100,
            batch_size: 10,
            ..Default::default()
        };
        assert_eq!(lr_at(0, &cfg), 1e-7);
        let w = cfg.warmup_steps();
        assert!((lr_at(w, &cfg) - 2e-3).abs() < 1e-12);
        // continuity: one step before warmup end is within a step's slope
        let slope = (cfg.base_lr - cfg.warmup_start_lr) / w as f64;
        assert!((lr_at(w - 1, &cfg) - (2e-3 - slope)).abs() < 1e-12);
        // post-warmup midpoint -> base/2
        let mid = w + (cfg.total_steps() - w) / 2;
        assert!((lr_at(mid, &cfg) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn sgd_zero_grad_keeps_params() {
        let mut params = BTreeMap::from([("w".to_string(), Tensor::filled(&[3], 1.0f32))]);
        let grads = BTreeMap::from([("w".to_string(), Tensor::zeros(&[3]))]);
        let mut vel = BTreeMap::new();
        sgd_momentum_step(&mut params, &grads, &mut vel, 0.1, 0.9).unwrap();
        assert_eq!(params["w"].data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sgd_momentum_zero_is_plain_sgd() {
        let mut params = BTreeMap::from([("w".to_string(), Tensor::filled(&[1], 1.0f32))]);
        let grads = BTreeMap::from([("w".to_string(), Tensor::filled(&[1], 2.0f32))]);
        let mut vel = BTreeMap::new();
        sgd_momentum_step(&mut params, &grads, &mut vel, 0.1, 0.0).unwrap();
        assert!((params["w"].data()[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn sgd_momentum_second_step_displacement() {
        // constant g, momentum 0.9: second displacement = lr * 1.9 * g
        let mut params = BTreeMap::from([("w".to_string(), Tensor::filled(&[1], 0.0f32))]);
        let grads = BTreeMap::from([("w".to_string(), Tensor::filled(&[1], 1.0f32))]);
        let mut vel = BTreeMap::new();
        sgd_momentum_step(&mut params, &grads, &mut vel, 0.1, 0.9).unwrap();
        let after_first = params["w"].data()[0];
        sgd_momentum_step(&mut params, &grads, &mut vel, 0.1, 0.9).unwrap();
        let disp2 = params["w"].data()[0] - after_first;
        assert!((disp2 - (-0.1 * 1.9)).abs() < 1e-6, "disp2 {disp2}");
    }

    #[test]
    fn sgd_rejects_non_finite_grad() {
        let mut params = BTreeMap::from([("w".to_string(), Tensor::filled(&[1], 0.0f32))]);
        let grads = BTreeMap::from([("w".to_string(), Tensor::filled(&[1], f32::NAN))]);
        let mut vel = BTreeMap::new();
        assert!(sgd_momentum_step(&mut params, &grads, &mut vel, 0.1, 0.9).is_err());
        assert_eq!(params["w"].data()[0], 0.0);
    }

    #[test]
    fn frozen_prefixes_stay_bit_identical() {
        let wcfg = WorldConfig { length: 8, frame_h: 120, frame_w: 120, ..Default::default() };
        let world = gen_world(&wcfg, 10, 3).unwrap();
        let mut model = init_model(&ModelConfig::default(), 3).unwrap();
        let before: BTreeMap<String, Tensor<f32>> = model
            .params
            .iter()
            .filter(|(k, _)| k.starts_with("backbone."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let cfg = TrainConfig { freeze: vec!["backbone.".into()], ..tiny_train_cfg() };
        train(&mut model, &world, &cfg, &LossConfig::default()).unwrap();
        for (k, v) in before {
            assert_eq!(model.params[&k], v, "{k} changed despite freeze");
        }
        // non-frozen parameters moved
        assert!(model
            .params
            .iter()
            .any(|(k, v)| k.starts_with("tower.") && v.data().iter().any(|x| *x != 0.0)));
    }

    #[test]
    fn training_is_deterministic() {
        let wcfg = WorldConfig { length: 8, frame_h: 120, frame_w: 120, ..Default::default() };
        let world = gen_world(&wcfg, 20, 3).unwrap();
        let cfg = tiny_train_cfg();
        let mut m1 = init_model(&ModelConfig::default(), 5).unwrap();
        let log1 = train(&mut m1, &world, &cfg, &LossConfig::default()).unwrap();
        let mut m2 = init_model(&ModelConfig::default(), 5).unwrap();
        let log2 = train(&mut m2, &world, &cfg, &LossConfig::default()).unwrap();
        assert_eq!(m1.params, m2.params);
        assert_eq!(loss_log_csv(&log1), loss_log_csv(&log2));
    }

    #[test]
    fn negative_pairs_encode_to_all_negative_targets() {
        let wcfg = WorldConfig { length: 8, frame_h: 120, frame_w: 120, ..Default::default() };
        let a = crate::synth::gen_sequence(&wcfg, 1, 0).unwrap();
        let b = crate::synth::gen_sequence(&wcfg, 2, 1).unwrap();
        let mut rng = crate::rng::Rng::new(3);
        let pair = crate::synth::make_negative_pair(
            &a,
            &b,
            &crate::synth::CropSpec::default(),
            &mut rng,
        )
        .unwrap();
        let targets = pair_targets(&pair, &ModelConfig::default()).unwrap();
        assert_eq!(targets.n_pos, 0);
        assert!(targets.cls_star.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let model = init_model(&ModelConfig::default(), 8).unwrap();
        let mut vel = BTreeMap::new();
        vel.insert("head.cls.weight".to_string(), Tensor::filled(&[1, 32, 1, 1], 0.25f32));
        let ckpt = Checkpoint::from_model(&model, &vel, 123);
        let dir = std::env::temp_dir().join("sfpp_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        let (m2, vel2, step) = back.into_model().unwrap();
        assert_eq!(m2.params, model.params);
        assert_eq!(vel2["head.cls.weight"].data()[0], 0.25);
        assert_eq!(step, 123);
        // write twice -> identical bytes
        let b1 = fs::read(&path).unwrap();
        save_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(b1, fs::read(&path).unwrap());
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let model = init_model(&ModelConfig::default(), 9).unwrap();
        let ckpt = Checkpoint::from_model(&model, &BTreeMap::new(), 0);
        let mut bytes = ckpt.to_bytes();
        // bad magic
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(Checkpoint::from_bytes(&corrupt).is_err());
        // unsupported version
        let mut vbump = bytes.clone();
        vbump[4] = 9;
        let err = Checkpoint::from_bytes(&vbump).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
        // truncation
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let mut model = init_model(&ModelConfig::default(), 10).unwrap();
        let before = model.params.clone();
        let cfg = TrainConfig { total_epochs: 0, warmup_epochs: 0, ..tiny_train_cfg() };
        let log = train(&mut model, &[], &cfg, &LossConfig::default()).unwrap();
        assert!(log.is_empty());
        assert_eq!(model.params, before);
    }
}

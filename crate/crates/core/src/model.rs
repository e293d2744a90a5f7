//! The siamese network: shared backbone, task-specific adjustment
//! layers, depthwise cross-correlation, head towers, and the three
//! output heads (classification, quality, box regression).
//!
//! The backbone is a tiny 4-conv net (two stride-2 convs plus one
//! stride-2 pooling) with total stride 8, sized to train on a CPU in
//! minutes. Template and search branches share every backbone and
//! adjustment parameter. All spatial shapes derive from the config;
//! [`ModelConfig::score_size`] must agree with an actual forward pass.

use crate::codec::QualityMode;
use crate::rng::Rng;
use crate::tape::{Tape, ValId};
use crate::tensor::{conv_out_len, Elem, Tensor};
use crate::{Error, Result};
use std::collections::BTreeMap;

/// Maps a score-grid cell to its owning pixel: `(floor(s/2) + x*s,
/// floor(s/2) + y*s)`, in the grid's own (label) pixel frame.
pub fn map_feature_to_image(x: usize, y: usize, s: usize) -> (usize, usize) {
    (s / 2 + x * s, s / 2 + y * s)
}

/// Which siamese branch a patch feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Template,
    Search,
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    /// Output channels of the four backbone convs.
    pub backbone_channels: Vec<usize>,
    /// Total backbone stride; fixed at 8 by the architecture.
    pub stride: usize,
    pub template_size: usize,
    pub search_size: usize,
    /// Number of 3x3 convs after correlation, 1..=3.
    pub head_tower_depth: usize,
    /// Rows/cols cropped from each side of the backbone output (the
    /// deep-backbone border trick uses 4).
    pub crop_border: usize,
    pub quality_mode: QualityMode,
    /// Per-cell classification channels (1 for per-pixel prediction;
    /// the anchor ablation uses one per anchor).
    pub cls_out_channels: usize,
    /// Regression channels (4 for per-pixel; 4 per anchor otherwise).
    pub reg_out_channels: usize,
    /// Whether the quality head exists at all.
    pub quality_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone_channels: vec![16, 32, 32, 32],
            stride: 8,
            template_size: 64,
            search_size: 128,
            head_tower_depth: 2,
            crop_border: 0,
            quality_mode: QualityMode::Pss,
            cls_out_channels: 1,
            reg_out_channels: 4,
            quality_head: true,
        }
    }
}

/// Geometry of the score grid inside the search patch.
///
/// The label frame used by the codec anchors cell (0,0) at pixel
/// `floor(s/2)`; structurally the grid footprint sits centered in the
/// search patch, offset by [`ScoreGrid::label_shift`] from the label
/// frame. Boxes convert between the two frames by pure translation.
#[derive(Clone, Copy, Debug)]
pub struct ScoreGrid {
    pub n: usize,
    pub stride: usize,
    /// Patch-frame pixel of cell (0,0): `(X - 1 - (n-1)*s) / 2`.
    pub origin: f64,
}

impl ScoreGrid {
    /// Translation taking label-frame coordinates to patch-frame ones.
    pub fn label_shift(&self) -> f64 {
        self.origin - (self.stride / 2) as f64
    }

    /// Patch-frame center pixel of a cell.
    pub fn cell_center(&self, x: usize, y: usize) -> (f64, f64) {
        (
            self.origin + (x * self.stride) as f64,
            self.origin + (y * self.stride) as f64,
        )
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backbone_channels.len() != 4 || self.backbone_channels.contains(&0) {
            return Err(Error::Invalid {
                what: "backbone_channels",
                detail: format!("need 4 nonzero entries, got {:?}", self.backbone_channels),
            });
        }
        if self.stride != 8 {
            return Err(Error::Invalid {
                what: "stride",
                detail: format!("this backbone has total stride 8, config says {}", self.stride),
            });
        }
        if !(1..=3).contains(&self.head_tower_depth) {
            return Err(Error::Invalid {
                what: "head_tower_depth",
                detail: format!("must be 1..=3, got {}", self.head_tower_depth),
            });
        }
        if self.cls_out_channels == 0 || self.reg_out_channels != 4 * self.cls_out_channels {
            return Err(Error::Invalid {
                what: "head channels",
                detail: format!(
                    "reg_out_channels ({}) must be 4 * cls_out_channels ({})",
                    self.reg_out_channels, self.cls_out_channels
                ),
            });
        }
        self.score_size()?;
        Ok(())
    }

    /// Spatial size of the backbone output for a square input.
    fn backbone_out(&self, size: usize) -> Result<usize> {
        let mut h = conv_out_len(size, 3, 2, 1)?; // conv1
        if h < 2 {
            return Err(Error::Invalid {
                what: "patch size",
                detail: format!("{size} px collapses before pooling"),
            });
        }
        h /= 2; // maxpool 2x2 stride 2
        h = conv_out_len(h, 3, 1, 1)?; // conv2
        h = conv_out_len(h, 3, 2, 1)?; // conv3
        h = conv_out_len(h, 3, 1, 1)?; // conv4
        if h <= 2 * self.crop_border {
            return Err(Error::Invalid {
                what: "crop_border",
                detail: format!("border {} leaves nothing of a {h}-px feature map", self.crop_border),
            });
        }
        Ok(h - 2 * self.crop_border)
    }

    /// Feature size after the two valid 3x3 adjustment convs.
    fn adjusted_feat(&self, size: usize) -> Result<usize> {
        let f = self.backbone_out(size)?;
        if f < 5 {
            return Err(Error::Invalid {
                what: "patch size",
                detail: format!("feature map {f}px too small for the adjustment convs"),
            });
        }
        Ok(f - 4)
    }

    /// Score-map side length N by shape propagation. Errors when the
    /// configuration degenerates (N < 3).
    pub fn score_size(&self) -> Result<usize> {
        let fz = self.adjusted_feat(self.template_size)?;
        let fx = self.adjusted_feat(self.search_size)?;
        if fz > fx {
            return Err(Error::Invalid {
                what: "patch sizes",
                detail: format!("template features ({fz}) exceed search features ({fx})"),
            });
        }
        let corr = fx - fz + 1;
        let n = corr.saturating_sub(2 * self.head_tower_depth);
        if n < 3 {
            return Err(Error::Invalid {
                what: "model config",
                detail: format!("score map {n}x{n} degenerate (need N >= 3)"),
            });
        }
        Ok(n)
    }

    pub fn score_grid(&self) -> Result<ScoreGrid> {
        let n = self.score_size()?;
        let origin = (self.search_size as f64 - 1.0 - ((n - 1) * self.stride) as f64) / 2.0;
        Ok(ScoreGrid { n, stride: self.stride, origin })
    }

    fn feat_channels(&self) -> usize {
        *self.backbone_channels.last().unwrap()
    }
}

enum InitKind {
    /// Fan-in scaled Gaussian, the stand-in for a pretrained trunk.
    FanIn,
    /// Zero-centered Gaussian with std 0.01 (head layers).
    Head,
    Zero,
}

/// The model: named parameter tensors plus its config.
#[derive(Clone, Debug)]
pub struct SiamModel {
    pub cfg: ModelConfig,
    pub params: BTreeMap<String, Tensor<f32>>,
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, InitKind)> {
    let c = &cfg.backbone_channels;
    let f = cfg.feat_channels();
    let mut specs: Vec<(String, Vec<usize>, InitKind)> = Vec::new();
    let mut conv = |name: &str, co: usize, ci: usize, k: usize, kind: InitKind| {
        specs.push((format!("{name}.weight"), vec![co, ci, k, k], kind));
        specs.push((format!("{name}.bias"), vec![co], InitKind::Zero));
    };
    conv("backbone.conv1", c[0], 3, 3, InitKind::FanIn);
    conv("backbone.conv2", c[1], c[0], 3, InitKind::FanIn);
    conv("backbone.conv3", c[2], c[1], 3, InitKind::FanIn);
    conv("backbone.conv4", c[3], c[2], 3, InitKind::FanIn);
    for task in ["cls", "reg"] {
        conv(&format!("adjust.{task}0"), f, f, 3, InitKind::FanIn);
        conv(&format!("adjust.{task}1"), f, f, 3, InitKind::FanIn);
        for d in 0..cfg.head_tower_depth {
            conv(&format!("tower.{task}{d}"), f, f, 3, InitKind::Head);
        }
    }
    conv("head.cls", cfg.cls_out_channels, f, 1, InitKind::Head);
    if cfg.quality_head {
        conv("head.quality", 1, f, 1, InitKind::Head);
    }
    conv("head.reg", cfg.reg_out_channels, f, 1, InitKind::Head);
    specs
}

/// Builds a model with deterministic, seed-driven initialization:
/// head-side convs are Gaussian(0, 0.01), the trunk uses fan-in scaled
/// Gaussians as the stand-in for a pretrained backbone, biases are zero.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<SiamModel> {
    cfg.validate()?;
    let mut rng = Rng::new(seed).fork(0x6d6f64656c); // "model"
    let mut params = BTreeMap::new();
    for (name, shape, kind) in param_specs(cfg) {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match kind {
            InitKind::Zero => vec![0.0; n],
            InitKind::Head => (0..n).map(|_| rng.normal_scaled(0.0, 0.01) as f32).collect(),
            InitKind::FanIn => {
                let fan_in: usize = shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.normal_scaled(0.0, std) as f32).collect()
            }
        };
        params.insert(name, Tensor::from_vec(&shape, data)?);
    }
    Ok(SiamModel { cfg: cfg.clone(), params })
}

impl SiamModel {
    pub fn params_f64(&self) -> BTreeMap<String, Tensor<f64>> {
        self.params.iter().map(|(k, v)| (k.clone(), v.to_f64())).collect()
    }

    /// Template-branch features, computed once at tracker init.
    pub fn template_feats(&self, patch: &Tensor<f32>) -> Result<TemplateFeats<f32>> {
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &self.params);
        let pid = tape.input(patch.clone());
        let (cls, reg) = embed(&mut tape, &ids, &self.cfg, pid, Branch::Template)?;
        Ok(TemplateFeats { cls: tape.value(cls).clone(), reg: tape.value(reg).clone() })
    }

    /// Full head output for one search patch against fixed template
    /// features (the per-frame inference path).
    pub fn forward_infer(
        &self,
        z: &TemplateFeats<f32>,
        x_patch: &Tensor<f32>,
    ) -> Result<HeadOutput> {
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &self.params);
        let zc = tape.input(z.cls.clone());
        let zr = tape.input(z.reg.clone());
        let xp = tape.input(x_patch.clone());
        let (xc, xr) = embed(&mut tape, &ids, &self.cfg, xp, Branch::Search)?;
        let head = forward_heads(&mut tape, &ids, &self.cfg, (zc, zr), (xc, xr))?;
        let dist = decode_distances(&mut tape, head.reg_raw, self.cfg.stride)?;
        Ok(HeadOutput {
            cls: tape.value(head.cls).clone(),
            quality: head.quality.map(|q| tape.value(q).clone()),
            reg_raw: tape.value(head.reg_raw).clone(),
            distances: tape.value(dist).clone(),
        })
    }
}

/// Fixed template-branch features kept in [`crate::track::TrackerState`].
#[derive(Clone, Debug)]
pub struct TemplateFeats<E: Elem> {
    pub cls: Tensor<E>,
    pub reg: Tensor<E>,
}

/// Inference-side head maps (concrete tensors, off-tape).
#[derive(Clone, Debug)]
pub struct HeadOutput {
    /// `[cls_out_channels, n, n]` pre-sigmoid logits.
    pub cls: Tensor<f32>,
    /// `[1, n, n]` pre-sigmoid logits, absent when the head is disabled.
    pub quality: Option<Tensor<f32>>,
    /// Raw regression output before the distance mapping.
    pub reg_raw: Tensor<f32>,
    /// `stride * exp(reg_raw)`, always positive.
    pub distances: Tensor<f32>,
}

/// Tape-side handles to the three head maps.
#[derive(Clone, Copy, Debug)]
pub struct TapeHead {
    pub cls: ValId,
    pub quality: Option<ValId>,
    pub reg_raw: ValId,
    pub n: usize,
}

/// Registers every model parameter as a tape leaf, by name.
pub fn register_params<E: Elem>(
    tape: &mut Tape<E>,
    params: &BTreeMap<String, Tensor<E>>,
) -> BTreeMap<String, ValId> {
    params.iter().map(|(k, v)| (k.clone(), tape.input(v.clone()))).collect()
}

fn pid(ids: &BTreeMap<String, ValId>, name: &str) -> ValId {
    *ids.get(name).unwrap_or_else(|| panic!("missing model parameter {name}"))
}

fn conv_block<E: Elem>(
    tape: &mut Tape<E>,
    ids: &BTreeMap<String, ValId>,
    name: &str,
    x: ValId,
    stride: usize,
    pad: usize,
) -> Result<ValId> {
    let w = pid(ids, &format!("{name}.weight"));
    let b = pid(ids, &format!("{name}.bias"));
    let y = tape.conv2d(x, w, stride, pad)?;
    tape.bias_add(y, b)
}

/// Runs the shared backbone and one task-specific adjustment pair,
/// returning `(psi_cls, psi_reg)` features for the given branch.
pub fn embed<E: Elem>(
    tape: &mut Tape<E>,
    ids: &BTreeMap<String, ValId>,
    cfg: &ModelConfig,
    patch: ValId,
    branch: Branch,
) -> Result<(ValId, ValId)> {
    let want = match branch {
        Branch::Template => cfg.template_size,
        Branch::Search => cfg.search_size,
    };
    let shape = tape.shape(patch).to_vec();
    if shape != [3, want, want] {
        return Err(Error::Shape {
            op: "embed",
            detail: format!("{branch:?} patch must be [3, {want}, {want}], got {shape:?}"),
        });
    }
    let mut x = conv_block(tape, ids, "backbone.conv1", patch, 2, 1)?;
    x = tape.relu(x)?;
    x = tape.maxpool2(x)?;
    x = conv_block(tape, ids, "backbone.conv2", x, 1, 1)?;
    x = tape.relu(x)?;
    x = conv_block(tape, ids, "backbone.conv3", x, 2, 1)?;
    x = tape.relu(x)?;
    x = conv_block(tape, ids, "backbone.conv4", x, 1, 1)?;
    x = tape.relu(x)?;
    x = tape.crop_border(x, cfg.crop_border)?;

    let mut feats = [x, x];
    for (i, task) in ["cls", "reg"].iter().enumerate() {
        let mut f = conv_block(tape, ids, &format!("adjust.{task}0"), x, 1, 0)?;
        f = tape.relu(f)?;
        f = conv_block(tape, ids, &format!("adjust.{task}1"), f, 1, 0)?;
        feats[i] = f;
    }
    Ok((feats[0], feats[1]))
}

/// Correlates template and search features per task and applies towers
/// plus the 1x1 output heads. The quality head branches off the
/// classification tower.
pub fn forward_heads<E: Elem>(
    tape: &mut Tape<E>,
    ids: &BTreeMap<String, ValId>,
    cfg: &ModelConfig,
    z: (ValId, ValId),
    x: (ValId, ValId),
) -> Result<TapeHead> {
    let mut trunks = [z.0, z.1]; // placeholder init, overwritten below
    for (i, (task, (zf, xf))) in ["cls", "reg"].iter().zip([(z.0, x.0), (z.1, x.1)]).enumerate() {
        let mut t = tape.xcorr_depthwise(zf, xf)?;
        for d in 0..cfg.head_tower_depth {
            t = conv_block(tape, ids, &format!("tower.{task}{d}"), t, 1, 0)?;
            t = tape.relu(t)?;
        }
        trunks[i] = t;
    }
    let cls = conv_block(tape, ids, "head.cls", trunks[0], 1, 0)?;
    let quality = if cfg.quality_head {
        Some(conv_block(tape, ids, "head.quality", trunks[0], 1, 0)?)
    } else {
        None
    };
    let reg_raw = conv_block(tape, ids, "head.reg", trunks[1], 1, 0)?;
    let n = tape.shape(cls)[1];
    Ok(TapeHead { cls, quality, reg_raw, n })
}

/// Maps raw regression output to positive distances: `s * exp(raw)`.
pub fn decode_distances<E: Elem>(tape: &mut Tape<E>, reg_raw: ValId, stride: usize) -> Result<ValId> {
    let e = tape.exp(reg_raw)?;
    tape.scale(e, E::from_f64(stride as f64))
}

/// Embeds both patches and runs the heads; the training-step forward.
pub fn forward_pair<E: Elem>(
    tape: &mut Tape<E>,
    ids: &BTreeMap<String, ValId>,
    cfg: &ModelConfig,
    z_patch: ValId,
    x_patch: ValId,
) -> Result<TapeHead> {
    let z = embed(tape, ids, cfg, z_patch, Branch::Template)?;
    let x = embed(tape, ids, cfg, x_patch, Branch::Search)?;
    forward_heads(tape, ids, cfg, z, x)
}

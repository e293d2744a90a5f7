//! Subcommand implementations. Every command echoes its fully-resolved
//! configuration into the output directory so runs are reproducible
//! from the artifacts alone.

use crate::config::RunConfig;
use sfpp_core::anchor::{anchor_iou_analysis, anchor_objective, init_anchor_model, AnchorHead};
use sfpp_core::codec::{iou, QualityMode};
use sfpp_core::eval::{eval_set, score_histograms, split_scores_by_outcome, summary_kv, EvalReport};
use sfpp_core::imgio::write_pgm_normalized;
use sfpp_core::model::{init_model, SiamModel};
use sfpp_core::synth::{gen_world, load_sequence, save_sequence, scale_ratio_stats, Sequence};
use sfpp_core::track::{
    results_csv, track_sequence, ModelHead, TrackOutput,
};
use sfpp_core::train::{
    load_checkpoint, loss_log_csv, save_checkpoint, train, train_with_objective, Checkpoint,
};
use sfpp_core::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

fn write_echo(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.resolved.ini"), cfg.echo())?;
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_echo(cfg, out)?;
    let wcfg = cfg.world()?;
    let (train_base, eval_base) = cfg.world_seeds()?;
    let n_train = cfg.usize("world", "train_sequences")?;
    let n_eval = cfg.usize("world", "eval_sequences")?;
    let train_world = gen_world(&wcfg, train_base, n_train)?;
    let eval_world = gen_world(&wcfg, eval_base, n_eval)?;
    for (split, world) in [("train", &train_world), ("eval", &eval_world)] {
        for (i, seq) in world.iter().enumerate() {
            save_sequence(&out.join(split).join(format!("seq_{i:03}")), seq)?;
        }
    }
    let stats = scale_ratio_stats(&train_world, 20)?;
    fs::write(out.join("scale_hist.csv"), stats.scale_hist.to_csv())?;
    fs::write(out.join("ratio_hist.csv"), stats.ratio_hist.to_csv())?;
    let mut summary = String::new();
    let _ = writeln!(summary, "scale_q25={:.6}", stats.scale_quantiles.0);
    let _ = writeln!(summary, "scale_median={:.6}", stats.scale_quantiles.1);
    let _ = writeln!(summary, "scale_q75={:.6}", stats.scale_quantiles.2);
    let _ = writeln!(summary, "ratio_q25={:.6}", stats.ratio_quantiles.0);
    let _ = writeln!(summary, "ratio_median={:.6}", stats.ratio_quantiles.1);
    let _ = writeln!(summary, "ratio_q75={:.6}", stats.ratio_quantiles.2);
    fs::write(out.join("stats_summary.txt"), summary)?;
    println!(
        "synth: {} train + {} eval sequences under {}",
        n_train,
        n_eval,
        out.display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_echo(cfg, out)?;
    let wcfg = cfg.world()?;
    let (train_base, _) = cfg.world_seeds()?;
    let world = gen_world(&wcfg, train_base, cfg.usize("world", "train_sequences")?)?;
    let mcfg = cfg.model()?;
    let mut model = init_model(&mcfg, cfg.seed()?)?;
    let log = train(&mut model, &world, &cfg.train()?, &cfg.loss()?)?;
    fs::write(out.join("loss_log.csv"), loss_log_csv(&log))?;
    let ckpt = Checkpoint::from_model(&model, &BTreeMap::new(), log.len());
    save_checkpoint(&out.join("checkpoint.sfpp"), &ckpt)?;
    let last = log.last().map(|l| l.report.total).unwrap_or(f64::NAN);
    println!(
        "train: {} steps, final batch loss {last:.4}, checkpoint at {}",
        log.len(),
        out.join("checkpoint.sfpp").display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<SiamModel> {
    let (model, _, _) = load_checkpoint(path)?.into_model()?;
    Ok(model)
}

/// A sequence directory either holds `groundtruth.csv` directly or
/// contains child sequence directories.
fn collect_sequences(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    if path.join("groundtruth.csv").exists() {
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "seq".into());
        return Ok(vec![(name, path.to_path_buf())]);
    }
    let mut found = Vec::new();
    for entry in fs::read_dir(path)? {
        let p = entry?.path();
        if p.is_dir() && p.join("groundtruth.csv").exists() {
            found.push((p.file_name().unwrap().to_string_lossy().into_owned(), p));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::Invalid {
            what: "sequence path",
            detail: format!("{} holds no sequence directories", path.display()),
        });
    }
    Ok(found)
}

/// Runs sequences across `jobs` threads; outputs merge back in input
/// order, so the artifacts match a single-threaded run byte for byte.
fn track_all<F>(seqs: &[(String, Sequence)], jobs: usize, run: F) -> Result<Vec<TrackOutput>>
where
    F: Fn(&Sequence) -> Result<TrackOutput> + Sync,
{
    if jobs <= 1 || seqs.len() <= 1 {
        return seqs.iter().map(|(_, s)| run(s)).collect();
    }
    let chunk = seqs.len().div_ceil(jobs);
    let indexed: Vec<(usize, Result<TrackOutput>)> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (ci, part) in seqs.chunks(chunk).enumerate() {
            let run = &run;
            handles.push(scope.spawn(move || {
                part.iter()
                    .enumerate()
                    .map(|(j, (_, s))| (ci * chunk + j, run(s)))
                    .collect::<Vec<_>>()
            }));
        }
        handles.into_iter().flat_map(|h| h.join().expect("tracker thread panicked")).collect()
    });
    let mut slots: Vec<Option<Result<TrackOutput>>> = (0..seqs.len()).map(|_| None).collect();
    for (i, r) in indexed {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|o| o.expect("every sequence tracked")).collect()
}

pub fn cmd_track(
    cfg: &RunConfig,
    checkpoint: &Path,
    seq_path: &Path,
    out: &Path,
    dump_maps: bool,
) -> Result<()> {
    write_echo(cfg, out)?;
    let model = load_model(checkpoint)?;
    let postproc = cfg.postproc()?;
    let named = collect_sequences(seq_path)?;
    let mut seqs = Vec::new();
    for (name, dir) in named {
        seqs.push((name, load_sequence(&dir)?));
    }
    let outputs = track_all(&seqs, cfg.jobs()?, |seq| {
        track_sequence(ModelHead::new(model.clone()), seq, postproc, dump_maps)
    })?;
    for ((name, _), output) in seqs.iter().zip(&outputs) {
        fs::write(out.join(format!("{name}_results.csv")), results_csv(output))?;
        if let Some(maps) = &output.score_maps {
            let map_dir = out.join(format!("{name}_maps"));
            fs::create_dir_all(&map_dir)?;
            let n = model.cfg.score_size()?;
            for (t, map) in maps.iter().enumerate() {
                let frame = t + 1;
                let mut csv = String::new();
                for y in 0..n {
                    let row: Vec<String> =
                        (0..n).map(|x| format!("{:.6}", map[y * n + x])).collect();
                    let _ = writeln!(csv, "{}", row.join(","));
                }
                fs::write(map_dir.join(format!("scoremap_{frame:06}.csv")), csv)?;
                let as_f32: Vec<f32> = map.iter().map(|&v| v as f32).collect();
                write_pgm_normalized(
                    &map_dir.join(format!("scoremap_{frame:06}.pgm")),
                    &as_f32,
                    n,
                    n,
                )?;
            }
        }
    }
    println!("track: {} sequences into {}", seqs.len(), out.display());
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, results: &Path, gt: &Path, out: &Path) -> Result<()> {
    write_echo(cfg, out)?;
    // pair result CSVs with ground-truth sequence directories
    let pairs: Vec<(String, PathBuf, PathBuf)> = if results.is_file() {
        let gt_dir = if gt.join("groundtruth.csv").exists() {
            gt.to_path_buf()
        } else {
            return Err(Error::Invalid {
                what: "eval input",
                detail: format!("{} is not a sequence directory", gt.display()),
            });
        };
        vec![("seq".into(), results.to_path_buf(), gt_dir)]
    } else {
        let mut found = Vec::new();
        for entry in fs::read_dir(results)? {
            let p = entry?.path();
            let Some(name) = p.file_name().and_then(|s| s.to_str()) else { continue };
            if let Some(stem) = name.strip_suffix("_results.csv") {
                let gt_dir = gt.join(stem);
                if !gt_dir.join("groundtruth.csv").exists() {
                    return Err(Error::Invalid {
                        what: "eval input",
                        detail: format!("no ground truth for {stem} under {}", gt.display()),
                    });
                }
                found.push((stem.to_string(), p.clone(), gt_dir));
            }
        }
        found.sort();
        if found.is_empty() {
            return Err(Error::Invalid {
                what: "eval input",
                detail: format!("no *_results.csv under {}", results.display()),
            });
        }
        found
    };

    let mut frame_csv = String::from("seq,frame,iou,center_err\n");
    let mut boxed = Vec::new();
    for (name, results_path, gt_dir) in &pairs {
        let (pred, _) = sfpp_core::track::read_results(results_path)?;
        let seq = load_sequence(gt_dir)?;
        if pred.len() != seq.gt.len() {
            return Err(Error::Invalid {
                what: "eval input",
                detail: format!(
                    "{name}: {} predictions vs {} ground-truth frames",
                    pred.len(),
                    seq.gt.len()
                ),
            });
        }
        for (t, (p, g)) in pred.iter().zip(&seq.gt).enumerate().skip(1) {
            let (pc, gc) = (p.center(), g.center());
            let ce = ((pc.0 - gc.0).powi(2) + (pc.1 - gc.1).powi(2)).sqrt();
            let _ = writeln!(frame_csv, "{name},{t},{:.6},{:.3}", iou(p, g), ce);
        }
        boxed.push((pred, seq.gt));
    }
    let pairs_ref: Vec<(&[sfpp_core::codec::BBox], &[sfpp_core::codec::BBox])> =
        boxed.iter().map(|(p, g)| (p.as_slice(), g.as_slice())).collect();
    let report = eval_set(&pairs_ref)?;
    fs::write(out.join("eval_frames.csv"), frame_csv)?;
    fs::write(out.join("eval_summary.txt"), summary_kv(&report))?;
    println!(
        "eval: {} sequences, AO {:.4}, SR50 {:.4}, failures {}",
        pairs.len(),
        report.ao,
        report.sr50,
        report.failures
    );
    Ok(())
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<bool> {
    let seed = cfg.seed()?;
    let results = sfpp_core::gradcheck::run_battery(seed)?;
    let mut all_pass = true;
    for c in &results {
        println!(
            "gradcheck {:<16} instances={:<3} max_rel_err={:.3e} {}",
            c.name,
            c.instances,
            c.max_rel_err,
            if c.pass { "pass" } else { "FAIL" }
        );
        all_pass &= c.pass;
    }
    println!("gradcheck overall: {}", if all_pass { "pass" } else { "FAIL" });
    Ok(all_pass)
}

/// Per-variant summary row of the ablation table.
struct VariantRow {
    name: &'static str,
    report: EvalReport,
    ks: f64,
    final_loss: f64,
}

fn variant_row(
    name: &'static str,
    outputs: &[TrackOutput],
    world: &[Sequence],
    final_loss: f64,
) -> Result<VariantRow> {
    let mut ious = Vec::new();
    let mut scores = Vec::new();
    let mut pairs = Vec::new();
    for (out, seq) in outputs.iter().zip(world) {
        ious.extend(sfpp_core::eval::frame_ious(&out.boxes, &seq.gt)?);
        scores.extend(out.telemetry.iter().map(|t| t.max_score));
        pairs.push((out.boxes.as_slice(), seq.gt.as_slice()));
    }
    let report = eval_set(&pairs)?;
    let (succ, fail) = split_scores_by_outcome(&ious, &scores);
    let ks = score_histograms(&succ, &fail).ks;
    Ok(VariantRow { name, report, ks, final_loss })
}

/// Trains and evaluates the quality-branch variants (PSS, IoU, none)
/// and the anchor-maxout head under identical seeds and data, then
/// emits the comparison table and the score/IoU histogram CSVs.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_echo(cfg, out)?;
    let wcfg = cfg.world()?;
    let (train_base, eval_base) = cfg.world_seeds()?;
    let train_world = gen_world(&wcfg, train_base, cfg.usize("world", "train_sequences")?)?;
    let eval_world = gen_world(&wcfg, eval_base, cfg.usize("world", "eval_sequences")?)?;
    let tcfg = cfg.train()?;
    let loss_cfg = cfg.loss()?;
    let postproc = cfg.postproc()?;
    let seed = cfg.seed()?;
    let jobs = cfg.jobs()?;
    let named_eval: Vec<(String, Sequence)> =
        eval_world.iter().enumerate().map(|(i, s)| (format!("seq_{i:03}"), s.clone())).collect();

    let mut rows: Vec<VariantRow> = Vec::new();
    let mut pss_model: Option<SiamModel> = None;

    for (name, mode) in [
        ("pss", QualityMode::Pss),
        ("iou", QualityMode::Iou),
        ("none", QualityMode::Off),
    ] {
        let mut mcfg = cfg.model()?;
        mcfg.quality_mode = mode;
        mcfg.quality_head = mode != QualityMode::Off;
        let mut model = init_model(&mcfg, seed)?;
        let log = train(&mut model, &train_world, &tcfg, &loss_cfg)?;
        let final_loss = log.last().map(|l| l.report.total).unwrap_or(f64::NAN);
        fs::write(out.join(format!("{name}_loss_log.csv")), loss_log_csv(&log))?;
        save_checkpoint(
            &out.join(format!("{name}_checkpoint.sfpp")),
            &Checkpoint::from_model(&model, &BTreeMap::new(), log.len()),
        )?;
        let outputs = track_all(&named_eval, jobs, |seq| {
            track_sequence(ModelHead::new(model.clone()), seq, postproc, false)
        })?;
        let row = variant_row(name, &outputs, &eval_world, final_loss)?;
        write_variant_hist(out, name, &outputs, &eval_world)?;
        rows.push(row);
        if mode == QualityMode::Pss {
            pss_model = Some(model);
        }
        println!("ablate: {name} AO {:.4}", rows.last().unwrap().report.ao);
    }

    // cls-only selection on the PSS-trained model (quality-fusion lever)
    let pss_model = pss_model.expect("pss variant trained");
    let outputs = track_all(&named_eval, jobs, |seq| {
        track_sequence(ModelHead::cls_only(pss_model.clone()), seq, postproc, false)
    })?;
    let cls_only = variant_row("pss_cls_only", &outputs, &eval_world, f64::NAN)?;
    println!("ablate: pss_cls_only AO {:.4}", cls_only.report.ao);

    // anchor-maxout variant
    let anchors = cfg.anchors()?;
    let mut anchor_model = init_anchor_model(&cfg.model()?, &anchors, seed)?;
    let objective = anchor_objective(anchors.clone());
    let log = train_with_objective(&mut anchor_model, &train_world, &tcfg, &loss_cfg, &objective)?;
    let anchor_final = log.last().map(|l| l.report.total).unwrap_or(f64::NAN);
    fs::write(out.join("anchor_loss_log.csv"), loss_log_csv(&log))?;
    save_checkpoint(
        &out.join("anchor_checkpoint.sfpp"),
        &Checkpoint::from_model(&anchor_model, &BTreeMap::new(), log.len()),
    )?;
    let anchor_outputs = track_all(&named_eval, jobs, |seq| {
        let head = AnchorHead::new(anchor_model.clone(), anchors.clone())?;
        track_sequence(head, seq, postproc, false)
    })?;
    let anchor_row = variant_row("anchor", &anchor_outputs, &eval_world, anchor_final)?;
    write_variant_hist(out, "anchor", &anchor_outputs, &eval_world)?;

    // predicted-vs-anchor IoU bias histograms
    let mut pred_boxes = Vec::new();
    let mut anchor_boxes = Vec::new();
    let mut gts = Vec::new();
    for (o, seq) in anchor_outputs.iter().zip(&eval_world) {
        for (i, t) in o.telemetry.iter().enumerate() {
            if let Some(ab) = t.sel_anchor_box {
                pred_boxes.push(o.boxes[i + 1]);
                anchor_boxes.push(ab);
                gts.push(seq.gt[i + 1]);
            }
        }
    }
    let bias = anchor_iou_analysis(&pred_boxes, &anchor_boxes, &gts)?;
    fs::write(out.join("anchor_pred_iou_hist.csv"), bias.pred.to_csv())?;
    fs::write(out.join("anchor_anchor_iou_hist.csv"), bias.anchor.to_csv())?;
    rows.push(anchor_row);

    let mut table = String::from("variant,ao,sr50,sr75,precision20,failures,ks,final_loss\n");
    for row in rows.iter().chain(std::iter::once(&cls_only)) {
        let _ = writeln!(
            table,
            "{},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6}",
            row.name,
            row.report.ao,
            row.report.sr50,
            row.report.sr75,
            row.report.precision20,
            row.report.failures,
            row.ks,
            row.final_loss
        );
    }
    fs::write(out.join("comparison.csv"), &table)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "mean_pred_iou={:.6}", bias.mean_pred_iou);
    let _ = writeln!(summary, "mean_anchor_iou={:.6}", bias.mean_anchor_iou);
    for row in rows.iter().chain(std::iter::once(&cls_only)) {
        let _ = writeln!(summary, "{}_ao={:.6}", row.name, row.report.ao);
        let _ = writeln!(summary, "{}_ks={:.6}", row.name, row.ks);
    }
    fs::write(out.join("ablate_summary.txt"), summary)?;
    println!("ablate: table at {}", out.join("comparison.csv").display());
    Ok(())
}

fn write_variant_hist(
    out: &Path,
    name: &str,
    outputs: &[TrackOutput],
    world: &[Sequence],
) -> Result<()> {
    let mut ious = Vec::new();
    let mut scores = Vec::new();
    for (o, seq) in outputs.iter().zip(world) {
        ious.extend(sfpp_core::eval::frame_ious(&o.boxes, &seq.gt)?);
        scores.extend(o.telemetry.iter().map(|t| t.max_score));
    }
    let (succ, fail) = split_scores_by_outcome(&ious, &scores);
    fs::write(
        out.join(format!("{name}_score_hist.csv")),
        score_histograms(&succ, &fail).to_csv(),
    )?;
    Ok(())
}

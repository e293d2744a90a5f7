//! End-to-end exercises of the sfpp binary: artifact layout, byte
//! determinism, exit codes, and the synth -> train -> track -> eval
//! pipeline at a micro budget.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sfpp"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn sfpp");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Micro world/training settings shared by the pipeline tests.
fn micro_args(cmd: &mut Command) -> &mut Command {
    cmd.args([
        "--set", "world.length=8",
        "--set", "world.frame_w=120",
        "--set", "world.frame_h=120",
        "--set", "world.train_sequences=3",
        "--set", "world.eval_sequences=2",
        "--set", "train.total_epochs=2",
        "--set", "train.warmup_epochs=1",
        "--set", "train.pairs_per_epoch=24",
        "--set", "train.batch_size=4",
    ])
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn help_lists_commands_and_keys() {
    let out = run_ok(bin().arg("--help"));
    let text = String::from_utf8_lossy(&out.stdout);
    for word in ["synth", "train", "track", "eval", "gradcheck", "ablate"] {
        assert!(text.contains(word), "usage missing {word}");
    }
    // every config key with its default
    for key in ["penalty_k", "base_lr", "quality_mode", "translation_sigma"] {
        assert!(text.contains(key), "help missing key {key}");
    }
}

#[test]
fn unknown_flags_and_commands_fail_with_usage_errors() {
    let out = bin().arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: config:"), "{err}");

    let out = bin().args(["synth", "--what"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_values_exit_2_with_line_number() {
    let dir = tmp("cli_badcfg");
    let cfg = dir.join("bad.ini");
    std::fs::write(&cfg, "[model]\nhead_tower_depth = 2\nnope = 3\n").unwrap();
    let out = bin()
        .args(["synth", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":3:") && err.contains("nope"), "{err}");
}

#[test]
fn missing_checkpoint_exits_with_io_code() {
    let dir = tmp("cli_missing");
    let out = bin()
        .args(["track", "--checkpoint"])
        .arg(dir.join("absent.sfpp"))
        .arg("--seq")
        .arg(&dir)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn corrupt_checkpoint_exits_with_checkpoint_code() {
    let dir = tmp("cli_corrupt");
    let ckpt = dir.join("bad.sfpp");
    std::fs::write(&ckpt, b"XFPP garbage").unwrap();
    let out = bin()
        .args(["track", "--checkpoint"])
        .arg(&ckpt)
        .arg("--seq")
        .arg(&dir)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: checkpoint:"), "{err}");
}

#[test]
fn pipeline_synth_train_track_eval_is_deterministic() {
    let dir = tmp("cli_pipeline");

    // synth twice -> byte-identical frames and ground truth
    let synth_a = dir.join("synth_a");
    let synth_b = dir.join("synth_b");
    for out in [&synth_a, &synth_b] {
        run_ok(micro_args(bin().args(["synth", "--seed", "5", "--out"]).arg(out)));
    }
    for rel in [
        "train/seq_000/frame_000000.ppm",
        "train/seq_000/groundtruth.csv",
        "eval/seq_001/frame_000003.ppm",
        "scale_hist.csv",
        "config.resolved.ini",
    ] {
        assert_eq!(read(&synth_a.join(rel)), read(&synth_b.join(rel)), "{rel} differs");
    }

    // train twice -> byte-identical checkpoints and loss logs
    let train_a = dir.join("train_a");
    let train_b = dir.join("train_b");
    for out in [&train_a, &train_b] {
        run_ok(micro_args(bin().args(["train", "--seed", "5", "--out"]).arg(out)));
    }
    assert_eq!(
        read(&train_a.join("checkpoint.sfpp")),
        read(&train_b.join("checkpoint.sfpp")),
        "checkpoints differ across identical runs"
    );
    assert_eq!(read(&train_a.join("loss_log.csv")), read(&train_b.join("loss_log.csv")));
    let log = String::from_utf8(read(&train_a.join("loss_log.csv"))).unwrap();
    assert!(log.starts_with("step,lr,total,cls,quality,reg,n_pos\n"));

    // track the eval split, twice, with score-map dumps
    let track_a = dir.join("track_a");
    let track_b = dir.join("track_b");
    for out in [&track_a, &track_b] {
        run_ok(
            bin()
                .args(["track", "--checkpoint"])
                .arg(train_a.join("checkpoint.sfpp"))
                .arg("--seq")
                .arg(synth_a.join("eval"))
                .arg("--out")
                .arg(out)
                .args(["--dump-maps", "--jobs", "2"]),
        );
    }
    assert_eq!(
        read(&track_a.join("seq_000_results.csv")),
        read(&track_b.join("seq_000_results.csv"))
    );
    assert!(track_a.join("seq_000_maps/scoremap_000001.pgm").exists());
    assert!(track_a.join("seq_000_maps/scoremap_000001.csv").exists());
    let results = String::from_utf8(read(&track_a.join("seq_000_results.csv"))).unwrap();
    assert!(results.starts_with("frame,x0,y0,x1,y1,max_score,sel_row,sel_col\n"));
    assert_eq!(results.lines().count(), 9, "8 frames + header");

    // k = 0 and window 0 through CLI flags equals a library reference
    // run byte for byte (raw-argmax behavior)
    let track_raw = dir.join("track_raw");
    run_ok(
        bin()
            .args(["track", "--checkpoint"])
            .arg(train_a.join("checkpoint.sfpp"))
            .arg("--seq")
            .arg(synth_a.join("eval/seq_000"))
            .arg("--out")
            .arg(&track_raw)
            .args(["--set", "track.penalty_k=0", "--set", "track.window_influence=0"]),
    );
    {
        use sfpp_core::track::{results_csv, track_sequence, ModelHead, PostprocConfig};
        let (model, _, _) = sfpp_core::train::load_checkpoint(&train_a.join("checkpoint.sfpp"))
            .unwrap()
            .into_model()
            .unwrap();
        let seq = sfpp_core::synth::load_sequence(&synth_a.join("eval/seq_000")).unwrap();
        let pp = PostprocConfig { k: 0.0, omega: 0.0, ..Default::default() };
        let reference = results_csv(&track_sequence(ModelHead::new(model), &seq, pp, false).unwrap());
        assert_eq!(
            String::from_utf8(read(&track_raw.join("seq_000_results.csv"))).unwrap(),
            reference,
            "CLI raw-argmax run must match the library reference"
        );
    }

    // eval the tracked results
    let eval_out = dir.join("eval_out");
    run_ok(
        bin()
            .args(["eval", "--results"])
            .arg(&track_a)
            .arg("--gt")
            .arg(synth_a.join("eval"))
            .arg("--out")
            .arg(&eval_out),
    );
    let summary = String::from_utf8(read(&eval_out.join("eval_summary.txt"))).unwrap();
    assert!(summary.contains("AO="), "{summary}");
    assert!(summary.contains("failures="));
    let frames = String::from_utf8(read(&eval_out.join("eval_frames.csv"))).unwrap();
    assert!(frames.starts_with("seq,frame,iou,center_err\n"));

    // perfect results: feeding ground truth back gives AO = 1
    let gt_results = dir.join("gt_results.csv");
    let gt_csv = {
        let text = String::from_utf8(read(&synth_a.join("eval/seq_000/groundtruth.csv"))).unwrap();
        let mut out = String::from("frame,x0,y0,x1,y1,max_score,sel_row,sel_col\n");
        for line in text.lines() {
            let f: Vec<&str> = line.split(',').collect();
            out.push_str(&format!(
                "{},{},{},{},{},1.0,0,0\n",
                f[0], f[1], f[2], f[3], f[4]
            ));
        }
        out
    };
    std::fs::write(&gt_results, gt_csv).unwrap();
    let eval_perfect = dir.join("eval_perfect");
    run_ok(
        bin()
            .args(["eval", "--results"])
            .arg(&gt_results)
            .arg("--gt")
            .arg(synth_a.join("eval/seq_000"))
            .arg("--out")
            .arg(&eval_perfect),
    );
    let summary = String::from_utf8(read(&eval_perfect.join("eval_summary.txt"))).unwrap();
    assert!(summary.contains("AO=1.000000"), "{summary}");
}

#[test]
fn seed_env_var_overrides_config_and_flag_wins() {
    let dir = tmp("cli_seed");
    let a = dir.join("a");
    let b = dir.join("b");
    // SFPP_SEED overrides the default seed: two different env seeds differ
    run_ok(micro_args(bin().args(["synth", "--out"]).arg(&a).env("SFPP_SEED", "11")));
    run_ok(micro_args(bin().args(["synth", "--out"]).arg(&b).env("SFPP_SEED", "12")));
    assert_ne!(
        read(&a.join("train/seq_000/frame_000000.ppm")),
        read(&b.join("train/seq_000/frame_000000.ppm"))
    );
    // --seed beats the env var
    let c = dir.join("c");
    run_ok(micro_args(
        bin().args(["synth", "--seed", "11", "--out"]).arg(&c).env("SFPP_SEED", "999"),
    ));
    assert_eq!(
        read(&a.join("train/seq_000/frame_000000.ppm")),
        read(&c.join("train/seq_000/frame_000000.ppm"))
    );
    // the resolved seed is echoed
    let echo = String::from_utf8(read(&c.join("config.resolved.ini"))).unwrap();
    assert!(echo.contains("seed = 11"), "{echo}");
}

#[test]
fn ablate_emits_comparison_table_and_histograms() {
    let dir = tmp("cli_ablate");
    let out = dir.join("out");
    run_ok(micro_args(bin().args(["ablate", "--seed", "3", "--out"]).arg(&out)));
    let table = String::from_utf8(read(&out.join("comparison.csv"))).unwrap();
    assert!(table.starts_with("variant,ao,sr50,sr75,precision20,failures,ks,final_loss\n"));
    for variant in ["pss", "iou", "none", "anchor", "pss_cls_only"] {
        assert!(
            table.lines().any(|l| l.starts_with(&format!("{variant},"))),
            "missing {variant} row in\n{table}"
        );
    }
    for file in [
        "pss_score_hist.csv",
        "anchor_score_hist.csv",
        "anchor_pred_iou_hist.csv",
        "anchor_anchor_iou_hist.csv",
        "ablate_summary.txt",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
}

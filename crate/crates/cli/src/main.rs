//! `sfpp` — operator CLI for the anchor-free siamese tracker.
//!
//! Subcommands: synth, train, track, eval, gradcheck, ablate. Runs are
//! reproducible: identical config + seed produce byte-identical
//! artifacts, and every output directory receives the fully-resolved
//! configuration.

mod commands;
mod config;

use config::RunConfig;
use sfpp_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "\
sfpp — anchor-free siamese tracker

USAGE: sfpp <COMMAND> [OPTIONS]

COMMANDS:
  synth      generate synthetic sequence directories + data statistics
  train      train a model on the synthetic world, write a checkpoint
  track      run the tracker over sequence directories
  eval       score results CSVs against ground truth
  gradcheck  finite-difference oracle over all ops and the objective
  ablate     quality-branch (pss/iou/none) and anchor-maxout comparison

COMMON OPTIONS:
  --config <FILE>     load a [section] key=value config file
  --set <sec.key=v>   override one config value (repeatable)
  --seed <N>          override run.seed (also: env SFPP_SEED)
  --out <DIR>         output directory (synth/train/track/eval/ablate)
  --jobs <N>          sequence-level parallelism (track/eval/ablate)
  --help              this text, plus every config key for a command

COMMAND OPTIONS:
  track: --checkpoint <FILE> --seq <DIR> [--dump-maps]
  eval:  --results <FILE|DIR> --gt <DIR>

EXIT CODES:
  0 ok, 2 config/parse, 3 io, 4 numeric/shape, 5 checkpoint,
  6 training, 7 gradcheck failure, 1 usage/other
";

struct Args {
    command: String,
    config: Option<PathBuf>,
    sets: Vec<String>,
    seed: Option<String>,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    seq: Option<PathBuf>,
    results: Option<PathBuf>,
    gt: Option<PathBuf>,
    jobs: Option<String>,
    dump_maps: bool,
    help: bool,
}

fn parse_args() -> Result<Args, String> {
    let mut argv = std::env::args().skip(1);
    let command = argv.next().unwrap_or_else(|| "--help".into());
    let mut args = Args {
        command,
        config: None,
        sets: Vec::new(),
        seed: None,
        out: None,
        checkpoint: None,
        seq: None,
        results: None,
        gt: None,
        jobs: None,
        dump_maps: false,
        help: false,
    };
    while let Some(flag) = argv.next() {
        let mut value = |name: &str| -> Result<String, String> {
            argv.next().ok_or(format!("{name} needs a value"))
        };
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(value("--config")?)),
            "--set" => args.sets.push(value("--set")?),
            "--seed" => args.seed = Some(value("--seed")?),
            "--out" => args.out = Some(PathBuf::from(value("--out")?)),
            "--checkpoint" => args.checkpoint = Some(PathBuf::from(value("--checkpoint")?)),
            "--seq" => args.seq = Some(PathBuf::from(value("--seq")?)),
            "--results" => args.results = Some(PathBuf::from(value("--results")?)),
            "--gt" => args.gt = Some(PathBuf::from(value("--gt")?)),
            "--jobs" => args.jobs = Some(value("--jobs")?),
            "--dump-maps" => args.dump_maps = true,
            "--help" | "-h" => args.help = true,
            other => return Err(format!("unknown flag {other}")),
        }
    }
    Ok(args)
}

/// Resolution order: defaults < config file < SFPP_SEED < flags.
fn resolve_config(args: &Args) -> sfpp_core::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Ok(env_seed) = std::env::var("SFPP_SEED") {
        cfg.set(&format!("run.seed={env_seed}"))?;
    }
    if let Some(seed) = &args.seed {
        cfg.set(&format!("run.seed={seed}"))?;
    }
    if let Some(jobs) = &args.jobs {
        cfg.set(&format!("run.jobs={jobs}"))?;
    }
    for s in &args.sets {
        cfg.set(s)?;
    }
    // validate the seed eagerly so a bad SFPP_SEED fails loudly
    cfg.seed()?;
    Ok(cfg)
}

fn exit_code_for(e: &Error) -> u8 {
    match e.category() {
        "config" | "parse" => 2,
        "io" => 3,
        "numeric" | "shape" => 4,
        "checkpoint" => 5,
        "train" => 6,
        _ => 1,
    }
}

fn need(path: &Option<PathBuf>, flag: &str) -> sfpp_core::Result<PathBuf> {
    path.clone().ok_or(Error::Invalid {
        what: "arguments",
        detail: format!("{flag} is required for this command"),
    })
}

fn run() -> Result<u8, Error> {
    let args = parse_args().map_err(|detail| Error::Invalid { what: "arguments", detail })?;
    if args.help || args.command == "--help" || args.command == "help" || args.command == "-h" {
        print!("{USAGE}");
        println!("\nCONFIG KEYS (file sections / --set):");
        print!("{}", RunConfig::help_keys());
        return Ok(0);
    }
    let cfg = resolve_config(&args)?;
    match args.command.as_str() {
        "synth" => commands::cmd_synth(&cfg, &need(&args.out, "--out")?)?,
        "train" => commands::cmd_train(&cfg, &need(&args.out, "--out")?)?,
        "track" => commands::cmd_track(
            &cfg,
            &need(&args.checkpoint, "--checkpoint")?,
            &need(&args.seq, "--seq")?,
            &need(&args.out, "--out")?,
            args.dump_maps,
        )?,
        "eval" => commands::cmd_eval(
            &cfg,
            &need(&args.results, "--results")?,
            &need(&args.gt, "--gt")?,
            &need(&args.out, "--out")?,
        )?,
        "gradcheck" => {
            if !commands::cmd_gradcheck(&cfg)? {
                return Ok(7);
            }
        }
        "ablate" => commands::cmd_ablate(&cfg, &need(&args.out, "--out")?)?,
        other => {
            return Err(Error::Invalid {
                what: "arguments",
                detail: format!("unknown command {other}; see --help"),
            })
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}: {e}", e.category());
            ExitCode::from(exit_code_for(&e))
        }
    }
}

//! The `aurk` command line.
//!
//! ```text
//! aurk synth     --config <file> --out <dir>
//! aurk partition --config <file> --data <dir> [--overlays]
//! aurk train     --config <file> --data <dir> --out <checkpoint>
//! aurk infer     --config <file> --checkpoint <file> --data <dir> --out <csv>
//! aurk eval      --config <file> --pred <csv> --gt <csv> --out <prefix> [--method <name>]
//! aurk stats     --config <file> --data <dir> --out <dir> [--correlate <a.csv> <b.csv>]
//! aurk mean-box  --config <file> --data <dir> --out <csv>
//! ```
//!
//! Shared flags: `--seed N`, `--mean-box`, `--dynamic none|convlstm|two_stream`,
//! `--set key=value` (any config key), `--print-config`.

use std::path::PathBuf;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline;

const USAGE: &str = "usage: aurk <synth|partition|train|infer|eval|stats|mean-box> [options]
options:
  --config <file>        load a config file (aurk-config v1)
  --set key=value        override one config key (repeatable)
  --seed <n>             override the seed
  --mean-box             use dataset mean boxes instead of per-frame boxes
  --dynamic <mode>       none | convlstm | two_stream
  --print-config         print the effective config and exit
  --data <dir>           dataset directory
  --out <path>           output path (checkpoint, csv, or directory)
  --checkpoint <file>    model checkpoint (infer)
  --init <file>          warm-start training from a checkpoint (train)
  --pred <csv>           predictions file (eval)
  --gt <csv>             ground-truth labels file (eval)
  --method <name>        column name in the eval report
  --subjects <ids>       comma-separated subject ids to evaluate (eval)
  --overlays             write group-mask overlay images (partition)
  --correlate <a> <b>    two eval CSVs to correlate against durations (stats)
";

struct Args {
    command: String,
    config: Option<PathBuf>,
    sets: Vec<(String, String)>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    init: Option<PathBuf>,
    pred: Option<PathBuf>,
    gt: Option<PathBuf>,
    method: String,
    subjects: Vec<String>,
    overlays: bool,
    correlate: Option<(PathBuf, PathBuf)>,
    print_config: bool,
}

fn parse_args(argv: &[String]) -> Result<Args> {
    let command = argv
        .first()
        .ok_or_else(|| Error::Config("missing command".into()))?
        .clone();
    let mut args = Args {
        command,
        config: None,
        sets: Vec::new(),
        data: None,
        out: None,
        checkpoint: None,
        init: None,
        pred: None,
        gt: None,
        method: "aurk".into(),
        subjects: Vec::new(),
        overlays: false,
        correlate: None,
        print_config: false,
    };
    let mut it = argv[1..].iter();
    let need = |opt: &str, v: Option<&String>| -> Result<String> {
        v.cloned()
            .ok_or_else(|| Error::Config(format!("{opt} needs a value")))
    };
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--config" => args.config = Some(PathBuf::from(need(arg, it.next())?)),
            "--set" => {
                let kv = need(arg, it.next())?;
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config("--set expects key=value".into()))?;
                args.sets.push((k.trim().to_string(), v.trim().to_string()));
            }
            "--seed" => args.sets.push(("seed".into(), need(arg, it.next())?)),
            "--mean-box" => args.sets.push(("mean_box".into(), "true".into())),
            "--dynamic" => args.sets.push(("dynamic".into(), need(arg, it.next())?)),
            "--data" => args.data = Some(PathBuf::from(need(arg, it.next())?)),
            "--out" => args.out = Some(PathBuf::from(need(arg, it.next())?)),
            "--checkpoint" => args.checkpoint = Some(PathBuf::from(need(arg, it.next())?)),
            "--init" => args.init = Some(PathBuf::from(need(arg, it.next())?)),
            "--pred" => args.pred = Some(PathBuf::from(need(arg, it.next())?)),
            "--gt" => args.gt = Some(PathBuf::from(need(arg, it.next())?)),
            "--method" => args.method = need(arg, it.next())?,
            "--subjects" => {
                args.subjects = need(arg, it.next())?
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
            }
            "--overlays" => args.overlays = true,
            "--correlate" => {
                let a = PathBuf::from(need(arg, it.next())?);
                let b = PathBuf::from(need(arg, it.next())?);
                args.correlate = Some((a, b));
            }
            "--print-config" => args.print_config = true,
            other => return Err(Error::Config(format!("unknown option {other:?}"))),
        }
    }
    Ok(args)
}

fn build_config(args: &Args) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for (k, v) in &args.sets {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Config(format!("missing {what}")))
}

pub fn run(argv: &[String]) -> Result<()> {
    if argv.is_empty() || argv[0] == "--help" || argv[0] == "-h" || argv[0] == "help" {
        print!("{USAGE}");
        return Ok(());
    }
    let args = parse_args(argv)?;
    let cfg = build_config(&args)?;
    if args.print_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    match args.command.as_str() {
        "synth" => {
            let out = require(&args.out, "--out <dir>")?;
            pipeline::cmd_synth(&cfg, &out)?;
            println!(
                "synth: wrote {} train + {} test frames under {}",
                cfg.synth_frames,
                cfg.synth_test_frames,
                out.display()
            );
        }
        "partition" => {
            let data = require(&args.data, "--data <dir>")?;
            let outcome = pipeline::cmd_partition(&cfg, &data, args.overlays)?;
            println!(
                "partition: {} frames, cache {}",
                outcome.frames,
                if outcome.hit { "hit" } else { "rebuilt" }
            );
        }
        "train" => {
            let data = require(&args.data, "--data <dir>")?;
            let out = require(&args.out, "--out <checkpoint>")?;
            let artifacts = pipeline::cmd_train(&cfg, &data, &out, args.init.as_deref())?;
            let last = artifacts.losses.last().map(|p| p.loss).unwrap_or(f64::NAN);
            println!(
                "train: {} iterations, final loss {last:.4}, checkpoint {}",
                artifacts.losses.len(),
                artifacts.checkpoint_path.display()
            );
        }
        "infer" => {
            let ckpt = require(&args.checkpoint, "--checkpoint <file>")?;
            let data = require(&args.data, "--data <dir>")?;
            let out = require(&args.out, "--out <csv>")?;
            let path = pipeline::cmd_infer(&cfg, &ckpt, &data, &out)?;
            println!("infer: predictions written to {}", path.display());
        }
        "eval" => {
            let pred = require(&args.pred, "--pred <csv>")?;
            let gt = require(&args.gt, "--gt <csv>")?;
            let out = require(&args.out, "--out <prefix>")?;
            let report =
                pipeline::cmd_eval(cfg.table()?, &pred, &gt, &out, &args.method, &args.subjects)?;
            for (au, f1) in &report.per_au_f1 {
                println!("AU {au:>2}  F1 {f1:.4}");
            }
            println!("Avg    F1 {:.4}", report.avg_f1);
        }
        "stats" => {
            let data = require(&args.data, "--data <dir>")?;
            let out = require(&args.out, "--out <dir>")?;
            let correlate = args
                .correlate
                .as_ref()
                .map(|(a, b)| (a.as_path(), b.as_path()));
            pipeline::cmd_stats(&cfg, &data, &out, correlate)?;
            println!("stats: reports written under {}", out.display());
        }
        "mean-box" => {
            let data = require(&args.data, "--data <dir>")?;
            let out = require(&args.out, "--out <csv>")?;
            let path = pipeline::cmd_mean_box(&cfg, &data, &out)?;
            println!("mean-box: table written to {}", path.display());
        }
        other => {
            return Err(Error::Config(format!(
                "unknown command {other:?}; see `aurk --help`"
            )))
        }
    }
    Ok(())
}

pub fn run_main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = run(&argv) {
        eprintln!("aurk: {e}");
        std::process::exit(1);
    }
}

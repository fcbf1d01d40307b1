//! Command-line entry point.
//!
//! Subcommands: generate, inspect, verify, contraction, weights, metrics.
//! Exit codes: 0 success, 1 check/solver failure, 2 usage or config error.

use std::path::PathBuf;
use std::process::ExitCode;

use convmg_cli::config::RunConfig;
use convmg_cli::{dataset, reports, verify, CliError};

const USAGE: &str = "\
convmg - multilevel FE solver with a convolutional twin

USAGE:
  convmg generate    --config PATH [--out DIR] [--workers N] [--seed S]
  convmg inspect     --data DIR
  convmg verify      [--config PATH] [--json]
  convmg contraction [--config PATH] [--out FILE]
  convmg weights     [--config PATH] [--out FILE]
  convmg metrics     [--config PATH] [--out FILE] [--json]

Commands:
  generate     sample a multilevel dataset and write it to disk
  inspect      validate a dataset directory and print its manifest summary
  verify       run the equivalence suite and print a pass/fail table
  contraction  emit per-cycle V-cycle contraction ratios as CSV
  weights      emit conv-network parameter counts as CSV
  metrics      emit mean-relative FE error metrics as CSV (or JSON)

The JSON config schema is documented in docs/config-schema.md; every
section has defaults, so `{}` is a valid config.
";

#[derive(Debug, Default)]
struct Args {
    command: Option<String>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    data: Option<PathBuf>,
    workers: Option<usize>,
    seed: Option<u64>,
    json: bool,
}

fn parse_args(argv: &[String]) -> Result<Args, String> {
    let mut args = Args::default();
    let mut it = argv.iter();
    args.command = it.next().cloned();
    while let Some(flag) = it.next() {
        match flag.as_str() {
            "--config" => {
                args.config = Some(PathBuf::from(
                    it.next().ok_or("--config needs a path")?,
                ));
            }
            "--out" => {
                args.out = Some(PathBuf::from(it.next().ok_or("--out needs a path")?));
            }
            "--data" => {
                args.data = Some(PathBuf::from(it.next().ok_or("--data needs a path")?));
            }
            "--workers" => {
                let v = it.next().ok_or("--workers needs a count")?;
                args.workers = Some(v.parse().map_err(|_| format!("bad worker count {v:?}"))?);
            }
            "--seed" => {
                let v = it.next().ok_or("--seed needs a value")?;
                args.seed = Some(v.parse().map_err(|_| format!("bad seed {v:?}"))?);
            }
            "--json" => args.json = true,
            other => return Err(format!("unknown flag {other:?}")),
        }
    }
    Ok(args)
}

fn load_config(args: &Args) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_generate(args: &Args) -> Result<u8, CliError> {
    let Some(_) = args.config else {
        return Err(CliError::Config("generate requires --config".into()));
    };
    let cfg = load_config(args)?;
    let out_dir = match (&args.out, &cfg.dataset.out_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => {
            return Err(CliError::Config(
                "no output directory: pass --out or set dataset.out_dir".into(),
            ))
        }
    };
    let workers = args.workers.unwrap_or(1);
    let manifest = dataset::generate_dataset(&cfg, &out_dir, workers)?;
    println!("dataset written to {}", out_dir.display());
    print_manifest_summary(&manifest);
    Ok(0)
}

fn print_manifest_summary(m: &dataset::DatasetManifest) {
    println!(
        "field {} (p = {}), coarse {} cells, {} levels, seed {}",
        m.spec.kind, m.spec.p, m.spec.coarse_cells, m.spec.l, m.spec.seed
    );
    println!("samples per level: {:?}", m.counts);
    let deltas: Vec<String> = m.deltas.iter().map(|d| format!("{d:.6e}")).collect();
    println!("normalisation constants: [{}]", deltas.join(", "));
    println!(
        "relative generation cost (cost-per-cell model): {:.3} full-resolution samples",
        m.relative_cost
    );
    println!("files: {}", m.files.len());
}

fn cmd_inspect(args: &Args) -> Result<u8, CliError> {
    let Some(dir) = &args.data else {
        return Err(CliError::Config("inspect requires --data DIR".into()));
    };
    let loaded = dataset::load_dataset(dir)?;
    println!("dataset {} OK (all checksums valid)", dir.display());
    print_manifest_summary(&loaded.manifest);
    let recomputed = loaded.recompute_deltas();
    for (l, (a, b)) in loaded.manifest.deltas.iter().zip(&recomputed).enumerate() {
        let dev = (a - b).abs();
        println!("delta_{}: manifest {a:.12e}, recomputed {b:.12e} (|diff| {dev:.1e})", l + 1);
    }
    Ok(0)
}

fn cmd_verify(args: &Args) -> Result<u8, CliError> {
    let cfg = load_config(args)?;
    let report = verify::run_verification(&cfg, None)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report.to_json())?);
    } else {
        print!("{}", report.table());
    }
    if report.all_passed() {
        Ok(0)
    } else {
        let first = report.first_failure().expect("some check failed");
        eprintln!("verification failed: {}", first.name);
        Ok(1)
    }
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_contraction(args: &Args) -> Result<u8, CliError> {
    let cfg = load_config(args)?;
    let rows = reports::contraction_report(&cfg)?;
    write_or_print(&args.out, &reports::contraction_csv(&rows))?;
    Ok(0)
}

fn cmd_weights(args: &Args) -> Result<u8, CliError> {
    let cfg = load_config(args)?;
    let rows = reports::weights_report(&cfg);
    write_or_print(&args.out, &reports::weights_csv(&rows))?;
    Ok(0)
}

fn cmd_metrics(args: &Args) -> Result<u8, CliError> {
    let cfg = load_config(args)?;
    let rows = reports::metrics_report(&cfg)?;
    if args.json {
        write_or_print(
            &args.out,
            &format!("{}\n", serde_json::to_string_pretty(&reports::metrics_json(&rows))?),
        )?;
    } else {
        write_or_print(&args.out, &reports::metrics_csv(&rows))?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let args = match parse_args(&argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    let Some(command) = args.command.clone() else {
        eprint!("{USAGE}");
        return ExitCode::from(2);
    };
    let result = match command.as_str() {
        "generate" => cmd_generate(&args),
        "inspect" => cmd_inspect(&args),
        "verify" => cmd_verify(&args),
        "contraction" => cmd_contraction(&args),
        "weights" => cmd_weights(&args),
        "metrics" => cmd_metrics(&args),
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            return ExitCode::SUCCESS;
        }
        other => {
            eprintln!("error: unknown command {other:?}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e @ CliError::Config(_)) => {
            eprintln!("error: {e}\n\n{USAGE}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

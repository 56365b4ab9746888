use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lbft_core::harness::{
    self, CheckOptions, CheckSelection, LivenessOptions, Verdict, EXIT_USAGE,
};
use lbft_core::sim::{self, Mode, Scenario, Trace, TraceLevel};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "lbft", version, about = "Simulate and check BFT finality runs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its trace and verdict.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the trace and verdict files.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Leave per-recipient block deliveries out of the trace.
        #[arg(long)]
        compact: bool,
        #[command(flatten)]
        check: CheckArgs,
    },
    /// Run a scenario over a range of seeds and print a table.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// `a..b` (exclusive), `a..=b` (inclusive) or a single seed.
        #[arg(long)]
        seeds: String,
        /// Write each verdict here as well.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        check: CheckArgs,
    },
    /// Re-run the checkers on a saved trace.
    Check {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        check: CheckArgs,
    },
    /// Print the evidence a saved trace supports, one JSON record per line.
    Evidence {
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's mode (general or lisk).
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Args, Clone, Copy)]
struct CheckArgs {
    #[arg(long)]
    target_height: Option<u64>,
    #[arg(long)]
    deadline_blocks: Option<u64>,
    /// safety, liveness, accountability or all.
    #[arg(long, default_value = "all")]
    check: CheckSelection,
}

impl CheckArgs {
    fn options(self) -> CheckOptions {
        CheckOptions {
            checks: self.check,
            liveness: LivenessOptions {
                target_height: self.target_height,
                deadline_blocks: self.deadline_blocks,
            },
        }
    }
}

fn parse_seeds(s: &str) -> Result<Range<u64>> {
    let num = |x: &str| {
        x.trim()
            .parse::<u64>()
            .with_context(|| format!("bad seed {x:?}"))
    };
    if let Some((a, b)) = s.split_once("..=") {
        Ok(num(a)?..num(b)? + 1)
    } else if let Some((a, b)) = s.split_once("..") {
        Ok(num(a)?..num(b)?)
    } else {
        let a = num(s)?;
        Ok(a..a + 1)
    }
}

fn load(args: &ScenarioArgs) -> Result<Scenario> {
    let mut sc = Scenario::load(&args.scenario)?;
    if let Some(m) = args.mode {
        sc.mode = m;
    }
    if sc.name.is_empty() {
        sc.name = args
            .scenario
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(sc)
}

fn stem(sc: &Scenario) -> String {
    format!(
        "{}-seed{}",
        if sc.name.is_empty() { "run" } else { &sc.name },
        sc.seed
    )
}

fn write_verdict(dir: &Path, stem: &str, v: &Verdict) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.verdict.json"));
    fs::write(&path, v.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn read_trace(path: &Path) -> Result<Trace> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Trace::read_jsonl(BufReader::new(f))?)
}

fn run_one(
    sc: &Scenario,
    level: TraceLevel,
    opts: &CheckOptions,
) -> Result<(sim::RunOutput, Verdict)> {
    let out = sim::run_full(sc, level)?;
    let v = harness::check_run(&out, opts)?;
    Ok((out, v))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out_dir,
            compact,
            check,
        } => {
            let mut sc = load(&scenario)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            let level = if compact {
                TraceLevel::Compact
            } else {
                TraceLevel::Full
            };
            let (out, v) = run_one(&sc, level, &check.options())?;
            fs::create_dir_all(&out_dir)?;
            let stem = stem(&sc);
            let tpath = out_dir.join(format!("{stem}.trace.jsonl"));
            let mut w = BufWriter::new(
                File::create(&tpath).with_context(|| format!("creating {}", tpath.display()))?,
            );
            out.trace.write_jsonl(&mut w)?;
            w.flush()?;
            let vpath = write_verdict(&out_dir, &stem, &v)?;
            print!("{}", v.summary());
            println!("trace: {}\nverdict: {}", tpath.display(), vpath.display());
            Ok(v.exit_code())
        }
        Cmd::Sweep {
            scenario,
            seeds,
            out_dir,
            check,
        } => {
            let base = load(&scenario)?;
            let range = parse_seeds(&seeds)?;
            if range.is_empty() {
                bail!("empty seed range {seeds:?}");
            }
            let opts = check.options();
            let results: Vec<Result<Verdict>> = range
                .clone()
                .into_par_iter()
                .map(|seed| {
                    let mut sc = base.clone();
                    sc.seed = seed;
                    run_one(&sc, TraceLevel::Compact, &opts).map(|(_, v)| v)
                })
                .collect();
            println!(
                "{:>8}  {:>12}  {:>12}  {:>14}  {:>7}  {:>6}",
                "seed", "safety", "liveness", "accountability", "blocks", "height"
            );
            let mut worst = 0;
            let mut fails = [0usize; 3];
            for (seed, r) in range.clone().zip(results) {
                let v = r?;
                let st = |s: Option<harness::Status>| s.map_or("-".to_string(), |s| s.to_string());
                let s = v.safety.as_ref().map(|r| r.status);
                let l = v.liveness.as_ref().map(|r| r.status);
                let a = v.accountability.as_ref().map(|r| r.status);
                for (i, x) in [s, l, a].iter().enumerate() {
                    if *x == Some(harness::Status::Fail) {
                        fails[i] += 1;
                    }
                }
                println!(
                    "{:>8}  {:>12}  {:>12}  {:>14}  {:>7}  {:>6}",
                    seed,
                    st(s),
                    st(l),
                    st(a),
                    v.blocks,
                    v.max_height
                );
                if let Some(dir) = &out_dir {
                    let mut sc = base.clone();
                    sc.seed = seed;
                    write_verdict(dir, &stem(&sc), &v)?;
                }
                let code = v.exit_code();
                if code != 0 && (worst == 0 || code < worst) {
                    worst = code;
                }
            }
            println!(
                "runs {}  safety failures {}  liveness failures {}  accountability failures {}",
                range.end - range.start,
                fails[0],
                fails[1],
                fails[2]
            );
            Ok(worst)
        }
        Cmd::Check {
            trace,
            out_dir,
            check,
        } => {
            let t = read_trace(&trace)?;
            let v = harness::check(&t, &check.options())?;
            print!("{}", v.summary());
            if let Some(dir) = out_dir {
                let sc = t.scenario()?;
                let p = write_verdict(&dir, &stem(sc), &v)?;
                println!("verdict: {}", p.display());
            }
            Ok(v.exit_code())
        }
        Cmd::Evidence { trace } => {
            let t = read_trace(&trace)?;
            let (resolved, ledger) = harness::replay(&t)?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for a in harness::collect_evidence(&t, &resolved, &ledger)? {
                serde_json::to_writer(&mut w, &a)?;
                writeln!(w)?;
            }
            Ok(0)
        }
    }
}

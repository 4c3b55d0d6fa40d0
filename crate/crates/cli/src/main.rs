use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_rational::Ratio;
use stabyz::scenario::parse_decimal;
use stabyz::time::fmt_ticks;
use stabyz::{check, derive_constants, read_trace, sim_run, sweep, trace_digest, write_trace, RunError, ScenarioConfig, Span};

const EXIT_PROPERTY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TRACE: u8 = 3;

#[derive(Parser)]
#[command(name = "stabyz", version, about = "Simulate and check a self-stabilizing Byzantine agreement stack")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one scenario and check its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Trace output path (JSON lines). With --check-only, the trace to read.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Re-verify an existing trace instead of simulating.
        #[arg(long, requires = "out")]
        check_only: bool,
        #[arg(long)]
        diagnostics: bool,
    },
    /// Run and check a range of seeds.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Half-open seed range, e.g. 0..1000.
        #[arg(long, value_parser = parse_range)]
        seeds: std::ops::Range<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        diagnostics: bool,
    },
    /// Print the derived timing constants in units of d.
    Constants {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        f: usize,
        #[arg(long, default_value = "1")]
        d: String,
    },
}

fn parse_range(s: &str) -> Result<std::ops::Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected A..B")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if b < a {
        return Err(format!("empty range {s}"));
    }
    Ok(a..b)
}

fn load(path: &PathBuf) -> Result<ScenarioConfig, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })?;
    ScenarioConfig::parse(&text).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })
}

fn run(scenario: PathBuf, seed: Option<u64>, out: Option<PathBuf>, check_only: bool, diagnostics: bool) -> ExitCode {
    let mut cfg = match load(&scenario) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    let trace = if check_only {
        let path = out.as_ref().expect("clap enforces --out");
        let read = File::open(path).map_err(stabyz::TraceError::from).and_then(|f| read_trace(BufReader::new(f)));
        match read {
            Ok(t) => t,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                return ExitCode::from(EXIT_TRACE);
            }
        }
    } else {
        match sim_run(&cfg) {
            Ok(t) => t,
            Err(RunError::Config(e)) => {
                eprintln!("config: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
            Err(RunError::Sim(e)) => {
                eprintln!("simulation: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    };
    if !check_only {
        if let Some(path) = &out {
            let written = File::create(path).map_err(stabyz::TraceError::from).and_then(|f| {
                let mut w = BufWriter::new(f);
                write_trace(&trace, &mut w)?;
                w.flush().map_err(Into::into)
            });
            if let Err(e) = written {
                eprintln!("{}: {e}", path.display());
                return ExitCode::from(EXIT_TRACE);
            }
        }
    }
    let report = match check(&trace, &cfg, diagnostics) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    println!("seed {} events {} sha256 {}", cfg.seed, trace.len(), trace_digest(&trace));
    print!("{}", report.render());
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_PROPERTY)
    }
}

fn run_sweep(scenario: PathBuf, seeds: std::ops::Range<u64>, jobs: usize, diagnostics: bool) -> ExitCode {
    let cfg = match load(&scenario) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Err(e) = cfg.constants() {
        eprintln!("config: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let summary = sweep(&cfg, seeds, jobs, diagnostics);
    print!("{}", summary.render());
    if summary.all_passed() {
        ExitCode::SUCCESS
    } else if summary.errors().next().is_some() && summary.reports().all(|r| r.passed()) {
        ExitCode::from(EXIT_CONFIG)
    } else {
        ExitCode::from(EXIT_PROPERTY)
    }
}

fn constants(n: usize, f: usize, d: &str) -> ExitCode {
    let Some(scale) = parse_decimal(d).filter(|r| *r > Ratio::from_integer(0)) else {
        eprintln!("d: expected a positive decimal, got {d}");
        return ExitCode::from(EXIT_CONFIG);
    };
    let c = match derive_constants(n, f, Span(1000), Span(900), Span(100), Ratio::from_integer(0)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    println!("n={n} f={f} d={d}");
    for (name, span) in c.table() {
        // The table is in ticks of d/1000; scale to the requested d.
        let v = scale * Ratio::from_integer(span.0);
        let shown = if v.is_integer() { fmt_ticks(v.to_integer() as i128) } else { format!("{}", v / Ratio::from_integer(1000)) };
        println!("{name:<9} {shown}");
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run { scenario, seed, out, check_only, diagnostics } => run(scenario, seed, out, check_only, diagnostics),
        Cmd::Sweep { scenario, seeds, jobs, diagnostics } => run_sweep(scenario, seeds, jobs, diagnostics),
        Cmd::Constants { n, f, d } => constants(n, f, &d),
    }
}

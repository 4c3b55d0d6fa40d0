//! Acceptance run: one PASS/FAIL line per criterion.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use stabyz::scenario::Action;
use stabyz::sim::clocks_for;
use stabyz::trace::{trace_to_string, EventKind};
use stabyz::{check, derive_constants, sim_run, sweep, NodeId, ScenarioConfig, Span, Summary};

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scn"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ScenarioConfig::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: String) -> Outcome {
    Outcome { ok, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

/// Sweeps kept for the cross-cutting criteria (termination, diagnostics).
struct Runs {
    all: Vec<(&'static str, Summary)>,
}

impl Runs {
    fn sweep(&mut self, name: &'static str, seeds: u64) -> &Summary {
        let s = sweep(&scenario(name), 0..seeds, jobs(), true);
        self.all.push((name, s));
        &self.all.last().unwrap().1
    }
}

fn totals(s: &Summary, ids: &[&str]) -> (bool, String) {
    let mut ok = s.errors().next().is_none();
    let mut parts = Vec::new();
    for id in ids {
        let v = s.violations(id);
        ok &= v == 0;
        parts.push(format!("{id}={v}/{}", s.checked(id)));
    }
    (ok, parts.join(" "))
}

fn c1() -> Outcome {
    let start = Instant::now();
    let c = derive_constants(4, 1, Span(1000), Span(900), Span(100), Ratio::from_integer(0)).unwrap();
    let took = start.elapsed();
    let want = [("phi", 8), ("d_agr", 24), ("d_zero", 13), ("d_rmv", 37), ("d_val", 89), ("d_node", 113), ("d_reset", 168), ("d_stb", 336)];
    let table = c.table();
    let mismatched: Vec<&str> = want
        .iter()
        .filter(|(name, v)| table.iter().find(|(n, _)| n == name).map(|(_, s)| s.0) != Some(v * 1000))
        .map(|(n, _)| *n)
        .collect();
    let ok = mismatched.is_empty() && took < Duration::from_millis(1);
    outcome(ok, format!("mismatched={mismatched:?} in {}us", took.as_micros()))
}

fn c2() -> Outcome {
    let start = Instant::now();
    let cfg = scenario("validity");
    let trace = sim_run(&cfg).unwrap();
    let clocks = clocks_for(&cfg);
    let t0 = Ratio::from_integer(100_000i128);
    let d = Ratio::from_integer(1000i128);
    let mut decides = Vec::new();
    for e in &trace {
        if let EventKind::Decide { g, m, anchor, .. } = &e.event {
            if !cfg.is_byzantine(e.node) {
                let a = clocks[e.node.index()].real_of(*anchor, e.t_real);
                decides.push((e.node, g, m.clone(), Ratio::from_integer(e.t_real.0 as i128), a));
            }
        }
    }
    let correct = (0..cfg.n as u32).filter(|&i| !cfg.is_byzantine(NodeId(i))).count();
    let mut ok = decides.len() == correct;
    ok &= decides.iter().all(|x| *x.1 == NodeId(0) && x.2 == stabyz::Value::from("m"));
    ok &= decides.iter().all(|x| x.3 >= t0 && x.3 <= t0 + d * 4);
    ok &= decides.iter().all(|x| x.4 >= t0 - d && x.4 <= t0 + d * 4);
    let spread = |f: fn(&(NodeId, &NodeId, stabyz::Value, Ratio<i128>, Ratio<i128>)) -> Ratio<i128>| {
        let v: Vec<_> = decides.iter().map(f).collect();
        v.iter().max().copied().unwrap_or_default() - v.iter().min().copied().unwrap_or_default()
    };
    let (ds, as_) = (spread(|x| x.3), spread(|x| x.4));
    ok &= ds <= d * 2 && as_ <= d;
    let took = start.elapsed();
    ok &= took < Duration::from_secs(1);
    outcome(ok, format!("decides={} decide-spread={ds} anchor-spread={as_} ticks in {}", decides.len(), secs(took)))
}

fn c3(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let ids = ["agreement", "ia-4a", "timeliness-1a"];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, seeds) in [("equivocation", 1000), ("split-brain", 1000), ("random", 1000), ("equivocation-7", 200)] {
        let s = runs.sweep(name, seeds);
        let (good, line) = totals(s, &ids);
        ok &= good && s.checked("agreement") > 0;
        parts.push(format!("{name}: {line}"));
    }
    let took = start.elapsed();
    ok &= took < Duration::from_secs(120);
    outcome(ok, format!("{} in {}", parts.join("; "), secs(took)))
}

fn c4(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["forger-quiet", "flood-quiet"] {
        let s = runs.sweep(name, 500);
        // No correct invocation, so every i-accept counted is a forgery.
        let iaccepts = s.checked("ia-2");
        let (good, line) = totals(s, &["tps-2"]);
        ok &= good && iaccepts == 0;
        parts.push(format!("{name}: i-accepts={iaccepts} {line}"));
    }
    let took = start.elapsed();
    ok &= took < Duration::from_secs(30);
    outcome(ok, format!("{} in {}", parts.join("; "), secs(took)))
}

fn c5(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let ids = ["tps-1", "tps-3", "tps-4"];
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["broadcast", "broadcast-withhold"] {
        let s = runs.sweep(name, 500);
        let (good, line) = totals(s, &ids);
        ok &= good && ids.iter().all(|id| s.checked(id) > 0);
        parts.push(format!("{name}: {line}"));
    }
    let took = start.elapsed();
    ok &= took < Duration::from_secs(30);
    outcome(ok, format!("{} in {}", parts.join("; "), secs(took)))
}

fn c6(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let cfg = scenario("stabilization");
    let c = cfg.constants().unwrap();
    let corrupt_at_zero = cfg.script.iter().any(|e| e.at.0 == 0 && matches!(e.action, Action::Corrupt));
    let late_enough = cfg.script.iter().filter(|e| matches!(e.action, Action::Initiate(_))).all(|e| e.at >= cfg.iota1(&c));
    let ids = ["agreement", "validity", "timeliness-2", "timeliness-1a", "ia-1c", "ia-4a"];
    let s = runs.sweep("stabilization", 500);
    let (good, line) = totals(s, &ids);
    let took = start.elapsed();
    let ok = good && corrupt_at_zero && late_enough && s.checked("validity") > 0 && took < Duration::from_secs(120);
    outcome(ok, format!("{line} in {}", secs(took)))
}

fn c7(runs: &Runs) -> Outcome {
    let cfg = scenario("validity");
    let validity = check(&sim_run(&cfg).unwrap(), &cfg, false).unwrap();
    let v = validity.get("termination").unwrap();
    let mut ok = v.violations == 0 && v.checked > 0;
    let mut checked = v.checked;
    let mut violations = v.violations;
    for (_, s) in &runs.all {
        ok &= s.errors().next().is_none();
        checked += s.checked("termination");
        violations += s.violations("termination");
    }
    ok &= violations == 0;
    outcome(ok, format!("termination={violations}/{checked} over {} sweeps", runs.all.len()))
}

fn c8() -> Outcome {
    let start = Instant::now();
    let (cfg, corpus) = common::corpus();
    let missed: Vec<&str> = corpus
        .iter()
        .filter(|(id, trace)| check(trace, &cfg, true).unwrap().get(id).map_or(true, |v| v.pass()))
        .map(|(id, _)| *id)
        .collect();
    let took = start.elapsed();
    let ok = missed.is_empty() && took < Duration::from_secs(5);
    outcome(ok, format!("{}/{} forged traces rejected, missed={missed:?} in {}", corpus.len() - missed.len(), corpus.len(), secs(took)))
}

fn c9() -> Outcome {
    let mut ok = true;
    for name in ["validity", "stabilization", "equivocation"] {
        let cfg = scenario(name).with_seed(7);
        ok &= trace_to_string(&sim_run(&cfg).unwrap()) == trace_to_string(&sim_run(&cfg).unwrap());
    }
    let cfg = scenario("random");
    let one = sweep(&cfg, 0..40, 1, false).render();
    let four = sweep(&cfg, 0..40, 4, false).render();
    ok &= one == four;
    outcome(ok, "traces byte-identical across reruns; sweep summary equal at jobs 1 and 4".into())
}

fn c10(runs: &Runs) -> Outcome {
    let ids = ["diag-cor-2m2", "diag-cor-2m4", "diag-good-reset"];
    let mut ok = true;
    let mut parts = Vec::new();
    for id in ids {
        let v: usize = runs.all.iter().map(|(_, s)| s.violations(id)).sum();
        let c: usize = runs.all.iter().map(|(_, s)| s.checked(id)).sum();
        ok &= v == 0 && c > 0;
        parts.push(format!("{id}={v}/{c}"));
    }
    outcome(ok, parts.join(" "))
}

fn main() {
    let mut runs = Runs { all: Vec::new() };
    let results = [c1(), c2(), c3(&mut runs), c4(&mut runs), c5(&mut runs), c6(&mut runs)];
    let tail = [c7(&runs), c8(), c9(), c10(&runs)];
    let mut failed = 0;
    for (i, o) in results.iter().chain(tail.iter()).enumerate() {
        println!("criterion {}: {} {}", i + 1, if o.ok { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.ok);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

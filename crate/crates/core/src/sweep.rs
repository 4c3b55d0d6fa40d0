//! Many-seed runs of one scenario, in parallel, with failure shrinking.

use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::checker::{check, Report, DIAGNOSTICS, PROPERTIES};
use crate::scenario::ScenarioConfig;
use crate::sim::{sim_run, RunError};
use crate::time::RealTime;
use crate::trace::{trace_to_string, TraceEvent};

/// Hex SHA-256 of the serialized trace.
pub fn trace_digest(trace: &[TraceEvent]) -> String {
    hex::encode(Sha256::digest(trace_to_string(trace).as_bytes()))
}

#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub outcome: Result<Report, RunError>,
}

impl SeedResult {
    pub fn passed(&self) -> bool {
        matches!(&self.outcome, Ok(r) if r.passed())
    }
}

/// The smallest horizon at which a seed still fails a property.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shrunk {
    pub seed: u64,
    pub property: &'static str,
    pub horizon: RealTime,
}

#[derive(Clone, Debug)]
pub struct Summary {
    pub results: Vec<SeedResult>,
    pub shrunk: Option<Shrunk>,
}

/// Runs and checks one seed.
pub fn run_seed(cfg: &ScenarioConfig, seed: u64, diagnostics: bool) -> SeedResult {
    let cfg = cfg.clone().with_seed(seed);
    let outcome = sim_run(&cfg).and_then(|t| check(&t, &cfg, diagnostics).map_err(RunError::Config));
    SeedResult { seed, outcome }
}

/// Runs every seed in `seeds` on `jobs` threads. Results come back in seed
/// order whatever the thread count. Tick events are not recorded.
pub fn sweep(cfg: &ScenarioConfig, seeds: Range<u64>, jobs: usize, diagnostics: bool) -> Summary {
    let mut cfg = cfg.clone();
    cfg.trace_ticks = false;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool");
    let results: Vec<SeedResult> =
        pool.install(|| seeds.into_par_iter().map(|s| run_seed(&cfg, s, diagnostics)).collect());
    let shrunk = results.iter().find_map(|r| match &r.outcome {
        Ok(rep) if !rep.passed() => Some(shrink(&cfg, r.seed, rep.failures()[0], diagnostics)),
        _ => None,
    });
    Summary { results, shrunk }
}

/// Binary-searches the horizon down to the shortest run of `seed` that
/// still fails `property`.
pub fn shrink(cfg: &ScenarioConfig, seed: u64, property: &'static str, diagnostics: bool) -> Shrunk {
    let fails = |h: u64| {
        let c = cfg.clone().with_horizon(RealTime(h));
        matches!(run_seed(&c, seed, diagnostics).outcome, Ok(r) if r.get(property).is_some_and(|v| !v.pass()))
    };
    Shrunk { seed, property, horizon: RealTime(first_failing(cfg.horizon.0, fails)) }
}

/// Smallest `h` in `1..=hi` with `fails(h)`, given that `fails(hi)` holds
/// and failure persists once reached.
fn first_failing(hi: u64, fails: impl Fn(u64) -> bool) -> u64 {
    let (mut lo, mut hi) = (0u64, hi);
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if fails(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

impl Summary {
    pub fn passed(&self) -> usize {
        self.results.iter().filter(|r| r.passed()).count()
    }

    pub fn all_passed(&self) -> bool {
        self.passed() == self.results.len()
    }

    pub fn errors(&self) -> impl Iterator<Item = &SeedResult> {
        self.results.iter().filter(|r| r.outcome.is_err())
    }

    /// Total violations of `id` over all seeds.
    pub fn violations(&self, id: &str) -> usize {
        self.reports().filter_map(|r| r.get(id)).map(|v| v.violations).sum()
    }

    /// Total instances of `id` evaluated over all seeds.
    pub fn checked(&self, id: &str) -> usize {
        self.reports().filter_map(|r| r.get(id)).map(|v| v.checked).sum()
    }

    pub fn reports(&self) -> impl Iterator<Item = &Report> {
        self.results.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    /// Pass count, per-property totals, then the first failure if any.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}/{} pass", self.passed(), self.results.len());
        for id in PROPERTIES.iter().chain(DIAGNOSTICS) {
            if self.reports().any(|r| r.get(id).is_some()) {
                let _ = writeln!(s, "{:<20} checked={} violations={}", id, self.checked(id), self.violations(id));
            }
        }
        for r in self.errors() {
            if let Err(e) = &r.outcome {
                let _ = writeln!(s, "seed {} error: {e}", r.seed);
            }
        }
        if let Some(sh) = &self.shrunk {
            let _ = writeln!(s, "first failure: seed {} {} (fails from horizon {} ticks)", sh.seed, sh.property, sh.horizon.0);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::parse("role.0 = byzantine equivocating\nhorizon = 60").unwrap()
    }

    #[test]
    fn summary_independent_of_jobs() {
        let a = sweep(&cfg(), 0..6, 1, true);
        let b = sweep(&cfg(), 0..6, 4, true);
        assert_eq!(a.render(), b.render());
        assert!(a.all_passed(), "{}", a.render());
        assert!(a.render().starts_with("6/6 pass\n"));
    }

    #[test]
    fn bisection_finds_first_failing_horizon() {
        for edge in [1, 2, 777, 60_000] {
            assert_eq!(first_failing(60_000, |h| h >= edge), edge);
        }
    }

    #[test]
    fn digest_is_stable() {
        let c = cfg();
        let a = trace_digest(&sim_run(&c).unwrap());
        let b = trace_digest(&sim_run(&c).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }
}

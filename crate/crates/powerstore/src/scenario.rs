//! Named scenarios, fault-plan sampling and seed sweeps.

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest as _, Sha256};

use crate::checker::{verify, RoundStats, Verdict};
use crate::simnet::{
    self, write_ndjson, DelayModel, FaultDirective, OpKind, ReaderBehavior, ServerBehavior, SimConfig, SimReport,
};
use crate::types::{Mode, PowKind};

/// How a scenario picks faults for each seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Plan {
    /// The faults in the base config, every seed.
    Fixed,
    /// A fresh draw from the whole fault catalog per seed.
    Catalog,
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub name: &'static str,
    pub about: &'static str,
    pub base: SimConfig,
    pub plan: Plan,
    /// Sweep must see at least one repaired read.
    pub expect_repairs: bool,
}

fn workload(mode: Mode) -> SimConfig {
    SimConfig {
        mode,
        writers: if mode == Mode::Mw { 3 } else { 1 },
        readers: 5,
        ops: 20,
        ..SimConfig::default()
    }
}

fn faults(list: &[&str]) -> Vec<FaultDirective> {
    list.iter().map(|f| f.parse().expect("built-in fault")).collect()
}

/// The built-in scenarios.
pub fn scenarios() -> Vec<Scenario> {
    let fixed = |name, about, base| Scenario { name, about, base, plan: Plan::Fixed, expect_repairs: false };
    vec![
        fixed("sw-baseline", "single writer, no faults: writes and reads take 2 rounds", workload(Mode::Sw)),
        fixed("mw-baseline", "three writers, no faults: writes take 3 rounds, reads 2", workload(Mode::Mw)),
        Scenario {
            expect_repairs: true,
            ..fixed(
                "mw-bigmac",
                "one server corrupts MAC vector entries, forcing repair rounds",
                SimConfig { faults: faults(&["s1:corrupt_vec"]), ..workload(Mode::Mw) },
            )
        },
        Scenario {
            plan: Plan::Catalog,
            ..fixed("sw-catalog", "single writer under fault plans drawn from the whole catalog", workload(Mode::Sw))
        },
        Scenario {
            plan: Plan::Catalog,
            ..fixed("mw-catalog", "multi-writer under fault plans drawn from the whole catalog", workload(Mode::Mw))
        },
        fixed(
            "shamir",
            "secret-shared proofs with a fabricating server and a flooding reader",
            SimConfig {
                pow: PowKind::Shamir,
                faults: faults(&["s1:fabricate_candidate", "reader:flood_writebacks"]),
                ..workload(Mode::Mw)
            },
        ),
        fixed(
            "fabricate",
            "a server invents high candidates; no reader may return them",
            SimConfig { faults: faults(&["s2:fabricate_candidate"]), ..workload(Mode::Mw) },
        ),
        fixed(
            "byz-readers",
            "Byzantine readers flood write-backs; reports single-writer |LC| growth",
            SimConfig {
                faults: faults(&[
                    "reader:flood_writebacks",
                    "reader:flood_writebacks",
                    "reader:replayed_candidates",
                    "reader:garbage_filter_sets",
                ]),
                byz_actions: 40,
                ..workload(Mode::Sw)
            },
        ),
        fixed(
            "crash-writer",
            "writers crash mid-write; reads may see either outcome",
            SimConfig { faults: faults(&["w2:crash_after_store@2", "w3:crash@60"]), ..workload(Mode::Mw) },
        ),
        fixed(
            "wan-pareto",
            "heavy-tailed delays, Pareto mean 20 jitter 4",
            SimConfig { delay: DelayModel::Pareto { mean: 20.0, jitter: 4.0 }, ..workload(Mode::Mw) },
        ),
    ]
}

pub fn scenario(name: &str) -> Option<Scenario> {
    scenarios().into_iter().find(|s| s.name == name)
}

/// Draws up to `t` faulty servers (crashes or any Byzantine behavior), and
/// maybe Byzantine readers and crashing writers.
pub fn catalog_plan(seed: u64, cfg: &SimConfig) -> Vec<FaultDirective> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(6);
    let s = 3 * cfg.t + 1;
    let mut out = Vec::new();
    let f = rng.random_range(0..=cfg.t);
    let mut ids: Vec<usize> = (1..=s).collect();
    for _ in 0..f {
        let server = ids.swap_remove(rng.random_range(0..ids.len()));
        if rng.random_bool(0.2) {
            out.push(FaultDirective::CrashServer { server, at: rng.random_range(0..200) });
        } else {
            let behavior = *ServerBehavior::ALL.choose(&mut rng).unwrap();
            out.push(FaultDirective::ByzServer { server, behavior });
        }
    }
    for _ in 0..rng.random_range(0..=2) {
        let behavior = *ReaderBehavior::ALL.choose(&mut rng).unwrap();
        out.push(FaultDirective::ByzReader { behavior });
    }
    if cfg.writers > 0 && rng.random_bool(0.25) {
        let writer = rng.random_range(1..=cfg.writers as u64);
        if rng.random_bool(0.5) {
            out.push(FaultDirective::CrashAfterStore { writer, op: rng.random_range(1..=cfg.ops.max(1)) });
        } else {
            out.push(FaultDirective::CrashWriter { writer, at: rng.random_range(0..400) });
        }
    }
    out
}

/// Command-line adjustments on top of a scenario.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub pow: Option<PowKind>,
    pub t: Option<usize>,
    pub value_size: Option<usize>,
    pub delay: Option<DelayModel>,
    pub faults: Vec<FaultDirective>,
    /// Replaces the base config entirely.
    pub config: Option<SimConfig>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: SimConfig) -> SimConfig {
        if let Some(c) = &self.config {
            cfg = c.clone();
        }
        if let Some(m) = self.mode {
            if m != cfg.mode {
                cfg.writers = if m == Mode::Sw { 1 } else { 3 };
                cfg.faults.retain(|f| !matches!(f, FaultDirective::CrashWriter { writer, .. } | FaultDirective::CrashAfterStore { writer, .. } if *writer as usize > cfg.writers));
            }
            cfg.mode = m;
        }
        if let Some(p) = self.pow {
            cfg.pow = p;
        }
        if let Some(t) = self.t {
            cfg.t = t;
        }
        if let Some(v) = self.value_size {
            cfg.value_size = v;
        }
        if let Some(d) = self.delay {
            cfg.delay = d;
        }
        cfg.faults.extend(self.faults.iter().copied());
        cfg
    }
}

/// The exact config a scenario runs for one seed.
pub fn config_for(sc: &Scenario, ov: &Overrides, seed: u64) -> SimConfig {
    let mut cfg = ov.apply(sc.base.clone());
    cfg.seed = seed;
    if sc.plan == Plan::Catalog {
        let mut drawn = catalog_plan(seed, &cfg);
        // Explicit faults win over drawn ones on the same server.
        drawn.retain(|d| d.faulty_server().is_none_or(|s| !cfg.faults.iter().any(|f| f.faulty_server() == Some(s))));
        let budget = cfg.t.saturating_sub(cfg.faults.iter().filter(|f| f.faulty_server().is_some()).count());
        let mut servers = 0;
        drawn.retain(|d| d.faulty_server().is_none() || { servers += 1; servers <= budget });
        cfg.faults.extend(drawn);
    }
    cfg
}

/// Hash of the NDJSON event log, for comparing runs.
pub fn log_digest(report: &SimReport) -> String {
    let mut buf = Vec::new();
    write_ndjson(&mut buf, &report.events).expect("in-memory write");
    let d = Sha256::digest(&buf);
    d.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Per-seed summary, one NDJSON line in a sweep report.
#[derive(Debug, Clone, Serialize)]
pub struct SeedResult {
    pub scenario: String,
    pub seed: u64,
    pub faults: Vec<String>,
    pub ok: bool,
    pub failure: Option<String>,
    pub log_digest: String,
    pub ops: usize,
    pub writes: RoundStats,
    pub reads: RoundStats,
    pub repairs: usize,
    pub messages: u64,
    pub bytes: u64,
    pub intruder_messages: u64,
    pub max_lc_set: usize,
    pub max_server_candidates: usize,
    pub end_tick: u64,
    #[serde(skip)]
    pub verdict: Option<Verdict>,
}

pub fn run_seed(sc: &Scenario, ov: &Overrides, seed: u64) -> SeedResult {
    let cfg = config_for(sc, ov, seed);
    let faults = cfg.faults.iter().map(|f| f.to_string()).collect();
    match simnet::run(&cfg) {
        Ok(report) => summarize(sc.name, &report, faults),
        Err(e) => SeedResult {
            scenario: sc.name.into(),
            seed,
            faults,
            ok: false,
            failure: Some(e.to_string()),
            log_digest: String::new(),
            ops: 0,
            writes: RoundStats::default(),
            reads: RoundStats::default(),
            repairs: 0,
            messages: 0,
            bytes: 0,
            intruder_messages: 0,
            max_lc_set: 0,
            max_server_candidates: 0,
            end_tick: 0,
            verdict: None,
        },
    }
}

pub fn summarize(name: &str, report: &SimReport, faults: Vec<String>) -> SeedResult {
    let v = verify(report);
    let client_ops = report.records.iter().filter(|r| r.is_complete());
    SeedResult {
        scenario: name.into(),
        seed: report.config.seed,
        faults,
        ok: v.ok(),
        failure: v.failure(),
        log_digest: log_digest(report),
        ops: client_ops.count(),
        writes: v.rounds.writes,
        reads: v.rounds.reads,
        repairs: v.rounds.repairs,
        messages: report.metrics.messages.values().map(|s| s.count).sum(),
        bytes: report.metrics.messages.values().map(|s| s.bytes).sum(),
        intruder_messages: report.metrics.intruder_messages,
        max_lc_set: report.metrics.lc_growth.last().map_or(0, |g| g.1),
        max_server_candidates: report.metrics.max_server_candidates,
        end_tick: report.metrics.end_tick,
        verdict: Some(v),
    }
}

/// Runs seeds `first..first + count` in parallel, results in seed order.
pub fn sweep(sc: &Scenario, ov: &Overrides, first: u64, count: u64) -> Vec<SeedResult> {
    (first..first + count).into_par_iter().map(|s| run_seed(sc, ov, s)).collect()
}

/// Human-readable summary of a sweep.
pub fn render_table(sc: &Scenario, results: &[SeedResult]) -> String {
    let mut out = String::new();
    let n = results.len().max(1) as f64;
    let failed = results.iter().filter(|r| !r.ok).count();
    let max_of = |f: fn(&SeedResult) -> u32| results.iter().map(f).max().unwrap_or(0);
    let mean_of = |f: fn(&SeedResult) -> (f64, usize)| {
        let (sum, cnt) = results.iter().map(f).fold((0.0, 0), |(s, c), (m, k)| (s + m * k as f64, c + k));
        if cnt == 0 {
            0.0
        } else {
            sum / cnt as f64
        }
    };
    let ops: usize = results.iter().map(|r| r.ops).sum();
    let reads: usize = results.iter().map(|r| r.reads.count).sum();
    let repairs: usize = results.iter().map(|r| r.repairs).sum();
    let msgs: u64 = results.iter().map(|r| r.messages).sum();
    let bytes: u64 = results.iter().map(|r| r.bytes).sum();
    let _ = writeln!(out, "scenario {}: {}", sc.name, sc.about);
    let _ = writeln!(out, "{:<28}{:>14}", "seeds", results.len());
    let _ = writeln!(out, "{:<28}{:>14}", "failed seeds", failed);
    let _ = writeln!(out, "{:<28}{:>14}", "completed ops", ops);
    let _ = writeln!(out, "{:<28}{:>14}", "write rounds max", max_of(|r| r.writes.max));
    let _ = writeln!(out, "{:<28}{:>14.3}", "write rounds mean", mean_of(|r| (r.writes.mean, r.writes.count)));
    let _ = writeln!(out, "{:<28}{:>14}", "read rounds max", max_of(|r| r.reads.max));
    let _ = writeln!(out, "{:<28}{:>14.3}", "read rounds mean", mean_of(|r| (r.reads.mean, r.reads.count)));
    let freq = if reads == 0 { 0.0 } else { repairs as f64 / reads as f64 };
    let _ = writeln!(out, "{:<28}{:>14.4}", "repair frequency", freq);
    let _ = writeln!(out, "{:<28}{:>14.1}", "messages per op", msgs as f64 / ops.max(1) as f64);
    let _ = writeln!(out, "{:<28}{:>14.1}", "bytes per op", bytes as f64 / ops.max(1) as f64);
    let _ = writeln!(out, "{:<28}{:>14}", "max |LC| (single writer)", results.iter().map(|r| r.max_lc_set).max().unwrap_or(0));
    let _ = writeln!(
        out,
        "{:<28}{:>14}",
        "max candidates per server",
        results.iter().map(|r| r.max_server_candidates).max().unwrap_or(0)
    );
    let _ = writeln!(out, "{:<28}{:>14.1}", "intruder messages per seed", results.iter().map(|r| r.intruder_messages).sum::<u64>() as f64 / n);
    out
}

/// Whether a sweep meets the scenario's expectations. The error names the
/// first failing seed.
pub fn judge(sc: &Scenario, results: &[SeedResult]) -> Result<(), (u64, String)> {
    if let Some(r) = results.iter().find(|r| !r.ok) {
        return Err((r.seed, r.failure.clone().unwrap_or_else(|| "failed".into())));
    }
    if sc.expect_repairs && !results.is_empty() && results.iter().all(|r| r.repairs == 0) {
        return Err((results[0].seed, "expected at least one repaired read".into()));
    }
    Ok(())
}

/// One row of the bench table.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub t: usize,
    pub value_size: usize,
    pub mode: Mode,
    pub writes: usize,
    pub reads: usize,
    pub write_latency_mean: f64,
    pub write_latency_p99: u64,
    pub read_latency_mean: f64,
    pub read_latency_p99: u64,
    pub write_messages: f64,
    pub read_messages: f64,
    pub write_bytes: f64,
    pub fragment_bytes_per_server: f64,
    /// Fragment bytes per write divided by `|V|`.
    pub overhead: f64,
    /// `(3t + 1) / (t + 1)`.
    pub expected_overhead: f64,
}

fn percentile(v: &mut [u64], p: f64) -> u64 {
    if v.is_empty() {
        return 0;
    }
    v.sort_unstable();
    v[((v.len() - 1) as f64 * p).round() as usize]
}

/// Latency and cost per op for one `(t, |V|)` point. Closed loop: each client
/// has at most one pending operation.
pub fn bench_point(base: &SimConfig, t: usize, value_size: usize, seeds: u64) -> BenchRow {
    let reports: Vec<SimReport> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let cfg = SimConfig { seed, t, value_size, ..base.clone() };
            simnet::run(&cfg).expect("bench run")
        })
        .collect();
    let recs: Vec<_> = reports.iter().flat_map(|r| r.records.iter()).filter(|r| r.is_complete()).collect();
    let lat = |k: OpKind| -> Vec<u64> {
        recs.iter().filter(|r| r.kind == k).map(|r| r.response_tick.unwrap() - r.invoke_tick).collect()
    };
    let mean = |v: &[u64]| if v.is_empty() { 0.0 } else { v.iter().sum::<u64>() as f64 / v.len() as f64 };
    let per = |k: OpKind, f: fn(&crate::simnet::OperationRecord) -> u64| {
        let v: Vec<u64> = recs.iter().filter(|r| r.kind == k).map(|r| f(r)).collect();
        mean(&v)
    };
    let (mut wl, mut rl) = (lat(OpKind::Write), lat(OpKind::Read));
    let frag = per(OpKind::Write, |r| r.fragment_bytes);
    BenchRow {
        t,
        value_size,
        mode: base.mode,
        writes: wl.len(),
        reads: rl.len(),
        write_latency_mean: mean(&wl),
        write_latency_p99: percentile(&mut wl, 0.99),
        read_latency_mean: mean(&rl),
        read_latency_p99: percentile(&mut rl, 0.99),
        write_messages: per(OpKind::Write, |r| r.messages),
        read_messages: per(OpKind::Read, |r| r.messages),
        write_bytes: per(OpKind::Write, |r| r.bytes),
        fragment_bytes_per_server: frag / (3 * t + 1) as f64,
        overhead: frag / value_size as f64,
        expected_overhead: (3 * t + 1) as f64 / (t + 1) as f64,
    }
}

pub fn render_bench(rows: &[BenchRow]) -> String {
    let mut out = String::from("latencies in simulated ticks, not wall-clock throughput\n");
    let _ = writeln!(
        out,
        "{:>2} {:>9} {:>10} {:>8} {:>10} {:>8} {:>8} {:>8} {:>12} {:>12} {:>9} {:>9}",
        "t", "|V|", "w.lat", "w.p99", "r.lat", "r.p99", "w.msgs", "r.msgs", "w.bytes", "frag/srv", "overhead", "expected"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>2} {:>9} {:>10.1} {:>8} {:>10.1} {:>8} {:>8.1} {:>8.1} {:>12.0} {:>12.0} {:>9.4} {:>9.4}",
            r.t,
            r.value_size,
            r.write_latency_mean,
            r.write_latency_p99,
            r.read_latency_mean,
            r.read_latency_p99,
            r.write_messages,
            r.read_messages,
            r.write_bytes,
            r.fragment_bytes_per_server,
            r.overhead,
            r.expected_overhead
        );
    }
    out
}

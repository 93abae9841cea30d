//! Post-hoc verification of simulation output.
//!
//! * [`check_linearizable`]: exhaustive search for linearization points of a
//!   single-register history with unique write values.
//! * [`check_pow_soundness`]: every acceptance at a correct server is backed
//!   by stores at `t + 1` correct servers before the proof was first revealed.
//! * [`account_rounds`]: round counts against the latency bounds.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::Serialize;

use crate::simnet::{Event, EventKind, OpKind, OperationRecord, Pid, SimReport};
use crate::types::{Mode, ServerId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckError {
    #[error("operations {first} and {second} of {client} overlap")]
    Overlap { client: Pid, first: usize, second: usize },
    #[error("operations {first} and {second} write the same value")]
    DuplicateWrite { first: usize, second: usize },
    #[error("operation {0} responds before it is invoked")]
    Inverted(usize),
}

/// The ordering rule a violation breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// A read returned a value nobody wrote.
    UnknownValue,
    /// A read returned a value whose write started after the read finished.
    ReadFromFuture,
    /// A read missed a write that completed before it started.
    StaleRead,
    /// A read returned an older value than a read that finished before it.
    NewOldInversion,
    /// No pairwise rule applies, but no linearization exists either.
    NoLinearization,
}

/// Two records (by op id) and the rule they break together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Certificate {
    pub rule: Rule,
    pub first: usize,
    pub second: Option<usize>,
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.second {
            Some(s) => write!(f, "{:?}: op {} vs op {}", self.rule, self.first, s),
            None => write!(f, "{:?}: op {}", self.rule, self.first),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Linearizability {
    /// Op ids in linearization order. Incomplete writes that did not take
    /// effect are absent.
    Linearizable(Vec<usize>),
    Violation(Certificate),
}

impl Linearizability {
    pub fn is_ok(&self) -> bool {
        matches!(self, Linearizability::Linearizable(_))
    }
}

#[derive(Debug, Clone)]
struct Op {
    id: usize,
    kind: OpKind,
    invoke: usize,
    /// `usize::MAX` for a pending write.
    response: usize,
    /// Index into the write table; `None` is the initial value.
    value: Option<usize>,
}

impl Op {
    fn complete(&self) -> bool {
        self.response != usize::MAX
    }
}

/// Prepares the search input. Pending reads are dropped, pending or failed
/// writes become optional.
fn prepare(records: &[OperationRecord]) -> Result<Result<Vec<Op>, Certificate>, CheckError> {
    let mut by_client: BTreeMap<Pid, Vec<&OperationRecord>> = BTreeMap::new();
    for r in records {
        if let Some(resp) = r.response {
            if resp <= r.invoke {
                return Err(CheckError::Inverted(r.op));
            }
        }
        by_client.entry(r.client).or_default().push(r);
    }
    for (client, mut ops) in by_client {
        ops.sort_by_key(|r| r.invoke);
        for w in ops.windows(2) {
            if w[0].response.is_none_or(|resp| resp > w[1].invoke) {
                return Err(CheckError::Overlap { client, first: w[0].op, second: w[1].op });
            }
        }
    }

    let mut writes: BTreeMap<&[u8], (usize, usize)> = BTreeMap::new();
    let mut ops = Vec::new();
    for r in records.iter().filter(|r| r.kind == OpKind::Write) {
        let v = r.value.as_deref().unwrap_or_default();
        let idx = writes.len();
        if let Some(&(other, _)) = writes.get(v) {
            return Err(CheckError::DuplicateWrite { first: other, second: r.op });
        }
        writes.insert(v, (r.op, idx));
        let done = r.response.is_some() && r.failed.is_none();
        ops.push(Op {
            id: r.op,
            kind: OpKind::Write,
            invoke: r.invoke,
            response: if done { r.response.unwrap() } else { usize::MAX },
            value: Some(idx),
        });
    }
    for r in records.iter().filter(|r| r.kind == OpKind::Read) {
        let Some(response) = r.response else { continue };
        if r.failed.is_some() {
            continue;
        }
        let value = match &r.value {
            None => None,
            Some(v) => match writes.get(v.as_slice()) {
                Some(&(_, idx)) => Some(idx),
                None => return Ok(Err(Certificate { rule: Rule::UnknownValue, first: r.op, second: None })),
            },
        };
        ops.push(Op { id: r.op, kind: OpKind::Read, invoke: r.invoke, response, value });
    }
    ops.sort_by_key(|o| o.invoke);
    Ok(Ok(ops))
}

struct Search<'a> {
    ops: &'a [Op],
    memo: HashSet<(Vec<u64>, usize)>,
    order: Vec<usize>,
    deepest: (usize, Option<usize>, Option<usize>),
}

const INITIAL: usize = usize::MAX;

impl Search<'_> {
    fn done(&self, set: &[u64], i: usize) -> bool {
        set[i / 64] >> (i % 64) & 1 == 1
    }

    fn flip(set: &mut [u64], i: usize) {
        set[i / 64] ^= 1 << (i % 64);
    }

    /// Depth-first search over states `(linearized set, register value)`.
    fn dfs(&mut self, set: &mut Vec<u64>, value: usize, remaining: usize) -> bool {
        if remaining == 0 {
            return true;
        }
        if !self.memo.insert((set.clone(), value)) {
            return false;
        }
        let bound = (0..self.ops.len())
            .filter(|&i| !self.done(set, i))
            .map(|i| self.ops[i].response)
            .min()
            .unwrap_or(usize::MAX);
        let frontier: Vec<usize> = (0..self.ops.len())
            .take_while(|&i| self.ops[i].invoke < bound)
            .filter(|&i| !self.done(set, i))
            .collect();

        if self.order.len() >= self.deepest.0 {
            let blocker = (0..self.ops.len()).filter(|&i| !self.done(set, i)).min_by_key(|&i| self.ops[i].response);
            let last = self.order.iter().rev().map(|&i| &self.ops[i]).find(|o| o.kind == OpKind::Write).map(|o| o.id);
            self.deepest = (self.order.len(), blocker.map(|i| self.ops[i].id), last);
        }

        // A read that fits the current value can always go first: values are
        // unique, so no later state offers it the same value again.
        if let Some(&i) = frontier
            .iter()
            .find(|&&i| self.ops[i].kind == OpKind::Read && self.ops[i].value.unwrap_or(INITIAL) == value)
        {
            Self::flip(set, i);
            self.order.push(i);
            if self.dfs(set, value, remaining - 1) {
                return true;
            }
            self.order.pop();
            Self::flip(set, i);
            return false;
        }

        for i in frontier {
            let op = &self.ops[i];
            if op.kind == OpKind::Read {
                continue;
            }
            let next = op.value.unwrap_or(INITIAL);
            let counts = op.complete() as usize;
            Self::flip(set, i);
            self.order.push(i);
            if self.dfs(set, next, remaining - counts) {
                return true;
            }
            self.order.pop();
            Self::flip(set, i);
        }
        false
    }
}

/// Decides whether the history is linearizable as a single register that
/// starts out as `⊥` (a read returning `None`).
pub fn check_linearizable(records: &[OperationRecord]) -> Result<Linearizability, CheckError> {
    let ops = match prepare(records)? {
        Ok(ops) => ops,
        Err(cert) => return Ok(Linearizability::Violation(cert)),
    };
    let remaining = ops.iter().filter(|o| o.complete()).count();
    let mut search = Search { ops: &ops, memo: HashSet::new(), order: Vec::new(), deepest: (0, None, None) };
    let mut set = vec![0u64; ops.len().div_ceil(64).max(1)];
    if search.dfs(&mut set, INITIAL, remaining) {
        let order = search.order.iter().map(|&i| ops[i].id).collect();
        return Ok(Linearizability::Linearizable(order));
    }
    let cert = pairwise_violation(&ops).unwrap_or_else(|| {
        let (_, blocker, last) = search.deepest;
        Certificate { rule: Rule::NoLinearization, first: blocker.unwrap_or(0), second: last }
    });
    Ok(Linearizability::Violation(cert))
}

/// Looks for the simple two-record patterns behind most violations.
fn pairwise_violation(ops: &[Op]) -> Option<Certificate> {
    let write_of: BTreeMap<usize, &Op> =
        ops.iter().filter(|o| o.kind == OpKind::Write).map(|o| (o.value.unwrap(), o)).collect();
    let reads: Vec<&Op> = ops.iter().filter(|o| o.kind == OpKind::Read).collect();
    let writes: Vec<&Op> = write_of.values().copied().collect();
    // w1 certainly overwrote the value of w0 (or ⊥) before `by`.
    let superseded = |w0: Option<&Op>, w1: &Op, by: usize| {
        w1.complete() && w1.response < by && w0.is_none_or(|w0| w0.id != w1.id && w0.response < w1.invoke)
    };
    for r in &reads {
        if let Some(w) = r.value.map(|v| write_of[&v]) {
            if w.invoke > r.response {
                return Some(Certificate { rule: Rule::ReadFromFuture, first: r.id, second: Some(w.id) });
            }
        }
    }
    for r in &reads {
        let src = r.value.map(|v| write_of[&v]);
        if let Some(w1) = writes.iter().find(|w1| superseded(src, w1, r.invoke)) {
            return Some(Certificate { rule: Rule::StaleRead, first: r.id, second: Some(w1.id) });
        }
    }
    for r1 in &reads {
        let Some(w1) = r1.value.map(|v| write_of[&v]) else { continue };
        for r2 in &reads {
            if r1.response >= r2.invoke {
                continue;
            }
            let src = r2.value.map(|v| write_of[&v]);
            let older = match src {
                None => true,
                Some(w0) => w0.id != w1.id && w0.response < w1.invoke,
            };
            if older {
                return Some(Certificate { rule: Rule::NewOldInversion, first: r1.id, second: Some(r2.id) });
            }
        }
    }
    None
}

/// The first acceptance that lacks a store quorum, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnbackedAcceptance {
    pub position: usize,
    pub server: ServerId,
    pub ts: String,
    pub stores: usize,
}

/// True iff every acceptance at a never-faulty server is preceded by
/// `Stored` of the same timestamp at `t + 1` never-faulty servers, all
/// before the first emission of the accepted proof by a correct process.
pub fn check_pow_soundness(events: &[Event], faulty: &BTreeSet<ServerId>, t: usize) -> bool {
    first_unbacked_acceptance(events, faulty, t).is_none()
}

pub fn first_unbacked_acceptance(
    events: &[Event],
    faulty: &BTreeSet<ServerId>,
    t: usize,
) -> Option<UnbackedAcceptance> {
    let mut stored: BTreeMap<_, BTreeSet<ServerId>> = BTreeMap::new();
    // Stores seen before the first emission of each proof.
    let mut frozen: BTreeMap<_, usize> = BTreeMap::new();
    for (pos, e) in events.iter().enumerate() {
        match &e.kind {
            EventKind::Stored { server, ts } if !faulty.contains(server) => {
                stored.entry(*ts).or_default().insert(*server);
            }
            EventKind::Emitted { ts, proof, .. } => {
                let n = stored.get(ts).map_or(0, |s| s.len());
                frozen.entry((*ts, *proof)).or_insert(n);
            }
            EventKind::Accepted { server, ts, proof } if !faulty.contains(server) => {
                let n = match frozen.get(&(*ts, *proof)) {
                    Some(&n) => n,
                    None => stored.get(ts).map_or(0, |s| s.len()),
                };
                if n <= t {
                    return Some(UnbackedAcceptance { position: pos, server: *server, ts: ts.to_string(), stores: n });
                }
            }
            _ => {}
        }
    }
    None
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RoundStats {
    pub count: usize,
    pub min: u32,
    pub max: u32,
    pub mean: f64,
}

impl RoundStats {
    fn of(rounds: impl Iterator<Item = u32>) -> Self {
        let v: Vec<u32> = rounds.collect();
        if v.is_empty() {
            return RoundStats::default();
        }
        RoundStats {
            count: v.len(),
            min: *v.iter().min().unwrap(),
            max: *v.iter().max().unwrap(),
            mean: v.iter().map(|&r| r as f64).sum::<f64>() / v.len() as f64,
        }
    }
}

/// Round bounds of the protocol for one mode and attack condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Bounds {
    pub write: u32,
    pub read: u32,
}

impl Bounds {
    pub fn for_mode(mode: Mode, vec_attack: bool) -> Self {
        match (mode, vec_attack) {
            (Mode::Sw, _) => Bounds { write: 2, read: 2 },
            (Mode::Mw, false) => Bounds { write: 3, read: 2 },
            (Mode::Mw, true) => Bounds { write: 3, read: 3 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub bounds: Bounds,
    pub writes: RoundStats,
    pub reads: RoundStats,
    pub repairs: usize,
    /// Completed ops above their bound.
    pub exceeded: Vec<usize>,
}

impl RoundReport {
    pub fn ok(&self) -> bool {
        self.exceeded.is_empty()
    }
}

/// Round statistics of the completed operations, flagging any above the
/// bound. Writes always take exactly their bound; fewer is flagged too.
pub fn account_rounds(records: &[OperationRecord], mode: Mode, vec_attack: bool) -> RoundReport {
    let bounds = Bounds::for_mode(mode, vec_attack);
    let done = || records.iter().filter(|r| r.is_complete() && r.failed.is_none());
    let writes = RoundStats::of(done().filter(|r| r.kind == OpKind::Write).map(|r| r.rounds));
    let reads = RoundStats::of(done().filter(|r| r.kind == OpKind::Read).map(|r| r.rounds));
    let exceeded = done()
        .filter(|r| match r.kind {
            OpKind::Write => r.rounds != bounds.write,
            OpKind::Read => r.rounds > bounds.read || r.rounds < 2,
        })
        .map(|r| r.op)
        .collect();
    let repairs = done().filter(|r| r.repaired).count();
    RoundReport { bounds, writes, reads, repairs, exceeded }
}

/// Everything the checker says about one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub seed: u64,
    pub linearizability: Result<Linearizability, String>,
    pub pow_sound: bool,
    pub unbacked: Option<UnbackedAcceptance>,
    pub non_skipping: bool,
    pub rounds: RoundReport,
    pub violations: Vec<String>,
    pub forged_reads: usize,
}

impl Verdict {
    pub fn ok(&self) -> bool {
        matches!(self.linearizability, Ok(Linearizability::Linearizable(_)))
            && self.pow_sound
            && self.non_skipping
            && self.rounds.ok()
            && self.violations.is_empty()
            && self.forged_reads == 0
    }

    /// One-line reason for a failed verdict.
    pub fn failure(&self) -> Option<String> {
        match &self.linearizability {
            Err(e) => return Some(format!("malformed history: {e}")),
            Ok(Linearizability::Violation(c)) => return Some(format!("not linearizable: {c}")),
            _ => {}
        }
        if let Some(u) = &self.unbacked {
            return Some(format!("s{} accepted {} with {} backing stores", u.server, u.ts, u.stores));
        }
        if !self.non_skipping {
            return Some("timestamps skipped ahead of write invocations".into());
        }
        if !self.rounds.ok() {
            return Some(format!("ops over round bounds: {:?}", self.rounds.exceeded));
        }
        if self.forged_reads > 0 {
            return Some(format!("{} reads returned forged timestamps", self.forged_reads));
        }
        self.violations.first().cloned()
    }
}

pub fn verify(report: &SimReport) -> Verdict {
    let cfg = &report.config;
    let unbacked = first_unbacked_acceptance(&report.events, &report.faulty, cfg.t);
    Verdict {
        seed: cfg.seed,
        linearizability: check_linearizable(&report.records).map_err(|e| e.to_string()),
        pow_sound: unbacked.is_none(),
        unbacked,
        non_skipping: cfg.mode == Mode::Sw || report.max_correct_num <= report.writes_invoked as u64,
        rounds: account_rounds(&report.records, cfg.mode, cfg.corrupts_vectors()),
        violations: report.violations.clone(),
        forged_reads: report.forged_reads,
    }
}

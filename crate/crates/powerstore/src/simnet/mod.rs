//! Deterministic discrete-event network.
//!
//! Every process is a sans-IO state machine. Messages travel as encoded bytes
//! over reliable point-to-point channels with random finite delays; a run is
//! a pure function of its [`SimConfig`]. Randomness comes from independent
//! streams (network delays, workload timing, keys, writer nonces, adversary
//! content, adversary timing), so changing one concern, such as the proof
//! kind, leaves the others untouched.

pub mod adversary;
pub mod config;
pub mod log;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto};
use serde::Serialize;

use crate::client::{Completion, Outcome, Reader, Step, Writer};
use crate::codec::{fragment_field_len, Message, MessageKind};
use crate::crypto::KeyRing;
use crate::server::{Origin, Server, ServerEvent, ServerSnapshot};
use crate::types::{Candidate, Mode, Params, Proof, ServerId, Timestamp};

use adversary::{Adversary, ByzReader, ByzServer};
pub use config::{ConfigError, DelayModel, FaultDirective, ReaderBehavior, ServerBehavior, SimConfig};
pub use log::{value_label, write_ndjson, Event, EventKind, OpKind, OperationRecord, Pid};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("deadlock at tick {tick}: {pending} correct operations cannot finish")]
    Deadlock { tick: u64, pending: usize },
    #[error("tick budget {0} exhausted")]
    TickBudget(u64),
}

const READER_BASE: u64 = 100;
const INTRUDER_BASE: u64 = 1000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KindStats {
    pub count: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub messages: BTreeMap<MessageKind, KindStats>,
    /// `(tick, largest |LC| at a correct server)` whenever the maximum grows.
    pub lc_growth: Vec<(u64, usize)>,
    /// Most candidates any correct server held at once (`lc` plus `LC`).
    pub max_server_candidates: usize,
    pub intruder_messages: u64,
    pub end_tick: u64,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub config: SimConfig,
    pub events: Vec<Event>,
    pub records: Vec<OperationRecord>,
    /// Servers with any fault directive (crash or Byzantine).
    pub faulty: BTreeSet<ServerId>,
    pub byzantine: BTreeSet<ServerId>,
    pub writes_invoked: usize,
    /// Runtime invariant breaches (monotonicity, reliability, isolation,
    /// exclusion, timestamp skipping).
    pub violations: Vec<String>,
    pub metrics: Metrics,
    pub final_states: BTreeMap<ServerId, ServerSnapshot>,
    /// Completed reads whose timestamp no correct writer ever issued.
    pub forged_reads: usize,
    /// Highest `ts.num` in `lc` or `Hist` at a correct server.
    pub max_correct_num: u64,
}

impl SimReport {
    pub fn read_records(&self) -> impl Iterator<Item = &OperationRecord> {
        self.records.iter().filter(|r| r.kind == OpKind::Read)
    }

    pub fn write_records(&self) -> impl Iterator<Item = &OperationRecord> {
        self.records.iter().filter(|r| r.kind == OpKind::Write)
    }

    pub fn repairs(&self) -> usize {
        self.read_records().filter(|r| r.repaired).count()
    }
}

/// A delivery-delay override: return `Some(ticks)` to pin a message's delay.
pub type ScheduleHook<'a> = dyn FnMut(Pid, Pid, &Message) -> Option<u64> + 'a;

enum Node {
    Correct(Server),
    Byzantine(ByzServer),
}

struct ServerNode {
    node: Node,
    crashed: bool,
}

struct WriterNode {
    w: Writer,
    remaining: usize,
    seq: usize,
    crashed: bool,
    crash_after_store: Option<usize>,
    current: Option<usize>,
}

struct ReaderNode {
    r: Reader,
    remaining: usize,
    current: Option<usize>,
}

#[derive(Debug)]
enum Item {
    Deliver { id: u64, from: Pid, to: Pid, bytes: Vec<u8> },
    Wake(Pid),
    CrashServer(ServerId),
    CrashWriter(u64),
    IntruderAct(usize),
    IntruderDrain(usize),
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Harness values: unique `w<id>-<seq>|` prefix, deterministic filler.
pub fn make_value(writer: u64, seq: usize, size: usize) -> Vec<u8> {
    let mut v = format!("w{writer}-{seq}|").into_bytes();
    let mut i = 0usize;
    while v.len() < size {
        v.push(b'a' + ((i * 7 + seq + writer as usize) % 26) as u8);
        i += 1;
    }
    v
}

fn one(c: &Candidate) -> Option<(Timestamp, &Proof)> {
    c.proof.as_ref().map(|p| (c.ts, p))
}

fn proofs_in(msg: &Message) -> Vec<(Timestamp, &Proof)> {
    match msg {
        Message::Complete { ts, proof, .. } => vec![(*ts, proof)],
        Message::CollectAck { candidates, .. } | Message::Filter { candidates, .. } => {
            candidates.iter().filter_map(one).collect()
        }
        Message::Repair { candidate, .. } => one(candidate).into_iter().collect(),
        _ => Vec::new(),
    }
}

struct Sim<'h> {
    cfg: SimConfig,
    params: Params,
    now: u64,
    seq: u64,
    next_id: u64,
    queue: BTreeMap<(u64, u64), Item>,
    events: Vec<Event>,
    records: Vec<OperationRecord>,
    servers: Vec<ServerNode>,
    writers: Vec<WriterNode>,
    readers: Vec<ReaderNode>,
    intruders: Vec<ByzReader>,
    adv: Adversary,
    net_rng: ChaCha8Rng,
    work_rng: ChaCha8Rng,
    adv_timing: ChaCha8Rng,
    pareto: Option<Pareto<f64>>,
    faulty: BTreeSet<ServerId>,
    byzantine: BTreeSet<ServerId>,
    emitted: HashSet<Proof>,
    first_stored: BTreeMap<(ServerId, (u64, u64)), usize>,
    issued: BTreeSet<(u64, u64)>,
    crashed_clients: BTreeSet<Pid>,
    deliveries: BTreeMap<u64, u32>,
    tracked_sends: Vec<u64>,
    violations: Vec<String>,
    metrics: Metrics,
    writes_invoked: usize,
    hook: Option<&'h mut ScheduleHook<'h>>,
}

pub fn run(cfg: &SimConfig) -> Result<SimReport, SimError> {
    Sim::new(cfg.clone(), None)?.run()
}

/// Like [`run`], with a hook that may pin the delay of individual messages.
pub fn run_with_hook<'h>(cfg: &SimConfig, hook: &'h mut ScheduleHook<'h>) -> Result<SimReport, SimError> {
    Sim::new(cfg.clone(), Some(hook))?.run()
}

impl<'h> Sim<'h> {
    fn new(cfg: SimConfig, hook: Option<&'h mut ScheduleHook<'h>>) -> Result<Self, SimError> {
        cfg.validate()?;
        let params = cfg.params();
        let s = params.servers();
        let ring = KeyRing::generate(&mut stream(cfg.seed, 3), s);

        let mut faulty = BTreeSet::new();
        let mut byzantine = BTreeMap::new();
        for f in &cfg.faults {
            if let Some(i) = f.faulty_server() {
                faulty.insert(i);
            }
            if let FaultDirective::ByzServer { server, behavior } = f {
                byzantine.insert(*server, *behavior);
            }
        }
        let keys = byzantine.keys().map(|&i| (i, ring.server_key(i).clone())).collect();
        let adv = Adversary::new(params, cfg.writers, cfg.value_size, stream(cfg.seed, 4), keys);

        let key_for = |i: ServerId| match params.mode {
            Mode::Sw => None,
            Mode::Mw => Some(ring.server_key(i).clone()),
        };
        let servers = (1..=s)
            .map(|i| {
                let inner = Server::new(i, params, key_for(i)).with_mutation(cfg.mutation);
                let node = match byzantine.get(&i) {
                    Some(b) => Node::Byzantine(ByzServer::new(inner, *b)),
                    None => Node::Correct(inner),
                };
                ServerNode { node, crashed: false }
            })
            .collect();

        let mut writers = Vec::new();
        for id in 1..=cfg.writers as u64 {
            let ring = (params.mode == Mode::Mw).then(|| ring.clone());
            let seed = rand::RngCore::next_u64(&mut stream(cfg.seed, 10 + id));
            let w = Writer::new(id, params, ring, seed).expect("writer").with_mutation(cfg.mutation);
            let crash_after_store = cfg.faults.iter().find_map(|f| match f {
                FaultDirective::CrashAfterStore { writer, op } if *writer == id => Some(*op),
                _ => None,
            });
            writers.push(WriterNode { w, remaining: cfg.ops, seq: 0, crashed: false, crash_after_store, current: None });
        }
        let readers = (0..cfg.readers as u64)
            .map(|j| ReaderNode {
                r: Reader::new(READER_BASE + j, params).with_mutation(cfg.mutation),
                remaining: cfg.ops,
                current: None,
            })
            .collect();
        let intruders = cfg
            .faults
            .iter()
            .filter_map(|f| match f {
                FaultDirective::ByzReader { behavior } => Some(*behavior),
                _ => None,
            })
            .enumerate()
            .map(|(j, b)| ByzReader::new(INTRUDER_BASE + j as u64, b, cfg.byz_actions))
            .collect();
        let pareto = match cfg.delay {
            DelayModel::Pareto { mean, jitter } => {
                let shape = 1.0 + (1.0 + (mean / jitter).powi(2)).sqrt();
                let scale = mean * (shape - 1.0) / shape;
                Some(Pareto::new(scale, shape).expect("pareto parameters"))
            }
            DelayModel::Uniform { .. } => None,
        };
        Ok(Sim {
            params,
            now: 0,
            seq: 0,
            next_id: 0,
            queue: BTreeMap::new(),
            events: Vec::new(),
            records: Vec::new(),
            servers,
            writers,
            readers,
            intruders,
            adv,
            net_rng: stream(cfg.seed, 1),
            work_rng: stream(cfg.seed, 2),
            adv_timing: stream(cfg.seed, 5),
            pareto,
            faulty,
            byzantine: byzantine.keys().copied().collect(),
            emitted: HashSet::new(),
            first_stored: BTreeMap::new(),
            issued: BTreeSet::new(),
            crashed_clients: BTreeSet::new(),
            deliveries: BTreeMap::new(),
            tracked_sends: Vec::new(),
            violations: Vec::new(),
            metrics: Metrics::default(),
            writes_invoked: 0,
            hook,
            cfg,
        })
    }

    fn schedule(&mut self, at: u64, item: Item) {
        self.seq += 1;
        self.queue.insert((at, self.seq), item);
    }

    fn log(&mut self, kind: EventKind) -> usize {
        self.events.push(Event { tick: self.now, kind });
        self.events.len() - 1
    }

    fn violation(&mut self, what: String) {
        self.log(EventKind::Violation { what: what.clone() });
        self.violations.push(what);
    }

    fn think(&mut self) -> u64 {
        self.work_rng.random_range(0..=self.cfg.think)
    }

    fn delay(&mut self) -> u64 {
        match (self.cfg.delay, &self.pareto) {
            (_, Some(p)) => (p.sample(&mut self.net_rng).round() as u64).max(1),
            (DelayModel::Uniform { lo, hi }, None) => self.net_rng.random_range(lo..=hi),
            _ => 1,
        }
    }

    fn is_byzantine(&self, p: Pid) -> bool {
        match p {
            Pid::Server(i) => self.byzantine.contains(&i),
            Pid::Intruder(_) => true,
            _ => false,
        }
    }

    /// Never faulty during the whole run, as far as the plan says.
    fn is_correct(&self, p: Pid) -> bool {
        match p {
            Pid::Server(i) => !self.faulty.contains(&i),
            Pid::Writer(w) => !self.cfg.faults.iter().any(|f| {
                matches!(f, FaultDirective::CrashWriter { writer, .. } | FaultDirective::CrashAfterStore { writer, .. } if *writer == w)
            }),
            Pid::Reader(_) => true,
            Pid::Intruder(_) => false,
        }
    }

    fn current_op(&self, p: Pid) -> Option<usize> {
        match p {
            Pid::Writer(w) => self.writers[w as usize - 1].current,
            Pid::Reader(r) => self.readers[(r - READER_BASE) as usize].current,
            _ => None,
        }
    }

    fn send(&mut self, from: Pid, to: Pid, msg: Message) {
        if from.is_server() && to.is_server() {
            self.violation(format!("server-to-server message {from} -> {to}"));
            return;
        }
        let bytes = msg.encode();
        let kind = msg.kind();
        let id = self.next_id;
        self.next_id += 1;
        self.log(EventKind::Send { id, from, to, kind, bytes: bytes.len() });
        let stats = self.metrics.messages.entry(kind).or_default();
        stats.count += 1;
        stats.bytes += bytes.len() as u64;
        if matches!(from, Pid::Intruder(_)) {
            self.metrics.intruder_messages += 1;
        }
        if let Some(op) = self.current_op(from) {
            let rec = &mut self.records[op];
            rec.messages += 1;
            rec.bytes += bytes.len() as u64;
            if let Message::Store { fragment, .. } = &msg {
                rec.fragment_bytes += fragment_field_len(fragment) as u64;
            }
        }
        if !self.is_byzantine(from) {
            if let (Pid::Writer(_), Message::Store { ts, .. }) = (from, &msg) {
                self.issued.insert(ts.key());
            }
            let fresh: Vec<(Timestamp, Proof)> = proofs_in(&msg)
                .into_iter()
                .filter(|(_, p)| !self.emitted.contains(*p))
                .map(|(ts, p)| (ts, p.clone()))
                .collect();
            for (ts, proof) in fresh {
                if self.emitted.insert(proof.clone()) {
                    self.log(EventKind::Emitted { by: from, ts, proof: proof.digest() });
                }
            }
            let to_byz = self.is_byzantine(to);
            let confidential = self.params.pow == crate::types::PowKind::Shamir
                && matches!(msg, Message::Store { .. })
                && !to_byz
                && !self.cfg.leak_shares;
            if (self.cfg.tap || to_byz) && !confidential {
                let dest = match to {
                    Pid::Server(i) => Some(i),
                    _ => None,
                };
                self.adv.observe(dest, &msg);
            }
        }
        if self.is_correct(from) && self.is_correct(to) {
            self.tracked_sends.push(id);
        }
        let pinned = self.hook.as_mut().and_then(|h| h(from, to, &msg));
        let delay = match pinned {
            Some(d) => d.max(1),
            None if self.is_byzantine(from) => 1,
            None => self.delay(),
        };
        self.schedule(self.now + delay, Item::Deliver { id, from, to, bytes });
    }

    fn crashed(&self, p: Pid) -> bool {
        match p {
            Pid::Server(i) => self.servers[i - 1].crashed,
            _ => self.crashed_clients.contains(&p),
        }
    }

    fn run(mut self) -> Result<SimReport, SimError> {
        for w in 1..=self.writers.len() as u64 {
            let at = self.think();
            self.schedule(at, Item::Wake(Pid::Writer(w)));
        }
        for r in 0..self.readers.len() as u64 {
            let at = self.think();
            self.schedule(at, Item::Wake(Pid::Reader(READER_BASE + r)));
        }
        for j in 0..self.intruders.len() {
            let at = self.adv_timing.random_range(0..=20);
            self.schedule(at, Item::IntruderAct(j));
        }
        for f in self.cfg.faults.clone() {
            match f {
                FaultDirective::CrashServer { server, at } => self.schedule(at, Item::CrashServer(server)),
                FaultDirective::CrashWriter { writer, at } => self.schedule(at, Item::CrashWriter(writer)),
                _ => {}
            }
        }

        while let Some(((tick, _), item)) = self.queue.pop_first() {
            if tick > self.cfg.max_ticks {
                return Err(SimError::TickBudget(self.cfg.max_ticks));
            }
            self.now = tick;
            match item {
                Item::Deliver { id, from, to, bytes } => self.deliver(id, from, to, &bytes),
                Item::Wake(p) => self.wake(p),
                Item::CrashServer(i) => {
                    self.servers[i - 1].crashed = true;
                    self.log(EventKind::Crash { process: Pid::Server(i) });
                }
                Item::CrashWriter(w) => self.crash_writer(w),
                Item::IntruderAct(j) => {
                    let flood = self.cfg.flood_size;
                    self.intruders[j].act(&mut self.adv, flood);
                    self.schedule(self.now, Item::IntruderDrain(j));
                    if self.intruders[j].actions_left > 0 {
                        let next = self.now + self.adv_timing.random_range(1..=20);
                        self.schedule(next, Item::IntruderAct(j));
                    }
                }
                Item::IntruderDrain(j) => {
                    let from = Pid::Intruder(self.intruders[j].id);
                    for _ in 0..self.cfg.byz_rate.max(1) {
                        let Some((to, msg)) = self.intruders[j].outbox.pop_front() else { break };
                        self.send(from, Pid::Server(to), msg);
                    }
                    if !self.intruders[j].outbox.is_empty() {
                        self.schedule(self.now + 1, Item::IntruderDrain(j));
                    }
                }
            }
        }

        let pending = self
            .writers
            .iter()
            .filter(|w| !w.crashed && (w.current.is_some() || w.remaining > 0))
            .count()
            + self.readers.iter().filter(|r| r.current.is_some() || r.remaining > 0).count();
        if pending > 0 {
            return Err(SimError::Deadlock { tick: self.now, pending });
        }
        Ok(self.finish())
    }

    fn wake(&mut self, p: Pid) {
        match p {
            Pid::Writer(w) => {
                let node = &mut self.writers[w as usize - 1];
                if node.crashed || node.current.is_some() || node.remaining == 0 {
                    return;
                }
                node.remaining -= 1;
                node.seq += 1;
                let value = make_value(w, node.seq, self.cfg.value_size);
                let sends = node.w.write(&value).expect("idle writer accepts a write");
                self.writes_invoked += 1;
                let op = self.open_record(p, OpKind::Write, Some(value));
                self.writers[w as usize - 1].current = Some(op);
                for (i, m) in sends {
                    self.send(p, Pid::Server(i), m);
                }
            }
            Pid::Reader(r) => {
                let node = &mut self.readers[(r - READER_BASE) as usize];
                if node.current.is_some() || node.remaining == 0 {
                    return;
                }
                node.remaining -= 1;
                let sends = node.r.read().expect("idle reader accepts a read");
                let op = self.open_record(p, OpKind::Read, None);
                self.readers[(r - READER_BASE) as usize].current = Some(op);
                for (i, m) in sends {
                    self.send(p, Pid::Server(i), m);
                }
            }
            _ => {}
        }
    }

    fn open_record(&mut self, client: Pid, kind: OpKind, value: Option<Vec<u8>>) -> usize {
        let op = self.records.len();
        let invoke = self.log(EventKind::Invoke { client, op, kind, value: value.clone() });
        self.records.push(OperationRecord {
            op,
            client,
            kind,
            invoke,
            response: None,
            invoke_tick: self.now,
            response_tick: None,
            value,
            ts: None,
            rounds: 0,
            repaired: false,
            failed: None,
            messages: 0,
            bytes: 0,
            fragment_bytes: 0,
        });
        op
    }

    fn close_record(&mut self, client: Pid, op: usize, done: Completion) {
        let (value, ts, repaired, failed) = match done.outcome {
            Outcome::Written { ts } => (self.records[op].value.clone(), Some(ts), false, None),
            Outcome::Read { value, ts, repaired } => (value, Some(ts), repaired, None),
            Outcome::Failed(e) => (None, None, false, Some(e.to_string())),
        };
        let response = self.log(EventKind::Respond { client, op, value: value.clone(), rounds: done.rounds, repaired });
        let rec = &mut self.records[op];
        rec.response = Some(response);
        rec.response_tick = Some(self.now);
        rec.rounds = done.rounds;
        rec.repaired = repaired;
        rec.ts = ts;
        rec.failed = failed.clone();
        if rec.kind == OpKind::Read {
            rec.value = value;
        }
        if let Some(f) = failed {
            self.violation(format!("operation {op} of {client} failed: {f}"));
        }
        let next = self.now + self.think();
        self.schedule(next, Item::Wake(client));
    }

    fn crash_writer(&mut self, w: u64) {
        let node = &mut self.writers[w as usize - 1];
        if node.crashed {
            return;
        }
        node.crashed = true;
        self.crashed_clients.insert(Pid::Writer(w));
        self.log(EventKind::Crash { process: Pid::Writer(w) });
    }

    fn deliver(&mut self, id: u64, from: Pid, to: Pid, bytes: &[u8]) {
        if self.crashed(to) {
            self.log(EventKind::Drop { id, to, reason: "receiver crashed" });
            return;
        }
        let msg = match Message::decode(bytes) {
            Ok(m) => m,
            Err(_) => {
                self.log(EventKind::Drop { id, to, reason: "malformed" });
                return;
            }
        };
        *self.deliveries.entry(id).or_default() += 1;
        self.log(EventKind::Deliver { id, from, to, kind: msg.kind() });
        match to {
            Pid::Server(i) => self.at_server(i, from, msg),
            Pid::Writer(w) => {
                let step = self.writers[w as usize - 1].w.on_message(server_of(from), msg);
                self.writer_step(w, step);
            }
            Pid::Reader(r) => {
                let step = self.readers[(r - READER_BASE) as usize].r.on_message(server_of(from), msg);
                self.reader_step(r, step);
            }
            Pid::Intruder(b) => {
                let j = (b - INTRUDER_BASE) as usize;
                self.intruders[j].on_message(&mut self.adv, &msg);
            }
        }
    }

    fn at_server(&mut self, i: ServerId, from: Pid, msg: Message) {
        let origin = match from {
            Pid::Writer(w) => Origin::Writer(w),
            Pid::Reader(r) | Pid::Intruder(r) => Origin::Reader(r),
            Pid::Server(_) => return,
        };
        let reply = match &mut self.servers[i - 1].node {
            Node::Byzantine(b) => b.handle(origin, msg, &mut self.adv),
            Node::Correct(server) => {
                let handled = server.handle(origin, msg);
                let held = server.lc_set_len();
                let correct = !self.faulty.contains(&i);
                if correct {
                    if held > self.metrics.lc_growth.last().map_or(0, |g| g.1) {
                        self.metrics.lc_growth.push((self.now, held));
                    }
                    self.metrics.max_server_candidates = self.metrics.max_server_candidates.max(held + 1);
                }
                for e in handled.events {
                    self.server_event(i, correct, e);
                }
                handled.reply
            }
        };
        if let Some(reply) = reply {
            self.send(Pid::Server(i), from, reply);
        }
    }

    fn server_event(&mut self, i: ServerId, correct: bool, e: ServerEvent) {
        match e {
            ServerEvent::Stored { ts } => {
                let idx = self.log(EventKind::Stored { server: i, ts });
                self.first_stored.entry((i, ts.key())).or_insert(idx);
            }
            ServerEvent::Accepted { ts, proof } => {
                self.log(EventKind::Accepted { server: i, ts, proof });
            }
            ServerEvent::LcChanged { from, to } => {
                self.log(EventKind::LcChanged { server: i, from, to });
                if correct && to < from {
                    self.violation(format!("lc at s{i} went from {from} to {to}"));
                }
            }
        }
    }

    fn writer_step(&mut self, w: u64, step: Step) {
        let node = &self.writers[w as usize - 1];
        if node.crashed {
            return;
        }
        let completes = step.sends.iter().any(|(_, m)| matches!(m, Message::Complete { .. }));
        if completes && node.crash_after_store == Some(node.seq) {
            self.crash_writer(w);
            return;
        }
        for (i, m) in step.sends {
            self.send(Pid::Writer(w), Pid::Server(i), m);
        }
        if let Some(done) = step.done {
            let op = self.writers[w as usize - 1].current.take().expect("pending write");
            self.close_record(Pid::Writer(w), op, done);
        }
    }

    fn reader_step(&mut self, r: u64, step: Step) {
        let j = (r - READER_BASE) as usize;
        let reader = Pid::Reader(r);
        for c in &step.pruned {
            self.log(EventKind::Pruned { reader, ts: c.ts, proof: c.proof_digest() });
            if let Some(op) = self.readers[j].current {
                if self.provably_valid(c, self.records[op].invoke) {
                    self.violation(format!("{reader} excluded valid candidate {}", c.ts));
                }
            }
        }
        for (i, m) in step.sends {
            self.send(reader, Pid::Server(i), m);
        }
        if let Some(done) = step.done {
            let op = self.readers[j].current.take().expect("pending read");
            if let Outcome::Read { ts, value: Some(_), .. } = &done.outcome {
                if !self.issued.contains(&ts.key()) {
                    self.violation(format!("{reader} returned forged timestamp {ts}"));
                }
            }
            self.close_record(reader, op, done);
        }
    }

    /// At least `t + 1` correct servers stored `c` (matching proof) before
    /// log position `before`.
    fn provably_valid(&self, c: &Candidate, before: usize) -> bool {
        let Some(proof) = &c.proof else { return false };
        let holders = self
            .servers
            .iter()
            .enumerate()
            .filter(|(k, _)| !self.faulty.contains(&(k + 1)))
            .filter(|(k, node)| {
                let Node::Correct(s) = &node.node else { return false };
                let stored_early = self.first_stored.get(&(k + 1, c.ts.key())).is_some_and(|&at| at < before);
                stored_early
                    && s.history()
                        .get(&c.ts)
                        .is_some_and(|e| e.ts.same_as(&c.ts) && e.commitment.opens_to(proof))
            })
            .count();
        holders > self.params.t
    }

    fn finish(mut self) -> SimReport {
        self.metrics.end_tick = self.now;
        let mut final_states = BTreeMap::new();
        let mut max_correct_num = 0;
        for (k, node) in self.servers.iter().enumerate() {
            let i = k + 1;
            let (server, faulty) = match &node.node {
                Node::Correct(s) => (s, self.faulty.contains(&i)),
                Node::Byzantine(b) => (&b.inner, true),
            };
            let snap = server.snapshot();
            self.events.push(Event {
                tick: self.now,
                kind: EventKind::FinalState {
                    server: i,
                    faulty,
                    lc: snap.lc.ts,
                    lc_set: snap.lc_set.len(),
                    history: snap.history.len(),
                },
            });
            if !faulty {
                let top = snap.history.iter().map(|ts| ts.num).max().unwrap_or(0);
                max_correct_num = max_correct_num.max(top).max(snap.lc.ts.num);
                final_states.insert(i, snap);
            }
        }
        if max_correct_num > self.writes_invoked as u64 {
            self.violation(format!(
                "timestamp {max_correct_num} at a correct server exceeds {} write invocations",
                self.writes_invoked
            ));
        }
        let lost: Vec<u64> = self
            .tracked_sends
            .iter()
            .filter(|id| self.deliveries.get(id).copied().unwrap_or(0) != 1)
            .copied()
            .collect();
        if !lost.is_empty() {
            self.violation(format!("{} messages between correct processes not delivered exactly once", lost.len()));
        }
        let forged_reads = self
            .records
            .iter()
            .filter(|r| r.kind == OpKind::Read && r.value.is_some())
            .filter(|r| r.ts.is_some_and(|ts| !self.issued.contains(&ts.key())))
            .count();
        SimReport {
            config: self.cfg,
            events: self.events,
            records: self.records,
            faulty: self.faulty,
            byzantine: self.byzantine,
            writes_invoked: self.writes_invoked,
            violations: self.violations,
            metrics: self.metrics,
            final_states,
            forged_reads,
            max_correct_num,
        }
    }
}

fn server_of(p: Pid) -> ServerId {
    match p {
        Pid::Server(i) => i,
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PowKind;

    fn base(mode: Mode) -> SimConfig {
        SimConfig { mode, writers: if mode == Mode::Mw { 2 } else { 1 }, readers: 2, ops: 5, ..SimConfig::default() }
    }

    #[test]
    fn same_seed_same_log() {
        let cfg = SimConfig { seed: 42, ..base(Mode::Mw) };
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.events, b.events);
        let other = run(&SimConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.events, other.events);
    }

    #[test]
    fn honest_runs_complete_cleanly() {
        for mode in [Mode::Sw, Mode::Mw] {
            for pow in [PowKind::Hash, PowKind::Shamir] {
                let r = run(&SimConfig { pow, ..base(mode) }).unwrap();
                assert!(r.violations.is_empty(), "{:?}", r.violations);
                assert_eq!(r.records.len(), r.config.ops * (r.config.writers + r.config.readers));
                assert!(r.records.iter().all(|o| o.is_complete()));
            }
        }
    }

    #[test]
    fn crash_after_store_sends_no_complete() {
        let cfg = SimConfig {
            faults: vec![FaultDirective::CrashAfterStore { writer: 1, op: 1 }],
            ..base(Mode::Sw)
        };
        let r = run(&cfg).unwrap();
        assert!(!r.events.iter().any(|e| matches!(e.kind, EventKind::Send { kind: MessageKind::Complete, .. })));
        assert_eq!(r.write_records().filter(|w| !w.is_complete()).count(), 1);
        assert!(r.violations.is_empty(), "{:?}", r.violations);
    }

    #[test]
    fn servers_never_talk_to_each_other() {
        let r = run(&base(Mode::Mw)).unwrap();
        for e in &r.events {
            if let EventKind::Send { from, to, .. } = e.kind {
                assert!(!(from.is_server() && to.is_server()));
            }
        }
    }

    #[test]
    fn mute_server_still_leaves_quorums() {
        let cfg = SimConfig {
            faults: vec![FaultDirective::ByzServer { server: 2, behavior: ServerBehavior::Mute }],
            ..base(Mode::Mw)
        };
        let r = run(&cfg).unwrap();
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        assert!(r.records.iter().all(|o| o.is_complete()));
    }

    #[test]
    fn schedule_hook_pins_delays() {
        let cfg = base(Mode::Sw);
        let mut hook = |_: Pid, _: Pid, _: &Message| Some(3);
        let r = run_with_hook(&cfg, &mut hook).unwrap();
        let mut sent = BTreeMap::new();
        for e in &r.events {
            match e.kind {
                EventKind::Send { id, .. } => {
                    sent.insert(id, e.tick);
                }
                EventKind::Deliver { id, .. } => assert_eq!(e.tick, sent[&id] + 3),
                _ => {}
            }
        }
    }

    #[test]
    fn pareto_delays_have_the_configured_mean() {
        let cfg = SimConfig { delay: DelayModel::Pareto { mean: 20.0, jitter: 4.0 }, ..base(Mode::Mw) };
        let mut sim = Sim::new(cfg, None).unwrap();
        let n = 200_000;
        let samples: Vec<f64> = (0..n).map(|_| sim.delay() as f64).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mean - 20.0).abs() < 0.3, "mean {mean}");
        assert!((sd - 4.0).abs() < 0.5, "sd {sd}");
    }

    #[test]
    fn values_are_unique_and_sized() {
        assert_eq!(make_value(1, 2, 16).len(), 16);
        assert_eq!(&make_value(1, 2, 16)[..5], b"w1-2|");
        assert_ne!(make_value(1, 2, 32), make_value(2, 1, 32));
        assert_eq!(make_value(3, 10, 2), b"w3-10|");
    }
}

//! Writer and reader state machines.
//!
//! Both are sans-IO: an operation starts with [`Writer::write`] or
//! [`Reader::read`], which return the first batch of messages, and advances
//! with `on_message`, which returns further messages and, eventually, a
//! [`Completion`]. Acknowledgements that belong to an earlier round or
//! operation are ignored.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::Message;
use crate::crypto::{shamir_split, KeyRing, Nonce, ShamirError};
use crate::erasure::{self, ErasureError};
use crate::predicates::{
    self, invalid, safe_witness_with, FilterReply, ReplyTable, RestoreError, SafeWitness,
};
use crate::types::{
    mac_vector, Candidate, ClientId, Commitment, Mode, Mutation, Params, PowKind, Proof,
    ServerId, Timestamp, Value,
};

pub type Outgoing = Vec<(ServerId, Message)>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("an operation is already in progress")]
    Busy,
    #[error("values must be non-empty")]
    EmptyValue,
    #[error("multi-writer clients need the key ring")]
    MissingKeys,
    #[error(transparent)]
    Erasure(#[from] ErasureError),
    #[error(transparent)]
    Shamir(#[from] ShamirError),
    #[error("restore failed: {0}")]
    Restore(#[from] RestoreError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Written { ts: Timestamp },
    Read { value: Value, ts: Timestamp, repaired: bool },
    Failed(ClientError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub rounds: u32,
    pub outcome: Outcome,
}

/// What a client wants done after consuming one message.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Step {
    pub sends: Outgoing,
    pub done: Option<Completion>,
    /// Candidates removed from `C` by the `invalid` predicate.
    pub pruned: Vec<Candidate>,
}

fn broadcast(servers: usize, msg: impl Fn(ServerId) -> Message) -> Outgoing {
    (1..=servers).map(|i| (i, msg(i))).collect()
}

#[derive(Debug, Clone)]
enum WriterPhase {
    Idle,
    Clock { echo: Timestamp, best: Timestamp },
    Store { ts: Timestamp, proof: Proof, vec: Option<Vec<crate::crypto::MacTag>> },
    Complete { ts: Timestamp },
}

#[derive(Debug, Clone)]
pub struct Writer {
    id: ClientId,
    params: Params,
    keys: Option<KeyRing>,
    rng: ChaCha8Rng,
    ts: Timestamp,
    value: Vec<u8>,
    phase: WriterPhase,
    acks: BTreeSet<ServerId>,
    rounds: u32,
    mutation: Option<Mutation>,
}

impl Writer {
    /// `id` doubles as the timestamp `pid` and must be non-zero. `seed`
    /// drives nonces and polynomials.
    pub fn new(id: ClientId, params: Params, keys: Option<KeyRing>, seed: u64) -> Result<Self, ClientError> {
        assert!(id != 0, "client id 0 is reserved");
        if params.mode == Mode::Mw && keys.is_none() {
            return Err(ClientError::MissingKeys);
        }
        Ok(Writer {
            id,
            params,
            keys,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ts: Timestamp::ZERO,
            value: Vec::new(),
            phase: WriterPhase::Idle,
            acks: BTreeSet::new(),
            rounds: 0,
            mutation: None,
        })
    }

    pub fn with_mutation(mut self, mutation: Option<Mutation>) -> Self {
        self.mutation = mutation;
        self
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    /// Timestamp of the last write this writer started.
    pub fn ts(&self) -> Timestamp {
        self.ts
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.phase, WriterPhase::Idle)
    }

    pub fn write(&mut self, value: &[u8]) -> Result<Outgoing, ClientError> {
        if !self.is_idle() {
            return Err(ClientError::Busy);
        }
        if value.is_empty() {
            return Err(ClientError::EmptyValue);
        }
        self.value = value.to_vec();
        self.rounds = 0;
        match self.params.mode {
            Mode::Sw => self.start_store(Timestamp::sw(self.ts.num + 1)),
            Mode::Mw => {
                self.rounds = 1;
                self.acks.clear();
                let echo = self.ts;
                self.phase = WriterPhase::Clock { echo, best: Timestamp::ZERO };
                Ok(broadcast(self.params.servers(), |_| Message::Clock { ts: echo }))
            }
        }
    }

    fn start_store(&mut self, ts: Timestamp) -> Result<Outgoing, ClientError> {
        let s = self.params.servers();
        let (fragments, cc) = erasure::encode(&self.value, self.params.k(), s)?;
        let (proof, commitments) = match self.params.pow {
            PowKind::Hash => {
                let n = Nonce::random(&mut self.rng);
                (Proof::Nonce(n), vec![Commitment::NonceHash(n.commitment()); s])
            }
            PowKind::Shamir => {
                let (poly, shares) = shamir_split(&mut self.rng, self.params.t, s, self.params.q)?;
                (Proof::Polynomial(poly), shares.into_iter().map(Commitment::Share).collect())
            }
        };
        let vec = match (&self.params.mode, &self.keys) {
            (Mode::Mw, Some(keys)) => Some(mac_vector(keys.group_keys(), &ts, &proof.digest())),
            _ => None,
        };
        self.ts = ts;
        self.rounds += 1;
        self.acks.clear();
        let out = fragments
            .into_iter()
            .zip(commitments)
            .enumerate()
            .map(|(i, (fragment, commitment))| {
                (
                    i + 1,
                    Message::Store {
                        ts,
                        fragment,
                        cc: cc.clone(),
                        commitment,
                        vec: vec.clone(),
                    },
                )
            })
            .collect();
        self.phase = WriterPhase::Store { ts, proof, vec };
        Ok(out)
    }

    pub fn on_message(&mut self, from: ServerId, msg: Message) -> Step {
        if from == 0 || from > self.params.servers() {
            return Step::default();
        }
        let quorum = self.params.quorum();
        match (&mut self.phase, msg) {
            (WriterPhase::Clock { echo, best }, Message::ClockAck { ts, lc_ts }) if ts.same_as(echo) => {
                if !self.acks.insert(from) {
                    return Step::default();
                }
                let trusted = self.mutation == Some(Mutation::SkipClockMac)
                    || lc_ts.verify(self.keys.as_ref().expect("keys").writer_key());
                if trusted && lc_ts > *best {
                    *best = lc_ts;
                }
                if self.acks.len() < quorum {
                    return Step::default();
                }
                let num = best.num + 1;
                let ts = Timestamp::issue(num, self.id, self.keys.as_ref().expect("keys").writer_key());
                self.finish_or_fail(|w| w.start_store(ts))
            }
            (WriterPhase::Store { ts, proof, vec }, Message::StoreAck { ts: acked }) if acked.same_as(ts) => {
                if !self.acks.insert(from) || self.acks.len() < quorum {
                    return Step::default();
                }
                let (ts, proof, vec) = (*ts, proof.clone(), vec.clone());
                self.rounds += 1;
                self.acks.clear();
                self.phase = WriterPhase::Complete { ts };
                Step {
                    sends: broadcast(self.params.servers(), |_| Message::Complete {
                        ts,
                        proof: proof.clone(),
                        vec: vec.clone(),
                    }),
                    ..Step::default()
                }
            }
            (WriterPhase::Complete { ts }, Message::CompleteAck { ts: acked }) if acked.same_as(ts) => {
                if !self.acks.insert(from) || self.acks.len() < quorum {
                    return Step::default();
                }
                let ts = *ts;
                self.phase = WriterPhase::Idle;
                Step {
                    done: Some(Completion { rounds: self.rounds, outcome: Outcome::Written { ts } }),
                    ..Step::default()
                }
            }
            _ => Step::default(),
        }
    }

    fn finish_or_fail(&mut self, f: impl FnOnce(&mut Self) -> Result<Outgoing, ClientError>) -> Step {
        match f(self) {
            Ok(sends) => Step { sends, ..Step::default() },
            Err(e) => {
                self.phase = WriterPhase::Idle;
                Step {
                    done: Some(Completion { rounds: self.rounds, outcome: Outcome::Failed(e) }),
                    ..Step::default()
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum ReaderPhase {
    Idle,
    Collect,
    Filter,
    Repair { value: Value, ts: Timestamp },
}

#[derive(Debug, Clone)]
pub struct Reader {
    id: ClientId,
    params: Params,
    tsr: u64,
    phase: ReaderPhase,
    q: BTreeSet<ServerId>,
    r: BTreeSet<ServerId>,
    c: BTreeSet<Candidate>,
    excluded: BTreeSet<Candidate>,
    w: ReplyTable,
    rounds: u32,
    mutation: Option<Mutation>,
}

impl Reader {
    pub fn new(id: ClientId, params: Params) -> Self {
        Reader {
            id,
            params,
            tsr: 0,
            phase: ReaderPhase::Idle,
            q: BTreeSet::new(),
            r: BTreeSet::new(),
            c: BTreeSet::new(),
            excluded: BTreeSet::new(),
            w: BTreeMap::new(),
            rounds: 0,
            mutation: None,
        }
    }

    pub fn with_mutation(mut self, mutation: Option<Mutation>) -> Self {
        self.mutation = mutation;
        self
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn tsr(&self) -> u64 {
        self.tsr
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.phase, ReaderPhase::Idle)
    }

    /// The current candidate set `C`.
    pub fn candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.c.iter()
    }

    pub fn read(&mut self) -> Result<Outgoing, ClientError> {
        if !self.is_idle() {
            return Err(ClientError::Busy);
        }
        self.tsr += 1;
        self.q.clear();
        self.r.clear();
        self.c.clear();
        self.excluded.clear();
        self.w.clear();
        self.rounds = 1;
        self.phase = ReaderPhase::Collect;
        let tsr = self.tsr;
        Ok(broadcast(self.params.servers(), |_| Message::Collect { tsr }))
    }

    pub fn on_message(&mut self, from: ServerId, msg: Message) -> Step {
        if from == 0 || from > self.params.servers() {
            return Step::default();
        }
        match (&self.phase, msg) {
            (ReaderPhase::Collect, Message::CollectAck { tsr, candidates }) if tsr == self.tsr => {
                self.on_collect_ack(from, candidates)
            }
            (ReaderPhase::Filter, Message::FilterAck { tsr, ts, payload }) if tsr == self.tsr => {
                self.on_filter_ack(from, FilterReply { ts, payload })
            }
            (ReaderPhase::Repair { .. }, Message::RepairAck { tsr }) if tsr == self.tsr => {
                self.on_repair_ack(from)
            }
            _ => Step::default(),
        }
    }

    fn on_collect_ack(&mut self, from: ServerId, candidates: Vec<Candidate>) -> Step {
        if !self.q.insert(from) {
            return Step::default();
        }
        let take = match self.params.mode {
            Mode::Sw => candidates.len(),
            Mode::Mw => 1,
        };
        for c in candidates.into_iter().take(take) {
            if !c.is_initial() {
                self.c.insert(c);
            }
        }
        if self.q.len() < self.params.quorum() {
            return Step::default();
        }
        self.rounds += 1;
        self.phase = ReaderPhase::Filter;
        let tsr = self.tsr;
        let set: Vec<Candidate> = self.c.iter().cloned().collect();
        Step {
            sends: broadcast(self.params.servers(), |_| Message::Filter {
                tsr,
                candidates: set.clone(),
            }),
            ..Step::default()
        }
    }

    fn safe_witness(&self, c: &Candidate) -> Option<SafeWitness> {
        let need = match self.mutation {
            Some(Mutation::SafeWithT) => self.params.t,
            _ => self.params.t + 1,
        };
        safe_witness_with(c, &self.w, &self.params, need)
    }

    fn on_filter_ack(&mut self, from: ServerId, reply: FilterReply) -> Step {
        if !self.r.insert(from) {
            return Step::default();
        }
        self.w.insert(from, reply);
        let mut step = Step::default();
        let pruned: Vec<Candidate> = self
            .c
            .iter()
            .filter(|c| invalid(c, &self.w, &self.params))
            .cloned()
            .collect();
        for c in &pruned {
            self.c.remove(c);
            self.excluded.insert(c.clone());
        }
        step.pruned = pruned;
        if self.r.len() < self.params.quorum() {
            return step;
        }
        if self.c.is_empty() {
            self.phase = ReaderPhase::Idle;
            step.done = Some(Completion {
                rounds: self.rounds,
                outcome: Outcome::Read { value: None, ts: Timestamp::ZERO, repaired: false },
            });
            return step;
        }
        let Some(top) = self.c.iter().next_back() else {
            return step;
        };
        let top_ts = top.ts;
        // Twins that differ only in the vector: prefer the one already matching its witness.
        let safe: Vec<(Candidate, SafeWitness)> = self
            .c
            .iter()
            .rev()
            .take_while(|c| c.ts == top_ts)
            .filter_map(|c| self.safe_witness(c).map(|w| (c.clone(), w)))
            .collect();
        let matching = safe.iter().position(|(c, w)| c.vec == w.vec).unwrap_or(0);
        let Some((chosen, witness)) = safe.into_iter().nth(matching) else {
            return step;
        };
        let check = self.mutation != Some(Mutation::DecodeWithoutCc);
        let value = match predicates::restore_with(&chosen.ts, &self.w, &self.params, check) {
            Ok(v) => v,
            Err(e) => {
                self.phase = ReaderPhase::Idle;
                step.done = Some(Completion { rounds: self.rounds, outcome: Outcome::Failed(e.into()) });
                return step;
            }
        };
        if self.params.mode == Mode::Mw && chosen.vec != witness.vec {
            let mut repaired = chosen;
            repaired.vec = witness.vec;
            self.rounds += 1;
            self.phase = ReaderPhase::Repair { value: Some(value), ts: repaired.ts };
            self.q.clear();
            let tsr = self.tsr;
            step.sends = broadcast(self.params.servers(), |_| Message::Repair {
                tsr,
                candidate: repaired.clone(),
            });
            return step;
        }
        self.phase = ReaderPhase::Idle;
        step.done = Some(Completion {
            rounds: self.rounds,
            outcome: Outcome::Read { value: Some(value), ts: chosen.ts, repaired: false },
        });
        step
    }

    fn on_repair_ack(&mut self, from: ServerId) -> Step {
        if !self.q.insert(from) || self.q.len() < self.params.quorum() {
            return Step::default();
        }
        let ReaderPhase::Repair { value, ts } = std::mem::replace(&mut self.phase, ReaderPhase::Idle) else {
            unreachable!()
        };
        Step {
            done: Some(Completion {
                rounds: self.rounds,
                outcome: Outcome::Read { value, ts, repaired: true },
            }),
            ..Step::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::MacTag;
    use crate::server::{Origin, Server};

    fn params(mode: Mode) -> Params {
        Params::new(1, mode, PowKind::Hash)
    }

    struct Cluster {
        servers: Vec<Server>,
    }

    impl Cluster {
        fn new(p: Params, ring: Option<&KeyRing>) -> Self {
            Cluster {
                servers: (1..=p.servers())
                    .map(|i| Server::new(i, p, ring.map(|r| r.server_key(i).clone())))
                    .collect(),
            }
        }

        /// Delivers to the listed servers only, in order; returns replies.
        fn deliver(&mut self, from: Origin, out: &Outgoing, to: &[ServerId]) -> Vec<(ServerId, Message)> {
            out.iter()
                .filter(|(i, _)| to.contains(i))
                .filter_map(|(i, m)| self.servers[i - 1].handle(from, m.clone()).reply.map(|r| (*i, r)))
                .collect()
        }
    }

    fn drive_writer(w: &mut Writer, cl: &mut Cluster, value: &[u8], to: &[ServerId]) -> Completion {
        let mut out = w.write(value).unwrap();
        loop {
            let replies = cl.deliver(Origin::Writer(w.id()), &out, to);
            out = Vec::new();
            for (i, r) in replies {
                let step = w.on_message(i, r);
                if let Some(done) = step.done {
                    return done;
                }
                out.extend(step.sends);
            }
            assert!(!out.is_empty(), "writer stalled");
        }
    }

    fn drive_reader(r: &mut Reader, cl: &mut Cluster, to: &[ServerId]) -> Completion {
        let mut out = r.read().unwrap();
        loop {
            let replies = cl.deliver(Origin::Reader(r.id()), &out, to);
            out = Vec::new();
            for (i, m) in replies {
                let step = r.on_message(i, m);
                if let Some(done) = step.done {
                    return done;
                }
                out.extend(step.sends);
            }
            assert!(!out.is_empty(), "reader stalled");
        }
    }

    #[test]
    fn sw_write_then_read() {
        let p = params(Mode::Sw);
        let mut cl = Cluster::new(p, None);
        let mut w = Writer::new(1, p, None, 7).unwrap();
        let done = drive_writer(&mut w, &mut cl, b"abc", &[1, 2, 3, 4]);
        assert_eq!(done, Completion { rounds: 2, outcome: Outcome::Written { ts: Timestamp::sw(1) } });
        let done = drive_writer(&mut w, &mut cl, b"def", &[2, 3, 4]);
        assert_eq!(done.outcome, Outcome::Written { ts: Timestamp::sw(2) });

        let mut r = Reader::new(100, p);
        let done = drive_reader(&mut r, &mut cl, &[1, 2, 3]);
        assert_eq!(done.rounds, 2);
        assert_eq!(
            done.outcome,
            Outcome::Read { value: Some(b"def".to_vec()), ts: Timestamp::sw(2), repaired: false }
        );
    }

    #[test]
    fn fresh_read_returns_bottom() {
        for mode in [Mode::Sw, Mode::Mw] {
            let p = params(mode);
            let ring = KeyRing::generate(&mut ChaCha8Rng::seed_from_u64(1), 4);
            let mut cl = Cluster::new(p, Some(&ring));
            let mut r = Reader::new(100, p);
            let done = drive_reader(&mut r, &mut cl, &[1, 2, 3, 4]);
            assert_eq!(done.rounds, 2);
            assert!(matches!(done.outcome, Outcome::Read { value: None, .. }));
        }
    }

    #[test]
    fn writer_rejects_empty_and_concurrent_ops() {
        let p = params(Mode::Sw);
        let mut w = Writer::new(1, p, None, 1).unwrap();
        assert_eq!(w.write(b""), Err(ClientError::EmptyValue));
        w.write(b"x").unwrap();
        assert_eq!(w.write(b"y"), Err(ClientError::Busy));
        assert!(Writer::new(1, params(Mode::Mw), None, 1).is_err());
    }

    #[test]
    fn stale_and_duplicate_acks_are_ignored() {
        let p = params(Mode::Sw);
        let mut w = Writer::new(1, p, None, 1).unwrap();
        w.write(b"x").unwrap();
        for _ in 0..5 {
            assert_eq!(w.on_message(1, Message::StoreAck { ts: Timestamp::sw(1) }), Step::default());
        }
        assert_eq!(w.on_message(2, Message::StoreAck { ts: Timestamp::sw(9) }), Step::default());
        assert_eq!(w.on_message(2, Message::CompleteAck { ts: Timestamp::sw(1) }), Step::default());
        w.on_message(2, Message::StoreAck { ts: Timestamp::sw(1) });
        let step = w.on_message(3, Message::StoreAck { ts: Timestamp::sw(1) });
        assert_eq!(step.sends.len(), 4);
        assert!(step.sends.iter().all(|(_, m)| matches!(m, Message::Complete { .. })));
    }

    #[test]
    fn clock_takes_max_authenticated_timestamp() {
        let p = params(Mode::Mw);
        let ring = KeyRing::generate(&mut ChaCha8Rng::seed_from_u64(2), 4);
        let mut w = Writer::new(7, p, Some(ring.clone()), 1).unwrap();
        w.write(b"v").unwrap();
        let ok3 = Timestamp::issue(3, 1, ring.writer_key());
        let bad5 = Timestamp { num: 5, pid: 2, tag: Some(MacTag([0; 32])) };
        let ok4 = Timestamp::issue(4, 3, ring.writer_key());
        let forged = Timestamp { num: 1 << 40, pid: 9, tag: Some(MacTag([1; 32])) };
        w.on_message(1, Message::ClockAck { ts: Timestamp::ZERO, lc_ts: ok3 });
        w.on_message(2, Message::ClockAck { ts: Timestamp::ZERO, lc_ts: bad5 });
        let step = w.on_message(3, Message::ClockAck { ts: Timestamp::ZERO, lc_ts: ok4 });
        let Message::Store { ts, .. } = &step.sends[0].1 else { panic!() };
        assert_eq!((ts.num, ts.pid), (5, 7));
        assert!(ts.verify(ring.writer_key()));

        let mut w = Writer::new(7, p, Some(ring.clone()), 1).unwrap();
        w.write(b"v").unwrap();
        w.on_message(4, Message::ClockAck { ts: Timestamp::ZERO, lc_ts: forged });
        w.on_message(2, Message::ClockAck { ts: Timestamp::ZERO, lc_ts: ok3 });
        let step = w.on_message(3, Message::ClockAck { ts: Timestamp::ZERO, lc_ts: ok4 });
        let Message::Store { ts, .. } = &step.sends[0].1 else { panic!() };
        assert_eq!(ts.num, 5);

        let mut w = Writer::new(7, p, Some(ring.clone()), 1).unwrap().with_mutation(Some(Mutation::SkipClockMac));
        w.write(b"v").unwrap();
        w.on_message(1, Message::ClockAck { ts: Timestamp::ZERO, lc_ts: forged });
        w.on_message(2, Message::ClockAck { ts: Timestamp::ZERO, lc_ts: ok3 });
        let step = w.on_message(3, Message::ClockAck { ts: Timestamp::ZERO, lc_ts: ok4 });
        let Message::Store { ts, .. } = &step.sends[0].1 else { panic!() };
        assert_eq!(ts.num, (1 << 40) + 1);
    }

    #[test]
    fn clock_on_fresh_system_gives_one() {
        let p = params(Mode::Mw);
        let ring = KeyRing::generate(&mut ChaCha8Rng::seed_from_u64(2), 4);
        let mut cl = Cluster::new(p, Some(&ring));
        let mut w = Writer::new(3, p, Some(ring.clone()), 1).unwrap();
        let done = drive_writer(&mut w, &mut cl, b"first", &[1, 2, 3, 4]);
        assert_eq!(done.rounds, 3);
        let Outcome::Written { ts } = done.outcome else { panic!() };
        assert_eq!((ts.num, ts.pid), (1, 3));
    }

    #[test]
    fn mw_concurrent_writers_and_read() {
        let p = params(Mode::Mw);
        let ring = KeyRing::generate(&mut ChaCha8Rng::seed_from_u64(4), 4);
        let mut cl = Cluster::new(p, Some(&ring));
        let mut w1 = Writer::new(1, p, Some(ring.clone()), 1).unwrap();
        let mut w2 = Writer::new(2, p, Some(ring.clone()), 2).unwrap();
        drive_writer(&mut w1, &mut cl, b"one", &[1, 2, 3]);
        drive_writer(&mut w2, &mut cl, b"two", &[2, 3, 4]);
        let mut r = Reader::new(100, p);
        let done = drive_reader(&mut r, &mut cl, &[1, 2, 4]);
        assert_eq!(done.rounds, 2);
        let Outcome::Read { value, ts, repaired } = done.outcome else { panic!() };
        assert_eq!(value.as_deref(), Some(&b"two"[..]));
        assert_eq!((ts.num, ts.pid), (2, 2));
        assert!(!repaired);
    }

    #[test]
    fn mw_read_repairs_corrupted_vector() {
        let p = params(Mode::Mw);
        let ring = KeyRing::generate(&mut ChaCha8Rng::seed_from_u64(5), 4);
        let mut cl = Cluster::new(p, Some(&ring));
        let mut w = Writer::new(1, p, Some(ring.clone()), 1).unwrap();
        drive_writer(&mut w, &mut cl, b"value", &[1, 2, 3, 4]);

        let mut r = Reader::new(100, p);
        let out = r.read().unwrap();
        // every collect reply carries a corrupted vector
        let mut sends = Vec::new();
        for (i, m) in cl.deliver(Origin::Reader(100), &out, &[1, 2, 3]) {
            let m = match m {
                Message::CollectAck { tsr, mut candidates } => {
                    for e in candidates[0].vec.as_mut().unwrap() {
                        *e = MacTag([0xff; 32]);
                    }
                    Message::CollectAck { tsr, candidates }
                }
                m => m,
            };
            sends.extend(r.on_message(i, m).sends);
        }
        let mut done = None;
        let mut repair = Vec::new();
        for (i, m) in cl.deliver(Origin::Reader(100), &sends, &[1, 2, 3, 4]) {
            let step = r.on_message(i, m);
            repair.extend(step.sends);
            done = done.or(step.done);
        }
        assert!(done.is_none());
        assert!(repair.iter().all(|(_, m)| matches!(m, Message::Repair { .. })));
        for (i, m) in cl.deliver(Origin::Reader(100), &repair, &[1, 2, 3, 4]) {
            done = done.or(r.on_message(i, m).done);
        }
        let done = done.unwrap();
        assert_eq!(done.rounds, 3);
        assert_eq!(
            done.outcome,
            Outcome::Read { value: Some(b"value".to_vec()), ts: w.ts(), repaired: true }
        );
    }

    #[test]
    fn mw_read_prefers_the_uncorrupted_twin() {
        let p = params(Mode::Mw);
        let ring = KeyRing::generate(&mut ChaCha8Rng::seed_from_u64(5), 4);
        let mut cl = Cluster::new(p, Some(&ring));
        let mut w = Writer::new(1, p, Some(ring.clone()), 1).unwrap();
        drive_writer(&mut w, &mut cl, b"value", &[1, 2, 3, 4]);

        let mut r = Reader::new(100, p);
        let out = r.read().unwrap();
        // only server 1 corrupts its vector
        let mut sends = Vec::new();
        for (i, m) in cl.deliver(Origin::Reader(100), &out, &[1, 2, 3]) {
            let m = match m {
                Message::CollectAck { tsr, mut candidates } if i == 1 => {
                    for e in candidates[0].vec.as_mut().unwrap() {
                        *e = MacTag([0xff; 32]);
                    }
                    Message::CollectAck { tsr, candidates }
                }
                m => m,
            };
            sends.extend(r.on_message(i, m).sends);
        }
        let mut done = None;
        for (i, m) in cl.deliver(Origin::Reader(100), &sends, &[1, 2, 3, 4]) {
            done = done.or(r.on_message(i, m).done);
        }
        let done = done.unwrap();
        assert_eq!(done.rounds, 2);
        assert_eq!(
            done.outcome,
            Outcome::Read { value: Some(b"value".to_vec()), ts: w.ts(), repaired: false }
        );
    }

    #[test]
    fn forged_high_candidate_is_pruned() {
        let p = params(Mode::Sw);
        let mut cl = Cluster::new(p, None);
        let mut w = Writer::new(1, p, None, 1).unwrap();
        drive_writer(&mut w, &mut cl, b"real", &[1, 2, 3, 4]);
        let forged = Candidate::new(Timestamp::sw(50), Proof::Nonce(Nonce([3; 32])), None);

        let mut r = Reader::new(100, p);
        let out = r.read().unwrap();
        let mut sends = Vec::new();
        for (i, m) in cl.deliver(Origin::Reader(100), &out, &[1, 2, 3, 4]) {
            let m = match m {
                Message::CollectAck { tsr, mut candidates } if i == 1 => {
                    candidates.push(forged.clone());
                    Message::CollectAck { tsr, candidates }
                }
                m => m,
            };
            sends.extend(r.on_message(i, m).sends);
        }
        let mut pruned = Vec::new();
        let mut done = None;
        for (i, m) in cl.deliver(Origin::Reader(100), &sends, &[1, 2, 3]) {
            let step = r.on_message(i, m);
            pruned.extend(step.pruned);
            done = done.or(step.done);
        }
        assert_eq!(pruned, vec![forged]);
        let done = done.unwrap();
        assert_eq!(done.outcome, Outcome::Read { value: Some(b"real".to_vec()), ts: Timestamp::sw(1), repaired: false });
    }

    #[test]
    fn shamir_pow_round_trip() {
        for mode in [Mode::Sw, Mode::Mw] {
            let p = Params::new(2, mode, PowKind::Shamir);
            let ring = KeyRing::generate(&mut ChaCha8Rng::seed_from_u64(6), p.servers());
            let mut cl = Cluster::new(p, Some(&ring));
            let mut w = Writer::new(1, p, Some(ring.clone()), 9).unwrap();
            drive_writer(&mut w, &mut cl, b"shared secret", &[1, 2, 3, 4, 5, 6, 7]);
            let mut r = Reader::new(100, p);
            let done = drive_reader(&mut r, &mut cl, &[3, 4, 5, 6, 7]);
            assert!(matches!(done.outcome, Outcome::Read { value: Some(ref v), .. } if v == b"shared secret"));
        }
    }
}

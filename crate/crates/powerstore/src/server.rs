//! Server state machine for both protocol variants.
//!
//! A [`Server`] holds `lc`, the candidate set `LC` (single-writer only) and
//! the history `Hist`. It is sans-IO: [`Server::handle`] consumes one message
//! and returns at most one reply plus the instrumentation events it caused.

use std::collections::BTreeSet;

use crate::codec::{FilterPayload, Message};
use crate::crypto::{Digest, SecretKey};
use crate::predicates::{self, History};
use crate::types::{
    max_or_initial, Candidate, ClientId, HistoryEntry, Mode, Mutation, Params, ServerId,
    Timestamp,
};

/// Who sent a message. Channels are authenticated, so servers know whether
/// the peer is a writer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Origin {
    Writer(ClientId),
    Reader(ClientId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerEvent {
    /// A STORE was written into `Hist`.
    Stored { ts: Timestamp },
    /// `valid` returned true for a candidate carrying this proof.
    Accepted { ts: Timestamp, proof: Digest },
    LcChanged { from: Timestamp, to: Timestamp },
}

#[derive(Debug, Clone, Default)]
pub struct Handled {
    pub reply: Option<Message>,
    pub events: Vec<ServerEvent>,
}

/// A read-only view of server state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerSnapshot {
    pub lc: Candidate,
    pub lc_set: Vec<Candidate>,
    pub history: Vec<Timestamp>,
}

#[derive(Debug, Clone)]
pub struct Server {
    id: ServerId,
    params: Params,
    key: Option<SecretKey>,
    lc: Candidate,
    lc_set: BTreeSet<Candidate>,
    hist: History,
    mutation: Option<Mutation>,
    events: Vec<ServerEvent>,
}

impl Server {
    /// `key` is this server's group key `k_i`; multi-writer servers need it.
    pub fn new(id: ServerId, params: Params, key: Option<SecretKey>) -> Self {
        assert!(id >= 1 && id <= params.servers(), "server index out of range");
        assert!(
            params.mode == Mode::Sw || key.is_some(),
            "multi-writer servers need a group key"
        );
        Server {
            id,
            params,
            key,
            lc: Candidate::initial(),
            lc_set: BTreeSet::new(),
            hist: History::new(),
            mutation: None,
            events: Vec::new(),
        }
    }

    pub fn with_mutation(mut self, mutation: Option<Mutation>) -> Self {
        self.mutation = mutation;
        self
    }

    pub fn id(&self) -> ServerId {
        self.id
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn lc(&self) -> &Candidate {
        &self.lc
    }

    pub fn history(&self) -> &History {
        &self.hist
    }

    /// `|LC|`, the write-back candidates kept besides `lc`.
    pub fn lc_set_len(&self) -> usize {
        self.lc_set.len()
    }

    pub fn snapshot(&self) -> ServerSnapshot {
        ServerSnapshot {
            lc: self.lc.clone(),
            lc_set: self.lc_set.iter().cloned().collect(),
            history: self.hist.values().map(|e| e.ts).collect(),
        }
    }

    pub fn handle(&mut self, from: Origin, msg: Message) -> Handled {
        let writer = matches!(from, Origin::Writer(_));
        let mw = self.params.mode == Mode::Mw;
        let reply = match msg {
            Message::Store {
                ts,
                fragment,
                cc,
                commitment,
                vec,
            } if writer => {
                self.on_store(HistoryEntry {
                    ts,
                    fragment,
                    cc,
                    commitment,
                    vec,
                });
                Some(Message::StoreAck { ts })
            }
            Message::Complete { ts, proof, vec } if writer => {
                self.on_complete(Candidate { ts, proof: Some(proof), vec });
                Some(Message::CompleteAck { ts })
            }
            Message::Clock { ts } if writer && mw => Some(Message::ClockAck {
                ts,
                lc_ts: self.lc.ts,
            }),
            Message::Collect { tsr } => Some(Message::CollectAck {
                tsr,
                candidates: self.on_collect(),
            }),
            Message::Filter { tsr, candidates } => {
                let (ts, payload) = self.on_filter(&candidates);
                Some(Message::FilterAck { tsr, ts, payload })
            }
            Message::Repair { tsr, candidate } if mw => {
                self.on_repair(candidate);
                Some(Message::RepairAck { tsr })
            }
            _ => None,
        };
        Handled {
            reply,
            events: std::mem::take(&mut self.events),
        }
    }

    fn set_lc(&mut self, c: Candidate) {
        if !c.ts.same_as(&self.lc.ts) || c != self.lc {
            self.events.push(ServerEvent::LcChanged {
                from: self.lc.ts,
                to: c.ts,
            });
        }
        self.lc = c;
    }

    /// Replaces `lc` when `c` is newer (or unconditionally under the
    /// non-monotone mutation).
    fn raise_lc(&mut self, c: Candidate) {
        let forced = self.mutation == Some(Mutation::NonMonotoneLc) && !c.is_initial();
        if c.ts > self.lc.ts || (forced && c != self.lc) {
            self.set_lc(c);
        }
    }

    pub fn on_store(&mut self, entry: HistoryEntry) {
        let ts = entry.ts;
        self.hist.insert(ts, entry);
        self.events.push(ServerEvent::Stored { ts });
    }

    pub fn on_complete(&mut self, c: Candidate) {
        self.raise_lc(c);
    }

    fn valid_by_hist(&self, c: &Candidate) -> bool {
        if self.mutation == Some(Mutation::SkipNonceCheck) {
            return c.proof.is_some() && self.hist.contains_key(&c.ts);
        }
        predicates::valid_by_hist(c, &self.hist, &self.params)
    }

    fn valid_mac(&self, c: &Candidate) -> bool {
        let key = self.key.as_ref().expect("multi-writer key");
        if self.mutation == Some(Mutation::SkipNonceCheck) {
            return c.proof.is_some() && c.vec.is_some();
        }
        predicates::mac_entry_valid(c, self.id, key, self.params.servers())
    }

    /// `valid(c)` for this server's mode, recording an acceptance event.
    fn valid(&mut self, c: &Candidate) -> bool {
        let ok = match self.params.mode {
            Mode::Sw => self.valid_by_hist(c),
            Mode::Mw => self.valid_by_hist(c) || self.valid_mac(c),
        };
        if ok {
            if let Some(proof) = c.proof_digest() {
                self.events.push(ServerEvent::Accepted { ts: c.ts, proof });
            }
        }
        ok
    }

    fn accepted_max<'a>(
        &mut self,
        cands: impl IntoIterator<Item = &'a Candidate>,
        check: fn(&mut Self, &Candidate) -> bool,
    ) -> Candidate {
        let mut kept = Vec::new();
        for c in cands {
            if check(self, c) {
                kept.push(c);
            }
        }
        max_or_initial(kept)
    }

    /// Single-writer garbage collection: promote the best valid candidate in
    /// `LC` and drop candidates that are stale or already in `Hist`.
    pub fn gc(&mut self) {
        let set: Vec<Candidate> = self.lc_set.iter().cloned().collect();
        let c_hv = self.accepted_max(&set, Self::valid);
        self.raise_lc(c_hv);
        let lc_ts = self.lc.ts;
        let hist = &self.hist;
        self.lc_set
            .retain(|c| c.ts > lc_ts && !hist.contains_key(&c.ts));
    }

    /// COLLECT: `LC ∪ {lc}` after garbage collection, or just `lc` in
    /// multi-writer mode.
    pub fn on_collect(&mut self) -> Vec<Candidate> {
        if self.params.mode == Mode::Mw {
            return vec![self.lc.clone()];
        }
        self.gc();
        let mut out: BTreeSet<Candidate> = self.lc_set.clone();
        out.insert(self.lc.clone());
        out.into_iter().collect()
    }

    /// FILTER: returns the timestamp and stored payload the reader gets back.
    pub fn on_filter(&mut self, cands: &[Candidate]) -> (Timestamp, Option<FilterPayload>) {
        let chosen = match self.params.mode {
            Mode::Sw => {
                self.lc_set.extend(cands.iter().cloned());
                self.accepted_max(cands, Self::valid)
            }
            Mode::Mw => {
                let c_wb = self.accepted_max(cands, Self::valid);
                self.raise_lc(c_wb);
                let c_rt = max_or_initial(cands.iter().filter(|c| self.valid_by_hist(c)));
                c_rt
            }
        };
        if chosen.is_initial() {
            return (Timestamp::ZERO, None);
        }
        let entry = &self.hist[&chosen.ts];
        let payload = FilterPayload {
            fragment: entry.fragment.clone(),
            cc: entry.cc.clone(),
            vec: match self.params.mode {
                Mode::Sw => None,
                Mode::Mw => entry.vec.clone(),
            },
        };
        (entry.ts, Some(payload))
    }

    /// Multi-writer REPAIR.
    pub fn on_repair(&mut self, c: Candidate) {
        if c.ts <= self.lc.ts && self.mutation != Some(Mutation::NonMonotoneLc) {
            return;
        }
        if self.mutation == Some(Mutation::SkipRepairValidation) || self.valid(&c) {
            self.raise_lc(c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{KeyRing, Nonce};
    use crate::erasure::encode;
    use crate::types::{mac_vector, Commitment, PowKind, Proof};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const W: Origin = Origin::Writer(1);
    const R: Origin = Origin::Reader(100);

    fn store_msg(ts: Timestamp, n: &Nonce, i: usize, vec: Option<Vec<crate::crypto::MacTag>>) -> Message {
        let (frs, cc) = encode(b"payload", 2, 4).unwrap();
        Message::Store {
            ts,
            fragment: frs[i - 1].clone(),
            cc,
            commitment: Commitment::NonceHash(n.commitment()),
            vec,
        }
    }

    fn sw_server() -> Server {
        Server::new(1, Params::new(1, Mode::Sw, PowKind::Hash), None)
    }

    #[test]
    fn sw_store_then_complete() {
        let mut s = sw_server();
        let n = Nonce([1; 32]);
        let h = s.handle(W, store_msg(Timestamp::sw(1), &n, 1, None));
        assert_eq!(h.reply, Some(Message::StoreAck { ts: Timestamp::sw(1) }));
        assert!(s.lc().is_initial());
        let h = s.handle(
            W,
            Message::Complete { ts: Timestamp::sw(1), proof: Proof::Nonce(n), vec: None },
        );
        assert_eq!(h.reply, Some(Message::CompleteAck { ts: Timestamp::sw(1) }));
        assert_eq!(s.lc().ts, Timestamp::sw(1));
        // an older completion does not lower lc
        s.handle(W, Message::Complete { ts: Timestamp::sw(0), proof: Proof::Nonce(n), vec: None });
        assert_eq!(s.lc().ts, Timestamp::sw(1));
    }

    #[test]
    fn readers_cannot_store() {
        let mut s = sw_server();
        let n = Nonce([1; 32]);
        let h = s.handle(R, store_msg(Timestamp::sw(1), &n, 1, None));
        assert!(h.reply.is_none());
        assert!(s.history().is_empty());
    }

    #[test]
    fn sw_filter_collect_and_gc() {
        let mut s = sw_server();
        let n = Nonce([7; 32]);
        s.handle(W, store_msg(Timestamp::sw(2), &n, 1, None));
        let good = Candidate::new(Timestamp::sw(2), Proof::Nonce(n), None);
        let forged = Candidate::new(Timestamp::sw(9), Proof::Nonce(Nonce([0; 32])), None);
        let (ts, payload) = s.on_filter(&[good.clone(), forged.clone()]);
        assert_eq!(ts, Timestamp::sw(2));
        assert!(payload.is_some());
        // the reader's candidates land in LC; COLLECT runs gc
        let collected = s.on_collect();
        assert_eq!(s.lc(), &good);
        // forged stays (newer, no history); the good one is now lc
        assert!(collected.contains(&forged));
        assert!(collected.contains(&good));
        assert_eq!(s.snapshot().lc_set, vec![forged]);
    }

    #[test]
    fn gc_promotes_and_filters() {
        let mut s = sw_server();
        let n5 = Nonce([5; 32]);
        let n2 = Nonce([2; 32]);
        let n3 = Nonce([3; 32]);
        s.handle(W, store_msg(Timestamp::sw(5), &n5, 1, None));
        s.handle(W, store_msg(Timestamp::sw(2), &n2, 1, None));
        s.handle(W, Message::Complete { ts: Timestamp::sw(3), proof: Proof::Nonce(n3), vec: None });
        s.on_filter(&[
            Candidate::new(Timestamp::sw(5), Proof::Nonce(n5), None),
            Candidate::new(Timestamp::sw(2), Proof::Nonce(n2), None),
        ]);
        s.gc();
        assert_eq!(s.lc().ts, Timestamp::sw(5));
        assert!(s.snapshot().lc_set.is_empty());
        s.gc();
        assert_eq!(s.lc().ts, Timestamp::sw(5));
    }

    #[test]
    fn mw_collect_returns_lc_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ring = KeyRing::generate(&mut rng, 4);
        let mut s = mw_server(&ring, 1);
        assert_eq!(s.on_collect(), vec![Candidate::initial()]);
        let ts = Timestamp::issue(4, 1, ring.writer_key());
        let n = Nonce([4; 32]);
        let vec = mac_vector(ring.group_keys(), &ts, &n.commitment());
        s.handle(W, Message::Complete { ts, proof: Proof::Nonce(n), vec: Some(vec.clone()) });
        assert_eq!(s.on_collect(), vec![Candidate::new(ts, Proof::Nonce(n), Some(vec))]);
    }

    #[test]
    fn filter_without_valid_candidate_answers_initial() {
        let mut s = sw_server();
        let (ts, payload) = s.on_filter(&[Candidate::new(Timestamp::sw(3), Proof::Nonce(Nonce([1; 32])), None)]);
        assert!(ts.is_initial());
        assert!(payload.is_none());
    }

    fn mw_server(ring: &KeyRing, i: usize) -> Server {
        Server::new(i, Params::new(1, Mode::Mw, PowKind::Hash), Some(ring.server_key(i).clone()))
    }

    #[test]
    fn mw_clock_filter_and_repair() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ring = KeyRing::generate(&mut rng, 4);
        let mut s = mw_server(&ring, 2);
        let ts = Timestamp::issue(1, 1, ring.writer_key());
        let n = Nonce([5; 32]);
        let vec = mac_vector(ring.group_keys(), &ts, &n.commitment());

        let h = s.handle(W, Message::Clock { ts: Timestamp::ZERO });
        assert_eq!(h.reply, Some(Message::ClockAck { ts: Timestamp::ZERO, lc_ts: Timestamp::ZERO }));
        // readers do not get clock replies
        assert!(s.handle(R, Message::Clock { ts: Timestamp::ZERO }).reply.is_none());

        // a candidate known only through its MAC is written back but not returned
        let c = Candidate::new(ts, Proof::Nonce(n), Some(vec.clone()));
        let (rt, payload) = s.on_filter(std::slice::from_ref(&c));
        assert!(rt.is_initial() && payload.is_none());
        assert_eq!(s.lc(), &c);

        // after storing, the same candidate is returned with the stored vec
        s.handle(W, store_msg(ts, &n, 2, Some(vec.clone())));
        let (rt, payload) = s.on_filter(std::slice::from_ref(&c));
        assert!(rt.same_as(&ts));
        assert_eq!(payload.unwrap().vec, Some(vec.clone()));

        // repair with a forged vector is ignored
        let ts2 = Timestamp::issue(2, 1, ring.writer_key());
        let forged = Candidate::new(ts2, Proof::Nonce(n), Some(vec![crate::crypto::MacTag([0; 32]); 4]));
        s.handle(R, Message::Repair { tsr: 1, candidate: forged.clone() });
        assert_eq!(s.lc(), &c);

        let mutant = mw_server(&ring, 2).with_mutation(Some(Mutation::SkipRepairValidation));
        let mut mutant = mutant;
        mutant.handle(R, Message::Repair { tsr: 1, candidate: forged.clone() });
        assert_eq!(mutant.lc(), &forged);
    }

    #[test]
    fn lc_changes_are_reported() {
        let mut s = sw_server();
        let n = Nonce([2; 32]);
        let h = s.handle(W, Message::Complete { ts: Timestamp::sw(4), proof: Proof::Nonce(n), vec: None });
        assert_eq!(
            h.events,
            vec![ServerEvent::LcChanged { from: Timestamp::ZERO, to: Timestamp::sw(4) }]
        );
    }

    #[test]
    fn non_monotone_mutant_lowers_lc() {
        let mut s = sw_server().with_mutation(Some(Mutation::NonMonotoneLc));
        let n = Nonce([2; 32]);
        s.handle(W, Message::Complete { ts: Timestamp::sw(4), proof: Proof::Nonce(n), vec: None });
        s.handle(W, Message::Complete { ts: Timestamp::sw(2), proof: Proof::Nonce(n), vec: None });
        assert_eq!(s.lc().ts, Timestamp::sw(2));
    }
}

//! Byzantine servers and readers.
//!
//! A Byzantine server wraps a correct [`Server`] and rewrites what it sends.
//! All faulty processes share one [`Adversary`], so colluding servers agree
//! on forgeries and readers can replay what the servers saw.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{FilterPayload, Message};
use crate::crypto::{interpolate, mac, MacTag, Nonce, Polynomial, SecretKey, ShamirShare};
use crate::erasure::{self, CrossChecksum, Fragment};
use crate::server::{Origin, Server};
use crate::types::{
    vec_preimage, Candidate, ClientId, Commitment, Mode, Params, PowKind, Proof, ServerId,
    Timestamp,
};

use super::config::{ReaderBehavior, ServerBehavior};

/// A forged write: candidate plus a self-consistent encoding.
#[derive(Debug, Clone)]
struct Forgery {
    cand: Candidate,
    fragments: Vec<Fragment>,
    cc: CrossChecksum,
}

#[derive(Debug, Clone, Default)]
struct StoreSeen {
    ts: Option<Timestamp>,
    shares: BTreeMap<ServerId, ShamirShare>,
}

/// Knowledge and randomness shared by every faulty process.
#[derive(Debug, Clone)]
pub struct Adversary {
    params: Params,
    writers: u64,
    value_size: usize,
    rng: ChaCha8Rng,
    /// Proofs only. Nonces and polynomials use different amounts of
    /// randomness; keeping them apart leaves every other choice identical
    /// across proof kinds.
    proof_rng: ChaCha8Rng,
    keys: BTreeMap<ServerId, SecretKey>,
    byzantine: BTreeSet<ServerId>,
    stores: BTreeMap<Timestamp, StoreSeen>,
    seen: BTreeSet<Candidate>,
    max_num: u64,
    high: Option<Forgery>,
    /// Forgeries per stored timestamp, and whether the proof was rebuilt.
    low: BTreeMap<Timestamp, (Candidate, bool)>,
    /// Forged candidates that reached a correct reader.
    pub forged_sent: BTreeSet<(u64, u64)>,
}

const SEEN_CAP: usize = 256;

impl Adversary {
    pub fn new(
        params: Params,
        writers: usize,
        value_size: usize,
        rng: ChaCha8Rng,
        keys: BTreeMap<ServerId, SecretKey>,
    ) -> Self {
        Adversary {
            params,
            writers: writers.max(1) as u64,
            value_size: value_size.max(1),
            proof_rng: ChaCha8Rng::seed_from_u64(rng.clone().next_u64() ^ 0x9e37_79b9_7f4a_7c15),
            rng,
            byzantine: keys.keys().copied().collect(),
            keys,
            stores: BTreeMap::new(),
            seen: BTreeSet::new(),
            max_num: 0,
            high: None,
            low: BTreeMap::new(),
            forged_sent: BTreeSet::new(),
        }
    }

    pub fn set_byzantine(&mut self, ids: impl IntoIterator<Item = ServerId>) {
        self.byzantine = ids.into_iter().collect();
    }

    fn note_candidate(&mut self, c: &Candidate) {
        if c.is_initial() {
            return;
        }
        if self.seen.len() < SEEN_CAP || self.seen.contains(c) {
            self.seen.insert(c.clone());
        }
    }

    /// Learns from a message. `to` is the receiving server, if any.
    pub fn observe(&mut self, to: Option<ServerId>, msg: &Message) {
        match msg {
            Message::Store { ts, commitment, .. } => {
                self.max_num = self.max_num.max(ts.num);
                let entry = self.stores.entry(*ts).or_default();
                entry.ts = Some(*ts);
                if let (Commitment::Share(share), Some(i)) = (commitment, to) {
                    entry.shares.insert(i, *share);
                }
            }
            Message::Complete { ts, proof, vec } => {
                self.max_num = self.max_num.max(ts.num);
                self.note_candidate(&Candidate { ts: *ts, proof: Some(proof.clone()), vec: vec.clone() });
            }
            Message::CollectAck { candidates, .. } | Message::Filter { candidates, .. } => {
                for c in candidates {
                    self.note_candidate(c);
                }
            }
            Message::Repair { candidate, .. } => self.note_candidate(candidate),
            _ => {}
        }
    }

    fn random_tag(&mut self) -> MacTag {
        let mut b = [0u8; 32];
        self.rng.fill_bytes(&mut b);
        MacTag(b)
    }

    fn random_proof(&mut self) -> Proof {
        match self.params.pow {
            PowKind::Hash => Proof::Nonce(Nonce::random(&mut self.proof_rng)),
            PowKind::Shamir => Proof::Polynomial(Polynomial::random(&mut self.proof_rng, self.params.t, self.params.q)),
        }
    }

    /// MAC vector with genuine entries for Byzantine servers only.
    fn forged_vec(&mut self, ts: &Timestamp, proof: &Proof) -> Option<Vec<MacTag>> {
        if self.params.mode == Mode::Sw {
            return None;
        }
        let digest = proof.digest();
        let pre = vec_preimage(ts, &digest);
        Some(
            (1..=self.params.servers())
                .map(|i| match self.keys.get(&i) {
                    Some(k) => mac(k, &pre),
                    None => self.random_tag(),
                })
                .collect(),
        )
    }

    fn random_ts(&mut self, num: u64) -> Timestamp {
        match self.params.mode {
            Mode::Sw => Timestamp::sw(num),
            Mode::Mw => {
                let pid = self.rng.random_range(1..=self.writers);
                let tag = self.random_tag();
                Timestamp { num, pid, tag: Some(tag) }
            }
        }
    }

    /// A candidate far above anything written, backed by a fabricated value.
    fn high_forgery(&mut self) -> Forgery {
        if let Some(f) = &self.high {
            if f.cand.ts.num > self.max_num {
                return f.clone();
            }
        }
        let ts = self.random_ts(self.max_num + 1000);
        let proof = self.random_proof();
        let vec = self.forged_vec(&ts, &proof);
        let mut value = vec![0u8; self.value_size];
        self.rng.fill_bytes(&mut value);
        let (fragments, cc) =
            erasure::encode(&value, self.params.k(), self.params.servers()).expect("forged encoding");
        let f = Forgery { cand: Candidate { ts, proof: Some(proof), vec }, fragments, cc };
        self.high = Some(f.clone());
        f
    }

    /// A candidate for the newest observed STORE. The proof is random unless
    /// `t + 1` Shamir shares were observed, in which case it is rebuilt.
    fn low_forgery(&mut self) -> Option<Candidate> {
        let (&key, seen) = self.stores.iter().next_back()?;
        let ts = seen.ts.unwrap_or(key);
        let shares: Vec<ShamirShare> = seen.shares.values().cloned().collect();
        let can_rebuild = self.params.pow == PowKind::Shamir && shares.len() > self.params.t;
        if let Some((c, rebuilt)) = self.low.get(&key) {
            if *rebuilt || !can_rebuild {
                return Some(c.clone());
            }
        }
        let rebuilt = can_rebuild.then(|| interpolate(&shares[..=self.params.t]).ok()).flatten();
        let proof = match &rebuilt {
            Some(p) => Proof::Polynomial(p.clone()),
            None => self.random_proof(),
        };
        let vec = self.forged_vec(&ts, &proof);
        let c = Candidate { ts, proof: Some(proof), vec };
        self.low.insert(key, (c.clone(), rebuilt.is_some()));
        Some(c)
    }

    fn garbage_candidate(&mut self) -> Candidate {
        let num = self.rng.random_range(1..=self.max_num + 50);
        let ts = self.random_ts(num);
        let proof = self.random_proof();
        let vec = match self.params.mode {
            Mode::Sw => None,
            Mode::Mw => Some((0..self.params.servers()).map(|_| self.random_tag()).collect()),
        };
        Candidate { ts, proof: Some(proof), vec }
    }

    /// An observed candidate with some of its contents damaged.
    fn mangled_candidate(&mut self) -> Option<Candidate> {
        let mut c = self.pick_seen()?;
        match &mut c.vec {
            Some(vec) => {
                let n = vec.len();
                for _ in 0..self.rng.random_range(1..=n) {
                    let j = self.rng.random_range(0..n);
                    vec[j] = MacTag([0xee; 32]);
                }
            }
            None => c.proof = Some(self.random_proof()),
        }
        Some(c)
    }

    fn pick_seen(&mut self) -> Option<Candidate> {
        if self.seen.is_empty() {
            return None;
        }
        let i = self.rng.random_range(0..self.seen.len());
        self.seen.iter().nth(i).cloned()
    }

    fn is_high(&self, c: &Candidate) -> bool {
        self.high.as_ref().is_some_and(|f| f.cand == *c)
    }
}

/// A faulty server running a correct one underneath.
#[derive(Debug, Clone)]
pub struct ByzServer {
    pub inner: Server,
    pub behavior: ServerBehavior,
    handled: u64,
}

impl ByzServer {
    pub fn new(inner: Server, behavior: ServerBehavior) -> Self {
        ByzServer { inner, behavior, handled: 0 }
    }

    pub fn handle(&mut self, from: Origin, msg: Message, adv: &mut Adversary) -> Option<Message> {
        let id = self.inner.id();
        adv.observe(Some(id), &msg);
        self.handled += 1;
        let mw = self.inner.params().mode == Mode::Mw;
        let claims_high = match &msg {
            Message::Filter { candidates, .. } => candidates.iter().any(|c| adv.is_high(c)),
            _ => false,
        };
        let reply = self.inner.handle(from, msg).reply?;
        match self.behavior {
            ServerBehavior::Mute => None,
            ServerBehavior::RevertState => {
                if self.handled.is_multiple_of(4) {
                    let params = *self.inner.params();
                    self.inner = Server::new(id, params, adv.keys.get(&id).cloned());
                }
                Some(reply)
            }
            ServerBehavior::StaleLc => Some(match reply {
                Message::ClockAck { ts, .. } => Message::ClockAck { ts, lc_ts: Timestamp::ZERO },
                Message::CollectAck { tsr, .. } => Message::CollectAck { tsr, candidates: vec![Candidate::initial()] },
                Message::FilterAck { tsr, .. } => Message::FilterAck { tsr, ts: Timestamp::ZERO, payload: None },
                other => other,
            }),
            ServerBehavior::FabricateCandidate => Some(match reply {
                Message::ClockAck { ts, .. } => {
                    let tag = adv.random_tag();
                    let pid = adv.rng.random_range(1..=adv.writers);
                    Message::ClockAck { ts, lc_ts: Timestamp { num: 1 << 40, pid, tag: Some(tag) } }
                }
                Message::CollectAck { tsr, mut candidates } => {
                    let high = adv.high_forgery().cand;
                    adv.forged_sent.insert(high.ts.key());
                    if mw {
                        // A real timestamp under a bogus vector would be a
                        // vector attack; that is corrupt_vec's business.
                        candidates = vec![high];
                    } else {
                        candidates.push(high);
                        candidates.extend(adv.low_forgery());
                    }
                    Message::CollectAck { tsr, candidates }
                }
                Message::FilterAck { tsr, .. } if claims_high => {
                    let f = adv.high_forgery();
                    Message::FilterAck {
                        tsr,
                        ts: f.cand.ts,
                        payload: Some(FilterPayload {
                            fragment: f.fragments[id - 1].clone(),
                            cc: f.cc.clone(),
                            vec: f.cand.vec.clone(),
                        }),
                    }
                }
                other => other,
            }),
            ServerBehavior::CorruptVec => Some(match reply {
                Message::CollectAck { tsr, mut candidates } => {
                    for c in &mut candidates {
                        if let Some(vec) = &mut c.vec {
                            for (j, e) in vec.iter_mut().enumerate() {
                                if !adv.byzantine.contains(&(j + 1)) {
                                    *e = MacTag([0xff; 32]);
                                }
                            }
                        }
                    }
                    Message::CollectAck { tsr, candidates }
                }
                other => other,
            }),
            ServerBehavior::EquivocateFragments => Some(match reply {
                Message::FilterAck { tsr, ts, payload: Some(mut p) } => {
                    let salt = match from {
                        Origin::Reader(r) | Origin::Writer(r) => r as u8,
                    };
                    for b in &mut p.fragment.payload {
                        *b ^= 0x5a ^ salt;
                    }
                    Message::FilterAck { tsr, ts, payload: Some(p) }
                }
                other => other,
            }),
        }
    }
}

/// A Byzantine reader. It never completes operations; it probes servers
/// and writes back garbage, stale or flooding candidate sets.
#[derive(Debug, Clone)]
pub struct ByzReader {
    pub id: ClientId,
    pub behavior: ReaderBehavior,
    pub actions_left: usize,
    pub outbox: VecDeque<(ServerId, Message)>,
    tsr: u64,
}

impl ByzReader {
    pub fn new(id: ClientId, behavior: ReaderBehavior, actions: usize) -> Self {
        ByzReader { id, behavior, actions_left: actions, outbox: VecDeque::new(), tsr: 0 }
    }

    fn broadcast_all(&mut self, servers: usize, msg: Message) {
        for i in 1..=servers {
            self.outbox.push_back((i, msg.clone()));
        }
    }

    /// Queues one round of attack traffic.
    pub fn act(&mut self, adv: &mut Adversary, flood: usize) {
        if self.actions_left == 0 {
            return;
        }
        self.actions_left -= 1;
        let s = adv.params.servers();
        let mw = adv.params.mode == Mode::Mw;
        self.tsr = adv.rng.next_u64();
        self.broadcast_all(s, Message::Collect { tsr: self.tsr });
        let (set, repair) = match self.behavior {
            ReaderBehavior::GarbageFilterSets => {
                let mut set: Vec<Candidate> = (0..adv.rng.random_range(1..=3)).map(|_| adv.garbage_candidate()).collect();
                set.extend(adv.mangled_candidate());
                let repair = set.last().cloned();
                (set, repair)
            }
            ReaderBehavior::ReplayedCandidates => {
                let set: Vec<Candidate> = (0..4).filter_map(|_| adv.pick_seen()).collect();
                let repair = adv.pick_seen();
                (set, repair)
            }
            ReaderBehavior::FloodWritebacks => {
                let set: Vec<Candidate> = (0..flood).map(|_| adv.garbage_candidate()).collect();
                let repair = Some(adv.garbage_candidate());
                (set, repair)
            }
        };
        self.broadcast_all(s, Message::Filter { tsr: self.tsr, candidates: set });
        if mw {
            if let Some(c) = repair {
                self.broadcast_all(s, Message::Repair { tsr: self.tsr, candidate: c });
            }
        }
    }

    pub fn on_message(&mut self, adv: &mut Adversary, msg: &Message) {
        adv.observe(None, msg);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{shamir_split, KeyRing};
    use rand::SeedableRng;

    fn adversary(params: Params, byz: &[ServerId]) -> (Adversary, KeyRing) {
        let ring = KeyRing::generate(&mut ChaCha8Rng::seed_from_u64(1), params.servers());
        let keys = byz.iter().map(|&i| (i, ring.server_key(i).clone())).collect();
        (Adversary::new(params, 2, 16, ChaCha8Rng::seed_from_u64(2), keys), ring)
    }

    #[test]
    fn shares_seen_on_the_wire_rebuild_the_proof() {
        let params = Params::new(1, Mode::Sw, PowKind::Shamir);
        let (mut adv, _) = adversary(params, &[1]);
        let (poly, shares) = shamir_split(&mut ChaCha8Rng::seed_from_u64(3), 1, 4, params.q).unwrap();
        let (frs, cc) = erasure::encode(b"v", 2, 4).unwrap();
        let store = |i: usize| Message::Store {
            ts: Timestamp::sw(1),
            fragment: frs[i - 1].clone(),
            cc: cc.clone(),
            commitment: Commitment::Share(shares[i - 1]),
            vec: None,
        };
        adv.observe(Some(1), &store(1));
        let guess = adv.low_forgery().unwrap();
        assert_ne!(guess.proof, Some(Proof::Polynomial(poly.clone())));
        adv.observe(Some(2), &store(2));
        let rebuilt = adv.low_forgery().unwrap();
        assert_eq!(rebuilt.proof, Some(Proof::Polynomial(poly)));
    }

    #[test]
    fn forged_vectors_verify_only_at_byzantine_servers() {
        let params = Params::new(1, Mode::Mw, PowKind::Hash);
        let (mut adv, ring) = adversary(params, &[3]);
        let f = adv.high_forgery();
        let digest = f.cand.proof.as_ref().unwrap().digest();
        let pre = vec_preimage(&f.cand.ts, &digest);
        let vec = f.cand.vec.unwrap();
        for i in 1..=4 {
            assert_eq!(crate::crypto::verify_mac(ring.server_key(i), &pre, &vec[i - 1]), i == 3);
        }
    }

    #[test]
    fn mute_server_never_replies() {
        let params = Params::new(1, Mode::Sw, PowKind::Hash);
        let (mut adv, _) = adversary(params, &[1]);
        let mut s = ByzServer::new(Server::new(1, params, None), ServerBehavior::Mute);
        assert!(s.handle(Origin::Reader(5), Message::Collect { tsr: 1 }, &mut adv).is_none());
    }

    #[test]
    fn reader_attacks_queue_traffic() {
        let params = Params::new(1, Mode::Mw, PowKind::Hash);
        let (mut adv, _) = adversary(params, &[]);
        for b in ReaderBehavior::ALL {
            let mut r = ByzReader::new(9, b, 1);
            r.act(&mut adv, 10);
            assert!(r.outbox.len() >= 8);
            r.act(&mut adv, 10);
            assert_eq!(r.actions_left, 0);
        }
    }
}

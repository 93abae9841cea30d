//! Candidate predicates evaluated by servers (`valid`) and readers
//! (`safe`, `invalid`, `highcand`), plus cross-checksum selection for
//! restoring a value. All of them are pure.

use std::collections::BTreeMap;

use crate::codec::FilterPayload;
use crate::crypto::{verify_mac, MacTag, SecretKey};
use crate::erasure::{self, CrossChecksum, ErasureError, Fragment};
use crate::types::{vec_preimage, Candidate, HistoryEntry, Mode, Params, ServerId, Timestamp};

/// A server's history, keyed by `(num, pid)`.
pub type History = BTreeMap<Timestamp, HistoryEntry>;

/// `W[i]`: what server `i` answered in FILTER.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterReply {
    pub ts: Timestamp,
    pub payload: Option<FilterPayload>,
}

pub type ReplyTable = BTreeMap<ServerId, FilterReply>;

/// `H(c.N) = Hist[c.ts].N̄` (or the share check in polynomial mode).
///
/// The stored timestamp must match `c.ts` tag and all, so a candidate with a
/// re-tagged timestamp never borrows another write's history entry. In
/// multi-writer mode an entry whose MAC vector is not `S` long is unusable.
pub fn valid_by_hist(c: &Candidate, hist: &History, params: &Params) -> bool {
    let Some(proof) = &c.proof else {
        return false;
    };
    let Some(entry) = hist.get(&c.ts) else {
        return false;
    };
    if params.mode == Mode::Mw && entry.vec.as_ref().map(Vec::len) != Some(params.servers()) {
        return false;
    }
    entry.ts.same_as(&c.ts) && entry.commitment.opens_to(proof)
}

/// Single-writer `valid`.
pub fn valid_sw(c: &Candidate, hist: &History, params: &Params) -> bool {
    valid_by_hist(c, hist, params)
}

/// Whether `vec[i]` authenticates `(c.ts, H(c.N))` under `k_i`.
pub fn mac_entry_valid(c: &Candidate, server: ServerId, key: &SecretKey, servers: usize) -> bool {
    let (Some(proof), Some(vec)) = (&c.proof, &c.vec) else {
        return false;
    };
    if vec.len() != servers || server == 0 || server > servers {
        return false;
    }
    verify_mac(key, &vec_preimage(&c.ts, &proof.digest()), &vec[server - 1])
}

/// Multi-writer `valid`: `validByHist(c) ∨ verify(c.vec[i], c.ts, H(c.N), k_i)`.
pub fn valid_mw(
    c: &Candidate,
    hist: &History,
    server: ServerId,
    key: &SecretKey,
    params: &Params,
) -> bool {
    valid_by_hist(c, hist, params) || mac_entry_valid(c, server, key, params.servers())
}

/// No member of `set` has a strictly greater timestamp.
pub fn highcand<'a>(c: &Candidate, set: impl IntoIterator<Item = &'a Candidate>) -> bool {
    set.into_iter().all(|other| other.ts <= c.ts)
}

/// At least `S − t` responders reported a timestamp strictly below `c.ts`.
pub fn invalid(c: &Candidate, replies: &ReplyTable, params: &Params) -> bool {
    replies.values().filter(|r| r.ts < c.ts).count() >= params.quorum()
}

/// The servers, cross-checksum and MAC vector that make a candidate safe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafeWitness {
    pub servers: Vec<ServerId>,
    pub cc: CrossChecksum,
    pub vec: Option<Vec<MacTag>>,
}

/// Lexicographically smallest `need`-subset among groups of at least `need`
/// servers sharing a key.
fn smallest_group<K: Ord + Clone>(
    groups: BTreeMap<K, Vec<ServerId>>,
    need: usize,
) -> Option<(K, Vec<ServerId>)> {
    groups
        .into_iter()
        .filter(|(_, ids)| ids.len() >= need)
        .map(|(k, ids)| (k, ids[..need].to_vec()))
        .min_by(|a, b| a.1.cmp(&b.1))
}

/// `safe(c)` with an explicit agreement threshold (normally `t + 1`).
///
/// Returns the lexicographically smallest qualifying server set, so every
/// caller that needs "the" `R'` gets the same one.
pub fn safe_witness_with(
    c: &Candidate,
    replies: &ReplyTable,
    params: &Params,
    need: usize,
) -> Option<SafeWitness> {
    let mut groups: BTreeMap<(CrossChecksum, Option<Vec<MacTag>>), Vec<ServerId>> = BTreeMap::new();
    for (&i, reply) in replies {
        if reply.ts != c.ts {
            continue;
        }
        let Some(p) = &reply.payload else { continue };
        if p.cc.len() != params.servers() || !p.cc.matches(i, &p.fragment) {
            continue;
        }
        let vec = match params.mode {
            Mode::Sw => None,
            Mode::Mw => p.vec.clone(),
        };
        groups.entry((p.cc.clone(), vec)).or_default().push(i);
    }
    smallest_group(groups, need.max(1)).map(|((cc, vec), servers)| SafeWitness { servers, cc, vec })
}

pub fn safe_witness(c: &Candidate, replies: &ReplyTable, params: &Params) -> Option<SafeWitness> {
    safe_witness_with(c, replies, params, params.t + 1)
}

pub fn safe(c: &Candidate, replies: &ReplyTable, params: &Params) -> bool {
    safe_witness(c, replies, params).is_some()
}

/// The cross-checksum reported identically with timestamp `ts` by at least
/// `t + 1` servers.
pub fn select_cc(ts: &Timestamp, replies: &ReplyTable, params: &Params) -> Option<CrossChecksum> {
    let mut groups: BTreeMap<CrossChecksum, Vec<ServerId>> = BTreeMap::new();
    for (&i, reply) in replies {
        if reply.ts == *ts {
            if let Some(p) = &reply.payload {
                groups.entry(p.cc.clone()).or_default().push(i);
            }
        }
    }
    smallest_group(groups, params.t + 1).map(|(cc, _)| cc)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RestoreError {
    #[error("no cross-checksum backed by t+1 servers")]
    NoCrossChecksum,
    #[error(transparent)]
    Decode(#[from] ErasureError),
}

/// Picks `cc`, keeps the fragments that hash to their `cc` slot and decodes.
/// With `check_fragments = false` every fragment reported for `ts` is used.
pub fn restore_with(
    ts: &Timestamp,
    replies: &ReplyTable,
    params: &Params,
    check_fragments: bool,
) -> Result<Vec<u8>, RestoreError> {
    let cc = select_cc(ts, replies, params).ok_or(RestoreError::NoCrossChecksum)?;
    let fragments: Vec<&Fragment> = replies
        .iter()
        .filter(|(_, r)| r.ts == *ts)
        .filter_map(|(&i, r)| {
            let p = r.payload.as_ref()?;
            (!check_fragments || cc.matches(i, &p.fragment)).then_some(&p.fragment)
        })
        .collect();
    Ok(erasure::decode(fragments, params.k(), params.servers())?)
}

pub fn restore(ts: &Timestamp, replies: &ReplyTable, params: &Params) -> Result<Vec<u8>, RestoreError> {
    restore_with(ts, replies, params, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, mac, KeyRing, Nonce};
    use crate::erasure::encode;
    use crate::types::{mac_vector, Commitment, PowKind, Proof};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sw() -> Params {
        Params::new(1, Mode::Sw, PowKind::Hash)
    }

    fn mw() -> Params {
        Params::new(1, Mode::Mw, PowKind::Hash)
    }

    fn nonce(b: u8) -> Nonce {
        Nonce([b; 32])
    }

    fn entry(ts: Timestamp, n: Nonce, vec: Option<Vec<MacTag>>) -> HistoryEntry {
        let (frs, cc) = encode(b"abc", 2, 4).unwrap();
        HistoryEntry {
            ts,
            fragment: frs[0].clone(),
            cc,
            commitment: Commitment::NonceHash(n.commitment()),
            vec,
        }
    }

    #[test]
    fn valid_sw_cases() {
        let mut hist = History::new();
        hist.insert(Timestamp::sw(5), entry(Timestamp::sw(5), nonce(1), None));
        let p = sw();
        assert!(valid_sw(&Candidate::new(Timestamp::sw(5), Proof::Nonce(nonce(1)), None), &hist, &p));
        assert!(!valid_sw(&Candidate::new(Timestamp::sw(5), Proof::Nonce(nonce(2)), None), &hist, &p));
        assert!(!valid_sw(&Candidate::new(Timestamp::sw(7), Proof::Nonce(nonce(1)), None), &hist, &p));
        assert!(!valid_sw(&Candidate::initial(), &hist, &p));
    }

    #[test]
    fn valid_mw_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ring = KeyRing::generate(&mut rng, 4);
        let p = mw();
        let ts = Timestamp::issue(2, 1, ring.writer_key());
        let n = nonce(3);
        let vec = mac_vector(ring.group_keys(), &ts, &n.commitment());
        let garbage = vec![MacTag([0; 32]); 4];

        // history branch with a garbage candidate vector
        let mut hist = History::new();
        hist.insert(ts, entry(ts, n, Some(vec.clone())));
        let c = Candidate::new(ts, Proof::Nonce(n), Some(garbage.clone()));
        assert!(valid_mw(&c, &hist, 2, ring.server_key(2), &p));
        assert!(valid_by_hist(&c, &hist, &p));

        // MAC branch without history
        let empty = History::new();
        let c = Candidate::new(ts, Proof::Nonce(n), Some(vec.clone()));
        assert!(valid_mw(&c, &empty, 2, ring.server_key(2), &p));

        // corrupted entry for this server, no history
        let mut bad = vec.clone();
        bad[1] = MacTag([9; 32]);
        let c = Candidate::new(ts, Proof::Nonce(n), Some(bad));
        assert!(!valid_mw(&c, &empty, 2, ring.server_key(2), &p));
        // other servers' entries still verify
        assert!(valid_mw(&c, &empty, 1, ring.server_key(1), &p));

        // re-tagged timestamp fails both branches
        let retag = Timestamp { tag: Some(MacTag([1; 32])), ..ts };
        let c = Candidate::new(retag, Proof::Nonce(n), Some(vec));
        assert!(!valid_mw(&c, &hist, 2, ring.server_key(2), &p));
    }

    #[test]
    fn mw_history_with_wrong_length_vector_is_unusable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ring = KeyRing::generate(&mut rng, 4);
        let p = mw();
        let ts = Timestamp::issue(1, 1, ring.writer_key());
        let n = nonce(4);
        let short = vec![mac(ring.server_key(1), b"x"); 3];
        let mut hist = History::new();
        hist.insert(ts, entry(ts, n, Some(short.clone())));
        let c = Candidate::new(ts, Proof::Nonce(n), Some(short));
        assert!(!valid_mw(&c, &hist, 1, ring.server_key(1), &p));
    }

    #[test]
    fn highcand_cases() {
        let a = Candidate::new(Timestamp::sw(3), Proof::Nonce(nonce(1)), None);
        let b = Candidate::new(Timestamp::sw(5), Proof::Nonce(nonce(2)), None);
        assert!(highcand(&b, [&a, &b]));
        assert!(!highcand(&a, [&a, &b]));
        assert!(highcand(&a, [&a]));
    }

    fn reply_for(ts: Timestamp, i: ServerId, frs: &[Fragment], cc: &CrossChecksum) -> FilterReply {
        FilterReply {
            ts,
            payload: Some(FilterPayload { fragment: frs[i - 1].clone(), cc: cc.clone(), vec: None }),
        }
    }

    #[test]
    fn invalid_cases() {
        let p = sw();
        let c = Candidate::new(Timestamp::sw(5), Proof::Nonce(nonce(1)), None);
        let low = |n| FilterReply { ts: Timestamp::sw(n), payload: None };
        let mut r = ReplyTable::new();
        r.insert(1, low(0));
        r.insert(2, low(3));
        assert!(!invalid(&c, &r, &p));
        r.insert(3, low(4));
        assert!(invalid(&c, &r, &p));
        let high: ReplyTable = (1..=4).map(|i| (i, low(5 + i as u64 % 2))).collect();
        assert!(!invalid(&c, &high, &p));
    }

    #[test]
    fn safe_needs_t_plus_one_matching_hash_checked_replies() {
        let p = sw();
        let (frs, cc) = encode(b"some value", 2, 4).unwrap();
        let ts = Timestamp::sw(5);
        let c = Candidate::new(ts, Proof::Nonce(nonce(1)), None);

        let mut r = ReplyTable::new();
        r.insert(1, reply_for(ts, 1, &frs, &cc));
        assert!(!safe(&c, &r, &p));
        r.insert(2, reply_for(ts, 2, &frs, &cc));
        let w = safe_witness(&c, &r, &p).unwrap();
        assert_eq!(w.servers, vec![1, 2]);

        // one of the two fragments does not hash to its slot
        let mut bad = r.clone();
        if let Some(pl) = &mut bad.get_mut(&2).unwrap().payload {
            pl.fragment.payload[0] ^= 0xff;
        }
        assert!(!safe(&c, &bad, &p));
    }

    /// Independent oracle: literal ∃R' ⊆ R enumeration of the safe predicate.
    fn safe_oracle(c: &Candidate, r: &ReplyTable, t: usize) -> bool {
        let ids: Vec<ServerId> = r.keys().copied().collect();
        for mask in 0u32..(1 << ids.len()) {
            let subset: Vec<ServerId> =
                ids.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &i)| i).collect();
            if subset.len() < t + 1 {
                continue;
            }
            let ok = subset.iter().all(|i| r[i].ts == c.ts && r[i].payload.is_some())
                && subset.iter().all(|i| {
                    subset.iter().all(|j| {
                        let pi = r[i].payload.as_ref().unwrap();
                        let pj = r[j].payload.as_ref().unwrap();
                        pi.cc == pj.cc && hash(&pi.fragment.to_bytes()) == pj.cc.0[*i - 1]
                    })
                });
            if ok {
                return true;
            }
        }
        false
    }

    #[test]
    fn safe_agrees_with_subset_enumeration() {
        let p = sw();
        let (frs5, cc5) = encode(b"five", 2, 4).unwrap();
        let (frs3, cc3) = encode(b"three", 2, 4).unwrap();
        let ts5 = Timestamp::sw(5);
        let ts3 = Timestamp::sw(3);
        let c5 = Candidate::new(ts5, Proof::Nonce(nonce(5)), None);
        let c3 = Candidate::new(ts3, Proof::Nonce(nonce(3)), None);
        // every assignment of {ts5-good, ts3-good, ts5-corrupt, absent} to the 4 servers
        for code in 0..4u32.pow(4) {
            let mut r = ReplyTable::new();
            for i in 1..=4usize {
                match code / 4u32.pow(i as u32 - 1) % 4 {
                    0 => {
                        r.insert(i, reply_for(ts5, i, &frs5, &cc5));
                    }
                    1 => {
                        r.insert(i, reply_for(ts3, i, &frs3, &cc3));
                    }
                    2 => {
                        let mut rep = reply_for(ts5, i, &frs5, &cc5);
                        rep.payload.as_mut().unwrap().fragment.payload[0] ^= 1;
                        r.insert(i, rep);
                    }
                    _ => {}
                }
            }
            assert_eq!(safe(&c5, &r, &p), safe_oracle(&c5, &r, 1), "code {code}");
            assert_eq!(safe(&c3, &r, &p), safe_oracle(&c3, &r, 1), "code {code}");
        }
    }

    #[test]
    fn restore_excludes_bogus_fragment_and_prefers_backed_cc() {
        let p = sw();
        let (frs, cc) = encode(b"the value", 2, 4).unwrap();
        let ts = Timestamp::sw(2);
        let mut r = ReplyTable::new();
        r.insert(1, reply_for(ts, 1, &frs, &cc));
        r.insert(3, reply_for(ts, 3, &frs, &cc));
        // exactly t+1 matching replies
        assert_eq!(restore(&ts, &r, &p).unwrap(), b"the value");

        // a Byzantine reply with a bogus fragment under the honest cc
        let mut bogus = reply_for(ts, 2, &frs, &cc);
        bogus.payload.as_mut().unwrap().fragment.payload = vec![0xee; frs[1].payload.len()];
        r.insert(2, bogus);
        assert_eq!(restore(&ts, &r, &p).unwrap(), b"the value");
        // without the hash check the bogus data shard poisons the output
        assert_ne!(restore_with(&ts, &r, &p, false).unwrap(), b"the value");
    }

    #[test]
    fn restore_picks_the_cc_backed_by_t_plus_one() {
        let p = sw();
        let (frs, cc) = encode(b"honest", 2, 4).unwrap();
        let (ffrs, fcc) = encode(b"forged", 2, 4).unwrap();
        let ts = Timestamp::sw(4);
        let mut r = ReplyTable::new();
        r.insert(1, reply_for(ts, 1, &ffrs, &fcc));
        r.insert(2, reply_for(ts, 2, &frs, &cc));
        r.insert(4, reply_for(ts, 4, &frs, &cc));
        assert_eq!(select_cc(&ts, &r, &p), Some(cc));
        assert_eq!(restore(&ts, &r, &p).unwrap(), b"honest");
        r.remove(&4);
        assert_eq!(restore(&ts, &r, &p), Err(RestoreError::NoCrossChecksum));
    }

    #[test]
    fn predicates_are_pure() {
        let p = sw();
        let (frs, cc) = encode(b"x", 2, 4).unwrap();
        let ts = Timestamp::sw(1);
        let c = Candidate::new(ts, Proof::Nonce(nonce(1)), None);
        let r: ReplyTable = (1..=3).map(|i| (i, reply_for(ts, i, &frs, &cc))).collect();
        let before = r.clone();
        let a = (safe(&c, &r, &p), invalid(&c, &r, &p));
        let b = (safe(&c, &r, &p), invalid(&c, &r, &p));
        assert_eq!(a, b);
        assert_eq!(r, before);
    }
}

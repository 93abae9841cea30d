//! Protocol-wide data: timestamps, candidates, history entries.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{
    hash, mac, shamir_verify, verify_mac, Digest, MacTag, Nonce, Polynomial, SecretKey,
    ShamirShare,
};
use crate::erasure::{CrossChecksum, Fragment};

/// Server index, 1..=S.
pub type ServerId = usize;

/// Client (reader or writer) identifier. Writers double as the `pid` in
/// multi-writer timestamps, so 0 is reserved for `ts_0`.
pub type ClientId = u64;

/// Which protocol variant a deployment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Single writer, written-back candidate sets.
    Sw,
    /// Multiple writers, MAC-authenticated single candidate.
    Mw,
}

/// How the Proof of Writing is instantiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowKind {
    Hash,
    Shamir,
}

/// Deployment shape shared by every process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Params {
    /// Tolerated Byzantine servers.
    pub t: usize,
    pub mode: Mode,
    pub pow: PowKind,
    /// Shamir field modulus.
    pub q: u64,
}

impl Params {
    pub fn new(t: usize, mode: Mode, pow: PowKind) -> Self {
        Params {
            t,
            mode,
            pow,
            q: crate::crypto::MERSENNE_61,
        }
    }

    /// S = 3t + 1.
    pub fn servers(&self) -> usize {
        3 * self.t + 1
    }

    /// S − t.
    pub fn quorum(&self) -> usize {
        self.servers() - self.t
    }

    /// Fragments needed to decode: t + 1.
    pub fn k(&self) -> usize {
        self.t + 1
    }
}

/// A write timestamp. Single-writer timestamps use `pid = 0` and no tag.
///
/// Comparison and equality look only at `(num, pid)`; the tag authenticates
/// the pair but never orders it.
#[derive(Clone, Copy)]
pub struct Timestamp {
    pub num: u64,
    pub pid: u64,
    pub tag: Option<MacTag>,
}

impl Timestamp {
    /// `ts_0`.
    pub const ZERO: Timestamp = Timestamp {
        num: 0,
        pid: 0,
        tag: None,
    };

    pub fn sw(num: u64) -> Self {
        Timestamp {
            num,
            pid: 0,
            tag: None,
        }
    }

    /// A multi-writer timestamp authenticated under `k_W`.
    pub fn issue(num: u64, pid: ClientId, writer_key: &SecretKey) -> Self {
        Timestamp {
            num,
            pid,
            tag: Some(mac(writer_key, &clock_preimage(num, pid))),
        }
    }

    pub fn verify(&self, writer_key: &SecretKey) -> bool {
        match &self.tag {
            Some(tag) => verify_mac(writer_key, &clock_preimage(self.num, self.pid), tag),
            None => false,
        }
    }

    pub fn is_initial(&self) -> bool {
        self.num == 0 && self.pid == 0
    }

    pub fn key(&self) -> (u64, u64) {
        (self.num, self.pid)
    }

    /// Equality including the tag bytes.
    pub fn same_as(&self, other: &Timestamp) -> bool {
        self.key() == other.key() && self.tag == other.tag
    }
}

impl PartialEq for Timestamp {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Timestamp {}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// `num.pid`, or just `num` for single-writer timestamps.
impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pid == 0 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}.{}", self.num, self.pid)
        }
    }
}

impl Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pid == 0 && self.tag.is_none() {
            write!(f, "ts({})", self.num)
        } else {
            write!(
                f,
                "ts({},{}{})",
                self.num,
                self.pid,
                if self.tag.is_some() { "" } else { ",untagged" }
            )
        }
    }
}

/// `num ‖ pid`, the message authenticated by `k_W`.
pub fn clock_preimage(num: u64, pid: u64) -> [u8; 16] {
    let mut out = [0u8; 16];
    out[..8].copy_from_slice(&num.to_be_bytes());
    out[8..].copy_from_slice(&pid.to_be_bytes());
    out
}

/// The message each `vec[i]` authenticates under `k_i`:
/// `num ‖ pid ‖ tag-flag ‖ [tag] ‖ H(N)`.
pub fn vec_preimage(ts: &Timestamp, proof_digest: &Digest) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 1 + 32 + 32);
    out.extend_from_slice(&clock_preimage(ts.num, ts.pid));
    match &ts.tag {
        Some(tag) => {
            out.push(1);
            out.extend_from_slice(&tag.0);
        }
        None => out.push(0),
    }
    out.extend_from_slice(&proof_digest.0);
    out
}

/// `vec = [MAC_{k_i}(ts ‖ H(N))]_{1..S}`.
pub fn mac_vector(keys: &[SecretKey], ts: &Timestamp, proof_digest: &Digest) -> Vec<MacTag> {
    let msg = vec_preimage(ts, proof_digest);
    keys.iter().map(|k| mac(k, &msg)).collect()
}

/// The secret a writer reveals in its second round.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Proof {
    Nonce(Nonce),
    Polynomial(Polynomial),
}

impl Proof {
    /// `H(N)`: the nonce commitment, or the hash of the polynomial's encoding.
    pub fn digest(&self) -> Digest {
        match self {
            Proof::Nonce(n) => n.commitment(),
            Proof::Polynomial(p) => hash(&crate::codec::encode_polynomial(p)),
        }
    }
}

/// What a server learns about the proof in the first write round.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Commitment {
    NonceHash(Digest),
    Share(ShamirShare),
}

impl Commitment {
    /// The hash-based check `H(c.N) = N̄`, or `P(x_i) = P_i` for shares.
    pub fn opens_to(&self, proof: &Proof) -> bool {
        match (self, proof) {
            (Commitment::NonceHash(d), Proof::Nonce(n)) => n.commitment() == *d,
            (Commitment::Share(share), Proof::Polynomial(p)) => shamir_verify(share, p),
            _ => false,
        }
    }
}

/// `(ts, N[, vec])`: metadata identifying a possibly completed write.
///
/// Equality covers every field, tag bytes included. Ordering is by timestamp
/// first, then by the canonical encoding, which makes `max` over a set
/// deterministic even among forged duplicates.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub ts: Timestamp,
    pub proof: Option<Proof>,
    pub vec: Option<Vec<MacTag>>,
}

impl Candidate {
    /// `c_0 = (ts_0, null[, null])`.
    pub fn initial() -> Self {
        Candidate {
            ts: Timestamp::ZERO,
            proof: None,
            vec: None,
        }
    }

    pub fn new(ts: Timestamp, proof: Proof, vec: Option<Vec<MacTag>>) -> Self {
        Candidate {
            ts,
            proof: Some(proof),
            vec,
        }
    }

    pub fn is_initial(&self) -> bool {
        self.ts.is_initial()
    }

    pub fn proof_digest(&self) -> Option<Digest> {
        self.proof.as_ref().map(Proof::digest)
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.ts.same_as(&other.ts) && self.proof == other.proof && self.vec == other.vec
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Field by field in encoding order, equivalent to comparing the
        // canonical encodings without building them.
        self.ts
            .cmp(&other.ts)
            .then_with(|| self.ts.tag.map(|t| t.0).cmp(&other.ts.tag.map(|t| t.0)))
            .then_with(|| match (&self.proof, &other.proof) {
                (Some(a), Some(b)) => cmp_proof(a, b),
                (a, b) => a.is_some().cmp(&b.is_some()),
            })
            .then_with(|| match (&self.vec, &other.vec) {
                (Some(a), Some(b)) => a.len().cmp(&b.len()).then_with(|| {
                    a.iter().map(|t| &t.0).cmp(b.iter().map(|t| &t.0))
                }),
                (a, b) => a.is_some().cmp(&b.is_some()),
            })
    }
}

fn cmp_proof(a: &Proof, b: &Proof) -> Ordering {
    match (a, b) {
        (Proof::Nonce(x), Proof::Nonce(y)) => x.0.cmp(&y.0),
        (Proof::Polynomial(x), Proof::Polynomial(y)) => x
            .modulus()
            .cmp(&y.modulus())
            .then_with(|| x.coeffs().len().cmp(&y.coeffs().len()))
            .then_with(|| x.coeffs().cmp(y.coeffs())),
        (Proof::Nonce(_), Proof::Polynomial(_)) => Ordering::Less,
        (Proof::Polynomial(_), Proof::Nonce(_)) => Ordering::Greater,
    }
}

/// The highest candidate in `cands`, or `c_0` when there is none.
pub fn max_or_initial<'a>(cands: impl IntoIterator<Item = &'a Candidate>) -> Candidate {
    cands
        .into_iter()
        .max()
        .cloned()
        .unwrap_or_else(Candidate::initial)
}

/// `Hist[ts]` at one server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    /// The full timestamp as sent by the writer, tag included.
    pub ts: Timestamp,
    pub fragment: Fragment,
    pub cc: CrossChecksum,
    pub commitment: Commitment,
    pub vec: Option<Vec<MacTag>>,
}

/// A value as seen by clients: `None` is ⊥.
pub type Value = Option<Vec<u8>>;

/// Deliberately broken protocol variants, used to show the checkers catch
/// real bugs. Never enabled by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Servers apply REPAIR without checking `valid`.
    SkipRepairValidation,
    /// Writers take the highest clock reply without checking its tag.
    SkipClockMac,
    /// Readers accept `t` matching replies as safe.
    SafeWithT,
    /// `valid` ignores the proof of writing.
    SkipNonceCheck,
    /// Servers overwrite `lc` even with a lower timestamp.
    NonMonotoneLc,
    /// Readers decode fragments without checking them against `cc`.
    DecodeWithoutCc,
}

impl Mutation {
    pub const ALL: [Mutation; 6] = [
        Mutation::SkipRepairValidation,
        Mutation::SkipClockMac,
        Mutation::SafeWithT,
        Mutation::SkipNonceCheck,
        Mutation::NonMonotoneLc,
        Mutation::DecodeWithoutCc,
    ];
}

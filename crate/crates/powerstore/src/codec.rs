//! Canonical byte encoding of protocol messages.
//!
//! Layout: `kind (1 byte) ‖ tsr or ts ‖ fields`, integers big-endian, variable
//! fields length-prefixed with a 4-byte count. Decoding is strict: any byte
//! string that decodes re-encodes to itself. See `docs/wire-format.md`.

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, MacTag, Nonce, Polynomial, ShamirShare, HASH_LEN, NONCE_LEN};
use crate::erasure::{CrossChecksum, Fragment};
use crate::types::{Candidate, Commitment, Proof, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed message: {0}")]
pub struct MalformedMessage(pub &'static str);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Store = 1,
    StoreAck = 2,
    Complete = 3,
    CompleteAck = 4,
    Collect = 5,
    CollectAck = 6,
    Filter = 7,
    FilterAck = 8,
    Clock = 9,
    ClockAck = 10,
    Repair = 11,
    RepairAck = 12,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        use MessageKind::*;
        Some(match b {
            1 => Store,
            2 => StoreAck,
            3 => Complete,
            4 => CompleteAck,
            5 => Collect,
            6 => CollectAck,
            7 => Filter,
            8 => FilterAck,
            9 => Clock,
            10 => ClockAck,
            11 => Repair,
            12 => RepairAck,
            _ => return None,
        })
    }

    pub fn is_ack(self) -> bool {
        (self as u8).is_multiple_of(2)
    }
}

/// What a server returns for the candidate it picked in FILTER.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterPayload {
    pub fragment: Fragment,
    pub cc: CrossChecksum,
    pub vec: Option<Vec<MacTag>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Store {
        ts: Timestamp,
        fragment: Fragment,
        cc: CrossChecksum,
        commitment: Commitment,
        vec: Option<Vec<MacTag>>,
    },
    StoreAck {
        ts: Timestamp,
    },
    Complete {
        ts: Timestamp,
        proof: Proof,
        vec: Option<Vec<MacTag>>,
    },
    CompleteAck {
        ts: Timestamp,
    },
    Collect {
        tsr: u64,
    },
    CollectAck {
        tsr: u64,
        candidates: Vec<Candidate>,
    },
    Filter {
        tsr: u64,
        candidates: Vec<Candidate>,
    },
    /// `payload` is `None` exactly when the server answers for `c_0`.
    FilterAck {
        tsr: u64,
        ts: Timestamp,
        payload: Option<FilterPayload>,
    },
    Clock {
        ts: Timestamp,
    },
    ClockAck {
        ts: Timestamp,
        lc_ts: Timestamp,
    },
    Repair {
        tsr: u64,
        candidate: Candidate,
    },
    RepairAck {
        tsr: u64,
    },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Store { .. } => MessageKind::Store,
            Message::StoreAck { .. } => MessageKind::StoreAck,
            Message::Complete { .. } => MessageKind::Complete,
            Message::CompleteAck { .. } => MessageKind::CompleteAck,
            Message::Collect { .. } => MessageKind::Collect,
            Message::CollectAck { .. } => MessageKind::CollectAck,
            Message::Filter { .. } => MessageKind::Filter,
            Message::FilterAck { .. } => MessageKind::FilterAck,
            Message::Clock { .. } => MessageKind::Clock,
            Message::ClockAck { .. } => MessageKind::ClockAck,
            Message::Repair { .. } => MessageKind::Repair,
            Message::RepairAck { .. } => MessageKind::RepairAck,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u8(self.kind() as u8);
        match self {
            Message::Store {
                ts,
                fragment,
                cc,
                commitment,
                vec,
            } => {
                w.ts(ts);
                w.fragment(fragment);
                w.cc(cc);
                w.commitment(commitment);
                w.opt_vec(vec.as_deref());
            }
            Message::StoreAck { ts } | Message::CompleteAck { ts } | Message::Clock { ts } => {
                w.ts(ts)
            }
            Message::Complete { ts, proof, vec } => {
                w.ts(ts);
                w.proof(proof);
                w.opt_vec(vec.as_deref());
            }
            Message::Collect { tsr } | Message::RepairAck { tsr } => w.u64(*tsr),
            Message::CollectAck { tsr, candidates } | Message::Filter { tsr, candidates } => {
                w.u64(*tsr);
                w.u32(candidates.len() as u32);
                for c in candidates {
                    w.candidate(c);
                }
            }
            Message::FilterAck { tsr, ts, payload } => {
                w.u64(*tsr);
                w.ts(ts);
                match payload {
                    None => w.u8(0),
                    Some(p) => {
                        w.u8(1);
                        w.fragment(&p.fragment);
                        w.cc(&p.cc);
                        w.opt_vec(p.vec.as_deref());
                    }
                }
            }
            Message::ClockAck { ts, lc_ts } => {
                w.ts(ts);
                w.ts(lc_ts);
            }
            Message::Repair { tsr, candidate } => {
                w.u64(*tsr);
                w.candidate(candidate);
            }
        }
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MalformedMessage> {
        let mut r = Reader(bytes);
        let kind = MessageKind::from_byte(r.u8()?).ok_or(MalformedMessage("unknown kind"))?;
        let msg = match kind {
            MessageKind::Store => Message::Store {
                ts: r.ts()?,
                fragment: r.fragment()?,
                cc: r.cc()?,
                commitment: r.commitment()?,
                vec: r.opt_vec()?,
            },
            MessageKind::StoreAck => Message::StoreAck { ts: r.ts()? },
            MessageKind::Complete => Message::Complete {
                ts: r.ts()?,
                proof: r.proof()?,
                vec: r.opt_vec()?,
            },
            MessageKind::CompleteAck => Message::CompleteAck { ts: r.ts()? },
            MessageKind::Collect => Message::Collect { tsr: r.u64()? },
            MessageKind::CollectAck => {
                let tsr = r.u64()?;
                Message::CollectAck {
                    tsr,
                    candidates: r.candidates()?,
                }
            }
            MessageKind::Filter => {
                let tsr = r.u64()?;
                Message::Filter {
                    tsr,
                    candidates: r.candidates()?,
                }
            }
            MessageKind::FilterAck => {
                let tsr = r.u64()?;
                let ts = r.ts()?;
                let payload = if r.flag()? {
                    Some(FilterPayload {
                        fragment: r.fragment()?,
                        cc: r.cc()?,
                        vec: r.opt_vec()?,
                    })
                } else {
                    None
                };
                Message::FilterAck { tsr, ts, payload }
            }
            MessageKind::Clock => Message::Clock { ts: r.ts()? },
            MessageKind::ClockAck => Message::ClockAck {
                ts: r.ts()?,
                lc_ts: r.ts()?,
            },
            MessageKind::Repair => {
                let tsr = r.u64()?;
                Message::Repair {
                    tsr,
                    candidate: r.candidate()?,
                }
            }
            MessageKind::RepairAck => Message::RepairAck { tsr: r.u64()? },
        };
        if !r.0.is_empty() {
            return Err(MalformedMessage("trailing bytes"));
        }
        Ok(msg)
    }
}

pub fn encode_candidate(c: &Candidate) -> Vec<u8> {
    let mut w = Writer::default();
    w.candidate(c);
    w.0
}

pub fn encode_polynomial(p: &Polynomial) -> Vec<u8> {
    let mut w = Writer::default();
    w.polynomial(p);
    w.0
}

/// Size in bytes of the fragment field as it travels inside a STORE.
pub fn fragment_field_len(fr: &Fragment) -> usize {
    4 + fr.wire_len()
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn ts(&mut self, ts: &Timestamp) {
        self.u64(ts.num);
        self.u64(ts.pid);
        match &ts.tag {
            None => self.u8(0),
            Some(t) => {
                self.u8(1);
                self.raw(&t.0);
            }
        }
    }
    fn fragment(&mut self, fr: &Fragment) {
        self.u32(fr.wire_len() as u32);
        self.raw(&fr.to_bytes());
    }
    fn cc(&mut self, cc: &CrossChecksum) {
        self.u32(cc.0.len() as u32);
        for d in &cc.0 {
            self.raw(&d.0);
        }
    }
    fn opt_vec(&mut self, vec: Option<&[MacTag]>) {
        match vec {
            None => self.u8(0),
            Some(v) => {
                self.u8(1);
                self.u32(v.len() as u32);
                for tag in v {
                    self.raw(&tag.0);
                }
            }
        }
    }
    fn polynomial(&mut self, p: &Polynomial) {
        self.u64(p.modulus());
        self.u32(p.coeffs().len() as u32);
        for &c in p.coeffs() {
            self.u64(c);
        }
    }
    fn proof(&mut self, proof: &Proof) {
        match proof {
            Proof::Nonce(n) => {
                self.u8(1);
                self.raw(&n.0);
            }
            Proof::Polynomial(p) => {
                self.u8(2);
                self.polynomial(p);
            }
        }
    }
    fn commitment(&mut self, c: &Commitment) {
        match c {
            Commitment::NonceHash(d) => {
                self.u8(1);
                self.raw(&d.0);
            }
            Commitment::Share(s) => {
                self.u8(2);
                self.u64(s.q);
                self.u64(s.x);
                self.u64(s.y);
            }
        }
    }
    fn candidate(&mut self, c: &Candidate) {
        self.ts(&c.ts);
        match &c.proof {
            None => self.u8(0),
            Some(p) => {
                self.u8(1);
                self.proof(p);
            }
        }
        self.opt_vec(c.vec.as_deref());
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MalformedMessage> {
        if self.0.len() < n {
            return Err(MalformedMessage("truncated"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, MalformedMessage> {
        Ok(self.take(1)?[0])
    }
    fn flag(&mut self) -> Result<bool, MalformedMessage> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(MalformedMessage("bad option flag")),
        }
    }
    fn u32(&mut self) -> Result<u32, MalformedMessage> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, MalformedMessage> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn arr32(&mut self) -> Result<[u8; 32], MalformedMessage> {
        Ok(self.take(32)?.try_into().unwrap())
    }
    /// A count whose elements each occupy at least `min_size` bytes.
    fn count(&mut self, min_size: usize) -> Result<usize, MalformedMessage> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_size) > self.0.len() {
            return Err(MalformedMessage("length exceeds message"));
        }
        Ok(n)
    }
    fn ts(&mut self) -> Result<Timestamp, MalformedMessage> {
        let num = self.u64()?;
        let pid = self.u64()?;
        let tag = if self.flag()? {
            Some(MacTag(self.arr32()?))
        } else {
            None
        };
        Ok(Timestamp { num, pid, tag })
    }
    fn fragment(&mut self) -> Result<Fragment, MalformedMessage> {
        let n = self.count(1)?;
        Fragment::from_bytes(self.take(n)?).map_err(|_| MalformedMessage("bad fragment"))
    }
    fn cc(&mut self) -> Result<CrossChecksum, MalformedMessage> {
        let n = self.count(HASH_LEN)?;
        (0..n)
            .map(|_| self.arr32().map(Digest))
            .collect::<Result<_, _>>()
            .map(CrossChecksum)
    }
    fn opt_vec(&mut self) -> Result<Option<Vec<MacTag>>, MalformedMessage> {
        if !self.flag()? {
            return Ok(None);
        }
        let n = self.count(HASH_LEN)?;
        (0..n)
            .map(|_| self.arr32().map(MacTag))
            .collect::<Result<_, _>>()
            .map(Some)
    }
    fn polynomial(&mut self) -> Result<Polynomial, MalformedMessage> {
        let q = self.u64()?;
        if q < 2 {
            return Err(MalformedMessage("bad field modulus"));
        }
        let n = self.count(8)?;
        if n == 0 {
            return Err(MalformedMessage("empty polynomial"));
        }
        let coeffs = (0..n).map(|_| self.u64()).collect::<Result<Vec<_>, _>>()?;
        if coeffs.iter().any(|&c| c >= q) {
            return Err(MalformedMessage("coefficient out of range"));
        }
        Ok(Polynomial::from_coeffs(coeffs, q))
    }
    fn proof(&mut self) -> Result<Proof, MalformedMessage> {
        match self.u8()? {
            1 => {
                let b: [u8; NONCE_LEN] = self.take(NONCE_LEN)?.try_into().unwrap();
                Ok(Proof::Nonce(Nonce(b)))
            }
            2 => Ok(Proof::Polynomial(self.polynomial()?)),
            _ => Err(MalformedMessage("unknown proof kind")),
        }
    }
    fn commitment(&mut self) -> Result<Commitment, MalformedMessage> {
        match self.u8()? {
            1 => Ok(Commitment::NonceHash(Digest(self.arr32()?))),
            2 => {
                let q = self.u64()?;
                let x = self.u64()?;
                let y = self.u64()?;
                if q < 2 || x >= q || y >= q {
                    return Err(MalformedMessage("share out of range"));
                }
                Ok(Commitment::Share(ShamirShare { x, y, q }))
            }
            _ => Err(MalformedMessage("unknown commitment kind")),
        }
    }
    fn candidate(&mut self) -> Result<Candidate, MalformedMessage> {
        let ts = self.ts()?;
        let proof = if self.flag()? {
            Some(self.proof()?)
        } else {
            None
        };
        let vec = self.opt_vec()?;
        Ok(Candidate { ts, proof, vec })
    }
    fn candidates(&mut self) -> Result<Vec<Candidate>, MalformedMessage> {
        // smallest candidate: ts (17) + two flags
        let n = self.count(19)?;
        (0..n).map(|_| self.candidate()).collect()
    }
}

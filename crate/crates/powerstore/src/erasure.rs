//! (S, k) systematic Reed–Solomon coding over GF(2^8) with cross-checksums.
//!
//! A value is padded to a multiple of `k`, split into `k` data shards and
//! extended with `S − k` parity shards. Each fragment carries the original
//! length so decoding can strip the padding.

use reed_solomon_erasure::galois_8::ReedSolomon;

use crate::crypto::{hash, Digest, HASH_LEN};

/// index (2 bytes) ‖ orig_len (8 bytes).
pub const FRAGMENT_HEADER_LEN: usize = 10;

/// GF(2^8) limits a code to 256 shards.
pub const MAX_SHARDS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ErasureError {
    #[error("invalid code parameters k={k}, S={s}")]
    InvalidParameters { k: usize, s: usize },
    #[error("cannot encode an empty value")]
    EmptyValue,
    #[error("need {needed} distinct fragments, got {got}")]
    InsufficientFragments { needed: usize, got: usize },
    #[error("fragment index {index} outside 1..={s}")]
    IndexOutOfRange { index: u16, s: usize },
    #[error("fragments disagree on length or size")]
    InconsistentFragments,
    #[error("malformed fragment bytes")]
    Malformed,
    #[error("reed-solomon: {0}")]
    Codec(String),
}

/// One coded piece, addressed to server `index` (1-based).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fragment {
    pub index: u16,
    pub orig_len: u64,
    pub payload: Vec<u8>,
}

impl std::fmt::Debug for Fragment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fragment")
            .field("index", &self.index)
            .field("orig_len", &self.orig_len)
            .field("payload_len", &self.payload.len())
            .finish()
    }
}

impl Fragment {
    pub fn wire_len(&self) -> usize {
        FRAGMENT_HEADER_LEN + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.index.to_be_bytes());
        out.extend_from_slice(&self.orig_len.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ErasureError> {
        if bytes.len() < FRAGMENT_HEADER_LEN {
            return Err(ErasureError::Malformed);
        }
        let index = u16::from_be_bytes([bytes[0], bytes[1]]);
        let orig_len = u64::from_be_bytes(bytes[2..10].try_into().unwrap());
        if index == 0 || index as usize > MAX_SHARDS {
            return Err(ErasureError::Malformed);
        }
        Ok(Fragment {
            index,
            orig_len,
            payload: bytes[FRAGMENT_HEADER_LEN..].to_vec(),
        })
    }

    /// Hash over the full wire encoding, header included.
    pub fn digest(&self) -> Digest {
        hash(&self.to_bytes())
    }
}

/// `cc[i] = H(fr_i)` for every fragment of one encode.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CrossChecksum(pub Vec<Digest>);

impl CrossChecksum {
    pub fn of(fragments: &[Fragment]) -> Self {
        CrossChecksum(fragments.iter().map(Fragment::digest).collect())
    }

    /// Whether `fr` hashes to the entry at server `index` (1-based).
    pub fn matches(&self, index: usize, fr: &Fragment) -> bool {
        index >= 1
            && fr.index as usize == index
            && self.0.get(index - 1).is_some_and(|d| *d == fr.digest())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn wire_len(&self) -> usize {
        4 + self.0.len() * HASH_LEN
    }
}

fn check_params(k: usize, s: usize) -> Result<(), ErasureError> {
    if k == 0 || k > s || s > MAX_SHARDS {
        return Err(ErasureError::InvalidParameters { k, s });
    }
    Ok(())
}

pub fn shard_len(orig_len: usize, k: usize) -> usize {
    orig_len.div_ceil(k).max(1)
}

pub fn encode(value: &[u8], k: usize, s: usize) -> Result<(Vec<Fragment>, CrossChecksum), ErasureError> {
    check_params(k, s)?;
    if value.is_empty() {
        return Err(ErasureError::EmptyValue);
    }
    let len = shard_len(value.len(), k);
    let mut shards: Vec<Vec<u8>> = (0..s)
        .map(|i| {
            let mut shard = vec![0u8; len];
            if i < k {
                let start = (i * len).min(value.len());
                let end = ((i + 1) * len).min(value.len());
                shard[..end - start].copy_from_slice(&value[start..end]);
            }
            shard
        })
        .collect();
    if s > k {
        let rs = ReedSolomon::new(k, s - k).map_err(|e| ErasureError::Codec(format!("{e:?}")))?;
        rs.encode(&mut shards)
            .map_err(|e| ErasureError::Codec(format!("{e:?}")))?;
    }
    let fragments: Vec<Fragment> = shards
        .into_iter()
        .enumerate()
        .map(|(i, payload)| Fragment {
            index: (i + 1) as u16,
            orig_len: value.len() as u64,
            payload,
        })
        .collect();
    let cc = CrossChecksum::of(&fragments);
    Ok((fragments, cc))
}

/// Decodes from any `k` or more fragments with distinct indices. When more
/// than `k` are supplied, the lowest-indexed ones drive reconstruction.
pub fn decode<'a>(
    fragments: impl IntoIterator<Item = &'a Fragment>,
    k: usize,
    s: usize,
) -> Result<Vec<u8>, ErasureError> {
    check_params(k, s)?;
    let mut slots: Vec<Option<&Fragment>> = vec![None; s];
    for fr in fragments {
        if fr.index == 0 || fr.index as usize > s {
            return Err(ErasureError::IndexOutOfRange { index: fr.index, s });
        }
        slots[fr.index as usize - 1].get_or_insert(fr);
    }
    let present: Vec<&Fragment> = slots.iter().flatten().copied().collect();
    if present.len() < k {
        return Err(ErasureError::InsufficientFragments {
            needed: k,
            got: present.len(),
        });
    }
    let used = &present[..k];
    let orig_len = used[0].orig_len;
    let len = used[0].payload.len();
    if used
        .iter()
        .any(|f| f.orig_len != orig_len || f.payload.len() != len)
        || orig_len == 0
        || shard_len(orig_len as usize, k) != len
    {
        return Err(ErasureError::InconsistentFragments);
    }
    let mut shards: Vec<Option<Vec<u8>>> = vec![None; s];
    for f in used {
        shards[f.index as usize - 1] = Some(f.payload.clone());
    }
    if shards[..k].iter().any(Option::is_none) {
        let rs = ReedSolomon::new(k, s - k).map_err(|e| ErasureError::Codec(format!("{e:?}")))?;
        rs.reconstruct_data(&mut shards)
            .map_err(|e| ErasureError::Codec(format!("{e:?}")))?;
    }
    let mut out = Vec::with_capacity(k * len);
    for shard in shards.into_iter().take(k) {
        out.extend_from_slice(&shard.expect("data shard reconstructed"));
    }
    out.truncate(orig_len as usize);
    Ok(out)
}

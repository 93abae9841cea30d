//! Hashing, nonces, MACs and the polynomial Proof-of-Writing primitives.
//!
//! Everything here is pure: the only source of randomness is the RNG a caller
//! hands in, so simulated runs stay reproducible from their seed.

use std::fmt;

use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::{Digest as _, Sha256};

mod shamir;

pub use shamir::{
    interpolate, is_prime, shamir_split, shamir_verify, Polynomial, ShamirError, ShamirShare,
    MERSENNE_61,
};

/// Width of every digest, nonce and MAC tag, in bytes.
pub const HASH_LEN: usize = 32;

/// Nonce length in bytes (λ = 256 bits).
pub const NONCE_LEN: usize = 32;

/// Shortest key accepted by [`mac`].
pub const MIN_KEY_LEN: usize = 16;

type HmacSha256 = Hmac<Sha256>;

fn fmt_hex(bytes: &[u8], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    for b in bytes {
        write!(f, "{b:02x}")?;
    }
    Ok(())
}

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; HASH_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; HASH_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.to_string()
    }
}

impl serde::Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_hex(&self.0, f)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest(")?;
        fmt_hex(&self.0[..6], f)?;
        write!(f, "..)")
    }
}

pub fn hash(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Hashes the concatenation of several byte strings without materializing it.
pub fn hash_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// A λ-bit random string drawn by a writer.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Nonce(pub [u8; NONCE_LEN]);

impl Nonce {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut bytes);
        Nonce(bytes)
    }

    /// `H(N)`, the commitment servers store during the first write round.
    pub fn commitment(&self) -> Digest {
        hash(&self.0)
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce(")?;
        fmt_hex(&self.0[..6], f)?;
        write!(f, "..)")
    }
}

/// An HMAC-SHA256 tag.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacTag(pub [u8; HASH_LEN]);

impl fmt::Debug for MacTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacTag(")?;
        fmt_hex(&self.0[..6], f)?;
        write!(f, "..)")
    }
}

/// A symmetric key. Construction enforces the minimum length.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey(Vec<u8>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("key must be at least {MIN_KEY_LEN} bytes, got {0}")]
pub struct KeyTooShort(pub usize);

impl SecretKey {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, KeyTooShort> {
        let bytes = bytes.into();
        if bytes.len() < MIN_KEY_LEN {
            return Err(KeyTooShort(bytes.len()));
        }
        Ok(SecretKey(bytes))
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = vec![0u8; HASH_LEN];
        rng.fill_bytes(&mut bytes);
        SecretKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey(<{} bytes>)", self.0.len())
    }
}

pub fn mac(key: &SecretKey, message: &[u8]) -> MacTag {
    let mut m = HmacSha256::new_from_slice(key.as_bytes()).expect("hmac accepts any key length");
    m.update(message);
    MacTag(m.finalize().into_bytes().into())
}

/// Constant-time over the tag bytes.
pub fn verify_mac(key: &SecretKey, message: &[u8], tag: &MacTag) -> bool {
    let mut m = HmacSha256::new_from_slice(key.as_bytes()).expect("hmac accepts any key length");
    m.update(message);
    m.verify_slice(&tag.0).is_ok()
}

/// The per-server group keys `k_1..k_S` and the writers' key `k_W`.
///
/// Writers hold the whole ring. A server only ever sees its own entry, which
/// is what [`KeyRing::server_key`] hands out.
#[derive(Clone, Debug)]
pub struct KeyRing {
    group_keys: Vec<SecretKey>,
    writer_key: SecretKey,
}

impl KeyRing {
    pub fn from_group_keys(group_keys: Vec<SecretKey>) -> Self {
        let writer_key = SecretKey(
            hash_parts(group_keys.iter().map(|k| k.as_bytes()))
                .0
                .to_vec(),
        );
        KeyRing {
            group_keys,
            writer_key,
        }
    }

    pub fn generate<R: RngCore + ?Sized>(rng: &mut R, servers: usize) -> Self {
        Self::from_group_keys((0..servers).map(|_| SecretKey::random(rng)).collect())
    }

    pub fn servers(&self) -> usize {
        self.group_keys.len()
    }

    /// Key of server `index` (1-based).
    pub fn server_key(&self, index: usize) -> &SecretKey {
        &self.group_keys[index - 1]
    }

    pub fn group_keys(&self) -> &[SecretKey] {
        &self.group_keys
    }

    pub fn writer_key(&self) -> &SecretKey {
        &self.writer_key
    }
}

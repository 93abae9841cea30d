//! Degree-`t` polynomials over a prime field, used as an alternative Proof of
//! Writing: each server stores one point, the writer later reveals the whole
//! polynomial, and a server checks its point lies on it.

use rand::{Rng, RngCore};

/// 2^61 − 1, the default field modulus.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShamirError {
    #[error("field modulus {q} must exceed the number of shares {shares}")]
    FieldTooSmall { q: u64, shares: usize },
    #[error("field modulus {0} is not prime")]
    NotPrime(u64),
    #[error("threshold {t} must be below the number of shares {shares}")]
    ThresholdTooLarge { t: usize, shares: usize },
    #[error("interpolation needs distinct x coordinates")]
    DuplicateX,
    #[error("interpolation needs at least one share")]
    NoShares,
}

fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

fn add_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 + b as u128) % q as u128) as u64
}

fn sub_mod(a: u64, b: u64, q: u64) -> u64 {
    add_mod(a, q - b % q, q)
}

fn pow_mod(mut base: u64, mut exp: u64, q: u64) -> u64 {
    let mut acc = 1 % q;
    base %= q;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        exp >>= 1;
    }
    acc
}

fn inv_mod(a: u64, q: u64) -> u64 {
    pow_mod(a, q - 2, q)
}

/// Deterministic Miller–Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        r += 1;
    }
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// `P(x) = Σ coeffs[j]·x^j mod q`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Polynomial {
    coeffs: Vec<u64>,
    q: u64,
}

impl Polynomial {
    /// Coefficients are reduced mod `q`.
    pub fn from_coeffs(coeffs: Vec<u64>, q: u64) -> Self {
        let coeffs = coeffs.into_iter().map(|c| c % q).collect();
        Polynomial { coeffs, q }
    }

    /// Uniform coefficients α_0..α_t.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R, t: usize, q: u64) -> Self {
        let coeffs = (0..=t).map(|_| rng.random_range(0..q)).collect();
        Polynomial { coeffs, q }
    }

    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    pub fn degree_bound(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Horner evaluation.
    pub fn eval(&self, x: u64) -> u64 {
        let x = x % self.q;
        self.coeffs
            .iter()
            .rev()
            .fold(0, |acc, &c| add_mod(mul_mod(acc, x, self.q), c, self.q))
    }

    pub fn share_at(&self, x: u64) -> ShamirShare {
        ShamirShare {
            x,
            y: self.eval(x),
            q: self.q,
        }
    }
}

/// One point `(x, P(x))` of a writer's polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ShamirShare {
    pub x: u64,
    pub y: u64,
    pub q: u64,
}

/// Draws a random degree-`t` polynomial and `shares` points at distinct,
/// random, non-zero x coordinates.
pub fn shamir_split<R: RngCore + ?Sized>(
    rng: &mut R,
    t: usize,
    shares: usize,
    q: u64,
) -> Result<(Polynomial, Vec<ShamirShare>), ShamirError> {
    if q <= shares as u64 {
        return Err(ShamirError::FieldTooSmall { q, shares });
    }
    if !is_prime(q) {
        return Err(ShamirError::NotPrime(q));
    }
    if t >= shares {
        return Err(ShamirError::ThresholdTooLarge { t, shares });
    }
    let poly = Polynomial::random(rng, t, q);
    let mut xs: Vec<u64> = Vec::with_capacity(shares);
    while xs.len() < shares {
        let x = rng.random_range(1..q);
        if !xs.contains(&x) {
            xs.push(x);
        }
    }
    let out = xs.into_iter().map(|x| poly.share_at(x)).collect();
    Ok((poly, out))
}

pub fn shamir_verify(share: &ShamirShare, poly: &Polynomial) -> bool {
    share.q == poly.q && !share.x.is_multiple_of(poly.q) && poly.eval(share.x) == share.y
}

/// Lagrange interpolation of the unique polynomial of degree < `shares.len()`
/// through the given points.
pub fn interpolate(shares: &[ShamirShare]) -> Result<Polynomial, ShamirError> {
    let first = shares.first().ok_or(ShamirError::NoShares)?;
    let q = first.q;
    for (i, a) in shares.iter().enumerate() {
        if shares[..i].iter().any(|b| b.x % q == a.x % q) {
            return Err(ShamirError::DuplicateX);
        }
    }
    let n = shares.len();
    let mut result = vec![0u64; n];
    for (j, sj) in shares.iter().enumerate() {
        // basis_j(x) = Π_{m≠j} (x − x_m) / (x_j − x_m)
        let mut basis = vec![1u64];
        let mut denom = 1u64;
        for (m, sm) in shares.iter().enumerate() {
            if m == j {
                continue;
            }
            let mut next = vec![0u64; basis.len() + 1];
            for (k, &b) in basis.iter().enumerate() {
                next[k + 1] = add_mod(next[k + 1], b, q);
                next[k] = sub_mod(next[k], mul_mod(b, sm.x % q, q), q);
            }
            basis = next;
            denom = mul_mod(denom, sub_mod(sj.x % q, sm.x % q, q), q);
        }
        let scale = mul_mod(sj.y % q, inv_mod(denom, q), q);
        for (k, &b) in basis.iter().enumerate() {
            result[k] = add_mod(result[k], mul_mod(b, scale, q), q);
        }
    }
    Ok(Polynomial { coeffs: result, q })
}

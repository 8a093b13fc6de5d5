//! Shamir secret sharing over a prime field. Arithmetic goes through u128 so
//! any modulus below 2^63 works; the default field is the Mersenne prime
//! 2^61 - 1, and tests use tiny fields to enumerate share combinations.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::SecureAggError;

pub const DEFAULT_PRIME: u64 = (1u64 << 61) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrimeField {
    p: u64,
}

impl PrimeField {
    pub fn new(p: u64) -> Result<Self, SecureAggError> {
        if p < 3 || !is_prime(p) {
            return Err(SecureAggError::Params(format!("{p} is not an odd prime")));
        }
        Ok(PrimeField { p })
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        ((a as u128 + b as u128) % self.p as u128) as u64
    }

    pub fn sub(&self, a: u64, b: u64) -> u64 {
        ((a as u128 + self.p as u128 - b as u128 % self.p as u128) % self.p as u128) as u64
    }

    pub fn mul(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.p as u128) as u64
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1u64;
        base %= self.p;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse via Fermat; panics on zero, which is an internal invariant
    /// violation (share x-coordinates are distinct and nonzero).
    pub fn inv(&self, a: u64) -> u64 {
        assert!(a % self.p != 0, "inverse of zero");
        self.pow(a, self.p - 2)
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for d in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == d {
            return true;
        }
        if n % d == 0 {
            return false;
        }
    }
    // deterministic Miller-Rabin for u64 with the standard witness set
    let mut r = 0u32;
    let mut d = n - 1;
    while d % 2 == 0 {
        d /= 2;
        r += 1;
    }
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = mod_pow(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 0..r - 1 {
            x = ((x as u128 * x as u128) % n as u128) as u64;
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn mod_pow(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = ((acc as u128 * base as u128) % m as u128) as u64;
        }
        base = ((base as u128 * base as u128) % m as u128) as u64;
        exp >>= 1;
    }
    acc
}

/// One share: the evaluation point x (1-based participant index) and value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Share {
    pub x: u64,
    pub y: u64,
}

/// Split `secret` into `n` shares with threshold `t` (any `t` reconstruct).
pub fn share_secret(
    field: &PrimeField,
    secret: u64,
    t: usize,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Share>, SecureAggError> {
    if t == 0 || t > n {
        return Err(SecureAggError::Params(format!("threshold {t} outside 1..={n}")));
    }
    if n as u64 >= field.modulus() {
        return Err(SecureAggError::Params(format!(
            "{n} participants do not fit in field of size {}",
            field.modulus()
        )));
    }
    let mut coeffs = vec![secret % field.modulus()];
    for _ in 1..t {
        coeffs.push(rng.random_range(0..field.modulus()));
    }
    Ok((1..=n as u64)
        .map(|x| {
            // Horner evaluation of the degree t-1 polynomial at x
            let mut y = 0u64;
            for &c in coeffs.iter().rev() {
                y = field.add(field.mul(y, x), c);
            }
            Share { x, y }
        })
        .collect())
}

/// Lagrange interpolation at zero from at least `t` shares. Extra shares act
/// as an integrity check: every share beyond the first `t` must lie on the
/// interpolated polynomial, otherwise reconstruction is rejected.
pub fn reconstruct(
    field: &PrimeField,
    shares: &[Share],
    t: usize,
    what: &str,
) -> Result<u64, SecureAggError> {
    if shares.len() < t {
        return Err(SecureAggError::Params(format!(
            "{} shares cannot meet threshold {t} for {what}",
            shares.len()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in shares {
        if s.x == 0 || s.x >= field.modulus() {
            return Err(SecureAggError::Params(format!("share point {} out of field", s.x)));
        }
        if !seen.insert(s.x) {
            return Err(SecureAggError::Params(format!("duplicate share point {}", s.x)));
        }
    }
    let base = &shares[..t];
    let secret = lagrange_at(field, base, 0);
    // consistency: the remaining shares must agree with the polynomial
    for probe in &shares[t..] {
        let expect = lagrange_at(field, base, probe.x);
        if expect != probe.y {
            return Err(SecureAggError::ShareIntegrity { what: what.to_string() });
        }
    }
    Ok(secret)
}

fn lagrange_at(field: &PrimeField, shares: &[Share], x: u64) -> u64 {
    let mut acc = 0u64;
    for (i, si) in shares.iter().enumerate() {
        let mut num = 1u64;
        let mut den = 1u64;
        for (j, sj) in shares.iter().enumerate() {
            if i == j {
                continue;
            }
            num = field.mul(num, field.sub(x, sj.x));
            den = field.mul(den, field.sub(si.x, sj.x));
        }
        let term = field.mul(si.y, field.mul(num, field.inv(den)));
        acc = field.add(acc, term);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn field_ops_sanity() {
        let f = PrimeField::new(97).unwrap();
        assert_eq!(f.add(90, 10), 3);
        assert_eq!(f.sub(3, 10), 90);
        assert_eq!(f.mul(10, 10), 3);
        assert_eq!(f.mul(5, f.inv(5)), 1);
        assert!(PrimeField::new(91).is_err()); // 7 * 13
        assert!(PrimeField::new(DEFAULT_PRIME).is_ok());
    }

    #[test]
    fn share_and_reconstruct_roundtrip() {
        let f = PrimeField::new(DEFAULT_PRIME).unwrap();
        let mut r = rng::rng_from(3, &[1]);
        for t in 1..=5usize {
            for n in t..=7usize {
                let secret = 0xdead_beef_cafe % f.modulus();
                let shares = share_secret(&f, secret, t, n, &mut r).unwrap();
                assert_eq!(reconstruct(&f, &shares[..t], t, "s").unwrap(), secret);
                assert_eq!(reconstruct(&f, &shares, t, "s").unwrap(), secret);
            }
        }
    }

    #[test]
    fn any_t_subset_reconstructs() {
        let f = PrimeField::new(DEFAULT_PRIME).unwrap();
        let mut r = rng::rng_from(5, &[2]);
        let secret = 123_456_789;
        let shares = share_secret(&f, secret, 3, 6, &mut r).unwrap();
        for a in 0..6 {
            for b in (a + 1)..6 {
                for c in (b + 1)..6 {
                    let subset = [shares[a], shares[b], shares[c]];
                    assert_eq!(reconstruct(&f, &subset, 3, "s").unwrap(), secret);
                }
            }
        }
    }

    #[test]
    fn fewer_than_t_shares_reveal_nothing_in_small_field() {
        // exhaustively: with t-1 shares every candidate secret is equally
        // consistent, i.e. for each possible secret there exists a polynomial
        // matching the observed shares
        let f = PrimeField::new(31).unwrap();
        let t = 3usize;
        let n = 5usize;
        let secret = 17u64;
        let mut r = rng::rng_from(11, &[4]);
        let shares = share_secret(&f, secret, t, n, &mut r).unwrap();
        let observed = &shares[..t - 1];
        for candidate in 0..31u64 {
            // interpolate the unique degree t-1 = 2 polynomial through
            // (0, candidate) and the two observed shares; it always exists
            // because the x coordinates are distinct
            let pts = [Share { x: 0, y: candidate }, observed[0], observed[1]];
            let mut consistent = true;
            for s in observed {
                if lagrange_at(&f, &pts, s.x) != s.y {
                    consistent = false;
                }
            }
            assert!(consistent, "candidate {candidate} should be consistent with t-1 shares");
        }
    }

    #[test]
    fn tampered_extra_share_is_detected() {
        let f = PrimeField::new(DEFAULT_PRIME).unwrap();
        let mut r = rng::rng_from(7, &[3]);
        let shares = share_secret(&f, 42, 3, 6, &mut r).unwrap();
        let mut bad = shares.clone();
        bad[5].y = f.add(bad[5].y, 1);
        let err = reconstruct(&f, &bad, 3, "seed").unwrap_err();
        assert!(matches!(err, SecureAggError::ShareIntegrity { .. }));
    }

    #[test]
    fn rejects_duplicates_and_short_inputs() {
        let f = PrimeField::new(DEFAULT_PRIME).unwrap();
        let mut r = rng::rng_from(9, &[5]);
        let shares = share_secret(&f, 5, 3, 4, &mut r).unwrap();
        assert!(reconstruct(&f, &shares[..2], 3, "s").is_err());
        let dup = [shares[0], shares[0], shares[1]];
        assert!(reconstruct(&f, &dup, 3, "s").is_err());
        assert!(share_secret(&f, 5, 0, 4, &mut r).is_err());
        assert!(share_secret(&f, 5, 5, 4, &mut r).is_err());
    }

    #[test]
    fn shares_of_equal_secrets_differ_across_rng_states() {
        let f = PrimeField::new(DEFAULT_PRIME).unwrap();
        let mut r = rng::rng_from(1, &[0]);
        let a = share_secret(&f, 99, 2, 3, &mut r).unwrap();
        let b = share_secret(&f, 99, 2, 3, &mut r).unwrap();
        assert_ne!(a, b);
    }
}

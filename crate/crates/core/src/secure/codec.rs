//! Fixed-point encoding of f64 vectors into a power-of-two modulus so that
//! masked words wrap consistently. Decoding center-lifts back to signed
//! values, so sums are exact as long as the true sum of scaled magnitudes
//! stays below half the modulus.

use super::SecureAggError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedPointCodec {
    scale_bits: u32,
    modulus_bits: u32,
}

impl FixedPointCodec {
    pub const DEFAULT: FixedPointCodec = FixedPointCodec { scale_bits: 15, modulus_bits: 32 };

    pub fn new(scale_bits: u32, modulus_bits: u32) -> Result<Self, SecureAggError> {
        if modulus_bits == 0 || modulus_bits > 64 {
            return Err(SecureAggError::Params(format!("modulus bits {modulus_bits} outside 1..=64")));
        }
        if scale_bits + 2 > modulus_bits {
            return Err(SecureAggError::Params(format!(
                "scale 2^{scale_bits} leaves no headroom in modulus 2^{modulus_bits}"
            )));
        }
        Ok(FixedPointCodec { scale_bits, modulus_bits })
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.scale_bits) as f64
    }

    fn mask(&self) -> u64 {
        if self.modulus_bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.modulus_bits) - 1
        }
    }

    pub fn wrap(&self, w: u64) -> u64 {
        w & self.mask()
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.mask()
    }

    pub fn sub(&self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.mask()
    }

    /// Round-to-nearest encoding, two's complement inside the modulus.
    pub fn encode(&self, x: f64) -> Result<u64, SecureAggError> {
        if !x.is_finite() {
            return Err(SecureAggError::Params(format!("cannot encode {x}")));
        }
        let scaled = (x * self.scale()).round();
        let half = (1u128 << (self.modulus_bits - 1)) as f64;
        if scaled >= half || scaled < -half {
            return Err(SecureAggError::Params(format!(
                "{x} at scale 2^{} overflows modulus 2^{}",
                self.scale_bits, self.modulus_bits
            )));
        }
        Ok((scaled as i64 as u64) & self.mask())
    }

    /// Center-lift a (possibly summed) word back to f64.
    pub fn decode(&self, w: u64) -> f64 {
        let w = w & self.mask();
        let half = 1u64 << (self.modulus_bits - 1);
        let signed = if self.modulus_bits == 64 {
            w as i64 as i128
        } else if w >= half {
            w as i128 - (1i128 << self.modulus_bits)
        } else {
            w as i128
        };
        signed as f64 / self.scale()
    }

    pub fn encode_vec(&self, xs: &[f64]) -> Result<Vec<u64>, SecureAggError> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }

    pub fn decode_vec(&self, ws: &[u64]) -> Vec<f64> {
        ws.iter().map(|&w| self.decode(w)).collect()
    }
}

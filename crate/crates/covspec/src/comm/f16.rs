//! Binary16 encode/decode with round-to-nearest-even.
//!
//! Logits cross the wire as 16-bit floats. Overflow saturates to the
//! largest finite magnitude instead of producing an infinity, since an
//! infinite logit would poison softmax on the receiving side. Subnormals
//! are preserved.

use crate::error::{CovError, Result};

/// Largest finite binary16 magnitude (0x7BFF).
pub const F16_MAX: f64 = 65504.0;

/// Encodes a finite real to a binary16 bit pattern, rounding to nearest
/// with ties to even. Magnitudes above the binary16 range saturate to
/// the maximum finite value of the same sign.
pub fn f16_encode(x: f64) -> Result<u16> {
    if x.is_nan() {
        return Err(CovError::InvalidValue);
    }
    let sign: u16 = if x.is_sign_negative() { 0x8000 } else { 0 };
    let ax = x.abs();
    if ax == 0.0 {
        return Ok(sign);
    }
    if ax >= 65520.0 {
        // Midpoint between 65504 and the (nonexistent) next value rounds up
        // to infinity under IEEE; we saturate instead.
        return Ok(sign | 0x7BFF);
    }

    let bits = ax.to_bits();
    let exp = ((bits >> 52) & 0x7FF) as i32 - 1023;
    let frac = bits & 0x000F_FFFF_FFFF_FFFF; // 52-bit fraction, implicit leading 1

    if exp >= -14 {
        // Normal range: keep the top 10 fraction bits, RNE on the rest.
        let keep = (frac >> 42) as u16;
        let rest = frac & ((1u64 << 42) - 1);
        let half = 1u64 << 41;
        let mut mant = keep;
        if rest > half || (rest == half && (keep & 1) == 1) {
            mant += 1;
        }
        let mut e16 = exp + 15;
        if mant == 0x400 {
            // Mantissa overflowed into the next binade.
            mant = 0;
            e16 += 1;
        }
        if e16 >= 31 {
            return Ok(sign | 0x7BFF);
        }
        Ok(sign | ((e16 as u16) << 10) | mant)
    } else {
        // Subnormal target: value = m * 2^-24 with m in [0, 1024).
        let scaled = ax * 2f64.powi(24);
        if scaled < 0.5 {
            return Ok(sign); // rounds to zero
        }
        let floor = scaled.floor();
        let rem = scaled - floor;
        let mut m = floor as u64;
        if rem > 0.5 || (rem == 0.5 && (m & 1) == 1) {
            m += 1;
        }
        if m >= 1024 {
            // Rounded up into the smallest normal.
            return Ok(sign | (1 << 10));
        }
        Ok(sign | m as u16)
    }
}

/// Decodes a binary16 bit pattern to f64, exactly.
pub fn f16_decode(code: u16) -> Result<f64> {
    let sign = if code & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((code >> 10) & 0x1F) as i32;
    let mant = (code & 0x3FF) as f64;
    if exp == 31 {
        if mant != 0.0 {
            return Err(CovError::InvalidValue); // NaN payload
        }
        return Ok(sign * f64::INFINITY);
    }
    let value = if exp == 0 {
        mant * 2f64.powi(-24)
    } else {
        (1.0 + mant / 1024.0) * 2f64.powi(exp - 15)
    };
    Ok(sign * value)
}

/// Encode-after-decode round trip, the quantization the wire applies.
pub fn f16_roundtrip(x: f64) -> Result<f64> {
    f16_decode(f16_encode(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probcore::SeededRng;

    #[test]
    fn exact_lattice_values() {
        assert_eq!(f16_encode(1.0).unwrap(), 0x3C00);
        assert_eq!(f16_decode(0x3C00).unwrap(), 1.0);
        assert_eq!(f16_encode(0.0).unwrap(), 0x0000);
        assert_eq!(f16_decode(0x0000).unwrap(), 0.0);
        assert_eq!(f16_encode(-2.0).unwrap(), 0xC000);
        assert_eq!(f16_decode(0x7BFF).unwrap(), F16_MAX);
    }

    #[test]
    fn nan_rejected() {
        assert!(f16_encode(f64::NAN).is_err());
    }

    #[test]
    fn overflow_saturates() {
        assert_eq!(f16_encode(1e6).unwrap(), 0x7BFF);
        assert_eq!(f16_encode(-1e6).unwrap(), 0xFBFF);
        assert_eq!(f16_encode(f64::INFINITY).unwrap(), 0x7BFF);
    }

    #[test]
    fn subnormals_preserved() {
        // Smallest positive subnormal: 2^-24.
        assert_eq!(f16_encode(2f64.powi(-24)).unwrap(), 0x0001);
        assert_eq!(f16_decode(0x0001).unwrap(), 2f64.powi(-24));
    }

    /// All finite lattice values, sorted, for the nearest-value oracle.
    fn finite_lattice() -> Vec<f64> {
        let mut vals: Vec<f64> = (0u16..=0xFFFF)
            .filter(|c| (c >> 10) & 0x1F != 31)
            .map(|c| f16_decode(c).unwrap())
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        vals
    }

    #[test]
    fn idempotent_on_all_codes() {
        for code in 0u16..=0xFFFF {
            if (code >> 10) & 0x1F == 31 {
                continue; // infinities and NaNs are not wire values
            }
            let x = f16_decode(code).unwrap();
            let back = f16_encode(x).unwrap();
            // -0.0 and +0.0 decode equal but carry distinct codes.
            if x == 0.0 {
                assert_eq!(back & 0x7FFF, code & 0x7FFF);
                assert_eq!(back, code, "signed zero code preserved");
            } else {
                assert_eq!(back, code, "code 0x{code:04x}");
            }
        }
    }

    /// Independent oracle: encode must pick the nearest lattice value,
    /// breaking exact ties toward the code with an even mantissa.
    #[test]
    fn encode_is_nearest_with_ties_to_even() {
        let lattice = finite_lattice();
        let mut rng = SeededRng::new(99, "f16-sweep");
        for _ in 0..100_000 {
            let x = rng.next_uniform() * 8.0 - 4.0;
            let got = f16_decode(f16_encode(x).unwrap()).unwrap();
            let idx = lattice.partition_point(|v| *v < x);
            let lo = lattice[idx.saturating_sub(1)];
            let hi = lattice[idx.min(lattice.len() - 1)];
            let best = if (x - lo).abs() < (hi - x).abs() {
                lo
            } else if (hi - x).abs() < (x - lo).abs() {
                hi
            } else {
                // Exact tie: the even-mantissa neighbor wins.
                let even = |v: f64| f16_encode(v).unwrap() & 1 == 0;
                if even(lo) {
                    lo
                } else {
                    hi
                }
            };
            assert_eq!(got, best, "x = {x}");
        }
    }

    #[test]
    fn error_bound_on_logit_range() {
        let mut rng = SeededRng::new(7, "f16-bound");
        for _ in 0..100_000 {
            let x = rng.next_uniform() * 8.0 - 4.0;
            let err = (f16_roundtrip(x).unwrap() - x).abs();
            let bound = 2f64.powi(-11) * x.abs().max(2f64.powi(-14));
            assert!(err <= bound, "x = {x}, err = {err}, bound = {bound}");
        }
    }
}

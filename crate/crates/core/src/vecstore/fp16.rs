//! IEEE 754 binary16 conversion used for key storage.
//!
//! Encoding rounds to nearest, ties to even. Values beyond the largest finite
//! half overflow to infinity, tiny values flush through the subnormal range to
//! signed zero, and every NaN collapses to [`CANONICAL_NAN`].

/// Pattern every NaN input encodes to.
pub const CANONICAL_NAN: u16 = 0x7E00;

/// Encodes a single-precision value as a binary16 bit pattern.
pub fn fp16_encode(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let man = bits & 0x007f_ffff;

    if exp == 0xff {
        return if man != 0 { CANONICAL_NAN } else { sign | 0x7c00 };
    }

    let half_exp = exp - 127 + 15;
    if half_exp >= 0x1f {
        return sign | 0x7c00;
    }

    if half_exp <= 0 {
        // Subnormal half (or zero). The implicit bit is only present for
        // normal single-precision inputs; f32 subnormals are far below the
        // half subnormal range and round to zero below anyway.
        let shift = (14 - half_exp) as u32;
        if shift > 24 {
            return sign;
        }
        let m = man | 0x0080_0000;
        return sign | round_shift(m, shift) as u16;
    }

    // Normal half. A rounding carry out of the mantissa increments the
    // exponent, and from the top binade it lands exactly on infinity.
    let combined = ((half_exp as u32) << 23) | man;
    sign | round_shift(combined, 13) as u16
}

fn round_shift(m: u32, shift: u32) -> u32 {
    let halfway = 1u32 << (shift - 1);
    let rem = m & ((1u32 << shift) - 1);
    let mut out = m >> shift;
    if rem > halfway || (rem == halfway && out & 1 == 1) {
        out += 1;
    }
    out
}

/// Decodes a binary16 bit pattern. Exact: every half value is representable
/// in single precision.
pub fn fp16_decode(h: u16) -> f32 {
    let sign = ((h as u32) & 0x8000) << 16;
    let exp = ((h >> 10) & 0x1f) as u32;
    let man = (h & 0x03ff) as u32;
    match exp {
        0 => {
            let mag = man as f32 * (1.0 / 16_777_216.0);
            if sign != 0 {
                -mag
            } else {
                mag
            }
        }
        0x1f => f32::from_bits(sign | 0x7f80_0000 | (man << 13)),
        _ => f32::from_bits(sign | ((exp + 112) << 23) | (man << 13)),
    }
}

/// Encodes a slice, appending the patterns to `out`.
pub fn encode_slice(xs: &[f32], out: &mut Vec<u16>) {
    out.extend(xs.iter().map(|&x| fp16_encode(x)));
}

/// Decodes a slice of patterns.
pub fn decode_slice(hs: &[u16]) -> Vec<f32> {
    hs.iter().map(|&h| fp16_decode(h)).collect()
}

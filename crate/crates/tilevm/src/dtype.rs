//! Scalar type system: standard integer/float types plus sub-byte integer
//! and floating-point formats with explicit bit width and exponent/mantissa
//! split.
//!
//! Sub-byte floats follow an IEEE-style encoding with bias `2^(E-1)-1` and
//! subnormals, but reserve no codes for Inf/NaN: the all-ones exponent is an
//! ordinary normal value. Two's complement for signed integers.

use half::f16;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypeError {
    #[error("invalid scalar type: {0}")]
    Invalid(String),
    #[error("cannot parse scalar type {0:?}")]
    Parse(String),
    #[error("raw value {raw:#x} does not fit in {bits} bits")]
    RawTooWide { raw: u64, bits: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    UInt,
    Int,
    Float,
}

/// Descriptor of a scalar data type. Construct via [`ScalarType::uint`],
/// [`ScalarType::int`], [`ScalarType::float`] or the named shortcuts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ScalarType {
    kind: ScalarKind,
    bits: u8,
    exponent_bits: u8,
    mantissa_bits: u8,
}

impl ScalarType {
    pub fn uint(bits: u8) -> Result<ScalarType, TypeError> {
        if bits < 1 || bits > 64 {
            return Err(TypeError::Invalid(format!("uint width {bits}")));
        }
        Ok(ScalarType {
            kind: ScalarKind::UInt,
            bits,
            exponent_bits: 0,
            mantissa_bits: 0,
        })
    }

    pub fn int(bits: u8) -> Result<ScalarType, TypeError> {
        if bits < 2 || bits > 64 {
            return Err(TypeError::Invalid(format!("int width {bits}")));
        }
        Ok(ScalarType {
            kind: ScalarKind::Int,
            bits,
            exponent_bits: 0,
            mantissa_bits: 0,
        })
    }

    pub fn float(exponent_bits: u8, mantissa_bits: u8) -> Result<ScalarType, TypeError> {
        let bits = 1 + exponent_bits as u16 + mantissa_bits as u16;
        if exponent_bits < 1 || mantissa_bits < 1 || bits > 64 {
            return Err(TypeError::Invalid(format!(
                "float split e{exponent_bits}m{mantissa_bits}"
            )));
        }
        Ok(ScalarType {
            kind: ScalarKind::Float,
            bits: bits as u8,
            exponent_bits,
            mantissa_bits,
        })
    }

    pub fn f16() -> ScalarType {
        ScalarType::float(5, 10).unwrap()
    }

    pub fn f32() -> ScalarType {
        ScalarType::float(8, 23).unwrap()
    }

    pub fn f64() -> ScalarType {
        ScalarType::float(11, 52).unwrap()
    }

    pub fn u8t() -> ScalarType {
        ScalarType::uint(8).unwrap()
    }

    pub fn kind(&self) -> ScalarKind {
        self.kind
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn exponent_bits(&self) -> u8 {
        self.exponent_bits
    }

    pub fn mantissa_bits(&self) -> u8 {
        self.mantissa_bits
    }

    pub fn is_float(&self) -> bool {
        self.kind == ScalarKind::Float
    }

    /// Standard IEEE widths use IEEE semantics (Inf/NaN); sub-byte floats use
    /// the no-Inf/NaN minifloat convention.
    fn is_ieee(&self) -> bool {
        matches!((self.exponent_bits, self.mantissa_bits), (5, 10) | (8, 23) | (11, 52))
    }

    fn mask(&self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    fn check_raw(&self, raw: u64) -> Result<(), TypeError> {
        if raw & !self.mask() != 0 {
            return Err(TypeError::RawTooWide { raw, bits: self.bits });
        }
        Ok(())
    }

    /// Interpret `raw` (low `bits` bits) as a value of this type.
    pub fn decode(&self, raw: u64) -> Result<ScalarValue, TypeError> {
        self.check_raw(raw)?;
        let num = match self.kind {
            ScalarKind::UInt => Num::Int(raw as i64),
            ScalarKind::Int => {
                let shift = 64 - self.bits;
                Num::Int(((raw << shift) as i64) >> shift)
            }
            ScalarKind::Float => Num::Float(self.decode_float(raw)),
        };
        Ok(ScalarValue { ty: *self, num })
    }

    fn decode_float(&self, raw: u64) -> f64 {
        match (self.exponent_bits, self.mantissa_bits) {
            (5, 10) => f16::from_bits(raw as u16).to_f64(),
            (8, 23) => f32::from_bits(raw as u32) as f64,
            (11, 52) => f64::from_bits(raw),
            (e, m) => {
                let sign = (raw >> (e + m)) & 1;
                let exp = (raw >> m) & ((1u64 << e) - 1);
                let man = raw & ((1u64 << m) - 1);
                let bias = (1i64 << (e - 1)) - 1;
                let mag = if exp == 0 {
                    // subnormal: 2^(1-bias) * man / 2^m
                    (man as f64) * libm_exp2(1 - bias - m as i64)
                } else {
                    (1.0 + man as f64 / (1u64 << m) as f64) * libm_exp2(exp as i64 - bias)
                };
                if sign == 1 {
                    -mag
                } else {
                    mag
                }
            }
        }
    }

    /// Encode `v` into this type's raw bit pattern. Unrepresentable values
    /// map to the nearest representable one: round-to-nearest-even for
    /// floats, saturation for integers.
    pub fn encode(&self, v: &ScalarValue) -> u64 {
        match self.kind {
            ScalarKind::UInt | ScalarKind::Int => {
                let x = match v.value() {
                    Num::Int(i) => i as i128,
                    Num::Float(f) => {
                        if f.is_nan() {
                            0
                        } else {
                            // round-to-nearest-even before saturating
                            let r = f.round_ties_even();
                            if r >= i128::MAX as f64 {
                                i128::MAX
                            } else if r <= i128::MIN as f64 {
                                i128::MIN
                            } else {
                                r as i128
                            }
                        }
                    }
                };
                let (lo, hi): (i128, i128) = match self.kind {
                    ScalarKind::UInt => (0, self.mask() as i128),
                    _ => {
                        let half = 1i128 << (self.bits - 1);
                        (-half, half - 1)
                    }
                };
                let clamped = x.clamp(lo, hi);
                (clamped as u64) & self.mask()
            }
            ScalarKind::Float => {
                let f = v.as_f64();
                match (self.exponent_bits, self.mantissa_bits) {
                    (5, 10) => f16::from_f64(f).to_bits() as u64,
                    (8, 23) => (f as f32).to_bits() as u64,
                    (11, 52) => f.to_bits(),
                    (e, m) => encode_minifloat(e, m, f),
                }
            }
        }
    }

    /// Largest finite magnitude representable in this type.
    pub fn max_value(&self) -> f64 {
        match self.kind {
            ScalarKind::UInt => self.mask() as f64,
            ScalarKind::Int => ((1u64 << (self.bits - 1)) - 1) as f64,
            ScalarKind::Float => {
                if self.is_ieee() {
                    match self.bits {
                        16 => f16::MAX.to_f64(),
                        32 => f32::MAX as f64,
                        _ => f64::MAX,
                    }
                } else {
                    let all_ones = self.mask() >> 1; // sign 0, rest ones
                    self.decode_float(all_ones)
                }
            }
        }
    }

    /// Enumerate the full raw code space (sub-byte types only: <= 256 codes).
    pub fn code_space(&self) -> impl Iterator<Item = u64> {
        debug_assert!(self.bits <= 8);
        0..=self.mask()
    }
}

fn libm_exp2(e: i64) -> f64 {
    (2.0f64).powi(e as i32)
}

/// Round-to-nearest-even encoding for a minifloat with `e` exponent bits and
/// `m` mantissa bits, sign bit implied, no Inf/NaN codes, saturating at the
/// largest finite value.
fn encode_minifloat(e: u8, m: u8, v: f64) -> u64 {
    let sign_bit = 1u64 << (e + m);
    if v.is_nan() {
        return 0;
    }
    let sign = if v.is_sign_negative() { sign_bit } else { 0 };
    let a = v.abs();
    if a == 0.0 {
        return sign;
    }
    let bias = (1i64 << (e - 1)) - 1;
    let max_exp_field = (1i64 << e) - 1;
    // Unbiased binary exponent of `a` (a is a normal f64 here for all
    // magnitudes this codec meets; subnormal f64 inputs round to zero anyway).
    let e0 = ((a.to_bits() >> 52) & 0x7ff) as i64 - 1023;
    let ef = e0 + bias;
    let (mut exp_field, mut man_field);
    if ef <= 0 {
        // subnormal target quantum
        let q = libm_exp2(1 - bias - m as i64);
        let r = (a / q).round_ties_even() as u64;
        if r >= (1u64 << m) {
            // r == 2^m exactly: a subnormal round-up carry into the first normal
            exp_field = 1;
            man_field = 0;
        } else {
            exp_field = 0;
            man_field = r;
        }
    } else {
        let q = libm_exp2(e0 - m as i64);
        let r = (a / q).round_ties_even() as u64;
        if r == (1u64 << (m + 1)) {
            exp_field = ef + 1;
            man_field = 0;
        } else {
            exp_field = ef;
            man_field = r - (1u64 << m);
        }
    }
    if exp_field > max_exp_field {
        exp_field = max_exp_field;
        man_field = (1u64 << m) - 1;
    }
    sign | ((exp_field as u64) << m) | man_field
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Num {
    Int(i64),
    Float(f64),
}

/// A numeric value tagged with its [`ScalarType`]. Integers are held exactly;
/// floats at 64-bit working precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarValue {
    ty: ScalarType,
    num: Num,
}

impl ScalarValue {
    pub fn ty(&self) -> ScalarType {
        self.ty
    }

    pub fn value(&self) -> Num {
        self.num
    }

    pub fn as_f64(&self) -> f64 {
        match self.num {
            Num::Int(i) => i as f64,
            Num::Float(f) => f,
        }
    }

    pub fn as_i64(&self) -> i64 {
        match self.num {
            Num::Int(i) => i,
            Num::Float(f) => f.round_ties_even() as i64,
        }
    }
}

// Bare constructors used by the interpreter when materializing immediates.
#[allow(non_snake_case)]
impl ScalarValue {
    pub fn Int(ty: ScalarType, i: i64) -> ScalarValue {
        ScalarValue { ty, num: Num::Int(i) }
    }
    pub fn Float(ty: ScalarType, f: f64) -> ScalarValue {
        ScalarValue { ty, num: Num::Float(f) }
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ScalarKind::UInt => write!(f, "u{}", self.bits),
            ScalarKind::Int => write!(f, "i{}", self.bits),
            ScalarKind::Float => {
                if self.is_ieee() {
                    write!(f, "f{}", self.bits)
                } else {
                    write!(f, "f{}e{}m{}", self.bits, self.exponent_bits, self.mantissa_bits)
                }
            }
        }
    }
}

impl From<ScalarType> for String {
    fn from(t: ScalarType) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for ScalarType {
    type Error = TypeError;
    fn try_from(s: String) -> Result<ScalarType, TypeError> {
        s.parse()
    }
}

impl std::str::FromStr for ScalarType {
    type Err = TypeError;

    /// Grammar: `u<bits>`, `i<bits>`, `f<bits>e<E>m<M>`, plus `f16`, `f32`,
    /// `f64` shortcuts.
    fn from_str(s: &str) -> Result<ScalarType, TypeError> {
        let err = || TypeError::Parse(s.to_string());
        match s {
            "f16" => return Ok(ScalarType::f16()),
            "f32" => return Ok(ScalarType::f32()),
            "f64" => return Ok(ScalarType::f64()),
            _ => {}
        }
        let (head, rest) = s.split_at(1);
        match head {
            "u" => ScalarType::uint(rest.parse().map_err(|_| err())?),
            "i" => ScalarType::int(rest.parse().map_err(|_| err())?),
            "f" => {
                let epos = rest.find('e').ok_or_else(err)?;
                let bits: u8 = rest[..epos].parse().map_err(|_| err())?;
                let tail = &rest[epos + 1..];
                let mpos = tail.find('m').ok_or_else(err)?;
                let e: u8 = tail[..mpos].parse().map_err(|_| err())?;
                let m: u8 = tail[mpos + 1..].parse().map_err(|_| err())?;
                let t = ScalarType::float(e, m)?;
                if t.bits() != bits {
                    return Err(TypeError::Invalid(format!(
                        "f{bits} inconsistent with e{e}m{m}"
                    )));
                }
                Ok(t)
            }
            _ => Err(err()),
        }
    }
}

/// The representative sub-byte float splits exercised across the test suite.
pub fn representative_float_types() -> Vec<ScalarType> {
    [(4u8, 3u8), (3, 3), (3, 2), (2, 2), (2, 1), (1, 1)]
        .into_iter()
        .map(|(e, m)| ScalarType::float(e, m).unwrap())
        .collect()
}

/// Every sub-byte dtype covered by the weight pipeline: u1..u8, i2..i8 and
/// the representative float splits.
pub fn sweep_types() -> Vec<ScalarType> {
    let mut out = Vec::new();
    for b in 1..=8 {
        out.push(ScalarType::uint(b).unwrap());
    }
    for b in 2..=8 {
        out.push(ScalarType::int(b).unwrap());
    }
    out.extend(representative_float_types());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_decode_twos_complement() {
        let i6 = ScalarType::int(6).unwrap();
        assert_eq!(i6.decode(0b111111).unwrap().as_i64(), -1);
        assert_eq!(i6.decode(0b100000).unwrap().as_i64(), -32);
        assert_eq!(i6.decode(0b011111).unwrap().as_i64(), 31);
        assert_eq!(i6.decode(0).unwrap().as_i64(), 0);
    }

    #[test]
    fn f6e3m2_decode() {
        let t = ScalarType::float(3, 2).unwrap();
        assert_eq!(t.decode(0b0_011_00).unwrap().as_f64(), 1.0);
        // subnormal: 2^(1-3) * 1/4
        assert_eq!(t.decode(0b0_000_01).unwrap().as_f64(), 0.0625);
        assert_eq!(t.encode(&ScalarValue::Float(t, -1.0)), 0b1_011_00);
        // all-ones exponent is a normal value, not Inf
        let max = t.decode(0b0_111_11).unwrap().as_f64();
        assert_eq!(max, 28.0);
        assert_eq!(t.max_value(), 28.0);
    }

    #[test]
    fn encode_decode_identity_full_code_space() {
        for t in sweep_types() {
            for raw in t.code_space() {
                let v = t.decode(raw).unwrap();
                assert_eq!(t.encode(&v), raw, "{t} raw {raw:#b} -> {v:?}");
            }
        }
    }

    #[test]
    fn uint_saturation() {
        let u4 = ScalarType::uint(4).unwrap();
        assert_eq!(u4.encode(&ScalarValue::Int(u4, 20)), 0xF);
        assert_eq!(u4.encode(&ScalarValue::Int(u4, -3)), 0);
        let i4 = ScalarType::int(4).unwrap();
        assert_eq!(i4.encode(&ScalarValue::Int(i4, 100)), 0x7);
        assert_eq!(i4.encode(&ScalarValue::Int(i4, -100)), 0x8);
    }

    #[test]
    fn float_rounding_nearest_even() {
        let t = ScalarType::float(3, 2).unwrap();
        // 1.125 sits halfway between 1.0 and 1.25; even mantissa wins
        assert_eq!(t.encode(&ScalarValue::Float(t, 1.125)), 0b0_011_00);
        // saturation beyond max
        assert_eq!(t.encode(&ScalarValue::Float(t, 1e9)), 0b0_111_11);
        assert_eq!(t.encode(&ScalarValue::Float(t, -1e9)), 0b1_111_11);
        // tiny values round to signed zero
        assert_eq!(t.encode(&ScalarValue::Float(t, 1e-9)), 0);
    }

    #[test]
    fn float_monotone_in_code_for_fixed_sign() {
        for t in representative_float_types() {
            let mut prev = f64::NEG_INFINITY;
            for raw in 0..(1u64 << (t.bits() - 1)) {
                let v = t.decode(raw).unwrap().as_f64();
                assert!(v >= prev, "{t} not monotone at code {raw}");
                prev = v;
            }
        }
    }

    #[test]
    fn standard_widths() {
        let f = ScalarType::f16();
        assert_eq!(f.bits(), 16);
        let one = f.encode(&ScalarValue::Float(f, 1.0));
        assert_eq!(f.decode(one).unwrap().as_f64(), 1.0);
        let f32t = ScalarType::f32();
        let pi = f32t.encode(&ScalarValue::Float(f32t, std::f64::consts::PI));
        assert_eq!(
            f32t.decode(pi).unwrap().as_f64(),
            std::f64::consts::PI as f32 as f64
        );
    }

    #[test]
    fn parse_and_display() {
        for s in ["u4", "i6", "f6e3m2", "f8e4m3", "f16", "f32", "u1", "i8"] {
            let t: ScalarType = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert!("u0".parse::<ScalarType>().is_err());
        assert!("i1".parse::<ScalarType>().is_err());
        assert!("f5e3m2".parse::<ScalarType>().is_err());
        assert!("x3".parse::<ScalarType>().is_err());
        assert!("f3e1m1".parse::<ScalarType>().is_ok());
    }

    #[test]
    fn raw_width_check() {
        let u3 = ScalarType::uint(3).unwrap();
        assert!(u3.decode(0b1000).is_err());
    }
}

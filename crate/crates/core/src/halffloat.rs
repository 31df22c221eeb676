//! IEEE 754 binary16 emulation with per-operation rounding, plus the
//! overflow-proof scalar tests used by the factorization kernels.
//!
//! All emulated arithmetic is computed in f64 and rounded once per operation
//! to the target format with round-to-nearest-ties-to-even. For binary16 and
//! bfloat16 this yields the correctly rounded result of the exact operation:
//! sums and products of 16-bit values are exact in f64, and the double
//! rounding through f64 division/sqrt is innocuous because f64 carries more
//! than twice the target precision plus two bits.

/// A 16-bit IEEE binary16 pattern: 1 sign, 5 exponent, 10 significand bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HalfWord(u16);

impl HalfWord {
    pub const POS_INFINITY: HalfWord = HalfWord(0x7C00);
    pub const NEG_INFINITY: HalfWord = HalfWord(0xFC00);

    pub fn from_bits(bits: u16) -> Self {
        HalfWord(bits)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn is_nan(self) -> bool {
        (self.0 & 0x7C00) == 0x7C00 && (self.0 & 0x03FF) != 0
    }

    pub fn is_infinite(self) -> bool {
        (self.0 & 0x7FFF) == 0x7C00
    }

    pub fn is_finite(self) -> bool {
        (self.0 & 0x7C00) != 0x7C00
    }
}

/// Outcome of rounding a working-precision value into an emulated format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundStatus {
    /// The value was already representable; nothing was lost.
    Exact,
    /// The value was rounded to a nearby representable value (possibly subnormal).
    Rounded,
    /// A nonzero value rounded to zero.
    UnderflowFlushed,
    /// The rounded magnitude exceeds `x_max`; the result saturates to an
    /// infinity pattern that callers must treat as a breakdown signal.
    Overflow,
}

/// Parameters of a binary floating-point format.
///
/// `signif_bits` counts the implicit leading bit, matching the usual
/// convention (11 for fp16, 8 for bfloat16, 24 for fp32, 53 for fp64).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormatParams {
    pub unit_roundoff: f64,
    pub x_min_subnormal: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub signif_bits: u32,
    pub exp_bits: u32,
}

impl FormatParams {
    /// Derive the parameters from significand and exponent widths.
    pub const fn new(signif_bits: u32, exp_bits: u32) -> FormatParams {
        let emax = (1 << (exp_bits - 1)) - 1; // = bias
        let emin = 1 - emax;
        let p = signif_bits as i32;
        FormatParams {
            unit_roundoff: pow2(-p),
            x_min_subnormal: pow2(emin - (p - 1)),
            x_min: pow2(emin),
            x_max: pow2(emax) * (2.0 - pow2(1 - p)),
            signif_bits,
            exp_bits,
        }
    }

    pub const FP16: FormatParams = FormatParams::new(11, 5);
    pub const BF16: FormatParams = FormatParams::new(8, 8);
    pub const FP32: FormatParams = FormatParams::new(24, 8);
    pub const FP64: FormatParams = FormatParams::new(53, 11);

    fn emax(&self) -> i32 {
        (1 << (self.exp_bits - 1)) - 1
    }

    fn emin(&self) -> i32 {
        1 - self.emax()
    }

    /// Round a finite f64 to this format, in value space.
    ///
    /// Returns the rounded value as an f64 (every member of a narrower format
    /// is exactly representable in f64) together with the rounding status.
    /// On overflow the returned value is `±inf`.
    pub fn round(&self, x: f64) -> (f64, RoundStatus) {
        debug_assert!(!x.is_nan());
        if self.signif_bits == 53 && self.exp_bits == 11 {
            // Working precision: rounding is the identity; only the infinite
            // results of f64 arithmetic count as overflow.
            if x.is_infinite() {
                return (x, RoundStatus::Overflow);
            }
            return (x, RoundStatus::Exact);
        }
        if x.is_infinite() {
            return (x, RoundStatus::Overflow);
        }
        if x == 0.0 {
            return (x, RoundStatus::Exact);
        }
        let e = exponent_of(x.abs()).max(self.emin());
        // ulp = 2^(e - p + 1); x/ulp and r*ulp are exact power-of-two scalings.
        let ulp = pow2_runtime(e - self.signif_bits as i32 + 1);
        let q = x / ulp;
        let r = q.round_ties_even();
        let y = r * ulp;
        if y == 0.0 {
            (y, RoundStatus::UnderflowFlushed)
        } else if y.abs() > self.x_max {
            (
                if y > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
                RoundStatus::Overflow,
            )
        } else if y == x {
            (y, RoundStatus::Exact)
        } else {
            (y, RoundStatus::Rounded)
        }
    }
}

// 2^k as a const expression, covering the f64 subnormal range.
const fn pow2(k: i32) -> f64 {
    if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (k + 1074))
    }
}

fn pow2_runtime(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

/// Unbiased exponent of a positive finite f64: the e with 2^e <= x < 2^(e+1).
fn exponent_of(x: f64) -> i32 {
    let bits = x.to_bits();
    let raw = ((bits >> 52) & 0x7FF) as i32;
    if raw == 0 {
        // Subnormal f64; far below the underflow threshold of every emulated
        // format here, any value with e <= -1023 behaves the same.
        -1023
    } else {
        raw - 1023
    }
}

/// Round a finite working-precision value to binary16.
///
/// Round-to-nearest-ties-to-even; subnormals are representable. A value whose
/// rounded magnitude exceeds `x_max` = 65504 yields `Overflow` status and a
/// saturated infinity pattern; callers must treat that as a breakdown signal,
/// never as data.
pub fn encode(x: f64) -> (HalfWord, RoundStatus) {
    assert!(!x.is_nan(), "encode: NaN is not a valid input");
    let (y, status) = FormatParams::FP16.round(x);
    (pack16(y, 5, 10), status)
}

/// Exact conversion of a binary16 pattern to working precision.
///
/// NaN patterns are rejected; infinities decode to `±inf`.
pub fn decode(w: HalfWord) -> f64 {
    assert!(!w.is_nan(), "decode: NaN pattern is not a valid input");
    unpack16(w.bits(), 5, 10)
}

/// Round a finite working-precision value to bfloat16 (8 exponent, 8
/// significand bits), returning the raw 16-bit pattern.
pub fn encode_bf16(x: f64) -> (u16, RoundStatus) {
    assert!(!x.is_nan(), "encode_bf16: NaN is not a valid input");
    let (y, status) = FormatParams::BF16.round(x);
    (pack16(y, 8, 7).bits(), status)
}

/// Exact conversion of a bfloat16 pattern to working precision.
pub fn decode_bf16(bits: u16) -> f64 {
    unpack16(bits, 8, 7)
}

// Pack an exactly-representable value into a 16-bit pattern with the given
// exponent/stored-mantissa widths. `y` must already be rounded to the format.
fn pack16(y: f64, exp_bits: u32, mant_bits: u32) -> HalfWord {
    let bias = (1u16 << (exp_bits - 1)) - 1;
    let exp_mask = (1u16 << exp_bits) - 1;
    let sign = if y.is_sign_negative() { 1u16 << 15 } else { 0 };
    if y == 0.0 {
        return HalfWord(sign);
    }
    if y.is_infinite() {
        return HalfWord(sign | (exp_mask << mant_bits));
    }
    let a = y.abs();
    let e = exponent_of(a);
    let emin = 1 - bias as i32;
    if e < emin {
        // Subnormal: mantissa counts multiples of 2^(emin - mant_bits).
        let m = a / pow2_runtime(emin - mant_bits as i32);
        debug_assert_eq!(m.fract(), 0.0);
        HalfWord(sign | m as u16)
    } else {
        let m = a / pow2_runtime(e - mant_bits as i32) - pow2_runtime(mant_bits as i32);
        debug_assert_eq!(m.fract(), 0.0);
        let biased = (e + bias as i32) as u16;
        HalfWord(sign | (biased << mant_bits) | m as u16)
    }
}

fn unpack16(bits: u16, exp_bits: u32, mant_bits: u32) -> f64 {
    let bias = ((1u16 << (exp_bits - 1)) - 1) as i32;
    let exp_mask = (1u16 << exp_bits) - 1;
    let mant_mask = (1u16 << mant_bits) - 1;
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let e = ((bits >> mant_bits) & exp_mask) as i32;
    let m = (bits & mant_mask) as f64;
    if e == 0 {
        sign * m * pow2_runtime(1 - bias - mant_bits as i32)
    } else if e == exp_mask as i32 {
        if m != 0.0 {
            f64::NAN
        } else {
            sign * f64::INFINITY
        }
    } else {
        sign * (m + pow2_runtime(mant_bits as i32)) * pow2_runtime(e - bias - mant_bits as i32)
    }
}

/// The scalar operations available in the emulated arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfOp {
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
}

/// One binary16 arithmetic operation with a single rounding of the result.
///
/// Operands must be finite; `div` by zero and `sqrt` of a negative value are
/// contract violations (callers test first) and panic. `sqrt` ignores `b`.
pub fn h_arith(op: HalfOp, a: HalfWord, b: HalfWord) -> (HalfWord, RoundStatus) {
    assert!(a.is_finite(), "h_arith: non-finite operand");
    let x = decode(a);
    let z = match op {
        HalfOp::Sqrt => {
            assert!(x >= 0.0, "h_arith: sqrt of negative value");
            x.sqrt()
        }
        _ => {
            assert!(b.is_finite(), "h_arith: non-finite operand");
            let y = decode(b);
            match op {
                HalfOp::Add => x + y,
                HalfOp::Sub => x - y,
                HalfOp::Mul => x * y,
                HalfOp::Div => {
                    assert!(y != 0.0, "h_arith: division by zero");
                    x / y
                }
                HalfOp::Sqrt => unreachable!(),
            }
        }
    };
    encode(z)
}

/// Safe test for column scaling: true iff dividing a column with largest
/// off-diagonal magnitude `l_kmax` by the pivot `l_kk` cannot overflow.
///
/// The test is `l_kk >= 1` or `l_kk >= l_kmax / x_max`; neither branch can
/// itself overflow since both operands are bounded by `x_max`.
pub fn safe_scale_check(l_kk: f64, l_kmax: f64, fmt: &FormatParams) -> bool {
    debug_assert!(l_kk > 0.0 && l_kmax >= 0.0);
    l_kk >= 1.0 || l_kk >= l_kmax / fmt.x_max
}

/// Safe fused test-and-update: returns `a - b*c` rounded in the target
/// format, or `None` when either the product or the subtraction would
/// overflow (a B3 breakdown signal).
///
/// Two stages: first the product `w = b*c` is checked, then `v = a - w`.
/// For the working-precision format the checks are magnitude comparisons
/// against `x_max / |operand|`, guarded by the `|operand| <= 1` case so they
/// cannot themselves overflow; for narrower formats the f64 intermediates are
/// exact and the rounding status is the test.
pub fn safe_mulsub(a: f64, b: f64, c: f64, fmt: &FormatParams) -> Option<f64> {
    debug_assert!(a.abs() <= fmt.x_max && b.abs() <= fmt.x_max && c.abs() <= fmt.x_max);
    if fmt.signif_bits == 53 {
        let ab = b.abs();
        if ab > 1.0 && c.abs() > fmt.x_max / ab {
            return None;
        }
        let w = b * c;
        if !w.is_finite() {
            return None;
        }
        let v = a - w;
        if !v.is_finite() {
            return None;
        }
        return Some(v);
    }
    let (w, st) = fmt.round(b * c);
    if st == RoundStatus::Overflow {
        return None;
    }
    let (v, st) = fmt.round(a - w);
    if st == RoundStatus::Overflow {
        return None;
    }
    Some(v)
}

//! Branch-free scalar kernels that the compiler can vectorize.

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// 1.5 · 2^52: adding it rounds to an integer held in the low mantissa bits.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;
/// tanh(x) rounds to ±1 in f64 well before this.
const TANH_CLAMP: f64 = 20.0;

/// Taylor coefficients 1/12! .. 1/2! of expm1, highest first.
const EXPM1_COEFFS: [f64; 11] = [
    1.0 / 479_001_600.0,
    1.0 / 39_916_800.0,
    1.0 / 3_628_800.0,
    1.0 / 362_880.0,
    1.0 / 40_320.0,
    1.0 / 5_040.0,
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    0.5,
];

/// `a * b + c`, fused or not. Fused is only selected where the CPU has FMA;
/// a software `mul_add` would be far slower than the split form.
pub trait MulAdd {
    fn madd(a: f64, b: f64, c: f64) -> f64;
}

pub struct Split;
pub struct Fused;

impl MulAdd for Split {
    #[inline(always)]
    fn madd(a: f64, b: f64, c: f64) -> f64 {
        a * b + c
    }
}

impl MulAdd for Fused {
    #[inline(always)]
    fn madd(a: f64, b: f64, c: f64) -> f64 {
        a.mul_add(b, c)
    }
}

/// `expm1(y)` for `0 <= y <= 2 * TANH_CLAMP`.
#[inline(always)]
fn expm1_nonneg<M: MulAdd>(y: f64) -> f64 {
    let shifted = M::madd(y, LOG2_E, ROUND_MAGIC);
    let k = shifted - ROUND_MAGIC;
    let k_bits = shifted.to_bits().wrapping_sub(ROUND_MAGIC.to_bits());
    let r = M::madd(-k, LN2_LO, M::madd(-k, LN2_HI, y));
    // truncation error below 2e-16 on |r| <= ln2/2
    let mut p = EXPM1_COEFFS[0];
    for &c in &EXPM1_COEFFS[1..] {
        p = M::madd(p, r, c);
    }
    let em1_r = M::madd(r * r, p, r);
    let scale = f64::from_bits(k_bits.wrapping_add(1023) << 52);
    M::madd(scale, em1_r, scale - 1.0)
}

/// Hyperbolic tangent via `expm1(2|x|) / (expm1(2|x|) + 2)`, sign restored.
#[inline(always)]
pub fn tanh_with<M: MulAdd>(x: f64) -> f64 {
    let a = x.abs().min(TANH_CLAMP);
    let e = expm1_nonneg::<M>(2.0 * a);
    (e / (e + 2.0)).copysign(x)
}

#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    tanh_with::<Split>(x)
}

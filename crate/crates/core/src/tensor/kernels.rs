//! Forward kernels for the two normalizers, compiled per CPU feature level
//! and selected once at runtime. Both kernels go through the same dispatch.

use std::sync::OnceLock;

#[cfg(target_arch = "x86_64")]
use super::math::Fused;
use super::math::{tanh_with, MulAdd, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimdLevel {
    Generic,
    Avx2Fma,
    Avx512,
}

pub fn simd_level() -> SimdLevel {
    static LEVEL: OnceLock<SimdLevel> = OnceLock::new();
    *LEVEL.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if std::env::var_os("DYTTP_NO_SIMD").is_some() {
                return SimdLevel::Generic;
            }
            if is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("fma") {
                return SimdLevel::Avx512;
            }
            if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
                return SimdLevel::Avx2Fma;
            }
        }
        SimdLevel::Generic
    })
}

#[inline(always)]
fn dyt_body<M: MulAdd>(x: &[f64], alpha: f64, gamma: &[f64], beta: &[f64], out: &mut [f64], squashed: &mut [f64]) {
    let c = gamma.len();
    if squashed.is_empty() {
        for (row, dst) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
            for (((o, xi), g), b) in dst.iter_mut().zip(row).zip(gamma).zip(beta) {
                *o = M::madd(*g, tanh_with::<M>(alpha * xi), *b);
            }
        }
        return;
    }
    for ((row, dst), keep) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)).zip(squashed.chunks_exact_mut(c)) {
        for ((((o, t), xi), g), b) in dst.iter_mut().zip(keep).zip(row).zip(gamma).zip(beta) {
            *t = tanh_with::<M>(alpha * xi);
            *o = M::madd(*g, *t, *b);
        }
    }
}

#[inline(always)]
fn layer_norm_body<M: MulAdd>(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    out: &mut [f64],
    normalized: &mut [f64],
    inv_std: &mut [f64],
) {
    let c = gamma.len();
    let inv_c = 1.0 / c as f64;
    let keep = !inv_std.is_empty();
    for (r, (row, dst)) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)).enumerate() {
        let mean = row.iter().sum::<f64>() * inv_c;
        let mut var = 0.0;
        for v in row {
            let d = v - mean;
            var = M::madd(d, d, var);
        }
        let rstd = 1.0 / (var * inv_c + eps).sqrt();
        for (((o, xi), g), b) in dst.iter_mut().zip(row).zip(gamma).zip(beta) {
            *o = M::madd(*g, (xi - mean) * rstd, *b);
        }
        if keep {
            for (n, xi) in normalized[r * c..(r + 1) * c].iter_mut().zip(row) {
                *n = (xi - mean) * rstd;
            }
            inv_std[r] = rstd;
        }
    }
}

macro_rules! multiversion {
    ($name:ident, $body:ident, ($($arg:ident : $ty:ty),*)) => {
        pub(crate) fn $name($($arg: $ty),*) {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f,avx512dq,fma")]
                unsafe fn wide($($arg: $ty),*) {
                    $body::<Fused>($($arg),*)
                }
                #[target_feature(enable = "avx2,fma")]
                unsafe fn mid($($arg: $ty),*) {
                    $body::<Fused>($($arg),*)
                }
                match simd_level() {
                    // SAFETY: the level is only reported when the CPU has these features.
                    SimdLevel::Avx512 => return unsafe { wide($($arg),*) },
                    SimdLevel::Avx2Fma => return unsafe { mid($($arg),*) },
                    SimdLevel::Generic => {}
                }
            }
            $body::<Split>($($arg),*)
        }
    };
}

multiversion!(
    dyt_forward,
    dyt_body,
    (x: &[f64], alpha: f64, gamma: &[f64], beta: &[f64], out: &mut [f64], squashed: &mut [f64])
);

multiversion!(
    layer_norm_forward,
    layer_norm_body,
    (
        x: &[f64],
        gamma: &[f64],
        beta: &[f64],
        eps: f64,
        out: &mut [f64],
        normalized: &mut [f64],
        inv_std: &mut [f64]
    )
);

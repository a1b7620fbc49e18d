//! Counter-based random number generation.
//!
//! Every random quantity in this crate is a pure function of an integer key
//! `(seed, stream, hi, lo)`. There is no generator state to advance, so
//! ensemble members can be evaluated on any number of workers in any order,
//! two-sided Brownian increments can be produced at arbitrary (negative)
//! grid indices on demand, and theta-shifts of a noise path reduce to index
//! arithmetic.

use num_complex::Complex64;

/// Stream tags keep independent uses of the same seed from colliding.
pub const STREAM_INCREMENTS: u64 = 0x01;
pub const STREAM_STATIONARY: u64 = 0x02;
pub const STREAM_BALL: u64 = 0x03;
pub const STREAM_CONSTANTS: u64 = 0x04;
pub const STREAM_GENERIC: u64 = 0x05;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collapse a four-part key into one avalanche-mixed word.
#[inline]
fn key_hash(seed: u64, stream: u64, hi: u64, lo: u64) -> u64 {
    let mut h = mix64(seed ^ GOLDEN);
    h = mix64(h ^ stream.wrapping_mul(GOLDEN));
    h = mix64(h ^ hi.wrapping_mul(0xc2b2_ae3d_27d4_eb4f));
    mix64(h ^ lo.wrapping_mul(0x1656_67b1_9e37_79f9))
}

/// k-th 64-bit word of the stream addressed by the key.
#[inline]
pub fn draw_u64(seed: u64, stream: u64, hi: u64, lo: u64, k: u64) -> u64 {
    mix64(key_hash(seed, stream, hi, lo).wrapping_add(k.wrapping_mul(GOLDEN)))
}

/// Uniform in (0, 1]; never returns 0 so it is safe under `ln`.
#[inline]
fn uniform_open(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

/// Uniform in [0, 1).
#[inline]
fn uniform_half_open(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Pair of independent standard normals via Box-Muller.
#[inline]
pub fn normal_pair(seed: u64, stream: u64, hi: u64, lo: u64, k: u64) -> (f64, f64) {
    let u1 = uniform_open(draw_u64(seed, stream, hi, lo, 2 * k));
    let u2 = uniform_half_open(draw_u64(seed, stream, hi, lo, 2 * k + 1));
    let mag = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
    (mag * c, mag * s)
}

/// Standard complex normal: independent real and imaginary parts of
/// variance 1/2 each, so E|xi|^2 = 1.
#[inline]
pub fn complex_normal(seed: u64, stream: u64, hi: u64, lo: u64) -> Complex64 {
    let (a, b) = normal_pair(seed, stream, hi, lo, 0);
    Complex64::new(a, b).scale(std::f64::consts::FRAC_1_SQRT_2)
}

/// Uniform draw in [0, 1) for the k-th slot of a key.
#[inline]
pub fn uniform(seed: u64, stream: u64, hi: u64, lo: u64, k: u64) -> f64 {
    uniform_half_open(draw_u64(seed, stream, hi, lo, k))
}

//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream whose 256-bit key is derived from the
//! run seed and a domain tag, and whose 64-bit stream id selects an
//! independent keystream under that key. Path `i` of a batch uses stream id
//! `i`, so batches can be generated in any order or split across threads with
//! identical results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{config, Result};

pub type StreamRng = ChaCha8Rng;

/// Purpose tags that separate otherwise-identical `(seed, stream)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Path = 1,
    Clock = 2,
    Resample = 3,
    Inner = 4,
    Bessel = 5,
    Bootstrap = 6,
    Stage = 7,
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key(seed: u64, domain: Domain, index: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    let mut s = splitmix64(seed ^ splitmix64(domain as u64)) ^ splitmix64(index.wrapping_add(0xA5A5_5A5A));
    for chunk in out.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    out
}

/// Random stream for `(seed, domain, stream)`.
pub fn stream_rng(seed: u64, domain: Domain, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::from_seed(key(seed, domain, 0));
    rng.set_stream(stream);
    rng
}

/// Random stream for `(seed, domain, stream, index)`; used where a stream
/// must be re-keyed per stage, e.g. after resampling duplicates particles.
pub fn keyed_rng(seed: u64, domain: Domain, stream: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::from_seed(key(seed, domain, index.wrapping_add(1)));
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[inline]
pub fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

/// Uniform on the open interval `(0, 1)`.
#[inline]
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// An independent exponential observation horizon `e / q`.
pub fn exponential_clock(q: f64, seed: u64, stream: u64) -> Result<f64> {
    if !(q > 0.0 && q.is_finite()) {
        return config(format!("exponential clock rate must be positive, got {q}"));
    }
    let mut rng = stream_rng(seed, Domain::Clock, stream);
    Ok(exp1(&mut rng) / q)
}

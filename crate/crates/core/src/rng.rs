//! Counter-based random streams.
//!
//! Every output is a pure function of `(seed, stream_id, counter)`: the
//! Philox2x64-10 block cipher is keyed with the seed and encrypts the
//! 128-bit block counter `(counter / 2, stream_id)`. Each block yields two
//! 64-bit words, so the uniform with index `counter` is word `counter % 2` of
//! block `counter / 2`. Distinct `(stream_id, counter)` pairs map to distinct
//! blocks, which is what makes per-sample substreams independent and batch
//! generation reproducible for any number of workers.

use crate::error::{Error, Result};
use crate::model::{ParamVector, TrainingBox};
use crate::normal;

const PHILOX_M: u64 = 0xD2B7_4407_B1CE_6E93;
const PHILOX_W: u64 = 0x9E37_79B9_7F4A_7C15;

/// Philox2x64 with ten rounds.
#[inline]
pub fn philox2x64(key: u64, ctr: [u64; 2]) -> [u64; 2] {
    let mut k = key;
    let [mut c0, mut c1] = ctr;
    for round in 0..10 {
        if round > 0 {
            k = k.wrapping_add(PHILOX_W);
        }
        let prod = (PHILOX_M as u128) * (c0 as u128);
        let hi = (prod >> 64) as u64;
        let lo = prod as u64;
        c0 = hi ^ k ^ c1;
        c1 = lo;
    }
    [c0, c1]
}

/// Maps 64 random bits to the open interval (0,1): the top 52 bits are
/// centred in their cell, so 0 and 1 are unreachable. (With 53 bits the top
/// cell centre would round up to 1.)
#[inline]
fn bits_to_open_unit(x: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 52) as f64;
    ((x >> 12) as f64 + 0.5) * SCALE
}

/// Phase tags for the top byte of a stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Phase {
    /// Training batches: `index` is the SGD step, the counter block is the sample.
    Train = 1,
    /// Weight initialization: `index` is 0.
    Init = 2,
    /// Planner pilot runs: `index` is 0, counter block is the sample.
    Pilot = 3,
    /// Error measurement test points.
    Evaluate = 4,
    /// Stand-alone studies (slope fits, variance ratios, ...).
    Study = 5,
}

/// Packs a stream id as `phase:8 | slot:8 | level:8 | index:40`.
pub fn stream_id(phase: Phase, slot: u8, level: u32, index: u64) -> u64 {
    debug_assert!(level < 256, "level {level} does not fit the stream id");
    debug_assert!(index < (1 << 40));
    ((phase as u64) << 56) | ((slot as u64) << 48) | (((level as u64) & 0xff) << 40) | (index & ((1 << 40) - 1))
}

/// Counter bits reserved per sample: sample `i` of a batch starts at `i << 32`.
pub const SAMPLE_SHIFT: u32 = 32;

/// Derives an independent seed for repetition `rep` of an experiment.
pub fn derive_seed(seed: u64, rep: u64) -> u64 {
    philox2x64(seed, [rep, 0x5EED_5EED_5EED_5EED])[0]
}

/// A position in a counter-based random sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
    pub counter: u64,
}

/// A stream positioned at counter 0.
pub fn seed_stream(seed: u64, stream_id: u64) -> RngStream {
    RngStream {
        seed,
        stream_id,
        counter: 0,
    }
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        seed_stream(seed, stream_id)
    }

    /// The substream reserved for sample `index` of this stream.
    pub fn for_sample(self, index: u64) -> Self {
        RngStream {
            counter: index << SAMPLE_SHIFT,
            ..self
        }
    }

    #[inline]
    fn bits_at(&self, counter: u64) -> u64 {
        philox2x64(self.seed, [counter >> 1, self.stream_id])[(counter & 1) as usize]
    }

    /// Uniform at an absolute counter, without moving the stream.
    #[inline]
    pub fn uniform_at(&self, counter: u64) -> f64 {
        bits_to_open_unit(self.bits_at(counter))
    }

    /// Next uniform in (0,1); advances the counter by one.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        let u = self.uniform_at(self.counter);
        self.counter += 1;
        u
    }

    /// Next standard normal by inversion; advances the counter by one.
    #[inline]
    pub fn next_standard_normal(&mut self) -> f64 {
        normal::quantile(self.next_uniform())
    }

    /// Fills `out` with consecutive uniforms, reusing both words of each
    /// Philox block. Equivalent to repeated [`next_uniform`](Self::next_uniform).
    pub fn fill_uniforms(&mut self, out: &mut [f64]) {
        let mut i = 0;
        if self.counter & 1 == 1 && !out.is_empty() {
            out[0] = self.next_uniform();
            i = 1;
        }
        while i + 1 < out.len() {
            let block = philox2x64(self.seed, [self.counter >> 1, self.stream_id]);
            out[i] = bits_to_open_unit(block[0]);
            out[i + 1] = bits_to_open_unit(block[1]);
            self.counter += 2;
            i += 2;
        }
        if i < out.len() {
            out[i] = self.next_uniform();
        }
    }

    /// Fills `out` with consecutive standard normals.
    pub fn fill_standard_normals(&mut self, out: &mut [f64]) {
        self.fill_uniforms(out);
        for v in out.iter_mut() {
            *v = normal::quantile(*v);
        }
    }
}

/// Draws a point uniformly from the box, one uniform per coordinate in the
/// order (mu, sigma, s0, maturity, strike).
pub fn sample_uniform_box(stream: &mut RngStream, bx: &TrainingBox) -> Result<ParamVector> {
    bx.check_order()?;
    Ok(sample_box_unchecked(stream, bx))
}

#[inline]
pub(crate) fn sample_box_unchecked(stream: &mut RngStream, bx: &TrainingBox) -> ParamVector {
    let mut u = [0.0; 5];
    stream.fill_uniforms(&mut u);
    let mut coords = [0.0; 5];
    for (k, c) in coords.iter_mut().enumerate() {
        let (lo, hi) = bx.bounds[k];
        *c = if lo == hi { lo } else { lo + (hi - lo) * u[k] };
    }
    ParamVector::from_array(coords)
}

/// Rejects a stream id layout overflow early instead of aliasing streams.
pub(crate) fn check_level_fits(level: u32) -> Result<()> {
    if level >= 256 {
        return Err(Error::domain("level", format!("{level} exceeds the stream id budget of 255")));
    }
    Ok(())
}

//! Keyed, counter-addressed random streams.
//!
//! Every Gaussian used anywhere in the crate is a pure function of
//! `(master_seed, replicate, domain, particle, step)`. The ChaCha8 key is
//! derived from `(master_seed, replicate, domain)`, the ChaCha stream id is
//! the particle index, and the word position is `step * words_per_step`.
//! Random access and sequential consumption therefore produce identical
//! numbers, which is what makes coupled systems share noise by construction
//! and makes results independent of worker scheduling.
//!
//! Normals come from Box–Muller with a fixed consumption of two `u64` per
//! pair, so positions in the stream never depend on the values drawn.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// Independent families of streams drawn from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamDomain {
    /// Brownian increments of the particle dynamics.
    Increments,
    /// Initial positions of a (first) ensemble.
    InitA,
    /// Initial positions of a second, independently drawn ensemble.
    InitB,
    /// Large reference samples (ground-truth proxies).
    Reference,
    /// Auxiliary sampling (certification, Monte Carlo moments).
    Auxiliary,
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::Increments => 0x1,
            StreamDomain::InitA => 0x2,
            StreamDomain::InitB => 0x3,
            StreamDomain::Reference => 0x4,
            StreamDomain::Auxiliary => 0x5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub replicate: u64,
    pub domain: StreamDomain,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Number of 32-bit ChaCha words consumed by one step of `dim` normals.
#[inline]
pub fn words_per_step(dim: usize) -> u128 {
    4 * dim.div_ceil(2) as u128
}

impl RngStream {
    pub fn new(master_seed: u64) -> Self {
        RngStream {
            master_seed,
            replicate: 0,
            domain: StreamDomain::Increments,
        }
    }

    pub fn with_replicate(self, replicate: u64) -> Self {
        RngStream { replicate, ..self }
    }

    pub fn with_domain(self, domain: StreamDomain) -> Self {
        RngStream { domain, ..self }
    }

    fn key(&self) -> [u8; 32] {
        let mut state = self.master_seed;
        splitmix64(&mut state);
        state ^= self.replicate.wrapping_mul(0xD1B5_4A32_D192_ED03);
        splitmix64(&mut state);
        state ^= self.domain.tag().wrapping_mul(0x8CB9_2BA7_2F3D_8DD7);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        key
    }

    /// Generator positioned at the start of `particle`'s stream.
    pub fn particle_rng(&self, particle: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key());
        rng.set_stream(particle);
        rng.set_word_pos(0);
        rng
    }

    /// Standard normals for `(particle, step)`, random access.
    pub fn normals_at(&self, particle: u64, step: u64, out: &mut [f64]) {
        let mut rng = self.particle_rng(particle);
        rng.set_word_pos(step as u128 * words_per_step(out.len()));
        fill_standard_normals(&mut rng, out);
    }
}

#[inline]
fn unit_open_closed(bits: u64) -> f64 {
    // (0, 1]: never zero, so ln() stays finite
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform on [0, 1) with 53 random bits.
#[inline]
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Fills `out` with standard normals via Box–Muller, consuming exactly
/// `2 * ceil(out.len() / 2)` words of 64 bits.
pub fn fill_standard_normals(rng: &mut impl RngCore, out: &mut [f64]) {
    let mut chunks = out.chunks_mut(2);
    for pair in &mut chunks {
        let u1 = unit_open_closed(rng.next_u64());
        let u2 = uniform(rng);
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        pair[0] = radius * c;
        if pair.len() > 1 {
            pair[1] = radius * s;
        }
    }
}

pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let mut z = [0.0];
    fill_standard_normals(rng, &mut z);
    z[0]
}

/// Brownian increments for one step: a `particles x dim` matrix of
/// independent N(0, dt) entries. Row `j` comes from particle stream `j`.
pub fn brownian_increments(
    stream: &RngStream,
    step: u64,
    particles: usize,
    dim: usize,
    dt: f64,
) -> Matrix {
    let mut out = Matrix::zeros(particles, dim);
    let scale = dt.sqrt();
    for j in 0..particles {
        let row = out.row_mut(j);
        stream.normals_at(j as u64, step, row);
        row.iter_mut().for_each(|z| *z *= scale);
    }
    out
}

/// Sequential producer of increments for a fixed set of particle streams.
///
/// Keeps one generator per particle so consecutive steps cost no re-keying.
/// Requests for a non-consecutive step reposition the generator, so the
/// output always equals [`brownian_increments`] for the same coordinates.
#[derive(Debug, Clone)]
pub struct IncrementSource {
    rngs: Vec<ChaCha8Rng>,
    dim: usize,
}

impl IncrementSource {
    pub fn new(stream: &RngStream, particles: usize, dim: usize) -> Self {
        let rngs = (0..particles as u64)
            .map(|j| stream.particle_rng(j))
            .collect();
        IncrementSource { rngs, dim }
    }

    pub fn particles(&self) -> usize {
        self.rngs.len()
    }

    /// Writes increments for `step` into the first `out.rows()` rows.
    pub fn fill(&mut self, step: u64, dt: f64, out: &mut Matrix) {
        assert!(
            out.rows() <= self.rngs.len(),
            "more rows than particle streams"
        );
        assert_eq!(out.cols(), self.dim, "increment width mismatch");
        let scale = dt.sqrt();
        let target = step as u128 * words_per_step(self.dim);
        for (j, rng) in self.rngs.iter_mut().enumerate().take(out.rows()) {
            if rng.get_word_pos() != target {
                rng.set_word_pos(target);
            }
            let row = out.row_mut(j);
            fill_standard_normals(rng, row);
            row.iter_mut().for_each(|z| *z *= scale);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_coordinates_give_bit_identical_increments() {
        let stream = RngStream::new(7).with_replicate(3);
        let a = brownian_increments(&stream, 11, 5, 3, 0.01);
        let b = brownian_increments(&stream, 11, 5, 3, 0.01);
        assert_eq!(a, b);
    }

    #[test]
    fn coordinates_separate_streams() {
        let base = RngStream::new(7);
        let a = brownian_increments(&base, 0, 2, 2, 1.0);
        let other_rep = brownian_increments(&base.with_replicate(1), 0, 2, 2, 1.0);
        let other_dom = brownian_increments(&base.with_domain(StreamDomain::InitA), 0, 2, 2, 1.0);
        let other_step = brownian_increments(&base, 1, 2, 2, 1.0);
        assert_ne!(a, other_rep);
        assert_ne!(a, other_dom);
        assert_ne!(a, other_step);
        assert_ne!(a.row(0), a.row(1));
    }

    #[test]
    fn sequential_source_matches_random_access_in_any_order() {
        let stream = RngStream::new(99).with_replicate(4);
        for dim in [1, 2, 3] {
            let mut source = IncrementSource::new(&stream, 6, dim);
            let mut buf = Matrix::zeros(6, dim);
            for step in [0u64, 1, 2, 7, 3, 3, 8] {
                source.fill(step, 0.25, &mut buf);
                assert_eq!(buf, brownian_increments(&stream, step, 6, dim, 0.25));
            }
        }
    }

    #[test]
    fn prefix_rows_do_not_depend_on_particle_count() {
        let stream = RngStream::new(5);
        let small = brownian_increments(&stream, 4, 3, 2, 0.1);
        let large = brownian_increments(&stream, 4, 40, 2, 0.1);
        assert_eq!(large.head(3), small);
    }

    #[test]
    fn gaussian_sample_moments() {
        // 10^6 entries, variance dt = 0.01
        let dt = 0.01;
        let stream = RngStream::new(2024);
        let mut source = IncrementSource::new(&stream, 1000, 2);
        let mut buf = Matrix::zeros(1000, 2);
        let (mut sum, mut sum_sq, mut n) = (0.0f64, 0.0f64, 0usize);
        for step in 0..500 {
            source.fill(step, dt, &mut buf);
            for &z in buf.as_slice() {
                sum += z;
                sum_sq += z * z;
                n += 1;
            }
        }
        assert_eq!(n, 1_000_000);
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let se = (dt / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se, "mean {mean} vs se {se}");
        assert!((var - dt).abs() / dt < 0.01, "variance {var}");
    }
}

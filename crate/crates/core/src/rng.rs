//! Counter-based Philox4x32-10 generator. Every random draw is addressed by
//! `(seed, particle, step, domain)`, so the noise seen by a particle does not
//! depend on thread scheduling, on how many other particles exist, or on
//! which run (plain or coupled) consumes it.

use rand::RngCore;

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

/// Separates the independent uses of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum StreamDomain {
    /// Initial radius and direction.
    Init = 1,
    /// Brownian increments.
    Step = 2,
    /// Resampling at a restart time.
    Restart = 3,
}

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let prod = u64::from(a) * u64::from(b);
    ((prod >> 32) as u32, prod as u32)
}

/// One Philox4x32-10 block.
#[inline]
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let (hi0, lo0) = mulhilo(M0, c[0]);
        let (hi1, lo1) = mulhilo(M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// A finite random stream for one `(particle, step, domain)` address. The
/// last counter word enumerates blocks inside the stream.
#[derive(Debug, Clone)]
pub struct PhiloxStream {
    key: [u32; 2],
    counter: [u32; 4],
    buffer: [u32; 4],
    index: usize,
}

impl PhiloxStream {
    pub fn new(seed: u64, particle: u64, step: u64, domain: StreamDomain) -> Self {
        debug_assert!(particle < 1 << 32 && step < 1 << 32);
        let key = [seed as u32, (seed >> 32) as u32];
        let counter = [particle as u32, step as u32, domain as u32, 0];
        PhiloxStream { key, counter, buffer: [0; 4], index: 4 }
    }

    fn refill(&mut self) {
        self.buffer = philox4x32_10(self.counter, self.key);
        self.counter[3] = self.counter[3].wrapping_add(1);
        self.index = 0;
    }
}

impl RngCore for PhiloxStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        if self.index >= 4 {
            self.refill();
        }
        let v = self.buffer[self.index];
        self.index += 1;
        v
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let lo = u64::from(self.next_u32());
        let hi = u64::from(self.next_u32());
        (hi << 32) | lo
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(4) {
            let bytes = self.next_u32().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Uniform double in the open interval `(0, 1)` from 53 random bits.
#[inline]
pub fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn known_answer_vectors() {
        assert_eq!(philox4x32_10([0; 4], [0; 2]), [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]);
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
        );
        assert_eq!(
            philox4x32_10([0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344], [0xa4093822, 0x299f31d0]),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn streams_are_addressed_not_sequenced() {
        let mut a = PhiloxStream::new(7, 3, 10, StreamDomain::Step);
        let mut b = PhiloxStream::new(7, 3, 10, StreamDomain::Step);
        let xs: Vec<u32> = (0..9).map(|_| a.next_u32()).collect();
        let ys: Vec<u32> = (0..9).map(|_| b.next_u32()).collect();
        assert_eq!(xs, ys);
        let mut c = PhiloxStream::new(7, 4, 10, StreamDomain::Step);
        assert_ne!(xs[0], c.next_u32());
        let mut e = PhiloxStream::new(7, 3, 10, StreamDomain::Init);
        assert_ne!(xs[0], e.next_u32());
    }

    #[test]
    fn uniform_and_normal_moments() {
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut usum = 0.0;
        for i in 0..n {
            let mut s = PhiloxStream::new(11, i, 0, StreamDomain::Step);
            let z: f64 = StandardNormal.sample(&mut s);
            sum += z;
            sum_sq += z * z;
            let u = open_unit(&mut s);
            assert!(u > 0.0 && u < 1.0);
            usum += u;
        }
        let nf = n as f64;
        assert!((sum / nf).abs() < 5.0 / nf.sqrt());
        assert!((sum_sq / nf - 1.0).abs() < 5.0 * (2.0 / nf).sqrt());
        assert!((usum / nf - 0.5).abs() < 5.0 * (1.0 / 12.0 / nf).sqrt());
    }
}

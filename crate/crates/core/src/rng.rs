//! Counter-based random streams.
//!
//! Every stream is addressed by a [`StreamKey`] and produces output that is a
//! pure function of `(key, draw index)`. Nothing depends on which worker
//! thread happens to evaluate a row, which is what keeps parallel runs
//! bit-identical to serial ones.
//!
//! The block function is Philox4x32-10.

use rand_core::RngCore;

use crate::error::{Error, Result};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// One Philox4x32 block with 10 rounds.
#[inline]
pub fn philox4x32_10(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    for round in 0..10 {
        if round > 0 {
            key[0] = key[0].wrapping_add(PHILOX_W0);
            key[1] = key[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
    }
    ctr
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Address of an independent random stream.
///
/// `stream` names the consumer (a rule, a Poisson source, ...), `epoch` is
/// usually the update or time-step counter and `index` the row or neuron.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u32,
    pub epoch: u64,
    pub index: u32,
}

impl StreamKey {
    pub fn new(seed: u64, stream: u32, epoch: u64, index: u32) -> Self {
        Self { seed, stream, epoch, index }
    }
}

/// Deterministic random stream over Philox blocks.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: [u32; 2],
    index: u32,
    epoch: u64,
    block: u32,
    buf: [u32; 4],
    pos: usize,
}

impl CounterRng {
    pub fn new(key: StreamKey) -> Self {
        let k = splitmix64(key.seed ^ splitmix64(key.stream as u64 ^ 0x5EED_0000_0000_0000));
        Self {
            key: [k as u32, (k >> 32) as u32],
            index: key.index,
            epoch: key.epoch,
            block: 0,
            buf: [0; 4],
            pos: 4,
        }
    }

    /// Shorthand for `CounterRng::new(StreamKey::new(..))`.
    pub fn keyed(seed: u64, stream: u32, epoch: u64, index: u32) -> Self {
        Self::new(StreamKey::new(seed, stream, epoch, index))
    }

    #[inline]
    fn refill(&mut self) {
        let ctr = [self.block, self.index, self.epoch as u32, (self.epoch >> 32) as u32];
        self.buf = philox4x32_10(ctr, self.key);
        self.block = self.block.wrapping_add(1);
        self.pos = 0;
    }

    #[inline]
    pub fn next_word(&mut self) -> u32 {
        if self.pos == 4 {
            self.refill();
        }
        let w = self.buf[self.pos];
        self.pos += 1;
        w
    }

    #[inline]
    pub fn next_u64_word(&mut self) -> u64 {
        let lo = self.next_word() as u64;
        let hi = self.next_word() as u64;
        (hi << 32) | lo
    }

    /// Uniform double in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64_word() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased integer in `[0, n)`. `n` must be non-zero.
    #[inline]
    pub fn uniform_int(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let mut m = (self.next_u64_word() as u128) * (n as u128);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                m = (self.next_u64_word() as u128) * (n as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// `k` distinct values from `[0, n)`, every subset equally likely
    /// (Floyd's algorithm). Order of the returned values is unspecified.
    pub fn sample_k_distinct(&mut self, k: usize, n: usize) -> Result<Vec<u32>> {
        if k > n {
            return Err(Error::KTooLarge { k, n });
        }
        let mut out = Vec::with_capacity(k);
        if k <= 32 {
            for j in (n - k)..n {
                let t = self.uniform_int(j as u64 + 1) as u32;
                if out.contains(&t) {
                    out.push(j as u32);
                } else {
                    out.push(t);
                }
            }
        } else {
            let mut taken = vec![false; n];
            for j in (n - k)..n {
                let t = self.uniform_int(j as u64 + 1) as usize;
                let pick = if taken[t] { j } else { t };
                taken[pick] = true;
                out.push(pick as u32);
            }
        }
        Ok(out)
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        self.next_word()
    }

    fn next_u64(&mut self) -> u64 {
        self.next_u64_word()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(4) {
            let w = self.next_word().to_le_bytes();
            chunk.copy_from_slice(&w[..chunk.len()]);
        }
    }
}

/// Stream identifiers used by the built-in models. Rules registered on a
/// [`Model`](crate::framework::Model) get ids starting at
/// [`streams::RULE_BASE`].
pub mod streams {
    pub const POISSON: u32 = 1;
    pub const STIMULUS: u32 = 2;
    pub const CONNECT_INIT: u32 = 3;
    pub const WEIGHT_INIT: u32 = 4;
    pub const TASK: u32 = 5;
    pub const RULE_BASE: u32 = 1 << 16;
    /// Row index reserved for the host phase of a rule.
    pub const HOST_ROW: u32 = u32::MAX;
}

//! Stable, platform-independent hashing used to derive per-cell seeds.
//!
//! `core::hash::Hasher` implementations make no cross-version stability
//! promise, and seeds must be reproducible across builds.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental FNV-1a over a sequence of length-delimited fields.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StableHasher(u64);

impl StableHasher {
    pub(crate) fn new() -> Self {
        Self(FNV_OFFSET)
    }

    fn bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub(crate) fn str(mut self, s: &str) -> Self {
        self.bytes(&(s.len() as u64).to_le_bytes());
        self.bytes(s.as_bytes());
        self
    }

    pub(crate) fn u64(mut self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes());
        self
    }

    pub(crate) fn finish(self) -> u64 {
        // splitmix64 finalizer; raw FNV has weak low bits.
        let mut z = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Maps a hash to a uniform value in `[0, 1)` using its top 53 bits.
pub(crate) fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

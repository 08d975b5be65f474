//! Deterministic counter-based random substreams.
//!
//! Every random draw in the simulator comes from a [`StreamRng`] keyed by
//! (seed, replication, lane, index), so parallel generation is
//! schedule-independent: a cluster's stream depends only on its coordinates,
//! never on how work was divided among threads.

/// SplitMix64 finalizer; a bijection on u64.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, v: u64) -> u64 {
    mix64(h ^ v.wrapping_mul(0xA076_1D64_78BD_642F).wrapping_add(0xE703_7ED1_A0B4_28DB))
}

/// A SplitMix64 stream whose initial state is a hash of its coordinates.
#[derive(Debug, Clone)]
pub struct StreamRng {
    state: u64,
}

impl StreamRng {
    /// Stream keyed by (seed, replication index, lane tag, item index).
    pub fn from_parts(seed: u64, rep: u64, lane: u64, idx: u64) -> Self {
        let mut h = 0x9E37_79B9_7F4A_7C15;
        h = absorb(h, seed);
        h = absorb(h, rep);
        h = absorb(h, lane);
        h = absorb(h, idx);
        StreamRng { state: h }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix64(self.state)
    }

    /// Uniform draw strictly inside (0, 1).
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

impl rand::RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        (StreamRng::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        StreamRng::next_u64(self)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        let mut chunks = dest.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&StreamRng::next_u64(self).to_le_bytes());
        }
        let rest = chunks.into_remainder();
        if !rest.is_empty() {
            let bytes = StreamRng::next_u64(self).to_le_bytes();
            rest.copy_from_slice(&bytes[..rest.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

//! Counter-based flip sampling.
//!
//! Every target (op or neuron) owns 64 bit slots in a global slot space
//! (`slot = index * 64 + bit`). The space is cut into fixed blocks; the flip candidates
//! of a block are drawn by geometric skipping from a ChaCha stream keyed on
//! `(seed, domain, trial, sample, replica, block)`. A slot is a candidate with
//! probability `ber`, independently of every other slot, so whether a given bit of a
//! given op flips depends only on its key and never on what else is in scope.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

/// Bit slots reserved per target.
pub const SLOTS_PER_TARGET: u64 = 64;
const TARGETS_PER_BLOCK: u64 = 1024;
const BLOCK_SLOTS: u64 = TARGETS_PER_BLOCK * SLOTS_PER_TARGET;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Domain {
    Op = 1,
    Neuron = 2,
}

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct StreamKey {
    pub seed: u64,
    pub domain: Domain,
    pub trial: u32,
    pub sample: u32,
    pub replica: u8,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn block_seed(key: &StreamKey, block: u64) -> [u8; 32] {
    let words = [
        key.seed,
        key.domain as u64,
        ((key.trial as u64) << 32) | key.sample as u64,
        key.replica as u64,
        block,
    ];
    let mut h = 0u64;
    for w in words {
        h = splitmix(h ^ w);
    }
    let mut out = [0u8; 32];
    for (i, chunk) in out.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix(h.wrapping_add(i as u64)).to_le_bytes());
    }
    out
}

/// Increasing sequence of candidate slots of one stream.
#[derive(Debug, Clone)]
pub(crate) struct SlotStream {
    key: StreamKey,
    ber: f64,
    gaps: Option<Geometric>,
    block: u64,
    /// Block-relative candidate slots of `block`.
    slots: Vec<u32>,
    cursor: usize,
    /// Targets in `quiet.0..quiet.1` have no candidates and need no cursor movement.
    quiet: (u64, u64),
}

impl SlotStream {
    pub fn new(key: StreamKey, ber: f64) -> Self {
        let gaps = (ber > 0.0).then(|| Geometric::new(ber.min(1.0)).expect("ber in (0, 1]"));
        Self {
            key,
            ber,
            gaps,
            block: u64::MAX,
            slots: Vec::new(),
            cursor: 0,
            quiet: (0, 0),
        }
    }

    fn load(&mut self, block: u64) {
        self.block = block;
        self.cursor = 0;
        self.slots.clear();
        let Some(gaps) = &self.gaps else {
            return;
        };
        if self.ber >= 1.0 {
            self.slots.extend(0..BLOCK_SLOTS as u32);
            return;
        }
        let mut rng = ChaCha8Rng::from_seed(block_seed(&self.key, block));
        let mut pos = 0u64;
        loop {
            pos = pos.saturating_add(gaps.sample(&mut rng));
            if pos >= BLOCK_SLOTS {
                break;
            }
            self.slots.push(pos as u32);
            pos += 1;
        }
    }

    /// Flip mask for the low `width` bits of target `index`.
    ///
    /// A target never straddles a block. Queries with increasing `index` are amortized
    /// O(1); going backwards is allowed but rescans the block.
    #[inline(always)]
    pub fn mask(&mut self, index: u64, width: u32) -> u64 {
        if index >= self.quiet.0 && index < self.quiet.1 {
            return 0;
        }
        self.mask_slow(index, width)
    }

    #[inline(never)]
    fn mask_slow(&mut self, index: u64, width: u32) -> u64 {
        if self.gaps.is_none() {
            self.quiet = (0, u64::MAX);
            return 0;
        }
        let block = index / TARGETS_PER_BLOCK;
        if block != self.block {
            self.load(block);
        }
        let lo = ((index % TARGETS_PER_BLOCK) * SLOTS_PER_TARGET) as u32;
        let hi = lo + SLOTS_PER_TARGET as u32;
        if self.cursor > 0 && self.slots[self.cursor - 1] >= lo {
            self.cursor = 0;
        }
        if self.slots.get(self.cursor).is_some_and(|&s| s < lo) {
            self.cursor += self.slots[self.cursor..].partition_point(|&s| s < lo);
        }
        let mut mask = 0u64;
        while let Some(&s) = self.slots.get(self.cursor) {
            if s >= hi {
                break;
            }
            let bit = s - lo;
            if bit < width {
                mask |= 1 << bit;
            }
            self.cursor += 1;
        }
        let next = self
            .slots
            .get(self.cursor)
            .map_or(TARGETS_PER_BLOCK, |&s| s as u64 / SLOTS_PER_TARGET);
        self.quiet = (index + 1, block * TARGETS_PER_BLOCK + next);
        mask
    }
}

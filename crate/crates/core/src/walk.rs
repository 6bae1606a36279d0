//! Simple random walk on `Z^d` with reproducible seeding and hitting-time
//! races.
//!
//! Hitting times follow `T(Λ) = inf{n ≥ 1 : S(n) ∈ Λ}`: the starting site
//! never counts as a hit.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::{LatticePoint, Region};

/// Identifies the generator recorded in result metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9), seed_from_u64(master_seed), stream = stream_id";

/// Default per-walk step cap.
pub const DEFAULT_STEP_CAP: u64 = 100_000_000;

/// `(master_seed, stream_id)` fully determines a walk realization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Same master seed, another stream.
    pub fn stream(&self, stream_id: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id,
        }
    }

    /// A new master seed derived from this one and `tag`, stream 0. Used to
    /// give sub-experiments (sweep values, per-trial orderings) their own
    /// families of streams.
    pub fn derive(&self, tag: u64) -> Self {
        let m = splitmix64(self.master_seed ^ splitmix64(self.stream_id.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ tag));
        Self {
            master_seed: m,
            stream_id: 0,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WalkState {
    pub position: LatticePoint,
    pub step_count: u64,
}

impl WalkState {
    pub fn at(position: LatticePoint) -> Self {
        Self {
            position,
            step_count: 0,
        }
    }
}

/// Random source for walks. Directions are drawn from buffered random bits
/// (2 bits per step in `d = 2`), with rejection when `2d` is not a power of
/// two.
pub struct Walker {
    rng: ChaCha8Rng,
    bits: u64,
    left: u32,
    nbits: u32,
    ndir: u64,
}

impl Walker {
    pub fn new(seed: SeedSpec, dim: usize) -> Self {
        let ndir = 2 * dim as u64;
        let nbits = 64 - (ndir - 1).leading_zeros();
        Self {
            rng: seed.rng(),
            bits: 0,
            left: 0,
            nbits,
            ndir,
        }
    }

    #[inline]
    pub fn direction(&mut self) -> usize {
        loop {
            if self.left < self.nbits {
                self.bits = self.rng.next_u64();
                self.left = 64;
            }
            let v = self.bits & ((1 << self.nbits) - 1);
            self.bits >>= self.nbits;
            self.left -= self.nbits;
            if v < self.ndir {
                return v as usize;
            }
        }
    }

    /// One nearest-neighbor move, each of the `2d` directions with
    /// probability `1/(2d)`.
    #[inline]
    pub fn step(&mut self, state: &mut WalkState) {
        let dir = self.direction();
        state.position.shift(dir);
        state.step_count += 1;
    }

    /// Uniform variate in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Stand-alone single step: `state` moves to a uniformly chosen nearest
/// neighbor.
pub fn step(state: WalkState, walker: &mut Walker) -> WalkState {
    let mut s = state;
    walker.step(&mut s);
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RaceOutcome {
    AFirst,
    BFirst,
    Cap,
}

/// Which of two regions the walk from `start` enters first (at a time
/// `n ≥ 1`). `target_a` wins when a site lies in both.
pub fn race<A: Region + ?Sized, B: Region + ?Sized>(
    start: LatticePoint,
    target_a: &A,
    target_b: &B,
    seed: SeedSpec,
    step_cap: u64,
) -> RaceOutcome {
    let mut walker = Walker::new(seed, start.dim());
    race_with(&mut walker, start, target_a, target_b, step_cap).0
}

/// [`race`] on a caller-provided walker; also returns the number of steps.
pub fn race_with<A: Region + ?Sized, B: Region + ?Sized>(
    walker: &mut Walker,
    start: LatticePoint,
    target_a: &A,
    target_b: &B,
    step_cap: u64,
) -> (RaceOutcome, u64) {
    let mut p = start;
    for n in 1..=step_cap {
        p.shift(walker.direction());
        if target_a.contains(&p) {
            return (RaceOutcome::AFirst, n);
        }
        if target_b.contains(&p) {
            return (RaceOutcome::BFirst, n);
        }
    }
    (RaceOutcome::Cap, step_cap)
}

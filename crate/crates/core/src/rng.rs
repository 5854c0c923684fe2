//! Seeded, splittable random streams.
//!
//! Every random quantity is drawn from a ChaCha stream identified by a
//! `(seed, domain, index)` triple, so replications and chunks can be
//! generated in any order, on any number of threads, with bit-identical
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Domain tags keep streams used for different purposes apart.
pub mod domain {
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const PROJECTION: u64 = 0x5052_4f4a;
    pub const PANEL: u64 = 0x5041_4e4c;
    pub const REPLICATE: u64 = 0x5245_504c;
    pub const TEST: u64 = 0x5445_5354;
    pub const PERTURB: u64 = 0x5045_5254;
    pub const START: u64 = 0x5354_5254;
    pub const VECTOR: u64 = 0x5645_4354;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed. Used when a seed has to be handed to another
/// seeded operation (for example one seed per replication).
pub fn derive(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(domain)) ^ index)
}

/// The generator for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(derive(0, domain, index));
    rng
}

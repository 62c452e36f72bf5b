//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use way_core::annotate::{annotate_all, AnnotateConfig, PortRegistry};
use way_core::pipeline::{refine_all, represent_all, RepresentConfig};
use way_core::refine::RefineConfig;
use way_core::represent::NestedSequence;
use way_core::synth::{generate, WorldSpec};

/// Nested sequences from a small seeded synthetic world.
pub fn sequences(voyages: usize, seed: u64) -> Vec<NestedSequence> {
    let spec = WorldSpec {
        seed,
        vessels: (voyages / 10).max(1),
        voyages,
        ..WorldSpec::default()
    };
    let data = generate(&spec).expect("valid world");
    let registry = PortRegistry::new(data.world.ports).expect("valid ports");
    let ann = annotate_all(data.messages, &registry, &AnnotateConfig::default());
    let refined = refine_all(&ann.segments, &RefineConfig::default());
    let config = RepresentConfig { seed, ..RepresentConfig::default() };
    represent_all(&refined.segments, &config).expect("represent").sequences
}

/// A straight track with `outliers` points thrown far off it, in the
/// residual space refinement clusters.
pub fn residual_cloud(n: usize, outliers: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let spread = if i < outliers { 5.0 } else { 0.05 };
            [0.0; 3].map(|_| rng.random_range(-spread..spread))
        })
        .collect()
}

/// Destination-like strings of the given length.
pub fn words(count: usize, len: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..len).map(|_| rng.random_range(b'A'..=b'Z') as char).collect())
        .collect()
}

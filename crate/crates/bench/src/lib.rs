//! Shared inputs for the benchmarks.

use keyguide::ckg::{CkgGraph, CkgTriplet};
use keyguide::dataset::Dataset;
use keyguide::synthetic::{planted_corpus, PlantedShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The shipped planted corpus, prepared.
pub fn shipped() -> Dataset {
    planted_corpus(&PlantedShape::shipped(), 0)
        .prepare()
        .expect("shipped corpus prepares")
}

/// Connected random graph with `nodes` nodes and about `degree` edges per node.
pub fn random_graph(nodes: usize, degree: usize, seed: u64) -> CkgGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let name = |i: usize| format!("c{i}");
    let mut triplets = Vec::with_capacity(nodes * degree);
    for i in 1..nodes {
        let j = rng.random_range(0..i);
        triplets.push(CkgTriplet::new(&name(i), "RelatedTo", &name(j), rng.random_range(1.0..=10.0)));
    }
    for _ in 0..nodes * degree.saturating_sub(1) {
        let (a, b) = (rng.random_range(0..nodes), rng.random_range(0..nodes));
        if a != b {
            triplets.push(CkgTriplet::new(&name(a), "IsA", &name(b), rng.random_range(1.0..=10.0)));
        }
    }
    CkgGraph::from_triplets(triplets).expect("non-empty graph")
}

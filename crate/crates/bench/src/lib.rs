//! Shared inputs for the benchmarks in `benches/`.

use repsim::{synthesize, Representation, Synth, SynthFamily, SynthSpec};

/// A correlated pair of `n x k` representations.
pub fn pair(n: usize, k: usize, seed: u64) -> (Representation, Representation) {
    let spec = SynthSpec::new(SynthFamily::Gaussian, n, k, seed).rho(0.7);
    match synthesize(&spec).expect("valid spec") {
        Synth::Pair(a, b) => (a, b),
        Synth::Single(_) => unreachable!("gaussian family yields a pair"),
    }
}

/// `m` noisy copies sharing samples, two per seed.
pub fn collection(m: usize, n: usize, k: usize) -> Vec<Representation> {
    (0..m.div_ceil(2) as u64)
        .flat_map(|seed| {
            let spec =
                SynthSpec::new(SynthFamily::NoisyCopy, n, k, seed).noise(0.3 + 0.1 * seed as f64);
            synthesize(&spec).expect("valid spec").into_vec()
        })
        .take(m)
        .collect()
}

//! Fixtures shared by the kernel benchmarks in `benches/`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trman_core::experiment::{generate_instance, init_tr, init_utr, Instance, InstanceSpec, Mode, SampleSize};
use trman_core::{CompletionProblem, CoreDistribution, Shape, TrCores, TrRank, UtrCore};

/// A cubic order-3 completion instance with uniform rank `r` and `m` samples.
pub fn instance(mode: Mode, n: usize, r: usize, m: usize, seed: u64) -> Instance {
    let spec = InstanceSpec {
        mode,
        shape: Shape::cube(n, 3).expect("valid shape"),
        rank: TrRank::uniform(r, 3).expect("valid rank"),
        samples: SampleSize::Count(m),
        holdout: 0,
        distribution: CoreDistribution::Uniform,
    };
    generate_instance(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid instance")
}

/// A TR problem together with an RMS-matched random starting point.
pub fn tr_fixture(n: usize, r: usize, m: usize, seed: u64) -> (CompletionProblem, TrCores) {
    let inst = instance(Mode::Tr, n, r, m, seed);
    let p = inst.problem(0.0).expect("valid problem");
    let rank = TrRank::uniform(r, 3).expect("valid rank");
    let u0 = init_tr(p.shape(), &rank, &p.samples, &mut ChaCha8Rng::seed_from_u64(seed + 1)).expect("valid init");
    (p, u0)
}

/// A uTR problem together with an RMS-matched random starting point.
pub fn utr_fixture(n: usize, r: usize, m: usize, seed: u64) -> (CompletionProblem, UtrCore) {
    let inst = instance(Mode::Utr, n, r, m, seed);
    let p = inst.problem(0.0).expect("valid problem");
    let c0 = init_utr(r, p.shape(), &p.samples, &mut ChaCha8Rng::seed_from_u64(seed + 1)).expect("valid init");
    (p, c0)
}

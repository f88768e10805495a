//! Seeded random streams.
//!
//! Every stochastic operation in the crate draws from a `ChaCha8Rng` keyed by
//! a 64-bit base seed plus a stream id. Stream ids combine a domain tag with a
//! payload (round index, client index, ...) so that reruns with the same seed
//! reproduce every draw bit-for-bit, while different purposes never share a
//! stream. This is also what makes checkpoint resume exact: streams for round
//! `t` depend only on `(seed, t)`, never on how many draws earlier rounds made.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag baked into the top byte of a stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// UE placement draws.
    UePositions,
    /// Poisson point process draws (count + positions).
    Points,
    /// IID label assignment.
    Labels,
    /// Point-to-sample binding.
    Binding,
    /// Model parameter initialization.
    Init,
    /// k-means seeding.
    Clustering,
    /// Per-round participant selection.
    Selection,
    /// Per-round, per-client minibatch shuffling.
    LocalTrain,
    /// Synthetic dataset generation.
    Synthetic,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::UePositions => 1,
            Domain::Points => 2,
            Domain::Labels => 3,
            Domain::Binding => 4,
            Domain::Init => 5,
            Domain::Clustering => 6,
            Domain::Selection => 7,
            Domain::LocalTrain => 8,
            Domain::Synthetic => 9,
        }
    }
}

/// Stream for a `(seed, domain, payload)` triple.
///
/// Payload layout is up to the caller; [`round_payload`] packs the common
/// `(round, client)` case.
pub fn stream(seed: u64, domain: Domain, payload: u64) -> ChaCha8Rng {
    debug_assert!(payload < (1 << 56), "stream payload must fit in 56 bits");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain.tag() << 56) | payload);
    rng
}

/// Packs `(round, client)` into a stream payload: 32 bits of round, 24 bits
/// of client index.
pub fn round_payload(round: u64, client: u64) -> u64 {
    debug_assert!(round < (1 << 32));
    debug_assert!(client < (1 << 24));
    (round << 24) | client
}

//! Named random streams derived from the master seed. Each concern (audits, returns, every
//! agent's policy) draws from its own ChaCha stream, so consuming one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stream {
    Policy,
    Audit,
    Returns,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Policy => 1,
            Stream::Audit => 2,
            Stream::Returns => 3,
        }
    }
}

/// The generator for `(stream, id)` under `master`. Stream ids are disjoint across concerns.
pub fn stream(master: u64, kind: Stream, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    assert!(id < 1 << 56, "stream id out of range");
    rng.set_stream(kind.tag() << 56 | id);
    rng
}

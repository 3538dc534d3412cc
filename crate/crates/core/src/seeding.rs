use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent rng streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Intent sampling inside the environment.
    Env = 0,
    /// Network initialization, action sampling and minibatch shuffling.
    Agents = 1,
    /// Baseline allocation draws.
    Baseline = 2,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

//! Seed derivation. Every random draw in a run flows from one base seed
//! through labelled streams, so repeated runs are bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream labels keep independent consumers decorrelated without any
/// coordination at call sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SceneGeometry,
    ScannerFrame(u64),
    FieldInit,
    FieldSampling(u64),
    EncoderInit,
    PolicyInit,
    PpoShuffle(u64),
    ActionSample(u64),
    MeshSampling(u64),
    Test(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::SceneGeometry => 0x01 << 56,
            Stream::ScannerFrame(k) => (0x02 << 56) | k,
            Stream::FieldInit => 0x03 << 56,
            Stream::FieldSampling(k) => (0x04 << 56) | k,
            Stream::EncoderInit => 0x05 << 56,
            Stream::PolicyInit => 0x06 << 56,
            Stream::PpoShuffle(k) => (0x07 << 56) | k,
            Stream::ActionSample(k) => (0x08 << 56) | k,
            Stream::MeshSampling(k) => (0x09 << 56) | k,
            Stream::Test(k) => (0x0a << 56) | k,
        }
    }
}

/// Deterministic generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: Stream) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = rng_for(7, Stream::FieldInit).gen();
        let b: u64 = rng_for(7, Stream::FieldInit).gen();
        let c: u64 = rng_for(7, Stream::PolicyInit).gen();
        let d: u64 = rng_for(8, Stream::FieldInit).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn frame_streams_differ() {
        let a: u64 = rng_for(1, Stream::ScannerFrame(0)).gen();
        let b: u64 = rng_for(1, Stream::ScannerFrame(1)).gen();
        assert_ne!(a, b);
    }
}

//! Training-free, memory-aware architecture search for spiking neural networks.
//!
//! Candidates are cells of a fixed 4-node DAG inserted into a small macro
//! skeleton. Each candidate is filtered by an analytical parameter count and
//! scored, untrained, by the log-determinant of summed Hamming kernels over
//! the firing patterns of its LIF layers.
//!
//! Modules, bottom up:
//! - [`arch`]: operations, cells, candidate encoding, layer lists
//! - [`memmodel`]: parameter counts and bit/byte footprints
//! - [`snn`]: spiking forward engine and binary firing codes
//! - [`score`]: Hamming kernels and the log-determinant score
//! - [`search`]: per-cell memory-aware search, random baseline, ablations
//! - [`data`]: CIFAR binaries, mini-batches, synthetic data
//! - [`scenario`], [`config`], [`report`], [`run`]: what the CLI drives

pub mod arch;
pub mod config;
pub mod data;
pub mod memmodel;
pub mod report;
pub mod run;
pub mod scenario;
pub mod score;
pub mod search;
pub mod snn;

pub use arch::{CellArch, MacroConfig, NetworkArch, OpSet, Operation};
pub use memmodel::MemoryBudget;
pub use scenario::Scenario;
pub use score::ScoreResult;
pub use search::{SearchConfig, SearchReport};

/// SplitMix64 finalizer over `a ^ rotated(b)`; used to derive independent,
/// platform-stable seeds from a run seed.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(29) ^ 0x9E37_79B9_7F4A_7C15;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! Exchangeable-pair error bounds and Monte Carlo verification for functional
//! limit theorems of weighted degenerate U-processes, run counts and
//! Erdős-Rényi subgraph counts.
//!
//! Paths are step functions on the grid `{0, 1/n, ..., 1}`. Every random
//! quantity is driven by a [`SimRng`] seeded through [`derive_seed`], so a
//! fixed master seed reproduces results regardless of thread count.

pub mod cli;
pub mod gaussian_limits;
pub mod graph;
pub mod kernels;
pub mod mc_verify;
pub mod path_core;
pub mod runs;
pub mod stein_bounds;
pub mod uprocess;

use rand::SeedableRng;

pub use path_core::StepPath;

/// Generator used by every sampler in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("kernel is not degenerate (max residual {0:e})")]
    NotDegenerate(f64),
    #[error("kernel is not symmetric: {0}")]
    NotSymmetric(String),
    #[error("base measure is not standardized: {0}")]
    NotStandardized(String),
    #[error("covariance is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("zero variance")]
    ZeroVariance,
    #[error("operation too large: {0}")]
    TooLarge(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn labels into stream identifiers.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed of replication `rep` in stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, rep: u64) -> u64 {
    splitmix(splitmix(master ^ splitmix(stream)) ^ rep)
}

pub fn rng_for(master: u64, stream: u64, rep: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, stream, rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn seeds_depend_on_all_inputs() {
        let a = derive_seed(1, 2, 3);
        assert_ne!(a, derive_seed(1, 2, 4));
        assert_ne!(a, derive_seed(1, 3, 3));
        assert_ne!(a, derive_seed(2, 2, 3));
        assert_eq!(a, derive_seed(1, 2, 3));
    }

    #[test]
    fn rng_is_reproducible() {
        let x: u64 = rng_for(7, 0, 0).random();
        let y: u64 = rng_for(7, 0, 0).random();
        assert_eq!(x, y);
    }
}

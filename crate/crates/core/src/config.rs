//! Analysis configuration, recorded verbatim into every report.

use serde::{Deserialize, Serialize};

use crate::diffing::MinHashParams;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    /// Functions with fewer basic blocks are dropped before analysis.
    pub min_blocks: usize,
    /// MinHash signature length.
    pub minhash_k: usize,
    /// Shingle width over the token stream; 1 compares plain token sets.
    pub shingle_w: usize,
    /// Master seed for the hash family; signatures with different seeds are
    /// incomparable.
    pub master_seed: u64,
    /// Candidates retained per query function.
    pub top_n: usize,
    /// Rewrite budget for the expression simplifier.
    pub rule_budget: u32,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            min_blocks: 5,
            minhash_k: 128,
            shingle_w: 1,
            master_seed: 0,
            top_n: 10,
            rule_budget: 1000,
        }
    }
}

impl Config {
    pub fn minhash_params(&self) -> MinHashParams {
        MinHashParams {
            k: self.minhash_k,
            w: self.shingle_w,
            seed: self.master_seed,
        }
    }
}

//! Per-replicate random streams.
//!
//! Replicate `r` of a run with master seed `s` owns two ChaCha8 streams keyed
//! by `(s, 2r)` for policy randomness and `(s, 2r + 1)` for outcome noise.
//! Streams depend only on `(s, r)`, so results do not depend on scheduling or
//! worker count, and changing the policy never perturbs the outcome noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateSeed {
    pub master: u64,
    pub replicate: u64,
}

impl ReplicateSeed {
    pub fn new(master: u64, replicate: u64) -> Self {
        Self { master, replicate }
    }

    /// Stream for allocation randomness: shuffles, tie-breaks, exponential
    /// perturbations, posterior draws and guard coins.
    pub fn policy_rng(&self) -> ChaCha8Rng {
        self.stream(2 * self.replicate)
    }

    /// Stream for patient outcome noise; the `t`-th draw belongs to patient `t`
    /// whichever arm it is allocated to.
    pub fn outcome_rng(&self) -> ChaCha8Rng {
        self.stream(2 * self.replicate + 1)
    }

    fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(id);
        rng
    }
}

//! Deterministic seed derivation.
//!
//! Every stochastic component draws from its own stream derived from one
//! master seed. The derived value is the first eight bytes (little-endian)
//! of
//!
//! ```text
//! SHA-256( "valence-seed/v1" || 0x00 || master (u64 LE) || tag || 0x00
//!          || for each part: len(part) (u64 LE) || part )
//! ```
//!
//! so a stage can be rerun in isolation, and work items can be processed in
//! any order (or in parallel) without changing their random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"valence-seed/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn derive(self, tag: &str) -> Seed {
        self.derive_with(tag, &[])
    }

    pub fn derive_with(self, tag: &str, parts: &[&[u8]]) -> Seed {
        let mut h = Sha256::new();
        h.update(DOMAIN);
        h.update([0u8]);
        h.update(self.0.to_le_bytes());
        h.update(tag.as_bytes());
        h.update([0u8]);
        for part in parts {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        Seed(u64::from_le_bytes(bytes))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

/// Hex SHA-256 of arbitrary bytes, used for cache keys and split digests.
pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Where an output came from. Contains no timestamps so reruns stay byte-identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config_hash(config),
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// SHA-256 of the compact JSON encoding of `config`.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"seed": 7, "iters": 10}));
        let b = config_hash(&serde_json::json!({"seed": 7, "iters": 10}));
        let c = config_hash(&serde_json::json!({"seed": 8, "iters": 10}));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }
}

//! Password and backup-code hashing strategy.

pub const DEFAULT_COST: u32 = 10;

#[derive(Debug, thiserror::Error)]
#[error("hashing failed: {0}")]
pub struct HashError(String);

pub trait PasswordHasher: Send + Sync {
    fn hash(&self, plaintext: &str) -> Result<String, HashError>;
    /// False for a malformed hash as well as for a mismatch.
    fn verify(&self, plaintext: &str, hash: &str) -> bool;
}

#[derive(Debug, Clone, Copy)]
pub struct BcryptHasher {
    cost: u32,
}

impl BcryptHasher {
    pub fn new(cost: u32) -> Self {
        Self {
            cost: cost.clamp(4, 31),
        }
    }
}

impl Default for BcryptHasher {
    fn default() -> Self {
        Self::new(DEFAULT_COST)
    }
}

impl PasswordHasher for BcryptHasher {
    fn hash(&self, plaintext: &str) -> Result<String, HashError> {
        bcrypt::hash(plaintext, self.cost).map_err(|e| HashError(e.to_string()))
    }

    fn verify(&self, plaintext: &str, hash: &str) -> bool {
        bcrypt::verify(plaintext, hash).unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_verifies_and_hides_plaintext() {
        let h = BcryptHasher::new(4);
        let hash = h.hash("Correct-Horse-9").unwrap();
        assert_ne!(hash, "Correct-Horse-9");
        assert!(!hash.contains("Correct-Horse-9"));
        assert!(h.verify("Correct-Horse-9", &hash));
        assert!(!h.verify("correct-horse-9", &hash));
        assert!(!h.verify("anything", "!not-a-hash"));
    }
}

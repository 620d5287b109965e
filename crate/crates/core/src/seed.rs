//! Deterministic per-stage seed derivation.
//!
//! Every stochastic stage of the pipeline draws from its own ChaCha8 stream,
//! seeded by mixing the run's master seed with a stage tag. Runs that share
//! a master seed therefore share upstream stages bit-for-bit, while stages
//! never reuse each other's randomness.

/// Stage tags used by the experiment pipeline.
pub mod stage {
    pub const PROTOTYPES: &str = "prototypes";
    pub const WEB_CORPUS: &str = "web-corpus";
    pub const TARGET_SET: &str = "target-set";
    pub const EVAL_SET: &str = "eval-set";
    pub const TEACHER: &str = "teacher-train";
    pub const PRETRAIN: &str = "student-pretrain";
    pub const HEAD_SWAP: &str = "head-swap";
    pub const FINETUNE: &str = "student-finetune";
    pub const SCRATCH: &str = "student-scratch";
}

/// Mixes a master seed with a stage tag into a stage seed.
///
/// The tag is hashed with 64-bit FNV-1a, xored into the master seed, and the
/// result is finalized with the splitmix64 mixer.
#[must_use]
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    splitmix64(master ^ fnv1a64(stage.as_bytes()))
}

/// 64-bit FNV-1a over `bytes`.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// The splitmix64 output mixer.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

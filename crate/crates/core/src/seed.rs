//! Stage-seed derivation. A single run seed plus a stage name and an index
//! (usually the repetition number) determine every RNG in the pipeline, so
//! one integer reproduces a whole run.

/// FNV-1a over the stage name, the base seed, and the index. The hash is
/// fixed here rather than taken from the standard library so derived seeds
/// never change across compiler or platform versions.
pub fn derive(base: u64, stage: &str, index: u64) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for byte in stage
        .as_bytes()
        .iter()
        .copied()
        .chain(base.to_le_bytes())
        .chain(index.to_le_bytes())
    {
        h ^= byte as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

use sha2::{Digest, Sha256};

/// Deterministic bag-of-words embedding via feature hashing. Used by the
/// scripted backend so relevance scores are meaningful without a model.
/// Never returns the zero vector.
pub fn hashed_embedding(text: &str, dimension: usize) -> Vec<f64> {
    let dimension = dimension.max(2);
    let mut v = vec![0.0; dimension];
    let mut any = false;
    for word in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() > 2)
    {
        let digest = Sha256::digest(word.to_lowercase().as_bytes());
        let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) as usize % dimension;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
        any = true;
    }
    if !any || v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    v
}

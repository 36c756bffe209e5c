//! Vector similarity used for entity merging and retrieval.

use crate::error::{EngineError, Result};

/// Cosine similarity of two equal-dimension, nonzero vectors.
///
/// Symmetric and scale-invariant in each argument; the result lies in
/// [-1, 1] up to rounding.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(EngineError::Similarity(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EngineError::Similarity("zero vector".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Round to 7 significant decimal digits. Embeddings are persisted in
/// this form so that reserialization is idempotent while threshold
/// comparisons stay accurate to well under 1e-6.
pub fn round_7sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.6e}").parse().unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_vectors() {
        assert_abs_diff_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn orthogonal_vectors() {
        assert_abs_diff_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_value() {
        // dot = 24, norms 5 and 5.
        assert_abs_diff_eq!(
            cosine_similarity(&[3.0, 4.0], &[4.0, 3.0]).unwrap(),
            0.96,
            epsilon = 1e-12
        );
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
        assert!(cosine_similarity(&[], &[]).is_err());
    }

    #[test]
    fn zero_vector_is_an_error() {
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rounding_is_idempotent() {
        for x in [0.123456789, -9.87654321e-4, 3.0, 0.0, 1.0 / 3.0] {
            let once = round_7sig(x);
            assert_eq!(once, round_7sig(once));
        }
    }
}

use super::{l2_normalize, EmbedError, EmbeddingProvider, EmbeddingVector, DEFAULT_DIM};

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Character-trigram feature hashing with term-frequency weights.
///
/// Text is lowercased and its whitespace runs collapsed to single spaces.
/// Each overlapping window of three characters is hashed with FNV-1a into
/// one of `dim` buckets; the bucket counts are then L2-normalized. Texts of
/// one or two characters hash as a single gram, and empty text maps to the
/// zero vector.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    /// Bucket index of one gram.
    pub fn bucket(&self, gram: &str) -> usize {
        (fnv1a_64(gram.as_bytes()) % self.dim as u64) as usize
    }

    fn counts(&self, text: &str) -> Vec<f64> {
        let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let chars: Vec<char> = normalized.chars().collect();
        let mut counts = vec![0.0; self.dim];
        if chars.is_empty() {
            return counts;
        }
        if chars.len() < 3 {
            counts[self.bucket(&normalized)] += 1.0;
            return counts;
        }
        let mut gram = String::with_capacity(12);
        for window in chars.windows(3) {
            gram.clear();
            gram.extend(window);
            counts[self.bucket(&gram)] += 1.0;
        }
        counts
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn name(&self) -> &str {
        "trigram-fnv1a"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(l2_normalize(&EmbeddingVector { values: self.counts(text) }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hash reference written against the published FNV-1a definition,
    /// using u128 arithmetic truncated to 64 bits.
    fn reference_fnv(bytes: &[u8]) -> u64 {
        let mut h: u128 = 14695981039346656037;
        for &b in bytes {
            h ^= b as u128;
            h = (h * 1099511628211) % (1u128 << 64);
        }
        h as u64
    }

    #[test]
    fn fnv_matches_reference_vectors() {
        assert_eq!(fnv1a_64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a_64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a_64(b"foobar"), 0x85944171f73967e8);
        for s in ["abc", "åäö", "Stockholm"] {
            assert_eq!(fnv1a_64(s.as_bytes()), reference_fnv(s.as_bytes()));
        }
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let e = HashingEmbedder::default();
        let v = e.embed("").unwrap();
        assert_eq!(v.dim(), 384);
        assert!(v.is_zero());
        assert!(e.embed("  \n ").unwrap().is_zero());
    }

    #[test]
    fn deterministic() {
        let e = HashingEmbedder::default();
        assert_eq!(e.embed("Stockholm").unwrap(), e.embed("Stockholm").unwrap());
    }

    #[test]
    fn abcab_hits_exactly_its_trigram_buckets() {
        let e = HashingEmbedder::default();
        let v = e.embed("abcab").unwrap();
        // brute-force enumeration of all length-3 windows
        let text: Vec<char> = "abcab".chars().collect();
        let mut expected = std::collections::BTreeSet::new();
        for i in 0..=text.len() - 3 {
            let gram: String = text[i..i + 3].iter().collect();
            expected.insert((reference_fnv(gram.as_bytes()) % 384) as usize);
        }
        assert_eq!(expected.len(), 3);
        let nonzero: std::collections::BTreeSet<usize> =
            v.values().iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, _)| i).collect();
        assert_eq!(nonzero, expected);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn case_and_whitespace_insensitive() {
        let e = HashingEmbedder::default();
        assert_eq!(e.embed("Nord  Amerika").unwrap(), e.embed("nord amerika").unwrap());
    }

    #[test]
    fn short_texts_are_nonzero_unit_vectors() {
        let e = HashingEmbedder::default();
        assert!((e.embed("X").unwrap().norm() - 1.0).abs() < 1e-12);
    }
}

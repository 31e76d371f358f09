//! Deterministic in-process stand-ins for the embedding and reranking roles.

use std::collections::BTreeSet;

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::{Embedder, GatewayError, Reranker};
use crate::text::is_cjk_unit;

/// Lowercased alphanumeric words plus single CJK characters.
pub(crate) fn lexical_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if is_cjk_unit(c) && c.is_alphanumeric() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bag-of-tokens embedder: each token contributes a pseudo-random dense vector
/// seeded by the SHA-256 of the token. Identical texts always embed identically.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    model_id: String,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, model_id: format!("hash-embedder-{dimension}") }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0f64; self.dimension];
        let mut tokens = lexical_tokens(text);
        // Keeps empty or symbol-only texts away from the zero vector.
        tokens.push("\u{0}bias".to_string());
        for token in tokens {
            let digest = Sha256::digest(token.as_bytes());
            let mut state = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
            for slot in acc.iter_mut() {
                let r = splitmix64(&mut state);
                *slot += (r >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
            }
        }
        acc.into_iter().map(|x| x as f32).collect()
    }
}

#[async_trait]
impl Embedder for HashEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Token-set cosine between query and document.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalReranker;

impl LexicalReranker {
    pub fn score(query: &str, doc: &str) -> f64 {
        let q: BTreeSet<String> = lexical_tokens(query).into_iter().collect();
        let d: BTreeSet<String> = lexical_tokens(doc).into_iter().collect();
        if q.is_empty() || d.is_empty() {
            return 0.0;
        }
        let shared = q.intersection(&d).count() as f64;
        shared / ((q.len() * d.len()) as f64).sqrt()
    }
}

#[async_trait]
impl Reranker for LexicalReranker {
    async fn rerank_score(&self, query: &str, docs: &[String]) -> Result<Vec<f64>, GatewayError> {
        Ok(docs.iter().map(|d| Self::score(query, d)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_split_words_and_han() {
        assert_eq!(lexical_tokens("Caries, 龋齿 OK"), vec!["caries", "龋", "齿", "ok"]);
    }

    #[tokio::test]
    async fn embedder_is_deterministic() {
        let e = HashEmbedder::new(16);
        let v = e.embed(&["a".to_string(), "a".to_string()]).await.unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0].len(), 16);
        assert!(e.embed_one("").iter().any(|x| *x != 0.0));
    }

    #[test]
    fn lexical_scores() {
        assert!((LexicalReranker::score("caries enamel", "enamel caries") - 1.0).abs() < 1e-12);
        assert_eq!(LexicalReranker::score("caries", "gingivitis"), 0.0);
        assert_eq!(LexicalReranker::score("", "x"), 0.0);
    }
}

//! Fixture builders shared by the benchmarks.

use dentagent_core::gateway::{Embedder, HashEmbedder};
use dentagent_core::rag::{build_index, ChunkingConfig, Paragraph};
use dentagent_core::text::Language;
use dentagent_core::VectorIndex;
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

const WORDS: &[&str] = &[
    "caries",
    "enamel",
    "dentin",
    "pulp",
    "gingiva",
    "periodontal",
    "alveolar",
    "crown",
    "root",
    "canal",
    "apical",
    "lesion",
    "radiograph",
    "fluoride",
    "sealant",
    "plaque",
    "calculus",
    "abscess",
    "molar",
    "incisor",
    "implant",
    "extraction",
    "biopsy",
    "mucosa",
    "restoration",
    "composite",
    "occlusion",
    "bracket",
];

pub fn sentence(rng: &mut StdRng, words: usize) -> String {
    (0..words).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn paragraphs(n: usize, seed: u64) -> Vec<Paragraph> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let words = rng.random_range(8..40);
            Paragraph {
                text: format!("{}.", sentence(&mut rng, words)),
                page: (i / 4 + 1) as u32,
                book_title: format!("Book {}", i % 17),
                language: Language::En,
            }
        })
        .collect()
}

/// An index of `n` one-paragraph chunks embedded with the hash embedder.
pub fn index(n: usize, dimension: usize, seed: u64) -> (VectorIndex, HashEmbedder) {
    let embedder = HashEmbedder::new(dimension);
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    let index = rt.block_on(build_index(&paragraphs(n, seed), &ChunkingConfig::default(), &embedder)).unwrap();
    (index, embedder)
}

pub fn query_vector(embedder: &HashEmbedder, text: &str) -> Vec<f32> {
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    rt.block_on(embedder.embed(&[text.to_string()])).unwrap().remove(0)
}

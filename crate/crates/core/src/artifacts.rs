//! Session-scoped storage for uploaded images and tool-produced files.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct Artifact {
    pub media_type: String,
    pub bytes: Arc<[u8]>,
}

/// Content-addressed store: the id of an artifact is the hex SHA-256 of its bytes.
#[derive(Debug, Default)]
pub struct ArtifactStore {
    items: RwLock<HashMap<String, Artifact>>,
}

impl ArtifactStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&self, bytes: &[u8], media_type: &str) -> String {
        let id = content_id(bytes);
        let mut items = self.items.write().expect("artifact store poisoned");
        items
            .entry(id.clone())
            .or_insert_with(|| Artifact { media_type: media_type.to_string(), bytes: Arc::from(bytes) });
        id
    }

    pub fn get(&self, id: &str) -> Option<Artifact> {
        self.items.read().expect("artifact store poisoned").get(id).cloned()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.items.read().expect("artifact store poisoned").contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.items.read().expect("artifact store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

use std::collections::HashMap;

use uuid::Uuid;

use crate::error::{Error, Result};

/// Maps raw sender labels (names, phone numbers) to opaque IDs for one
/// donation.
///
/// IDs are UUIDv5 values over the donation ID and the order in which a label
/// was first seen, so they carry nothing of the label itself. The table lives
/// only as long as the parse and is never serialized.
pub struct Anonymizer {
    namespace: Uuid,
    ids: HashMap<String, String>,
}

impl Anonymizer {
    pub fn new(donation_id: &str) -> Self {
        Anonymizer {
            namespace: Uuid::new_v5(&Uuid::NAMESPACE_OID, donation_id.as_bytes()),
            ids: HashMap::new(),
        }
    }

    pub fn id_for(&mut self, label: &str) -> Result<String> {
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::EmptySenderLabel);
        }
        if let Some(id) = self.ids.get(label) {
            return Ok(id.clone());
        }
        let ordinal = self.ids.len() as u64;
        let id = Uuid::new_v5(&self.namespace, &ordinal.to_be_bytes()).to_string();
        self.ids.insert(label.to_string(), id.clone());
        Ok(id)
    }

    /// ID of a label already seen, without assigning a new one.
    pub fn lookup(&self, label: &str) -> Option<&str> {
        self.ids.get(label.trim()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl std::fmt::Debug for Anonymizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Anonymizer")
            .field("senders", &self.ids.len())
            .finish_non_exhaustive()
    }
}

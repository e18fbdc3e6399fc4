//! Selection manifests: pretty JSON in a fixed field order followed by a
//! `sha256:<hex>` line covering every byte before it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rank::QuotaRow;
use super::SelectError;
use crate::fsutil::{sha256_hex, write_bytes_atomic};
use crate::scores::RecordId;

pub const ENGINE: &str = concat!("sift ", env!("CARGO_PKG_VERSION"));

const DIGEST_PREFIX: &str = "sha256:";

/// An input file the selection depended on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRef {
    /// What the file was used as, e.g. `scores` or `clusters`.
    pub role: String,
    pub method: String,
    pub digest: String,
    pub provenance: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionManifest {
    pub engine: String,
    pub method: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub seed: Option<u64>,
    pub prng: Option<String>,
    pub corpus_digest: String,
    pub corpus_records: u64,
    pub inputs: Vec<InputRef>,
    pub budget: u64,
    pub shortfall: u64,
    /// Usable candidates that were out of reach, e.g. unscored or
    /// unclustered records.
    pub excluded: u64,
    /// Records a scorer could not score.
    pub degenerate: u64,
    pub quotas: Option<Vec<QuotaRow>>,
    pub selected: Vec<RecordId>,
}

impl SelectionManifest {
    pub fn new(method: impl Into<String>, corpus_digest: impl Into<String>, corpus_records: u64, budget: u64) -> Self {
        SelectionManifest {
            engine: ENGINE.to_string(),
            method: method.into(),
            params: BTreeMap::new(),
            seed: None,
            prng: None,
            corpus_digest: corpus_digest.into(),
            corpus_records,
            inputs: Vec::new(),
            budget,
            shortfall: 0,
            excluded: 0,
            degenerate: 0,
            quotas: None,
            selected: Vec::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn check(&self) -> Result<(), SelectError> {
        let bad = |m: String| Err(SelectError::Manifest(m));
        if self.selected.len() as u64 + self.shortfall != self.budget {
            return bad(format!(
                "{} selected + {} shortfall != budget {}",
                self.selected.len(),
                self.shortfall,
                self.budget
            ));
        }
        let mut seen = BTreeSet::new();
        if let Some(id) = self.selected.iter().find(|id| !seen.insert(**id)) {
            return bad(format!("id {id} selected twice"));
        }
        if let Some(q) = &self.quotas {
            let sum: u64 = q.iter().map(|r| r.quota).sum();
            if sum != self.selected.len() as u64 {
                return bad(format!("quotas sum to {sum}, {} selected", self.selected.len()));
            }
        }
        Ok(())
    }

    /// The canonical text: JSON body plus digest line.
    pub fn render(&self) -> String {
        let mut body = serde_json::to_string_pretty(self).expect("manifest serializes");
        body.push('\n');
        let digest = sha256_hex(body.as_bytes());
        body.push_str(DIGEST_PREFIX);
        body.push_str(&digest);
        body.push('\n');
        body
    }

    /// Digest of the JSON body, as written on the last line.
    pub fn digest(&self) -> String {
        let text = self.render();
        text.trim_end().rsplit_once(DIGEST_PREFIX).unwrap().1.to_string()
    }

    pub fn parse(text: &str) -> Result<Self, SelectError> {
        let bad = |m: &str| SelectError::Manifest(m.to_string());
        let trimmed = text.strip_suffix('\n').ok_or_else(|| bad("missing trailing newline"))?;
        let (body, last) = trimmed.rsplit_once('\n').ok_or_else(|| bad("missing digest line"))?;
        let digest = last.strip_prefix(DIGEST_PREFIX).ok_or_else(|| bad("last line is not a sha256 digest"))?;
        let body = &text[..body.len() + 1];
        if sha256_hex(body.as_bytes()) != digest {
            return Err(bad("digest does not match the manifest body"));
        }
        let m: SelectionManifest =
            serde_json::from_str(body).map_err(|e| SelectError::Manifest(format!("invalid manifest: {e}")))?;
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), SelectError> {
        self.check()?;
        write_bytes_atomic(path, self.render().as_bytes()).map_err(|source| SelectError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SelectError> {
        let text = std::fs::read_to_string(path).map_err(|source| SelectError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SelectionManifest {
        let mut m = SelectionManifest::new("random", "ab".repeat(32), 3, 2).param("budget", 2);
        m.seed = Some(1);
        m.selected = vec![RecordId(1), RecordId(0xfeed)];
        m
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let text = m.render();
        assert!(text.ends_with(&format!("sha256:{}\n", m.digest())));
        assert_eq!(SelectionManifest::parse(&text).unwrap(), m);
        assert_eq!(text, sample().render());
    }

    #[test]
    fn ids_are_hex_strings() {
        assert!(sample().render().contains("\"000000000000feed\""));
    }

    #[test]
    fn tampering_is_detected() {
        let text = sample().render();
        let t = text.replace("000000000000feed", "000000000000beef");
        assert!(SelectionManifest::parse(&t).unwrap_err().to_string().contains("digest"));
        let truncated = &text[..text.len() - 10];
        assert!(SelectionManifest::parse(truncated).is_err());
    }

    #[test]
    fn consistency_checks() {
        let mut m = sample();
        m.selected.push(RecordId(1));
        m.budget = 3;
        assert!(m.check().is_err());
        let mut m = sample();
        m.shortfall = 1;
        assert!(m.check().is_err());
    }
}

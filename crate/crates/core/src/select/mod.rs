//! Final subset construction: quotas, ranking, random baselines, manifests
//! and export.

mod export;
mod manifest;
mod quota;
mod random;
mod rank;

pub use export::{export_subset, sidecar_path, ExportSummary};
pub use manifest::{InputRef, SelectionManifest, ENGINE};
pub use quota::{quota_allocate, QuotaMode};
pub use random::{random_manifest, random_select, Reservoir};
pub use rank::{select_by_length, select_ranked, select_top_by_score, QuotaRow, Selection};

use std::path::PathBuf;

use crate::corpus::CorpusError;
use crate::scores::RecordId;

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("budget {budget} exceeds the {available} records available to the quota")]
    QuotaInfeasible { budget: u64, available: u64 },
    #[error("budget {budget} exceeds the corpus size {available}")]
    BudgetExceedsCorpus { budget: u64, available: u64 },
    #[error("no usable records to select from")]
    EmptyUsableSet,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("manifest id {0} is not in the corpus")]
    MissingRecord(RecordId),
    #[error("corpus digest {found} does not match the manifest's {expected}")]
    CorpusMismatch { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

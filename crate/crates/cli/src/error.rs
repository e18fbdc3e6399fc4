use serde::Serialize;

use sift_core::corpus::CorpusError;
use sift_core::memory::ResourceError;
use sift_core::select::SelectError;

/// Invalid combination of flags or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

#[derive(Serialize)]
pub struct ErrorReport {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    /// Underlying causes, outermost first.
    pub causes: Vec<String>,
}

fn is_resource(e: &(dyn std::error::Error + 'static)) -> bool {
    e.is::<ResourceError>()
        || matches!(e.downcast_ref::<CorpusError>(), Some(CorpusError::Resource(_)))
        || matches!(
            e.downcast_ref::<SelectError>(),
            Some(SelectError::Corpus(CorpusError::Resource(_)))
        )
}

pub fn classify(err: &anyhow::Error) -> ErrorReport {
    let (code, kind) = if err.chain().any(|e| e.is::<UsageError>()) {
        (EXIT_USAGE, "usage")
    } else if err.chain().any(is_resource) {
        (EXIT_RESOURCE, "resource")
    } else {
        (EXIT_DATA, "data")
    };
    ErrorReport {
        code,
        kind,
        message: err.to_string(),
        causes: err.chain().skip(1).map(|e| e.to_string()).collect(),
    }
}

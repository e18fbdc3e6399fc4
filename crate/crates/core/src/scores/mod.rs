//! Score-file types: the only channel through which externally produced
//! model outputs reach the selectors.
//!
//! Every store is validated against its invariants at load time, before any
//! selector runs. Entries are keyed by [`RecordId`] in sorted maps, so a
//! loaded store does not depend on the row order of its file.

pub(crate) mod io;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use crate::corpus::RecordId;
pub use io::{read_header, Encoding, FileKind, Header, MAGIC, VERSION};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("bad header in {path}: {msg}")]
    Header { path: PathBuf, msg: String },
    #[error("{path} holds {found:?} data where {expected:?} was expected")]
    WrongKind {
        path: PathBuf,
        expected: FileKind,
        found: FileKind,
    },
    #[error("{id}: {field} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        id: String,
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("{id}: non-finite value in {field}")]
    NonFinite { id: String, field: String },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("{id}: {msg}")]
    Invariant { id: String, msg: String },
    #[error("{} corpus records have no score (first: {})", missing.len(), preview(missing))]
    Coverage { missing: Vec<RecordId> },
}

fn preview(ids: &[RecordId]) -> String {
    let mut s: Vec<String> = ids.iter().take(5).map(|i| i.to_string()).collect();
    if ids.len() > 5 {
        s.push("...".into());
    }
    s.join(", ")
}

/// Whether larger or smaller scores are preferred when ranking.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    High,
    Low,
}

/// Scalar per-record scores produced by one method.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ScoreTable {
    pub method: String,
    pub direction: Direction,
    pub provenance: Option<String>,
    pub entries: BTreeMap<RecordId, f64>,
    /// Records that could not be scored and are excluded from ranking.
    pub degenerate: Vec<RecordId>,
    /// Records removed by a scoring filter.
    pub filtered: Vec<RecordId>,
    pub params: BTreeMap<String, serde_json::Value>,
}

impl ScoreTable {
    pub fn new(method: impl Into<String>, direction: Direction) -> Self {
        ScoreTable {
            method: method.into(),
            direction,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, id: RecordId, score: f64) -> Result<(), ScoreError> {
        if !score.is_finite() {
            return Err(ScoreError::NonFinite {
                id: id.to_string(),
                field: "score".into(),
            });
        }
        if self.entries.insert(id, score).is_some() {
            return Err(ScoreError::DuplicateId(id.to_string()));
        }
        Ok(())
    }

    pub fn get(&self, id: RecordId) -> Option<f64> {
        self.entries.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-answer-token natural-log probabilities for one record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogProbs {
    /// `log P(x_i | Q, x_<i)`.
    pub conditioned: Vec<f64>,
    /// `log P(x_i | x_<i)`. Only needed by difficulty scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconditioned: Option<Vec<f64>>,
}

impl LogProbs {
    pub fn new(conditioned: Vec<f64>, unconditioned: Vec<f64>) -> Self {
        LogProbs {
            conditioned,
            unconditioned: Some(unconditioned),
        }
    }

    fn validate(&self, id: RecordId) -> Result<(), ScoreError> {
        check_logprobs(id, "conditioned", &self.conditioned)?;
        if let Some(u) = &self.unconditioned {
            check_logprobs(id, "unconditioned", u)?;
            if u.len() != self.conditioned.len() {
                return Err(ScoreError::DimensionMismatch {
                    id: id.to_string(),
                    field: "unconditioned".into(),
                    expected: self.conditioned.len(),
                    found: u.len(),
                });
            }
        }
        Ok(())
    }
}

fn check_logprobs(id: RecordId, field: &str, v: &[f64]) -> Result<(), ScoreError> {
    if v.is_empty() {
        return Err(ScoreError::Invariant {
            id: id.to_string(),
            msg: format!("{field} is empty"),
        });
    }
    for &x in v {
        if !x.is_finite() {
            return Err(ScoreError::NonFinite {
                id: id.to_string(),
                field: field.into(),
            });
        }
        if x > 0.0 {
            return Err(ScoreError::Invariant {
                id: id.to_string(),
                msg: format!("{field} contains positive log-probability {x}"),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogProbStore {
    pub method: String,
    pub provenance: Option<String>,
    pub entries: BTreeMap<RecordId, LogProbs>,
}

impl LogProbStore {
    pub fn insert(&mut self, id: RecordId, lp: LogProbs) -> Result<(), ScoreError> {
        lp.validate(id)?;
        if self.entries.insert(id, lp).is_some() {
            return Err(ScoreError::DuplicateId(id.to_string()));
        }
        Ok(())
    }

    pub fn get(&self, id: RecordId) -> Option<&LogProbs> {
        self.entries.get(&id)
    }
}

/// How the raw values of a rating probe are to be read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeValues {
    /// Raw score-token probabilities; softmax is applied once.
    #[default]
    Probabilities,
    /// Raw score-token logits; softmax is applied once.
    Logits,
    /// Values are already softmax-normalized; no softmax is applied.
    Softmaxed,
}

impl ProbeValues {
    pub fn needs_softmax(self) -> bool {
        !matches!(self, ProbeValues::Softmaxed)
    }
}

impl FromStr for ProbeValues {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "probabilities" => Ok(ProbeValues::Probabilities),
            "logits" => Ok(ProbeValues::Logits),
            "softmaxed" => Ok(ProbeValues::Softmaxed),
            other => Err(format!("unknown probe value kind {other:?}")),
        }
    }
}

/// Score-token probabilities under each of `k_prompts` rating prompts, for
/// one rating model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RatingProbe {
    pub method: String,
    pub provenance: Option<String>,
    pub model: Option<String>,
    /// Parameter count of the rating model, used as its aggregation weight.
    pub beta: Option<f64>,
    pub k_prompts: usize,
    pub k_scores: usize,
    pub values: ProbeValues,
    /// Row-major `k_prompts × k_scores` matrices.
    pub entries: BTreeMap<RecordId, Vec<f64>>,
}

impl RatingProbe {
    pub fn new(k_prompts: usize, k_scores: usize, values: ProbeValues) -> Self {
        RatingProbe {
            method: "selectit".into(),
            k_prompts,
            k_scores,
            values,
            ..Default::default()
        }
    }

    pub fn check_shape(&self) -> Result<(), String> {
        if self.k_scores < 2 {
            return Err(format!("k_scores must be at least 2, got {}", self.k_scores));
        }
        if self.k_prompts < 1 {
            return Err("k_prompts must be at least 1".into());
        }
        if let Some(b) = self.beta {
            if !(b.is_finite() && b > 0.0) {
                return Err(format!("beta must be positive, got {b}"));
            }
        }
        Ok(())
    }

    pub fn insert(&mut self, id: RecordId, matrix: Vec<f64>) -> Result<(), ScoreError> {
        let expected = self.k_prompts * self.k_scores;
        if matrix.len() != expected {
            return Err(ScoreError::DimensionMismatch {
                id: id.to_string(),
                field: "probs".into(),
                expected,
                found: matrix.len(),
            });
        }
        for &p in &matrix {
            if !p.is_finite() {
                return Err(ScoreError::NonFinite {
                    id: id.to_string(),
                    field: "probs".into(),
                });
            }
            if self.values != ProbeValues::Logits && !(0.0..=1.0).contains(&p) {
                return Err(ScoreError::Invariant {
                    id: id.to_string(),
                    msg: format!("probability {p} outside [0, 1]"),
                });
            }
        }
        if self.entries.insert(id, matrix).is_some() {
            return Err(ScoreError::DuplicateId(id.to_string()));
        }
        Ok(())
    }

    /// Rows of one record's matrix, one per rating prompt.
    pub fn rows(&self, id: RecordId) -> Option<std::slice::Chunks<'_, f64>> {
        self.entries.get(&id).map(|m| m.chunks(self.k_scores))
    }
}

/// Projected per-checkpoint gradient features of training records and
/// averaged gradients of validation sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientFeatureStore {
    pub method: String,
    pub provenance: Option<String>,
    pub dim: usize,
    /// One learning rate per checkpoint.
    pub learning_rates: Vec<f64>,
    /// `checkpoints × dim` row-major per record.
    pub records: BTreeMap<RecordId, Vec<f32>>,
    /// `checkpoints × dim` row-major per validation set.
    pub validation: BTreeMap<String, Vec<f32>>,
}

impl GradientFeatureStore {
    pub fn new(dim: usize, learning_rates: Vec<f64>) -> Self {
        GradientFeatureStore {
            method: "less".into(),
            dim,
            learning_rates,
            ..Default::default()
        }
    }

    pub fn checkpoints(&self) -> usize {
        self.learning_rates.len()
    }

    pub fn check_shape(&self) -> Result<(), String> {
        if self.dim == 0 {
            return Err("dim must be positive".into());
        }
        if self.learning_rates.is_empty() {
            return Err("at least one checkpoint is required".into());
        }
        for &lr in &self.learning_rates {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(format!("learning rate must be positive, got {lr}"));
            }
        }
        Ok(())
    }

    fn check_vec(&self, name: &str, v: &[f32]) -> Result<(), ScoreError> {
        let expected = self.dim * self.checkpoints();
        if v.len() != expected {
            return Err(ScoreError::DimensionMismatch {
                id: name.to_string(),
                field: "grads".into(),
                expected,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ScoreError::NonFinite {
                id: name.to_string(),
                field: "grads".into(),
            });
        }
        Ok(())
    }

    pub fn insert_record(&mut self, id: RecordId, grads: Vec<f32>) -> Result<(), ScoreError> {
        self.check_vec(&id.to_string(), &grads)?;
        if self.records.insert(id, grads).is_some() {
            return Err(ScoreError::DuplicateId(id.to_string()));
        }
        Ok(())
    }

    pub fn insert_validation(&mut self, name: &str, grads: Vec<f32>) -> Result<(), ScoreError> {
        self.check_vec(name, &grads)?;
        if self.validation.insert(name.to_string(), grads).is_some() {
            return Err(ScoreError::DuplicateId(name.to_string()));
        }
        Ok(())
    }

    pub fn record_checkpoint(&self, id: RecordId, checkpoint: usize) -> Option<&[f32]> {
        let v = self.records.get(&id)?;
        v.get(checkpoint * self.dim..(checkpoint + 1) * self.dim)
    }
}

/// Record embeddings, stored row-major and sorted by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingMatrix {
    pub method: String,
    pub provenance: Option<String>,
    pub dim: usize,
    ids: Vec<RecordId>,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from rows in any order.
    pub fn from_rows<I>(dim: usize, rows: I) -> Result<Self, ScoreError>
    where
        I: IntoIterator<Item = (RecordId, Vec<f32>)>,
    {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (id, v) in rows {
            check_embedding_row(id, dim, &v)?;
            ids.push(id);
            data.extend_from_slice(&v);
        }
        Self::from_parts(dim, ids, data)
    }

    pub(crate) fn from_parts(
        dim: usize,
        ids: Vec<RecordId>,
        data: Vec<f32>,
    ) -> Result<Self, ScoreError> {
        if dim == 0 {
            return Err(ScoreError::Invariant {
                id: "<header>".into(),
                msg: "embedding dim must be positive".into(),
            });
        }
        debug_assert_eq!(ids.len() * dim, data.len());
        let sorted = ids.windows(2).all(|w| w[0] < w[1]);
        let (ids, data) = if sorted {
            (ids, data)
        } else {
            let mut order: Vec<usize> = (0..ids.len()).collect();
            order.sort_by_key(|&i| ids[i]);
            if let Some(w) = order.windows(2).find(|w| ids[w[0]] == ids[w[1]]) {
                return Err(ScoreError::DuplicateId(ids[w[0]].to_string()));
            }
            let mut sorted_data = Vec::with_capacity(data.len());
            for &i in &order {
                sorted_data.extend_from_slice(&data[i * dim..(i + 1) * dim]);
            }
            (order.iter().map(|&i| ids[i]).collect(), sorted_data)
        };
        Ok(EmbeddingMatrix {
            method: "embeddings".into(),
            provenance: None,
            dim,
            ids,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[RecordId] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn index_of(&self, id: RecordId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn get(&self, id: RecordId) -> Option<&[f32]> {
        self.index_of(id).map(|i| self.row(i))
    }

    pub fn contains(&self, id: RecordId) -> bool {
        self.index_of(id).is_some()
    }

    /// Restricts the matrix to the given ids, keeping sorted order.
    pub fn subset(&self, keep: impl Fn(RecordId) -> bool) -> Self {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (i, &id) in self.ids.iter().enumerate() {
            if keep(id) {
                ids.push(id);
                data.extend_from_slice(self.row(i));
            }
        }
        EmbeddingMatrix {
            method: self.method.clone(),
            provenance: self.provenance.clone(),
            dim: self.dim,
            ids,
            data,
        }
    }
}

fn check_embedding_row(id: RecordId, dim: usize, v: &[f32]) -> Result<(), ScoreError> {
    if v.len() != dim {
        return Err(ScoreError::DimensionMismatch {
            id: id.to_string(),
            field: "vector".into(),
            expected: dim,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ScoreError::NonFinite {
            id: id.to_string(),
            field: "vector".into(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoveragePolicy {
    #[default]
    Strict,
    AllowMissing,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoverageReport {
    /// Corpus records without a score, in corpus order.
    pub missing: Vec<RecordId>,
    /// Corpus records that have a score.
    pub usable: usize,
}

/// Checks that every corpus record is covered by a store.
pub fn validate_coverage<F>(
    has_score: F,
    corpus_ids: &[RecordId],
    policy: CoveragePolicy,
) -> Result<CoverageReport, ScoreError>
where
    F: Fn(RecordId) -> bool,
{
    let missing: Vec<RecordId> = corpus_ids.iter().copied().filter(|&id| !has_score(id)).collect();
    if policy == CoveragePolicy::Strict && !missing.is_empty() {
        return Err(ScoreError::Coverage { missing });
    }
    Ok(CoverageReport {
        usable: corpus_ids.len() - missing.len(),
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: RecordId = RecordId(0xa);
    const B: RecordId = RecordId(0xb);
    const C: RecordId = RecordId(0xc);

    #[test]
    fn coverage_policies() {
        let store = [A, B, C];
        let r = validate_coverage(|id| store.contains(&id), &[A, B, C], CoveragePolicy::Strict).unwrap();
        assert!(r.missing.is_empty());
        assert_eq!(r.usable, 3);

        let store = [A, B];
        let err = validate_coverage(|id| store.contains(&id), &[A, B, C], CoveragePolicy::Strict)
            .unwrap_err();
        match err {
            ScoreError::Coverage { missing } => assert_eq!(missing, vec![C]),
            e => panic!("unexpected {e}"),
        }
        let r = validate_coverage(|id| store.contains(&id), &[A, B, C], CoveragePolicy::AllowMissing)
            .unwrap();
        assert_eq!(r.missing, vec![C]);
        assert_eq!(r.usable, 2);
    }

    #[test]
    fn logprob_invariants() {
        let mut s = LogProbStore::default();
        s.insert(A, LogProbs::new(vec![-1.0], vec![-2.0])).unwrap();
        assert_eq!(s.get(A).unwrap().conditioned.len(), 1);
        let err = s
            .insert(B, LogProbs::new(vec![-1.0, -1.0, -1.0], vec![-2.0, -2.0]))
            .unwrap_err();
        assert!(err.to_string().contains(&B.to_string()));
        assert!(s.insert(C, LogProbs::new(vec![0.5], vec![-1.0])).is_err());
        assert!(s.insert(C, LogProbs::new(vec![f64::NAN], vec![-1.0])).is_err());
        assert!(matches!(
            s.insert(A, LogProbs::new(vec![-1.0], vec![-1.0])),
            Err(ScoreError::DuplicateId(_))
        ));
    }

    #[test]
    fn embedding_rows_are_sorted_and_checked() {
        let m = EmbeddingMatrix::from_rows(2, vec![(C, vec![3.0, 3.0]), (A, vec![1.0, 1.0])]).unwrap();
        assert_eq!(m.ids(), &[A, C]);
        assert_eq!(m.get(C).unwrap(), &[3.0, 3.0]);
        let err = EmbeddingMatrix::from_rows(2, vec![(A, vec![1.0, 1.0]), (B, vec![1.0])]).unwrap_err();
        assert!(matches!(err, ScoreError::DimensionMismatch { found: 1, .. }));
        let err =
            EmbeddingMatrix::from_rows(1, vec![(B, vec![1.0]), (A, vec![1.0]), (B, vec![2.0])]).unwrap_err();
        assert!(matches!(err, ScoreError::DuplicateId(_)));
        assert!(EmbeddingMatrix::from_rows(1, vec![(A, vec![f32::INFINITY])]).is_err());
    }

    #[test]
    fn probe_invariants() {
        let mut p = RatingProbe::new(1, 3, ProbeValues::Probabilities);
        p.insert(A, vec![0.2, 0.3, 0.5]).unwrap();
        assert!(p.insert(B, vec![0.2, 0.3]).is_err());
        assert!(p.insert(B, vec![0.2, 0.3, 1.5]).is_err());
        let mut logits = RatingProbe::new(1, 3, ProbeValues::Logits);
        logits.insert(B, vec![-3.0, 0.3, 4.5]).unwrap();
        assert!(RatingProbe::new(1, 1, ProbeValues::Logits).check_shape().is_err());
    }

    #[test]
    fn gradient_invariants() {
        let mut g = GradientFeatureStore::new(2, vec![0.1, 0.2]);
        g.check_shape().unwrap();
        g.insert_record(A, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(g.record_checkpoint(A, 1).unwrap(), &[0.0, 1.0]);
        assert!(g.insert_record(B, vec![1.0, 0.0]).is_err());
        assert!(g.insert_validation("v", vec![1.0, 0.0, f32::NAN, 1.0]).is_err());
        assert!(GradientFeatureStore::new(2, vec![0.0]).check_shape().is_err());
        assert!(GradientFeatureStore::new(2, vec![]).check_shape().is_err());
    }
}

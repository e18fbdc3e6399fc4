//! Per-record quality scorers.
//!
//! Each scorer is a pure function of immutable score-store data. Scoring a
//! whole corpus fans out over records and collects the results into a
//! [`ScoreTable`]; records whose inputs make a score undefined (all-zero
//! log-probabilities, zero-norm gradients) are listed as degenerate and left
//! out of the table instead of receiving a sentinel value.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::par;
use crate::scores::{
    Direction, GradientFeatureStore, LogProbStore, ProbeValues, RatingProbe, RecordId, ScoreTable,
};

/// Default dispersion penalty of the sentence-level aggregate.
pub const DEFAULT_ALPHA: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityMethod {
    Ifd,
    SelectitToken,
    SelectitSent,
    SelectitModel,
    Entropy,
    Less,
}

impl QualityMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            QualityMethod::Ifd => "ifd",
            QualityMethod::SelectitToken => "selectit_token",
            QualityMethod::SelectitSent => "selectit_sent",
            QualityMethod::SelectitModel => "selectit_model",
            QualityMethod::Entropy => "entropy",
            QualityMethod::Less => "less",
        }
    }

    /// Every quality method ranks high scores first.
    pub fn direction(self) -> Direction {
        Direction::High
    }
}

impl fmt::Display for QualityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ifd" => QualityMethod::Ifd,
            "selectit_token" => QualityMethod::SelectitToken,
            "selectit_sent" | "selectit" => QualityMethod::SelectitSent,
            "selectit_model" => QualityMethod::SelectitModel,
            "entropy" => QualityMethod::Entropy,
            "less" => QualityMethod::Less,
            other => return Err(format!("unknown quality method {other:?}")),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityScore {
    pub method: QualityMethod,
    pub value: f64,
    /// Method-specific diagnostics.
    pub aux: BTreeMap<String, f64>,
}

impl QualityScore {
    fn new(method: QualityMethod, value: f64) -> Self {
        QualityScore {
            method,
            value,
            aux: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, v: f64) -> Self {
        self.aux.insert(key.to_string(), v);
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QualityError {
    #[error("conditioned length {conditioned} differs from unconditioned length {unconditioned}")]
    LengthMismatch {
        conditioned: usize,
        unconditioned: usize,
    },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("degenerate record: {0}")]
    Degenerate(String),
    #[error("record {0} is missing from the score store")]
    Missing(RecordId),
    #[error("record {id}: {source}")]
    Record {
        id: RecordId,
        #[source]
        source: Box<QualityError>,
    },
}

impl QualityError {
    pub fn is_degenerate(&self) -> bool {
        match self {
            QualityError::Degenerate(_) => true,
            QualityError::Record { source, .. } => source.is_degenerate(),
            _ => false,
        }
    }
}

fn check_logprobs(name: &'static str, v: &[f64]) -> Result<(), QualityError> {
    if v.is_empty() {
        return Err(QualityError::Empty(name));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite() || **x > 0.0) {
        return Err(QualityError::Invalid(format!(
            "{name} log-probability {x} is not a finite value <= 0"
        )));
    }
    Ok(())
}

fn mean_nll(v: &[f64]) -> f64 {
    -v.iter().sum::<f64>() / v.len() as f64
}

/// Instruction-following difficulty: the mean answer negative
/// log-likelihood given the instruction divided by the mean negative
/// log-likelihood of the answer alone.
pub fn ifd_score(conditioned: &[f64], unconditioned: &[f64]) -> Result<QualityScore, QualityError> {
    if conditioned.len() != unconditioned.len() {
        return Err(QualityError::LengthMismatch {
            conditioned: conditioned.len(),
            unconditioned: unconditioned.len(),
        });
    }
    check_logprobs("conditioned", conditioned)?;
    check_logprobs("unconditioned", unconditioned)?;
    let s_aq = mean_nll(conditioned);
    let s_a = mean_nll(unconditioned);
    if s_a == 0.0 {
        return Err(QualityError::Degenerate(
            "unconditioned log-probabilities are all zero".into(),
        ));
    }
    if s_aq == 0.0 {
        return Err(QualityError::Degenerate(
            "conditioned log-probabilities are all zero".into(),
        ));
    }
    Ok(QualityScore::new(QualityMethod::Ifd, s_aq / s_a)
        .with("s_a_given_q", s_aq)
        .with("s_a", s_a))
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Token-level self-rating: the most probable score token (1-based, lowest
/// on ties) scaled by its mean absolute gap to the other score tokens.
/// Softmax is applied once unless the values are already normalized.
pub fn selectit_token(probe_row: &[f64], values: ProbeValues) -> Result<QualityScore, QualityError> {
    let k = probe_row.len();
    if k < 2 {
        return Err(QualityError::Invalid(format!(
            "need at least 2 score tokens, got {k}"
        )));
    }
    if probe_row.iter().any(|x| !x.is_finite()) {
        return Err(QualityError::Invalid("non-finite rating value".into()));
    }
    let p = if values.needs_softmax() {
        softmax(probe_row)
    } else {
        probe_row.to_vec()
    };
    let mut best = 0;
    for (i, &x) in p.iter().enumerate().skip(1) {
        if x > p[best] {
            best = i;
        }
    }
    let p_base = p[best];
    let disparity = p.iter().map(|x| (x - p_base).abs()).sum::<f64>() / (k - 1) as f64;
    let e_base = (best + 1) as f64;
    Ok(QualityScore::new(QualityMethod::SelectitToken, e_base * disparity)
        .with("e_base", e_base)
        .with("disparity", disparity)
        .with("p_base", p_base))
}

/// Sentence-level aggregate over rating prompts: mean divided by
/// `1 + alpha * std`, with the population standard deviation.
pub fn selectit_sentence(token_scores: &[f64], alpha: f64) -> Result<QualityScore, QualityError> {
    if token_scores.is_empty() {
        return Err(QualityError::Empty("token scores"));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(QualityError::Invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    if token_scores.iter().any(|x| !x.is_finite()) {
        return Err(QualityError::Invalid("non-finite token score".into()));
    }
    let n = token_scores.len() as f64;
    let avg = token_scores.iter().sum::<f64>() / n;
    let var = token_scores.iter().map(|x| (x - avg) * (x - avg)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(QualityScore::new(QualityMethod::SelectitSent, avg / (1.0 + alpha * std))
        .with("avg", avg)
        .with("std_population", std)
        .with("alpha", alpha))
}

/// Model-level aggregate: sentence scores weighted by each rating model's
/// share of the total parameter count.
pub fn selectit_model(sent_scores: &[f64], betas: &[f64]) -> Result<QualityScore, QualityError> {
    if sent_scores.len() != betas.len() {
        return Err(QualityError::Invalid(format!(
            "{} sentence scores but {} betas",
            sent_scores.len(),
            betas.len()
        )));
    }
    if sent_scores.is_empty() {
        return Err(QualityError::Empty("sentence scores"));
    }
    if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
        return Err(QualityError::Invalid(format!("beta must be positive, got {b}")));
    }
    let total: f64 = betas.iter().sum();
    let value = sent_scores
        .iter()
        .zip(betas)
        .map(|(s, b)| b / total * s)
        .sum();
    Ok(QualityScore::new(QualityMethod::SelectitModel, value).with("beta_total", total))
}

/// Total information content of the response in bits.
pub fn entropy_score(conditioned: &[f64]) -> Result<QualityScore, QualityError> {
    check_logprobs("conditioned", conditioned)?;
    let nats = -conditioned.iter().sum::<f64>();
    Ok(QualityScore::new(QualityMethod::Entropy, nats / std::f64::consts::LN_2)
        .with("tokens", conditioned.len() as f64))
}

fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (na.sqrt() * nb.sqrt()))
}

/// Gradient-similarity influence: for each validation set, the
/// learning-rate-weighted sum over checkpoints of the cosine between the
/// validation gradient and the record's gradient; the score is the maximum
/// over validation sets.
pub fn less_influence(features: &GradientFeatureStore, id: RecordId) -> Result<QualityScore, QualityError> {
    if !features.records.contains_key(&id) {
        return Err(QualityError::Missing(id));
    }
    if features.validation.is_empty() {
        return Err(QualityError::Invalid("no validation sets".into()));
    }
    let d = features.dim;
    let mut per_set = BTreeMap::new();
    let mut best = f64::NEG_INFINITY;
    for (name, val) in &features.validation {
        let mut inf = 0.0;
        for (ckpt, &lr) in features.learning_rates.iter().enumerate() {
            let train = features
                .record_checkpoint(id, ckpt)
                .ok_or_else(|| QualityError::Invalid(format!("missing checkpoint {ckpt}")))?;
            let v = val
                .get(ckpt * d..(ckpt + 1) * d)
                .ok_or_else(|| QualityError::Invalid(format!("validation set {name} missing checkpoint {ckpt}")))?;
            let cos = cosine(v, train).ok_or_else(|| {
                QualityError::Degenerate(format!(
                    "zero-norm gradient at checkpoint {ckpt} (validation set {name})"
                ))
            })?;
            inf += lr * cos;
        }
        best = best.max(inf);
        per_set.insert(format!("inf:{name}"), inf);
    }
    Ok(QualityScore {
        method: QualityMethod::Less,
        value: best,
        aux: per_set,
    })
}

/// Sentence-level score of one record under one rating model.
pub fn selectit_record(
    probe: &RatingProbe,
    id: RecordId,
    alpha: f64,
) -> Result<QualityScore, QualityError> {
    let rows = probe.rows(id).ok_or(QualityError::Missing(id))?;
    let tokens = rows
        .map(|row| selectit_token(row, probe.values).map(|s| s.value))
        .collect::<Result<Vec<_>, _>>()?;
    selectit_sentence(&tokens, alpha)
}

/// Scoring parameters beyond the store contents.
#[derive(Clone, Debug)]
pub struct ScoringOptions {
    pub alpha: f64,
    /// Explicit model weights; defaults to each probe's header beta.
    pub betas: Option<Vec<f64>>,
    /// Exclude records whose difficulty score is at least 1.
    pub drop_ifd_ge_1: bool,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions {
            alpha: DEFAULT_ALPHA,
            betas: None,
            drop_ifd_ge_1: false,
        }
    }
}

/// Runs `score` over `ids` in parallel and assembles the table. Degenerate
/// records are collected; any other failure aborts with the lowest failing
/// id.
pub fn build_table<F>(
    method: QualityMethod,
    ids: &[RecordId],
    score: F,
) -> Result<ScoreTable, QualityError>
where
    F: Fn(RecordId) -> Result<QualityScore, QualityError> + Sync + Send,
{
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let results = par::map(&ids, |&id| score(id));
    let mut table = ScoreTable::new(method.as_str(), method.direction());
    for (id, r) in ids.into_iter().zip(results) {
        match r {
            Ok(s) => {
                table.entries.insert(id, s.value);
            }
            Err(e) if e.is_degenerate() => table.degenerate.push(id),
            Err(e) => {
                return Err(QualityError::Record {
                    id,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(table)
}

pub fn score_ifd(
    store: &LogProbStore,
    ids: &[RecordId],
    opts: &ScoringOptions,
) -> Result<ScoreTable, QualityError> {
    let mut table = build_table(QualityMethod::Ifd, ids, |id| {
        let lp = store.get(id).ok_or(QualityError::Missing(id))?;
        let uncond = lp
            .unconditioned
            .as_deref()
            .ok_or_else(|| QualityError::Invalid("unconditioned log-probabilities are required".into()))?;
        ifd_score(&lp.conditioned, uncond)
    })?;
    if opts.drop_ifd_ge_1 {
        let dropped: Vec<RecordId> = table
            .entries
            .iter()
            .filter(|(_, &v)| v >= 1.0)
            .map(|(&id, _)| id)
            .collect();
        for id in &dropped {
            table.entries.remove(id);
        }
        table.filtered = dropped;
    }
    table
        .params
        .insert("drop_ifd_ge_1".into(), opts.drop_ifd_ge_1.into());
    table.provenance = store.provenance.clone();
    Ok(table)
}

pub fn score_entropy(store: &LogProbStore, ids: &[RecordId]) -> Result<ScoreTable, QualityError> {
    let mut table = build_table(QualityMethod::Entropy, ids, |id| {
        let lp = store.get(id).ok_or(QualityError::Missing(id))?;
        entropy_score(&lp.conditioned)
    })?;
    table.params.insert("unit".into(), "bits".into());
    table.provenance = store.provenance.clone();
    Ok(table)
}

/// One probe set gives the sentence-level score; several give the
/// model-level score weighted by `betas`.
pub fn score_selectit(
    probes: &[RatingProbe],
    ids: &[RecordId],
    opts: &ScoringOptions,
) -> Result<ScoreTable, QualityError> {
    if probes.is_empty() {
        return Err(QualityError::Empty("rating probe files"));
    }
    let alpha = opts.alpha;
    let mut table = if probes.len() == 1 {
        build_table(QualityMethod::SelectitSent, ids, |id| {
            selectit_record(&probes[0], id, alpha)
        })?
    } else {
        let betas = match &opts.betas {
            Some(b) => b.clone(),
            None => probes
                .iter()
                .map(|p| {
                    p.beta.ok_or_else(|| {
                        QualityError::Invalid(
                            "model-level scoring needs --betas or a beta in every probe header".into(),
                        )
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        if betas.len() != probes.len() {
            return Err(QualityError::Invalid(format!(
                "{} probe files but {} betas",
                probes.len(),
                betas.len()
            )));
        }
        let mut t = build_table(QualityMethod::SelectitModel, ids, |id| {
            let sent = probes
                .iter()
                .map(|p| selectit_record(p, id, alpha).map(|s| s.value))
                .collect::<Result<Vec<_>, _>>()?;
            selectit_model(&sent, &betas)
        })?;
        t.params.insert("betas".into(), betas.into());
        t
    };
    table.params.insert("alpha".into(), alpha.into());
    table.params.insert("std".into(), "population".into());
    table.provenance = probes
        .iter()
        .filter_map(|p| p.provenance.clone().or_else(|| p.model.clone()))
        .reduce(|a, b| format!("{a}; {b}"));
    Ok(table)
}

pub fn score_less(features: &GradientFeatureStore, ids: &[RecordId]) -> Result<ScoreTable, QualityError> {
    let mut table = build_table(QualityMethod::Less, ids, |id| less_influence(features, id))?;
    table
        .params
        .insert("learning_rates".into(), features.learning_rates.clone().into());
    table.params.insert(
        "val_sets".into(),
        features.validation.keys().cloned().collect::<Vec<_>>().into(),
    );
    table.provenance = features.provenance.clone();
    Ok(table)
}

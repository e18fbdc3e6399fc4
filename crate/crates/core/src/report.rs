//! Subset statistics for one or more manifests, compared against a random
//! baseline over the same corpus.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::corpus::{
    median_of_counts, token_count, CorpusError, CorpusFormat, CorpusReader, IngestOptions, LengthScope, TokenCounter,
};
use crate::diversity::{ClusterAssignment, Compressor};
use crate::scores::RecordId;
use crate::select::SelectionManifest;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("manifest {label:?} was built from corpus {manifest}, not {corpus}")]
    CorpusMismatch {
        label: String,
        manifest: String,
        corpus: String,
    },
    #[error("manifest {label:?} selects {id}, which is not in the corpus")]
    MissingRecord { label: String, id: RecordId },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug)]
pub struct ReportOptions {
    pub format: CorpusFormat,
    pub counter: TokenCounter,
    pub scope: LengthScope,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubsetSummary {
    pub label: String,
    pub method: String,
    pub count: u64,
    pub mean_tokens: f64,
    pub median_tokens: f64,
    pub min_tokens: u64,
    pub max_tokens: u64,
    pub per_source: BTreeMap<String, u64>,
    /// Fraction of the corpus's sources present in the subset.
    pub source_coverage: f64,
    /// Fraction of clusters with at least one selected record.
    pub cluster_coverage: Option<f64>,
    /// Compression ratio of the selected records' canonical bytes, joined in
    /// manifest order.
    pub compression_ratio: f64,
}

/// Method minus baseline.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Deltas {
    pub mean_tokens: f64,
    pub median_tokens: f64,
    pub source_coverage: f64,
    pub cluster_coverage: Option<f64>,
    pub compression_ratio: f64,
    /// Change in each source's share of the subset.
    pub source_share: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodReport {
    pub summary: SubsetSummary,
    pub delta_vs_baseline: Deltas,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub corpus_digest: String,
    pub corpus_records: u64,
    pub corpus_sources: usize,
    pub baseline: SubsetSummary,
    pub methods: Vec<MethodReport>,
}

struct Acc {
    lengths: BTreeMap<u64, u64>,
    total: u128,
    per_source: BTreeMap<String, u64>,
    clusters: BTreeSet<u32>,
}

/// Builds the report in one pass over the corpus. Every manifest, the
/// baseline included, must have been built from this exact file.
pub fn report(
    corpus: &Path,
    manifests: &[(String, SelectionManifest)],
    baseline: &SelectionManifest,
    assignment: Option<&ClusterAssignment>,
    opts: ReportOptions,
) -> Result<Report, ReportError> {
    let all: Vec<(&str, &SelectionManifest)> = std::iter::once(("random-baseline", baseline))
        .chain(manifests.iter().map(|(l, m)| (l.as_str(), m)))
        .collect();

    // id -> manifests selecting it
    let mut wanted: HashMap<RecordId, Vec<usize>> = HashMap::new();
    for (m_idx, (_, m)) in all.iter().enumerate() {
        for &id in &m.selected {
            wanted.entry(id).or_default().push(m_idx);
        }
    }
    let mut accs: Vec<Acc> = all
        .iter()
        .map(|_| Acc {
            lengths: BTreeMap::new(),
            total: 0,
            per_source: BTreeMap::new(),
            clusters: BTreeSet::new(),
        })
        .collect();
    let mut bytes: HashMap<RecordId, Vec<u8>> = HashMap::new();
    let mut sources = BTreeSet::new();

    let mut reader = CorpusReader::open(corpus, IngestOptions::new(opts.format))?;
    for rec in reader.by_ref() {
        let rec = rec?;
        sources.insert(rec.source.clone());
        let Some(ms) = wanted.get(&rec.id) else {
            continue;
        };
        if bytes.contains_key(&rec.id) {
            continue;
        }
        let t = token_count(&rec, opts.counter, opts.scope)?;
        let cluster = assignment.and_then(|a| a.cluster_of(rec.id));
        for &m in ms {
            let a = &mut accs[m];
            *a.lengths.entry(t).or_insert(0) += 1;
            a.total += t as u128;
            *a.per_source.entry(rec.source.clone()).or_insert(0) += 1;
            if let Some(c) = cluster {
                a.clusters.insert(c);
            }
        }
        bytes.insert(rec.id, rec.canonical_bytes());
    }
    let summary = reader.finish()?;

    for (label, m) in &all {
        if m.corpus_digest != summary.digest {
            return Err(ReportError::CorpusMismatch {
                label: label.to_string(),
                manifest: m.corpus_digest.clone(),
                corpus: summary.digest.clone(),
            });
        }
        if let Some(&id) = m.selected.iter().find(|id| !bytes.contains_key(id)) {
            return Err(ReportError::MissingRecord {
                label: label.to_string(),
                id,
            });
        }
    }

    let comp = Compressor::default();
    let summaries: Vec<SubsetSummary> = all
        .iter()
        .zip(accs)
        .map(|((label, m), a)| {
            let count = m.selected.len() as u64;
            let joined: Vec<u8> = m.selected.iter().flat_map(|id| bytes[id].iter().copied()).collect();
            SubsetSummary {
                label: label.to_string(),
                method: m.method.clone(),
                count,
                mean_tokens: if count == 0 { 0.0 } else { a.total as f64 / count as f64 },
                median_tokens: median_of_counts(&a.lengths, count),
                min_tokens: a.lengths.keys().next().copied().unwrap_or(0),
                max_tokens: a.lengths.keys().next_back().copied().unwrap_or(0),
                source_coverage: if sources.is_empty() {
                    0.0
                } else {
                    a.per_source.len() as f64 / sources.len() as f64
                },
                per_source: a.per_source,
                cluster_coverage: assignment.map(|asg| a.clusters.len() as f64 / asg.k as f64),
                compression_ratio: comp.ratio(&joined).unwrap_or(0.0),
            }
        })
        .collect();

    let mut it = summaries.into_iter();
    let base = it.next().expect("baseline is always present");
    let methods = it
        .map(|s| MethodReport {
            delta_vs_baseline: deltas(&s, &base),
            summary: s,
        })
        .collect();
    Ok(Report {
        corpus_digest: summary.digest,
        corpus_records: summary.records as u64,
        corpus_sources: sources.len(),
        baseline: base,
        methods,
    })
}

fn share(s: &SubsetSummary, source: &str) -> f64 {
    if s.count == 0 {
        return 0.0;
    }
    s.per_source.get(source).copied().unwrap_or(0) as f64 / s.count as f64
}

fn deltas(s: &SubsetSummary, base: &SubsetSummary) -> Deltas {
    let names: BTreeSet<&String> = s.per_source.keys().chain(base.per_source.keys()).collect();
    Deltas {
        mean_tokens: s.mean_tokens - base.mean_tokens,
        median_tokens: s.median_tokens - base.median_tokens,
        source_coverage: s.source_coverage - base.source_coverage,
        cluster_coverage: s.cluster_coverage.zip(base.cluster_coverage).map(|(a, b)| a - b),
        compression_ratio: s.compression_ratio - base.compression_ratio,
        source_share: names.into_iter().map(|n| (n.clone(), share(s, n) - share(base, n))).collect(),
    }
}

fn summary_lines(out: &mut String, s: &SubsetSummary) {
    let _ = writeln!(out, "[{}] method={} records={}", s.label, s.method, s.count);
    let _ = writeln!(
        out,
        "  tokens: mean={:.2} median={:.1} min={} max={}",
        s.mean_tokens, s.median_tokens, s.min_tokens, s.max_tokens
    );
    let sources: Vec<String> = s.per_source.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let _ = writeln!(out, "  sources: {} (coverage {:.3})", sources.join(" "), s.source_coverage);
    if let Some(c) = s.cluster_coverage {
        let _ = writeln!(out, "  cluster coverage: {c:.4}");
    }
    let _ = writeln!(out, "  compression ratio: {:.6}", s.compression_ratio);
}

impl Report {
    /// Line-oriented rendering for terminals and logs.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "corpus {} ({} records, {} sources)",
            self.corpus_digest, self.corpus_records, self.corpus_sources
        );
        summary_lines(&mut out, &self.baseline);
        for m in &self.methods {
            summary_lines(&mut out, &m.summary);
            let d = &m.delta_vs_baseline;
            let _ = write!(
                out,
                "  delta vs baseline: mean_tokens={:+.2} median_tokens={:+.1} source_coverage={:+.3} compression_ratio={:+.6}",
                d.mean_tokens, d.median_tokens, d.source_coverage, d.compression_ratio
            );
            if let Some(c) = d.cluster_coverage {
                let _ = write!(out, " cluster_coverage={c:+.4}");
            }
            out.push('\n');
        }
        out
    }
}

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use sift_core::corpus::{token_count, CorpusFormat, CorpusReader, IngestOptions, StatsAccumulator};
use sift_core::diversity::{
    kcenter_select, kmeans, zip_select, ClusterAssignment, ContextWindow, KMeansParams, ScoreUpdate, ZipParams,
};
use sift_core::fsutil::{sha256_file, write_bytes_atomic};
use sift_core::memory::MemoryGauge;
use sift_core::quality::{score_entropy, score_ifd, score_less, score_selectit, ScoringOptions};
use sift_core::report::{report, ReportOptions};
use sift_core::rng::PRNG_NAME;
use sift_core::scores::{
    read_header, validate_coverage, CoveragePolicy, EmbeddingMatrix, FileKind, GradientFeatureStore, LogProbStore,
    RatingProbe, RecordId, ScoreTable,
};
use sift_core::select::{
    export_subset, random_manifest, random_select, select_by_length, select_top_by_score, InputRef, SelectionManifest,
};

use crate::args::*;
use crate::error::UsageError;

pub fn dispatch(cmd: &Command, gauge: Arc<MemoryGauge>) -> Result<()> {
    match cmd {
        Command::Stats(a) => stats(a, gauge),
        Command::Score(a) => score(a, gauge),
        Command::Cluster(a) => cluster(a),
        Command::Select(a) => select(a, gauge),
        Command::Export(a) => export(a),
        Command::Report(a) => report_cmd(a),
        Command::Validate(a) => validate(a, gauge),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn print_json<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    print!("{text}");
    Ok(text)
}

fn opts(c: &CorpusArgs) -> IngestOptions {
    IngestOptions::new(c.format.into()).lenient(c.lenient)
}

/// Distinct ids of a corpus in first-seen order, plus whatever per-record
/// data a command needs.
struct CorpusIndex {
    digest: String,
    records: u64,
    ids: Vec<RecordId>,
    lengths: BTreeMap<RecordId, u64>,
    bytes: Vec<(RecordId, Vec<u8>)>,
}

#[derive(Default)]
struct Want {
    lengths: Option<(sift_core::corpus::TokenCounter, sift_core::corpus::LengthScope)>,
    bytes: bool,
}

/// Bytes charged per indexed id: the id itself and its dedup-set entry.
const ID_BYTES: usize = 24;
/// Bytes charged per entry of the length map.
const LENGTH_BYTES: usize = 48;

fn index(c: &CorpusArgs, want: Want, gauge: &MemoryGauge) -> Result<CorpusIndex> {
    let mut reader = CorpusReader::open(&c.corpus, opts(c))?;
    let mut seen = HashSet::new();
    let mut idx = CorpusIndex {
        digest: String::new(),
        records: 0,
        ids: Vec::new(),
        lengths: BTreeMap::new(),
        bytes: Vec::new(),
    };
    for rec in reader.by_ref() {
        let rec = rec.with_context(|| format!("reading {}", c.corpus.display()))?;
        if !seen.insert(rec.id) {
            continue;
        }
        gauge.charge(ID_BYTES, "corpus id index")?;
        idx.ids.push(rec.id);
        if let Some((counter, scope)) = want.lengths {
            gauge.charge(LENGTH_BYTES, "token length index")?;
            idx.lengths.insert(rec.id, token_count(&rec, counter, scope)?);
        }
        if want.bytes {
            let b = rec.canonical_bytes();
            gauge.charge(b.len() + 32, "record text buffer")?;
            idx.bytes.push((rec.id, b));
        }
    }
    let summary = reader.finish()?;
    if summary.malformed_count > 0 {
        log::warn!("{}: skipped {} malformed lines", c.corpus.display(), summary.malformed_count);
    }
    idx.digest = summary.digest;
    idx.records = summary.records as u64;
    Ok(idx)
}

fn stats(a: &StatsArgs, gauge: Arc<MemoryGauge>) -> Result<()> {
    let mut reader = CorpusReader::open(&a.corpus.corpus, opts(&a.corpus))?;
    let mut acc = StatsAccumulator::new(a.dedup).with_gauge(gauge);
    let (counter, scope) = (a.length.tokens.into(), a.length.scope.into());
    for rec in reader.by_ref() {
        let rec = rec?;
        let t = token_count(&rec, counter, scope)?;
        acc.push(&rec, t)?;
    }
    let summary = reader.finish()?;
    let stats = acc.finish();
    let out = json!({
        "corpus": a.corpus.corpus,
        "digest": summary.digest,
        "malformed_count": summary.malformed_count,
        "malformed": summary.malformed,
        "stats": stats,
    });
    let text = print_json(&out)?;
    if let Some(p) = &a.out {
        write_bytes_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn coverage<F: Fn(RecordId) -> bool>(has: F, ids: &[RecordId], policy: CoveragePolicy, what: &str) -> Result<Vec<RecordId>> {
    let report = validate_coverage(&has, ids, policy).with_context(|| format!("coverage of {what}"))?;
    if !report.missing.is_empty() {
        log::warn!("{} corpus records have no {what}; they are excluded", report.missing.len());
    }
    Ok(ids.iter().copied().filter(|&id| has(id)).collect())
}

/// Explicit input flags plus `--scores` files sorted by header kind.
struct ScoreInputs {
    logprobs: Option<PathBuf>,
    probes: Vec<PathBuf>,
    gradients: Option<PathBuf>,
}

fn score_inputs(a: &ScoreArgs) -> Result<ScoreInputs> {
    let mut inputs = ScoreInputs {
        logprobs: a.logprobs.clone(),
        probes: a.probes.clone(),
        gradients: a.gradients.clone(),
    };
    let single = |slot: &mut Option<PathBuf>, p: &PathBuf, what: &str| {
        if slot.replace(p.clone()).is_some() {
            return Err(usage(format!("more than one {what} file given")));
        }
        Ok(())
    };
    for p in &a.scores {
        match read_header(p)?.format {
            FileKind::Logprobs => single(&mut inputs.logprobs, p, "log-probability")?,
            FileKind::RatingProbes => inputs.probes.push(p.clone()),
            FileKind::GradientFeatures => single(&mut inputs.gradients, p, "gradient feature")?,
            other => {
                return Err(usage(format!(
                    "{}: {other:?} files are not scoring inputs",
                    p.display()
                )))
            }
        }
    }
    Ok(inputs)
}

fn score(a: &ScoreArgs, gauge: Arc<MemoryGauge>) -> Result<()> {
    let inputs = score_inputs(a)?;
    let idx = index(&a.corpus, Want::default(), &gauge)?;
    let policy: CoveragePolicy = a.coverage.into();
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone().ok_or_else(|| usage(format!("--method {:?} needs {flag}", a.method)))
    };
    let sopts = ScoringOptions {
        alpha: a.alpha,
        betas: (!a.betas.is_empty()).then(|| a.betas.clone()),
        drop_ifd_ge_1: a.drop_ifd_ge_1,
    };
    let table = match a.method {
        ScoreMethodArg::Ifd | ScoreMethodArg::Entropy => {
            let path = need(&inputs.logprobs, "--logprobs")?;
            let store = LogProbStore::load(&path)?;
            let ids = coverage(|id| store.get(id).is_some(), &idx.ids, policy, "log-probabilities")?;
            if a.method == ScoreMethodArg::Ifd {
                score_ifd(&store, &ids, &sopts)?
            } else {
                score_entropy(&store, &ids)?
            }
        }
        ScoreMethodArg::Selectit => {
            if inputs.probes.is_empty() {
                return Err(usage("--method selectit needs at least one --probes file"));
            }
            let probes = inputs.probes.iter().map(|p| RatingProbe::load(p)).collect::<Result<Vec<_>, _>>()?;
            let ids = coverage(
                |id| probes.iter().all(|p| p.entries.contains_key(&id)),
                &idx.ids,
                policy,
                "rating probes",
            )?;
            score_selectit(&probes, &ids, &sopts)?
        }
        ScoreMethodArg::Less => {
            let path = need(&inputs.gradients, "--gradients")?;
            let store = GradientFeatureStore::load(&path)?;
            let ids = coverage(|id| store.records.contains_key(&id), &idx.ids, policy, "gradient features")?;
            score_less(&store, &ids)?
        }
    };
    table.save(&a.out, a.encoding.into()).with_context(|| format!("writing {}", a.out.display()))?;
    print_json(&json!({
        "method": table.method,
        "scored": table.len(),
        "degenerate": table.degenerate.len(),
        "filtered": table.filtered.len(),
        "out": a.out,
    }))?;
    Ok(())
}

fn cluster(a: &ClusterArgs) -> Result<()> {
    let emb = EmbeddingMatrix::load(&a.embeddings)?;
    let params = KMeansParams {
        k: a.k,
        seed: a.seed,
        max_iters: a.max_iters,
        tol: a.tol,
    };
    let asg = kmeans(&emb, &params)?;
    asg.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let sizes = asg.sizes();
    print_json(&json!({
        "k": asg.k,
        "dim": asg.dim,
        "records": asg.ids.len(),
        "seed": asg.seed,
        "iterations": asg.iterations_run,
        "converged": asg.converged,
        "inertia": asg.inertia,
        "min_cluster": sizes.iter().min(),
        "max_cluster": sizes.iter().max(),
        "out": a.out,
    }))?;
    Ok(())
}

fn input_ref(role: &str, path: &Path) -> Result<InputRef> {
    let header = read_header(path)?;
    Ok(InputRef {
        role: role.to_string(),
        method: header.method,
        digest: sha256_file(path).with_context(|| format!("hashing {}", path.display()))?,
        provenance: header.provenance,
    })
}

fn select(a: &SelectArgs, gauge: Arc<MemoryGauge>) -> Result<()> {
    let method = a.method;
    let policy: CoveragePolicy = a.coverage.into();
    let want = Want {
        lengths: (method == SelectMethodArg::LengthKm).then(|| (a.length.tokens.into(), a.length.scope.into())),
        bytes: method == SelectMethodArg::Zip,
    };
    let idx = index(&a.corpus, want, &gauge)?;
    let mut m = SelectionManifest::new(method.as_str(), idx.digest.clone(), idx.records, a.budget)
        .param("budget", a.budget)
        .param("format", serde_json::to_value(a.corpus.format)?)
        .param("coverage", serde_json::to_value(a.coverage)?);
    let distinct = idx.ids.len() as u64;

    let clusters = |what: &str| -> Result<(ClusterAssignment, InputRef)> {
        let p = a.clusters.as_ref().ok_or_else(|| usage(format!("--method {what} needs --clusters")))?;
        Ok((ClusterAssignment::load(p)?, input_ref("clusters", p)?))
    };

    match method {
        SelectMethodArg::Random => {
            if a.budget > distinct {
                bail!(sift_core::select::SelectError::BudgetExceedsCorpus {
                    budget: a.budget,
                    available: distinct
                });
            }
            gauge.charge(a.budget as usize * 16, "reservoir")?;
            m.selected = random_select(idx.ids.iter().copied(), a.budget as usize, a.seed)?;
            m.seed = Some(a.seed);
            m.prng = Some(PRNG_NAME.to_string());
        }
        SelectMethodArg::Top | SelectMethodArg::TopKm => {
            let p = a.scores.as_ref().ok_or_else(|| usage(format!("--method {} needs --scores", method.as_str())))?;
            let mut table = ScoreTable::load(p)?;
            m.inputs.push(input_ref("scores", p)?);
            let in_corpus: HashSet<RecordId> = idx.ids.iter().copied().collect();
            let foreign: Vec<RecordId> = table.entries.keys().copied().filter(|id| !in_corpus.contains(id)).collect();
            if !foreign.is_empty() {
                if policy == CoveragePolicy::Strict {
                    bail!("score table {} has {} ids not in the corpus, first {}", p.display(), foreign.len(), foreign[0]);
                }
                for id in &foreign {
                    table.entries.remove(id);
                }
            }
            let unscorable: HashSet<RecordId> = table.degenerate.iter().chain(&table.filtered).copied().collect();
            coverage(
                |id| table.entries.contains_key(&id) || unscorable.contains(&id),
                &idx.ids,
                policy,
                "scores",
            )?;
            m.degenerate = idx.ids.iter().filter(|id| unscorable.contains(id)).count() as u64;
            m = m.param("direction", serde_json::to_value(table.direction)?).param("quota", a.quota.as_value());
            let asg = if method == SelectMethodArg::TopKm {
                let (asg, r) = clusters("top-km")?;
                m.inputs.push(r);
                Some(asg)
            } else {
                None
            };
            let s = select_top_by_score(asg.as_ref(), &table, a.budget, a.quota.into())?;
            m.excluded = distinct - (table.entries.len() as u64 - s.unclustered);
            m.shortfall = s.shortfall;
            m.quotas = s.quotas;
            m.selected = s.selected;
        }
        SelectMethodArg::LengthKm => {
            let (asg, r) = clusters("length-km")?;
            m.inputs.push(r);
            coverage(|id| asg.cluster_of(id).is_some(), &idx.ids, policy, "cluster assignment")?;
            m = m
                .param("tokens", serde_json::to_value(a.length.tokens)?)
                .param("scope", serde_json::to_value(a.length.scope)?)
                .param("quota", a.quota.as_value());
            let s = select_by_length(Some(&asg), &idx.lengths, a.budget, a.quota.into())?;
            m.excluded = s.unclustered;
            m.shortfall = s.shortfall;
            m.quotas = s.quotas;
            m.selected = s.selected;
        }
        SelectMethodArg::Kcenter => {
            let p = a.embeddings.as_ref().ok_or_else(|| usage("--method kcenter needs --embeddings"))?;
            let emb = EmbeddingMatrix::load(p)?;
            m.inputs.push(input_ref("embeddings", p)?);
            let usable = coverage(|id| emb.contains(id), &idx.ids, policy, "embeddings")?;
            let pool: Vec<RecordId> = match &a.pool {
                Some(pp) => {
                    let pm = SelectionManifest::load(pp)?;
                    m.inputs.push(InputRef {
                        role: "pool".into(),
                        method: pm.method.clone(),
                        digest: sha256_file(pp)?,
                        provenance: None,
                    });
                    pm.selected
                }
                None => Vec::new(),
            };
            let pool_set: HashSet<RecordId> = pool.iter().copied().collect();
            let candidates: Vec<RecordId> = usable.into_iter().filter(|id| !pool_set.contains(id)).collect();
            let budget = a.budget.min(candidates.len() as u64);
            let r = kcenter_select(&emb, &pool, &candidates, budget as usize)?;
            m = m.param("pool_size", pool.len()).param("metric", "euclidean");
            m.excluded = distinct - candidates.len() as u64;
            m.shortfall = a.budget - budget;
            m.selected = r.picks;
        }
        SelectMethodArg::Zip => {
            let budget = a.budget.min(idx.bytes.len() as u64);
            let window = match a.zip_window {
                0 => ContextWindow::Unbounded,
                n => ContextWindow::Bounded(n as usize),
            };
            let update = match a.zip_update {
                ZipUpdateArg::All => ScoreUpdate::All,
                ZipUpdateArg::Pool => ScoreUpdate::Pool,
            };
            let params = ZipParams {
                budget: budget as usize,
                k1: a.k1,
                k2: a.k2,
                k3: a.k3,
                window,
                update,
                ..ZipParams::new(budget as usize)
            };
            let out = zip_select(&idx.bytes, &params)?;
            m = m
                .param("k1", a.k1)
                .param("k2", a.k2)
                .param("k3", a.k3)
                .param("zip_window", a.zip_window)
                .param("zip_update", update.as_str())
                .param("compressor", out.state.compressor)
                .param("level", out.state.level)
                .param("selected_ratio", out.state.selected_ratio)
                .param("selected_digest", out.state.selected_digest.clone());
            m.shortfall = a.budget - budget;
            m.selected = out.selected;
        }
    }
    if m.shortfall > 0 {
        log::warn!("only {} records available for budget {}", m.selected.len(), a.budget);
    }
    m.save(&a.manifest)?;
    print_json(&json!({
        "method": m.method,
        "selected": m.selected.len(),
        "shortfall": m.shortfall,
        "excluded": m.excluded,
        "digest": m.digest(),
        "manifest": a.manifest,
    }))?;
    Ok(())
}

impl QuotaArg {
    fn as_value(&self) -> Value {
        serde_json::to_value(self).expect("enum serializes")
    }
}

fn export(a: &ExportArgs) -> Result<()> {
    let m = SelectionManifest::load(&a.manifest)?;
    let s = export_subset(&m, &a.corpus.corpus, a.corpus.format.into(), &a.out)?;
    print_json(&json!({
        "records": s.records,
        "digest": s.digest,
        "out": a.out,
        "sidecar": s.sidecar,
    }))?;
    Ok(())
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    let mut manifests = Vec::new();
    for spec in &a.manifest {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (Some(l.to_string()), p),
            None => (None, spec.as_str()),
        };
        let m = SelectionManifest::load(Path::new(path))?;
        manifests.push((label.unwrap_or_else(|| m.method.clone()), m));
    }
    let format: CorpusFormat = a.corpus.format.into();
    let baseline = match &a.baseline {
        Some(p) => SelectionManifest::load(p)?,
        None => {
            let budget = manifests[0].1.selected.len();
            random_manifest(&a.corpus.corpus, format, budget, a.seed)?
        }
    };
    let asg = a.clusters.as_ref().map(|p| ClusterAssignment::load(p)).transpose()?;
    let r = report(
        &a.corpus.corpus,
        &manifests,
        &baseline,
        asg.as_ref(),
        ReportOptions {
            format,
            counter: a.length.tokens.into(),
            scope: a.length.scope.into(),
        },
    )?;
    let json_text = serde_json::to_string_pretty(&r)? + "\n";
    if a.json {
        print!("{json_text}");
    } else {
        print!("{}", r.to_text());
    }
    if let Some(p) = &a.out {
        write_bytes_atomic(p, json_text.as_bytes()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FileCheck {
    path: String,
    kind: &'static str,
    ok: bool,
    records: usize,
    missing: usize,
    error: Option<String>,
}

fn validate(a: &ValidateArgs, gauge: Arc<MemoryGauge>) -> Result<()> {
    let mut reader = CorpusReader::open(&a.corpus.corpus, opts(&a.corpus))?;
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    let mut corpus_error = None;
    for rec in reader.by_ref() {
        match rec {
            Ok(r) => {
                if seen.insert(r.id) {
                    gauge.charge(ID_BYTES, "corpus id index")?;
                    ids.push(r.id);
                }
            }
            Err(e) => {
                corpus_error = Some(e.to_string());
                break;
            }
        }
    }
    let summary = reader.finish()?;
    let policy: CoveragePolicy = a.coverage.into();

    type Membership = Box<dyn Fn(RecordId) -> bool>;
    let mut checks = Vec::new();
    let mut check = |kind: &'static str, path: &Path, res: Result<(usize, Membership)>| {
        let c = match res {
            Ok((records, has)) => {
                let missing = ids.iter().filter(|&&id| !has(id)).count();
                let ok = missing == 0 || policy == CoveragePolicy::AllowMissing;
                FileCheck {
                    path: path.display().to_string(),
                    kind,
                    ok,
                    records,
                    missing,
                    error: (!ok).then(|| format!("{missing} corpus records are not covered")),
                }
            }
            Err(e) => FileCheck {
                path: path.display().to_string(),
                kind,
                ok: false,
                records: 0,
                missing: 0,
                error: Some(format!("{e:#}")),
            },
        };
        checks.push(c);
    };
    type Has = Box<dyn Fn(RecordId) -> bool>;
    for p in &a.scores {
        check("score_table", p, ScoreTable::load(p).map_err(Into::into).map(|t| {
            let n = t.len();
            let has: Has = Box::new(move |id| {
                t.entries.contains_key(&id) || t.degenerate.contains(&id) || t.filtered.contains(&id)
            });
            (n, has)
        }));
    }
    for p in &a.logprobs {
        check("logprobs", p, LogProbStore::load(p).map_err(Into::into).map(|s| {
            let n = s.entries.len();
            let has: Has = Box::new(move |id| s.entries.contains_key(&id));
            (n, has)
        }));
    }
    for p in &a.probes {
        check("rating_probes", p, RatingProbe::load(p).map_err(Into::into).map(|s| {
            let n = s.entries.len();
            let has: Has = Box::new(move |id| s.entries.contains_key(&id));
            (n, has)
        }));
    }
    for p in &a.gradients {
        check("gradient_features", p, GradientFeatureStore::load(p).map_err(Into::into).map(|s| {
            let n = s.records.len();
            let has: Has = Box::new(move |id| s.records.contains_key(&id));
            (n, has)
        }));
    }
    for p in &a.embeddings {
        check("embeddings", p, EmbeddingMatrix::load(p).map_err(Into::into).map(|s| {
            let n = s.len();
            let has: Has = Box::new(move |id| s.contains(id));
            (n, has)
        }));
    }
    for p in &a.clusters {
        check("cluster_assignment", p, ClusterAssignment::load(p).map_err(Into::into).map(|s| {
            let n = s.ids.len();
            let has: Has = Box::new(move |id| s.cluster_of(id).is_some());
            (n, has)
        }));
    }
    let corpus_ids: HashSet<RecordId> = ids.iter().copied().collect();
    for p in &a.manifest {
        let c = match SelectionManifest::load(p) {
            Ok(m) => {
                let foreign = m.selected.iter().find(|id| !corpus_ids.contains(id));
                let error = if m.corpus_digest != summary.digest {
                    Some(format!("built from corpus {}, not {}", m.corpus_digest, summary.digest))
                } else {
                    foreign.map(|id| format!("selects {id}, which is not in the corpus"))
                };
                FileCheck {
                    path: p.display().to_string(),
                    kind: "manifest",
                    ok: error.is_none(),
                    records: m.selected.len(),
                    missing: 0,
                    error,
                }
            }
            Err(e) => FileCheck {
                path: p.display().to_string(),
                kind: "manifest",
                ok: false,
                records: 0,
                missing: 0,
                error: Some(e.to_string()),
            },
        };
        checks.push(c);
    }
    let ok = corpus_error.is_none() && checks.iter().all(|c| c.ok);
    print_json(&json!({
        "ok": ok,
        "corpus": {
            "path": a.corpus.corpus,
            "digest": summary.digest,
            "records": summary.records,
            "distinct": ids.len(),
            "malformed_count": summary.malformed_count,
            "malformed": summary.malformed,
            "error": corpus_error,
        },
        "files": checks,
    }))?;
    if !ok {
        bail!("validation failed");
    }
    Ok(())
}

//! Streaming ingestion, normalization, hashing and summary statistics for
//! instruction-tuning corpora.
//!
//! Corpora are JSON Lines files in one of two schemas:
//!
//! * conversation: `{"id"?: str, "source"?: str, "token_count"?: int, "conversations": [{"from": "human"|"gpt", "value": str}, ...]}`
//! * prompt-response: `{"instruction": str, "output": str, "source"?: str, "token_count"?: int}`
//!
//! `token_count` carries a tokenizer count computed upstream.
//!
//! A [`CorpusReader`] yields one [`Record`] at a time and never buffers more
//! than the current line, so memory use is independent of corpus size.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::memory::{MemoryGauge, ResourceError};

/// Malformed lines tolerated before a strict ingest aborts.
pub const DEFAULT_MAX_MALFORMED: usize = 100;

/// 64-bit content identifier of a record.
///
/// The id is the first eight bytes (big-endian) of the SHA-256 digest of the
/// record's canonical serialization. It is a pure function of the ordered
/// `(role, text)` turns, identical on every platform, and for `n` distinct
/// records the probability of any collision is bounded by `n² / 2⁶⁵`
/// (about 2.7e-8 at one million records).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordId(pub u64);

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid record id {0:?}: expected 16 hex digits")]
pub struct ParseIdError(String);

impl FromStr for RecordId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() || s.len() > 16 {
            return Err(ParseIdError(s.to_string()));
        }
        u64::from_str_radix(s, 16)
            .map(RecordId)
            .map_err(|_| ParseIdError(s.to_string()))
    }
}

impl Serialize for RecordId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RecordId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    fn canonical_byte(self) -> u8 {
        match self {
            Role::User => 0,
            Role::Assistant => 1,
        }
    }

    fn marker(self) -> &'static str {
        match self {
            Role::User => "\n<|user|>\n",
            Role::Assistant => "\n<|assistant|>\n",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Turn {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("record has no turns")]
    NoTurns,
    #[error("record has no assistant turn")]
    NoAssistantTurn,
}

/// One instruction-tuning example. Immutable after construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub id: RecordId,
    pub source: String,
    /// Identifier carried by the input file, if any. Not part of the hash.
    pub external_id: Option<String>,
    pub turns: Vec<Turn>,
    /// User turns joined with a role marker.
    pub instruction_text: String,
    /// Assistant turns joined with a role marker.
    pub response_text: String,
    pub byte_len: usize,
    pub token_count: Option<u64>,
}

pub const UNKNOWN_SOURCE: &str = "unknown";

impl Record {
    pub fn new(
        turns: Vec<Turn>,
        source: Option<String>,
        external_id: Option<String>,
    ) -> Result<Self, RecordError> {
        if turns.is_empty() {
            return Err(RecordError::NoTurns);
        }
        if !turns.iter().any(|t| t.role == Role::Assistant) {
            return Err(RecordError::NoAssistantTurn);
        }
        let id = content_hash(&turns);
        let instruction_text = flatten(&turns, Role::User);
        let response_text = flatten(&turns, Role::Assistant);
        let byte_len = turns.iter().map(|t| t.text.len()).sum();
        Ok(Record {
            id,
            source: source.unwrap_or_else(|| UNKNOWN_SOURCE.to_string()),
            external_id,
            turns,
            instruction_text,
            response_text,
            byte_len,
            token_count: None,
        })
    }

    pub fn pair(instruction: &str, output: &str) -> Self {
        Record::new(
            vec![Turn::user(instruction), Turn::assistant(output)],
            None,
            None,
        )
        .expect("pair records always carry an assistant turn")
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn with_token_count(mut self, count: u64) -> Self {
        self.token_count = Some(count);
        self
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_bytes(&self.turns)
    }

    /// Serializes back into one line of the given schema. Prompt-response
    /// output is only possible for exactly one user turn followed by one
    /// assistant turn.
    pub fn to_line(&self, format: CorpusFormat) -> Option<String> {
        let line = match format {
            CorpusFormat::Conversation => {
                let conv = ConversationOut {
                    id: self.external_id.as_deref(),
                    source: &self.source,
                    token_count: self.token_count,
                    conversations: self
                        .turns
                        .iter()
                        .map(|t| TurnOut {
                            from: match t.role {
                                Role::User => "human",
                                Role::Assistant => "gpt",
                            },
                            value: &t.text,
                        })
                        .collect(),
                };
                serde_json::to_string(&conv)
            }
            CorpusFormat::Pair => match self.turns.as_slice() {
                [u, a] if u.role == Role::User && a.role == Role::Assistant => {
                    serde_json::to_string(&PairOut {
                        instruction: &u.text,
                        output: &a.text,
                        source: &self.source,
                        token_count: self.token_count,
                    })
                }
                _ => return None,
            },
        };
        Some(line.expect("records always serialize"))
    }
}

fn flatten(turns: &[Turn], role: Role) -> String {
    let mut out = String::new();
    let mut first = true;
    for t in turns.iter().filter(|t| t.role == role) {
        if !first {
            out.push_str(role.marker());
        }
        out.push_str(&t.text);
        first = false;
    }
    out
}

/// Canonical byte form: per turn, one role byte, the UTF-8 length as u64
/// little-endian, then the text bytes.
pub fn canonical_bytes(turns: &[Turn]) -> Vec<u8> {
    let len: usize = turns.iter().map(|t| 9 + t.text.len()).sum();
    let mut out = Vec::with_capacity(len);
    for t in turns {
        out.push(t.role.canonical_byte());
        out.extend_from_slice(&(t.text.len() as u64).to_le_bytes());
        out.extend_from_slice(t.text.as_bytes());
    }
    out
}

pub fn content_hash(turns: &[Turn]) -> RecordId {
    let mut h = Sha256::new();
    for t in turns {
        h.update([t.role.canonical_byte()]);
        h.update((t.text.len() as u64).to_le_bytes());
        h.update(t.text.as_bytes());
    }
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    RecordId(u64::from_be_bytes(first))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Conversation,
    Pair,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conversation" => Ok(CorpusFormat::Conversation),
            "pair" | "prompt-response" => Ok(CorpusFormat::Pair),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

#[derive(Serialize)]
struct ConversationOut<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    source: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    token_count: Option<u64>,
    conversations: Vec<TurnOut<'a>>,
}

#[derive(Serialize)]
struct TurnOut<'a> {
    from: &'a str,
    value: &'a str,
}

#[derive(Serialize)]
struct PairOut<'a> {
    instruction: &'a str,
    output: &'a str,
    source: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    token_count: Option<u64>,
}

#[derive(Deserialize)]
struct ConversationIn {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    token_count: Option<u64>,
    conversations: Vec<TurnIn>,
}

#[derive(Deserialize)]
struct TurnIn {
    from: String,
    value: String,
}

#[derive(Deserialize)]
struct PairIn {
    instruction: String,
    output: String,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    token_count: Option<u64>,
}

fn keep_count(mut r: Record, count: Option<u64>) -> Record {
    r.token_count = count;
    r
}

/// Parses one corpus line.
pub fn parse_line(line: &str, format: CorpusFormat) -> Result<Record, String> {
    let record = match format {
        CorpusFormat::Conversation => {
            let c: ConversationIn = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let turns = c
                .conversations
                .into_iter()
                .map(|t| {
                    let role = match t.from.as_str() {
                        "human" | "user" => Role::User,
                        "gpt" | "assistant" => Role::Assistant,
                        other => return Err(format!("unsupported turn role {other:?}")),
                    };
                    Ok(Turn { role, text: t.value })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Record::new(turns, c.source, c.id).map(|r| keep_count(r, c.token_count))
        }
        CorpusFormat::Pair => {
            let p: PairIn = serde_json::from_str(line).map_err(|e| e.to_string())?;
            Record::new(
                vec![Turn::user(p.instruction), Turn::assistant(p.output)],
                p.source,
                None,
            )
            .map(|r| keep_count(r, p.token_count))
        }
    };
    record.map_err(|e| e.to_string())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{count} malformed lines exceed the tolerance of {limit}; last at line {}: {}", last.line, last.reason)]
    TooManyMalformed {
        count: usize,
        limit: usize,
        last: MalformedLine,
    },
    #[error("record {0} has no ingested token count")]
    MissingTokenCount(RecordId),
    #[error(transparent)]
    Resource(#[from] ResourceError),
}

#[derive(Clone, Copy, Debug)]
pub struct IngestOptions {
    pub format: CorpusFormat,
    /// Skip malformed lines without ever aborting.
    pub lenient: bool,
    pub max_malformed: usize,
}

impl IngestOptions {
    pub fn new(format: CorpusFormat) -> Self {
        IngestOptions {
            format,
            lenient: false,
            max_malformed: DEFAULT_MAX_MALFORMED,
        }
    }

    pub fn lenient(mut self, lenient: bool) -> Self {
        self.lenient = lenient;
        self
    }
}

/// Outcome of a completed pass over a corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    /// SHA-256 of every byte read, i.e. of the file itself.
    pub digest: String,
    pub records: usize,
    pub malformed_count: usize,
    /// First malformed lines, capped at the tolerance.
    pub malformed: Vec<MalformedLine>,
}

/// Sequential record stream over a JSON Lines corpus.
///
/// Malformed lines are logged and counted. A strict reader fails once the
/// count exceeds [`IngestOptions::max_malformed`]; a lenient one never does.
pub struct CorpusReader<R> {
    reader: R,
    path: PathBuf,
    opts: IngestOptions,
    hasher: Sha256,
    line: String,
    line_no: usize,
    records: usize,
    malformed_count: usize,
    malformed: Vec<MalformedLine>,
    failed: bool,
}

impl CorpusReader<BufReader<File>> {
    pub fn open(path: &Path, opts: IngestOptions) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::with_path(
            BufReader::with_capacity(1 << 20, file),
            path,
            opts,
        ))
    }
}

impl<R: BufRead> CorpusReader<R> {
    pub fn from_reader(reader: R, opts: IngestOptions) -> Self {
        Self::with_path(reader, Path::new("<stream>"), opts)
    }

    fn with_path(reader: R, path: &Path, opts: IngestOptions) -> Self {
        CorpusReader {
            reader,
            path: path.to_path_buf(),
            opts,
            hasher: Sha256::new(),
            line: String::new(),
            line_no: 0,
            records: 0,
            malformed_count: 0,
            malformed: Vec::new(),
            failed: false,
        }
    }

    /// Raw text of the line that produced the last record, without the
    /// trailing newline.
    pub fn last_line(&self) -> &str {
        self.line.trim_end_matches(['\n', '\r'])
    }

    pub fn line_no(&self) -> usize {
        self.line_no
    }

    pub fn malformed_count(&self) -> usize {
        self.malformed_count
    }

    /// Drains any remaining lines and returns the pass summary.
    pub fn finish(mut self) -> Result<IngestSummary, CorpusError> {
        for r in self.by_ref() {
            r?;
        }
        Ok(IngestSummary {
            digest: hex::encode(self.hasher.finalize()),
            records: self.records,
            malformed_count: self.malformed_count,
            malformed: self.malformed,
        })
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Record, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.line.clear();
            match self.reader.read_line(&mut self.line) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(source) => {
                    self.failed = true;
                    return Some(Err(CorpusError::Io {
                        path: self.path.clone(),
                        source,
                    }));
                }
            }
            self.hasher.update(self.line.as_bytes());
            self.line_no += 1;
            let text = self.line.trim();
            if text.is_empty() {
                continue;
            }
            match parse_line(text, self.opts.format) {
                Ok(r) => {
                    self.records += 1;
                    return Some(Ok(r));
                }
                Err(reason) => {
                    let m = MalformedLine {
                        line: self.line_no,
                        reason,
                    };
                    log::warn!(
                        "{}:{}: malformed record: {}",
                        self.path.display(),
                        m.line,
                        m.reason
                    );
                    self.malformed_count += 1;
                    if self.malformed.len() < self.opts.max_malformed.max(1) {
                        self.malformed.push(m.clone());
                    }
                    if !self.opts.lenient && self.malformed_count > self.opts.max_malformed {
                        self.failed = true;
                        return Some(Err(CorpusError::TooManyMalformed {
                            count: self.malformed_count,
                            limit: self.opts.max_malformed,
                            last: m,
                        }));
                    }
                }
            }
        }
    }
}

/// Opens `path` and returns the record stream.
pub fn ingest(
    path: &Path,
    format: CorpusFormat,
    lenient: bool,
) -> Result<CorpusReader<BufReader<File>>, CorpusError> {
    CorpusReader::open(path, IngestOptions::new(format).lenient(lenient))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenCounter {
    Ingested,
    Whitespace,
}

impl FromStr for TokenCounter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ingested" => Ok(TokenCounter::Ingested),
            "whitespace" => Ok(TokenCounter::Whitespace),
            other => Err(format!("unknown token counter {other:?}")),
        }
    }
}

/// Which part of a record a token count covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthScope {
    #[default]
    Both,
    ResponseOnly,
}

impl FromStr for LengthScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(LengthScope::Both),
            "response" | "response-only" => Ok(LengthScope::ResponseOnly),
            other => Err(format!("unknown length scope {other:?}")),
        }
    }
}

/// Token length of a record. Whitespace counts run over the turn texts
/// themselves, so the role markers added by flattening are never counted.
/// Ingested counts are returned unchanged, whatever the scope.
pub fn token_count(
    record: &Record,
    counter: TokenCounter,
    scope: LengthScope,
) -> Result<u64, CorpusError> {
    match counter {
        TokenCounter::Ingested => record
            .token_count
            .ok_or(CorpusError::MissingTokenCount(record.id)),
        TokenCounter::Whitespace => Ok(record
            .turns
            .iter()
            .filter(|t| scope == LengthScope::Both || t.role == Role::Assistant)
            .map(|t| t.text.split_whitespace().count() as u64)
            .sum()),
    }
}

/// Lower bound of a log-spaced token-length bucket. Bucket 0 holds the
/// empty records; bucket `b >= 1` holds lengths in `[2^(b-1), 2^b)`.
pub fn bucket_of(tokens: u64) -> usize {
    (64 - tokens.leading_zeros()) as usize
}

pub fn bucket_bounds(bucket: usize) -> (u64, u64) {
    match bucket {
        0 => (0, 1),
        64 => (1 << 63, u64::MAX),
        b => (1 << (b - 1), 1 << b),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// Inclusive lower bound.
    pub lo: u64,
    /// Exclusive upper bound.
    pub hi: u64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub record_count: u64,
    pub per_source: BTreeMap<String, u64>,
    pub histogram: Vec<HistogramBucket>,
    pub mean_tokens: f64,
    pub median_tokens: f64,
    pub duplicate_count: u64,
}

/// Single-pass accumulator behind [`stats`]. The retained state is the
/// per-source counts, the exact length counts (bounded by the number of
/// distinct lengths) and the set of seen ids used for duplicate detection.
pub struct StatsAccumulator {
    dedup: bool,
    record_count: u64,
    per_source: BTreeMap<String, u64>,
    lengths: BTreeMap<u64, u64>,
    total_tokens: u128,
    seen: HashSet<u64>,
    duplicates: u64,
    gauge: Option<Arc<MemoryGauge>>,
}

/// Approximate bytes retained per distinct id in the duplicate set.
const SEEN_ENTRY_BYTES: usize = 16;

impl StatsAccumulator {
    pub fn new(dedup: bool) -> Self {
        StatsAccumulator {
            dedup,
            record_count: 0,
            per_source: BTreeMap::new(),
            lengths: BTreeMap::new(),
            total_tokens: 0,
            seen: HashSet::new(),
            duplicates: 0,
            gauge: None,
        }
    }

    pub fn with_gauge(mut self, gauge: Arc<MemoryGauge>) -> Self {
        self.gauge = Some(gauge);
        self
    }

    /// Adds one record. Returns `false` when the record was dropped as a
    /// duplicate.
    pub fn push(&mut self, record: &Record, tokens: u64) -> Result<bool, ResourceError> {
        if !self.seen.insert(record.id.0) {
            self.duplicates += 1;
            if self.dedup {
                return Ok(false);
            }
        } else if let Some(g) = &self.gauge {
            g.charge(SEEN_ENTRY_BYTES, "duplicate-detection id set")?;
        }
        self.record_count += 1;
        *self.per_source.entry(record.source.clone()).or_insert(0) += 1;
        *self.lengths.entry(tokens).or_insert(0) += 1;
        self.total_tokens += tokens as u128;
        Ok(true)
    }

    pub fn finish(self) -> CorpusStats {
        let mut histogram: Vec<HistogramBucket> = Vec::new();
        for (&len, &count) in &self.lengths {
            let b = bucket_of(len);
            while histogram.len() <= b {
                let (lo, hi) = bucket_bounds(histogram.len());
                histogram.push(HistogramBucket { lo, hi, count: 0 });
            }
            histogram[b].count += count;
        }
        let mean_tokens = if self.record_count == 0 {
            0.0
        } else {
            self.total_tokens as f64 / self.record_count as f64
        };
        CorpusStats {
            record_count: self.record_count,
            per_source: self.per_source,
            histogram,
            mean_tokens,
            median_tokens: median_of_counts(&self.lengths, self.record_count),
            duplicate_count: self.duplicates,
        }
    }
}

/// Median of a multiset given as value → multiplicity. Even-sized sets
/// average the two middle values.
pub fn median_of_counts(counts: &BTreeMap<u64, u64>, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let lo_rank = (total - 1) / 2;
    let hi_rank = total / 2;
    let mut seen = 0u64;
    let mut lo = None;
    for (&v, &c) in counts {
        let next = seen + c;
        if lo.is_none() && lo_rank < next {
            lo = Some(v);
        }
        if hi_rank < next {
            let lo = lo.unwrap_or(v);
            return (lo as f64 + v as f64) / 2.0;
        }
        seen = next;
    }
    unreachable!("total exceeds the multiset size")
}

/// Summarizes a record stream in one pass.
pub fn stats<I>(
    records: I,
    counter: TokenCounter,
    scope: LengthScope,
    dedup: bool,
) -> Result<CorpusStats, CorpusError>
where
    I: IntoIterator<Item = Result<Record, CorpusError>>,
{
    let mut acc = StatsAccumulator::new(dedup);
    for r in records {
        let r = r?;
        let t = token_count(&r, counter, scope)?;
        acc.push(&r, t)?;
    }
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reader(text: &str, lenient: bool) -> CorpusReader<&[u8]> {
        CorpusReader::from_reader(
            text.as_bytes(),
            IngestOptions::new(CorpusFormat::Conversation).lenient(lenient),
        )
    }

    const CONV: &str = r#"{"conversations":[{"from":"human","value":"hi"},{"from":"gpt","value":"hello there"}]}"#;

    #[test]
    fn ingests_lines_in_order() {
        let text = r#"{"instruction":"a","output":"1"}
{"instruction":"b","output":"2"}
{"instruction":"c","output":"3"}
"#;
        let r = CorpusReader::from_reader(text.as_bytes(), IngestOptions::new(CorpusFormat::Pair));
        let recs: Vec<_> = r.map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 3);
        let ins: Vec<_> = recs.iter().map(|r| r.instruction_text.as_str()).collect();
        assert_eq!(ins, ["a", "b", "c"]);
    }

    #[test]
    fn user_only_line_is_malformed() {
        let text = format!(
            "{CONV}\n{}\n{CONV}\n",
            r#"{"conversations":[{"from":"human","value":"only me"}]}"#
        );
        let mut r = reader(&text, true);
        let recs: Vec<_> = r.by_ref().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 2);
        let summary = r.finish().unwrap();
        assert_eq!(summary.malformed_count, 1);
        assert_eq!(summary.malformed[0].line, 2);
        assert!(summary.malformed[0].reason.contains("assistant"));
    }

    #[test]
    fn strict_reader_aborts_past_tolerance() {
        let mut text = String::new();
        for _ in 0..=DEFAULT_MAX_MALFORMED {
            text.push_str("{not json\n");
        }
        let results: Vec<_> = reader(&text, false).collect();
        assert!(matches!(
            results.last(),
            Some(Err(CorpusError::TooManyMalformed { count: 101, .. }))
        ));
        let lenient: Vec<_> = reader(&text, true).collect();
        assert!(lenient.is_empty());
    }

    #[test]
    fn digest_covers_file_bytes() {
        let text = format!("{CONV}\n\n{CONV}\n");
        let summary = reader(&text, false).finish().unwrap();
        assert_eq!(summary.records, 2);
        assert_eq!(summary.digest, crate::fsutil::sha256_hex(text.as_bytes()));
    }

    #[test]
    fn multi_turn_flattening() {
        let r = Record::new(
            vec![
                Turn::user("q1"),
                Turn::assistant("a1"),
                Turn::user("q2"),
                Turn::assistant("a2"),
            ],
            None,
            None,
        )
        .unwrap();
        assert_eq!(r.instruction_text, "q1\n<|user|>\nq2");
        assert_eq!(r.response_text, "a1\n<|assistant|>\na2");
        assert_eq!(r.byte_len, 8);
    }

    #[test]
    fn hash_properties() {
        let a = Record::pair("same", "text");
        let b = Record::pair("same", "text");
        assert_eq!(a.id, b.id);
        let swapped = Record::new(
            vec![Turn::assistant("same"), Turn::user("text")],
            None,
            None,
        )
        .unwrap();
        assert_ne!(a.id, swapped.id);
        let roles_flipped = Record::new(
            vec![Turn::assistant("same"), Turn::assistant("text")],
            None,
            None,
        )
        .unwrap();
        assert_ne!(a.id, roles_flipped.id);
        // boundary between turns is part of the canonical form
        assert_ne!(Record::pair("ab", "c").id, Record::pair("a", "bc").id);
    }

    #[test]
    fn hash_is_platform_independent() {
        // pinned ids: canonical form + SHA-256 never depend on the host
        let r = Record::pair("hello", "world");
        assert_eq!(r.id.to_string(), format!("{}", r.id));
        let mut bytes = vec![0u8];
        bytes.extend_from_slice(&5u64.to_le_bytes());
        bytes.extend_from_slice(b"hello");
        bytes.push(1);
        bytes.extend_from_slice(&5u64.to_le_bytes());
        bytes.extend_from_slice(b"world");
        assert_eq!(r.canonical_bytes(), bytes);
        let digest = crate::fsutil::sha256_hex(&bytes);
        assert_eq!(r.id.to_string(), digest[..16]);
    }

    #[test]
    fn one_byte_perturbations_never_collide() {
        let base = "The quick brown fox jumps over the lazy dog. ".repeat(4);
        let mut ids = HashSet::new();
        let bytes = base.as_bytes();
        for i in 0..1000 {
            let mut b = bytes.to_vec();
            let pos = i % b.len();
            b[pos] = b'a' + ((b[pos] as usize + 1 + i / b.len()) % 26) as u8;
            let text = String::from_utf8(b).unwrap();
            ids.insert((text.clone(), Record::pair("q", &text).id));
        }
        let texts: HashSet<_> = ids.iter().map(|(t, _)| t.clone()).collect();
        let hashes: HashSet<_> = ids.iter().map(|(_, h)| *h).collect();
        assert_eq!(texts.len(), hashes.len());
        assert!(texts.len() > 900);
    }

    #[test]
    fn record_id_text_round_trip() {
        let id = RecordId(0x00ab_cdef_0123_4567);
        assert_eq!(id.to_string(), "00abcdef01234567");
        assert_eq!("00abcdef01234567".parse::<RecordId>().unwrap(), id);
        assert!("xyz".parse::<RecordId>().is_err());
        assert!("00abcdef012345671".parse::<RecordId>().is_err());
    }

    #[test]
    fn token_counts() {
        let r = Record::new(vec![Turn::user("hello world")], None, None);
        assert!(r.is_err());
        let r = Record::new(vec![Turn::assistant("hello world")], None, None).unwrap();
        assert_eq!(token_count(&r, TokenCounter::Whitespace, LengthScope::Both).unwrap(), 2);
        let r = Record::pair("some words here", "");
        assert_eq!(
            token_count(&r, TokenCounter::Whitespace, LengthScope::ResponseOnly).unwrap(),
            0
        );
        assert_eq!(token_count(&r, TokenCounter::Whitespace, LengthScope::Both).unwrap(), 3);
        assert!(matches!(
            token_count(&r, TokenCounter::Ingested, LengthScope::Both),
            Err(CorpusError::MissingTokenCount(_))
        ));
        let r = r.with_token_count(354);
        assert_eq!(token_count(&r, TokenCounter::Ingested, LengthScope::Both).unwrap(), 354);
        assert_eq!(
            token_count(&r, TokenCounter::Ingested, LengthScope::ResponseOnly).unwrap(),
            354
        );
    }

    fn words(n: usize) -> String {
        vec!["w"; n].join(" ")
    }

    #[test]
    fn stats_mean_median() {
        let recs = (0..10).map(|i| Ok(Record::pair(&format!("q{i}"), &words(4))));
        let s = stats(recs, TokenCounter::Whitespace, LengthScope::Both, false).unwrap();
        assert_eq!(s.record_count, 10);
        assert_eq!(s.mean_tokens, 5.0);
        assert_eq!(s.median_tokens, 5.0);
        assert_eq!(s.duplicate_count, 0);
    }

    #[test]
    fn stats_duplicates() {
        let recs = || vec![Ok(Record::pair("a", "b")), Ok(Record::pair("a", "b"))];
        let s = stats(recs(), TokenCounter::Whitespace, LengthScope::Both, false).unwrap();
        assert_eq!(s.duplicate_count, 1);
        assert_eq!(s.record_count, 2);
        let s = stats(recs(), TokenCounter::Whitespace, LengthScope::Both, true).unwrap();
        assert_eq!(s.duplicate_count, 1);
        assert_eq!(s.record_count, 1);
    }

    #[test]
    fn stats_histogram_split() {
        // 10 → [8, 16), 1000 → [512, 1024)
        let recs = (0..100).map(|i| {
            let len = if i % 2 == 0 { 10 } else { 1000 };
            Ok(Record::new(vec![Turn::assistant(format!("{i} {}", words(len - 1)))], None, None).unwrap())
        });
        let s = stats(recs, TokenCounter::Whitespace, LengthScope::Both, false).unwrap();
        let counts: Vec<_> = s.histogram.iter().filter(|b| b.count > 0).collect();
        assert_eq!(counts.len(), 2);
        assert_eq!((counts[0].lo, counts[0].hi, counts[0].count), (8, 16, 50));
        assert_eq!((counts[1].lo, counts[1].hi, counts[1].count), (512, 1024, 50));
        assert_eq!(s.histogram.iter().map(|b| b.count).sum::<u64>(), s.record_count);
        assert_eq!(s.mean_tokens, 505.0);
        assert_eq!(s.median_tokens, 505.0);
    }

    #[test]
    fn buckets() {
        assert_eq!(bucket_of(0), 0);
        assert_eq!(bucket_of(1), 1);
        assert_eq!(bucket_of(2), 2);
        assert_eq!(bucket_of(3), 2);
        assert_eq!(bucket_of(1024), 11);
        for t in [0u64, 1, 5, 17, 1142, 354, u64::MAX] {
            let (lo, hi) = bucket_bounds(bucket_of(t));
            assert!(lo <= t && (t < hi || hi == u64::MAX));
        }
    }

    #[test]
    fn median_even_and_odd() {
        let mut m = BTreeMap::new();
        m.insert(1, 1);
        m.insert(3, 1);
        assert_eq!(median_of_counts(&m, 2), 2.0);
        m.insert(10, 1);
        assert_eq!(median_of_counts(&m, 3), 3.0);
    }

    #[test]
    fn serialize_round_trip_examples() {
        let r = Record::new(
            vec![Turn::user("q \"quoted\"\n"), Turn::assistant("ä ✓")],
            Some("metamath".into()),
            Some("ext-1".into()),
        )
        .unwrap();
        let line = r.to_line(CorpusFormat::Conversation).unwrap();
        assert_eq!(parse_line(&line, CorpusFormat::Conversation).unwrap(), r);
        let p = Record::pair("x", "y").with_source("camel");
        let line = p.to_line(CorpusFormat::Pair).unwrap();
        assert_eq!(parse_line(&line, CorpusFormat::Pair).unwrap(), p);
        let counted = Record::pair("x", "y").with_token_count(1142);
        let line = counted.to_line(CorpusFormat::Pair).unwrap();
        assert!(line.contains("\"token_count\":1142"));
        let back = parse_line(&line, CorpusFormat::Pair).unwrap();
        assert_eq!(back.token_count, Some(1142));
        assert_eq!(back.id, p.id, "the count is not part of the content hash");
        let turns_line = r#"{"token_count":7,"conversations":[{"from":"human","value":"a"},{"from":"gpt","value":"b"}]}"#;
        assert_eq!(parse_line(turns_line, CorpusFormat::Conversation).unwrap().token_count, Some(7));
        let multi = Record::new(vec![Turn::user("a"), Turn::assistant("b"), Turn::assistant("c")], None, None).unwrap();
        assert!(multi.to_line(CorpusFormat::Pair).is_none());
    }
}

//! Text and binary encodings of score files.
//!
//! Text files are JSON Lines: a header object on the first line, then one
//! object per record. Binary files start with the magic `SIFTSCOR` and store
//! the same logical content column by column (layout in `docs/formats.md`).
//! Loaders sniff the first eight bytes and accept either encoding.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::*;
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 8] = b"SIFTSCOR";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    ScoreTable,
    Logprobs,
    RatingProbes,
    GradientFeatures,
    Embeddings,
    ClusterAssignment,
}

impl FileKind {
    pub fn code(self) -> u8 {
        match self {
            FileKind::ScoreTable => 1,
            FileKind::Logprobs => 2,
            FileKind::RatingProbes => 3,
            FileKind::GradientFeatures => 4,
            FileKind::Embeddings => 5,
            FileKind::ClusterAssignment => 6,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            1 => FileKind::ScoreTable,
            2 => FileKind::Logprobs,
            3 => FileKind::RatingProbes,
            4 => FileKind::GradientFeatures,
            5 => FileKind::Embeddings,
            6 => FileKind::ClusterAssignment,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    #[default]
    Text,
    Binary,
}

/// Header shared by both encodings. Kind-specific fields are optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: FileKind,
    pub version: u32,
    #[serde(default)]
    pub method: String,
    #[serde(default, alias = "d", skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_prompts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_scores: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<ProbeValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_sets: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<Vec<RecordId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filtered: Option<Vec<RecordId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<BTreeMap<String, serde_json::Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
}

impl Header {
    pub fn new(format: FileKind, method: impl Into<String>) -> Self {
        Header {
            format,
            version: VERSION as u32,
            method: method.into(),
            dim: None,
            provenance: None,
            direction: None,
            k_prompts: None,
            k_scores: None,
            values: None,
            model: None,
            beta: None,
            learning_rates: None,
            val_sets: None,
            degenerate: None,
            filtered: None,
            params: None,
            k: None,
            seed: None,
            iterations: None,
            inertia: None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ScoreError + '_ {
    move |source| ScoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn header_err(path: &Path, msg: impl Into<String>) -> ScoreError {
    ScoreError::Header {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Little-endian column reader.
pub(crate) struct BinReader {
    r: BufReader<File>,
    path: PathBuf,
}

macro_rules! read_column {
    ($name:ident, $t:ty) => {
        pub(crate) fn $name(&mut self, n: usize) -> Result<Vec<$t>, ScoreError> {
            const W: usize = std::mem::size_of::<$t>();
            let mut out = Vec::with_capacity(n.min(1 << 24));
            let mut buf = vec![0u8; W * 8192];
            let mut left = n;
            while left > 0 {
                let take = left.min(8192);
                let bytes = &mut buf[..take * W];
                self.r.read_exact(bytes).map_err(|e| self.truncated(e))?;
                out.extend(
                    bytes
                        .chunks_exact(W)
                        .map(|c| <$t>::from_le_bytes(c.try_into().unwrap())),
                );
                left -= take;
            }
            Ok(out)
        }
    };
}

impl BinReader {
    fn truncated(&self, e: io::Error) -> ScoreError {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            header_err(&self.path, "file is truncated")
        } else {
            ScoreError::Io {
                path: self.path.clone(),
                source: e,
            }
        }
    }

    read_column!(u64s, u64);
    read_column!(u32s, u32);
    read_column!(f64s, f64);
    read_column!(f32s, f32);

    pub(crate) fn u8(&mut self) -> Result<u8, ScoreError> {
        let mut b = [0u8; 1];
        self.r.read_exact(&mut b).map_err(|e| self.truncated(e))?;
        Ok(b[0])
    }

    pub(crate) fn path(&self) -> &Path {
        &self.path
    }

    pub(crate) fn expect_end(&mut self) -> Result<(), ScoreError> {
        let mut b = [0u8; 1];
        match self.r.read(&mut b).map_err(io_err(&self.path))? {
            0 => Ok(()),
            _ => Err(header_err(&self.path, "trailing bytes after last column")),
        }
    }
}

/// Little-endian column writer.
pub(crate) struct BinWriter<'a, W: Write> {
    w: &'a mut W,
}

macro_rules! write_column {
    ($name:ident, $t:ty) => {
        pub(crate) fn $name(&mut self, values: &[$t]) -> io::Result<()> {
            for v in values {
                self.w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        }
    };
}

impl<W: Write> BinWriter<'_, W> {
    write_column!(u64s, u64);
    write_column!(u32s, u32);
    write_column!(f64s, f64);
    write_column!(f32s, f32);

    pub(crate) fn u8(&mut self, v: u8) -> io::Result<()> {
        self.w.write_all(&[v])
    }
}

/// Writes a binary container: magic, version, kind, header JSON, record
/// count, then whatever columns `body` emits.
pub(crate) fn write_binary<F>(path: &Path, header: &Header, count: u64, body: F) -> io::Result<()>
where
    F: FnOnce(&mut BinWriter<'_, BufWriter<File>>) -> io::Result<()>,
{
    let header_json = serde_json::to_vec(header).map_err(io::Error::other)?;
    write_atomic(path, |w| {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[header.format.code(), 0])?;
        w.write_all(&(header_json.len() as u32).to_le_bytes())?;
        w.write_all(&header_json)?;
        w.write_all(&count.to_le_bytes())?;
        body(&mut BinWriter { w })
    })
}

pub(crate) fn write_text<I, L>(path: &Path, header: &Header, lines: I) -> io::Result<()>
where
    I: IntoIterator<Item = L>,
    L: Serialize,
{
    write_atomic(path, |w| {
        serde_json::to_writer(&mut *w, header).map_err(io::Error::other)?;
        w.write_all(b"\n")?;
        for line in lines {
            serde_json::to_writer(&mut *w, &line).map_err(io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub(crate) enum Opened {
    Text {
        header: Header,
        lines: TextLines,
    },
    Binary {
        header: Header,
        count: usize,
        reader: BinReader,
    },
}

pub(crate) struct TextLines {
    r: BufReader<File>,
    path: PathBuf,
    line_no: usize,
    buf: String,
}

impl TextLines {
    /// Next non-blank data line, parsed.
    pub(crate) fn next_parsed<T: DeserializeOwned>(&mut self) -> Result<Option<(usize, T)>, ScoreError> {
        loop {
            self.buf.clear();
            let n = self.r.read_line(&mut self.buf).map_err(io_err(&self.path))?;
            if n == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let text = self.buf.trim();
            if text.is_empty() {
                continue;
            }
            return serde_json::from_str(text)
                .map(|v| Some((self.line_no, v)))
                .map_err(|e| ScoreError::Parse {
                    path: self.path.clone(),
                    line: self.line_no,
                    msg: e.to_string(),
                });
        }
    }

    pub(crate) fn parse_error(&self, line: usize, msg: impl Into<String>) -> ScoreError {
        ScoreError::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }
}

pub(crate) fn open(path: &Path, expected: FileKind) -> Result<Opened, ScoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::with_capacity(1 << 20, file);
    let head = r.fill_buf().map_err(io_err(path))?;
    let opened = if head.starts_with(MAGIC) {
        let mut fixed = [0u8; 16];
        r.read_exact(&mut fixed).map_err(io_err(path))?;
        let version = u16::from_le_bytes([fixed[8], fixed[9]]);
        if version != VERSION {
            return Err(header_err(path, format!("unsupported binary version {version}")));
        }
        let kind = FileKind::from_code(fixed[10])
            .ok_or_else(|| header_err(path, format!("unknown kind code {}", fixed[10])))?;
        let header_len = u32::from_le_bytes(fixed[12..16].try_into().unwrap()) as usize;
        let mut hbytes = vec![0u8; header_len];
        r.read_exact(&mut hbytes).map_err(io_err(path))?;
        let header: Header =
            serde_json::from_slice(&hbytes).map_err(|e| header_err(path, e.to_string()))?;
        if header.format != kind {
            return Err(header_err(path, "kind byte disagrees with header format"));
        }
        let mut count = [0u8; 8];
        r.read_exact(&mut count).map_err(io_err(path))?;
        Opened::Binary {
            header,
            count: u64::from_le_bytes(count) as usize,
            reader: BinReader {
                r,
                path: path.to_path_buf(),
            },
        }
    } else {
        let mut first = String::new();
        r.read_line(&mut first).map_err(io_err(path))?;
        let header: Header = serde_json::from_str(first.trim())
            .map_err(|e| header_err(path, format!("first line is not a header: {e}")))?;
        Opened::Text {
            header,
            lines: TextLines {
                r,
                path: path.to_path_buf(),
                line_no: 1,
                buf: String::new(),
            },
        }
    };
    let header = match &opened {
        Opened::Text { header, .. } | Opened::Binary { header, .. } => header,
    };
    if header.version != VERSION as u32 {
        return Err(header_err(path, format!("unsupported version {}", header.version)));
    }
    if header.format != expected {
        return Err(ScoreError::WrongKind {
            path: path.to_path_buf(),
            expected,
            found: header.format,
        });
    }
    Ok(opened)
}

/// Reads only the header of any score file.
pub fn read_header(path: &Path) -> Result<Header, ScoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let head = r.fill_buf().map_err(io_err(path))?;
    if head.starts_with(MAGIC) {
        let mut fixed = [0u8; 16];
        r.read_exact(&mut fixed).map_err(io_err(path))?;
        let header_len = u32::from_le_bytes(fixed[12..16].try_into().unwrap()) as usize;
        let mut hbytes = vec![0u8; header_len];
        r.read_exact(&mut hbytes).map_err(io_err(path))?;
        serde_json::from_slice(&hbytes).map_err(|e| header_err(path, e.to_string()))
    } else {
        let mut first = String::new();
        r.read_line(&mut first).map_err(io_err(path))?;
        serde_json::from_str(first.trim()).map_err(|e| header_err(path, e.to_string()))
    }
}

fn check_count(reader: &BinReader, count: usize, what: &str) -> Result<(), ScoreError> {
    // Defends allocation against corrupt counts.
    let len = reader.r.get_ref().metadata().map(|m| m.len()).unwrap_or(u64::MAX);
    if (count as u64).saturating_mul(8) > len {
        return Err(header_err(reader.path(), format!("{what} count {count} exceeds file size")));
    }
    Ok(())
}

// ---------------------------------------------------------------- tables

#[derive(Serialize, Deserialize)]
struct TableLine {
    id: RecordId,
    score: f64,
}

impl ScoreTable {
    pub fn load(path: &Path) -> Result<Self, ScoreError> {
        let opened = open(path, FileKind::ScoreTable)?;
        let header = match &opened {
            Opened::Text { header, .. } | Opened::Binary { header, .. } => header.clone(),
        };
        let mut table = ScoreTable {
            method: header.method.clone(),
            direction: header.direction.unwrap_or_default(),
            provenance: header.provenance.clone(),
            entries: BTreeMap::new(),
            degenerate: header.degenerate.clone().unwrap_or_default(),
            filtered: header.filtered.clone().unwrap_or_default(),
            params: header.params.clone().unwrap_or_default(),
        };
        match opened {
            Opened::Text { mut lines, .. } => {
                while let Some((_, l)) = lines.next_parsed::<TableLine>()? {
                    table.insert(l.id, l.score)?;
                }
            }
            Opened::Binary {
                count, mut reader, ..
            } => {
                check_count(&reader, count, "record")?;
                let ids = reader.u64s(count)?;
                let scores = reader.f64s(count)?;
                reader.expect_end()?;
                for (id, s) in ids.into_iter().zip(scores) {
                    table.insert(RecordId(id), s)?;
                }
            }
        }
        Ok(table)
    }

    fn header(&self) -> Header {
        let mut h = Header::new(FileKind::ScoreTable, &self.method);
        h.direction = Some(self.direction);
        h.provenance = self.provenance.clone();
        h.degenerate = Some(self.degenerate.clone());
        h.filtered = Some(self.filtered.clone());
        if !self.params.is_empty() {
            h.params = Some(self.params.clone());
        }
        h
    }

    pub fn save(&self, path: &Path, encoding: Encoding) -> io::Result<()> {
        let header = self.header();
        match encoding {
            Encoding::Text => write_text(
                path,
                &header,
                self.entries.iter().map(|(&id, &score)| TableLine { id, score }),
            ),
            Encoding::Binary => write_binary(path, &header, self.entries.len() as u64, |w| {
                w.u64s(&self.entries.keys().map(|k| k.0).collect::<Vec<_>>())?;
                w.f64s(&self.entries.values().copied().collect::<Vec<_>>())
            }),
        }
    }
}

// -------------------------------------------------------------- logprobs

#[derive(Serialize, Deserialize)]
struct LogProbLine {
    id: RecordId,
    #[serde(flatten)]
    lp: LogProbs,
}

#[derive(Serialize)]
struct LogProbLineRef<'a> {
    id: RecordId,
    #[serde(flatten)]
    lp: &'a LogProbs,
}

impl LogProbStore {
    pub fn load(path: &Path) -> Result<Self, ScoreError> {
        let opened = open(path, FileKind::Logprobs)?;
        let mut store = LogProbStore::default();
        match opened {
            Opened::Text { header, mut lines } => {
                store.method = header.method;
                store.provenance = header.provenance;
                while let Some((_, l)) = lines.next_parsed::<LogProbLine>()? {
                    store.insert(l.id, l.lp)?;
                }
            }
            Opened::Binary {
                header,
                count,
                mut reader,
            } => {
                store.method = header.method;
                store.provenance = header.provenance;
                check_count(&reader, count, "record")?;
                let ids = reader.u64s(count)?;
                let lens = reader.u32s(count)?;
                let has_uncond = reader.u8()? != 0;
                let total: usize = lens.iter().map(|&l| l as usize).sum();
                check_count(&reader, total, "token")?;
                let cond = reader.f64s(total)?;
                let uncond = if has_uncond { Some(reader.f64s(total)?) } else { None };
                reader.expect_end()?;
                let mut off = 0;
                for (id, len) in ids.into_iter().zip(lens) {
                    let range = off..off + len as usize;
                    off += len as usize;
                    let lp = LogProbs {
                        conditioned: cond[range.clone()].to_vec(),
                        unconditioned: uncond.as_ref().map(|u| u[range].to_vec()),
                    };
                    store.insert(RecordId(id), lp)?;
                }
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path, encoding: Encoding) -> io::Result<()> {
        let mut header = Header::new(FileKind::Logprobs, &self.method);
        header.provenance = self.provenance.clone();
        match encoding {
            Encoding::Text => write_text(
                path,
                &header,
                self.entries.iter().map(|(&id, lp)| LogProbLineRef { id, lp }),
            ),
            Encoding::Binary => {
                let has_uncond = self.entries.values().all(|l| l.unconditioned.is_some());
                if !has_uncond && self.entries.values().any(|l| l.unconditioned.is_some()) {
                    return Err(io::Error::other(
                        "binary logprob files need unconditioned arrays on all records or none",
                    ));
                }
                write_binary(path, &header, self.entries.len() as u64, |w| {
                    w.u64s(&self.entries.keys().map(|k| k.0).collect::<Vec<_>>())?;
                    w.u32s(
                        &self
                            .entries
                            .values()
                            .map(|l| l.conditioned.len() as u32)
                            .collect::<Vec<_>>(),
                    )?;
                    w.u8(has_uncond as u8)?;
                    for l in self.entries.values() {
                        w.f64s(&l.conditioned)?;
                    }
                    if has_uncond {
                        for l in self.entries.values() {
                            w.f64s(l.unconditioned.as_deref().unwrap())?;
                        }
                    }
                    Ok(())
                })
            }
        }
    }
}

// ---------------------------------------------------------------- probes

#[derive(Serialize, Deserialize)]
struct ProbeLine {
    id: RecordId,
    probs: Vec<Vec<f64>>,
}

impl RatingProbe {
    pub fn load(path: &Path) -> Result<Self, ScoreError> {
        let opened = open(path, FileKind::RatingProbes)?;
        let header = match &opened {
            Opened::Text { header, .. } | Opened::Binary { header, .. } => header.clone(),
        };
        let k_scores = header
            .k_scores
            .ok_or_else(|| header_err(path, "rating probes need k_scores"))?;
        let k_prompts = header.k_prompts.unwrap_or(1);
        let mut probe = RatingProbe {
            method: header.method.clone(),
            provenance: header.provenance.clone(),
            model: header.model.clone(),
            beta: header.beta,
            k_prompts,
            k_scores,
            values: header.values.unwrap_or_default(),
            entries: BTreeMap::new(),
        };
        probe.check_shape().map_err(|m| header_err(path, m))?;
        match opened {
            Opened::Text { mut lines, .. } => {
                while let Some((line, l)) = lines.next_parsed::<ProbeLine>()? {
                    if l.probs.len() != k_prompts || l.probs.iter().any(|r| r.len() != k_scores) {
                        return Err(ScoreError::DimensionMismatch {
                            id: l.id.to_string(),
                            field: format!("probs (line {line})"),
                            expected: k_prompts * k_scores,
                            found: l.probs.iter().map(Vec::len).sum(),
                        });
                    }
                    probe.insert(l.id, l.probs.concat())?;
                }
            }
            Opened::Binary {
                count, mut reader, ..
            } => {
                check_count(&reader, count, "record")?;
                let ids = reader.u64s(count)?;
                let per = k_prompts * k_scores;
                check_count(&reader, count * per, "value")?;
                let values = reader.f64s(count * per)?;
                reader.expect_end()?;
                for (i, id) in ids.into_iter().enumerate() {
                    probe.insert(RecordId(id), values[i * per..(i + 1) * per].to_vec())?;
                }
            }
        }
        Ok(probe)
    }

    pub fn save(&self, path: &Path, encoding: Encoding) -> io::Result<()> {
        let mut header = Header::new(FileKind::RatingProbes, &self.method);
        header.provenance = self.provenance.clone();
        header.model = self.model.clone();
        header.beta = self.beta;
        header.k_prompts = Some(self.k_prompts);
        header.k_scores = Some(self.k_scores);
        header.values = Some(self.values);
        match encoding {
            Encoding::Text => write_text(
                path,
                &header,
                self.entries.iter().map(|(&id, m)| ProbeLine {
                    id,
                    probs: m.chunks(self.k_scores).map(<[f64]>::to_vec).collect(),
                }),
            ),
            Encoding::Binary => write_binary(path, &header, self.entries.len() as u64, |w| {
                w.u64s(&self.entries.keys().map(|k| k.0).collect::<Vec<_>>())?;
                for m in self.entries.values() {
                    w.f64s(m)?;
                }
                Ok(())
            }),
        }
    }
}

// ------------------------------------------------------------- gradients

#[derive(Serialize, Deserialize)]
struct GradientLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<RecordId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    val_set: Option<String>,
    grads: Vec<Vec<f32>>,
}

impl GradientFeatureStore {
    pub fn load(path: &Path) -> Result<Self, ScoreError> {
        let opened = open(path, FileKind::GradientFeatures)?;
        let header = match &opened {
            Opened::Text { header, .. } | Opened::Binary { header, .. } => header.clone(),
        };
        let dim = header
            .dim
            .ok_or_else(|| header_err(path, "gradient features need dim"))?;
        let lrs = header
            .learning_rates
            .clone()
            .ok_or_else(|| header_err(path, "gradient features need learning_rates"))?;
        let mut store = GradientFeatureStore {
            method: header.method.clone(),
            provenance: header.provenance.clone(),
            dim,
            learning_rates: lrs,
            ..Default::default()
        };
        store.check_shape().map_err(|m| header_err(path, m))?;
        let n_ckpt = store.checkpoints();
        match opened {
            Opened::Text { mut lines, .. } => {
                while let Some((line, l)) = lines.next_parsed::<GradientLine>()? {
                    let name = match (&l.id, &l.val_set) {
                        (Some(id), None) => id.to_string(),
                        (None, Some(v)) => v.clone(),
                        _ => {
                            return Err(lines.parse_error(line, "line needs exactly one of id or val_set"))
                        }
                    };
                    if l.grads.len() != n_ckpt {
                        return Err(ScoreError::Invariant {
                            id: name,
                            msg: format!("has {} checkpoints, expected {n_ckpt}", l.grads.len()),
                        });
                    }
                    if let Some(bad) = l.grads.iter().find(|g| g.len() != dim) {
                        return Err(ScoreError::DimensionMismatch {
                            id: name,
                            field: "grads".into(),
                            expected: dim,
                            found: bad.len(),
                        });
                    }
                    let flat = l.grads.concat();
                    match (l.id, l.val_set) {
                        (Some(id), _) => store.insert_record(id, flat)?,
                        (_, Some(v)) => store.insert_validation(&v, flat)?,
                        _ => unreachable!(),
                    }
                }
            }
            Opened::Binary {
                count, mut reader, ..
            } => {
                let names = header.val_sets.clone().unwrap_or_default();
                let per = n_ckpt * dim;
                check_count(&reader, count, "record")?;
                check_count(&reader, (count + names.len()) * per / 2, "value")?;
                let ids = reader.u64s(count)?;
                let train = reader.f32s(count * per)?;
                let val = reader.f32s(names.len() * per)?;
                reader.expect_end()?;
                for (i, id) in ids.into_iter().enumerate() {
                    store.insert_record(RecordId(id), train[i * per..(i + 1) * per].to_vec())?;
                }
                for (i, name) in names.iter().enumerate() {
                    store.insert_validation(name, val[i * per..(i + 1) * per].to_vec())?;
                }
            }
        }
        if store.validation.is_empty() {
            return Err(header_err(path, "no validation sets"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path, encoding: Encoding) -> io::Result<()> {
        let mut header = Header::new(FileKind::GradientFeatures, &self.method);
        header.provenance = self.provenance.clone();
        header.dim = Some(self.dim);
        header.learning_rates = Some(self.learning_rates.clone());
        header.val_sets = Some(self.validation.keys().cloned().collect());
        let split = |v: &[f32]| v.chunks(self.dim).map(<[f32]>::to_vec).collect::<Vec<_>>();
        match encoding {
            Encoding::Text => write_text(
                path,
                &header,
                self.validation
                    .iter()
                    .map(|(name, v)| GradientLine {
                        id: None,
                        val_set: Some(name.clone()),
                        grads: split(v),
                    })
                    .chain(self.records.iter().map(|(&id, v)| GradientLine {
                        id: Some(id),
                        val_set: None,
                        grads: split(v),
                    })),
            ),
            Encoding::Binary => write_binary(path, &header, self.records.len() as u64, |w| {
                w.u64s(&self.records.keys().map(|k| k.0).collect::<Vec<_>>())?;
                for v in self.records.values() {
                    w.f32s(v)?;
                }
                for v in self.validation.values() {
                    w.f32s(v)?;
                }
                Ok(())
            }),
        }
    }
}

// ------------------------------------------------------------ embeddings

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    id: RecordId,
    vector: Vec<f32>,
}

#[derive(Serialize)]
struct EmbeddingLineRef<'a> {
    id: RecordId,
    vector: &'a [f32],
}

impl EmbeddingMatrix {
    pub fn load(path: &Path) -> Result<Self, ScoreError> {
        let opened = open(path, FileKind::Embeddings)?;
        let (header, ids, data) = match opened {
            Opened::Text { header, mut lines } => {
                let mut dim = header.dim;
                let mut ids = Vec::new();
                let mut data = Vec::new();
                while let Some((_, l)) = lines.next_parsed::<EmbeddingLine>()? {
                    let d = *dim.get_or_insert(l.vector.len());
                    check_embedding_row(l.id, d, &l.vector)?;
                    ids.push(l.id);
                    data.extend_from_slice(&l.vector);
                }
                let mut header = header;
                header.dim = dim;
                (header, ids, data)
            }
            Opened::Binary {
                header,
                count,
                mut reader,
            } => {
                let dim = header
                    .dim
                    .ok_or_else(|| header_err(path, "binary embeddings need dim"))?;
                check_count(&reader, count, "record")?;
                check_count(&reader, count * dim / 2, "value")?;
                let ids: Vec<RecordId> = reader.u64s(count)?.into_iter().map(RecordId).collect();
                let data = reader.f32s(count * dim)?;
                reader.expect_end()?;
                for (i, &id) in ids.iter().enumerate() {
                    check_embedding_row(id, dim, &data[i * dim..(i + 1) * dim])?;
                }
                (header, ids, data)
            }
        };
        let dim = header
            .dim
            .ok_or_else(|| header_err(path, "embedding file is empty and declares no dim"))?;
        let mut m = EmbeddingMatrix::from_parts(dim, ids, data)?;
        m.method = header.method;
        m.provenance = header.provenance;
        Ok(m)
    }

    pub fn save(&self, path: &Path, encoding: Encoding) -> io::Result<()> {
        let mut header = Header::new(FileKind::Embeddings, &self.method);
        header.provenance = self.provenance.clone();
        header.dim = Some(self.dim);
        match encoding {
            Encoding::Text => write_text(
                path,
                &header,
                (0..self.len()).map(|i| EmbeddingLineRef {
                    id: self.ids()[i],
                    vector: self.row(i),
                }),
            ),
            Encoding::Binary => write_binary(path, &header, self.len() as u64, |w| {
                w.u64s(&self.ids().iter().map(|k| k.0).collect::<Vec<_>>())?;
                w.f32s(self.data())
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn one_record_logprob_text_file() {
        let d = tmp();
        let p = d.path().join("lp.jsonl");
        fs::write(
            &p,
            "{\"format\":\"logprobs\",\"version\":1,\"method\":\"stub\"}\n\
             {\"id\":\"000000000000000a\",\"conditioned\":[-1.0],\"unconditioned\":[-2.0]}\n",
        )
        .unwrap();
        let s = LogProbStore::load(&p).unwrap();
        let lp = s.get(RecordId(10)).unwrap();
        assert_eq!(lp.conditioned, vec![-1.0]);
        assert_eq!(lp.unconditioned.as_deref(), Some(&[-2.0][..]));
    }

    #[test]
    fn length_mismatch_names_the_record() {
        let d = tmp();
        let p = d.path().join("lp.jsonl");
        fs::write(
            &p,
            "{\"format\":\"logprobs\",\"version\":1,\"method\":\"stub\"}\n\
             {\"id\":\"00000000000000ff\",\"conditioned\":[-1,-1,-1],\"unconditioned\":[-2,-2]}\n",
        )
        .unwrap();
        let err = LogProbStore::load(&p).unwrap_err();
        assert!(err.to_string().contains("00000000000000ff"), "{err}");
    }

    #[test]
    fn mixed_embedding_dims_fail_at_first_mismatch() {
        let d = tmp();
        let p = d.path().join("emb.jsonl");
        let row = |id: u64, n: usize| format!("{{\"id\":\"{:016x}\",\"vector\":{:?}}}\n", id, vec![0.5f32; n]);
        let text = format!(
            "{{\"format\":\"embeddings\",\"version\":1,\"method\":\"stub\",\"dim\":64}}\n{}{}{}",
            row(1, 64),
            row(2, 32),
            row(3, 16)
        );
        fs::write(&p, text).unwrap();
        match EmbeddingMatrix::load(&p).unwrap_err() {
            ScoreError::DimensionMismatch { id, expected, found, .. } => {
                assert_eq!(id, format!("{:016x}", 2));
                assert_eq!((expected, found), (64, 32));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn wrong_kind_and_bad_magic_version() {
        let d = tmp();
        let p = d.path().join("t.jsonl");
        let mut t = ScoreTable::new("ifd", Direction::High);
        t.insert(RecordId(1), 0.5).unwrap();
        t.save(&p, Encoding::Text).unwrap();
        assert!(matches!(
            LogProbStore::load(&p),
            Err(ScoreError::WrongKind { .. })
        ));
        let b = d.path().join("t.bin");
        t.save(&b, Encoding::Binary).unwrap();
        let mut bytes = fs::read(&b).unwrap();
        bytes[8] = 9;
        fs::write(&b, &bytes).unwrap();
        assert!(matches!(ScoreTable::load(&b), Err(ScoreError::Header { .. })));
    }

    #[test]
    fn binary_nan_is_reported_with_id() {
        let d = tmp();
        let p = d.path().join("t.bin");
        let header = Header::new(FileKind::ScoreTable, "x");
        write_binary(&p, &header, 2, |w| {
            w.u64s(&[1, 2])?;
            w.f64s(&[0.5, f64::NAN])
        })
        .unwrap();
        match ScoreTable::load(&p).unwrap_err() {
            ScoreError::NonFinite { id, .. } => assert_eq!(id, format!("{:016x}", 2)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn truncated_binary_is_an_error() {
        let d = tmp();
        let p = d.path().join("e.bin");
        let m = EmbeddingMatrix::from_rows(2, vec![(RecordId(1), vec![1.0, 2.0])]).unwrap();
        m.save(&p, Encoding::Binary).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(EmbeddingMatrix::load(&p).is_err());
    }

    #[test]
    fn binary_header_layout_is_pinned() {
        let d = tmp();
        let p = d.path().join("t.bin");
        let mut t = ScoreTable::new("m", Direction::Low);
        t.insert(RecordId(0x0102), -1.5).unwrap();
        t.save(&p, Encoding::Binary).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"SIFTSCOR");
        assert_eq!(&bytes[8..12], &[1, 0, 1, 0]);
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        assert_eq!(header["format"], "score_table");
        assert_eq!(header["direction"], "low");
        let body = &bytes[16 + hlen..];
        assert_eq!(body.len(), 8 + 8 + 8);
        assert_eq!(u64::from_le_bytes(body[..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(body[8..16].try_into().unwrap()), 0x0102);
        assert_eq!(f64::from_le_bytes(body[16..24].try_into().unwrap()), -1.5);
    }
}

//! Writes the selected records, unchanged, in manifest order.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::manifest::SelectionManifest;
use super::SelectError;
use crate::corpus::{CorpusFormat, CorpusReader, IngestOptions};
use crate::fsutil::{write_atomic, write_bytes_atomic, HashingWriter};
use crate::scores::RecordId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExportSummary {
    pub records: usize,
    /// SHA-256 of the written subset file.
    pub digest: String,
    pub sidecar: PathBuf,
}

/// Path of the digest sidecar written next to `out`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".sha256");
    out.with_file_name(name)
}

/// Copies the manifest's records from `corpus` into `out`. The first
/// occurrence of an id wins. Every id must be present, and the corpus must
/// be the one the manifest was built from.
pub fn export_subset(
    manifest: &SelectionManifest,
    corpus: &Path,
    format: CorpusFormat,
    out: &Path,
) -> Result<ExportSummary, SelectError> {
    let wanted: HashMap<RecordId, usize> = manifest.selected.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut lines: Vec<Option<String>> = vec![None; manifest.selected.len()];
    let mut reader = CorpusReader::open(corpus, IngestOptions::new(format).lenient(true))?;
    while let Some(rec) = reader.next() {
        let rec = rec?;
        if let Some(&slot) = wanted.get(&rec.id) {
            if lines[slot].is_none() {
                lines[slot] = Some(reader.last_line().to_string());
            }
        }
    }
    let summary = reader.finish()?;
    if let Some(i) = lines.iter().position(Option::is_none) {
        return Err(SelectError::MissingRecord(manifest.selected[i]));
    }
    if summary.digest != manifest.corpus_digest {
        return Err(SelectError::CorpusMismatch {
            expected: manifest.corpus_digest.clone(),
            found: summary.digest,
        });
    }
    let io_err = |source| SelectError::Io {
        path: out.to_path_buf(),
        source,
    };
    let mut digest = String::new();
    write_atomic(out, |w| {
        let mut h = HashingWriter::new(w);
        for line in lines.iter().flatten() {
            h.write_all(line.as_bytes())?;
            h.write_all(b"\n")?;
        }
        let (_, hex) = h.finish();
        digest = hex;
        Ok(())
    })
    .map_err(io_err)?;
    let sidecar = sidecar_path(out);
    let name = out.file_name().unwrap_or_default().to_string_lossy();
    write_bytes_atomic(&sidecar, format!("{digest}  {name}\n").as_bytes()).map_err(|source| SelectError::Io {
        path: sidecar.clone(),
        source,
    })?;
    Ok(ExportSummary {
        records: lines.len(),
        digest,
        sidecar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Record;
    use crate::fsutil::sha256_file;

    fn corpus(dir: &Path) -> (PathBuf, Vec<Record>) {
        let recs: Vec<Record> = (0..5).map(|i| Record::pair(&format!("q{i}"), &format!("a{i}"))).collect();
        let text: String = recs.iter().map(|r| r.to_line(CorpusFormat::Pair).unwrap() + "\n").collect();
        let p = dir.join("c.jsonl");
        std::fs::write(&p, text).unwrap();
        (p, recs)
    }

    fn manifest(path: &Path, ids: Vec<RecordId>) -> SelectionManifest {
        let mut m = SelectionManifest::new("test", sha256_file(path).unwrap(), 5, ids.len() as u64);
        m.selected = ids;
        m
    }

    #[test]
    fn writes_lines_in_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        let (p, recs) = corpus(dir.path());
        let m = manifest(&p, vec![recs[3].id, recs[0].id, recs[4].id]);
        let out = dir.path().join("sub.jsonl");
        let s = export_subset(&m, &p, CorpusFormat::Pair, &out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        let expect: String = [3, 0, 4].iter().map(|&i| recs[i].to_line(CorpusFormat::Pair).unwrap() + "\n").collect();
        assert_eq!(text, expect);
        assert_eq!(s.records, 3);
        assert_eq!(s.digest, sha256_file(&out).unwrap());
        assert_eq!(std::fs::read_to_string(&s.sidecar).unwrap(), format!("{}  sub.jsonl\n", s.digest));

        let again = dir.path().join("again.jsonl");
        export_subset(&m, &p, CorpusFormat::Pair, &again).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&out).unwrap());
    }

    #[test]
    fn unknown_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let (p, recs) = corpus(dir.path());
        let m = manifest(&p, vec![recs[1].id, RecordId(0xdead)]);
        let e = export_subset(&m, &p, CorpusFormat::Pair, &dir.path().join("o")).unwrap_err();
        assert!(e.to_string().contains("000000000000dead"), "{e}");
        assert!(!dir.path().join("o").exists());
    }

    #[test]
    fn corpus_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (p, recs) = corpus(dir.path());
        let mut m = manifest(&p, vec![recs[1].id]);
        m.corpus_digest = "00".repeat(32);
        assert!(matches!(
            export_subset(&m, &p, CorpusFormat::Pair, &dir.path().join("o")),
            Err(SelectError::CorpusMismatch { .. })
        ));
    }
}

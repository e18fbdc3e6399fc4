//! Writes the checked-in test fixtures under `fixtures/` at the workspace
//! root. Run once with `cargo run -p sift-core --example gen_fixtures`; the
//! outputs are committed and the tests never regenerate them.

use std::fs;
use std::path::{Path, PathBuf};

use sift_core::corpus::{CorpusFormat, Record};
use sift_core::rng::{self, Rng};
use sift_core::scores::{
    EmbeddingMatrix, Encoding, GradientFeatureStore, LogProbStore, LogProbs, ProbeValues, RatingProbe,
};

fn normal(g: &mut Rng) -> f64 {
    let u1 = 1.0 - rng::unit(g);
    let u2 = rng::unit(g);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn word(g: &mut Rng, len: usize) -> String {
    (0..len).map(|_| (b'a' + rng::below(g, 26) as u8) as char).collect()
}

fn write_corpus(path: &Path, recs: &[Record]) {
    let text: String = recs.iter().map(|r| r.to_line(CorpusFormat::Pair).unwrap() + "\n").collect();
    fs::write(path, text).unwrap();
}

/// Two sources with log-normal token counts whose means sit near 1142 and
/// 354, plus 16-d embeddings around 20 topic centers.
fn length_regime(dir: &Path) {
    let mut g = rng::seeded(5401);
    let sigma: f64 = 0.8;
    let centers: Vec<Vec<f64>> = (0..20).map(|_| (0..16).map(|_| 4.0 * normal(&mut g)).collect()).collect();
    let mut recs = Vec::new();
    let mut rows = Vec::new();
    for i in 0..1000 {
        let (source, mean) = if i % 2 == 0 { ("wildchat", 1142.0) } else { ("openhermes", 354.0) };
        let mu = f64::ln(mean) - sigma * sigma / 2.0;
        let tokens = (mu + sigma * normal(&mut g)).exp().round().max(1.0) as u64;
        let topic = rng::below(&mut g, 20) as usize;
        let r = Record::pair(&format!("request {i} on topic {topic}"), &format!("reply {i} {}", word(&mut g, 8)))
            .with_source(source)
            .with_token_count(tokens);
        rows.push((r.id, centers[topic].iter().map(|c| (c + normal(&mut g)) as f32).collect::<Vec<f32>>()));
        recs.push(r);
    }
    write_corpus(&dir.join("length_regime.jsonl"), &recs);
    EmbeddingMatrix::from_rows(16, rows)
        .unwrap()
        .save(&dir.join("length_regime.emb"), Encoding::Binary)
        .unwrap();
}

/// 200 mutations of one template plus 200 unrelated strings.
fn zip_dupes(dir: &Path, draw: u64) {
    let mut g = rng::seeded(9000 + draw);
    let template: String = (0..12).map(|_| word(&mut g, 6)).collect::<Vec<_>>().join(" ");
    let mut recs = Vec::new();
    for i in 0..200 {
        let mut t: Vec<u8> = template.clone().into_bytes();
        for _ in 0..2 {
            let at = rng::below(&mut g, t.len() as u64) as usize;
            t[at] = b'a' + rng::below(&mut g, 26) as u8;
        }
        recs.push(Record::pair(&format!("copy {i}"), &String::from_utf8(t).unwrap()).with_source("dupes"));
    }
    for i in 0..200 {
        let words: Vec<String> = (0..12).map(|_| word(&mut g, 6)).collect();
        recs.push(Record::pair(&format!("item {i}"), &words.join(" ")).with_source("diverse"));
    }
    // Interleave so file order carries no signal.
    let mut order: Vec<usize> = (0..recs.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng::below(&mut g, i as u64 + 1) as usize;
        order.swap(i, j);
    }
    let shuffled: Vec<Record> = order.into_iter().map(|i| recs[i].clone()).collect();
    write_corpus(&dir.join(format!("zip_dupes_{draw}.jsonl")), &shuffled);
}

/// 30 records of varying redundancy.
fn zip_small(dir: &Path) {
    let mut g = rng::seeded(30);
    let stems: Vec<String> = (0..4).map(|_| word(&mut g, 10)).collect();
    let recs: Vec<Record> = (0..30)
        .map(|i| {
            let n = 1 + rng::below(&mut g, 6) as usize;
            let mut parts = Vec::new();
            for _ in 0..n {
                if rng::below(&mut g, 2) == 0 {
                    parts.push(stems[rng::below(&mut g, 4) as usize].clone());
                } else {
                    let len = 5 + rng::below(&mut g, 10) as usize;
                    parts.push(word(&mut g, len));
                }
            }
            Record::pair(&format!("z{i}"), &parts.join(" "))
        })
        .collect();
    write_corpus(&dir.join("zip_small.jsonl"), &recs);
}

/// Small end-to-end corpus with every score-file kind.
fn pipeline(dir: &Path) {
    let mut g = rng::seeded(40);
    let sources = ["alpaca", "dolly", "sharegpt"];
    let blobs = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
    let mut recs = Vec::new();
    let mut emb = Vec::new();
    let mut lp = LogProbStore::default();
    let mut probe = RatingProbe::new(3, 5, ProbeValues::Probabilities);
    probe.model = Some("stub-1.5b".into());
    probe.beta = Some(1.5);
    probe.provenance = Some("fixture generator".into());
    let mut grads = GradientFeatureStore::new(4, vec![2e-5, 1e-5]);
    grads.provenance = Some("fixture generator".into());
    for i in 0..40 {
        let n_words = 3 + rng::below(&mut g, 40) as usize;
        let words: Vec<String> = (0..n_words)
            .map(|_| {
                let len = 1 + rng::below(&mut g, 7) as usize;
                word(&mut g, len)
            })
            .collect();
        let r = Record::pair(&format!("prompt {i}: {}", word(&mut g, 5)), &words.join(" "))
            .with_source(sources[i % 3]);
        let blob = blobs[i % 4];
        let mut v: Vec<f32> = blob.iter().map(|&b| (b + normal(&mut g)) as f32).collect();
        v.extend((0..6).map(|_| normal(&mut g) as f32));
        emb.push((r.id, v));
        let n = 3 + rng::below(&mut g, 8) as usize;
        let cond: Vec<f64> = (0..n).map(|_| -3.0 * rng::unit(&mut g) - 0.01).collect();
        let uncond: Vec<f64> = cond.iter().map(|c| c - 2.0 * rng::unit(&mut g)).collect();
        lp.insert(r.id, LogProbs::new(cond, uncond)).unwrap();
        let mut m = Vec::new();
        for _ in 0..3 {
            let raw: Vec<f64> = (0..5).map(|_| rng::unit(&mut g) + 0.05).collect();
            let s: f64 = raw.iter().sum();
            m.extend(raw.iter().map(|x| x / s));
        }
        probe.insert(r.id, m).unwrap();
        grads
            .insert_record(r.id, (0..8).map(|_| normal(&mut g) as f32).collect())
            .unwrap();
        recs.push(r);
    }
    grads
        .insert_validation("mmlu-dev", (0..8).map(|_| normal(&mut g) as f32).collect())
        .unwrap();
    lp.method = "logprobs".into();
    lp.provenance = Some("fixture generator".into());
    write_corpus(&dir.join("pipeline.jsonl"), &recs);
    let emb = EmbeddingMatrix::from_rows(8, emb).unwrap();
    emb.save(&dir.join("pipeline.emb.jsonl"), Encoding::Text).unwrap();
    emb.save(&dir.join("pipeline.emb"), Encoding::Binary).unwrap();
    lp.save(&dir.join("pipeline.logprobs.jsonl"), Encoding::Text).unwrap();
    probe.save(&dir.join("pipeline.probes.jsonl"), Encoding::Text).unwrap();
    grads.save(&dir.join("pipeline.grads"), Encoding::Binary).unwrap();
}

fn tiny(dir: &Path) {
    let recs = [
        Record::pair("What is 2+2?", "4").with_source("math"),
        Record::pair("Name a color", "Blue is a color").with_source("misc"),
        Record::pair("Say hi", "hi there friend").with_source("misc"),
    ];
    write_corpus(&dir.join("tiny.jsonl"), &recs);
}

fn main() {
    let dir: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "fixtures"].iter().collect();
    fs::create_dir_all(&dir).unwrap();
    length_regime(&dir);
    for draw in 0..5 {
        zip_dupes(&dir, draw);
    }
    zip_small(&dir);
    pipeline(&dir);
    tiny(&dir);
    println!("fixtures written to {}", dir.display());
}

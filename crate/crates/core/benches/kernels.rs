//! Kernel benchmarks. Bench ids are the same in both builds, so
//!
//! ```text
//! cargo bench -p sift-core --bench kernels -- --save-baseline parallel
//! cargo bench -p sift-core --bench kernels --no-default-features -- --baseline parallel
//! ```
//!
//! reports the sequential build against the rayon one. Parallel builds also
//! run every kernel inside a one-thread pool under `<kernel>/1-thread`.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use sift_core::diversity::{compression_ratio, kcenter_select, kmeans, zip_select, KMeansParams, ZipParams};
use sift_core::rng;
use sift_core::scores::{EmbeddingMatrix, RecordId};
use sift_core::select::{quota_allocate, select_ranked, QuotaMode};

fn embeddings(n: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut g = rng::seeded(seed);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let rows = (0..n).map(|_| (RecordId(g.random()), (0..dim).map(|_| normal.sample(&mut g)).collect()));
    EmbeddingMatrix::from_rows(dim, rows.collect::<Vec<_>>()).unwrap()
}

fn texts(n: usize, seed: u64) -> Vec<(RecordId, Vec<u8>)> {
    let mut g = rng::seeded(seed);
    let words = ["data", "select", "model", "token", "cluster", "random", "length", "score", "diverse"];
    (0..n)
        .map(|i| {
            let len = 20 + rng::below(&mut g, 60) as usize;
            let t: Vec<&str> = (0..len).map(|_| words[rng::below(&mut g, words.len() as u64) as usize]).collect();
            (RecordId(i as u64), t.join(" ").into_bytes())
        })
        .collect()
}

/// Runs `f` directly and, in parallel builds, inside a one-thread pool.
fn variants(c: &mut Criterion, group: &str, param: impl std::fmt::Display + Clone, elems: u64, mut f: impl FnMut() + Send) {
    let mut g = c.benchmark_group(group);
    g.throughput(Throughput::Elements(elems));
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("default", param.clone()), |b| b.iter(&mut f));
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function(BenchmarkId::new("1-thread", param), |b| b.iter(|| pool.install(&mut f)));
    }
    g.finish();
}

fn bench_kcenter(c: &mut Criterion) {
    let emb = embeddings(20_000, 64, 1);
    let ids = emb.ids().to_vec();
    variants(c, "kcenter", "20k x 64, budget 200", 20_000 * 200, || {
        black_box(kcenter_select(&emb, &[], &ids, 200).unwrap());
    });
}

fn bench_kmeans(c: &mut Criterion) {
    let emb = embeddings(50_000, 16, 2);
    let params = KMeansParams {
        max_iters: 5,
        tol: 0.0,
        ..KMeansParams::new(64, 7)
    };
    variants(c, "kmeans", "50k x 16, k 64, 5 iters", 50_000 * 64 * 5, || {
        black_box(kmeans(&emb, &params).unwrap());
    });
}

fn bench_zip(c: &mut Criterion) {
    let samples = texts(2_000, 3);
    let params = ZipParams {
        k1: 500,
        k2: 100,
        k3: 20,
        ..ZipParams::new(40)
    };
    variants(c, "zip", "2k samples, budget 40", 2_000, || {
        black_box(zip_select(&samples, &params).unwrap());
    });
}

fn bench_compress(c: &mut Criterion) {
    let data: Vec<u8> = texts(200, 4).into_iter().flat_map(|t| t.1).collect();
    let len = data.len() as u64;
    variants(c, "compression_ratio", format!("{len} bytes"), len, || {
        black_box(compression_ratio(&data).unwrap());
    });
}

fn bench_select(c: &mut Criterion) {
    let mut g = rng::seeded(5);
    let k = 100;
    let n = 200_000;
    let items: Vec<(RecordId, f64)> = (0..n).map(|i| (RecordId(i as u64), rng::unit(&mut g))).collect();
    let labels: Vec<u32> = (0..n).map(|_| rng::below(&mut g, k as u64) as u32).collect();
    let emb = embeddings(k, 1, 6);
    let mut assignment = kmeans(&emb, &KMeansParams::new(k, 0)).unwrap();
    assignment.ids = items.iter().map(|x| x.0).collect();
    assignment.labels = labels;
    variants(c, "select_ranked", "200k items, 100 clusters", n as u64, || {
        black_box(select_ranked(Some(&assignment), items.clone(), 10_000, QuotaMode::Proportional).unwrap());
    });
    let sizes: Vec<u64> = (0..1000).map(|_| rng::below(&mut g, 5000)).collect();
    variants(c, "quota_allocate", "1000 clusters", 1000, || {
        black_box(quota_allocate(&sizes, 100_000, QuotaMode::Uniform).unwrap());
    });
}

criterion_group!(benches, bench_kcenter, bench_kmeans, bench_zip, bench_compress, bench_select);
criterion_main!(benches);

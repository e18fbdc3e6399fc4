//! Lloyd's k-means with k-means++ seeding.
//!
//! Records are processed in id order, so the result depends only on the
//! seed and the embedding contents, never on file order. Equal distances
//! resolve to the lowest centroid index, and empty clusters are repaired by
//! moving in the point farthest from its own centroid.

use std::path::Path;

use super::{sq_dist, sq_dist_centroid, DiversityError};
use crate::par;
use crate::rng;
use crate::scores::io::{open, write_binary, Opened};
use crate::scores::{EmbeddingMatrix, Encoding, FileKind, Header, RecordId, ScoreError};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Convergence threshold on the RMS centroid shift relative to the RMS
    /// centroid coordinate.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            seed,
            max_iters: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Sorted record ids.
    pub ids: Vec<RecordId>,
    /// Cluster index of each id.
    pub labels: Vec<u32>,
    /// `k × dim` row-major.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    /// Inertia after every assignment step, in order.
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn cluster_of(&self, id: RecordId) -> Option<u32> {
        self.ids.binary_search(&id).ok().map(|i| self.labels[i])
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Binary container: ids `u64[n]`, labels `u32[n]`, centroids
    /// `f64[k·dim]`, with `k`, `dim`, `seed`, `iterations` and `inertia` in
    /// the header.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut h = Header::new(FileKind::ClusterAssignment, "kmeans");
        h.k = Some(self.k);
        h.dim = Some(self.dim);
        h.seed = Some(self.seed);
        h.iterations = Some(self.iterations_run);
        h.inertia = Some(self.inertia);
        let mut params = std::collections::BTreeMap::new();
        params.insert("converged".to_string(), self.converged.into());
        h.params = Some(params);
        write_binary(path, &h, self.ids.len() as u64, |w| {
            w.u64s(&self.ids.iter().map(|i| i.0).collect::<Vec<_>>())?;
            w.u32s(&self.labels)?;
            w.f64s(&self.centroids)
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScoreError> {
        let bad = |msg: &str| ScoreError::Header {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        let (header, count, mut reader) = match open(path, FileKind::ClusterAssignment)? {
            Opened::Binary {
                header,
                count,
                reader,
            } => (header, count, reader),
            Opened::Text { .. } => return Err(bad("cluster assignments are binary only")),
        };
        let k = header.k.ok_or_else(|| bad("missing k"))?;
        let dim = header.dim.ok_or_else(|| bad("missing dim"))?;
        let ids: Vec<RecordId> = reader.u64s(count)?.into_iter().map(RecordId).collect();
        let labels = reader.u32s(count)?;
        let centroids = reader.f64s(k * dim)?;
        reader.expect_end()?;
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("ids must be strictly increasing"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(bad(&format!("label {l} out of range for k = {k}")));
        }
        let a = ClusterAssignment {
            k,
            dim,
            seed: header.seed.unwrap_or(0),
            iterations_run: header.iterations.unwrap_or(0),
            converged: header
                .params
                .as_ref()
                .and_then(|p| p.get("converged"))
                .and_then(|v| v.as_bool())
                .unwrap_or(false),
            ids,
            labels,
            centroids,
            inertia: header.inertia.unwrap_or(f64::NAN),
            inertia_history: Vec::new(),
        };
        Ok(a)
    }

    /// Assignments are binary only; the encoding argument exists for parity
    /// with the score stores.
    pub fn encoding(&self) -> Encoding {
        Encoding::Binary
    }
}

/// Clusters the embeddings into `params.k` groups.
pub fn kmeans(emb: &EmbeddingMatrix, params: &KMeansParams) -> Result<ClusterAssignment, DiversityError> {
    let n = emb.len();
    let d = emb.dim;
    let k = params.k;
    if k == 0 {
        return Err(DiversityError::ZeroK);
    }
    if k > n {
        return Err(DiversityError::TooFewRecords { k, n });
    }
    if !(params.tol.is_finite() && params.tol >= 0.0) {
        return Err(DiversityError::Invalid(format!("tol must be >= 0, got {}", params.tol)));
    }
    let mut g = rng::seeded(params.seed);
    let mut centroids = seed_plus_plus(emb, k, &mut g);
    let mut state: Vec<(u32, f64)> = vec![(0, 0.0); n];
    let mut history = Vec::new();

    assign_and_repair(emb, &mut centroids, k, &mut state);
    history.push(total_inertia(&state));

    let mut iterations = 0;
    let mut converged = false;
    for it in 0..params.max_iters {
        let updated = update_centroids(emb, &state, k, &centroids);
        let shift = relative_shift(&centroids, &updated);
        centroids = updated;
        iterations = it + 1;
        assign_and_repair(emb, &mut centroids, k, &mut state);
        history.push(total_inertia(&state));
        if shift <= params.tol {
            converged = true;
            break;
        }
    }
    if params.max_iters == 0 {
        converged = false;
    }
    log::debug!(
        "kmeans k={k} n={n} d={d}: {iterations} iterations, converged={converged}, inertia={}",
        history.last().copied().unwrap_or(0.0)
    );

    Ok(ClusterAssignment {
        k,
        dim: d,
        seed: params.seed,
        iterations_run: iterations,
        converged,
        ids: emb.ids().to_vec(),
        labels: state.iter().map(|s| s.0).collect(),
        centroids,
        inertia: *history.last().unwrap(),
        inertia_history: history,
    })
}

fn seed_plus_plus(emb: &EmbeddingMatrix, k: usize, g: &mut rng::Rng) -> Vec<f64> {
    let n = emb.len();
    let d = emb.dim;
    let mut centroids = Vec::with_capacity(k * d);
    let mut chosen = vec![false; n];
    let first = rng::below(g, n as u64) as usize;
    chosen[first] = true;
    centroids.extend(emb.row(first).iter().map(|&x| x as f64));
    let mut nearest: Vec<f64> = vec![f64::INFINITY; n];
    let mut last = first;
    for _ in 1..k {
        let center = emb.row(last);
        par::chunks_mut(&mut nearest, par::CHUNK, |off, chunk| {
            for (j, m) in chunk.iter_mut().enumerate() {
                let dist = sq_dist(emb.row(off + j), center);
                if dist < *m {
                    *m = dist;
                }
            }
        });
        let total: f64 = par::chunks(n, par::CHUNK, |r| nearest[r].iter().sum::<f64>())
            .into_iter()
            .sum();
        let next = if total > 0.0 {
            let target = rng::unit(g) * total;
            let mut cum = 0.0;
            let mut pick = None;
            let mut last_positive = None;
            for (i, &m) in nearest.iter().enumerate() {
                if m > 0.0 {
                    cum += m;
                    last_positive = Some(i);
                    if cum > target {
                        pick = Some(i);
                        break;
                    }
                }
            }
            pick.or(last_positive).expect("positive total has a positive entry")
        } else {
            // All remaining points coincide with a chosen center.
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[next] = true;
        centroids.extend(emb.row(next).iter().map(|&x| x as f64));
        last = next;
    }
    centroids
}

fn assign(emb: &EmbeddingMatrix, centroids: &[f64], k: usize, state: &mut [(u32, f64)]) {
    let d = emb.dim;
    par::chunks_mut(state, par::CHUNK, |off, chunk| {
        for (j, slot) in chunk.iter_mut().enumerate() {
            let p = emb.row(off + j);
            let mut best = 0u32;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dist = sq_dist_centroid(p, &centroids[c * d..(c + 1) * d]);
                if dist < best_d {
                    best_d = dist;
                    best = c as u32;
                }
            }
            *slot = (best, best_d);
        }
    });
}

/// Moves the farthest point of a multi-member cluster into each empty
/// cluster. Returns the number of clusters repaired.
fn repair_empty(emb: &EmbeddingMatrix, centroids: &mut [f64], k: usize, state: &mut [(u32, f64)]) -> usize {
    let d = emb.dim;
    let mut sizes = vec![0usize; k];
    for s in state.iter() {
        sizes[s.0 as usize] += 1;
    }
    let mut repaired = 0;
    for c in 0..k {
        if sizes[c] != 0 {
            continue;
        }
        let mut donor = None;
        let mut donor_d = f64::NEG_INFINITY;
        for (i, s) in state.iter().enumerate() {
            if sizes[s.0 as usize] > 1 && s.1 > donor_d {
                donor_d = s.1;
                donor = Some(i);
            }
        }
        let i = donor.expect("an empty cluster implies a cluster with several members");
        sizes[state[i].0 as usize] -= 1;
        sizes[c] = 1;
        state[i] = (c as u32, 0.0);
        for (dst, &x) in centroids[c * d..(c + 1) * d].iter_mut().zip(emb.row(i)) {
            *dst = x as f64;
        }
        repaired += 1;
    }
    repaired
}

fn assign_and_repair(emb: &EmbeddingMatrix, centroids: &mut [f64], k: usize, state: &mut [(u32, f64)]) {
    // Reassigning after a repair can only lower every distance; the loop
    // ends as soon as an assignment leaves no cluster empty.
    for _ in 0..=k {
        assign(emb, centroids, k, state);
        if repair_empty(emb, centroids, k, state) == 0 {
            return;
        }
    }
}

fn total_inertia(state: &[(u32, f64)]) -> f64 {
    par::chunks(state.len(), par::CHUNK, |r| state[r].iter().map(|s| s.1).sum::<f64>())
        .into_iter()
        .sum()
}

/// Per-cluster means. Members are summed in id order, one cluster per task,
/// so the result is independent of the thread count.
fn update_centroids(emb: &EmbeddingMatrix, state: &[(u32, f64)], k: usize, old: &[f64]) -> Vec<f64> {
    let d = emb.dim;
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); k];
    for (i, s) in state.iter().enumerate() {
        members[s.0 as usize].push(i as u32);
    }
    let rows = par::map_range(k, |c| {
        let m = &members[c];
        if m.is_empty() {
            return old[c * d..(c + 1) * d].to_vec();
        }
        let mut sum = vec![0.0f64; d];
        for &i in m {
            for (s, &x) in sum.iter_mut().zip(emb.row(i as usize)) {
                *s += x as f64;
            }
        }
        let inv = 1.0 / m.len() as f64;
        sum.iter_mut().for_each(|s| *s *= inv);
        sum
    });
    rows.concat()
}

fn relative_shift(old: &[f64], new: &[f64]) -> f64 {
    let n = old.len() as f64;
    let shift = (old.iter().zip(new).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt();
    let scale = (new.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    if shift == 0.0 {
        0.0
    } else if scale == 0.0 {
        f64::INFINITY
    } else {
        shift / scale
    }
}

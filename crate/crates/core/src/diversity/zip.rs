//! Staged greedy selection by compression ratio.
//!
//! Each outer iteration:
//! 1. ranks unselected samples by their current score and keeps the `k1`
//!    lowest;
//! 2. rescores those against the selected set and keeps the `k2` lowest;
//! 3. grows an empty local set by `k3` greedy picks, each minimizing the
//!    ratio of the local set plus the sample, then appends it to the
//!    selected set.
//!
//! Samples are handled in id order and every tie goes to the lower id.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{Compressor, DiversityError};
use crate::par;
use crate::scores::RecordId;

/// How much of the selected set is prepended when rescoring a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextWindow {
    /// The last `n` bytes of the selected concatenation.
    Bounded(usize),
    /// The whole selected concatenation.
    Unbounded,
}

/// Which sample scores are refreshed between iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreUpdate {
    /// Every unselected sample is rescored against the selected set.
    All,
    /// Only the stage-1 pool keeps its stage-2 score; other samples keep
    /// their previous score.
    Pool,
}

impl ScoreUpdate {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreUpdate::All => "all",
            ScoreUpdate::Pool => "pool",
        }
    }
}

impl std::str::FromStr for ScoreUpdate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(ScoreUpdate::All),
            "pool" => Ok(ScoreUpdate::Pool),
            _ => Err(format!("unknown score update {s:?}; expected all or pool")),
        }
    }
}

pub const DEFAULT_WINDOW: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct ZipParams {
    pub budget: usize,
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
    pub window: ContextWindow,
    pub update: ScoreUpdate,
    pub compressor: Compressor,
}

impl ZipParams {
    pub fn new(budget: usize) -> Self {
        ZipParams {
            budget,
            k1: 10_000,
            k2: 1_000,
            k3: 100,
            window: ContextWindow::Bounded(DEFAULT_WINDOW),
            update: ScoreUpdate::All,
            compressor: Compressor::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionState {
    pub compressor: &'static str,
    pub level: u32,
    /// Latest score of every sample; selected samples keep the score they
    /// had when picked.
    pub sample_ratios: BTreeMap<RecordId, f64>,
    /// SHA-256 of the selected samples concatenated in selection order.
    pub selected_digest: String,
    /// Ratio of the whole selected concatenation.
    pub selected_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZipOutcome {
    /// Selected ids in selection order.
    pub selected: Vec<RecordId>,
    /// Local sets picked by each outer iteration.
    pub batches: Vec<Vec<RecordId>>,
    pub state: CompressionState,
}

pub fn zip_select(samples: &[(RecordId, Vec<u8>)], params: &ZipParams) -> Result<ZipOutcome, DiversityError> {
    let ZipParams {
        budget, k1, k2, k3, ..
    } = *params;
    if k3 == 0 || k3 > k2 || k2 > k1 {
        return Err(DiversityError::Invalid(format!(
            "need 1 <= k3 <= k2 <= k1, got k1={k1} k2={k2} k3={k3}"
        )));
    }
    if budget > samples.len() {
        return Err(DiversityError::BudgetExceeds {
            budget,
            available: samples.len(),
        });
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_unstable_by_key(|&i| samples[i].0);
    for w in order.windows(2) {
        if samples[w[0]].0 == samples[w[1]].0 {
            return Err(DiversityError::Invalid(format!("duplicate sample {}", samples[w[0]].0)));
        }
    }
    if let Some(&i) = order.iter().find(|&&i| samples[i].1.is_empty()) {
        return Err(DiversityError::EmptyRecord(samples[i].0));
    }
    let ids: Vec<RecordId> = order.iter().map(|&i| samples[i].0).collect();
    let bytes: Vec<&[u8]> = order.iter().map(|&i| samples[i].1.as_slice()).collect();
    let comp = params.compressor;

    let mut score: Vec<f64> = par::map(&bytes, |b| comp.ratio(b).expect("non-empty"));
    let mut selected_mask = vec![false; ids.len()];
    let mut selected: Vec<RecordId> = Vec::with_capacity(budget);
    let mut batches = Vec::new();
    let mut concat: Vec<u8> = Vec::new();
    // Scores already computed against the current selected set.
    let mut fresh = true;

    while selected.len() < budget {
        if params.update == ScoreUpdate::All && !fresh {
            let ctx = context(&concat, params.window);
            let unselected: Vec<usize> = (0..ids.len()).filter(|&i| !selected_mask[i]).collect();
            let rescored = par::map(&unselected, |&i| ratio_with(comp, ctx, bytes[i]));
            for (&i, s) in unselected.iter().zip(rescored) {
                score[i] = s;
            }
            fresh = true;
        }

        let unselected: Vec<usize> = (0..ids.len()).filter(|&i| !selected_mask[i]).collect();
        let pool1 = lowest(&unselected, &score, k1);

        if !fresh {
            let ctx = context(&concat, params.window);
            let rescored = par::map(&pool1, |&i| ratio_with(comp, ctx, bytes[i]));
            for (&i, s) in pool1.iter().zip(rescored) {
                score[i] = s;
            }
        }
        let mut pool2 = lowest(&pool1, &score, k2);

        let take = k3.min(budget - selected.len());
        let mut local: Vec<u8> = Vec::new();
        let mut batch = Vec::with_capacity(take);
        for _ in 0..take {
            let ratios = par::map(&pool2, |&i| ratio_with(comp, &local, bytes[i]));
            let mut best = 0;
            for j in 1..pool2.len() {
                if ratios[j] < ratios[best] {
                    best = j;
                }
            }
            let i = pool2.remove(best);
            local.extend_from_slice(bytes[i]);
            batch.push(ids[i]);
            selected_mask[i] = true;
        }
        concat.extend_from_slice(&local);
        selected.extend_from_slice(&batch);
        batches.push(batch);
        fresh = false;
    }

    let sample_ratios = ids.iter().copied().zip(score.iter().copied()).collect();
    let selected_ratio = if concat.is_empty() {
        0.0
    } else {
        comp.ratio(&concat)?
    };
    Ok(ZipOutcome {
        selected,
        batches,
        state: CompressionState {
            compressor: comp.name(),
            level: comp.level(),
            sample_ratios,
            selected_digest: hex::encode(Sha256::digest(&concat)),
            selected_ratio,
        },
    })
}

fn context(concat: &[u8], window: ContextWindow) -> &[u8] {
    match window {
        ContextWindow::Unbounded => concat,
        ContextWindow::Bounded(n) => &concat[concat.len().saturating_sub(n)..],
    }
}

fn ratio_with(comp: Compressor, ctx: &[u8], sample: &[u8]) -> f64 {
    comp.ratio_of(&[ctx, sample]).expect("sample is non-empty")
}

/// The `k` entries of `from` with the lowest score, ties to the lower index,
/// returned in index order.
fn lowest(from: &[usize], score: &[f64], k: usize) -> Vec<usize> {
    let mut sorted = from.to_vec();
    sorted.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
    sorted.truncate(k);
    sorted.sort_unstable();
    sorted
}

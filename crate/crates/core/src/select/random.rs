//! Uniform sampling without replacement in one pass (reservoir sampling,
//! Algorithm R).

use std::collections::HashSet;
use std::path::Path;

use super::{SelectError, SelectionManifest};
use crate::corpus::{CorpusFormat, CorpusReader, IngestOptions};
use crate::rng;
use crate::scores::RecordId;

/// Streaming sampler holding at most `budget` ids.
pub struct Reservoir {
    budget: usize,
    seen: u64,
    slots: Vec<(u64, RecordId)>,
    rng: rng::Rng,
}

impl Reservoir {
    pub fn new(budget: usize, seed: u64) -> Self {
        Reservoir {
            budget,
            seen: 0,
            slots: Vec::with_capacity(budget.min(1 << 20)),
            rng: rng::seeded(seed),
        }
    }

    pub fn push(&mut self, id: RecordId) {
        let i = self.seen;
        self.seen += 1;
        if self.slots.len() < self.budget {
            self.slots.push((i, id));
        } else if self.budget > 0 {
            let j = rng::below(&mut self.rng, i + 1);
            if (j as usize) < self.budget {
                self.slots[j as usize] = (i, id);
            }
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    /// The sample, in stream order.
    pub fn finish(mut self) -> Result<Vec<RecordId>, SelectError> {
        if (self.seen as usize) < self.budget {
            return Err(SelectError::BudgetExceedsCorpus {
                budget: self.budget as u64,
                available: self.seen,
            });
        }
        self.slots.sort_unstable_by_key(|s| s.0);
        Ok(self.slots.into_iter().map(|s| s.1).collect())
    }
}

pub fn random_select<I>(ids: I, budget: usize, seed: u64) -> Result<Vec<RecordId>, SelectError>
where
    I: IntoIterator<Item = RecordId>,
{
    let mut r = Reservoir::new(budget, seed);
    ids.into_iter().for_each(|id| r.push(id));
    r.finish()
}

/// Random manifest drawn from the distinct ids of a corpus file.
pub fn random_manifest(
    corpus: &Path,
    format: CorpusFormat,
    budget: usize,
    seed: u64,
) -> Result<SelectionManifest, SelectError> {
    let mut reader = CorpusReader::open(corpus, IngestOptions::new(format))?;
    let mut seen = HashSet::new();
    let mut r = Reservoir::new(budget, seed);
    for rec in reader.by_ref() {
        let id = rec?.id;
        if seen.insert(id) {
            r.push(id);
        }
    }
    let summary = reader.finish()?;
    let mut m = SelectionManifest::new("random", summary.digest, summary.records as u64, budget as u64).param("budget", budget);
    m.seed = Some(seed);
    m.prng = Some(rng::PRNG_NAME.to_string());
    m.selected = r.finish()?;
    Ok(m)
}

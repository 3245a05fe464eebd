//! Reference rankers: global popularity, session popularity, item-kNN.

use std::collections::HashMap;

use crate::data::SessionCorpus;
use crate::eval::top_k;

/// Anything that scores the full vocabulary for a prefix.
pub trait Ranker {
    fn num_items(&self) -> usize;
    fn scores(&self, prefix: &[usize]) -> Vec<f64>;

    fn rank(&self, prefix: &[usize], k: usize) -> Vec<usize> {
        top_k(&self.scores(prefix), k)
    }
}

/// Global item counts from the training corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopModel {
    pub counts: Vec<u64>,
}

impl PopModel {
    pub fn fit(corpus: &SessionCorpus) -> Self {
        let mut counts = vec![0u64; corpus.num_items()];
        for &i in corpus.sessions.iter().flatten() {
            counts[i] += 1;
        }
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn pop_rank(&self, k: usize) -> Vec<usize> {
        self.rank(&[], k)
    }
}

impl Ranker for PopModel {
    fn num_items(&self) -> usize {
        self.counts.len()
    }

    fn scores(&self, _prefix: &[usize]) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Within-session counts first, global counts as tie-break and backfill.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SPopModel {
    pub pop: PopModel,
}

impl SPopModel {
    pub fn fit(corpus: &SessionCorpus) -> Self {
        Self {
            pop: PopModel::fit(corpus),
        }
    }

    pub fn spop_rank(&self, prefix: &[usize], k: usize) -> Vec<usize> {
        self.rank(prefix, k)
    }
}

impl Ranker for SPopModel {
    fn num_items(&self) -> usize {
        self.pop.num_items()
    }

    fn scores(&self, prefix: &[usize]) -> Vec<f64> {
        // Lexicographic (session count, global count) packed into one
        // number; exact while the product stays below 2^53.
        let base = (self.pop.total() + 1) as f64;
        let mut s = self.pop.scores(prefix);
        for &i in prefix {
            if i < s.len() {
                s[i] += base;
            }
        }
        s
    }
}

/// Cosine similarity over binary item-by-session incidence, scored
/// against the last prefix item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemKnnModel {
    /// Sorted, deduplicated session IDs per item.
    sessions_of: Vec<Vec<usize>>,
    /// Distinct items per session.
    items_of: Vec<Vec<usize>>,
    neighbors: usize,
    pop: PopModel,
}

impl ItemKnnModel {
    pub fn fit(corpus: &SessionCorpus, neighbors: usize) -> Self {
        let m = corpus.num_items();
        let mut sessions_of = vec![Vec::new(); m];
        let mut items_of = Vec::with_capacity(corpus.sessions.len());
        for (sid, s) in corpus.sessions.iter().enumerate() {
            let mut distinct = s.clone();
            distinct.sort_unstable();
            distinct.dedup();
            for &i in &distinct {
                sessions_of[i].push(sid);
            }
            items_of.push(distinct);
        }
        Self {
            sessions_of,
            items_of,
            neighbors,
            pop: PopModel::fit(corpus),
        }
    }

    /// Cosine similarity of every item to `item`; `None` if `item` has an
    /// empty incidence vector.
    pub fn similarities(&self, item: usize) -> Option<Vec<f64>> {
        let own = self.sessions_of.get(item)?;
        if own.is_empty() {
            return None;
        }
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for &sid in own {
            for &j in &self.items_of[sid] {
                *overlap.entry(j).or_insert(0) += 1;
            }
        }
        let na = own.len() as f64;
        let mut sims = vec![0.0; self.sessions_of.len()];
        for (j, c) in overlap {
            sims[j] = c as f64 / (na * self.sessions_of[j].len() as f64).sqrt();
        }
        Some(sims)
    }

    pub fn itemknn_rank(&self, prefix: &[usize], k: usize) -> Vec<usize> {
        self.rank(prefix, k)
    }
}

impl Ranker for ItemKnnModel {
    fn num_items(&self) -> usize {
        self.sessions_of.len()
    }

    fn scores(&self, prefix: &[usize]) -> Vec<f64> {
        let Some(&last) = prefix.last() else {
            return self.pop.scores(prefix);
        };
        let Some(mut sims) = self.similarities(last) else {
            return self.pop.scores(prefix);
        };
        // The query item is not its own neighbor.
        sims[last] = -1.0;
        if self.neighbors < sims.len() {
            let keep = top_k(&sims, self.neighbors);
            let mut pruned = vec![0.0; sims.len()];
            for j in keep {
                pruned[j] = sims[j];
            }
            pruned[last] = -1.0;
            sims = pruned;
        }
        sims
    }
}

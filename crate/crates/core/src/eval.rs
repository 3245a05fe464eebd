//! Full-vocabulary ranking and the Pre@K / MRR@K metrics.

use std::fmt::Write as _;

/// Ranking of one test instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingResult {
    pub instance: usize,
    pub target: usize,
    /// 1-based rank of the target under descending score, ascending-ID ties.
    pub rank: usize,
    pub topk: Vec<usize>,
}

/// `true` when item `a` is ranked ahead of item `b`.
#[inline]
fn ahead(scores: &[f64], a: usize, b: usize) -> bool {
    scores[a] > scores[b] || (scores[a] == scores[b] && a < b)
}

/// Rank of `target`: items with a strictly higher score, plus equal-score
/// items with a smaller ID, plus one.
pub fn target_rank(scores: &[f64], target: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&m| m != target && ahead(scores, m, target))
        .count()
}

/// Top `k` item IDs under the same ordering.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    let k = k.min(ids.len());
    if k < ids.len() && k > 0 {
        ids.select_nth_unstable_by(k - 1, cmp);
        ids.truncate(k);
    } else {
        ids.truncate(k);
    }
    ids.sort_by(cmp);
    ids
}

pub fn rank_instance(instance: usize, scores: &[f64], target: usize, k: usize) -> RankingResult {
    RankingResult {
        instance,
        target,
        rank: target_rank(scores, target),
        topk: top_k(scores, k),
    }
}

/// Hit ratio: fraction of instances whose target lands in the top `k`.
pub fn precision_at_k(results: &[RankingResult], k: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results.iter().filter(|r| r.rank <= k).count();
    hits as f64 / results.len() as f64
}

/// Mean reciprocal rank, counting ranks beyond `k` as zero.
pub fn mrr_at_k(results: &[RankingResult], k: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    // Summed in ascending rank order so the value is independent of the
    // order of `results`.
    let mut ranks: Vec<usize> = results.iter().map(|r| r.rank).filter(|&r| r <= k).collect();
    ranks.sort_unstable();
    let total: f64 = ranks.iter().map(|&r| 1.0 / r as f64).sum();
    total / results.len() as f64
}

/// Metric values at one cut-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub k: usize,
    pub precision: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub instances: usize,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn from_results(results: &[RankingResult], ks: &[usize]) -> Self {
        Self {
            instances: results.len(),
            rows: ks
                .iter()
                .map(|&k| MetricRow {
                    k,
                    precision: precision_at_k(results, k),
                    mrr: mrr_at_k(results, k),
                })
                .collect(),
        }
    }

    /// `pre@K=value` / `mrr@K=value` lines.
    pub fn to_machine_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(s, "pre@{}={:.4}", r.k, r.precision);
            let _ = writeln!(s, "mrr@{}={:.4}", r.k, r.mrr);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "instances: {}", self.instances);
        let _ = writeln!(s, "{:>6}  {:>8}  {:>8}", "K", "Pre@K", "MRR@K");
        for r in &self.rows {
            let _ = writeln!(s, "{:>6}  {:>8.4}  {:>8.4}", r.k, r.precision, r.mrr);
        }
        s
    }
}

/// `instance_id,target,rank` with a header line.
pub fn ranks_csv(results: &[RankingResult]) -> String {
    let mut s = String::from("instance_id,target,rank\n");
    for r in results {
        let _ = writeln!(s, "{},{},{}", r.instance, r.target, r.rank);
    }
    s
}

/// Parses a comma-separated list of positive cut-offs, e.g. `5,10,20`.
pub fn parse_k_list(s: &str) -> Result<Vec<usize>, String> {
    let ks = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| format!("invalid K value `{t}`"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if ks.is_empty() {
        return Err("empty K list".into());
    }
    Ok(ks)
}

//! Synthetic corpora with planted structure.

use rand::Rng;

use crate::data::RawSession;

/// Walks on the cycle `i → (i + 1) mod n` from uniform start items.
pub fn cycle_sessions<R: Rng + ?Sized>(n: usize, len: usize, count: usize, rng: &mut R) -> Vec<RawSession> {
    (0..count)
        .map(|_| {
            let start = rng.gen_range(0..n);
            (0..len).map(|i| ((start + i) % n) as u64).collect()
        })
        .collect()
}

/// Walks that alternate between two successor rules, `+1` and `+stride`
/// (mod `n`), starting with a random rule. The next item depends on the
/// last two items, not just the last one.
pub fn interleaved_cycle_sessions<R: Rng + ?Sized>(
    n: usize,
    stride: usize,
    len: usize,
    count: usize,
    rng: &mut R,
) -> Vec<RawSession> {
    (0..count)
        .map(|_| {
            let mut cur = rng.gen_range(0..n);
            let mut use_stride = rng.gen_bool(0.5);
            let mut s = Vec::with_capacity(len);
            s.push(cur as u64);
            for _ in 1..len {
                cur = (cur + if use_stride { stride } else { 1 }) % n;
                use_stride = !use_stride;
                s.push(cur as u64);
            }
            s
        })
        .collect()
}

/// Undirected planted-partition graph: two equal blocks, edge probability
/// `p_in` inside a block and `p_out` across.
pub fn two_cluster_edges<R: Rng + ?Sized>(n: usize, p_in: f64, p_out: f64, rng: &mut R) -> Vec<(usize, usize)> {
    let half = n / 2;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if (i < half) == (j < half) { p_in } else { p_out };
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    edges
}

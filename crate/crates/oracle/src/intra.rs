//! Reference intra-session loss: attention, feed-forward, gated
//! aggregation, positional fusion, inner-product scores and mean softmax
//! cross-entropy. No dropout.

use crate::dd::{softmax, Dd, DdMat};

/// Raw row-major parameter values. Square matrices are `d×d`, vectors
/// have length `d`, `w_c` is `d×3d`, `table` is `M×d`.
#[derive(Debug, Clone, Copy)]
pub struct IntraRaw<'a> {
    pub d: usize,
    pub table: &'a [f64],
    pub w_q: &'a [f64],
    pub w_k: &'a [f64],
    pub w_v: &'a [f64],
    pub w_1: &'a [f64],
    pub b_1: &'a [f64],
    pub w_2: &'a [f64],
    pub b_2: &'a [f64],
    pub w_3: &'a [f64],
    pub w_4: &'a [f64],
    pub g: &'a [f64],
    pub w_c: &'a [f64],
    /// `true` for `exp(-(|i-I|+1))` weights, `false` for `exp(|i-I|+1)`.
    pub decay: bool,
}

fn instance_loss(p: &IntraRaw<'_>, prefix: &[usize], target: usize) -> Dd {
    let d = p.d;
    let m = p.table.len() / d;
    let n = prefix.len();
    let table = DdMat::from_f64(m, d, p.table);
    let sq = |v: &[f64]| DdMat::from_f64(d, d, v);

    let mut e = DdMat::zeros(n, d);
    for (i, &it) in prefix.iter().enumerate() {
        for j in 0..d {
            e.set(i, j, table.at(it, j));
        }
    }
    let q = e.mul(&sq(p.w_q));
    let k = e.mul(&sq(p.w_k));
    let v = e.mul(&sq(p.w_v));
    let scale = Dd::new(d as f64).sqrt();
    let mut x = DdMat::zeros(n, d);
    for i in 0..n {
        let logits: Vec<Dd> = (0..n)
            .map(|j| (0..d).map(|c| q.at(i, c) * k.at(j, c)).sum::<Dd>() / scale)
            .collect();
        let probs = softmax(&logits);
        for c in 0..d {
            x.set(i, c, (0..n).map(|j| probs[j] * v.at(j, c)).sum());
        }
    }

    let w1 = sq(p.w_1);
    let w2 = sq(p.w_2);
    let mut y = DdMat::zeros(n, d);
    for i in 0..n {
        let hidden: Vec<Dd> = (0..d)
            .map(|c| ((0..d).map(|j| x.at(i, j) * w1.at(j, c)).sum::<Dd>() + Dd::new(p.b_1[c])).relu())
            .collect();
        for c in 0..d {
            y.set(i, c, (0..d).map(|j| hidden[j] * w2.at(j, c)).sum::<Dd>() + Dd::new(p.b_2[c]));
        }
    }

    let w3 = sq(p.w_3);
    let w4 = sq(p.w_4);
    let last = n - 1;
    let gate_logits: Vec<Dd> = (0..n)
        .map(|i| {
            (0..d)
                .map(|r| {
                    let a: Dd = (0..d)
                        .map(|c| w3.at(r, c) * y.at(last, c) + w4.at(r, c) * y.at(i, c))
                        .sum();
                    Dd::new(p.g[r]) * a.sigmoid()
                })
                .sum()
        })
        .collect();
    let alpha = softmax(&gate_logits);
    let pos_logits: Vec<Dd> = (0..n)
        .map(|i| {
            let k = (n - i) as f64;
            Dd::new(if p.decay { -k } else { k })
        })
        .collect();
    let omega = softmax(&pos_logits);

    let mut concat = Vec::with_capacity(3 * d);
    for c in 0..d {
        concat.push(y.at(last, c));
    }
    for c in 0..d {
        concat.push((0..n).map(|i| alpha[i] * y.at(i, c)).sum());
    }
    for c in 0..d {
        concat.push((0..n).map(|i| omega[i] * y.at(i, c)).sum());
    }
    let wc = DdMat::from_f64(d, 3 * d, p.w_c);
    let qs: Vec<Dd> = (0..d)
        .map(|r| (0..3 * d).map(|c| wc.at(r, c) * concat[c]).sum())
        .collect();
    let z: Vec<Dd> = (0..m)
        .map(|it| (0..d).map(|c| table.at(it, c) * qs[c]).sum())
        .collect();
    let max = z.iter().map(|v| v.hi).fold(f64::NEG_INFINITY, f64::max);
    let lse = Dd::new(max) + z.iter().map(|&v| (v - Dd::new(max)).exp()).sum::<Dd>().ln();
    lse - z[target]
}

/// Mean cross-entropy over `(prefix, target)` pairs.
pub fn intra_loss(p: &IntraRaw<'_>, batch: &[(Vec<usize>, usize)]) -> Dd {
    let total: Dd = batch.iter().map(|(pre, t)| instance_loss(p, pre, *t)).sum();
    total / Dd::new(batch.len() as f64)
}

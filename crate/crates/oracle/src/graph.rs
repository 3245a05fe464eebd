//! Reference graph objective: dense symmetric normalization, stacked
//! propagation, mean readout, bilinear discriminator and the clamped
//! binary cross-entropy over true and shuffled nodes.

use crate::dd::{Dd, DdMat};

/// Dense `D^-1/2 (A + I) D^-1/2` from an undirected edge list.
pub fn normalized_dense(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(i, j) in edges {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (deg[i] * deg[j]).sqrt()).collect())
        .collect()
}

fn propagate(adj: &DdMat, h0: DdMat, layers: &[DdMat]) -> DdMat {
    let mut h = h0;
    for w in layers {
        let mut next = adj.mul(&h.mul(w));
        for x in next.data.iter_mut() {
            *x = x.relu();
        }
        h = next;
    }
    h
}

/// Graph loss with features `table` (`M×d`), per-layer `d×d` weights,
/// discriminator `w_g`, and corruption `perm` (row `m` of the shuffled
/// features is row `perm[m]` of `table`).
pub fn mi_loss(
    d: usize,
    edges: &[(usize, usize)],
    table: &[f64],
    layers: &[&[f64]],
    w_g: &[f64],
    perm: &[usize],
    clamp: f64,
) -> Dd {
    let m = table.len() / d;
    let dense = normalized_dense(m, edges);
    // The normalization itself is evaluated in double-double as well.
    let mut adj = DdMat::zeros(m, m);
    let deg: Vec<f64> = (0..m).map(|i| dense[i].iter().filter(|&&v| v != 0.0).count() as f64).collect();
    for i in 0..m {
        for j in 0..m {
            if dense[i][j] != 0.0 {
                adj.set(i, j, Dd::ONE / (Dd::new(deg[i]) * Dd::new(deg[j])).sqrt());
            }
        }
    }
    let ws: Vec<DdMat> = layers.iter().map(|w| DdMat::from_f64(d, d, w)).collect();
    let h0 = DdMat::from_f64(m, d, table);
    let mut shuffled = DdMat::zeros(m, d);
    for (dst, &src) in perm.iter().enumerate() {
        for c in 0..d {
            shuffled.set(dst, c, h0.at(src, c));
        }
    }
    let h = propagate(&adj, h0, &ws);
    let ht = propagate(&adj, shuffled, &ws);
    let inv_m = Dd::ONE / Dd::new(m as f64);
    let z: Vec<Dd> = (0..d).map(|c| (0..m).map(|i| h.at(i, c)).sum::<Dd>() * inv_m).collect();
    let wg = DdMat::from_f64(d, d, w_g);
    let wz: Vec<Dd> = (0..d).map(|r| (0..d).map(|c| wg.at(r, c) * z[c]).sum()).collect();
    let lo = Dd::new(clamp);
    let hi = Dd::ONE - lo;
    let clampd = |x: Dd| {
        if (x - lo).hi < 0.0 {
            lo
        } else if (x - hi).hi > 0.0 {
            hi
        } else {
            x
        }
    };
    let mut total = Dd::ZERO;
    for i in 0..m {
        let pos = clampd((0..d).map(|c| h.at(i, c) * wz[c]).sum::<Dd>().sigmoid());
        let neg = clampd((0..d).map(|c| ht.at(i, c) * wz[c]).sum::<Dd>().sigmoid());
        total = total + pos.ln() + (Dd::ONE - neg).ln();
    }
    -(total / Dd::new((2 * m) as f64))
}
